#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
种子对齐检查模块
机械地检查合成查询是否保留种子查询中已被证明的部分：
表集合与实例数、连接谓词、投影的顺序、别名与属性依赖
"""

import logging
from collections import Counter
from typing import Dict, FrozenSet, List, Optional, Tuple

from minisql import (Aggregate, ColumnRef, Comparison, DerivedTable, InSubquery, Join, Query, QueryBlock,
                     ScalarSubquery, TableRef, conjuncts, from_leaves, output_names, render_expr,
                     render_predicate, table_multiset, walk_expr)
from relcore import SchemaCatalog
from xfe_prompts import ClauseFix

logger = logging.getLogger(__name__)

Violation = ClauseFix
BaseColumn = Tuple[str, str]


class _Scope:
    """一个查询块的名称绑定：绑定名 -> 基表名或派生表查询"""

    def __init__(self, catalog: SchemaCatalog, block: QueryBlock, parent: Optional['_Scope']):
        self.catalog = catalog
        self.parent = parent
        self.bindings: Dict[str, object] = {}
        for item in block.from_:
            for leaf in from_leaves(item):
                if isinstance(leaf, TableRef):
                    self.bindings[leaf.binding] = leaf.name
                elif isinstance(leaf, DerivedTable):
                    self.bindings[leaf.alias] = leaf.query

    def _provides(self, target, column: str) -> bool:
        if isinstance(target, str):
            return target in self.catalog.tables and self.catalog.tables[target].has_column(column)
        return column in output_names(target)

    def _columns_of(self, target, column: str) -> FrozenSet[BaseColumn]:
        if isinstance(target, str):
            return frozenset({(target, column)})
        return trace_output(target, column, self.catalog)

    def resolve(self, ref: ColumnRef) -> FrozenSet[BaseColumn]:
        scope = self
        while scope is not None:
            if ref.table is not None:
                if ref.table in scope.bindings:
                    return scope._columns_of(scope.bindings[ref.table], ref.name)
            else:
                owners = [t for t in scope.bindings.values() if scope._provides(t, ref.name)]
                if owners:
                    out = frozenset()
                    for t in owners:
                        out |= scope._columns_of(t, ref.name)
                    return out
            scope = scope.parent
        return frozenset()

    def expr_columns(self, expr) -> FrozenSet[BaseColumn]:
        out = frozenset()
        for node in walk_expr(expr):
            if isinstance(node, ColumnRef):
                out |= self.resolve(node)
        return out


def trace_output(q: Query, name: str, catalog: SchemaCatalog) -> FrozenSet[BaseColumn]:
    """派生表输出列追溯到各分支投影所依赖的基表列"""
    names = output_names(q)
    if name not in names:
        return frozenset()
    i = names.index(name)
    out = frozenset()
    for b in q.branches:
        if i < len(b.select):
            out |= _Scope(catalog, b, None).expr_columns(b.select[i].expr)
    return out


class _EquiCollector:
    """收集列与列之间的等值对（连接谓词与 IN 子查询半连接）"""

    def __init__(self, catalog: SchemaCatalog):
        self.catalog = catalog
        self.pairs: List[Tuple[FrozenSet[BaseColumn], FrozenSet[BaseColumn], str]] = []

    def query(self, q: Query, parent: Optional[_Scope]):
        for b in q.branches:
            self.block(b, parent)

    def block(self, b: QueryBlock, parent: Optional[_Scope]):
        scope = _Scope(self.catalog, b, parent)
        preds = list(conjuncts(b.where))
        for item in b.from_:
            for leaf in from_leaves(item):
                if isinstance(leaf, DerivedTable):
                    self.query(leaf.query, None)
            preds.extend(_join_conditions(item))
        for p in preds:
            self.pred(p, scope)
        for s in b.select:
            for node in walk_expr(s.expr):
                if isinstance(node, ScalarSubquery):
                    self.query(node.query, scope)

    def pred(self, p, scope: _Scope):
        for node in walk_expr(p):
            if isinstance(node, Comparison) and node.op == '=' \
                    and isinstance(node.left, ColumnRef) and isinstance(node.right, ColumnRef):
                self.pairs.append((scope.resolve(node.left), scope.resolve(node.right), render_predicate(node)))
            elif isinstance(node, InSubquery):
                inner = node.query.branches[0]
                inner_scope = _Scope(self.catalog, inner, scope)
                if inner.select and not isinstance(inner.select[0].expr, Aggregate):
                    self.pairs.append((scope.expr_columns(node.expr), inner_scope.expr_columns(inner.select[0].expr),
                                       f"{render_expr(node.expr)} IN (SELECT {render_expr(inner.select[0].expr)} ...)"))
                self.query(node.query, scope)
            elif isinstance(node, ScalarSubquery):
                self.query(node.query, scope)


def _join_conditions(item) -> list:
    if isinstance(item, Join):
        return _join_conditions(item.left) + _join_conditions(item.right) + conjuncts(item.condition)
    return []


def _seed_classes(seed: Query, catalog: SchemaCatalog) -> List[Dict[BaseColumn, BaseColumn]]:
    """每个种子分支的等值闭包（并查集，值为代表元）"""
    classes = []
    for b in seed.branches:
        collector = _EquiCollector(catalog)
        collector.block(b, None)
        parent: Dict[BaseColumn, BaseColumn] = {}

        def find(x):
            parent.setdefault(x, x)
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for left, right, _ in collector.pairs:
            for l in left:
                for r in right:
                    parent[find(l)] = find(r)
        classes.append({k: find(k) for k in list(parent)})
    return classes


def _union_node(q: Query) -> Optional[Query]:
    if q.is_union:
        return q
    for item in q.branches[0].from_:
        for leaf in from_leaves(item):
            if isinstance(leaf, DerivedTable) and leaf.query.is_union:
                return leaf.query
    return None


def _fmt_tables(counts: Dict[str, int]) -> str:
    return ', '.join(f"{t}" if n == 1 else f"{t} x{n}" for t, n in sorted(counts.items()))


def check_alignment(cand: Query, seed: Query, catalog: SchemaCatalog) -> List[Violation]:
    """
    检查合成查询与种子查询的一致性

    Args:
        cand: 合成查询
        seed: 种子查询 Q_S
        catalog: 模式目录（用于解析未限定的列名）

    Returns:
        违规列表；为空表示一致。每条违规给出准则编号与需要修正的子句
    """
    violations: List[Violation] = []

    # 表集合与实例数
    seed_tables, cand_tables = table_multiset(seed), table_multiset(cand)
    extra = sorted(set(cand_tables) - set(seed_tables))
    missing = sorted(set(seed_tables) - set(cand_tables))
    if extra or missing:
        detail = []
        if extra:
            detail.append(f"Tables absent from the seed query: {', '.join(extra)}.")
        if missing:
            detail.append(f"Tables of the seed query not used: {', '.join(missing)}.")
        violations.append(Violation('G5', 'FROM clause', ' '.join(detail)))
    elif Counter(seed_tables) != Counter(cand_tables):
        violations.append(Violation('G6', 'FROM clause',
                                    f"Use the table instances {_fmt_tables(seed_tables)}."))
    elif seed.is_union:
        union = _union_node(cand)
        if union is not None and len(union.branches) == len(seed.branches):
            expected = sorted(_fmt_tables(table_multiset(Query((b,)))) for b in seed.branches)
            got = sorted(_fmt_tables(table_multiset(Query((b,)))) for b in union.branches)
            if expected != got:
                violations.append(Violation('G6', 'FROM clause',
                                            f"Each UNION ALL branch keeps its tables: {'; '.join(expected)}."))

    # 连接谓词
    classes = _seed_classes(seed, catalog)
    collector = _EquiCollector(catalog)
    collector.query(cand, None)
    bad = []
    for left, right, text in collector.pairs:
        if not left or not right or left & right:
            continue
        if not any(cls.get(l) is not None and cls.get(l) == cls.get(r)
                   for cls in classes for l in left for r in right):
            bad.append(text)
    if bad:
        violations.append(Violation('G7', 'join predicates',
                                    f"Join predicates absent from the seed query: {'; '.join(sorted(set(bad)))}."))

    # 投影
    seed_names, cand_names = output_names(seed), output_names(cand)
    if seed_names != cand_names:
        violations.append(Violation('G8', 'SELECT clause',
                                    f"Project exactly {', '.join(seed_names)} in this order."))
    else:
        wrong = []
        for i, name in enumerate(seed_names):
            expected = frozenset()
            for b in seed.branches:
                expected |= _Scope(catalog, b, None).expr_columns(b.select[i].expr)
            got = frozenset()
            for b in cand.branches:
                if i < len(b.select):
                    got |= _Scope(catalog, b, None).expr_columns(b.select[i].expr)
            if expected != got:
                wrong.append(name)
        if wrong:
            violations.append(Violation('G8', 'SELECT clause',
                                        f"Keep the attribute dependencies of {', '.join(wrong)}."))
    for v in violations:
        logger.debug(f"对齐检查 {v.guideline} {v.clause}: {v.detail}")
    return violations
