#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
隐藏查询语料模块
- 在 D_I 上按见证行生成平坦 SPJGAOL 隐藏查询，验证种子查询的可靠性
- 生成带一层嵌套 / 外连接 / 半连接的隐藏查询，把种子与真值的差异归入已知的退化类别
- 内置变异体语料，衡量结果等价检查的杀伤力
"""

import logging
import time
from dataclasses import dataclass, fields, is_dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from checker import gen_random_db, replay_counterexample, result_equivalent
from hqe_config import CheckerConfig, LimitsConfig
from hqe_errors import HqeError, SqlError
from minisql import (Aggregate, Between, ColumnRef, Comparison, DerivedTable, InList, InSubquery, Join, Like,
                     Literal, OrderItem, Query, QueryBlock, SelectItem, TableRef, conjuncts, make_and, parse_sql,
                     render_sql, walk_expr)
from oracle import make_oracle
from relcore import DatabaseState, DomainKind, FitClass, SchemaCatalog, multiset_diff
from sql_executor import execute
from xre_pipeline import run_xre

logger = logging.getLogger(__name__)

# 区间谓词在网格上向两侧扩展的最大步数（小数按整数部分计）
_SPREAD = {
    DomainKind.INTEGER: 15,
    DomainKind.DECIMAL: 800,
    DomainKind.DATE: 120,
}

NESTED_KINDS = ('outer', 'semi', 'derived')


@dataclass
class CorpusQuery:
    name: str
    kind: str  # flat | outer | semi | derived
    query: Query

    @property
    def sql(self) -> str:
        return render_sql(self.query)


class QueryGenerator:
    """以 D_I 中的见证行为锚点随机生成隐藏查询，保证其在 D_I 上的结果为 FIT"""

    def __init__(self, db: DatabaseState, seed: int = 0, max_tables: int = 3, max_attempts: int = 50):
        self.db = db
        self.catalog: SchemaCatalog = db.catalog
        self.rng = np.random.default_rng(seed)
        self.max_tables = max_tables
        self.max_attempts = max_attempts
        self._counter = 0

    def _choice(self, items: Sequence):
        return items[int(self.rng.integers(len(items)))]

    def _name(self, kind: str) -> str:
        self._counter += 1
        return f"{kind}-{self._counter:03d}"

    def _key_columns(self, table: str) -> set:
        schema = self.catalog.table(table)
        return set(schema.primary_key) | {fk.column for fk in schema.foreign_keys}

    def _pick_tables(self, k: int) -> Optional[Tuple[List[str], List[Comparison]]]:
        """沿外键边扩展出 k 张表及其等值连接谓词"""
        populated = self.db.populated_tables()
        if not populated:
            return None
        tables = [self._choice(populated)]
        joins = []
        while len(tables) < k:
            frontier = [e for e in self.catalog.fk_edges()
                        if e[0] != e[2] and (e[0] in tables) != (e[2] in tables)
                        and self.db.row_count(e[2] if e[0] in tables else e[0]) > 0]
            if not frontier:
                break
            child, ccol, parent, pcol = self._choice(frontier)
            tables.append(parent if child in tables else child)
            joins.append(Comparison('=', ColumnRef(None, ccol), ColumnRef(None, pcol)))
        names = [c for t in tables for c in self.catalog.table(t).column_names]
        if len(names) != len(set(names)):
            return None
        return tables, joins

    def _witness(self, tables: List[str], joins: List[Any]) -> Optional[Dict[Tuple[str, str], Any]]:
        """在连接结果中随机取一行作为见证"""
        cols = [(t, c) for t in tables for c in self.catalog.table(t).column_names]
        block = QueryBlock(select=tuple(SelectItem(ColumnRef(None, c)) for _, c in cols),
                           from_=tuple(TableRef(t) for t in tables), where=make_and(joins))
        rows = execute(Query((block,)), self.db).rows
        if not rows:
            return None
        row = rows[int(self.rng.integers(len(rows)))]
        return dict(zip(cols, row))

    def _filter(self, table: str, column: str, value):
        """构造一个见证行满足的选择谓词"""
        d = self.catalog.domain(table, column)
        ref = ColumnRef(None, column)
        if d.kind == DomainKind.TEXT_CATEGORICAL:
            others = [x for x in d.enum_values if x != value]
            n_extra = min(len(others), int(self.rng.integers(0, 3)))
            extra = [others[i] for i in self.rng.choice(len(others), size=n_extra, replace=False)] if n_extra else []
            values = sorted([value] + extra)
            if len(values) == 1:
                return Comparison('=', ref, Literal(value))
            return InList(ref, tuple(Literal(v) for v in values))
        if d.kind == DomainKind.TEXT_FREE:
            text = str(value)
            if len(text) >= 4 and '%' not in text and '_' not in text and self.rng.random() < 0.6:
                k = int(self.rng.integers(2, len(text) - 1))
                return Like(ref, text[:k] + '%')
            return Comparison('=', ref, Literal(value))
        spread = _SPREAD[d.kind] * (10 ** d.scale if d.kind == DomainKind.DECIMAL else 1)
        g = d.to_grid(value)
        lo = max(d.grid_min, g - int(self.rng.integers(0, spread + 1)))
        hi = min(d.grid_max, g + int(self.rng.integers(0, spread + 1)))
        op = self._choice(['<=', '>=', 'between', 'between', '='])
        if op == '<=':
            return Comparison('<=', ref, Literal(d.from_grid(hi)))
        if op == '>=':
            return Comparison('>=', ref, Literal(d.from_grid(lo)))
        if op == 'between':
            return Between(ref, Literal(d.from_grid(lo)), Literal(d.from_grid(hi)))
        return Comparison('=', ref, Literal(d.coerce(value)))

    def _filters(self, tables: List[str], witness, count: int) -> List[Any]:
        candidates = [(t, c) for t in tables for c in self.catalog.table(t).column_names
                      if c not in self._key_columns(t)]
        if not candidates:
            return []
        picked = self.rng.choice(len(candidates), size=min(count, len(candidates)), replace=False)
        return [self._filter(*candidates[i], witness[candidates[i]]) for i in sorted(picked)]

    def _projection(self, tables: List[str], max_cols: int = 3) -> List[ColumnRef]:
        cols = [c for t in tables for c in self.catalog.table(t).column_names]
        n = int(self.rng.integers(1, min(max_cols, len(cols)) + 1))
        return [ColumnRef(None, cols[i]) for i in sorted(self.rng.choice(len(cols), size=n, replace=False))]

    def _is_fit(self, q: Query) -> bool:
        try:
            return execute(q, self.db).fit_class == FitClass.FIT
        except SqlError as e:
            logger.debug(f"生成的查询无法执行: {e}")
            return False

    def flat(self) -> Optional[CorpusQuery]:
        """平坦 SPJGAOL 查询"""
        for _ in range(self.max_attempts):
            picked = self._pick_tables(int(self.rng.integers(1, self.max_tables + 1)))
            if picked is None:
                continue
            tables, joins = picked
            witness = self._witness(tables, joins)
            if witness is None:
                continue
            preds = joins + self._filters(tables, witness, int(self.rng.integers(1, 3)))
            proj = self._projection(tables)
            select = [SelectItem(c) for c in proj]
            group_by: Tuple = ()
            if self.rng.random() < 0.3:
                numeric = [c for t in tables for c in self.catalog.table(t).columns
                           if c.domain.is_numeric and c.name not in self._key_columns(t)
                           and c.name not in {p.name for p in proj}]
                if numeric:
                    func = self._choice(['SUM', 'MIN', 'MAX', 'AVG', 'COUNT'])
                    arg = None if func == 'COUNT' else ColumnRef(None, self._choice(numeric).name)
                    select.append(SelectItem(Aggregate(func, arg)))
                    group_by = tuple(proj)
            order_by: Tuple = ()
            limit = None
            if self.rng.random() < 0.3:
                order_by = (OrderItem(proj[0], bool(self.rng.random() < 0.5)),)
                if self.rng.random() < 0.5:
                    limit = int(self.rng.integers(3, 8))
            block = QueryBlock(select=tuple(select), from_=tuple(TableRef(t) for t in tables),
                               where=make_and(preds), group_by=group_by, order_by=order_by, limit=limit)
            q = Query((block,))
            if self._is_fit(q):
                return CorpusQuery(self._name('flat'), 'flat', q)
        return None

    def _edge(self) -> Optional[Tuple[str, str, str, str]]:
        edges = [e for e in self.catalog.fk_edges()
                 if e[0] != e[2] and self.db.row_count(e[0]) > 0 and self.db.row_count(e[2]) > 0]
        return self._choice(edges) if edges else None

    def nested(self, kind: str) -> Optional[CorpusQuery]:
        """
        一层嵌套的隐藏查询

        Args:
            kind: outer（父表 LEFT OUTER JOIN 子表）| semi（IN 子查询）| derived（派生表）
        """
        if kind not in NESTED_KINDS:
            raise ValueError(f"未知的嵌套类型: {kind}")
        for _ in range(self.max_attempts):
            q = getattr(self, f"_{kind}")()
            if q is not None and self._is_fit(q):
                return CorpusQuery(self._name(kind), kind, q)
        return None

    def _outer(self) -> Optional[Query]:
        edge = self._edge()
        if edge is None:
            return None
        child, ccol, parent, pcol = edge
        witness = self._witness([parent, child], [Comparison('=', ColumnRef(None, ccol), ColumnRef(None, pcol))])
        if witness is None:
            return None
        proj = self._projection([parent], max_cols=2)
        join = Join(TableRef(parent), TableRef(child), 'left',
                    Comparison('=', ColumnRef(None, pcol), ColumnRef(None, ccol)))
        block = QueryBlock(select=tuple(SelectItem(c) for c in proj), from_=(join,),
                           where=make_and(self._filters([parent], witness, 1)))
        return Query((block,))

    def _semi(self) -> Optional[Query]:
        edge = self._edge()
        if edge is None:
            return None
        child, ccol, parent, pcol = edge
        witness = self._witness([parent, child], [Comparison('=', ColumnRef(None, ccol), ColumnRef(None, pcol))])
        if witness is None:
            return None
        sub = QueryBlock(select=(SelectItem(ColumnRef(None, ccol)),), from_=(TableRef(child),),
                         where=make_and(self._filters([child], witness, 1)))
        outer_preds = self._filters([parent], witness, int(self.rng.integers(0, 2)))
        outer_preds.append(InSubquery(ColumnRef(None, pcol), Query((sub,))))
        block = QueryBlock(select=tuple(SelectItem(c) for c in self._projection([parent], max_cols=2)),
                           from_=(TableRef(parent),), where=make_and(outer_preds))
        return Query((block,))

    def _derived(self) -> Optional[Query]:
        picked = self._pick_tables(int(self.rng.integers(1, 3)))
        if picked is None:
            return None
        tables, joins = picked
        witness = self._witness(tables, joins)
        if witness is None:
            return None
        inner_preds = joins + self._filters(tables, witness, 1)
        outer_filter = self._filters(tables, witness, 1)
        proj = self._projection(tables)
        names = [c.name for c in proj]
        for f in outer_filter:
            for n in walk_expr(f):
                if isinstance(n, ColumnRef) and n.name not in names:
                    names.append(n.name)
        inner = QueryBlock(select=tuple(SelectItem(ColumnRef(None, n)) for n in names),
                           from_=tuple(TableRef(t) for t in tables), where=make_and(inner_preds))
        outer = QueryBlock(select=tuple(SelectItem(c) for c in proj),
                           from_=(DerivedTable(Query((inner,)), 'dt'),), where=make_and(outer_filter))
        return Query((outer,))


# ---------------------------------------------------------------------------
# 退化到平坦查询
# ---------------------------------------------------------------------------

def _substitute(node, mapping: Dict[str, Any]):
    """把表达式中的无限定列引用替换为映射中的表达式（不进入子查询）"""
    if isinstance(node, ColumnRef):
        return mapping.get(node.name, node)
    if isinstance(node, (Query, InSubquery)) or not is_dataclass(node):
        return node
    changes = {}
    for f in fields(node):
        value = getattr(node, f.name)
        if isinstance(value, tuple):
            changes[f.name] = tuple(_substitute(v, mapping) for v in value)
        elif is_dataclass(value):
            changes[f.name] = _substitute(value, mapping)
    return replace(node, **changes)


def _flatten_from(item, tables: List[Any], preds: List[Any]):
    if isinstance(item, Join):
        _flatten_from(item.left, tables, preds)
        _flatten_from(item.right, tables, preds)
        preds.extend(conjuncts(item.condition))
    else:
        tables.append(item)


def _degrade_block(block: QueryBlock, drop_outer: bool) -> QueryBlock:
    tables: List[Any] = []
    preds: List[Any] = []
    for item in block.from_:
        if drop_outer and isinstance(item, Join) and item.kind == 'left':
            # 外连接右侧未被引用时整体去掉
            _flatten_from(item.left, tables, [])
            continue
        _flatten_from(item, tables, preds)
    preds.extend(conjuncts(block.where))

    select, group_by, order_by = block.select, block.group_by, block.order_by
    if len(tables) == 1 and isinstance(tables[0], DerivedTable) and not tables[0].query.is_union:
        inner = tables[0].query.branches[0]
        if not inner.group_by and inner.limit is None:
            inner = _degrade_block(inner, drop_outer)
            mapping = {(s.alias or s.expr.name): s.expr for s in inner.select if isinstance(s.expr, ColumnRef)}
            select = tuple(replace(s, expr=_substitute(s.expr, mapping)) for s in select)
            group_by = tuple(_substitute(g, mapping) for g in group_by)
            order_by = tuple(replace(o, expr=_substitute(o.expr, mapping)) for o in order_by)
            preds = conjuncts(inner.where) + [_substitute(p, mapping) for p in preds]
            tables = list(inner.from_)

    flat_preds = []
    for p in preds:
        if isinstance(p, InSubquery) and not p.query.is_union:
            sub = p.query.branches[0]
            if len(sub.select) == 1 and not sub.group_by and sub.limit is None:
                sub = _degrade_block(sub, drop_outer)
                tables.extend(sub.from_)
                flat_preds.append(Comparison('=', p.expr, sub.select[0].expr))
                flat_preds.extend(conjuncts(sub.where))
                continue
        flat_preds.append(p)
    return replace(block, select=select, from_=tuple(tables), where=make_and(flat_preds),
                   group_by=group_by, order_by=order_by)


def degrade_to_flat(q: Query, drop_outer: bool = False) -> Query:
    """
    把嵌套查询退化为平坦的等值连接形式：
    LEFT OUTER JOIN → 内连接（drop_outer 时去掉外连接右侧），IN 子查询 → 连接，
    无分组的派生表 → 内联（内层谓词上移为平坦谓词）
    """
    return replace(q, branches=tuple(_degrade_block(b, drop_outer) for b in q.branches))


def classify_discrepancy(hidden: Query, seed: Query, catalog: SchemaCatalog, instances: Sequence[DatabaseState]) -> str:
    """
    在一组实例上比较种子与真值

    Returns:
        exact（处处一致）| outer_to_inner | outer_dropped | flattened（与某个退化形式处处一致）| unclassified
    """
    def agree(a: Query, b: Query) -> bool:
        for db in instances:
            try:
                only_a, only_b = multiset_diff(execute(a, db), execute(b, db))
            except SqlError:
                return False
            if only_a or only_b:
                return False
        return True

    if agree(seed, hidden):
        return 'exact'
    has_outer = 'LEFT OUTER JOIN' in render_sql(hidden)
    candidates = [('outer_to_inner' if has_outer else 'flattened', degrade_to_flat(hidden))]
    if has_outer:
        candidates.append(('outer_dropped', degrade_to_flat(hidden, drop_outer=True)))
    for label, flat in candidates:
        if agree(seed, flat):
            return label
    return 'unclassified'


# ---------------------------------------------------------------------------
# 变异体语料
# ---------------------------------------------------------------------------

RUNNING_EXAMPLE_SQL = (
    "SELECT * FROM ((SELECT c_name AS name, c_phone AS phone FROM customer LEFT OUTER JOIN orders "
    "ON c_custkey = o_custkey WHERE c_acctbal <= 10000 OR o_orderkey IS NULL) UNION ALL "
    "(SELECT s_name AS name, s_phone AS phone FROM supplier WHERE s_suppkey IN "
    "(SELECT l_suppkey FROM orders, lineitem WHERE l_orderkey = o_orderkey AND s_acctbal <= o_totalprice "
    "AND l_commitdate = l_receiptdate AND l_shipmode IN ('AIR', 'TRUCK')))) AS people GROUP BY name, phone"
)

BASE_QUERIES: Dict[str, str] = {
    'people': RUNNING_EXAMPLE_SQL,
    'orders': ("SELECT c_name, o_orderkey, o_totalprice FROM customer, orders WHERE c_custkey = o_custkey "
               "AND o_totalprice >= 50000.00 AND c_mktsegment IN ('BUILDING', 'MACHINERY')"),
    'shipping': ("SELECT l_shipmode, SUM(l_quantity), COUNT(*) FROM lineitem "
                 "WHERE l_shipdate <= DATE '1996-06-30' GROUP BY l_shipmode"),
    'parts': ("SELECT p_name, p_brand, p_size FROM part WHERE p_size BETWEEN 10 AND 40 "
              "AND p_brand IN ('Brand#12', 'Brand#23')"),
}


def _mutate(base: str, old: str, new: str) -> str:
    if old not in BASE_QUERIES[base]:
        raise ValueError(f"变异位置不存在于 {base}: {old}")
    return BASE_QUERIES[base].replace(old, new, 1)


# (名称, 基础查询, 变异类别, 变异后 SQL)
MUTANTS: List[Tuple[str, str, str, str]] = [
    ('people-bound-9000', 'people', 'bound_shift', _mutate('people', 'c_acctbal <= 10000', 'c_acctbal <= 9000')),
    ('people-bound-11000', 'people', 'bound_shift', _mutate('people', 'c_acctbal <= 10000', 'c_acctbal <= 11000')),
    ('people-drop-supplier', 'people', 'dropped_branch',
     "SELECT * FROM (SELECT c_name AS name, c_phone AS phone FROM customer LEFT OUTER JOIN orders "
     "ON c_custkey = o_custkey WHERE c_acctbal <= 10000 OR o_orderkey IS NULL) AS people GROUP BY name, phone"),
    ('people-drop-customer', 'people', 'dropped_branch',
     "SELECT * FROM (SELECT s_name AS name, s_phone AS phone FROM supplier WHERE s_suppkey IN "
     "(SELECT l_suppkey FROM orders, lineitem WHERE l_orderkey = o_orderkey AND s_acctbal <= o_totalprice "
     "AND l_commitdate = l_receiptdate AND l_shipmode IN ('AIR', 'TRUCK'))) AS people GROUP BY name, phone"),
    ('people-inner-join', 'people', 'join_type', _mutate('people', 'LEFT OUTER JOIN', 'JOIN')),
    ('people-drop-truck', 'people', 'literal_removal', _mutate('people', "IN ('AIR', 'TRUCK')", "IN ('AIR')")),
    ('people-drop-air', 'people', 'literal_removal', _mutate('people', "IN ('AIR', 'TRUCK')", "IN ('TRUCK')")),
    ('people-drop-is-null', 'people', 'literal_removal',
     _mutate('people', 'c_acctbal <= 10000 OR o_orderkey IS NULL', 'c_acctbal <= 10000')),
    ('people-flip-balance', 'people', 'bound_shift', _mutate('people', 's_acctbal <= o_totalprice',
                                                             's_acctbal >= o_totalprice')),
    ('people-commit-before', 'people', 'bound_shift', _mutate('people', 'l_commitdate = l_receiptdate',
                                                              'l_commitdate <= l_receiptdate')),
    ('people-no-group', 'people', 'dropped_clause', _mutate('people', ' GROUP BY name, phone', '')),
    ('orders-bound-60000', 'orders', 'bound_shift', _mutate('orders', '>= 50000.00', '>= 60000.00')),
    ('orders-bound-40000', 'orders', 'bound_shift', _mutate('orders', '>= 50000.00', '>= 40000.00')),
    ('orders-drop-machinery', 'orders', 'literal_removal',
     _mutate('orders', "IN ('BUILDING', 'MACHINERY')", "IN ('BUILDING')")),
    ('orders-drop-segment', 'orders', 'literal_removal',
     _mutate('orders', " AND c_mktsegment IN ('BUILDING', 'MACHINERY')", '')),
    ('shipping-sum-to-max', 'shipping', 'aggregate_swap', _mutate('shipping', 'SUM(l_quantity)', 'MAX(l_quantity)')),
    ('shipping-date-1995', 'shipping', 'bound_shift', _mutate('shipping', "DATE '1996-06-30'", "DATE '1995-06-30'")),
    ('shipping-no-filter', 'shipping', 'literal_removal',
     _mutate('shipping', " WHERE l_shipdate <= DATE '1996-06-30'", '')),
    ('parts-size-30', 'parts', 'bound_shift', _mutate('parts', 'BETWEEN 10 AND 40', 'BETWEEN 10 AND 30')),
    ('parts-size-20', 'parts', 'bound_shift', _mutate('parts', 'BETWEEN 10 AND 40', 'BETWEEN 20 AND 40')),
    ('parts-drop-brand23', 'parts', 'literal_removal',
     _mutate('parts', "IN ('Brand#12', 'Brand#23')", "IN ('Brand#12')")),
    ('parts-open-upper', 'parts', 'bound_shift', _mutate('parts', 'p_size BETWEEN 10 AND 40', 'p_size >= 10')),
]


# ---------------------------------------------------------------------------
# 运行语料
# ---------------------------------------------------------------------------

def _row(suite: str, name: str, kind: str, status: str, hidden: str = '', seed_sql: str = '',
         detail: str = '', invocations: int = 0, seconds: float = 0.0) -> Dict[str, Any]:
    return {'suite': suite, 'name': name, 'kind': kind, 'status': status, 'detail': detail,
            'invocations': invocations, 'seconds': round(seconds, 3), 'hidden_sql': hidden, 'seed_sql': seed_sql}


def _extract_seed(cq: CorpusQuery, db: DatabaseState, limits: LimitsConfig):
    h = make_oracle(cq.sql)
    try:
        return run_xre(h, db, limits), h.invocation_count
    finally:
        h.close()


def run_flat_suite(db: DatabaseState, count: int = 20, seed: int = 0, limits: Optional[LimitsConfig] = None,
                   progress: bool = False) -> List[Dict[str, Any]]:
    """平坦套件：种子查询在 D_I 上的结果必须与 R_H 一致"""
    limits = limits or LimitsConfig()
    gen = QueryGenerator(db, seed)
    rows = []
    for _ in tqdm(range(count), desc='flat', disable=not progress):
        cq = gen.flat()
        if cq is None:
            logger.warning("未能生成平坦隐藏查询，跳过")
            continue
        started = time.perf_counter()
        try:
            xre, calls = _extract_seed(cq, db, limits)
        except HqeError as e:
            rows.append(_row('flat', cq.name, cq.kind, 'error', cq.sql, detail=str(e),
                             seconds=time.perf_counter() - started))
            continue
        only_s, only_h = multiset_diff(xre.r_s, xre.r_h)
        ok = not only_s and not only_h and (not xre.r_h.ordered or xre.r_s.rows == xre.r_h.rows)
        rows.append(_row('flat', cq.name, cq.kind, 'pass' if ok else 'fail', cq.sql, xre.rendered.text,
                         detail=f"|R_H|={len(xre.r_h)} |R_S|={len(xre.r_s)}", invocations=calls,
                         seconds=time.perf_counter() - started))
    return rows


def run_nested_suite(db: DatabaseState, count: int = 30, seed: int = 0, instances: int = 5,
                     limits: Optional[LimitsConfig] = None, profile: Optional[CheckerConfig] = None,
                     progress: bool = False) -> List[Dict[str, Any]]:
    """嵌套套件：种子与真值的差异必须落在已知退化类别内"""
    limits = limits or LimitsConfig()
    gen = QueryGenerator(db, seed)
    probes = [db] + [gen_random_db(db.catalog, seed + 1000 + i, profile) for i in range(instances)]
    rows = []
    for i in tqdm(range(count), desc='nested', disable=not progress):
        cq = gen.nested(NESTED_KINDS[i % len(NESTED_KINDS)])
        if cq is None:
            logger.warning("未能生成嵌套隐藏查询，跳过")
            continue
        started = time.perf_counter()
        try:
            xre, calls = _extract_seed(cq, db, limits)
        except HqeError as e:
            rows.append(_row('nested', cq.name, cq.kind, 'error', cq.sql, detail=str(e),
                             seconds=time.perf_counter() - started))
            continue
        label = classify_discrepancy(cq.query, xre.seed, db.catalog, probes)
        status = 'fail' if label == 'unclassified' else 'pass'
        rows.append(_row('nested', cq.name, cq.kind, status, cq.sql, xre.rendered.text, detail=label,
                         invocations=calls, seconds=time.perf_counter() - started))
    return rows


def _kill_once(h, mutant, catalog: SchemaCatalog, trials: int, seed: int,
               profile: Optional[CheckerConfig]) -> Tuple[str, str]:
    verdict = result_equivalent(h, mutant, catalog, trials=trials, seed=seed, profile=profile)
    if verdict.status != 'counterexample':
        return 'survived', f"seed {seed}: {verdict.trials_run} trials"
    r_e, r_h = replay_counterexample(h, mutant, catalog, verdict.counterexample.db_seed, profile)
    only_e, only_h = multiset_diff(r_e, r_h)
    if not (only_e or only_h):
        return 'replay_mismatch', f"seed {seed}: db seed {verdict.counterexample.db_seed}"
    return 'killed', f"trial {verdict.counterexample.trial}, seed {verdict.counterexample.db_seed}"


def run_mutant_suite(catalog: SchemaCatalog, trials: int = 30, seed: int = 0,
                     profile: Optional[CheckerConfig] = None, progress: bool = False,
                     seeds: int = 1) -> List[Dict[str, Any]]:
    """
    变异体套件：每个变异体都应在试验预算内被检查器拒绝，且反例可重放

    Args:
        seeds: 检查器起始种子个数；第 s 轮从 seed + s * trials 开始，各轮随机实例互不重叠

    Returns:
        每个变异体一行；kills 为被拒绝的轮数，全部轮次都拒绝时状态为 killed
    """
    rows = []
    for name, base, kind, sql in tqdm(MUTANTS, desc='mutants', disable=not progress):
        started = time.perf_counter()
        h = make_oracle(BASE_QUERIES[base])
        kills, status, detail = 0, 'killed', ''
        try:
            mutant = parse_sql(sql)
            for s in range(seeds):
                outcome, note = _kill_once(h, mutant, catalog, trials, seed + s * trials, profile)
                if outcome == 'killed':
                    kills += 1
                    detail = detail or note
                elif status == 'killed':
                    status, detail = outcome, note
            calls = h.invocation_count
        except HqeError as e:
            status, detail, calls = 'error', str(e), h.invocation_count
        finally:
            h.close()
        row = _row('mutants', name, kind, status, BASE_QUERIES[base], sql, detail=detail,
                   invocations=calls, seconds=time.perf_counter() - started)
        row.update(kills=kills, runs=seeds)
        rows.append(row)
    return rows


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """按套件与状态汇总"""
    if frame.empty:
        return frame
    return frame.groupby(['suite', 'status']).size().unstack(fill_value=0)


def corpus_passed(frame: pd.DataFrame) -> bool:
    return bool(frame['status'].isin(['pass', 'killed']).all()) if not frame.empty else True


def run_corpus(session, suites: Sequence[str] = ('flat', 'nested', 'mutants', 'running'), count: int = 20,
               seed: int = 0, progress: bool = True) -> pd.DataFrame:
    """
    运行语料并返回结果表

    Args:
        session: 会话（提供配置、D_I 与运行示例的完整流水线）
        suites: 要运行的套件
        count: 平坦与嵌套套件各生成的查询数
        seed: 生成器与检查器的起始种子

    Returns:
        每个隐藏查询一行的 DataFrame
    """
    cfg = session.config
    db = session.load_database()
    rows: List[Dict[str, Any]] = []
    if 'flat' in suites:
        rows += run_flat_suite(db, count, seed, cfg.limits, progress)
    if 'nested' in suites:
        rows += run_nested_suite(db, count, seed, limits=cfg.limits, profile=cfg.checker, progress=progress)
    if 'mutants' in suites:
        rows += run_mutant_suite(db.catalog, cfg.checker.trials, seed, cfg.checker, progress)
    if 'running' in suites:
        started = time.perf_counter()
        try:
            report = session.run_extract()
            status = 'pass' if report.status == 'success' else 'fail'
            rows.append(_row('running', 'running-example', 'union', status, seed_sql=report.seed_sql,
                             detail=f"{report.status}; prompts {', '.join(report.prompt_sequence)}",
                             invocations=sum(p.invocations for p in report.phases.values()),
                             seconds=time.perf_counter() - started))
        except HqeError as e:
            rows.append(_row('running', 'running-example', 'union', 'error', detail=str(e),
                             seconds=time.perf_counter() - started))
    frame = pd.DataFrame(rows, columns=list(_row('', '', '', '').keys()))
    logger.info(f"语料运行完成: {len(frame)} 个查询\n{summarize(frame)}")
    return frame
