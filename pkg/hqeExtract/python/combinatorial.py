#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
组合合成模块
提示循环停滞时，保持最后一次合成的嵌套骨架不变，枚举：
(a) 种子表在外层 / 内层 FROM 之间的划分，谓词随其引用的表放置；
(b) GROUP BY 列在内外两层之间的放置。
逐个在 D_I 上执行，第一个与 R_H 一致的候选胜出
"""

import logging
from dataclasses import dataclass, replace
from itertools import combinations, product
from typing import Dict, Iterator, List, Optional, Sequence

from hqe_errors import SqlError
from minisql import (Aggregate, ColumnRef, Comparison, DerivedTable, InSubquery, Query, QueryBlock, RenderedSQL,
                     SelectItem, TableRef, conjuncts, from_leaves, make_and, output_names, render_expr,
                     walk_expr)
from oracle import OracleHandle
from relcore import DatabaseState, ResultSet, SchemaCatalog
from sql_executor import execute
from xfe import SynthesisStatus, is_ordered, results_match

logger = logging.getLogger(__name__)

DEFAULT_CAP = 10000


@dataclass
class CombinatorialResult:
    status: SynthesisStatus
    reason: str = ''
    query: Optional[Query] = None
    rendered: Optional[RenderedSQL] = None
    probes: int = 0
    skeleton: str = 'flat'


def skeleton_kind(q: Optional[Query]) -> str:
    """嵌套骨架类型：flat | semi（IN 子查询）| derived（派生表）"""
    if q is None:
        return 'flat'
    for b in q.branches:
        for item in b.from_:
            if any(isinstance(leaf, DerivedTable) for leaf in from_leaves(item)):
                return 'derived'
    for b in q.branches:
        if b.where is not None and any(isinstance(n, InSubquery) for n in walk_expr(b.where)):
            return 'semi'
    return 'flat'


def _subsets(items: Sequence) -> Iterator[List]:
    """按大小递增、组内按原顺序枚举子集"""
    for r in range(len(items) + 1):
        for combo in combinations(items, r):
            yield list(combo)


def _unique(exprs) -> List:
    out, seen = [], set()
    for e in exprs:
        key = render_expr(e)
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


def _has_aggregate(expr) -> bool:
    return any(isinstance(n, Aggregate) for n in walk_expr(expr))


class _Owners:
    """平坦块中列引用到表绑定的映射"""

    def __init__(self, block: QueryBlock, catalog: SchemaCatalog):
        self.leaves: Dict[str, TableRef] = {}
        for item in block.from_:
            if not isinstance(item, TableRef):
                raise ValueError("只处理由基表组成的 FROM")
            self.leaves[item.binding] = item
        self.catalog = catalog

    def owner(self, ref: ColumnRef) -> Optional[str]:
        if ref.table is not None:
            return ref.table if ref.table in self.leaves else None
        owners = [b for b, leaf in self.leaves.items() if self.catalog.table(leaf.name).has_column(ref.name)]
        return owners[0] if len(owners) == 1 else None

    def refs(self, expr) -> set:
        return {self.owner(n) for n in walk_expr(expr) if isinstance(n, ColumnRef)}


def redistribute_tables(block: QueryBlock, catalog: SchemaCatalog) -> Iterator[QueryBlock]:
    """
    平坦块的 FROM 重分配：外层取表的非空真子集，其余表进入 IN 子查询；
    谓词放到包含其全部引用表的最内层，跨层等值谓词逐个作为 IN 连接的备选

    Args:
        block: 平坦合取块
        catalog: 模式目录

    Yields:
        半连接形式的候选块
    """
    try:
        owners = _Owners(block, catalog)
    except ValueError:
        return
    bindings = sorted(owners.leaves)
    if len(bindings) < 2 or len(set(l.name for l in owners.leaves.values())) != len(bindings):
        return
    tail_exprs = [s.expr for s in block.select] + list(block.group_by) + [o.expr for o in block.order_by]
    preds = conjuncts(block.where)
    for r in range(1, len(bindings)):
        for outer in combinations(bindings, r):
            outer_set = set(outer)
            inner = [b for b in bindings if b not in outer_set]
            if any(not owners.refs(e) <= outer_set for e in tail_exprs):
                continue
            outer_preds = [p for p in preds if owners.refs(p) <= outer_set]
            inner_preds = [p for p in preds if not owners.refs(p) <= outer_set]
            for link in inner_preds:
                if not (isinstance(link, Comparison) and link.op == '='
                        and isinstance(link.left, ColumnRef) and isinstance(link.right, ColumnRef)):
                    continue
                lo, ro = owners.owner(link.left), owners.owner(link.right)
                if lo in outer_set and ro in inner:
                    outer_col, inner_col = link.left, link.right
                elif ro in outer_set and lo in inner:
                    outer_col, inner_col = link.right, link.left
                else:
                    continue
                sub = QueryBlock(select=(SelectItem(inner_col),),
                                 from_=tuple(owners.leaves[b] for b in inner),
                                 where=make_and([p for p in inner_preds if p is not link]))
                yield replace(block,
                              from_=tuple(owners.leaves[b] for b in outer),
                              where=make_and(outer_preds + [InSubquery(outer_col, Query((sub,)))]))


def _branch_alternatives(block: QueryBlock, catalog: SchemaCatalog) -> List[QueryBlock]:
    return [block] + list(redistribute_tables(block, catalog))


def _group_options(block: QueryBlock, pool: Sequence) -> List[tuple]:
    """一个块的 GROUP BY 备选：非聚合投影必须在内，其余池中列任选"""
    plain = _unique(s.expr for s in block.select if not _has_aggregate(s.expr))
    aggregated = any(_has_aggregate(s.expr) for s in block.select)
    plain_keys = {render_expr(e) for e in plain}
    extras = [e for e in _unique(pool) if render_expr(e) not in plain_keys]
    options = [] if aggregated else [()]
    for subset in _subsets(extras):
        options.append(tuple(plain + subset))
    return options


def redistribute_group_by(skeleton: Query, seed: Query, catalog: SchemaCatalog) -> Iterator[Query]:
    """
    派生表骨架上的 GROUP BY 重分配：内层各分支从其投影、原 GROUP BY 与 XRE 抽取的分组列中选取，
    外层只能按内层投影分组；内层分支同时尝试 FROM 重分配

    Yields:
        候选查询
    """
    if skeleton.is_union:
        return
    outer = skeleton.branches[0]
    leaves = [leaf for item in outer.from_ for leaf in from_leaves(item)]
    if len(leaves) != 1 or not isinstance(leaves[0], DerivedTable):
        return
    derived = leaves[0]
    inner_names = output_names(derived.query)
    for e in [s.expr for s in outer.select] + [o.expr for o in outer.order_by] + list(outer.group_by):
        for n in walk_expr(e):
            if isinstance(n, ColumnRef) and n.name not in inner_names:
                logger.debug(f"外层引用了内层未投影的列 {n.name}，骨架不可用")
                return
    seed_groups = [g for b in seed.branches for g in b.group_by]

    per_branch = []
    for ib in derived.query.branches:
        alternatives = []
        for alt in _branch_alternatives(ib, catalog):
            try:
                owners = _Owners(replace(alt, where=None), catalog)
                pool = [g for g in seed_groups if all(x is not None for x in owners.refs(g))]
            except ValueError:
                pool = []
            pool = list(alt.group_by) + pool
            for group in _group_options(alt, pool):
                alternatives.append(replace(alt, group_by=group))
        per_branch.append(alternatives)

    outer_pool = [ColumnRef(None, n) for n in inner_names]
    outer_pool = list(outer.group_by) + outer_pool
    outer_options = _group_options(outer, outer_pool)
    for branches in product(*per_branch):
        inner_q = replace(derived.query, branches=tuple(branches))
        for group in outer_options:
            block = replace(outer, from_=(DerivedTable(inner_q, derived.alias),), group_by=group)
            yield replace(skeleton, branches=(block,))


def enumerate_candidates(seed: Query, skeleton: Optional[Query], catalog: SchemaCatalog) -> Iterator[Query]:
    """确定性的候选顺序：先种子本身，再按骨架类型枚举"""
    yield seed
    kind = skeleton_kind(skeleton)
    if kind == 'semi':
        per_branch = [_branch_alternatives(b, catalog) for b in seed.branches]
        for i, branches in enumerate(product(*per_branch)):
            if i == 0:
                continue
            yield replace(seed, branches=tuple(branches))
    elif kind == 'derived':
        yield from redistribute_group_by(skeleton, seed, catalog)


def combinatorial_synthesis(seed: Query, skeleton: Optional[Query], h: OracleHandle, db: DatabaseState,
                            r_h: Optional[ResultSet] = None, cap: int = DEFAULT_CAP) -> CombinatorialResult:
    """
    组合合成

    Args:
        seed: 种子查询 Q_S
        skeleton: 最后一次合成的查询（提供嵌套结构）
        h: 黑盒句柄（R_H 未给出时调用一次）
        db: 初始数据库 D_I
        r_h: 黑盒在 D_I 上的结果
        cap: 候选上限

    Returns:
        SUCCESS 与胜出的查询，或 FAILURE（exhausted | cap）
    """
    h.phase = 'xfe'
    if r_h is None:
        r_h = h.invoke_result(db)
    ordered = is_ordered(seed)
    kind = skeleton_kind(skeleton)
    result = CombinatorialResult(SynthesisStatus.FAILURE, skeleton=kind)
    logger.info(f"组合合成开始，骨架类型 {kind}，上限 {cap} 个候选")
    for cand in enumerate_candidates(seed, skeleton, db.catalog):
        if result.probes >= cap:
            result.reason = 'cap'
            logger.warning(f"组合合成达到候选上限 {cap}")
            return result
        result.probes += 1
        try:
            r_e = execute(cand, db)
        except SqlError as e:
            logger.debug(f"候选 #{result.probes} 无法执行: {e}")
            continue
        if results_match(r_e, r_h, ordered):
            result.status = SynthesisStatus.SUCCESS
            result.query = cand
            result.rendered = RenderedSQL.of(cand)
            logger.info(f"组合合成成功，第 {result.probes} 个候选: {result.rendered.text}")
            return result
    result.reason = 'exhausted'
    logger.warning(f"组合合成穷尽 {result.probes} 个候选仍未找到结果一致的查询")
    return result
