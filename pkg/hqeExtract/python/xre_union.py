#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
FROM 子句与 UNION ALL 抽取模块
通过重命名报错（EbE）识别参与表，通过清空（EbV）识别公共表，
在辅助表幂集格上自底向上分类 Core / Side，得到每个子查询的 FROM 集合
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import FrozenSet, List, Optional, Set, Tuple

from hqe_errors import AssumptionViolation, OracleFailure, ScopeError
from mutator import is_fit, rename_table, void_tables
from oracle import EngineError, OracleHandle
from relcore import DatabaseState, ResultSet, UndoToken

logger = logging.getLogger(__name__)

TableSet = FrozenSet[str]


@dataclass
class UnionTableFamily:
    """幂集格分类结果"""

    t_h: TableSet
    common: TableSet
    aux_all: TableSet
    core: Set[TableSet] = field(default_factory=set)
    side: Set[TableSet] = field(default_factory=set)
    max_side: Set[TableSet] = field(default_factory=set)
    aux: Set[TableSet] = field(default_factory=set)
    from_sets: List[TableSet] = field(default_factory=list)
    probes: int = 0
    shortcuts: int = 0
    heuristic_common: Set[str] = field(default_factory=set)

    def to_record(self) -> dict:
        def fmt(sets):
            return sorted(sorted(s) for s in sets)

        return {
            't_h': sorted(self.t_h), 'common': sorted(self.common), 'aux_all': sorted(self.aux_all),
            'core': fmt(self.core), 'side': fmt(self.side), 'max_side': fmt(self.max_side),
            'aux': fmt(self.aux), 'from_sets': [sorted(s) for s in self.from_sets],
            'probes': self.probes, 'shortcuts': self.shortcuts,
            'heuristic_common': sorted(self.heuristic_common),
        }


def extract_tables_ebe(h: OracleHandle, db: DatabaseState) -> Set[str]:
    """逐表重命名为哑名：调用报解析错误的表属于 T_H"""
    t_h = set()
    for t in db.catalog.table_names:
        token = rename_table(db, t)
        outcome = h.invoke(db)
        db.revert(token)
        if isinstance(outcome, EngineError):
            if not outcome.is_resolution:
                raise OracleFailure(f"EbE 检查表 {t} 时黑盒失败 [{outcome.kind}] {outcome.message}")
            t_h.add(t)
    logger.info(f"EbE 识别参与表 T_H = {sorted(t_h)}")
    return t_h


def extract_common_tables(h: OracleHandle, db: DatabaseState, t_h: Set[str],
                          r_h: Optional[ResultSet] = None,
                          empty: Optional[ResultSet] = None) -> Tuple[Set[str], Set[str]]:
    """
    清空单表后结果不再 FIT 的表为公共表；
    若清空后仍为 FIT 但出现 R_H 中没有的 FIT 行，该表位于外连接补空侧，同样记为公共表（启发式）

    Returns:
        (COMMON, 启发式判定的表)
    """
    common, heuristic = set(), set()
    known = set(r_h.rows) if r_h is not None else None
    for t in sorted(t_h):
        token = void_tables(db, [t])
        outcome = h.invoke(db)
        db.revert(token)
        if isinstance(outcome, EngineError):
            raise OracleFailure(f"EbV 检查表 {t} 时黑盒失败 [{outcome.kind}] {outcome.message}")
        if not is_fit(outcome, empty):
            common.add(t)
        elif known is not None and any(all(v is not None for v in row) and row not in known
                                       for row in outcome.rows):
            logger.warning(f"清空 {t} 后出现新的 FIT 行，按外连接补空侧记为公共表（启发式）")
            common.add(t)
            heuristic.add(t)
    logger.info(f"EbV 识别公共表 COMMON = {sorted(common)}")
    return common, heuristic


def _lattice(aux_all: TableSet) -> List[TableSet]:
    """除空集与全集外的幂集，按大小升序、同大小按表名字典序"""
    members = sorted(aux_all)
    out = []
    for size in range(1, len(members)):
        for combo in combinations(members, size):
            out.append(frozenset(combo))
    return out


def assign_tables(h: OracleHandle, db: DatabaseState, aux_all: Set[str], common: Set[str],
                  max_aux_tables: int = 12, t_h: Optional[Set[str]] = None,
                  empty: Optional[ResultSet] = None) -> UnionTableFamily:
    """
    把辅助表分配到各子查询

    Args:
        aux_all: T_H − COMMON
        common: 公共表
        max_aux_tables: 辅助表数量上限
        empty: 空输入上的 FIT 结果（标量聚合），FIT 判定随之改为“结果与之不同”

    Returns:
        幂集格分类与每个子查询的 FROM 集合
    """
    aux_all = frozenset(aux_all)
    common = frozenset(common)
    full = frozenset(t_h) if t_h is not None else aux_all | common
    family = UnionTableFamily(full, common, aux_all)
    if len(aux_all) <= 1:
        family.aux = {aux_all} if aux_all else set()
        family.from_sets = [full]
        logger.info("辅助表不超过 1 张，按单个子查询处理")
        return family
    if len(aux_all) > max_aux_tables:
        raise ScopeError(f"辅助表 {len(aux_all)} 张超过上限 {max_aux_tables}")

    before = db.digest()
    for u in _lattice(aux_all):
        if any(c < u for c in family.core):
            family.core.add(u)
            family.shortcuts += 1
            continue
        token = void_tables(db, u)
        outcome = h.invoke(db)
        db.revert(token)
        family.probes += 1
        if isinstance(outcome, EngineError):
            raise OracleFailure(f"清空 {sorted(u)} 时黑盒失败 [{outcome.kind}] {outcome.message}")
        if is_fit(outcome, empty):
            family.side.add(u)
        else:
            family.core.add(u)
    if db.digest() != before:
        raise AssumptionViolation("幂集格分类后数据库未恢复原状")

    def is_core(s: TableSet) -> bool:
        return s == aux_all or s in family.core

    for s in family.side:
        if all(is_core(s | {a}) for a in aux_all - s):
            family.max_side.add(s)
    if not family.max_side:
        raise AssumptionViolation("MaxSideTables 为空：各子查询不能独立产生 FIT 结果")
    family.aux = {aux_all - s for s in family.max_side}
    for a in family.aux:
        for b in family.aux:
            if a != b and (a < b or b < a):
                raise AssumptionViolation(f"子查询辅助表集合存在包含关系: {sorted(a)} / {sorted(b)}")
    family.from_sets = sorted((a | common for a in family.aux), key=lambda s: sorted(s))
    logger.info(f"分配完成: {len(family.from_sets)} 个子查询, FROM 集合 "
                f"{[sorted(s) for s in family.from_sets]}，调用 {family.probes} 次（剪枝 {family.shortcuts}）")
    return family


def isolate_subquery(db: DatabaseState, from_set: TableSet, t_h: Set[str]) -> UndoToken:
    """清空 FROM 集合之外的参与表，只留下一个子查询能产生 FIT 行"""
    return void_tables(db, set(t_h) - set(from_set))


def check_upward_closure(family: UnionTableFamily) -> bool:
    lattice = _lattice(family.aux_all)
    for c in family.core:
        for u in lattice:
            if c < u and u not in family.core:
                return False
    return True
