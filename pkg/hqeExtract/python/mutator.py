#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据库变更工具模块
清空、重命名、定点改值、快照回滚，以及保持 FIT 的递归折半最小化
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set

from hqe_errors import MinimizationFailure, OracleFailure
from relcore import DatabaseState, FitClass, ResultSet, UndoToken, classify_fit

logger = logging.getLogger(__name__)

DUMMY_PREFIX = 'hqe_dummy_'


def void_tables(db: DatabaseState, tables: Iterable[str]) -> UndoToken:
    """清空一组表（保留模式）"""
    return db.apply('void', tables=sorted(set(tables)))


def fresh_dummy_name(db: DatabaseState, table: str) -> str:
    taken = set(db.catalog.tables) | set(db.rename_overlay.values())
    name = f"{DUMMY_PREFIX}{table}"
    n = 1
    while name in taken:
        n += 1
        name = f"{DUMMY_PREFIX}{table}_{n}"
    return name


def rename_table(db: DatabaseState, table: str, dummy: Optional[str] = None) -> UndoToken:
    """把表重命名为哑名，回滚前对原表名的解析都会失败"""
    return db.apply('rename', table=table, dummy=dummy or fresh_dummy_name(db, table))


def set_value(db: DatabaseState, table: str, column: str, value: Any, row: int = 0) -> UndoToken:
    return db.apply('set', table=table, column=column, value=value, row=row)


def replace_rows(db: DatabaseState, table: str, rows: Sequence[Sequence[Any]]) -> UndoToken:
    return db.apply('rows', table=table, rows=rows)


def keep_rows(db: DatabaseState, table: str, indices: Sequence[int]) -> UndoToken:
    return db.apply('keep', table=table, indices=list(indices))


def revert(db: DatabaseState, token: UndoToken):
    db.revert(token)


@contextmanager
def applied(db: DatabaseState, op: str, **args) -> Iterator[UndoToken]:
    """在 with 块内临时应用一次变更，退出时回滚"""
    token = db.apply(op, **args)
    try:
        yield token
    finally:
        db.revert(token)


def is_fit(outcome, empty: Optional[ResultSet] = None) -> bool:
    """FIT；给出空输入上的结果（标量聚合）时，还要求结果与之不同"""
    if not (isinstance(outcome, ResultSet) and classify_fit(outcome) == FitClass.FIT):
        return False
    return empty is None or outcome.multiset() != empty.multiset()


def empty_input_result(h, db: DatabaseState, tables: Iterable[str]) -> Optional[ResultSet]:
    """
    清空全部参与表后调用黑盒；结果仍为 FIT 说明是不分组的聚合查询（如 COUNT(*) 返回 0）

    Returns:
        空输入上的 FIT 结果；普通查询返回 None
    """
    token = void_tables(db, tables)
    try:
        outcome = h.invoke(db)
    finally:
        db.revert(token)
    if not isinstance(outcome, ResultSet):
        raise OracleFailure(f"清空全部参与表时黑盒调用失败 [{outcome.kind}] {outcome.message}")
    if classify_fit(outcome) != FitClass.FIT:
        return None
    logger.info(f"空输入上的结果仍为 FIT {outcome.rows}，按标量聚合处理：以与之不同作为保持条件")
    return outcome


@dataclass
class HalvingStep:
    table: str
    before: int
    after: int
    how: str


@dataclass
class MinimizationReport:
    trace: List[HalvingStep] = field(default_factory=list)
    optional_tables: Set[str] = field(default_factory=set)
    matched_pairs: Dict[str, bool] = field(default_factory=dict)
    probes: int = 0


class Minimizer:
    """
    递归折半最小化
    对参与表轮流折半，保留仍为 FIT 的一半；两半都不行时退化为逐行删除
    """

    def __init__(self, h, optional_pair_probes: int = 64, empty: Optional[ResultSet] = None):
        self.h = h
        self.optional_pair_probes = optional_pair_probes
        self.empty = empty
        self.report = MinimizationReport()

    def _probe(self, db: DatabaseState) -> bool:
        self.report.probes += 1
        outcome = self.h.invoke(db)
        if not isinstance(outcome, ResultSet):
            raise OracleFailure(f"最小化过程中黑盒调用失败 [{outcome.kind}] {outcome.message}")
        return is_fit(outcome, self.empty)

    def _try_keep(self, db: DatabaseState, table: str, indices: List[int]) -> bool:
        token = keep_rows(db, table, indices)
        if self._probe(db):
            db.commit(token)
            return True
        db.revert(token)
        return False

    def _shrink_table(self, db: DatabaseState, table: str) -> bool:
        n = db.row_count(table)
        if n <= 1:
            return False
        mid = n // 2
        for how, indices in (('first-half', list(range(mid))), ('second-half', list(range(mid, n)))):
            if self._try_keep(db, table, indices):
                self.report.trace.append(HalvingStep(table, n, len(indices), how))
                return True
        for i in range(n):
            indices = [j for j in range(n) if j != i]
            if self._try_keep(db, table, indices):
                self.report.trace.append(HalvingStep(table, n, n - 1, 'single-row'))
                return True
        return False

    def run(self, db: DatabaseState, tables: Iterable[str], initial: Optional[ResultSet] = None) -> DatabaseState:
        tables = sorted(tables)
        if initial is not None:
            fit = is_fit(initial, self.empty)
        else:
            fit = self._probe(db)
        if not fit:
            raise MinimizationFailure(f"状态 {db.label} 上的结果不是 FIT，无法最小化")
        d1 = db.derive()
        for name in d1.catalog.table_names:
            if name not in tables and d1.row_count(name) > 0:
                d1.commit(keep_rows(d1, name, []))
        progress = True
        while progress:
            progress = False
            for t in tables:
                if self._shrink_table(d1, t):
                    progress = True
        stuck = [t for t in tables if d1.row_count(t) > 1]
        if stuck:
            raise MinimizationFailure(f"表 {stuck} 无法缩减到单行且保持 FIT")
        empty = [t for t in tables if d1.row_count(t) == 0]
        if empty:
            raise MinimizationFailure(f"表 {empty} 在最小化后为空")
        self._post_check(db, d1, tables)
        d1.annotations['halving_trace'] = [vars(s) for s in self.report.trace]
        d1.annotations['optional_tables'] = sorted(self.report.optional_tables)
        logger.info(f"最小化完成 {d1.label}: {len(tables)} 张表各 1 行，"
                    f"{self.report.probes} 次调用，可选表 {sorted(self.report.optional_tables) or '无'}")
        return d1

    def _post_check(self, source: DatabaseState, d1: DatabaseState, tables: List[str]):
        """删除每张参与表的最后一行必须破坏 FIT；否则该表位于外连接的补空侧"""
        for t in tables:
            token = void_tables(d1, [t])
            still_fit = self._probe(d1)
            d1.revert(token)
            if still_fit:
                logger.warning(f"表 {t} 的最后一行可删除而结果仍为 FIT，按外连接补空侧处理")
                self.report.optional_tables.add(t)
        for t in sorted(self.report.optional_tables):
            self.report.matched_pairs[t] = self._match_pair(source, d1, t, tables)

    def _fk_links(self, d1: DatabaseState, table: str, tables: List[str]):
        """(本表列, 对端表, 对端列)"""
        links = []
        for child, ccol, parent, pcol in d1.catalog.fk_edges():
            if child == table and parent in tables and parent != table:
                links.append((ccol, parent, pcol))
            elif parent == table and child in tables and child != table:
                links.append((pcol, child, ccol))
        return links

    def _joins(self, d1: DatabaseState, table: str, links) -> bool:
        schema = d1.catalog.table(table)
        row = d1.raw_rows(table)[0]
        for col, other, ocol in links:
            orow = d1.raw_rows(other)[0]
            if row[schema.index_of(col)] != orow[d1.catalog.table(other).index_of(ocol)]:
                return False
        return True

    def _match_pair(self, source: DatabaseState, d1: DatabaseState, table: str, tables: List[str]) -> bool:
        """为补空侧表重新挑选与对端外键匹配的一对行，使 D¹ 成为匹配对"""
        links = self._fk_links(d1, table, tables)
        if not links:
            return False
        if self._joins(d1, table, links):
            return True
        col, other, ocol = links[0]
        schema, oschema = d1.catalog.table(table), d1.catalog.table(other)
        ci, oi = schema.index_of(col), oschema.index_of(ocol)
        current_other = d1.raw_rows(other)[0]
        candidates = []
        for r in source.table_rows(table):
            if r[ci] == current_other[oi]:
                candidates.append((None, r))
        for orow in source.table_rows(other):
            for r in source.table_rows(table):
                if r[ci] == orow[oi]:
                    candidates.append((orow, r))
                    break
        probes = 0
        for orow, r in candidates:
            if probes >= self.optional_pair_probes:
                break
            probes += 1
            tokens = []
            if orow is not None:
                tokens.append(replace_rows(d1, other, [orow]))
            tokens.append(replace_rows(d1, table, [r]))
            if self._probe(d1) and self._joins(d1, table, links):
                for tok in reversed(tokens):
                    d1.commit(tok)
                logger.info(f"补空侧表 {table} 已重选为与 {other} 匹配的行")
                return True
            for tok in reversed(tokens):
                d1.revert(tok)
        logger.warning(f"未能在 {self.optional_pair_probes} 次尝试内为 {table} 找到匹配行")
        return False


def minimize(db: DatabaseState, h, tables: Iterable[str], initial: Optional[ResultSet] = None,
             optional_pair_probes: int = 64, empty: Optional[ResultSet] = None) -> DatabaseState:
    """
    最小化数据库得到 D¹

    Args:
        db: 结果为 FIT 的数据库状态
        h: 黑盒句柄
        tables: 参与表 T_H（或某个分支的 FROM 集合）
        initial: 已知的 db 上的结果，避免重复调用
        empty: 空输入上的 FIT 结果（标量聚合），保持条件随之改为“结果与之不同”

    Returns:
        每张参与表恰好一行且结果为 FIT 的派生状态
    """
    return Minimizer(h, optional_pair_probes, empty).run(db, tables, initial)
