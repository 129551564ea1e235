#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
XRE 流水线模块
EbE → EbV → 幂集格分配 → 每个子查询隔离、最小化、谓词与尾部子句抽取 → 拼装种子查询，
并生成结构化的抽取报告
"""

import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from hqe_config import LimitsConfig
from hqe_errors import AssumptionViolation, SqlError
from minisql import Query, RenderedSQL
from mutator import empty_input_result, is_fit, minimize
from oracle import OracleHandle
from relcore import DatabaseState, ResultSet
from sql_executor import execute
from xre_pred import BlockSpec, BranchContext, assemble_seed, extract_branch_predicates
from xre_tail import extract_tail_clauses
from xre_union import UnionTableFamily, assign_tables, extract_common_tables, extract_tables_ebe, isolate_subquery

logger = logging.getLogger(__name__)


class BranchReport(BaseModel):
    from_set: List[str]
    d1_label: str
    optional_tables: List[str] = []
    halving_steps: int = 0
    svi: Dict[str, str] = {}
    atoms: List[Dict[str, str]] = []
    in_list_rounds: Dict[str, int] = {}
    grouped: bool = False
    limit: Optional[int] = None
    heuristics: List[str] = []
    ambiguities: List[str] = []
    probes: int = 0


class ExtractionReport(BaseModel):
    """抽取报告（JSON）"""

    t_h: List[str]
    common: List[str]
    heuristic_common: List[str] = []
    union: Dict[str, Any] = {}
    branches: List[BranchReport] = []
    seed_sql: str = ''
    seed_canonical: str = ''
    seed_digest: str = ''
    r_h_rows: int = 0
    r_s_rows: int = 0
    r_h_digest: str = ''
    r_s_digest: str = ''
    seed_matches: bool = False
    seed_error: Optional[str] = None
    isolation_consistent: Optional[bool] = None
    invocations: int = 0
    elapsed: float = 0.0
    heuristics: List[str] = Field(default_factory=list)
    ambiguities: List[str] = Field(default_factory=list)


@dataclass
class XreOutcome:
    seed: Query
    rendered: RenderedSQL
    r_h: ResultSet
    r_s: ResultSet
    family: UnionTableFamily
    blocks: List[BlockSpec]
    report: ExtractionReport
    group_columns: List[Any] = field(default_factory=list)


def extract_branch(h: OracleHandle, db: DatabaseState, from_set, limits: LimitsConfig,
                   empty: Optional[ResultSet] = None) -> Tuple[BlockSpec, BranchReport]:
    """
    在已隔离的 D_I 上抽取一个平坦子查询

    Returns:
        (分支子句, 分支报告)
    """
    tables = sorted(from_set)
    r_i = h.invoke_result(db)
    d1 = minimize(db, h, tables, initial=r_i, optional_pair_probes=limits.optional_pair_probes, empty=empty)
    if db.journal is not None:
        db.journal.record('minimize', state=d1.label, tables=tables,
                          steps=len(d1.annotations.get('halving_trace', [])),
                          optional_tables=d1.annotations.get('optional_tables', []))
    ctx = BranchContext.for_d1(h, d1, source=db, tables=tables, limits=limits, empty=empty)
    preds = extract_branch_predicates(ctx)
    tail = extract_tail_clauses(ctx, preds)
    block = BlockSpec(tables, preds.atoms, tail.select, tail.group_by, tail.order_by, tail.limit)
    report = BranchReport(
        from_set=tables,
        d1_label=d1.label,
        optional_tables=sorted(ctx.optional_tables),
        halving_steps=len(d1.annotations.get('halving_trace', [])),
        svi={str(k): v.describe() for k, v in sorted(preds.svi.items())},
        atoms=[{'atom': a.describe(), 'provenance': a.provenance} for a in preds.atoms],
        in_list_rounds={str(k): v for k, v in ctx.in_list_rounds.items()},
        grouped=tail.grouped,
        limit=tail.limit,
        heuristics=list(ctx.heuristics),
        ambiguities=list(ctx.ambiguities) + list(tail.ambiguities),
        probes=ctx.probes,
    )
    return block, report


def run_xre(h: OracleHandle, db: DatabaseState, limits: Optional[LimitsConfig] = None) -> XreOutcome:
    """
    反向工程阶段：从黑盒与 D_I 得到种子查询 Q_S

    Args:
        h: 黑盒句柄
        db: 初始数据库 D_I（结束时内容不变）
        limits: 各类上限

    Returns:
        种子查询、R_H / R_S 与抽取报告
    """
    limits = limits or LimitsConfig()
    started = time.perf_counter()
    invocations_before = h.invocation_count
    h.phase = 'xre'
    before = db.digest()

    r_h = h.invoke_result(db)
    if not is_fit(r_h):
        raise AssumptionViolation(f"D_I 上的结果 R_H 不是 FIT（{r_h.fit_class.value}），无法抽取")
    t_h = extract_tables_ebe(h, db)
    if not t_h:
        raise AssumptionViolation("EbE 未识别出任何参与表")
    empty = empty_input_result(h, db, t_h)
    if empty is not None and not is_fit(r_h, empty):
        raise AssumptionViolation(f"R_H 与空输入上的结果 {empty.rows} 相同，无法抽取")
    common, heuristic = extract_common_tables(h, db, t_h, r_h, empty)
    family = assign_tables(h, db, t_h - common, common, limits.max_aux_tables, t_h, empty)
    family.heuristic_common = set(heuristic)
    if db.journal is not None:
        db.journal.record('union_report', **family.to_record())

    blocks, branch_reports, partials = [], [], []
    for fs in family.from_sets:
        logger.info(f"抽取子查询 FROM {sorted(fs)}")
        token = isolate_subquery(db, fs, t_h)
        try:
            partials.append(h.invoke_result(db))
            block, branch_report = extract_branch(h, db, fs, limits, empty)
        finally:
            db.revert(token)
        blocks.append(block)
        branch_reports.append(branch_report)

    if db.digest() != before:
        raise AssumptionViolation("XRE 结束后 D_I 未恢复原状")
    seed, rendered = assemble_seed(blocks, db.catalog)
    seed_error = None
    try:
        r_s = execute(seed, db)
    except SqlError as e:
        seed_error = str(e)
        logger.error(f"种子查询在 D_I 上执行失败: {e}")
        r_s = ResultSet(r_h.columns, [])

    isolation = None
    if not any(b.grouped for b in branch_reports):
        union = Counter()
        for r in partials:
            union.update(r.multiset())
        isolation = union == r_h.multiset()
        if not isolation:
            logger.warning("各子查询隔离结果之并与 R_H 不一致")

    report = ExtractionReport(
        t_h=sorted(t_h), common=sorted(common), heuristic_common=sorted(heuristic),
        union=family.to_record(), branches=branch_reports,
        seed_sql=rendered.text, seed_canonical=rendered.canonical_text, seed_digest=rendered.digest,
        r_h_rows=len(r_h), r_s_rows=len(r_s), r_h_digest=r_h.digest(), r_s_digest=r_s.digest(),
        seed_matches=seed_error is None and r_s.multiset() == r_h.multiset(), seed_error=seed_error,
        isolation_consistent=isolation,
        invocations=h.invocation_count - invocations_before,
        elapsed=round(time.perf_counter() - started, 3),
        heuristics=[f"EbV: {t} 按外连接补空侧记为公共表" for t in sorted(heuristic)]
        + [x for b in branch_reports for x in b.heuristics],
        ambiguities=[x for b in branch_reports for x in b.ambiguities],
    )
    group_columns = [g for b in blocks for g in b.group_by]
    logger.info(f"XRE 完成: |R_H| = {report.r_h_rows}, |R_S| = {report.r_s_rows}, "
                f"种子{'与' if report.seed_matches else '不与'} R_H 一致，调用 {report.invocations} 次，"
                f"耗时 {report.elapsed}s")
    return XreOutcome(seed, rendered, r_h, r_s, family, blocks, report, group_columns)
