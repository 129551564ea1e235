#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
XFE 前向工程模块
以种子查询为锚点驱动大模型的提示-反馈循环：
IP → 解析 → 对齐检查（CCP）→ 在 D_I 上执行 → 与 R_H 比较（RCP）
"""

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from hqe_config import LimitsConfig
from hqe_errors import LlmTransportError, SqlError
from llm_client import extract_sql
from minisql import Query, RenderedSQL, parse_sql
from oracle import OracleHandle
from relcore import DatabaseState, ResultSet
from sql_executor import execute
from xfe_alignment import Violation, check_alignment
from xfe_prompts import ClauseFix, PromptBundle, build_feedback_prompt, build_initial_prompt

logger = logging.getLogger(__name__)


class Verdict(str, Enum):
    RESULT_MATCH = 'result_match'
    CARDINALITY_MISMATCH = 'result_mismatch_cardinality'
    CONTENT_MISMATCH = 'result_mismatch_content'
    MISALIGNED = 'misaligned'
    PARSE_ERROR = 'parse_error'
    DUPLICATE = 'duplicate'


class SynthesisStatus(str, Enum):
    SUCCESS = 'success'
    FALLBACK = 'fallback'
    FAILURE = 'failure'


@dataclass
class SynthesisCandidate:
    attempt: int
    sql: str
    query: Optional[Query] = None
    digest: Optional[str] = None
    verdict: Optional[Verdict] = None
    violations: List[Violation] = field(default_factory=list)
    detail: str = ''
    rows: Optional[int] = None


@dataclass
class SynthesisOutcome:
    status: SynthesisStatus
    reason: str = ''
    query: Optional[Query] = None
    rendered: Optional[RenderedSQL] = None
    rounds: int = 0
    prompt_sequence: List[str] = field(default_factory=list)
    candidates: List[SynthesisCandidate] = field(default_factory=list)

    @property
    def last_query(self) -> Optional[Query]:
        """最后一个可解析的候选，作为组合合成的嵌套骨架"""
        for cand in reversed(self.candidates):
            if cand.query is not None:
                return cand.query
        return None


def is_ordered(q: Query) -> bool:
    return bool(q.order_by) or (not q.is_union and bool(q.branches[0].order_by))


def results_match(r_e: ResultSet, r_h: ResultSet, ordered: bool = False) -> bool:
    """多重集相等；有序时还要求行序一致"""
    if ordered:
        return r_e.rows == r_h.rows
    return r_e.multiset() == r_h.multiset()


def _save_prompt(prompts_dir: Optional[str], round_no: int, kind: str, prompt: str, reply: str):
    if not prompts_dir:
        return
    os.makedirs(prompts_dir, exist_ok=True)
    with open(os.path.join(prompts_dir, f"round-{round_no:02d}-{kind}.txt"), 'w', encoding='utf-8') as f:
        f.write(prompt)
    with open(os.path.join(prompts_dir, f"round-{round_no:02d}-reply.txt"), 'w', encoding='utf-8') as f:
        f.write(reply)


def refine_loop(client, h: OracleHandle, db: DatabaseState, seed: Query, bundle: PromptBundle,
                limits: Optional[LimitsConfig] = None, r_h: Optional[ResultSet] = None,
                prompts_dir: Optional[str] = None) -> SynthesisOutcome:
    """
    提示-反馈循环

    Args:
        client: 对话客户端（complete(messages, round_no) -> str）
        h: 黑盒句柄（R_H 未给出时调用一次）
        db: 初始数据库 D_I
        seed: 种子查询 Q_S
        bundle: 初始提示槽位
        limits: rcp_threshold / max_rounds
        r_h: 黑盒在 D_I 上的结果
        prompts_dir: 保存每轮提示与回复的目录

    Returns:
        SUCCESS（结果一致）、FALLBACK（重复或超过试验阈值）或 FAILURE（接口失败）
    """
    limits = limits or LimitsConfig()
    h.phase = 'xfe'
    if r_h is None:
        r_h = h.invoke_result(db)
    ordered = is_ordered(seed)
    journal = db.journal
    outcome = SynthesisOutcome(SynthesisStatus.FAILURE)

    prompt, kind = build_initial_prompt(bundle), 'IP'
    messages: List[Dict[str, str]] = [{'role': 'user', 'content': prompt}]
    seen: Dict[str, int] = {}
    trials = 0

    for round_no in range(1, limits.max_rounds + 1):
        outcome.rounds = round_no
        outcome.prompt_sequence.append(kind)
        try:
            reply = client.complete(messages, round_no)
        except LlmTransportError as e:
            logger.error(f"大模型调用失败: {e}")
            outcome.reason = 'transport'
            return outcome
        messages.append({'role': 'assistant', 'content': reply})
        _save_prompt(prompts_dir, round_no, kind, prompt, reply)

        cand = SynthesisCandidate(round_no, extract_sql(reply))
        outcome.candidates.append(cand)
        fixes: List[ClauseFix] = []
        try:
            cand.query = parse_sql(cand.sql)
        except SqlError as e:
            cand.verdict, cand.detail = Verdict.PARSE_ERROR, str(e)
            fixes = [ClauseFix('G1', 'syntax', f"The SQL does not parse: {e.message}.")]
            trials += 1
        else:
            rendered = RenderedSQL.of(cand.query)
            cand.digest = rendered.digest
            if cand.digest in seen:
                cand.verdict = Verdict.DUPLICATE
                cand.detail = f"与第 {seen[cand.digest]} 轮相同"
            else:
                seen[cand.digest] = round_no
                cand.violations = check_alignment(cand.query, seed, db.catalog)
                if cand.violations:
                    cand.verdict = Verdict.MISALIGNED
                    fixes = list(cand.violations)
                else:
                    try:
                        r_e = execute(cand.query, db)
                    except SqlError as e:
                        cand.verdict, cand.detail = Verdict.PARSE_ERROR, str(e)
                        fixes = [ClauseFix('G1', 'query', f"The SQL fails to execute: {e.message}.")]
                        trials += 1
                    else:
                        cand.rows = len(r_e)
                        if results_match(r_e, r_h, ordered):
                            cand.verdict = Verdict.RESULT_MATCH
                        elif len(r_e) != len(r_h):
                            cand.verdict = Verdict.CARDINALITY_MISMATCH
                            trials += 1
                        else:
                            cand.verdict = Verdict.CONTENT_MISMATCH
                            trials += 1

        if journal is not None:
            journal.record('llm_round', round=round_no, prompt_kind=kind, prompt=prompt, reply=reply,
                           sql=cand.sql, digest=cand.digest, verdict=cand.verdict.value,
                           violations=[f"{v.guideline} {v.clause}" for v in cand.violations],
                           rows=cand.rows, detail=cand.detail)
        logger.info(f"第 {round_no} 轮（{kind}）: {cand.verdict.value}"
                    + (f"，{cand.rows} 行 / 期望 {len(r_h)} 行" if cand.rows is not None else ''))

        if cand.verdict is Verdict.RESULT_MATCH:
            outcome.status = SynthesisStatus.SUCCESS
            outcome.query = cand.query
            outcome.rendered = RenderedSQL.of(cand.query)
            logger.info(f"XFE 成功，提示序列 {', '.join(outcome.prompt_sequence)}")
            return outcome
        if cand.verdict is Verdict.DUPLICATE:
            outcome.status, outcome.reason = SynthesisStatus.FALLBACK, 'duplicate'
            logger.warning("大模型重复了先前的错误查询，转入组合合成")
            return outcome
        if trials >= limits.rcp_threshold:
            outcome.status, outcome.reason = SynthesisStatus.FALLBACK, 'threshold'
            logger.warning(f"失败试验达到阈值 {limits.rcp_threshold}，转入组合合成")
            return outcome

        if fixes:
            kind = 'CCP'
            prompt = build_feedback_prompt(kind, cand.sql, fixes=fixes)
        elif cand.verdict is Verdict.CARDINALITY_MISMATCH:
            kind = 'RCP.v1'
            prompt = build_feedback_prompt(kind, cand.sql, r_e_rows=cand.rows, r_h_rows=len(r_h))
        else:
            kind = 'RCP.v2'
            prompt = build_feedback_prompt(kind, cand.sql)
        messages.append({'role': 'user', 'content': prompt})

    outcome.status, outcome.reason = SynthesisStatus.FALLBACK, 'max_rounds'
    logger.warning(f"对话轮次达到上限 {limits.max_rounds}，转入组合合成")
    return outcome
