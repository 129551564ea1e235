#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
XFE 提示词模块
合成准则、初始提示（IP）、结果修正提示（RCP.v1 / RCP.v2）与子句修正提示（CCP）
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from hqe_errors import PromptError

logger = logging.getLogger(__name__)

ROLE_LINE = "You are an expert in formulating SQL queries from high-level textual business descriptions."

# (编号, 分组, 文本)；顺序固定
GUIDELINES: Tuple[Tuple[str, str, str], ...] = (
    ('G1', 'Basic Guidelines', "Do not formulate syntactically incorrect SQL."),
    ('G2', 'Basic Guidelines', "Do not repeat any previously formulated incorrect SQL."),
    ('G3', 'Basic Guidelines', "Do not use redundant join conditions or redundant nesting."),
    ('G4', 'Basic Guidelines', "Do not use any predicates with place holder parameters."),
    ('G5', 'Guidelines to align synthesis with the seed query',
     "Strictly use the tables given in the seed query."),
    ('G6', 'Guidelines to align synthesis with the seed query',
     "If the seed query has a multi-instance table in its FROM clause, keep all the table instances in your query."),
    ('G7', 'Guidelines to align synthesis with the seed query',
     "Do not use join predicates absent from the seed query."),
    ('G8', 'Guidelines to align synthesis with the seed query',
     "Strictly reuse the order, attribute dependencies, and aliases of the projections from the seed query."),
    ('G9', 'Guidelines to align synthesis with the description',
     "Validate all the predicates in the seed query against the description. "
     "Include all the valid predicates in your query."),
    ('G10', 'Guidelines to align synthesis with the description',
     "For the attributes in the invalid filter predicates, validate their use from the description."),
    ('G11', 'Guidelines to align synthesis with the description',
     "A semi-join, implying at least one match, maybe incorrectly present as an equi-join in the seed query."),
    ('G12', 'Guidelines to synthesize compact and meaningful queries',
     "A subquery used more than once should be a CTE with alias."),
    ('G13', 'Guidelines to synthesize compact and meaningful queries',
     "A subquery may have at most one COUNT() aggregation."),
    ('G14', 'Guidelines to address result mismatch',
     "If the seed result has more rows than the actual result, consider performing UNION ALL before GROUP BY."),
    ('G15', 'Guidelines to address result mismatch',
     "If the seed result has fewer rows as compared to the actual result, consider either adding more "
     "GROUP BY attributes or having more GROUP BY clauses through nestings."),
)

GUIDELINE_TEXT = {gid: text for gid, _, text in GUIDELINES}

PROMPT_KINDS = ('IP', 'RCP.v1', 'RCP.v2', 'CCP')


@dataclass(frozen=True)
class PromptBundle:
    """初始提示的全部槽位"""

    description: str
    schema_ddl: str
    seed_sql: str
    r_h_rows: int
    r_s_rows: int
    guidelines: Tuple[Tuple[str, str, str], ...] = GUIDELINES


@dataclass(frozen=True)
class ClauseFix:
    """一条子句修正要求：违反的准则、子句名与说明"""

    guideline: str
    clause: str
    detail: str = ''


def render_guidelines(guidelines: Sequence[Tuple[str, str, str]] = GUIDELINES) -> str:
    lines = []
    group = None
    for gid, heading, text in guidelines:
        if heading != group:
            lines.append(f"{heading}:")
            group = heading
        lines.append(f"{gid}. {text}")
    return '\n'.join(lines)


def _require(value, slot: str):
    if value is None or (isinstance(value, str) and not value.strip()):
        raise PromptError(f"提示词槽位缺失: {slot}")


def build_initial_prompt(bundle: PromptBundle) -> str:
    """
    构造初始提示 IP：角色说明、描述、模式、种子查询、结果行数、准则

    Args:
        bundle: 槽位集合

    Returns:
        提示文本（同一输入逐字节一致）
    """
    _require(bundle.description, 'description')
    _require(bundle.schema_ddl, 'schema_ddl')
    _require(bundle.seed_sql, 'seed_sql')
    _require(bundle.r_h_rows, 'r_h_rows')
    _require(bundle.r_s_rows, 'r_s_rows')
    return '\n'.join([
        ROLE_LINE,
        f"Formulate SQL query for the following description:\n{bundle.description.strip()}",
        f"Use the following schema to formulate SQL:\n{bundle.schema_ddl.strip()}",
        "Use the following SQL as a seed query. You should refine the seed query to produce the final SQL:\n"
        f"{bundle.seed_sql.strip()}",
        f"The seed query produces {bundle.r_s_rows} rows, whereas the actual result has {bundle.r_h_rows} rows.",
        f"Follow the refinement guidelines mentioned below:\n{render_guidelines(bundle.guidelines)}",
        "Return only the final SQL query.",
    ])


def build_feedback_prompt(kind: str, last_sql: str, r_e_rows: Optional[int] = None,
                          r_h_rows: Optional[int] = None, fixes: Sequence[ClauseFix] = ()) -> str:
    """
    构造反馈提示

    Args:
        kind: RCP.v1（行数不同）| RCP.v2（行数相同内容不同）| CCP（语法错误或与种子不一致）
        last_sql: 上一轮合成的 SQL
        r_e_rows: 合成查询的结果行数（RCP.v1）
        r_h_rows: 真实结果行数（RCP.v1）
        fixes: 需要修正的子句（CCP）

    Returns:
        提示文本
    """
    _require(last_sql, 'last_sql')
    head = f"You formulated the following SQL:\n{last_sql.strip()}"
    if kind == 'RCP.v1':
        _require(r_e_rows, 'r_e_rows')
        _require(r_h_rows, 'r_h_rows')
        return '\n'.join([
            head,
            f"It produces the following number of rows: {r_e_rows}",
            f"Below is the actual result cardinality: {r_h_rows}",
            "The results do not match. Fix the query.",
        ])
    if kind == 'RCP.v2':
        return '\n'.join([head, "Its result does not match with actual result. Fix the query."])
    if kind == 'CCP':
        if not fixes:
            raise PromptError("CCP 至少需要一条子句修正")
        lines = [head]
        for fix in fixes:
            line = f"Fix its {fix.clause} as per the seed query ({fix.guideline})."
            if fix.detail:
                line += f" {fix.detail}"
            lines.append(line)
        return '\n'.join(lines)
    raise PromptError(f"未知提示类型: {kind}")
