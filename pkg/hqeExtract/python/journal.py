#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
会话日志模块
以 JSON Lines 追加记录变更、黑盒调用与各阶段事件，并支持从初始数据库重放
"""

import json
import logging
import time
from typing import Any, Callable, Dict, List, Optional

from pydantic import BaseModel, ConfigDict

from hqe_errors import DataLoadError
from relcore import DatabaseState, UndoToken

logger = logging.getLogger(__name__)

RECORD_KINDS = ('mutation', 'invoke', 'union_report', 'in_list_round', 'llm_round', 'phase',
                'minimize', 'checker_trial', 'report')


class JournalRecord(BaseModel):
    """日志记录；各类记录的字段通过 extra 保存"""

    model_config = ConfigDict(extra='allow')

    seq: int
    kind: str
    ts: float
    phase: Optional[str] = None

    def field(self, name: str, default: Any = None) -> Any:
        return (self.model_extra or {}).get(name, default)


class SessionJournal:
    """只追加的会话日志"""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[JournalRecord] = []
        self.phase = 'xre'
        self._fh = open(path, 'a', encoding='utf-8') if path else None

    def record(self, kind: str, **fields) -> JournalRecord:
        if kind not in RECORD_KINDS:
            raise ValueError(f"未知日志记录类型: {kind}")
        rec = JournalRecord(seq=len(self.records), kind=kind, ts=time.time(), phase=self.phase, **fields)
        self.records.append(rec)
        if self._fh is not None:
            self._fh.write(rec.model_dump_json() + '\n')
            self._fh.flush()
        return rec

    def set_phase(self, phase: str):
        self.phase = phase
        self.record('phase', name=phase)

    def of_kind(self, kind: str) -> List[JournalRecord]:
        return [r for r in self.records if r.kind == kind]

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def load_journal(path: str) -> List[JournalRecord]:
    records = []
    line_no = 0
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if line:
                    records.append(JournalRecord.model_validate(json.loads(line)))
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"无法读取日志 {path}（第 {line_no} 行附近）: {e}")
    logger.info(f"读取日志 {path}: {len(records)} 条记录")
    return records


class ReplayReport(BaseModel):
    invocations: int = 0
    matched: int = 0
    state_mismatches: List[int] = []
    result_mismatches: List[int] = []
    skipped: List[int] = []

    @property
    def ok(self) -> bool:
        return not self.state_mismatches and not self.result_mismatches


def replay_records(records: List[JournalRecord], base: DatabaseState,
                   invoke: Callable[[DatabaseState], Any],
                   regenerate: Optional[Callable[[Dict[str, Any]], DatabaseState]] = None) -> ReplayReport:
    """
    按时间顺序重建每个带标签的数据库状态并重新调用黑盒，核对结果摘要

    Args:
        records: 日志记录
        base: 新加载的初始数据库 D_I
        invoke: 调用函数，返回结果集或引擎错误
        regenerate: 由 generate 记录重建随机数据库的函数

    Returns:
        重放报告
    """
    states: Dict[str, DatabaseState] = {base.label: base}
    tokens: Dict[str, Dict[int, UndoToken]] = {base.label: {}}
    report = ReplayReport()
    for rec in records:
        if rec.kind == 'mutation':
            op = rec.field('op')
            label = rec.field('state')
            args = rec.field('args') or {}
            if op == 'derive':
                source = states[args['source']]
                keep = {k: v for k, v in (args.get('keep') or {}).items()}
                states[label] = source.derive(keep=keep or None, label=label)
                states[label].journal = None
                tokens[label] = {}
                continue
            if op == 'generate':
                if regenerate is None:
                    logger.warning(f"日志包含随机数据库 {label}，但未提供重建函数")
                    continue
                states[label] = regenerate(args)
                tokens[label] = {}
                continue
            state = states.get(label)
            if state is None:
                logger.warning(f"重放时找不到状态 {label}，跳过记录 {rec.seq}")
                report.skipped.append(rec.seq)
                continue
            if op in ('revert', 'commit'):
                token = tokens[label].pop(args['token'])
                if op == 'revert':
                    state.revert(token)
                else:
                    state.commit(token)
                continue
            token = state.apply(op, **_decode_args(state, op, args))
            tokens[label][token.token_id] = token
        elif rec.kind == 'invoke':
            label = rec.field('state')
            state = states.get(label)
            report.invocations += 1
            if state is None:
                report.skipped.append(rec.seq)
                continue
            if state.digest() != rec.field('state_digest'):
                report.state_mismatches.append(rec.seq)
                continue
            outcome = invoke(state)
            digest = outcome.digest() if hasattr(outcome, 'digest') else None
            if digest == rec.field('result_digest'):
                report.matched += 1
            else:
                report.result_mismatches.append(rec.seq)
    logger.info(f"重放完成: {report.matched}/{report.invocations} 次调用摘要一致")
    return report


def _decode_args(state: DatabaseState, op: str, args: Dict[str, Any]) -> Dict[str, Any]:
    if op == 'set':
        domain = state.catalog.domain(args['table'], args['column'])
        return {**args, 'value': domain.coerce(args['value'])}
    if op == 'rows':
        return {'table': args['table'], 'rows': state.decode_rows(args['table'], args['rows'])}
    return dict(args)
