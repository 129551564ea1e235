#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
黑盒可执行程序模块
封装隐藏查询，只暴露 invoke(db) -> 结果，负责调用计数与日志；
提供内嵌后端（由 minisql 执行被封装的查询）与外部后端（子进程行协议）
"""

import logging
import os
import queue
import re
import shlex
import shutil
import subprocess
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import List, Optional, Union

import pandas as pd

from hqe_errors import OracleFailure, ResolutionError, SqlError
from journal import SessionJournal
from relcore import DatabaseState, ResultSet, classify_fit, dump_database

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 60.0


@dataclass(frozen=True)
class EngineError:
    """黑盒调用失败；kind 为 resolution | timeout | protocol | execution"""

    kind: str
    message: str

    @property
    def is_resolution(self) -> bool:
        return self.kind == 'resolution'

    def digest(self) -> str:
        return f"error:{self.kind}"


Outcome = Union[ResultSet, EngineError]


class BackendFailure(OracleFailure):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class EmbeddedBackend:
    """内嵌后端：查询文本在构造时解析并封入闭包"""

    def __init__(self, sql_text: str):
        from minisql import parse_sql
        from sql_executor import execute

        sealed = parse_sql(sql_text)

        def run(db: DatabaseState) -> ResultSet:
            return execute(sealed, db)

        self._run = run

    def run(self, db: DatabaseState) -> ResultSet:
        return self._run(db)

    def fork(self) -> 'EmbeddedBackend':
        return self

    def close(self):
        pass


_INT_RE = re.compile(r'^-?\d+$')
_DEC_RE = re.compile(r'^-?\d+\.\d+$')
_DATE_RE = re.compile(r'^\d{4}-\d{2}-\d{2}$')


def type_cell(text: str):
    """外部结果 CSV 的启发式定型：整数、小数、ISO 日期、文本，空串为 NULL"""
    if text == '':
        return None
    if _INT_RE.match(text):
        return int(text)
    if _DEC_RE.match(text):
        return Decimal(text)
    if _DATE_RE.match(text):
        try:
            return date.fromisoformat(text)
        except ValueError:
            return text
    return text


def read_result_csv(path: str) -> ResultSet:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[])
    rows = [tuple(type_cell(v) for v in record) for record in frame.itertuples(index=False)]
    return ResultSet(tuple(frame.columns), rows)


class ExternalBackend:
    """
    外部后端：常驻子进程，按行协议通信
    请求 "RUN <workspace>"，响应 "OK <csv>" 或 "ERR <code> <message>"
    """

    def __init__(self, command: str, timeout: float = DEFAULT_TIMEOUT, workspace_root: Optional[str] = None):
        self.command = command
        self.timeout = timeout
        self.workspace_root = workspace_root
        self._proc: Optional[subprocess.Popen] = None
        self._lines: Optional[queue.Queue] = None

    def _start(self):
        logger.info(f"启动外部黑盒: {self.command}")
        self._proc = subprocess.Popen(shlex.split(self.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      stderr=subprocess.DEVNULL, text=True, encoding='utf-8', bufsize=1)
        self._lines = queue.Queue()
        proc, lines = self._proc, self._lines

        def reader():
            for line in proc.stdout:
                lines.put(line.rstrip('\n'))
            lines.put(None)

        threading.Thread(target=reader, daemon=True).start()

    def _materialize(self, db: DatabaseState) -> str:
        workspace = tempfile.mkdtemp(prefix='hqe-ws-', dir=self.workspace_root)
        dump_database(db, workspace, effective_names=True)
        ddl = db.catalog.to_ddl()
        for original, dummy in db.rename_overlay.items():
            ddl = re.sub(rf'\b(CREATE TABLE|REFERENCES) {re.escape(original)}\b', rf'\1 {dummy}', ddl)
        with open(os.path.join(workspace, 'schema.sql'), 'w', encoding='utf-8') as f:
            f.write(ddl)
        return workspace

    def run(self, db: DatabaseState) -> ResultSet:
        if self._proc is None or self._proc.poll() is not None:
            self._start()
        workspace = self._materialize(db)
        try:
            self._proc.stdin.write(f"RUN {workspace}\n")
            self._proc.stdin.flush()
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                self.close()
                raise BackendFailure('timeout', f"外部黑盒 {self.timeout}s 内无响应")
            if line is None:
                self.close()
                raise BackendFailure('protocol', "外部黑盒意外退出")
            if line.startswith('OK '):
                return read_result_csv(line[3:].strip())
            if line.startswith('ERR '):
                parts = line[4:].split(' ', 1)
                code = parts[0].lower()
                message = parts[1] if len(parts) > 1 else ''
                if code == 'resolution':
                    raise ResolutionError(message)
                raise BackendFailure('execution' if code in ('execution', 'type', 'syntax') else 'protocol', message)
            raise BackendFailure('protocol', f"无法识别的响应: {line[:80]}")
        except (BrokenPipeError, OSError) as e:
            self.close()
            raise BackendFailure('protocol', f"与外部黑盒通信失败: {e}")
        finally:
            shutil.rmtree(workspace, ignore_errors=True)

    def fork(self) -> 'ExternalBackend':
        return ExternalBackend(self.command, self.timeout, self.workspace_root)

    def close(self):
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception as e:
                logger.debug(f"关闭外部黑盒时出错: {e}")
            self._proc = None


@dataclass(frozen=True)
class InvokeEntry:
    generation: int
    state_digest: str
    result_digest: str
    fit: Optional[str]
    elapsed: float


class OracleHandle:
    """黑盒句柄：唯一的公开操作是 invoke"""

    def __init__(self, backend, journal: Optional[SessionJournal] = None):
        self._backend = backend
        self.journal = journal
        self.phase = 'xre'
        self.entries: List[InvokeEntry] = []
        self.phase_counts: Counter = Counter()

    @property
    def invocation_count(self) -> int:
        return len(self.entries)

    def invoke(self, db: DatabaseState) -> Outcome:
        """
        在数据库当前状态上调用隐藏查询

        Returns:
            结果集，或在解析失败 / 超时 / 协议错误时返回 EngineError
        """
        started = time.perf_counter()
        try:
            outcome: Outcome = self._backend.run(db)
        except ResolutionError as e:
            outcome = EngineError('resolution', e.message)
        except BackendFailure as e:
            outcome = EngineError(e.kind, str(e))
        except SqlError as e:
            outcome = EngineError('execution', str(e))
        elapsed = time.perf_counter() - started
        state_digest = db.digest()
        fit = classify_fit(outcome).value if isinstance(outcome, ResultSet) else None
        entry = InvokeEntry(db.generation, state_digest, outcome.digest(), fit, elapsed)
        self.entries.append(entry)
        self.phase_counts[self.phase] += 1
        if self.journal is not None:
            self.journal.record('invoke', state=db.label, generation=db.generation, state_digest=state_digest,
                                result_digest=entry.result_digest, fit=fit, elapsed=round(elapsed, 6),
                                error=outcome.kind if isinstance(outcome, EngineError) else None,
                                invoke_phase=self.phase)
        logger.debug(f"调用黑盒 #{self.invocation_count} 状态 {db.label} -> "
                     f"{fit or outcome.kind}（{elapsed * 1000:.1f} ms）")
        return outcome

    def invoke_result(self, db: DatabaseState) -> ResultSet:
        """调用并要求得到结果集；任何引擎错误都转为 OracleFailure"""
        outcome = self.invoke(db)
        if isinstance(outcome, EngineError):
            raise OracleFailure(f"黑盒调用失败 [{outcome.kind}] {outcome.message}")
        return outcome

    def fork(self, journal: Optional[SessionJournal] = None) -> 'OracleHandle':
        """为并行的检查试验创建独立句柄"""
        return OracleHandle(self._backend.fork(), journal)

    def close(self):
        self._backend.close()


def make_oracle(hidden_sql: Optional[str] = None, command: Optional[str] = None,
                timeout: float = DEFAULT_TIMEOUT, journal: Optional[SessionJournal] = None) -> OracleHandle:
    """按配置构造黑盒句柄：外部命令优先于内嵌查询"""
    if command:
        return OracleHandle(ExternalBackend(command, timeout), journal)
    if hidden_sql is None:
        raise OracleFailure("未配置黑盒：需要隐藏查询文件或外部命令")
    return OracleHandle(EmbeddedBackend(hidden_sql), journal)
