#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
会话编排模块
加载配置与数据，依次运行 XRE → XFE（含组合合成回退）→ 结果等价检查，
在 session-<时间戳>/ 目录下写出日志、种子 / 最终 SQL、提示词与报告，并支持日志重放
"""

import logging
import os
import sys
import time
from datetime import datetime
from typing import Dict, List, Optional

import colorlog
from pydantic import BaseModel, Field

from checker import CheckerVerdict, gen_random_db, regenerate_db, result_equivalent
from combinatorial import combinatorial_synthesis
from hqe_config import HqeConfig
from hqe_errors import ConfigError
from journal import ReplayReport, SessionJournal, load_journal, replay_records
from llm_client import make_client
from minisql import Query, RenderedSQL, parse_sql
from oracle import OracleHandle, make_oracle
from relcore import DatabaseState, dump_database, load_database, load_domain_sidecar, parse_ddl
from xfe import SynthesisStatus, refine_loop
from xfe_prompts import PromptBundle
from xre_pipeline import ExtractionReport, run_xre

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(verbose: bool = False):
    """控制台彩色日志；--verbose 时输出 DEBUG"""
    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + LOG_FORMAT))
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def add_file_handler(path: str) -> logging.Handler:
    handler = logging.FileHandler(path, encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


class PhaseStats(BaseModel):
    seconds: float = 0.0
    invocations: int = 0


class SessionReport(BaseModel):
    """report.json"""

    session_dir: str
    status: str = 'running'
    phases: Dict[str, PhaseStats] = Field(default_factory=lambda: {p: PhaseStats() for p in ('xre', 'xfe', 'checker')})
    seed_sql: str = ''
    seed_digest: str = ''
    final_sql: Optional[str] = None
    final_digest: Optional[str] = None
    final_source: Optional[str] = None
    llm_rounds: int = 0
    prompt_sequence: List[str] = []
    xfe_reason: str = ''
    combinatorial_probes: int = 0
    heuristics: List[str] = []
    ambiguities: List[str] = []
    checker: Optional[CheckerVerdict] = None
    extraction: Optional[ExtractionReport] = None


class Session:
    """一次命令行调用对应一个会话"""

    def __init__(self, config: HqeConfig, out_dir: Optional[str] = None, session_dir: Optional[str] = None):
        self.config = config
        if session_dir is None:
            root = out_dir or os.getcwd()
            stamp = datetime.now().strftime('%Y%m%d-%H%M%S')
            session_dir = os.path.join(root, f"session-{stamp}")
            suffix = 1
            while os.path.exists(session_dir):
                suffix += 1
                session_dir = os.path.join(root, f"session-{stamp}-{suffix}")
        os.makedirs(session_dir, exist_ok=True)
        self.session_dir = session_dir
        self.log_handler = add_file_handler(os.path.join(session_dir, 'hqe.log'))
        self.journal = SessionJournal(os.path.join(session_dir, 'journal.jsonl'))
        self.report = SessionReport(session_dir=session_dir)
        logger.info(f"会话目录: {session_dir}")

    # ---- 资源 ----

    def _path(self, value: Optional[str], what: str) -> str:
        path = self.config.resolve(value)
        if not path:
            raise ConfigError(f"配置缺少 {what}")
        return path

    def load_database(self, journal: Optional[SessionJournal] = None) -> DatabaseState:
        return load_database(self._path(self.config.schema_.ddl, 'schema.ddl'),
                             self._path(self.config.data.dir, 'data.dir'),
                             self.config.resolve(self.config.schema_.domains), journal=journal)

    def load_catalog(self):
        with open(self._path(self.config.schema_.ddl, 'schema.ddl'), 'r', encoding='utf-8') as f:
            ddl = f.read()
        return parse_ddl(ddl, load_domain_sidecar(self.config.resolve(self.config.schema_.domains)))

    def make_oracle(self, journal: Optional[SessionJournal] = None) -> OracleHandle:
        oc = self.config.oracle
        hidden = None
        if not oc.command:
            path = self._path(oc.hidden_sql, 'oracle.hidden_sql 或 oracle.command')
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    hidden = f.read()
            except OSError as e:
                raise ConfigError(f"无法读取隐藏查询文件 {path}: {e}")
        return make_oracle(hidden, oc.command, oc.timeout, journal)

    def _write(self, name: str, text: str):
        with open(os.path.join(self.session_dir, name), 'w', encoding='utf-8') as f:
            f.write(text.rstrip('\n') + '\n')

    def _finish_phase(self, phase: str, started: float, h: OracleHandle):
        stats = self.report.phases[phase]
        stats.seconds = round(stats.seconds + time.perf_counter() - started, 3)
        stats.invocations = h.phase_counts.get(phase, 0)

    def save_report(self):
        self._write('report.json', self.report.model_dump_json(indent=2))

    def close(self):
        self.journal.close()
        logging.getLogger().removeHandler(self.log_handler)
        self.log_handler.close()

    # ---- 命令 ----

    def run_extract(self, seed_only: bool = False, check: bool = True) -> SessionReport:
        """
        完整流水线

        Args:
            seed_only: 得到种子查询后停止
            check: 是否对最终查询运行结果等价检查

        Returns:
            会话报告；status 为 seed_only | success | failure | counterexample
        """
        cfg = self.config
        db = self.load_database(journal=self.journal)
        h = self.make_oracle(journal=self.journal)
        try:
            self.journal.set_phase('xre')
            started = time.perf_counter()
            xre = run_xre(h, db, cfg.limits)
            self._finish_phase('xre', started, h)
            self._write('seed.sql', xre.rendered.text)
            self.report.seed_sql = xre.rendered.text
            self.report.seed_digest = xre.rendered.digest
            self.report.extraction = xre.report
            self.report.heuristics = list(xre.report.heuristics)
            self.report.ambiguities = list(xre.report.ambiguities)
            if seed_only:
                self.report.status = 'seed_only'
                return self.report

            self.journal.set_phase('xfe')
            started = time.perf_counter()
            final = self._synthesize(h, db, xre)
            self._finish_phase('xfe', started, h)
            if final is None:
                self.report.status = 'failure'
                return self.report
            rendered = RenderedSQL.of(final)
            self._write('final.sql', rendered.text)
            self.report.final_sql = rendered.text
            self.report.final_digest = rendered.digest
            self.report.status = 'success'

            if check:
                verdict = self._check(h, final, db.catalog)
                if verdict.status == 'counterexample':
                    self.report.status = 'counterexample'
            return self.report
        finally:
            h.close()
            self.save_report()

    def _synthesize(self, h: OracleHandle, db: DatabaseState, xre) -> Optional[Query]:
        cfg = self.config
        client = make_client(cfg.llm, cfg.resolve(cfg.llm.mock_transcript))
        bundle = PromptBundle(description=cfg.description_text(), schema_ddl=db.catalog.to_ddl(),
                              seed_sql=xre.rendered.text, r_h_rows=len(xre.r_h), r_s_rows=len(xre.r_s))
        try:
            outcome = refine_loop(client, h, db, xre.seed, bundle, cfg.limits, r_h=xre.r_h,
                                  prompts_dir=os.path.join(self.session_dir, 'prompts'))
        finally:
            client.close()
        self.report.llm_rounds = outcome.rounds
        self.report.prompt_sequence = list(outcome.prompt_sequence)
        self.report.xfe_reason = outcome.reason
        if outcome.status is SynthesisStatus.SUCCESS:
            self.report.final_source = 'llm'
            return outcome.query
        if outcome.status is SynthesisStatus.FAILURE:
            logger.error(f"XFE 失败: {outcome.reason}")
            return None
        result = combinatorial_synthesis(xre.seed, outcome.last_query, h, db, xre.r_h,
                                         cap=cfg.limits.combinatorial_cap)
        self.report.combinatorial_probes = result.probes
        if result.status is SynthesisStatus.SUCCESS:
            self.report.final_source = 'seed' if result.probes == 1 else 'combinatorial'
            return result.query
        self.report.xfe_reason = f"{outcome.reason}; combinatorial {result.reason}"
        logger.error(f"组合合成失败（{result.reason}），抽取失败")
        return None

    def _check(self, h: OracleHandle, q_e: Query, catalog) -> CheckerVerdict:
        cc = self.config.checker
        self.journal.set_phase('checker')
        started = time.perf_counter()
        verdict = result_equivalent(h, q_e, catalog, trials=cc.trials, seed=cc.seed, profile=cc,
                                    n_jobs=cc.n_jobs, journal=self.journal, bundle_dir=self.session_dir,
                                    progress=True)
        self._finish_phase('checker', started, h)
        self.report.checker = verdict
        return verdict

    def run_check(self, sql_text: str) -> CheckerVerdict:
        """对给定 SQL 运行结果等价检查"""
        catalog = self.load_catalog()
        q_e = parse_sql(sql_text)
        h = self.make_oracle(journal=self.journal)
        try:
            verdict = self._check(h, q_e, catalog)
            self.report.final_sql = RenderedSQL.of(q_e).text
            self.report.status = 'counterexample' if verdict.status == 'counterexample' else 'success'
            return verdict
        finally:
            h.close()
            self.save_report()

    def run_replay(self, journal_path: str) -> ReplayReport:
        """按日志重建全部数据库状态并重新调用黑盒，核对结果摘要"""
        records = load_journal(journal_path)
        base = self.load_database()
        h = self.make_oracle()
        try:
            report = replay_records(records, base, h.invoke, lambda args: regenerate_db(base.catalog, args))
        finally:
            h.close()
        self._write('replay.json', report.model_dump_json(indent=2))
        return report

    def run_gen_db(self, seed: int, out_dir: str) -> List[str]:
        """生成随机实例并写出 CSV"""
        catalog = self.load_catalog()
        db = gen_random_db(catalog, seed, self.config.checker, journal=self.journal)
        written = dump_database(db, out_dir)
        logger.info(f"随机实例（种子 {seed}）已写出到 {out_dir}")
        return written
