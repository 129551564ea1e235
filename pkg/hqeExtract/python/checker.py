#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
结果等价检查模块
按模式生成随机数据库实例，比较抽取查询与黑盒的结果多重集；
发现差异时导出可重放的反例包
"""

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel
from tqdm import tqdm

from hqe_config import CheckerConfig
from hqe_errors import DomainError, FkTopologyError, OracleFailure, SqlError
from journal import SessionJournal
from minisql import Query, render_sql
from oracle import OracleHandle
from relcore import (AttrDomain, DatabaseState, DomainKind, ResultSet, SchemaCatalog, dump_database,
                     format_cell, multiset_diff)
from sql_executor import execute

logger = logging.getLogger(__name__)

DEFAULT_WINDOWS = {
    DomainKind.INTEGER: (0, 100),
    DomainKind.DECIMAL: (0, 20000),
    DomainKind.DATE: (date(1994, 1, 1), date(1997, 12, 31)),
}


def fk_order(catalog: SchemaCatalog) -> List[str]:
    """父表先于子表的拓扑顺序；同层按表名排序"""
    parents: Dict[str, set] = {t: set() for t in catalog.table_names}
    for child, _, parent, _ in catalog.fk_edges():
        if child == parent:
            raise FkTopologyError(f"表 {child} 存在自引用外键，无法生成无 NULL 实例")
        parents[child].add(parent)
    order, done = [], set()
    while len(order) < len(parents):
        ready = sorted(t for t, ps in parents.items() if t not in done and ps <= done)
        if not ready:
            cycle = sorted(t for t in parents if t not in done)
            raise FkTopologyError(f"外键存在环，无法确定生成顺序: {cycle}")
        order.extend(ready)
        done.update(ready)
    return order


class InstanceGenerator:
    """
    随机实例生成器
    主键按序生成，外键从父表已生成的值中选取；
    其余列以 hot_fraction 的概率取自按 (域签名, 取值窗口) 共享的热点值池，
    使跨列等值与连接谓词有非零的满足概率
    """

    def __init__(self, catalog: SchemaCatalog, seed: int, profile: CheckerConfig):
        self.catalog = catalog
        self.seed = seed
        self.profile = profile
        self.rng = np.random.default_rng(seed)
        self.pools: Dict[Tuple, List[Any]] = {}

    def _lookup(self, mapping: Dict[str, Any], table: str, column: str):
        return mapping.get(f"{table}.{column}", mapping.get(column))

    def _window(self, table: str, column: str, domain: AttrDomain) -> Tuple[int, int]:
        window = self._lookup(self.profile.value_windows, table, column)
        if window is None and domain.kind == DomainKind.DATE and self.profile.date_window:
            window = self.profile.date_window
        if window is None:
            window = DEFAULT_WINDOWS[domain.kind]
        lo = max(domain.to_grid(domain.coerce(window[0])), domain.grid_min)
        hi = min(domain.to_grid(domain.coerce(window[1])), domain.grid_max)
        if lo > hi:
            raise DomainError(f"{table}.{column} 的取值窗口 {window} 与域不相交")
        return lo, hi

    def _fresh(self, table: str, column: str, domain: AttrDomain):
        if domain.kind == DomainKind.TEXT_CATEGORICAL:
            return domain.enum_values[int(self.rng.integers(len(domain.enum_values)))]
        if domain.kind == DomainKind.TEXT_FREE:
            vocabulary = self._lookup(self.profile.text_vocabulary, table, column)
            if vocabulary:
                return str(vocabulary[int(self.rng.integers(len(vocabulary)))])
            return f"{column}#{int(self.rng.integers(1, 4 * self.profile.hot_pool + 1)):03d}"
        lo, hi = self._window(table, column, domain)
        return domain.from_grid(int(self.rng.integers(lo, hi + 1)))

    def _value(self, table: str, column: str, domain: AttrDomain):
        if domain.kind == DomainKind.TEXT_CATEGORICAL:
            return self._fresh(table, column, domain)
        if domain.kind == DomainKind.TEXT_FREE:
            key = (domain.signature, table, column)
        else:
            key = (domain.signature, self._window(table, column, domain))
        if self.rng.random() < self.profile.hot_fraction:
            pool = self.pools.get(key)
            if pool is None:
                pool = [self._fresh(table, column, domain) for _ in range(self.profile.hot_pool)]
                self.pools[key] = pool
            return pool[int(self.rng.integers(len(pool)))]
        return self._fresh(table, column, domain)

    def _table_rows(self, name: str, generated: Dict[str, List[List[Any]]]) -> List[List[Any]]:
        schema = self.catalog.table(name)
        n = self.profile.rows.get(name, self.profile.default_rows)
        fks = {fk.column: fk for fk in schema.foreign_keys}
        single_pk = schema.primary_key[0] if len(schema.primary_key) == 1 else None
        rows = []
        seen_keys = set()
        attempts = 0
        while len(rows) < n and attempts < n * 20:
            attempts += 1
            row = []
            for col in schema.columns:
                if col.name in fks:
                    fk = fks[col.name]
                    parent_rows = generated[fk.ref_table]
                    if not parent_rows:
                        raise FkTopologyError(f"{name}.{col.name} 引用的表 {fk.ref_table} 没有行")
                    idx = self.catalog.table(fk.ref_table).index_of(fk.ref_column)
                    row.append(parent_rows[int(self.rng.integers(len(parent_rows)))][idx])
                elif col.name == single_pk and col.domain.kind == DomainKind.INTEGER:
                    row.append(max(col.domain.i_min, 1) + len(rows))
                else:
                    row.append(self._value(name, col.name, col.domain))
            if schema.primary_key:
                key = tuple(row[schema.index_of(c)] for c in schema.primary_key)
                if key in seen_keys:
                    continue
                seen_keys.add(key)
            rows.append(row)
        if len(rows) < n:
            logger.debug(f"表 {name} 主键空间不足，只生成 {len(rows)} / {n} 行")
        return rows

    def generate(self, label: Optional[str] = None) -> DatabaseState:
        generated: Dict[str, List[List[Any]]] = {}
        for name in fk_order(self.catalog):
            generated[name] = self._table_rows(name, generated)
        return DatabaseState(self.catalog, generated, label=label or f"R{self.seed}")


def gen_random_db(catalog: SchemaCatalog, seed: int, profile: Optional[CheckerConfig] = None,
                  journal: Optional[SessionJournal] = None) -> DatabaseState:
    """
    生成满足主外键约束、不含 NULL 的随机实例（同一种子结果相同）

    Args:
        catalog: 模式目录
        seed: 随机种子
        profile: 行数与取值分布配置
        journal: 会话日志（写入 generate 记录以便重放）

    Returns:
        数据库状态，标签为 R<seed>
    """
    profile = profile or CheckerConfig()
    db = InstanceGenerator(catalog, seed, profile).generate()
    if journal is not None:
        journal.record('mutation', state=db.label, op='generate',
                       args={'seed': seed, 'profile': profile.model_dump(mode='json')}, generation=0)
        db.journal = journal
    return db


def regenerate_db(catalog: SchemaCatalog, args: Dict[str, Any]) -> DatabaseState:
    """由日志中的 generate 记录重建随机实例"""
    profile = CheckerConfig.model_validate(args.get('profile') or {})
    return InstanceGenerator(catalog, int(args['seed']), profile).generate()


class Counterexample(BaseModel):
    trial: int
    db_seed: int
    only_in_candidate: List[List[str]] = []
    only_in_oracle: List[List[str]] = []
    candidate_rows: int = 0
    oracle_rows: int = 0
    bundle_dir: Optional[str] = None


class CheckerVerdict(BaseModel):
    """pass | counterexample | inconclusive（没有任何试验完成）"""

    status: str
    trials_run: int = 0
    passed: int = 0
    errors: List[str] = []
    counterexample: Optional[Counterexample] = None

    @property
    def passed_all(self) -> bool:
        return self.status == 'pass'


@dataclass
class TrialResult:
    trial: int
    db_seed: int
    status: str  # pass | diff | error
    db: Optional[DatabaseState] = None
    r_h: Optional[ResultSet] = None
    r_e: Optional[ResultSet] = None
    message: str = ''
    invoke_records: List[Dict[str, Any]] = field(default_factory=list)


def _run_trial(h: OracleHandle, q_e: Query, catalog: SchemaCatalog, profile: CheckerConfig,
               trial: int, seed: int) -> TrialResult:
    db_seed = seed + trial
    db = gen_random_db(catalog, db_seed, profile)
    fork = h.fork(journal=SessionJournal())
    fork.phase = 'checker'
    try:
        r_h = fork.invoke_result(db)
    except OracleFailure as e:
        return TrialResult(trial, db_seed, 'error', message=f"黑盒: {e}",
                           invoke_records=[r.model_extra for r in fork.journal.records])
    finally:
        fork.close()
    records = [r.model_extra for r in fork.journal.records]
    try:
        r_e = execute(q_e, db)
    except SqlError as e:
        return TrialResult(trial, db_seed, 'error', message=f"抽取查询: {e}", invoke_records=records)
    only_e, only_h = multiset_diff(r_e, r_h)
    status = 'diff' if (only_e or only_h) else 'pass'
    return TrialResult(trial, db_seed, status, db, r_h, r_e, invoke_records=records)


def _rows_text(counter) -> List[List[str]]:
    out = []
    for row, n in sorted(counter.items(), key=lambda kv: [format_cell(v) for v in kv[0]]):
        out.extend([[format_cell(v) for v in row]] * n)
    return out


def dump_counterexample(result: TrialResult, q_e: Query, out_dir: str) -> str:
    """反例包：种子、随机实例 CSV、两边结果 CSV、差异摘要"""
    bundle = os.path.join(out_dir, f"counterexample-seed{result.db_seed}")
    dump_database(result.db, os.path.join(bundle, 'data'))
    result.r_h.to_frame().to_csv(os.path.join(bundle, 'oracle_result.csv'), index=False)
    result.r_e.to_frame().to_csv(os.path.join(bundle, 'candidate_result.csv'), index=False)
    only_e, only_h = multiset_diff(result.r_e, result.r_h)
    with open(os.path.join(bundle, 'diff.json'), 'w', encoding='utf-8') as f:
        json.dump({'db_seed': result.db_seed, 'trial': result.trial,
                   'only_in_candidate': _rows_text(only_e), 'only_in_oracle': _rows_text(only_h)},
                  f, ensure_ascii=False, indent=2)
    with open(os.path.join(bundle, 'candidate.sql'), 'w', encoding='utf-8') as f:
        f.write(render_sql(q_e) + '\n')
    return bundle


def result_equivalent(h: OracleHandle, q_e: Query, catalog: SchemaCatalog, trials: int = 30, seed: int = 0,
                      profile: Optional[CheckerConfig] = None, n_jobs: int = 1,
                      journal: Optional[SessionJournal] = None, bundle_dir: Optional[str] = None,
                      progress: bool = False) -> CheckerVerdict:
    """
    在随机实例上比较抽取查询与黑盒（多重集对称差）

    Args:
        h: 黑盒句柄（每个试验使用其分叉句柄）
        q_e: 抽取查询
        catalog: 模式目录
        trials: 试验次数；第 t 次使用种子 seed + t
        seed: 起始种子
        profile: 随机实例配置
        n_jobs: 并行试验数（1 表示顺序执行并在首个反例处停止）
        journal: 会话日志
        bundle_dir: 反例包输出目录

    Returns:
        检查结论；多个试验失败时取编号最小者
    """
    profile = profile or CheckerConfig()
    if n_jobs == 1:
        results = []
        for t in tqdm(range(trials), desc='checker', disable=not progress):
            r = _run_trial(h, q_e, catalog, profile, t, seed)
            results.append(r)
            if r.status == 'diff':
                break
    else:
        results = Parallel(n_jobs=n_jobs, backend='threading')(
            delayed(_run_trial)(h, q_e, catalog, profile, t, seed) for t in range(trials))

    verdict = CheckerVerdict(status='pass')
    failing: Optional[TrialResult] = None
    for r in sorted(results, key=lambda x: x.trial):
        h.phase_counts['checker'] += len(r.invoke_records)
        if journal is not None:
            journal.record('mutation', state=f"R{r.db_seed}", op='generate',
                           args={'seed': r.db_seed, 'profile': profile.model_dump(mode='json')}, generation=0)
            for rec in r.invoke_records:
                journal.record('invoke', **rec)
            journal.record('checker_trial', trial=r.trial, db_seed=r.db_seed, status=r.status,
                           oracle_digest=r.r_h.digest() if r.r_h is not None else None,
                           candidate_digest=r.r_e.digest() if r.r_e is not None else None,
                           message=r.message)
        if failing is not None:
            continue
        verdict.trials_run += 1
        if r.status == 'pass':
            verdict.passed += 1
        elif r.status == 'error':
            logger.warning(f"试验 {r.trial}（种子 {r.db_seed}）中止: {r.message}")
            verdict.errors.append(f"trial {r.trial}: {r.message}")
        else:
            failing = r

    if failing is not None:
        only_e, only_h = multiset_diff(failing.r_e, failing.r_h)
        verdict.status = 'counterexample'
        verdict.counterexample = Counterexample(
            trial=failing.trial, db_seed=failing.db_seed,
            only_in_candidate=_rows_text(only_e), only_in_oracle=_rows_text(only_h),
            candidate_rows=len(failing.r_e), oracle_rows=len(failing.r_h),
            bundle_dir=dump_counterexample(failing, q_e, bundle_dir) if bundle_dir else None,
        )
        logger.warning(f"发现反例: 试验 {failing.trial}，种子 {failing.db_seed}，"
                       f"抽取查询多出 {len(verdict.counterexample.only_in_candidate)} 行，"
                       f"缺少 {len(verdict.counterexample.only_in_oracle)} 行")
    elif verdict.passed == 0:
        verdict.status = 'inconclusive'
        logger.warning("没有任何试验完成，检查结论不确定")
    else:
        logger.info(f"检查通过: {verdict.passed}/{verdict.trials_run} 个随机实例结果一致")
    return verdict


def replay_counterexample(h: OracleHandle, q_e: Query, catalog: SchemaCatalog, db_seed: int,
                          profile: Optional[CheckerConfig] = None) -> Tuple[ResultSet, ResultSet]:
    """按种子重建反例实例，返回 (抽取查询结果, 黑盒结果)"""
    db = gen_random_db(catalog, db_seed, profile)
    return execute(q_e, db), h.invoke_result(db)
