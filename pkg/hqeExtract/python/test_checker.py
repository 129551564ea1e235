#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
结果等价检查测试：随机实例生成、变异体拒绝与反例重放
"""

import json
import os

import pytest

from checker import fk_order, gen_random_db, regenerate_db, replay_counterexample, result_equivalent
from corpus import MUTANTS
from hqe_errors import FkTopologyError
from journal import SessionJournal
from minisql import parse_sql
from relcore import multiset_diff, parse_ddl

MUTANT_9000 = dict((name, sql) for name, _, _, sql in MUTANTS)['people-bound-9000']


def test_fk_order_parents_first(catalog):
    order = fk_order(catalog)
    assert order.index('region') < order.index('nation') < order.index('customer') < order.index('orders')
    assert order.index('orders') < order.index('lineitem')
    assert order.index('part') < order.index('partsupp')
    assert order.index('supplier') < order.index('partsupp')


@pytest.mark.parametrize('ddl', [
    "CREATE TABLE a (a_id INTEGER PRIMARY KEY, a_b INTEGER NOT NULL REFERENCES b(b_id));"
    "CREATE TABLE b (b_id INTEGER PRIMARY KEY, b_a INTEGER NOT NULL REFERENCES a(a_id));",
    "CREATE TABLE emp (e_id INTEGER PRIMARY KEY, e_boss INTEGER NOT NULL REFERENCES emp(e_id));",
])
def test_fk_cycles_rejected(ddl):
    with pytest.raises(FkTopologyError):
        fk_order(parse_ddl(ddl))


def test_random_db_is_deterministic(catalog, config):
    first = gen_random_db(catalog, 7, config.checker)
    again = gen_random_db(catalog, 7, config.checker)
    other = gen_random_db(catalog, 8, config.checker)
    assert first.digest() == again.digest()
    assert first.digest() != other.digest()
    assert first.label == 'R7'


def test_random_db_respects_keys(catalog, config):
    db = gen_random_db(catalog, 3, config.checker)
    assert len(db.table_rows('region')) == 3
    assert len(db.table_rows('nation')) == 5
    custkeys = {row[0] for row in db.table_rows('customer')}
    assert len(custkeys) == len(db.table_rows('customer'))
    assert {row[1] for row in db.table_rows('orders')} <= custkeys
    for rows in (db.table_rows(t) for t in catalog.table_names):
        assert all(v is not None for row in rows for v in row)


def test_regenerate_matches_journal(catalog, config):
    journal = SessionJournal()
    db = gen_random_db(catalog, 11, config.checker, journal=journal)
    record = journal.of_kind('mutation')[0]
    assert record.field('op') == 'generate'
    assert regenerate_db(catalog, record.field('args')).digest() == db.digest()


def test_hidden_query_passes(catalog, config, running_oracle, hidden_sql):
    verdict = result_equivalent(running_oracle, parse_sql(hidden_sql), catalog, trials=5, profile=config.checker)
    assert verdict.status == 'pass'
    assert verdict.passed_all
    assert verdict.trials_run == 5
    assert running_oracle.phase_counts['checker'] == 5


def test_bound_mutant_killed(catalog, config, running_oracle, tmp_path):
    """c_acctbal 上界从 10000 改成 9000 的变异体应被拒绝，反例可按种子重放"""
    mutant = parse_sql(MUTANT_9000)
    journal = SessionJournal()
    verdict = result_equivalent(running_oracle, mutant, catalog, trials=30, profile=config.checker,
                                journal=journal, bundle_dir=str(tmp_path))
    assert verdict.status == 'counterexample'
    ce = verdict.counterexample
    assert ce.only_in_oracle
    assert not ce.only_in_candidate
    assert journal.of_kind('checker_trial')[-1].field('status') == 'diff'

    r_e, r_h = replay_counterexample(running_oracle, mutant, catalog, ce.db_seed, config.checker)
    only_e, only_h = multiset_diff(r_e, r_h)
    assert len(only_h) and not only_e

    files = os.listdir(ce.bundle_dir)
    for name in ('data', 'oracle_result.csv', 'candidate_result.csv', 'diff.json', 'candidate.sql'):
        assert name in files
    with open(os.path.join(ce.bundle_dir, 'diff.json'), 'r', encoding='utf-8') as f:
        assert json.load(f)['db_seed'] == ce.db_seed


def test_parallel_reports_lowest_failing_trial(catalog, config, running_oracle):
    mutant = parse_sql(MUTANT_9000)
    sequential = result_equivalent(running_oracle, mutant, catalog, trials=30, profile=config.checker)
    parallel = result_equivalent(running_oracle, mutant, catalog, trials=30, profile=config.checker, n_jobs=2)
    assert parallel.status == 'counterexample'
    assert parallel.counterexample.trial == sequential.counterexample.trial
