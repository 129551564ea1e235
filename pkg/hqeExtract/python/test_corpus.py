#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
语料测试：隐藏查询生成、退化分类与变异体
"""

import pandas as pd
import pytest

from corpus import (BASE_QUERIES, MUTANTS, NESTED_KINDS, QueryGenerator, classify_discrepancy, corpus_passed,
                    degrade_to_flat, run_flat_suite, run_mutant_suite, run_nested_suite, summarize)
from minisql import parse_sql, render_sql
from relcore import FitClass
from sql_executor import execute

SEMI_HIDDEN = ("SELECT s_name FROM supplier WHERE s_suppkey IN "
               "(SELECT l_suppkey FROM lineitem WHERE l_quantity >= 10.00)")
SEMI_FLAT = "SELECT s_name FROM supplier, lineitem WHERE s_suppkey = l_suppkey AND l_quantity >= 10.00"
OUTER_HIDDEN = ("SELECT c_name FROM customer LEFT OUTER JOIN orders ON c_custkey = o_custkey "
                "WHERE c_acctbal <= 10000.00")
OUTER_INNER = "SELECT c_name FROM customer, orders WHERE c_custkey = o_custkey AND c_acctbal <= 10000.00"


def test_flat_queries_are_fit(db):
    gen = QueryGenerator(db, seed=3)
    for _ in range(5):
        cq = gen.flat()
        assert cq is not None
        assert cq.kind == 'flat'
        assert execute(cq.query, db).fit_class == FitClass.FIT
        assert parse_sql(cq.sql).branches[0].from_


def test_generator_is_seeded(db):
    first = [QueryGenerator(db, seed=5).flat().sql for _ in range(2)]
    assert first[0] == first[1]


@pytest.mark.parametrize('kind', NESTED_KINDS)
def test_nested_queries(db, kind):
    cq = QueryGenerator(db, seed=1).nested(kind)
    assert cq is not None
    assert cq.kind == kind
    assert cq.name == f"{kind}-001"
    assert execute(cq.query, db).fit_class == FitClass.FIT


def test_unknown_nested_kind(db):
    with pytest.raises(ValueError):
        QueryGenerator(db).nested('lateral')


def test_degrade_semi_join():
    flat = degrade_to_flat(parse_sql(SEMI_HIDDEN))
    text = render_sql(flat)
    assert 'IN (SELECT' not in text
    assert [t.name for t in flat.branches[0].from_] == ['supplier', 'lineitem']


def test_degrade_outer_join():
    assert 'LEFT OUTER JOIN' not in render_sql(degrade_to_flat(parse_sql(OUTER_HIDDEN)))
    dropped = degrade_to_flat(parse_sql(OUTER_HIDDEN), drop_outer=True)
    assert [t.name for t in dropped.branches[0].from_] == ['customer']


def test_classify_discrepancy(db, catalog):
    assert classify_discrepancy(parse_sql(SEMI_HIDDEN), parse_sql(SEMI_HIDDEN), catalog, [db]) == 'exact'
    assert classify_discrepancy(parse_sql(SEMI_HIDDEN), parse_sql(SEMI_FLAT), catalog, [db]) == 'flattened'
    assert classify_discrepancy(parse_sql(OUTER_HIDDEN), parse_sql(OUTER_INNER), catalog, [db]) == 'outer_to_inner'
    unrelated = parse_sql("SELECT c_name FROM customer WHERE c_acctbal <= 100.00")
    assert classify_discrepancy(parse_sql(OUTER_HIDDEN), unrelated, catalog, [db]) == 'unclassified'


def test_mutant_corpus_shape():
    names = [name for name, _, _, _ in MUTANTS]
    assert len(MUTANTS) >= 20
    assert len(set(names)) == len(names)
    for name, base, kind, sql in MUTANTS:
        assert base in BASE_QUERIES
        assert sql != BASE_QUERIES[base]
        parse_sql(sql)


def test_summary_helpers():
    frame = pd.DataFrame([{'suite': 'flat', 'status': 'pass'}, {'suite': 'mutants', 'status': 'killed'},
                          {'suite': 'mutants', 'status': 'survived'}])
    assert not corpus_passed(frame)
    assert corpus_passed(frame.iloc[:2])
    table = summarize(frame)
    assert table.loc['mutants', 'killed'] == 1
    assert table.loc['flat', 'pass'] == 1


def test_flat_suite_sample(db):
    frame = pd.DataFrame(run_flat_suite(db, count=5, seed=2))
    assert len(frame) == 5
    assert (frame['status'] == 'pass').all(), frame[['name', 'detail', 'hidden_sql', 'seed_sql']]


def test_nested_suite_sample(db, config):
    frame = pd.DataFrame(run_nested_suite(db, count=6, seed=2, instances=2, profile=config.checker))
    assert set(frame['kind']) == set(NESTED_KINDS)
    assert (frame['status'] == 'pass').all(), frame[['name', 'detail', 'hidden_sql', 'seed_sql']]


@pytest.mark.slow
def test_flat_suite_full(db):
    frame = pd.DataFrame(run_flat_suite(db, count=200, seed=0))
    assert len(frame) == 200
    assert (frame['status'] == 'pass').all(), frame.loc[frame['status'] != 'pass', ['name', 'detail']]


@pytest.mark.slow
def test_nested_suite_full(db, config):
    frame = pd.DataFrame(run_nested_suite(db, count=50, seed=0, profile=config.checker))
    assert (frame['detail'] != 'unclassified').all()
    assert (frame['status'] == 'pass').all(), frame.loc[frame['status'] != 'pass', ['name', 'detail']]


@pytest.mark.slow
def test_every_mutant_killed(catalog, config):
    """每个变异体在 100 个检查器起始种子下至少被拒绝 99 次"""
    frame = pd.DataFrame(run_mutant_suite(catalog, trials=config.checker.trials, profile=config.checker, seeds=100))
    assert len(frame) == len(MUTANTS)
    assert (frame['status'] != 'error').all(), frame[['name', 'status', 'detail']]
    assert (frame['kills'] >= 99).all(), frame[['name', 'kills', 'detail']]


def test_mutant_suite_counts_kills_per_seed(catalog, config):
    frame = pd.DataFrame(run_mutant_suite(catalog, trials=3, profile=config.checker, seeds=2))
    assert set(frame['runs']) == {2}
    assert frame['kills'].between(0, 2).all()
    assert frame.loc[frame['kills'] == 2, 'status'].eq('killed').all()
