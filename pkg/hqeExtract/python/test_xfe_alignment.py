#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
种子对齐检查测试（运行示例的种子与模拟对话中的候选）
"""

import json
import os

import pytest

from conftest import EXAMPLE_DIR
from llm_client import extract_sql
from minisql import parse_sql
from xfe_alignment import check_alignment, trace_output

SEED_SQL = ("SELECT c_name AS name, c_phone AS phone FROM customer, orders "
            "WHERE c_custkey = o_custkey AND (c_acctbal <= 10000.00 OR o_orderkey IS NULL) "
            "UNION ALL SELECT s_name AS name, s_phone AS phone FROM lineitem, orders, supplier "
            "WHERE l_orderkey = o_orderkey AND l_suppkey = s_suppkey AND l_commitdate = l_receiptdate "
            "AND s_acctbal <= o_totalprice AND l_shipmode IN ('AIR', 'TRUCK')")


@pytest.fixture(scope='module')
def seed():
    return parse_sql(SEED_SQL)


@pytest.fixture(scope='module')
def replies():
    with open(os.path.join(EXAMPLE_DIR, 'mock_transcript.jsonl'), 'r', encoding='utf-8') as f:
        return [parse_sql(extract_sql(json.loads(line)['reply_sql'])) for line in f if line.strip()]


def guidelines(violations):
    return sorted({v.guideline for v in violations})


def test_extra_table_flagged(seed, replies, catalog):
    """第一轮候选引入 nation：G5，且 nation 上的连接谓词违反 G7"""
    violations = check_alignment(replies[0], seed, catalog)
    assert 'G5' in guidelines(violations)
    assert 'G7' in guidelines(violations)
    g5 = [v for v in violations if v.guideline == 'G5'][0]
    assert 'nation' in g5.detail
    assert g5.clause == 'FROM clause'


@pytest.mark.parametrize('index', [1, 2])
def test_aligned_candidates(seed, replies, catalog, index):
    assert check_alignment(replies[index], seed, catalog) == []


def test_projection_order_flagged(seed, catalog):
    cand = parse_sql(SEED_SQL.replace('c_name AS name, c_phone AS phone', 'c_phone AS phone, c_name AS name')
                     .replace('s_name AS name, s_phone AS phone', 's_phone AS phone, s_name AS name'))
    assert guidelines(check_alignment(cand, seed, catalog)) == ['G8']


def test_projection_dependency_flagged(seed, catalog):
    cand = parse_sql(SEED_SQL.replace('c_phone AS phone', 'c_mktsegment AS phone'))
    violations = check_alignment(cand, seed, catalog)
    assert guidelines(violations) == ['G8']
    assert 'phone' in violations[0].detail


def test_foreign_join_predicate_flagged(seed, catalog):
    cand = parse_sql(SEED_SQL.replace('c_custkey = o_custkey', 'c_nationkey = o_custkey'))
    violations = check_alignment(cand, seed, catalog)
    assert guidelines(violations) == ['G7']
    assert 'c_nationkey = o_custkey' in violations[0].detail


def test_instance_count_flagged(seed, catalog):
    cand = parse_sql(SEED_SQL.replace('FROM lineitem, orders, supplier', 'FROM lineitem, orders, orders AS o2, supplier'))
    assert 'G6' in guidelines(check_alignment(cand, seed, catalog))


def test_trace_through_derived_table(replies, catalog):
    union = replies[2].branches[0].from_[0].query
    assert trace_output(union, 'name', catalog) == {('customer', 'c_name'), ('supplier', 's_name')}
