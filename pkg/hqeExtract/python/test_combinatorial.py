#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
组合合成测试：半连接骨架上的 FROM 重分配与派生表骨架上的 GROUP BY 重分配
"""

from combinatorial import combinatorial_synthesis, enumerate_candidates, redistribute_tables, skeleton_kind
from minisql import InSubquery, parse_sql, walk_expr
from sql_executor import execute
from xfe import SynthesisStatus

SEMI_HIDDEN = ("SELECT s_name FROM supplier WHERE s_suppkey IN "
               "(SELECT l_suppkey FROM lineitem WHERE l_quantity >= 10.00)")
SEMI_SEED = "SELECT s_name FROM lineitem, supplier WHERE l_suppkey = s_suppkey AND l_quantity >= 10.00"
# 大模型最后一次给出的错误半连接（过滤条件放错了层）
SEMI_SKELETON = ("SELECT s_name FROM supplier WHERE s_acctbal >= 10.00 AND s_suppkey IN "
                 "(SELECT l_suppkey FROM lineitem)")

DERIVED_HIDDEN = ("SELECT name, phone FROM (SELECT c_name AS name, c_phone AS phone FROM customer, orders "
                  "WHERE c_custkey = o_custkey) AS t GROUP BY name, phone")
DERIVED_SEED = "SELECT c_name AS name, c_phone AS phone FROM customer, orders WHERE c_custkey = o_custkey"
DERIVED_SKELETON = ("SELECT name, phone FROM (SELECT c_name AS name, c_phone AS phone FROM customer, orders "
                    "WHERE c_custkey = o_custkey) AS t")


def test_skeleton_kind():
    assert skeleton_kind(None) == 'flat'
    assert skeleton_kind(parse_sql(SEMI_SEED)) == 'flat'
    assert skeleton_kind(parse_sql(SEMI_SKELETON)) == 'semi'
    assert skeleton_kind(parse_sql(DERIVED_SKELETON)) == 'derived'


def test_redistribute_tables_moves_inner_side(catalog):
    """外层只能保留投影引用的表，连接等值谓词变成 IN"""
    block = parse_sql(SEMI_SEED).branches[0]
    alternatives = list(redistribute_tables(block, catalog))
    assert len(alternatives) == 1
    alt = alternatives[0]
    assert [t.name for t in alt.from_] == ['supplier']
    sub = [n for n in walk_expr(alt.where) if isinstance(n, InSubquery)][0]
    assert [t.name for t in sub.query.branches[0].from_] == ['lineitem']


def test_seed_is_probed_first(catalog):
    seed = parse_sql(SEMI_SEED)
    assert next(enumerate_candidates(seed, parse_sql(SEMI_SKELETON), catalog)) is seed


def test_semi_join_found(db, oracle_for):
    """种子的连接在 D_I 上重复了供应商 2，移入 IN 子查询后与黑盒一致"""
    h = oracle_for(SEMI_HIDDEN)
    seed = parse_sql(SEMI_SEED)
    assert len(execute(seed, db)) == 7
    result = combinatorial_synthesis(seed, parse_sql(SEMI_SKELETON), h, db)
    assert result.status is SynthesisStatus.SUCCESS
    assert result.skeleton == 'semi'
    assert result.probes == 2
    assert 'IN (SELECT' in result.rendered.text
    assert len(execute(result.query, db)) == 6


def test_derived_group_by_found(db, oracle_for):
    """派生表骨架：把 GROUP BY 放到内层或外层去掉重复的客户"""
    h = oracle_for(DERIVED_HIDDEN)
    result = combinatorial_synthesis(parse_sql(DERIVED_SEED), parse_sql(DERIVED_SKELETON), h, db)
    assert result.status is SynthesisStatus.SUCCESS
    assert result.skeleton == 'derived'
    assert result.probes > 1
    assert execute(result.query, db).multiset() == h.invoke_result(db).multiset()


def test_flat_skeleton_exhausts(db, oracle_for):
    h = oracle_for(SEMI_HIDDEN)
    result = combinatorial_synthesis(parse_sql(SEMI_SEED), None, h, db)
    assert result.status is SynthesisStatus.FAILURE
    assert result.reason == 'exhausted'
    assert result.probes == 1


def test_candidate_cap(db, oracle_for):
    h = oracle_for(SEMI_HIDDEN)
    result = combinatorial_synthesis(parse_sql(SEMI_SEED), parse_sql(SEMI_SKELETON), h, db, cap=1)
    assert result.status is SynthesisStatus.FAILURE
    assert result.reason == 'cap'
    assert result.probes == 1
