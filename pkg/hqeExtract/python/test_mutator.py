#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
变更工具与最小化测试
"""

from decimal import Decimal

import numpy as np
import pytest

from hqe_errors import MinimizationFailure, MutationOrderError
from mutator import (Minimizer, applied, empty_input_result, fresh_dummy_name, is_fit, keep_rows, minimize, rename_table,
                     revert, set_value, void_tables)
from minisql import parse_sql
from relcore import ResultSet
from sql_executor import execute

JOIN_SQL = ("SELECT c_name, o_orderkey FROM customer, orders "
            "WHERE c_custkey = o_custkey AND o_totalprice >= 100000")
OUTER_SQL = "SELECT c_name FROM customer LEFT OUTER JOIN orders ON c_custkey = o_custkey"


def test_applied_reverts_on_exit(db):
    before = db.digest()
    with applied(db, 'void', tables=['customer']):
        assert db.row_count('customer') == 0
    assert db.digest() == before


def test_applied_reverts_on_error(db):
    before = db.digest()
    with pytest.raises(RuntimeError):
        with applied(db, 'keep', table='orders', indices=[0]):
            raise RuntimeError('boom')
    assert db.digest() == before


def test_void_and_set_value_are_undone_lifo(db):
    before = db.digest()
    voided = void_tables(db, ['nation', 'region'])
    changed = set_value(db, 'customer', 'c_acctbal', Decimal('20000.00'))
    assert db.table_rows('nation') == []
    rich = execute(parse_sql("SELECT c_custkey FROM customer WHERE c_acctbal >= 20000.00"), db)
    assert rich.rows == [(1,)]
    with pytest.raises(MutationOrderError):
        revert(db, voided)
    revert(db, changed)
    revert(db, voided)
    assert db.digest() == before


def test_fresh_dummy_name_avoids_collisions(db):
    rename_table(db, 'customer')
    assert db.effective_name('customer') == 'hqe_dummy_customer'
    assert fresh_dummy_name(db, 'customer') == 'hqe_dummy_customer_2'


def test_is_fit():
    assert is_fit(ResultSet(('a',), [(1,)]))
    assert not is_fit(ResultSet(('a',), [(None,)]))
    assert not is_fit(None)


def test_minimize_join_to_single_rows(db, oracle_for):
    """内连接查询最小化后每张参与表一行，其余表清空"""
    h = oracle_for(JOIN_SQL)
    d1 = minimize(db, h, ['customer', 'orders'])
    assert d1.row_count('customer') == 1
    assert d1.row_count('orders') == 1
    assert d1.row_count('lineitem') == 0
    assert is_fit(h.invoke(d1))
    assert d1.annotations['optional_tables'] == []
    c = d1.table_rows('customer')[0]
    o = d1.table_rows('orders')[0]
    assert c[0] == o[1]
    assert db.row_count('customer') == 6


def test_minimize_marks_outer_join_side_optional(db, oracle_for):
    """外连接补空侧的表删空后仍为 FIT，被标为可选并重选为匹配对"""
    h = oracle_for(OUTER_SQL)
    m = Minimizer(h)
    d1 = m.run(db, ['customer', 'orders'])
    assert d1.annotations['optional_tables'] == ['orders']
    assert m.report.matched_pairs['orders']
    c = d1.table_rows('customer')[0]
    o = d1.table_rows('orders')[0]
    assert c[0] == o[1]
    assert m.report.trace


def test_minimize_rejects_non_fit_start(db, oracle_for):
    h = oracle_for("SELECT c_name FROM customer WHERE c_acctbal <= -500")
    with pytest.raises(MinimizationFailure):
        minimize(db, h, ['customer'])


def test_empty_input_result_only_for_scalar_aggregates(db, oracle_for):
    count = oracle_for("SELECT COUNT(*) FROM lineitem WHERE l_shipmode = 'TRUCK'")
    plain = oracle_for("SELECT l_orderkey FROM lineitem WHERE l_shipmode = 'TRUCK'")
    before = db.digest()
    empty = empty_input_result(count, db, ['lineitem'])
    assert empty.rows == [(0,)]
    assert empty_input_result(plain, db, ['lineitem']) is None
    assert db.digest() == before


def test_minimize_scalar_count_keeps_matching_row(db, oracle_for):
    """COUNT(*) 清空后仍返回 0：以与空输入结果不同为保持条件，留下一行 TRUCK"""
    h = oracle_for("SELECT COUNT(*) FROM lineitem WHERE l_shipmode = 'TRUCK'")
    empty = empty_input_result(h, db, ['lineitem'])
    d1 = minimize(db, h, ['lineitem'], empty=empty)
    row = d1.table_rows('lineitem')[0]
    assert row[db.catalog.table('lineitem').index_of('l_shipmode')] == 'TRUCK'
    assert d1.annotations['optional_tables'] == []
    assert h.invoke(d1).rows == [(1,)]


def test_random_mutation_sequences_revert(db):
    """随机的清空、重命名、改值与保留行序列，按后进先出回滚后状态不变"""
    rng = np.random.default_rng(7)
    tables = db.catalog.table_names
    before = db.digest()
    for _ in range(100):
        tokens = []
        for _ in range(int(rng.integers(1, 6))):
            table = tables[int(rng.integers(len(tables)))]
            kind = int(rng.integers(4))
            if kind == 0:
                tokens.append(void_tables(db, [table]))
            elif kind == 1 and table not in db.rename_overlay:
                tokens.append(rename_table(db, table))
            elif kind == 2 and db.row_count(table) > 0:
                schema = db.catalog.table(table)
                idx = int(rng.integers(len(schema.columns)))
                value = db.raw_rows(table)[-1][idx]
                if value is not None:
                    tokens.append(set_value(db, table, schema.columns[idx].name, value))
            elif kind == 3:
                n = db.row_count(table)
                tokens.append(keep_rows(db, table, [i for i in range(n) if rng.random() < 0.5]))
        for token in reversed(tokens):
            revert(db, token)
        assert db.digest() == before
    assert db.rename_overlay == {}
    assert db.void_set == set()
