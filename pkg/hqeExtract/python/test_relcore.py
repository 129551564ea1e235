#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
relcore 测试：属性域、DDL 解析、可撤销变更与结果集分类
"""

from datetime import date
from decimal import Decimal

import pytest

from conftest import DDL_PATH, DOMAINS_PATH
from hqe_errors import DataLoadError, DomainError, MutationOrderError, NameCollisionError, ResolutionError, SchemaError
from relcore import (AttrDomain, DomainKind, FitClass, ResultSet, classify_fit, domain_midpoint,
                     dump_database, load_database, multiset_diff, parse_ddl)


def test_decimal_domain_grid():
    """小数域按步长映射到整数网格"""
    d = AttrDomain(DomainKind.DECIMAL, '-999.99', '99999.99', scale=2)
    assert d.step == Decimal('0.01')
    assert d.to_grid('10000.00') == 1000000
    assert d.from_grid(1000000) == Decimal('10000.00')
    assert d.contains('774.84')
    assert not d.contains('100000.00')
    assert not d.contains('1.005')


def test_date_domain_grid():
    d = AttrDomain(DomainKind.DATE, '1992-01-01', '1998-12-31')
    g = d.to_grid('1995-03-16')
    assert d.from_grid(g + 1) == date(1995, 3, 17)
    assert d.grid_min < g < d.grid_max


def test_categorical_domain_is_sorted():
    d = AttrDomain(DomainKind.TEXT_CATEGORICAL, enum_values=('TRUCK', 'AIR', 'MAIL'))
    assert d.enum_values == ('AIR', 'MAIL', 'TRUCK')
    assert d.i_min == 'AIR' and d.i_max == 'TRUCK'
    with pytest.raises(DomainError):
        d.to_grid('SHIP')


def test_inverted_domain_rejected():
    with pytest.raises(DomainError):
        AttrDomain(DomainKind.INTEGER, 10, 1)


def test_domain_midpoint():
    d = AttrDomain(DomainKind.INTEGER, 0, 100)
    assert domain_midpoint(d, 0, 9) == 4
    with pytest.raises(DomainError):
        domain_midpoint(AttrDomain(DomainKind.TEXT_FREE), 'a', 'b')


def test_parse_ddl_keys_and_domains(catalog):
    """行内主键、表级复合主键与外键都被识别，侧车文件给出枚举域"""
    customer = catalog.table('customer')
    assert customer.primary_key == ('c_custkey',)
    assert customer.column('c_acctbal').domain.kind == DomainKind.DECIMAL
    assert customer.column('c_mktsegment').domain.kind == DomainKind.TEXT_CATEGORICAL
    assert customer.column('c_phone').domain.kind == DomainKind.TEXT_FREE
    assert catalog.table('lineitem').primary_key == ('l_orderkey', 'l_linenumber')
    assert ('lineitem', 'l_suppkey', 'supplier', 's_suppkey') in catalog.fk_edges()
    assert ('orders', 'o_custkey', 'customer', 'c_custkey') in catalog.fk_edges()
    assert catalog.tables_with_column('o_totalprice') == ['orders']


def test_to_ddl_round_trips(catalog):
    again = parse_ddl(catalog.to_ddl())
    assert again.table_names == catalog.table_names
    assert again.table('partsupp').primary_key == ('ps_partkey', 'ps_suppkey')


def test_parse_ddl_rejects_bad_reference():
    with pytest.raises(SchemaError):
        parse_ddl("CREATE TABLE a (x INTEGER REFERENCES b(y));")


def test_load_running_example(db):
    assert db.row_count('customer') == 6
    assert db.row_count('lineitem') == 8
    row = db.table_rows('supplier')[0]
    assert row[4] == Decimal('2530.46')


def test_null_rejected_in_initial_database(tmp_path):
    (tmp_path / 'region.csv').write_text("r_regionkey,r_name\n0,\n", encoding='utf-8')
    ddl = tmp_path / 'schema.sql'
    ddl.write_text("CREATE TABLE region (r_regionkey INTEGER PRIMARY KEY, r_name VARCHAR(25));", encoding='utf-8')
    with pytest.raises(DataLoadError):
        load_database(str(ddl), str(tmp_path))


def test_mutations_revert_to_same_digest(db):
    """任意变更序列按后进先出回滚后，摘要恢复原值"""
    before = db.digest()
    t1 = db.apply('void', tables=['orders'])
    t2 = db.apply('rename', table='customer', dummy='hqe_dummy_customer')
    t3 = db.apply('set', table='supplier', column='s_acctbal', value=Decimal('1.00'), row=0)
    t4 = db.apply('keep', table='lineitem', indices=[0])
    assert db.digest() != before
    assert db.row_count('orders') == 0
    assert db.row_count('lineitem') == 1
    with pytest.raises(ResolutionError):
        db.resolve('customer')
    assert db.resolve('hqe_dummy_customer') == 'customer'
    for token in (t4, t3, t2, t1):
        db.revert(token)
    assert db.digest() == before
    assert db.pending_tokens == 0


def test_out_of_order_revert_rejected(db):
    t1 = db.apply('void', tables=['orders'])
    db.apply('void', tables=['customer'])
    with pytest.raises(MutationOrderError):
        db.revert(t1)


def test_rename_collision(db):
    with pytest.raises(NameCollisionError):
        db.apply('rename', table='customer', dummy='orders')


def test_set_outside_domain(db):
    with pytest.raises(DomainError):
        db.apply('set', table='customer', column='c_mktsegment', value='NOPE')


def test_derive_keeps_selected_rows(db):
    child = db.derive(keep={'customer': [0]}, label='D1')
    assert child.row_count('customer') == 1
    assert child.label == 'D1'
    assert db.row_count('customer') == 6


def test_fit_classification():
    assert classify_fit(ResultSet(('a',), [])) == FitClass.EMPTY
    assert classify_fit(ResultSet(('a', 'b'), [(1, None)])) == FitClass.UNFIT
    assert classify_fit(ResultSet(('a', 'b'), [(1, None), (1, 2)])) == FitClass.FIT


def test_multiset_diff_counts_duplicates():
    left = ResultSet(('a',), [(1,), (1,), (2,)])
    right = ResultSet(('a',), [(1,), (2,), (3,)])
    only_left, only_right = multiset_diff(left, right)
    assert only_left == {(1,): 1}
    assert only_right == {(3,): 1}


def test_result_digest_ignores_row_order():
    a = ResultSet(('x',), [(1,), (2,)])
    b = ResultSet(('x',), [(2,), (1,)])
    assert a.digest() == b.digest()
    assert ResultSet(('x',), [(1,), (2,)], ordered=True).digest() != ResultSet(('x',), [(2,), (1,)], ordered=True).digest()


def test_dump_and_reload(db, tmp_path):
    """写出 CSV 后重新加载，内容摘要不变"""
    dump_database(db, str(tmp_path))
    assert (tmp_path / 'customer.csv').exists()
    reloaded = load_database(DDL_PATH, str(tmp_path), DOMAINS_PATH)
    assert reloaded.digest() == db.digest()
