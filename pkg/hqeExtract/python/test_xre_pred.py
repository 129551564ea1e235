#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
谓词抽取测试：算术区间、LIKE、等值类、IN 列表、外连接析取与种子拼装
"""

from datetime import date
from decimal import Decimal

import numpy as np
import pytest

from conftest import DDL_PATH, DOMAINS_PATH, EXAMPLE_DIR
from journal import SessionJournal
from minisql import ColumnRef, SelectItem
from mutator import is_fit, minimize, set_value
from relcore import load_database
from xre_pred import (BlockSpec, BranchContext, ColumnKey, PredicateAtom, SValueInterval, assemble_seed,
                      compute_svi_all, confirm_inequality, enumerate_inequality_candidates, extract_branch_predicates,
                      extract_equalities, extract_filter_bounds, extract_in_list)

FILTER_SQL = ("SELECT c_name, c_acctbal FROM customer "
              "WHERE c_acctbal <= 10000.00 AND c_mktsegment IN ('BUILDING', 'MACHINERY')")
JOIN_SQL = ("SELECT c_name, o_orderkey FROM customer, orders "
            "WHERE c_custkey = o_custkey AND o_totalprice >= 100000.00")
OUTER_SQL = ("SELECT c_name FROM customer LEFT OUTER JOIN orders ON c_custkey = o_custkey "
             "WHERE c_acctbal <= 10000 OR o_orderkey IS NULL")
INEQ_SQL = ("SELECT s_name FROM supplier, lineitem, orders "
            "WHERE l_suppkey = s_suppkey AND l_orderkey = o_orderkey AND s_acctbal <= o_totalprice")

SUPPLIER_SQL = ("SELECT s_name, s_phone FROM supplier, lineitem, orders "
                "WHERE l_suppkey = s_suppkey AND l_orderkey = o_orderkey AND s_acctbal <= o_totalprice "
                "AND l_commitdate = l_receiptdate AND l_shipmode IN ('AIR', 'TRUCK')")

ACCTBAL = ColumnKey('customer', 'c_acctbal')
SEGMENT = ColumnKey('customer', 'c_mktsegment')


def _context(db, h, tables):
    d1 = minimize(db, h, tables)
    return BranchContext.for_d1(h, d1, source=db, tables=tables)


def test_interval_validation():
    with pytest.raises(ValueError):
        SValueInterval(ACCTBAL, Decimal('5'), Decimal('1'))
    with pytest.raises(ValueError):
        PredicateAtom('arith', ACCTBAL, '<>', 1)
    with pytest.raises(ValueError):
        PredicateAtom('in_list', SEGMENT, value=('A', 'A'))


def test_filter_bounds_binary_search(db, oracle_for):
    """上界二分到 10000.00，下界探测 i_min 直接满足"""
    ctx = _context(db, oracle_for(FILTER_SQL), ['customer'])
    svi = extract_filter_bounds(ctx, ACCTBAL)
    assert svi.ub == Decimal('10000.00')
    assert svi.lb == Decimal('-999.99')
    assert not svi.is_point


def test_sve_marks_restricted_categorical(db, oracle_for):
    ctx = _context(db, oracle_for(FILTER_SQL), ['customer'])
    svi = compute_svi_all(ctx)
    assert svi.restricted[SEGMENT] == ('BUILDING', 'MACHINERY')
    assert not svi[ColumnKey('customer', 'c_custkey')].is_point


def test_filter_and_in_list_predicates(db, oracle_for):
    ctx = _context(db, oracle_for(FILTER_SQL), ['customer'])
    preds = extract_branch_predicates(ctx)
    described = {a.describe() for a in preds.atoms}
    assert 'customer.c_acctbal <= 10000.00' in described
    assert "customer.c_mktsegment IN ['BUILDING', 'MACHINERY']" in described
    assert ctx.in_list_rounds[SEGMENT] == 2
    assert len(preds.atoms) == 2


def test_join_equality_class(db, oracle_for):
    """两表连接列构成等值类，o_totalprice 得到下界"""
    ctx = _context(db, oracle_for(JOIN_SQL), ['customer', 'orders'])
    preds = extract_branch_predicates(ctx)
    assert [ColumnKey('customer', 'c_custkey'), ColumnKey('orders', 'o_custkey')] in preds.classes
    described = {a.describe() for a in preds.atoms}
    assert 'customer.c_custkey = orders.o_custkey' in described
    assert 'orders.o_totalprice >= 100000.00' in described


def test_equalities_from_point_intervals(db, oracle_for):
    ctx = _context(db, oracle_for(JOIN_SQL), ['customer', 'orders'])
    atoms = extract_equalities(ctx, compute_svi_all(ctx))
    assert [a.describe() for a in atoms] == ['customer.c_custkey = orders.o_custkey']


def test_column_inequality_confirmed(db, oracle_for):
    """s_acctbal 的上界恰为 o_totalprice 的取值，改值后 o_totalprice 的下界随之移动"""
    ctx = _context(db, oracle_for(INEQ_SQL), ['lineitem', 'orders', 'supplier'])
    svi = compute_svi_all(ctx)
    edge = (ColumnKey('supplier', 's_acctbal'), ColumnKey('orders', 'o_totalprice'))
    assert edge in enumerate_inequality_candidates(ctx.d1, svi)
    atom = confirm_inequality(ctx, svi, edge)
    assert atom.describe() == 'supplier.s_acctbal <= orders.o_totalprice'


def test_in_list_literal_by_literal(db, oracle_for):
    ctx = _context(db, oracle_for(FILTER_SQL), ['customer'])
    compute_svi_all(ctx)
    atom = extract_in_list(ctx, SEGMENT)
    assert atom.kind == 'in_list'
    assert sorted(atom.value) == ['BUILDING', 'MACHINERY']


def test_like_prefix(db, oracle_for):
    ctx = _context(db, oracle_for("SELECT p_partkey FROM part WHERE p_type LIKE 'STANDARD%'"), ['part'])
    preds = extract_branch_predicates(ctx)
    likes = [a for a in preds.atoms if a.kind == 'like']
    assert len(likes) == 1 and likes[0].value == 'STANDARD%'


def test_outer_join_null_guard(db, oracle_for):
    """补空侧表加入外键等值，另一侧的过滤包上 IS NULL 析取"""
    ctx = _context(db, oracle_for(OUTER_SQL), ['customer', 'orders'])
    assert ctx.optional_tables == {'orders'}
    preds = extract_branch_predicates(ctx)
    fk = [a for a in preds.atoms if a.provenance == 'outer-join-fk']
    assert [a.describe() for a in fk] == ['customer.c_custkey = orders.o_custkey']
    guarded = [a for a in preds.atoms if a.null_guard is not None]
    assert [a.describe() for a in guarded] == ['(customer.c_acctbal <= 10000.00 OR orders.o_orderkey IS NULL)']
    assert ctx.heuristics


def test_assemble_seed_merges_between(catalog):
    price = ColumnKey('orders', 'o_totalprice')
    block = BlockSpec(
        tables=['orders'],
        atoms=[PredicateAtom('arith', price, '>=', Decimal('100.00')),
               PredicateAtom('arith', price, '<=', Decimal('200.00'))],
        select=[SelectItem(ColumnRef(None, 'o_orderkey'))],
    )
    query, rendered = assemble_seed([block], catalog)
    assert 'BETWEEN 100.00 AND 200.00' in rendered.text
    assert not query.is_union


def test_assemble_seed_union_of_branches(catalog):
    a = BlockSpec(tables=['customer'], atoms=[], select=[SelectItem(ColumnRef(None, 'c_name'), 'name')])
    b = BlockSpec(tables=['supplier'], atoms=[], select=[SelectItem(ColumnRef(None, 's_name'), 'name')])
    query, rendered = assemble_seed([a, b], catalog)
    assert query.is_union
    assert 'UNION ALL' in rendered.text


def test_sve_on_fixed_witness(db, oracle_for):
    """D¹ 固定为供应商 1、订单 2739811 及其第一条明细"""
    h = oracle_for(SUPPLIER_SQL)
    d1 = db.derive(keep={'supplier': [0], 'lineitem': [6], 'orders': [5]})
    ctx = BranchContext.for_d1(h, d1, source=db, tables=['lineitem', 'orders', 'supplier'])
    svi = compute_svi_all(ctx)
    s_acctbal, o_totalprice = ColumnKey('supplier', 's_acctbal'), ColumnKey('orders', 'o_totalprice')
    assert svi[s_acctbal].lb == ctx.domain(s_acctbal).i_min
    assert svi[s_acctbal].ub == Decimal('150971.81')
    assert svi[o_totalprice].lb == Decimal('2530.46')
    assert svi[o_totalprice].ub == ctx.domain(o_totalprice).i_max
    for key in (ColumnKey('lineitem', 'l_orderkey'), ColumnKey('orders', 'o_orderkey')):
        assert svi[key].is_point and svi[key].lb == 2739811
    for key in (ColumnKey('lineitem', 'l_commitdate'), ColumnKey('lineitem', 'l_receiptdate')):
        assert svi[key].is_point and svi[key].lb == date(1995, 3, 16)

    edge = (s_acctbal, o_totalprice)
    assert edge in enumerate_inequality_candidates(d1, svi)
    assert confirm_inequality(ctx, svi, edge).describe() == 'supplier.s_acctbal <= orders.o_totalprice'
    pairs = {frozenset(str(k) for k in a.columns()) for a in extract_equalities(ctx, svi)}
    assert frozenset({'lineitem.l_orderkey', 'orders.o_orderkey'}) in pairs
    assert frozenset({'lineitem.l_commitdate', 'lineitem.l_receiptdate'}) in pairs


def test_five_literal_in_list_rounds(oracle_for):
    """每个字面量一轮：屏蔽已得字面量后重新最小化，第六次不再 FIT"""
    journal = SessionJournal()
    db = load_database(DDL_PATH, EXAMPLE_DIR, DOMAINS_PATH, journal=journal)
    h = oracle_for("SELECT l_orderkey, l_linenumber FROM lineitem "
                   "WHERE l_shipmode IN ('AIR', 'FOB', 'MAIL', 'SHIP', 'TRUCK')")
    ctx = _context(db, h, ['lineitem'])
    preds = extract_branch_predicates(ctx)
    shipmode = ColumnKey('lineitem', 'l_shipmode')
    atoms = [a for a in preds.atoms if a.column == shipmode]
    assert sorted(atoms[0].value) == ['AIR', 'FOB', 'MAIL', 'SHIP', 'TRUCK']
    assert ctx.in_list_rounds[shipmode] == 5
    assert [r.field('round') for r in journal.of_kind('in_list_round')] == [1, 2, 3, 4, 5]


COMMIT = ColumnKey('lineitem', 'l_commitdate')
RECEIPT = ColumnKey('lineitem', 'l_receiptdate')


@pytest.mark.parametrize('op, row', [('<', 2), ('<=', 6)])
def test_same_table_inequality_at_bound(db, oracle_for, op, row):
    """D¹ 的 x 恰在其上界：向下移动 x 后 y 的下界随之移动，运算符由移动量决定"""
    h = oracle_for(f"SELECT l_orderkey, l_linenumber FROM lineitem WHERE l_commitdate {op} l_receiptdate")
    d1 = db.derive(keep={'lineitem': [row]})
    ctx = BranchContext.for_d1(h, d1, source=db, tables=['lineitem'])
    svi = compute_svi_all(ctx)
    assert ctx.cell(COMMIT) == svi[COMMIT].ub
    assert (COMMIT, RECEIPT) in enumerate_inequality_candidates(d1, svi)
    atom = confirm_inequality(ctx, svi, (COMMIT, RECEIPT))
    assert atom is not None
    assert (atom.column, atom.op, atom.other) == (COMMIT, op, RECEIPT)
    assert svi[RECEIPT].floating == COMMIT


def test_binary_search_matches_exhaustive_scan(db, oracle_for):
    """p_size 网格只有 50 个点：二分查找的上下界与逐点扫描一致"""
    rng = np.random.default_rng(13)
    key = ColumnKey('part', 'p_size')
    for _ in range(30):
        lo = int(rng.integers(1, 51))
        hi = int(rng.integers(lo, 51))
        h = oracle_for(f"SELECT p_name FROM part WHERE p_size BETWEEN {lo} AND {hi}")
        d1 = db.derive(keep={'part': [0]})
        set_value(d1, 'part', 'p_size', int(rng.integers(lo, hi + 1)))
        ctx = BranchContext.for_d1(h, d1, source=db, tables=['part'])
        domain = ctx.domain(key)
        grid = range(domain.grid_min, domain.grid_max + 1)
        assert len(grid) <= 256
        fit = [g for g in grid if is_fit(ctx.result([(key, domain.from_grid(g))]))]
        interval = extract_filter_bounds(ctx, key)
        assert (interval.lb, interval.ub) == (domain.from_grid(fit[0]), domain.from_grid(fit[-1]))
        assert (interval.lb, interval.ub) == (lo, hi)
