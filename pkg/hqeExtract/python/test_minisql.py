#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
minisql 测试：解析、渲染、规范化与遍历工具
"""

from datetime import date
from decimal import Decimal

import numpy as np
import pytest

from hqe_errors import SqlSyntaxError, UnsupportedFeatureError
from minisql import (Aggregate, And, Between, ColumnRef, Comparison, DerivedTable, InList, InSubquery, IsNull, Join,
                     Like, Literal, Or, OrderItem, Query, QueryBlock, RenderedSQL, SelectItem, TableRef, canonicalize,
                     conjuncts, iter_blocks, output_names, parse_sql, render_sql, sql_digest, table_multiset,
                     walk_expr)


def test_parse_running_example(hidden_sql):
    """运行示例：派生表里的 UNION ALL、外连接与 IN 子查询"""
    q = parse_sql(hidden_sql)
    outer = q.branches[0]
    assert isinstance(outer.from_[0], DerivedTable)
    union = outer.from_[0].query
    assert union.is_union and len(union.branches) == 2
    first, second = union.branches
    assert isinstance(first.from_[0], Join) and first.from_[0].kind == 'left'
    assert any(isinstance(n, InSubquery) for n in walk_expr(second.where))
    assert output_names(q) == ['*']
    assert output_names(union) == ['name', 'phone']


def test_identifiers_are_lowercased():
    q = parse_sql("SELECT C_NAME FROM Customer WHERE C_ACCTBAL <= 10")
    assert q.branches[0].select[0].expr == ColumnRef(None, 'c_name')
    assert q.branches[0].from_[0] == TableRef('customer')


def test_typed_literals():
    q = parse_sql("SELECT l_orderkey FROM lineitem WHERE l_shipdate <= DATE '1996-06-30' AND l_quantity >= 2.50")
    lits = [n for n in walk_expr(q.branches[0].where) if isinstance(n, Literal)]
    assert Literal(date(1996, 6, 30)) in lits
    assert Literal(Decimal('2.50')) in lits


def test_render_reparse_is_stable(hidden_sql):
    q = parse_sql(hidden_sql)
    text = render_sql(q)
    assert render_sql(parse_sql(text)) == text


def test_canonical_digest_ignores_surface_form():
    """别名、连接写法、合取顺序、等式方向与 >= 方向不影响规范摘要"""
    a = parse_sql("SELECT c_name FROM customer c JOIN orders o ON c.c_custkey = o.o_custkey "
                  "WHERE o.o_totalprice >= 100 AND c.c_acctbal <= 10000.00")
    b = parse_sql("SELECT c_name FROM orders, customer WHERE c_acctbal <= 10000 AND o_custkey = c_custkey "
                  "AND 100 <= o_totalprice")
    assert sql_digest(a) == sql_digest(b)
    assert RenderedSQL.of(a).text != RenderedSQL.of(b).text


def test_canonical_digest_keeps_outer_join():
    inner = parse_sql("SELECT c_name FROM customer JOIN orders ON c_custkey = o_custkey")
    outer = parse_sql("SELECT c_name FROM customer LEFT OUTER JOIN orders ON c_custkey = o_custkey")
    assert sql_digest(inner) != sql_digest(outer)


def test_in_list_order_is_canonical():
    a = parse_sql("SELECT l_orderkey FROM lineitem WHERE l_shipmode IN ('TRUCK', 'AIR')")
    b = parse_sql("SELECT l_orderkey FROM lineitem WHERE l_shipmode IN ('AIR', 'TRUCK')")
    assert sql_digest(a) == sql_digest(b)


@pytest.mark.parametrize('sql', [
    "SELECT DISTINCT c_name FROM customer",
    "SELECT c_name FROM customer WHERE c_acctbal <> 5",
    "SELECT c_name FROM customer RIGHT JOIN orders ON c_custkey = o_custkey",
    "SELECT c_name FROM customer WHERE NOT c_acctbal <= 5",
    "SELECT c_name FROM customer GROUP BY c_name HAVING COUNT(*) > 1",
    "SELECT c_name FROM customer UNION SELECT s_name FROM supplier",
])
def test_unsupported_constructs(sql):
    with pytest.raises(UnsupportedFeatureError):
        parse_sql(sql)


def test_nesting_depth_limit():
    sql = ("SELECT c_name FROM customer WHERE c_custkey IN (SELECT o_custkey FROM orders WHERE o_orderkey IN "
           "(SELECT l_orderkey FROM lineitem WHERE l_suppkey IN (SELECT s_suppkey FROM supplier)))")
    with pytest.raises(UnsupportedFeatureError):
        parse_sql(sql)


def test_syntax_error_has_span():
    with pytest.raises(SqlSyntaxError) as info:
        parse_sql("SELECT c_name FROM WHERE")
    assert info.value.span is not None


def test_table_multiset_counts_subqueries(hidden_sql):
    counts = table_multiset(parse_sql(hidden_sql))
    assert counts == {'customer': 1, 'orders': 2, 'supplier': 1, 'lineitem': 1}


def test_iter_blocks_depths(hidden_sql):
    depths = sorted(d for _, d in iter_blocks(parse_sql(hidden_sql)))
    assert depths[0] == 0
    assert max(depths) <= 2


def test_conjuncts_flatten():
    q = parse_sql("SELECT c_name FROM customer WHERE c_acctbal <= 10 AND (c_custkey = 1 AND c_name = 'x')")
    parts = conjuncts(q.branches[0].where)
    assert len(parts) == 3
    assert all(isinstance(p, Comparison) for p in parts)


_COLUMNS = {
    'c_custkey': [1, 4, 6], 'c_acctbal': [Decimal('0.50'), Decimal('9999.99'), Decimal('12.00')],
    'c_name': ['Customer#000000001', "O'Brien"], 'c_mktsegment': ['BUILDING', 'MACHINERY', 'AUTOMOBILE'],
    'o_orderkey': [1, 2739811], 'o_totalprice': [Decimal('100000.00'), Decimal('32151.78')],
    'o_orderdate': [date(1995, 3, 16), date(1996, 1, 2)], 'o_orderstatus': ['F', 'O', 'P'],
}


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


def _atom(rng):
    name = _pick(rng, list(_COLUMNS))
    col, values = ColumnRef(None, name), _COLUMNS[name]
    kind = int(rng.integers(6))
    if kind == 0:
        return Comparison(_pick(rng, ['=', '<', '<=', '>', '>=']), col, Literal(_pick(rng, values)))
    if kind == 1:
        low, high = sorted(values[:2], key=str)
        return Between(col, Literal(low), Literal(high))
    if kind == 2 and isinstance(values[0], str):
        return Like(col, values[0][:3] + '%')
    if kind == 3:
        return InList(col, tuple(Literal(v) for v in values))
    if kind == 4:
        return IsNull(col, bool(rng.integers(2)))
    return Comparison('=', ColumnRef(None, 'c_custkey'), ColumnRef(None, 'o_custkey'))


def _predicate(rng, depth=0):
    n = int(rng.integers(1, 4))
    if n == 1 or depth > 1:
        return _atom(rng)
    node = And if depth % 2 == 0 else Or
    items = [_predicate(rng, depth + 1) for _ in range(n)]
    items = [i for i in items if not isinstance(i, node)]
    return node(tuple(items)) if len(items) > 1 else (items[0] if items else _atom(rng))


def _block(rng, width):
    names = list(_COLUMNS)
    picks = [names[int(k)] for k in rng.choice(len(names), size=width, replace=False)]
    select = [SelectItem(ColumnRef(None, n), _pick(rng, [None, f"col{i}"])) for i, n in enumerate(picks)]
    group_by = ()
    if rng.random() < 0.3:
        group_by = tuple(s.expr for s in select)
        select.append(SelectItem(Aggregate('COUNT')))
    if rng.random() < 0.5:
        from_ = (TableRef('customer'), TableRef('orders'))
    else:
        kind = _pick(rng, ['inner', 'left'])
        on = Comparison('=', ColumnRef(None, 'c_custkey'), ColumnRef(None, 'o_custkey'))
        from_ = (Join(TableRef('customer'), TableRef('orders'), kind, on),)
    where = _predicate(rng) if rng.random() < 0.9 else None
    order_by = ()
    if rng.random() < 0.4:
        order_by = (OrderItem(select[0].expr, bool(rng.integers(2))),)
    limit = int(rng.integers(1, 20)) if rng.random() < 0.3 else None
    return QueryBlock(tuple(select), from_, where, group_by, order_by, limit)


def _random_query(rng):
    width = int(rng.integers(1, 4))
    if rng.random() < 0.2:
        branches = []
        for _ in range(2):
            b = _block(rng, width)
            branches.append(QueryBlock(b.select[:width], b.from_, b.where))
        return Query(tuple(branches))
    return Query((_block(rng, width),))


def test_render_parse_fixpoint_on_random_queries():
    """随机中间表示渲染后再解析、再渲染，文本不变"""
    rng = np.random.default_rng(3)
    for _ in range(100):
        text = render_sql(_random_query(rng))
        assert render_sql(parse_sql(text)) == text


def test_canonicalize_is_idempotent():
    rng = np.random.default_rng(5)
    for _ in range(100):
        once = canonicalize(parse_sql(render_sql(_random_query(rng))))
        assert canonicalize(once) == once
        assert sql_digest(parse_sql(render_sql(once))) == sql_digest(once)
