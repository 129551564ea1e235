#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
查询执行模块
把 QueryIR 编译为按作用域组织的闭包并在 DatabaseState 上执行，
采用多重集语义与三值逻辑；所有子查询在编译期解析，
因此被重命名的表总会产生解析错误
"""

import logging
import re
from datetime import date, timedelta
from decimal import Decimal, DivisionByZero, InvalidOperation
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple

from hqe_errors import ExecutionError, ResolutionError, TypeMismatchError
from minisql import (Aggregate, And, Arith, Between, ColumnRef, Comparison, DerivedTable, InList,
                     InSubquery, IsNull, Join, Like, Literal, Or, OrderItem, Query, QueryBlock,
                     ScalarSubquery, Star, TableRef, conjuncts, walk_expr)
from relcore import DatabaseState, ResultSet

logger = logging.getLogger(__name__)


class Env:
    """求值环境：当前行、分组行与外层环境"""

    __slots__ = ('row', 'group', 'parent')

    def __init__(self, row, group=None, parent=None):
        self.row = row
        self.group = group
        self.parent = parent


class Scope:
    """列解析作用域"""

    def __init__(self, columns: List[Tuple[str, str]], parent: Optional['Scope'] = None):
        self.columns = columns
        self.parent = parent
        self.bindings = {b for b, _ in columns}
        self.correlated = False

    def _lookup(self, ref: ColumnRef) -> Optional[int]:
        if ref.table is not None:
            if ref.table not in self.bindings:
                return None
            hits = [i for i, (b, c) in enumerate(self.columns) if b == ref.table and c == ref.name]
            if not hits:
                raise ResolutionError(f"column {ref.table}.{ref.name} does not exist")
        else:
            hits = [i for i, (_, c) in enumerate(self.columns) if c == ref.name]
            if not hits:
                return None
        if len(hits) > 1:
            raise ResolutionError(f"column reference \"{ref.name}\" is ambiguous")
        return hits[0]

    def resolve(self, ref: ColumnRef) -> Tuple[int, int]:
        scope, depth = self, 0
        chain = []
        while scope is not None:
            idx = scope._lookup(ref)
            if idx is not None:
                for s in chain:
                    s.correlated = True
                return depth, idx
            chain.append(scope)
            scope, depth = scope.parent, depth + 1
        name = f"{ref.table}.{ref.name}" if ref.table else ref.name
        raise ResolutionError(f"column \"{name}\" does not exist")


# ---------------------------------------------------------------------------
# 值运算
# ---------------------------------------------------------------------------

def _coerce_pair(a, b):
    if isinstance(a, date) and isinstance(b, str):
        return a, _parse_date(b)
    if isinstance(b, date) and isinstance(a, str):
        return _parse_date(a), b
    num = (int, Decimal)
    if isinstance(a, num) and isinstance(b, num):
        return a, b
    if type(a) is not type(b):
        raise TypeMismatchError(f"无法比较 {type(a).__name__} 与 {type(b).__name__}")
    return a, b


def _parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise TypeMismatchError(f"invalid input syntax for type date: {text!r}")


def compare(op: str, a, b) -> Optional[bool]:
    if a is None or b is None:
        return None
    a, b = _coerce_pair(a, b)
    if op == '=':
        return a == b
    if op == '<':
        return a < b
    if op == '<=':
        return a <= b
    if op == '>':
        return a > b
    if op == '>=':
        return a >= b
    raise ExecutionError(f"未知比较运算符 {op}")


def arith(op: str, a, b):
    if a is None or b is None:
        return None
    if isinstance(a, date) or isinstance(b, date):
        if op == '+' and isinstance(a, date) and isinstance(b, int):
            return a + timedelta(days=b)
        if op == '+' and isinstance(b, date) and isinstance(a, int):
            return b + timedelta(days=a)
        if op == '-' and isinstance(a, date) and isinstance(b, int):
            return a - timedelta(days=b)
        if op == '-' and isinstance(a, date) and isinstance(b, date):
            return (a - b).days
        raise TypeMismatchError(f"日期不支持运算 {op}")
    if not isinstance(a, (int, Decimal)) or not isinstance(b, (int, Decimal)):
        raise TypeMismatchError(f"运算符 {op} 需要数值操作数")
    if op == '+':
        return a + b
    if op == '-':
        return a - b
    if op == '*':
        return a * b
    if op == '/':
        if b == 0:
            raise ExecutionError("division by zero")
        if isinstance(a, int) and isinstance(b, int):
            q = abs(a) // abs(b)
            return q if (a >= 0) == (b >= 0) else -q
        try:
            return Decimal(a) / Decimal(b)
        except (DivisionByZero, InvalidOperation) as e:
            raise ExecutionError(f"除法失败: {e}")
    raise ExecutionError(f"未知运算符 {op}")


def like_regex(pattern: str):
    """只有 % 是通配符"""
    return re.compile('.*'.join(re.escape(p) for p in pattern.split('%')), re.DOTALL)


def _and3(values) -> Optional[bool]:
    result = True
    for v in values:
        if v is False:
            return False
        if v is None:
            result = None
    return result


def _or3(values) -> Optional[bool]:
    result = False
    for v in values:
        if v is True:
            return True
        if v is None:
            result = None
    return result


def _aggregate(func: str, values: List[Any], count_star: bool = False):
    if count_star:
        return len(values)
    present = [v for v in values if v is not None]
    if func == 'COUNT':
        return len(present)
    if not present:
        return None
    if func in ('SUM', 'AVG'):
        if any(not isinstance(v, (int, Decimal)) for v in present):
            raise TypeMismatchError(f"{func} 需要数值参数")
        total = sum(present)
        if func == 'SUM':
            return total
        return Decimal(total) / Decimal(len(present))
    if func == 'MIN':
        return min(present)
    if func == 'MAX':
        return max(present)
    raise ExecutionError(f"未知聚合函数 {func}")


def _sort_key(value):
    return (1, 0) if value is None else (0, value)


def default_header(expr) -> str:
    if isinstance(expr, ColumnRef):
        return expr.name
    if isinstance(expr, Aggregate):
        return expr.func.lower()
    return '?column?'


# ---------------------------------------------------------------------------
# 编译
# ---------------------------------------------------------------------------

class _FromUnit:
    """FROM 中的一个独立单元：基表、派生表或含外连接的连接树"""

    def __init__(self, columns: List[Tuple[str, str]], produce: Callable[[Env], List[tuple]], tables: Set[str]):
        self.columns = columns
        self.produce = produce
        self.tables = tables
        self.offset = 0


class Compiler:
    """单次执行的编译器；非相关子查询的结果在本次执行内缓存"""

    def __init__(self, db: DatabaseState):
        self.db = db

    # ---- 查询 ----

    def compile_query(self, q: Query, parent: Optional[Scope]) -> Tuple[List[str], Callable[[Optional[Env]], List[tuple]], bool]:
        compiled = [self.compile_block(b, parent) for b in q.branches]
        headers = compiled[0][0]
        for h, _, _ in compiled[1:]:
            if len(h) != len(headers):
                raise TypeMismatchError("each UNION query must have the same number of columns")
        runners = [c[1] for c in compiled]
        ordered = compiled[0][2] if len(compiled) == 1 else False
        order_fn = None
        if q.order_by:
            order_fn = self._output_order(q.order_by, headers)
            ordered = True
        limit = q.limit

        def run(env: Optional[Env]) -> List[tuple]:
            rows: List[tuple] = []
            for r in runners:
                rows.extend(r(env))
            if order_fn is not None:
                rows = order_fn(rows)
            if limit is not None:
                rows = rows[:limit]
            return rows

        return headers, run, ordered

    def _output_order(self, items: Sequence[OrderItem], headers: List[str]):
        keys = []
        for item in items:
            expr = item.expr
            if isinstance(expr, Literal) and isinstance(expr.value, int):
                idx = expr.value - 1
                if not 0 <= idx < len(headers):
                    raise ResolutionError(f"ORDER BY position {expr.value} is not in select list")
            elif isinstance(expr, ColumnRef) and expr.name in headers:
                idx = headers.index(expr.name)
            else:
                raise ResolutionError("UNION 的 ORDER BY 只能引用输出列")
            keys.append((idx, item.descending))

        def order(rows):
            rows = list(rows)
            for idx, desc in reversed(keys):
                rows.sort(key=lambda r: _sort_key(r[idx]), reverse=desc)
            return rows

        return order

    # ---- FROM ----

    def _unit_for(self, item, parent: Optional[Scope]) -> _FromUnit:
        if isinstance(item, TableRef):
            name = self.db.resolve(item.name)
            schema = self.db.catalog.table(name)
            binding = item.binding
            columns = [(binding, c) for c in schema.column_names]
            db = self.db
            return _FromUnit(columns, lambda env: [tuple(r) for r in db.table_rows(name)], {name})
        if isinstance(item, DerivedTable):
            headers, run, _ = self.compile_query(item.query, None)
            cache: List[Optional[List[tuple]]] = [None]

            def produce(env):
                if cache[0] is None:
                    cache[0] = run(None)
                return cache[0]

            return _FromUnit([(item.alias, h) for h in headers], produce, set())
        if isinstance(item, Join):
            left = self._unit_for(item.left, parent)
            right = self._unit_for(item.right, parent)
            columns = left.columns + right.columns
            scope = Scope(columns, parent)
            cond = self.compile_pred(item.condition, scope, allow_aggregates=False)
            width_right = len(right.columns)
            kind = item.kind

            def produce(env):
                out = []
                right_rows = right.produce(env)
                pad = (None,) * width_right
                for lr in left.produce(env):
                    matched = False
                    for rr in right_rows:
                        combined = lr + rr
                        if cond(Env(combined, None, env)) is True:
                            out.append(combined)
                            matched = True
                    if not matched and kind == 'left':
                        out.append(lr + pad)
                return out

            return _FromUnit(columns, produce, left.tables | right.tables)
        raise ExecutionError(f"未知 FROM 项 {type(item).__name__}")

    def _flatten_from(self, block: QueryBlock) -> Tuple[List[Any], List[Any]]:
        """内连接展开为独立单元与附加合取项；含外连接的树保持为一个单元"""
        items, extra = [], []

        def visit(item):
            if isinstance(item, Join) and item.kind == 'inner' and not _contains_left(item):
                visit(item.left)
                visit(item.right)
                extra.extend(conjuncts(item.condition))
            else:
                items.append(item)

        for item in block.from_:
            visit(item)
        return items, extra

    # ---- 查询块 ----

    def compile_block(self, block: QueryBlock, parent: Optional[Scope]):
        items, extra = self._flatten_from(block)
        units = [self._unit_for(item, parent) for item in items]
        columns: List[Tuple[str, str]] = []
        for u in units:
            u.offset = len(columns)
            columns.extend(u.columns)
        bindings = [b for b, _ in columns]
        seen_bindings = []
        for u in units:
            ub = {b for b, _ in u.columns}
            for b in ub:
                if b in seen_bindings:
                    raise ResolutionError(f"table name \"{b}\" specified more than once")
            seen_bindings.extend(ub)
        scope = Scope(columns, parent)
        width = len(columns)

        # WHERE 合取项规划
        plan = []
        for c in conjuncts(block.where) + extra:
            fn = self.compile_pred(c, scope, allow_aggregates=False)
            refs = self._local_units(c, scope, units)
            has_sub = any(isinstance(n, (InSubquery, ScalarSubquery)) for n in walk_expr(c))
            equi = self._equi_pair(c, scope, units) if not has_sub else None
            plan.append((fn, refs, has_sub, equi))

        # 投影与分组
        select_items = []
        for s in block.select:
            if isinstance(s.expr, Star):
                for i, (b, c) in enumerate(columns):
                    if s.expr.table is None or s.expr.table == b:
                        select_items.append((c, ColumnRef(b, c), i))
                if s.expr.table is not None and s.expr.table not in bindings:
                    raise ResolutionError(f"missing FROM-clause entry for table \"{s.expr.table}\"")
            else:
                select_items.append((s.alias or default_header(s.expr), s.expr, None))
        headers = [h for h, _, _ in select_items]

        has_agg = any(isinstance(n, Aggregate) for _, e, _ in select_items for n in walk_expr(e)) or \
            any(isinstance(n, Aggregate) for o in block.order_by for n in walk_expr(o.expr))
        grouped = bool(block.group_by) or has_agg

        group_fns, group_idx = [], set()
        for g in block.group_by:
            if isinstance(g, ColumnRef):
                try:
                    depth, idx = scope.resolve(g)
                except ResolutionError:
                    match = [e for h, e, _ in select_items if h == g.name and g.table is None]
                    if not match:
                        raise
                    g = match[0]
                    if isinstance(g, ColumnRef):
                        depth, idx = scope.resolve(g)
                        if depth == 0:
                            group_idx.add(idx)
                else:
                    if depth == 0:
                        group_idx.add(idx)
            group_fns.append(self.compile_expr(g, scope, allow_aggregates=False))

        select_fns = []
        for h, e, star_idx in select_items:
            if star_idx is not None:
                if grouped and star_idx not in group_idx:
                    raise ExecutionError(f"column \"{columns[star_idx][1]}\" must appear in the GROUP BY clause")
                select_fns.append(_column_getter(0, star_idx))
                continue
            if grouped:
                self._check_grouping(e, scope, group_idx, block.group_by)
            select_fns.append(self.compile_expr(e, scope, allow_aggregates=grouped))

        order_specs = []
        for o in block.order_by:
            expr = o.expr
            if isinstance(expr, Literal) and isinstance(expr.value, int):
                idx = expr.value - 1
                if not 0 <= idx < len(headers):
                    raise ResolutionError(f"ORDER BY position {expr.value} is not in select list")
                order_specs.append(('out', idx, o.descending))
                continue
            if isinstance(expr, ColumnRef) and expr.table is None and expr.name in headers:
                order_specs.append(('out', headers.index(expr.name), o.descending))
                continue
            if grouped:
                self._check_grouping(expr, scope, group_idx, block.group_by)
            order_specs.append(('expr', self.compile_expr(expr, scope, allow_aggregates=grouped), o.descending))

        limit = block.limit
        ordered = bool(block.order_by)

        def run(env: Optional[Env]) -> List[tuple]:
            rows = _join_units(units, plan, env, width)
            if grouped:
                contexts = []
                if block.group_by:
                    groups: Dict[tuple, List[tuple]] = {}
                    for r in rows:
                        key = tuple(g(Env(r, None, env)) for g in group_fns)
                        groups.setdefault(key, []).append(r)
                    for members in groups.values():
                        contexts.append(Env(members[0], members, env))
                else:
                    contexts.append(Env(rows[0] if rows else None, rows, env))
            else:
                contexts = [Env(r, None, env) for r in rows]
            out = []
            for ctx in contexts:
                values = tuple(f(ctx) for f in select_fns)
                sort_vals = tuple(spec[1](ctx) if spec[0] == 'expr' else values[spec[1]]
                                  for spec in order_specs)
                out.append((values, sort_vals))
            if order_specs:
                for pos in range(len(order_specs) - 1, -1, -1):
                    desc = order_specs[pos][2]
                    out.sort(key=lambda t: _sort_key(t[1][pos]), reverse=desc)
            result = [v for v, _ in out]
            if limit is not None:
                result = result[:limit]
            return result

        return headers, run, ordered

    def _check_grouping(self, expr, scope: Scope, group_idx: Set[int], group_by):
        def visit(node):
            if node in group_by:
                return
            if isinstance(node, Aggregate):
                return
            if isinstance(node, ColumnRef):
                depth, idx = scope.resolve(node)
                if depth == 0 and idx not in group_idx:
                    raise ExecutionError(f"column \"{node.name}\" must appear in the GROUP BY clause "
                                         f"or be used in an aggregate function")
                return
            if isinstance(node, Arith):
                visit(node.left)
                visit(node.right)

        visit(expr)

    def _local_units(self, pred, scope: Scope, units: List[_FromUnit]) -> Set[int]:
        refs = set()
        for node in walk_expr(pred):
            if isinstance(node, ColumnRef):
                depth, idx = scope.resolve(node)
                if depth == 0:
                    refs.add(_unit_of(units, idx))
        return refs

    def _equi_pair(self, pred, scope: Scope, units: List[_FromUnit]):
        if not (isinstance(pred, Comparison) and pred.op == '='):
            return None
        if not (isinstance(pred.left, ColumnRef) and isinstance(pred.right, ColumnRef)):
            return None
        dl, il = scope.resolve(pred.left)
        dr, ir = scope.resolve(pred.right)
        if dl or dr:
            return None
        ul, ur = _unit_of(units, il), _unit_of(units, ir)
        if ul == ur:
            return None
        return (ul, il - units[ul].offset, ur, ir - units[ur].offset)

    # ---- 表达式 ----

    def compile_expr(self, node, scope: Scope, allow_aggregates: bool) -> Callable[[Env], Any]:
        if isinstance(node, ColumnRef):
            depth, idx = scope.resolve(node)
            return _column_getter(depth, idx)
        if isinstance(node, Literal):
            value = node.value
            return lambda env: value
        if isinstance(node, Arith):
            left = self.compile_expr(node.left, scope, allow_aggregates)
            right = self.compile_expr(node.right, scope, allow_aggregates)
            op = node.op
            return lambda env: arith(op, left(env), right(env))
        if isinstance(node, Aggregate):
            if not allow_aggregates:
                raise ExecutionError("aggregate functions are not allowed here")
            func = node.func
            if node.arg is None:
                return lambda env: _aggregate('COUNT', env.group or [], count_star=True)
            arg = self.compile_expr(node.arg, scope, allow_aggregates=False)

            def agg(env):
                return _aggregate(func, [arg(Env(r, None, env.parent)) for r in (env.group or [])])

            return agg
        if isinstance(node, ScalarSubquery):
            return self._compile_scalar(node.query, scope)
        if isinstance(node, Star):
            raise ResolutionError("* 只能出现在 SELECT 列表中")
        return self.compile_pred(node, scope, allow_aggregates)

    def _compile_subquery(self, q: Query, scope: Scope):
        inner_scope_parent = scope
        marker = Scope([], inner_scope_parent)
        headers, run, _ = self.compile_query(q, marker)
        if len(headers) != 1:
            raise ExecutionError("subquery must return only one column")
        correlated = marker.correlated
        cache: Dict[str, List[tuple]] = {}

        def rows_for(env: Env) -> List[tuple]:
            if not correlated:
                if 'rows' not in cache:
                    cache['rows'] = run(Env(None, None, env))
                return cache['rows']
            return run(Env(None, None, env))

        return rows_for

    def _compile_scalar(self, q: Query, scope: Scope):
        rows_for = self._compile_subquery(q, scope)

        def scalar(env):
            rows = rows_for(env)
            if not rows:
                return None
            if len(rows) > 1:
                raise ExecutionError("more than one row returned by a subquery used as an expression")
            return rows[0][0]

        return scalar

    def compile_pred(self, node, scope: Scope, allow_aggregates: bool) -> Callable[[Env], Optional[bool]]:
        if isinstance(node, Comparison):
            left = self.compile_expr(node.left, scope, allow_aggregates)
            right = self.compile_expr(node.right, scope, allow_aggregates)
            op = node.op
            return lambda env: compare(op, left(env), right(env))
        if isinstance(node, Between):
            e = self.compile_expr(node.expr, scope, allow_aggregates)
            lo = self.compile_expr(node.low, scope, allow_aggregates)
            hi = self.compile_expr(node.high, scope, allow_aggregates)

            def between(env):
                v = e(env)
                return _and3([compare('>=', v, lo(env)), compare('<=', v, hi(env))])

            return between
        if isinstance(node, Like):
            e = self.compile_expr(node.expr, scope, allow_aggregates)
            regex = like_regex(node.pattern)

            def like(env):
                v = e(env)
                if v is None:
                    return None
                if not isinstance(v, str):
                    raise TypeMismatchError("LIKE 需要文本操作数")
                return regex.fullmatch(v) is not None

            return like
        if isinstance(node, InList):
            e = self.compile_expr(node.expr, scope, allow_aggregates)
            values = [lit.value for lit in node.values]

            def in_list(env):
                return _in_values(e(env), values)

            return in_list
        if isinstance(node, InSubquery):
            e = self.compile_expr(node.expr, scope, allow_aggregates)
            rows_for = self._compile_subquery(node.query, scope)

            def in_sub(env):
                v = e(env)
                if v is None:
                    return None
                return _in_values(v, [r[0] for r in rows_for(env)])

            return in_sub
        if isinstance(node, IsNull):
            e = self.compile_expr(node.expr, scope, allow_aggregates)
            negated = node.negated
            return lambda env: (e(env) is not None) if negated else (e(env) is None)
        if isinstance(node, And):
            items = [self.compile_pred(i, scope, allow_aggregates) for i in node.items]
            return lambda env: _and3(f(env) for f in items)
        if isinstance(node, Or):
            items = [self.compile_pred(i, scope, allow_aggregates) for i in node.items]
            return lambda env: _or3(f(env) for f in items)
        raise TypeMismatchError(f"argument of WHERE must be type boolean, not {type(node).__name__}")


def _in_values(v, values) -> Optional[bool]:
    if v is None:
        return None
    saw_null = False
    for candidate in values:
        result = compare('=', v, candidate)
        if result is True:
            return True
        if result is None:
            saw_null = True
    return None if saw_null else False


def _contains_left(item) -> bool:
    if isinstance(item, Join):
        return item.kind == 'left' or _contains_left(item.left) or _contains_left(item.right)
    return False


def _column_getter(depth: int, idx: int):
    if depth == 0:
        return lambda env: env.row[idx]

    def get(env):
        e = env
        for _ in range(depth):
            e = e.parent
        return e.row[idx]

    return get


def _unit_of(units: List[_FromUnit], idx: int) -> int:
    for i in range(len(units) - 1, -1, -1):
        if idx >= units[i].offset:
            return i
    return 0


def _assemble(parts: Dict[int, tuple], units: List[_FromUnit], width: int) -> tuple:
    row = []
    for i, u in enumerate(units):
        part = parts.get(i)
        row.extend(part if part is not None else (None,) * len(u.columns))
    return tuple(row)


def _join_units(units: List[_FromUnit], plan, env: Optional[Env], width: int) -> List[tuple]:
    """下推单表谓词，按等值连接的连通性贪心地做哈希连接，含子查询的谓词最后求值"""
    unit_rows = []
    applied = [False] * len(plan)
    for i, u in enumerate(units):
        rows = u.produce(env)
        for k, (fn, refs, has_sub, _) in enumerate(plan):
            if not has_sub and refs == {i}:
                rows = [r for r in rows if fn(Env(_assemble({i: r}, units, width), None, env)) is True]
                applied[k] = True
        unit_rows.append(rows)

    for k, (fn, refs, has_sub, _) in enumerate(plan):
        if not has_sub and not refs and not applied[k]:
            # 只引用外层或常量的谓词
            if fn(Env(_assemble({}, units, width), None, env)) is not True:
                return []
            applied[k] = True

    if not units:
        return []
    joined = {0}
    partials: List[Dict[int, tuple]] = [{0: r} for r in unit_rows[0]]
    while len(joined) < len(units):
        candidates = []
        for k, (_, _, _, equi) in enumerate(plan):
            if equi is None or applied[k]:
                continue
            ul, _, ur, _ = equi
            if ul in joined and ur not in joined:
                candidates.append(ur)
            elif ur in joined and ul not in joined:
                candidates.append(ul)
        nxt = min(candidates) if candidates else min(set(range(len(units))) - joined)
        keys = []
        for k, (_, _, _, equi) in enumerate(plan):
            if equi is None or applied[k]:
                continue
            ul, il, ur, ir = equi
            if ul in joined and ur == nxt:
                keys.append((ul, il, ir))
                applied[k] = True
            elif ur in joined and ul == nxt:
                keys.append((ur, ir, il))
                applied[k] = True
        new_partials = []
        if keys:
            table: Dict[tuple, List[tuple]] = {}
            for r in unit_rows[nxt]:
                key = tuple(r[local] for _, _, local in keys)
                if any(v is None for v in key):
                    continue
                table.setdefault(key, []).append(r)
            for p in partials:
                key = tuple(p[u][i] for u, i, _ in keys)
                if any(v is None for v in key):
                    continue
                for r in table.get(key, ()):
                    merged = dict(p)
                    merged[nxt] = r
                    new_partials.append(merged)
        else:
            for p in partials:
                for r in unit_rows[nxt]:
                    merged = dict(p)
                    merged[nxt] = r
                    new_partials.append(merged)
        partials = new_partials
        joined.add(nxt)
        for k, (fn, refs, has_sub, _) in enumerate(plan):
            if not applied[k] and not has_sub and refs and refs <= joined:
                partials = [p for p in partials
                            if fn(Env(_assemble(p, units, width), None, env)) is True]
                applied[k] = True
        if not partials:
            return []

    rows = [_assemble(p, units, width) for p in partials]
    for k, (fn, _, _, _) in enumerate(plan):
        if not applied[k]:
            rows = [r for r in rows if fn(Env(r, None, env)) is True]
    return rows


def compile_query(q: Query, db: DatabaseState):
    """编译查询，返回 (列头, 执行函数, 是否有序)"""
    return Compiler(db).compile_query(q, None)


def execute(q: Query, db: DatabaseState) -> ResultSet:
    """
    在数据库状态上执行查询

    Args:
        q: 查询中间表示
        db: 数据库状态（遵循重命名覆盖层与清空集合）

    Returns:
        结果集

    Raises:
        ResolutionError: 表或列无法解析
        TypeMismatchError: 类型不兼容
        ExecutionError: 执行期错误
    """
    headers, run, ordered = compile_query(q, db)
    rows = run(None)
    return ResultSet(tuple(headers), rows, ordered)
