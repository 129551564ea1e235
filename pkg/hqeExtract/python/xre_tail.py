#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
尾部子句抽取模块
在 D¹ 上通过扰动取值、复制行与放大行数推断投影、聚合、GROUP BY、ORDER BY 与 LIMIT
"""

import logging
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from itertools import permutations, product
from typing import Any, Dict, List, Optional, Sequence, Tuple

from minisql import Aggregate, Arith, ColumnRef, Literal, OrderItem, SelectItem, render_expr
from mutator import is_fit, replace_rows
from oracle import EngineError
from relcore import DomainKind, ResultSet
from sql_executor import default_header
from xre_pred import BranchContext, BranchPredicates, ColumnKey, column_ref

logger = logging.getLogger(__name__)

MAX_ORDER_KEYS = 4


@dataclass
class Unit:
    """可移动单元：一个等值类或一列，改值时成员同步"""

    keys: Tuple[ColumnKey, ...]
    values: List[Any] = field(default_factory=list)

    @property
    def tables(self) -> List[str]:
        return sorted({k.table for k in self.keys})

    def __str__(self):
        return ' = '.join(str(k) for k in self.keys)


@dataclass
class TailClauses:
    select: List[SelectItem]
    group_by: List[Any] = field(default_factory=list)
    order_by: List[OrderItem] = field(default_factory=list)
    limit: Optional[int] = None
    grouped: bool = False
    ambiguities: List[str] = field(default_factory=list)


@dataclass
class OrderKey:
    """ORDER BY 键；column 为空时该键未投影，按标记列读出"""

    unit: int
    descending: bool
    column: Optional[int] = None


class TailExtractor:
    """
    尾部子句抽取器

    依赖：改变某单元的取值后发生变化的输出列依赖该单元；
    聚合：整表复制一行后输出仍为一行即为分组/聚合查询，翻倍的输出为 SUM 或 COUNT(*)；
    分组：附加一行只在某单元上取不同值，输出分裂为两行即为分组列
    """

    def __init__(self, ctx: BranchContext, preds: BranchPredicates):
        self.ctx = ctx
        self.preds = preds
        self.catalog = ctx.d1.catalog
        self.ambiguities: List[str] = []
        self.units: List[Unit] = []
        self.pinned: List[ColumnKey] = []
        self._collect_units()

    # ---- 单元与取值 ----

    def _collect_units(self):
        in_class = set()
        for chain in self.preds.classes:
            in_class.update(chain)
            unit = Unit(tuple(chain))
            unit.values = self._values(unit, 8)
            self.units.append(unit)
        for key in self.ctx.columns():
            if key in in_class:
                continue
            unit = Unit((key,))
            unit.values = self._values(unit, 8)
            if unit.values:
                self.units.append(unit)
            else:
                self.pinned.append(key)

    def _region(self, unit: Unit):
        key = unit.keys[0]
        if len(unit.keys) > 1:
            bounds = self.ctx.class_bounds.get(unit.keys)
            if bounds is not None:
                return bounds
            domain = self.ctx.domain(key)
            return domain.i_min, domain.i_max
        interval = self.preds.svi.get(key)
        if interval is None:
            domain = self.ctx.domain(key)
            return domain.i_min, domain.i_max
        return interval.lb, interval.ub

    def _values(self, unit: Unit, n: int) -> List[Any]:
        """单元在满足区域内的其他取值（升序，不含 D¹ 当前值）"""
        key = unit.keys[0]
        domain = self.ctx.domain(key)
        v0 = self.ctx.cell(key)
        if domain.kind == DomainKind.TEXT_FREE:
            pattern = self.preds.svi.like.get(key)
            interval = self.preds.svi.get(key)
            if pattern is None and interval is not None and interval.is_point and len(unit.keys) == 1:
                return []
            if pattern is None or pattern.endswith('%'):
                return [v0 + chr(ord('a') + i) for i in range(min(n, 26))]
            if pattern.startswith('%'):
                return [chr(ord('a') + i) + v0 for i in range(min(n, 26))]
            return []
        if domain.kind == DomainKind.TEXT_CATEGORICAL:
            allowed = self.preds.svi.restricted.get(key, domain.enum_values)
            for atom in self.preds.atoms:
                if atom.column == key and atom.kind == 'in_list':
                    allowed = atom.value
            return sorted(v for v in allowed if v != v0)[:n]
        lb, ub = self._region(unit)
        g0, g_lb, g_ub = domain.to_grid(v0), domain.to_grid(lb), domain.to_grid(ub)
        grid = [g for g in range(g0 + 1, min(g_ub, g0 + n) + 1)]
        if len(grid) < n:
            grid += [g for g in range(g0 - 1, max(g_lb, g0 - (n - len(grid))) - 1, -1)]
        return [domain.from_grid(g) for g in sorted(grid)]

    def _assign(self, unit: Unit, value) -> List[Tuple[ColumnKey, Any]]:
        return [(k, value) for k in unit.keys]

    # ---- 复制行 ----

    def _rows_with(self, table: str, copies: Sequence[Dict[str, Any]]) -> List[List[Any]]:
        schema = self.catalog.table(table)
        base = self.ctx.d1.raw_rows(table)[0]
        rows = []
        for changes in copies:
            row = list(base)
            for column, value in changes.items():
                row[schema.index_of(column)] = self.ctx.domain(ColumnKey(table, column)).coerce(value)
            rows.append(row)
        return rows

    def _run_rows(self, table_rows: Dict[str, List[List[Any]]]) -> Optional[ResultSet]:
        d1 = self.ctx.d1
        tokens = [replace_rows(d1, t, rows) for t, rows in sorted(table_rows.items())]
        try:
            self.ctx.probes += 1
            outcome = self.ctx.h.invoke(d1)
        finally:
            for token in reversed(tokens):
                d1.revert(token)
        if isinstance(outcome, EngineError):
            self.ambiguities.append(f"复制行探测时黑盒报错 [{outcome.kind}]")
            return None
        return outcome

    def _replicate(self, assignments: List[Dict[int, Any]], units: List[Unit]) -> Optional[ResultSet]:
        """
        按给定的单元取值生成多份行：被赋值单元所在的表各得 N 份，
        连接这些表的其他等值类逐份取不同值，避免交叉配对
        """
        n = len(assignments)
        touched = sorted({t for u in units for t in u.tables})
        separators = [u for u in self.units
                      if u not in units and len(u.tables) > 1 and set(u.tables) <= set(touched)
                      and len(u.values) >= n - 1]
        copies: Dict[str, List[Dict[str, Any]]] = {t: [dict() for _ in range(n)] for t in touched}
        for sep in separators:
            values = [self.ctx.cell(sep.keys[0])] + sep.values[:n - 1]
            for i in range(n):
                for k in sep.keys:
                    copies[k.table][i][k.column] = values[i]
        for i, assignment in enumerate(assignments):
            for ui, value in assignment.items():
                for k in units[ui].keys:
                    copies[k.table][i][k.column] = value
        return self._run_rows({t: self._rows_with(t, copies[t]) for t in touched})

    # ---- 依赖 ----

    def _dependencies(self, base: ResultSet) -> Dict[int, Tuple[ResultSet, ResultSet]]:
        """单元序号 -> (第一次扰动结果, 第二次扰动结果)"""
        observed = {}
        for i, unit in enumerate(self.units):
            if len(unit.values) < 2:
                if unit.values:
                    r1 = self.ctx.result(self._assign(unit, unit.values[0]))
                    if is_fit(r1, self.ctx.empty) and len(r1.rows) == 1:
                        observed[i] = (r1, r1)
                continue
            r1 = self.ctx.result(self._assign(unit, unit.values[0]))
            r2 = self.ctx.result(self._assign(unit, unit.values[-1]))
            fit = is_fit(r1, self.ctx.empty) and is_fit(r2, self.ctx.empty)
            if fit and len(r1.rows) == 1 and len(r2.rows) == 1:
                observed[i] = (r1, r2)
            else:
                logger.debug(f"单元 {unit} 的扰动结果不是单行 FIT，跳过")
        return observed

    def _infer_function(self, j: int, deps: List[int], base: ResultSet, observed) -> Tuple[Any, Optional[str]]:
        """推断输出列 j 的表达式；返回 (表达式, 歧义说明)"""
        e0 = base.rows[0][j]
        header = base.columns[j]
        if len(deps) == 1:
            unit = self.units[deps[0]]
            r1, r2 = observed[deps[0]]
            a1, a2 = unit.values[0], unit.values[-1]
            v0 = self.ctx.cell(unit.keys[0])
            if e0 == v0 and r1.rows[0][j] == a1 and r2.rows[0][j] == a2:
                return self._member_ref(unit, header), None
            affine = self._affine(v0, a1, a2, e0, r1.rows[0][j], r2.rows[0][j])
            if affine is not None:
                a, b = affine
                expr = self._member_ref(unit, header)
                if a != 1:
                    expr = Arith('*', expr, Literal(a))
                if b != 0:
                    expr = Arith('+' if b > 0 else '-', expr, Literal(abs(b)))
                return expr, None
            return self._member_ref(unit, header), f"输出列 {header} 依赖 {unit}，函数无法识别"
        if len(deps) == 2:
            ux, uy = self.units[deps[0]], self.units[deps[1]]
            x0, y0 = self.ctx.cell(ux.keys[0]), self.ctx.cell(uy.keys[0])
            x1, y1 = ux.values[0], uy.values[0]
            ex, ey = observed[deps[0]][0].rows[0][j], observed[deps[1]][0].rows[0][j]
            for op, fn in (('+', lambda p, q: p + q), ('-', lambda p, q: p - q), ('*', lambda p, q: p * q)):
                for (pu, p0, p1, ep), (qu, q0, q1, eq) in (((ux, x0, x1, ex), (uy, y0, y1, ey)),
                                                          ((uy, y0, y1, ey), (ux, x0, x1, ex))):
                    try:
                        if fn(p0, q0) == e0 and fn(p1, q0) == ep and fn(p0, q1) == eq:
                            return Arith(op, self._member_ref(pu, header), self._member_ref(qu, header)), None
                    except TypeError:
                        continue
            return (self._member_ref(ux, header),
                    f"输出列 {header} 依赖 {ux} 与 {uy}，函数无法识别")
        unit = self.units[deps[0]]
        return self._member_ref(unit, header), f"输出列 {header} 依赖 {len(deps)} 个单元，函数无法识别"

    @staticmethod
    def _affine(v0, a1, a2, e0, e1, e2) -> Optional[Tuple[Decimal, Decimal]]:
        try:
            v0, a1, a2, e0, e1, e2 = (Decimal(v) for v in (v0, a1, a2, e0, e1, e2))
            if a1 == v0:
                return None
            a = (e1 - e0) / (a1 - v0)
            b = e0 - a * v0
        except (InvalidOperation, TypeError, ArithmeticError):
            return None
        if a == 0 or a * a2 + b != e2:
            return None
        return _tidy(a), _tidy(b)

    def _member_ref(self, unit: Unit, header: str) -> ColumnRef:
        for k in unit.keys:
            if k.column == header:
                return column_ref(k, self.ctx.tables, self.catalog)
        return column_ref(unit.keys[0], self.ctx.tables, self.catalog)

    def _pinned_ref(self, value, header: str) -> Optional[ColumnRef]:
        matches = [k for k in self.pinned if self.ctx.cell(k) == value]
        for k in matches:
            if k.column == header:
                return column_ref(k, self.ctx.tables, self.catalog)
        if matches:
            if len(matches) > 1:
                self.ambiguities.append(f"输出列 {header} 的取值 {value} 对应多个固定列，取 {matches[0]}")
            return column_ref(matches[0], self.ctx.tables, self.catalog)
        return None

    # ---- 主流程 ----

    def run(self) -> TailClauses:
        base = self.ctx.result()
        if len(base.rows) != 1:
            self.ambiguities.append(f"D¹ 上的输出有 {len(base.rows)} 行，按第一行推断")
        m = len(base.columns)
        observed = self._dependencies(base)
        deps: Dict[int, List[int]] = {j: [] for j in range(m)}
        for i, (r1, r2) in observed.items():
            for j in range(m):
                if r1.rows[0][j] != base.rows[0][j] or r2.rows[0][j] != base.rows[0][j]:
                    deps[j].append(i)

        dups = {}
        for t in self.ctx.tables:
            r = self._run_rows({t: self._rows_with(t, [{}, {}])})
            if r is not None:
                dups[t] = r
        grouped = bool(dups) and all(len(r.rows) == 1 for r in dups.values())

        exprs: List[Any] = []
        group_units: List[int] = []
        plain_columns: List[int] = []
        if grouped:
            group_units = [i for i, u in enumerate(self.units) if self._splits(u)]
        for j in range(m):
            e0 = base.rows[0][j]
            header = base.columns[j]
            doubled = grouped and isinstance(e0, (int, Decimal)) and e0 != 0 and any(
                r.rows[0][j] == 2 * e0 for r in dups.values())
            if not deps[j]:
                if doubled and e0 == 1:
                    exprs.append(Aggregate('COUNT'))
                    continue
                ref = self._pinned_ref(e0, header)
                if ref is None:
                    exprs.append(Literal(e0))
                else:
                    summed = doubled and self._numeric(ref)
                    exprs.append(Aggregate('SUM', ref) if summed else ref)
                    if not summed:
                        plain_columns.append(j)
                continue
            expr, note = self._infer_function(j, deps[j], base, observed)
            if note:
                self.ambiguities.append(note)
            if grouped:
                if doubled and self._numeric(expr):
                    expr = Aggregate('SUM', expr)
                elif doubled:
                    self.ambiguities.append(f"输出列 {header} 随行数翻倍，但 {render_expr(expr)} 不是数值，按 COUNT(*) 处理")
                    expr = Aggregate('COUNT')
                elif not any(d in group_units for d in deps[j]):
                    expr = self._min_max_avg(j, deps[j][0], base, observed, expr)
                else:
                    plain_columns.append(j)
            exprs.append(expr)

        select = []
        for j, expr in enumerate(exprs):
            header = base.columns[j]
            select.append(SelectItem(expr, None if default_header(expr) == header else header))

        group_by: List[Any] = []
        if grouped:
            for j in plain_columns:
                if exprs[j] not in group_by:
                    group_by.append(exprs[j])
            extra = []
            for i in group_units:
                ref = self._member_ref(self.units[i], '')
                if all(ref != g for g in group_by):
                    extra.append(ref)
            group_by.extend(sorted(extra, key=lambda r: (r.table or '', r.name)))

        multiplying = [t for t in self.ctx.tables if t in dups and len(dups[t].rows) == 2]
        limit = self._limit(grouped, group_units, multiplying)
        order_by = []
        if limit is not None and limit < 3:
            self.ambiguities.append(f"LIMIT {limit} 太小，未检测 ORDER BY")
        else:
            order_by = self._order_by(base, deps, exprs, grouped, group_units)
        tail = TailClauses(select, group_by, order_by, limit, grouped, self.ambiguities)
        logger.info(f"尾部子句: 投影 {len(select)} 列，{'分组' if grouped else '不分组'}，"
                    f"GROUP BY {len(group_by)} 列，ORDER BY {len(order_by)} 键，LIMIT {limit}")
        return tail

    def _numeric(self, expr) -> bool:
        """SUM 只包裹数值表达式"""
        if isinstance(expr, Arith):
            return True
        if isinstance(expr, ColumnRef):
            for k in self.ctx.columns():
                if k.column == expr.name and expr.table in (None, k.table):
                    return self.ctx.domain(k).kind in (DomainKind.INTEGER, DomainKind.DECIMAL)
        return False

    def _splits(self, unit: Unit) -> bool:
        """附加一份只在该单元上取不同值的行，输出变成两行即为分组列"""
        if not unit.values:
            return False
        result = self._replicate([{0: self.ctx.cell(unit.keys[0])}, {0: unit.values[0]}], [unit])
        return result is not None and len(result.rows) == 2

    def _min_max_avg(self, j: int, ui: int, base: ResultSet, observed, expr):
        """两行取值不同的复制：与两次单行结果比较区分 MIN / MAX / AVG / SUM"""
        unit = self.units[ui]
        result = self._replicate([{0: self.ctx.cell(unit.keys[0])}, {0: unit.values[0]}], [unit])
        if result is None or len(result.rows) != 1:
            self.ambiguities.append(f"输出列 {base.columns[j]} 的聚合函数无法识别")
            return Aggregate('MIN', expr)
        e1, e2, r = base.rows[0][j], observed[ui][0].rows[0][j], result.rows[0][j]
        candidates = []
        try:
            if r == e1 + e2:
                candidates.append('SUM')
            if r == (Decimal(e1) + Decimal(e2)) / 2 and e1 != e2:
                candidates.append('AVG')
        except (TypeError, InvalidOperation):
            pass
        if r == max(e1, e2):
            candidates.append('MAX')
        if r == min(e1, e2):
            candidates.append('MIN')
        if not candidates:
            self.ambiguities.append(f"输出列 {base.columns[j]} 的聚合函数无法识别")
            return Aggregate('MIN', expr)
        if len(candidates) > 1:
            self.ambiguities.append(f"输出列 {base.columns[j]} 可能是 {candidates}，取 {candidates[0]}")
        return Aggregate(candidates[0], expr)

    def _limit(self, grouped: bool, group_units: List[int], multiplying: List[str]) -> Optional[int]:
        """把满足的行放大到探测上限，输出行数更少即为 LIMIT"""
        ceiling = self.ctx.limits.limit_probe_ceiling
        if not grouped:
            if not multiplying:
                return None
            table = multiplying[0]
            result = self._run_rows({table: self._rows_with(table, [{}] * ceiling)})
            expected = ceiling
        else:
            if not group_units:
                return None
            unit = self.units[group_units[0]]
            values = [self.ctx.cell(unit.keys[0])] + self._values(unit, ceiling - 1)
            if len(values) < 2:
                return None
            expected = len(values)
            result = self._replicate([{0: v} for v in values], [unit])
        if result is None:
            return None
        if len(result.rows) < expected:
            logger.info(f"放大到 {expected} 行后输出 {len(result.rows)} 行，LIMIT {len(result.rows)}")
            return len(result.rows)
        return None

    def _order_values(self, unit: Unit) -> List[Any]:
        """排序探测用的升序取值，可含 D¹ 当前值"""
        return sorted(set([self.ctx.cell(unit.keys[0])] + unit.values))[:3]

    def _ordered_run(self, units: List[Unit], combos: List[tuple], columns: Optional[List[int]] = None,
                     tag: Optional[Tuple[int, int]] = None) -> Optional[List[tuple]]:
        """
        每个组合复制一行并读出输出行序

        Args:
            units: 被赋值的单元
            combos: 每行各单元的取值
            columns: 不用标记时，按这些输出列读出键值
            tag: (标记单元序号, 输出列)；各行取不同的标记值，按输出中的标记找回每行的组合

        Returns:
            按输出顺序排列的键值元组；行数不符或标记无法识别时为 None
        """
        assignments = [{i: v for i, v in enumerate(c)} for c in combos]
        used = list(units)
        values: List[Any] = []
        if tag is not None:
            tag_unit = self.units[tag[0]]
            values = [self.ctx.cell(tag_unit.keys[0])] + self._values(tag_unit, len(combos) - 1)
            if len(set(values)) < len(combos):
                return None
            for a, v in zip(assignments, values):
                a[len(units)] = v
            used.append(tag_unit)
        result = self._replicate(assignments, used)
        if result is None or len(result.rows) != len(combos):
            return None
        if tag is None:
            return [tuple(row[j] for j in columns) for row in result.rows]
        index = {v: i for i, v in enumerate(values)}
        out = []
        for row in result.rows:
            i = index.get(row[tag[1]])
            if i is None:
                return None
            out.append(combos[i])
        return out

    def _direction(self, ui: int, column: Optional[int] = None,
                   tag: Optional[Tuple[int, int]] = None) -> Optional[bool]:
        """只改变一个单元的三行以两种次序输入，输出都按其升序（降序）排列即为 ORDER BY 键"""
        values = self._order_values(self.units[ui])
        if len(values) < 3:
            return None
        a, b, c = values
        seqs = []
        for order in ((b, a, c), (c, a, b)):
            seq = self._ordered_run([self.units[ui]], [(v,) for v in order],
                                    columns=None if tag else [column], tag=tag)
            if seq is None:
                return None
            seqs.append([s[0] for s in seq])
        if any(len(set(s)) != 3 for s in seqs):
            return None
        if all(s == sorted(s) for s in seqs):
            return False
        if all(s == sorted(s, reverse=True) for s in seqs):
            return True
        return None

    def _tag(self, deps, exprs, grouped: bool, group_units: List[int], keys: set) -> Optional[Tuple[int, int]]:
        """原样投影、且不是排序键的单元可作为行标记"""
        for j in sorted(deps):
            if len(deps[j]) != 1 or not isinstance(exprs[j], ColumnRef):
                continue
            ui = deps[j][0]
            if ui in keys or (grouped and ui not in group_units):
                continue
            return ui, j
        return None

    def _order_by(self, base: ResultSet, deps, exprs, grouped: bool, group_units: List[int]) -> List[OrderItem]:
        keys: List[OrderKey] = []
        for j in range(len(base.columns)):
            if len(deps[j]) != 1 or isinstance(exprs[j], Aggregate):
                continue
            ui = deps[j][0]
            if (grouped and ui not in group_units) or any(k.unit == ui for k in keys):
                continue
            desc = self._direction(ui, column=j)
            if desc is not None:
                keys.append(OrderKey(ui, desc, j))
        tag = self._tag(deps, exprs, grouped, group_units, {k.unit for k in keys})
        if tag is not None:
            touched = {ui for ds in deps.values() for ui in ds}
            for ui in range(len(self.units)):
                if ui in touched or (grouped and ui not in group_units):
                    continue
                desc = self._direction(ui, tag=tag)
                if desc is not None:
                    logger.info(f"未投影的单元 {self.units[ui]} 是 ORDER BY 键（{'DESC' if desc else 'ASC'}）")
                    keys.append(OrderKey(ui, desc))
        if not keys:
            return []
        keys = self._precedence(keys, tag)
        return [OrderItem(exprs[k.column] if k.column is not None else self._member_ref(self.units[k.unit], ''),
                          k.descending) for k in keys]

    def _precedence(self, keys: List[OrderKey], tag: Optional[Tuple[int, int]]) -> List[OrderKey]:
        """构造各键高低取值的全部组合，读出行序，找出与之一致的键顺序"""
        if len(keys) == 1:
            return keys
        if len(keys) > MAX_ORDER_KEYS:
            self.ambiguities.append(f"ORDER BY 键 {len(keys)} 个，超过 {MAX_ORDER_KEYS} 个，按输出列顺序排列")
            return keys
        units = [self.units[k.unit] for k in keys]
        combos = list(product(*[self._order_values(u)[:2] for u in units]))
        scrambled = combos[1::2] + combos[0::2]
        scrambled = scrambled[::-1]
        needs_tag = any(k.column is None for k in keys)
        vectors = None
        if not needs_tag:
            vectors = self._ordered_run(units, scrambled, columns=[k.column for k in keys])
        elif tag is not None:
            vectors = self._ordered_run(units, scrambled, tag=tag)
        if vectors is None:
            self.ambiguities.append("ORDER BY 键的先后顺序无法确定，按发现顺序排列")
            return keys
        consistent = []
        for perm in permutations(range(len(keys))):
            order = [(i, keys[i].descending) for i in perm]
            if all(_not_after(vectors[r], vectors[r + 1], order) for r in range(len(vectors) - 1)):
                consistent.append([keys[i] for i in perm])
        if not consistent:
            self.ambiguities.append("ORDER BY 键的先后顺序无法确定，按发现顺序排列")
            return keys
        if len(consistent) > 1:
            self.ambiguities.append("ORDER BY 键的先后顺序不唯一，取第一种")
        return consistent[0]


def _not_after(left, right, order) -> bool:
    for i, desc in order:
        if left[i] == right[i]:
            continue
        return (left[i] > right[i]) if desc else (left[i] < right[i])
    return True


def _tidy(value: Decimal) -> Any:
    if value == value.to_integral_value():
        return int(value)
    return value.normalize()


def extract_tail_clauses(ctx: BranchContext, preds: BranchPredicates) -> TailClauses:
    """
    抽取投影、聚合、GROUP BY、ORDER BY 与 LIMIT

    Args:
        ctx: 分支上下文
        preds: 已抽取的谓词

    Returns:
        尾部子句；无法判定之处写入 ambiguities
    """
    return TailExtractor(ctx, preds).run()
