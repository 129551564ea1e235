#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
谓词抽取模块
在单个子查询的最小化数据库 D¹ 上抽取：算术过滤区间、满足值区间（SVI）、
代数不等式、等值类、IN 列表析取、LIKE 模式，以及外连接补空侧的 IS NULL 析取；
最后把各分支的子句拼装为种子查询 Q_S
"""

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from hqe_config import LimitsConfig
from hqe_errors import LiteralBudgetExceeded, NonMonotoneSatisfaction, OracleFailure
from minisql import (Between, ColumnRef, Comparison, InList, IsNull, Like, Literal, Or, OrderItem, Query,
                     QueryBlock, RenderedSQL, SelectItem, TableRef, make_and)
from mutator import is_fit, minimize, set_value, void_tables
from oracle import EngineError, OracleHandle
from relcore import TEXT_MAX, AttrDomain, DatabaseState, DomainKind, ResultSet

logger = logging.getLogger(__name__)

# 分类文本域逐值扫描的枚举规模上限
MAX_ENUM_SCAN = 64
LIKE_SENTINEL = '#'
# 确认不等式时 x 已在上界，向下移动的步数
PIVOT_STEPS = 3


@dataclass(frozen=True, order=True)
class ColumnKey:
    table: str
    column: str

    def __str__(self):
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class SValueInterval:
    """满足值区间；floating 非空时表示某一端随另一列浮动"""

    column: ColumnKey
    lb: Any
    ub: Any
    lb_open: bool = False
    ub_open: bool = False
    floating: Optional[ColumnKey] = None

    def __post_init__(self):
        if self.lb is not None and self.ub is not None and self.lb > self.ub:
            raise ValueError(f"{self.column} 的区间下界 {self.lb} 大于上界 {self.ub}")
        if self.floating == self.column:
            raise ValueError(f"{self.column} 不能随自身浮动")

    @property
    def is_point(self) -> bool:
        return self.lb == self.ub

    def describe(self) -> str:
        tail = f" ~{self.floating}" if self.floating else ''
        return f"[{self.lb}, {self.ub}]{tail}"


@dataclass(frozen=True)
class PredicateAtom:
    """
    谓词原子
    kind: arith（列 op 常量）| algebraic（列 op 列）| like | in_list
    null_guard 非空时渲染为 (原子 OR guard IS NULL)
    """

    kind: str
    column: ColumnKey
    op: Optional[str] = None
    value: Any = None
    other: Optional[ColumnKey] = None
    provenance: str = ''
    null_guard: Optional[ColumnKey] = None

    def __post_init__(self):
        if self.kind in ('arith', 'algebraic') and self.op not in ('=', '<=', '>=', '<', '>'):
            raise ValueError(f"不支持的比较运算符: {self.op}")
        if self.kind == 'in_list':
            if not self.value or len(set(self.value)) != len(self.value):
                raise ValueError("IN 列表必须非空且不重复")

    def columns(self) -> List[ColumnKey]:
        return [self.column] + ([self.other] if self.other else [])

    def describe(self) -> str:
        if self.kind == 'algebraic':
            text = f"{self.column} {self.op} {self.other}"
        elif self.kind == 'arith':
            text = f"{self.column} {self.op} {self.value}"
        elif self.kind == 'like':
            text = f"{self.column} LIKE '{self.value}'"
        else:
            text = f"{self.column} IN {list(self.value)}"
        if self.null_guard:
            text = f"({text} OR {self.null_guard} IS NULL)"
        return text


class SveResult(dict):
    """列 -> SValueInterval，附带 LIKE 模式、受限分类列与非单调信号"""

    def __init__(self):
        super().__init__()
        self.like: Dict[ColumnKey, str] = {}
        self.restricted: Dict[ColumnKey, Tuple[str, ...]] = {}
        self.nonmonotone: Dict[ColumnKey, NonMonotoneSatisfaction] = {}


@dataclass
class BranchContext:
    """单个子查询的抽取上下文"""

    h: OracleHandle
    d1: DatabaseState
    source: DatabaseState
    tables: List[str]
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    optional_tables: Set[str] = field(default_factory=set)
    heuristics: List[str] = field(default_factory=list)
    ambiguities: List[str] = field(default_factory=list)
    classes: List[List[ColumnKey]] = field(default_factory=list)
    in_list_rounds: Dict[ColumnKey, int] = field(default_factory=dict)
    class_bounds: Dict[Tuple[ColumnKey, ...], Tuple[Any, Any]] = field(default_factory=dict)
    probes: int = 0
    empty: Optional[ResultSet] = None

    @classmethod
    def for_d1(cls, h: OracleHandle, d1: DatabaseState, source: Optional[DatabaseState] = None,
               tables: Optional[Iterable[str]] = None, limits: Optional[LimitsConfig] = None,
               empty: Optional[ResultSet] = None) -> 'BranchContext':
        if tables is None:
            tables = [t for t in d1.catalog.table_names if d1.row_count(t) > 0]
        return cls(h, d1, source if source is not None else d1, sorted(tables), limits or LimitsConfig(),
                   set(d1.annotations.get('optional_tables', [])), empty=empty)

    def domain(self, key: ColumnKey) -> AttrDomain:
        return self.d1.catalog.domain(key.table, key.column)

    def cell(self, key: ColumnKey) -> Any:
        return self.d1.raw_rows(key.table)[0][self.d1.catalog.table(key.table).index_of(key.column)]

    def columns(self) -> List[ColumnKey]:
        keys = []
        for t in self.tables:
            for c in self.d1.catalog.table(t).column_names:
                keys.append(ColumnKey(t, c))
        return keys

    def outcome(self, assignments: Sequence[Tuple[ColumnKey, Any]] = ()):
        tokens = [set_value(self.d1, k.table, k.column, v) for k, v in assignments]
        try:
            self.probes += 1
            return self.h.invoke(self.d1)
        finally:
            for token in reversed(tokens):
                self.d1.revert(token)

    def result(self, assignments: Sequence[Tuple[ColumnKey, Any]] = ()) -> ResultSet:
        outcome = self.outcome(assignments)
        if isinstance(outcome, EngineError):
            raise OracleFailure(f"D¹ 上的调用失败 [{outcome.kind}] {outcome.message}")
        return outcome

    def probe(self, assignments: Sequence[Tuple[ColumnKey, Any]]) -> bool:
        return is_fit(self.result(assignments), self.empty)


# ---------------------------------------------------------------------------
# 算术过滤区间
# ---------------------------------------------------------------------------

def _search_bounds(ctx: BranchContext, keys: Sequence[ColumnKey], domain: AttrDomain, g0: int,
                   fixed: Sequence[Tuple[ColumnKey, Any]] = (), lower: bool = True,
                   upper: bool = True) -> Tuple[int, int]:
    """在步长网格上二分查找使结果保持 FIT 的最紧上下界；先探测 i_min、i_max"""

    def fit_at(g: int) -> bool:
        value = domain.from_grid(g)
        return ctx.probe(list(fixed) + [(k, value) for k in keys])

    g_min, g_max = domain.grid_min, domain.grid_max
    lb = ub = g0
    if lower and g_min < g0:
        if fit_at(g_min):
            lb = g_min
        else:
            lo, hi = g_min, g0
            while hi - lo > 1:
                mid = lo + (hi - lo) // 2
                if fit_at(mid):
                    hi = mid
                else:
                    lo = mid
            lb = hi
    if upper and g0 < g_max:
        if fit_at(g_max):
            ub = g_max
        else:
            lo, hi = g0, g_max
            while hi - lo > 1:
                mid = lo + (hi - lo) // 2
                if fit_at(mid):
                    lo = mid
                else:
                    hi = mid
            ub = lo
    return lb, ub


def _check_adjacent(ctx: BranchContext, keys: Sequence[ColumnKey], domain: AttrDomain, g0: int, lb: int, ub: int):
    """紧邻 D¹ 取值的两个网格点必须满足，否则满足区域有空洞"""
    for g, inside in ((g0 - 1, lb < g0 - 1), (g0 + 1, ub > g0 + 1)):
        if inside and not ctx.probe([(k, domain.from_grid(g)) for k in keys]):
            raise NonMonotoneSatisfaction(keys[0], domain.from_grid(lb), domain.from_grid(ub))


def extract_filter_bounds(ctx: BranchContext, key: ColumnKey,
                          members: Optional[Sequence[ColumnKey]] = None) -> SValueInterval:
    """
    二分查找列的满足区间

    Args:
        ctx: 分支上下文（D¹ 与黑盒句柄）
        key: 有序域上的列
        members: 需要同步改值的一组列（等值类），默认只有 key

    Returns:
        静态的 SValueInterval
    """
    keys = list(members or [key])
    domain = ctx.domain(key)
    g0 = domain.to_grid(ctx.cell(key))
    lb, ub = _search_bounds(ctx, keys, domain, g0)
    _check_adjacent(ctx, keys, domain, g0, lb, ub)
    return SValueInterval(key, domain.from_grid(lb), domain.from_grid(ub))


# ---------------------------------------------------------------------------
# 满足值区间（SVE）
# ---------------------------------------------------------------------------

def _scan_categorical(ctx: BranchContext, key: ColumnKey, domain: AttrDomain) -> Tuple[str, ...]:
    v0 = ctx.cell(key)
    return tuple(v for v in domain.enum_values if v == v0 or ctx.probe([(key, v)]))


def _extract_like(ctx: BranchContext, key: ColumnKey, svi: SveResult):
    """自由文本列：空串仍满足则无约束；否则收缩出核心子串，并用哨兵字符判断两侧是否开放"""
    v0 = ctx.cell(key)
    if ctx.probe([(key, '')]):
        svi[key] = SValueInterval(key, '', TEXT_MAX)
        return
    core = v0
    while core and ctx.probe([(key, core[1:])]):
        core = core[1:]
    while core and ctx.probe([(key, core[:-1])]):
        core = core[:-1]
    left_open = ctx.probe([(key, LIKE_SENTINEL + core)])
    right_open = ctx.probe([(key, core + LIKE_SENTINEL)])
    if not left_open and not right_open and core == v0:
        svi[key] = SValueInterval(key, v0, v0)
        return
    pattern = ('%' if left_open else '') + core + ('%' if right_open else '')
    svi.like[key] = pattern
    svi[key] = SValueInterval(key, '', TEXT_MAX)
    logger.info(f"{key} 识别出 LIKE '{pattern}'")


def compute_svi_all(ctx: BranchContext) -> SveResult:
    """
    对分支中每张表的每一列计算满足值区间

    Returns:
        列 -> SValueInterval；点区间即等值候选
    """
    svi = SveResult()
    for key in ctx.columns():
        domain = ctx.domain(key)
        if domain.kind == DomainKind.TEXT_FREE:
            _extract_like(ctx, key, svi)
            continue
        if domain.kind == DomainKind.TEXT_CATEGORICAL and len(domain.enum_values) <= MAX_ENUM_SCAN:
            satisfied = _scan_categorical(ctx, key, domain)
            if len(satisfied) < len(domain.enum_values):
                svi.restricted[key] = satisfied
            svi[key] = SValueInterval(key, satisfied[0], satisfied[-1])
            continue
        try:
            svi[key] = extract_filter_bounds(ctx, key)
        except NonMonotoneSatisfaction as e:
            logger.warning(f"{key} 的满足区域不连续，按区间 [{e.lb}, {e.ub}] 记录")
            svi.nonmonotone[key] = e
            ctx.ambiguities.append(f"{key} 的满足区域不连续（可能是数值析取）")
            svi[key] = SValueInterval(key, e.lb, e.ub)
    logger.info(f"SVE 完成: {len(svi)} 列，其中点区间 {sum(1 for s in svi.values() if s.is_point)} 个")
    return svi


# ---------------------------------------------------------------------------
# 代数不等式
# ---------------------------------------------------------------------------

_COMPARABLE = {
    DomainKind.INTEGER: 'number',
    DomainKind.DECIMAL: 'number',
    DomainKind.DATE: 'date',
}


def enumerate_inequality_candidates(d1: DatabaseState, svi: Dict[ColumnKey, SValueInterval]) -> List[Tuple[ColumnKey, ColumnKey]]:
    """
    候选边 x -> y（x ≤ y）：D¹.x 恰为 y 的下界（或差一个步长），或 D¹.y 恰为 x 的上界
    """
    def cell(k: ColumnKey):
        return d1.raw_rows(k.table)[0][d1.catalog.table(k.table).index_of(k.column)]

    ordered = []
    for k in sorted(svi):
        domain = d1.catalog.domain(k.table, k.column)
        if domain.kind in _COMPARABLE and not svi[k].is_point:
            ordered.append((k, domain))
    edges = []
    for x, dx in ordered:
        for y, dy in ordered:
            if x == y or _COMPARABLE[dx.kind] != _COMPARABLE[dy.kind]:
                continue
            vx, vy = cell(x), cell(y)
            sx, sy = svi[x], svi[y]
            lower_hit = sy.lb > dy.i_min and sy.lb in (vx, vx + dy.step)
            upper_hit = sx.ub < dx.i_max and sx.ub in (vy, vy - dx.step)
            if lower_hit or upper_hit:
                edges.append((x, y))
    return edges


def confirm_inequality(ctx: BranchContext, svi: Dict[ColumnKey, SValueInterval],
                       edge: Tuple[ColumnKey, ColumnKey]) -> Optional[PredicateAtom]:
    """
    把 x 移到一个不同于 D¹ 的取值（通常是其上界；D¹ 已在上界时向下移几个步长）后重新查找 y 的下界：
    下界移到该取值为 ≤，移到其后一个步长为 <，不动则不存在不等式
    """
    x, y = edge
    dx, dy = ctx.domain(x), ctx.domain(y)
    pivot = svi[x].ub
    if ctx.cell(x) == pivot:
        g_ub = dx.to_grid(pivot)
        pivot = dx.from_grid(max(dx.to_grid(svi[x].lb), g_ub - PIVOT_STEPS))
    g0 = dy.to_grid(ctx.cell(y))
    lb_grid, _ = _search_bounds(ctx, [y], dy, g0, fixed=[(x, pivot)], upper=False)
    new_lb = dy.from_grid(lb_grid)
    if new_lb == svi[y].lb:
        logger.debug(f"{x} -> {y} 是巧合，下界未移动")
        return None
    if new_lb == pivot:
        op = '<='
    elif new_lb == pivot + dy.step:
        op = '<'
    else:
        ctx.ambiguities.append(f"{x} 改为 {pivot} 后 {y} 的下界移到 {new_lb}，无法判定不等式")
        return None
    svi[y] = replace(svi[y], floating=x)
    svi[x] = replace(svi[x], floating=y)
    logger.info(f"确认代数不等式 {x} {op} {y}")
    return PredicateAtom('algebraic', x, op, other=y, provenance='inequality')


# ---------------------------------------------------------------------------
# 等值类
# ---------------------------------------------------------------------------

def _moved_value(ctx: BranchContext, keys: Sequence[ColumnKey], value: Any) -> Optional[Any]:
    """等值类联动改值时使用的新取值"""
    domain = ctx.domain(keys[0])
    if domain.kind == DomainKind.TEXT_FREE:
        return value + 'a'
    g = domain.to_grid(value)
    for candidate in (g + 1, g - 1):
        if domain.grid_min <= candidate <= domain.grid_max:
            moved = domain.from_grid(candidate)
            if all(ctx.domain(k).contains(moved) for k in keys):
                return moved
    return None


def _tie_groups(ctx: BranchContext, svi: Dict[ColumnKey, SValueInterval]) -> List[List[ColumnKey]]:
    groups: Dict[Tuple, List[ColumnKey]] = {}
    for k in sorted(svi):
        if svi[k].is_point:
            groups.setdefault((ctx.domain(k).signature, svi[k].lb), []).append(k)
    return [g for g in groups.values() if len(g) >= 2]


def extract_equalities(ctx: BranchContext, svi: Dict[ColumnKey, SValueInterval]) -> List[PredicateAtom]:
    """
    把共享同一点区间的列划分为等值类：
    按规模从小到大测试能联动改值且保持 FIT 的最小子集，已找到的类的超集跳过
    """
    atoms: List[PredicateAtom] = []
    for group in _tie_groups(ctx, svi):
        if len(group) > ctx.limits.max_tie_group:
            msg = f"{len(group)} 列共享取值 {svi[group[0]].lb}，超过上限 {ctx.limits.max_tie_group}，未解析"
            logger.warning(msg)
            ctx.ambiguities.append(msg)
            continue
        value = svi[group[0]].lb
        found: List[Set[ColumnKey]] = []
        for size in range(2, len(group) + 1):
            for subset in combinations(group, size):
                members = set(subset)
                if any(members & c for c in found):
                    continue
                moved = _moved_value(ctx, subset, value)
                if moved is None:
                    continue
                if ctx.probe([(k, moved) for k in subset]):
                    found.append(members)
        for members in found:
            chain = sorted(members)
            ctx.classes.append(chain)
            for a, b in zip(chain, chain[1:]):
                atoms.append(PredicateAtom('algebraic', a, '=', other=b, provenance='equality'))
            logger.info(f"等值类 {' = '.join(str(k) for k in chain)}")
    return atoms


def _class_bounds(ctx: BranchContext, chain: List[ColumnKey]) -> List[PredicateAtom]:
    """等值类的联动区间比域窄时，在第一列上记算术过滤"""
    domain = ctx.domain(chain[0])
    if domain.kind == DomainKind.TEXT_FREE:
        return []
    g0 = domain.to_grid(ctx.cell(chain[0]))
    lb, ub = _search_bounds(ctx, chain, domain, g0)
    ctx.class_bounds[tuple(chain)] = (domain.from_grid(lb), domain.from_grid(ub))
    return _bound_atoms(chain[0], domain, domain.from_grid(lb), domain.from_grid(ub), 'equality-class')


def _bound_atoms(key: ColumnKey, domain: AttrDomain, lb, ub, provenance: str) -> List[PredicateAtom]:
    if lb == ub:
        return [PredicateAtom('arith', key, '=', lb, provenance=provenance)]
    atoms = []
    if lb > domain.i_min:
        atoms.append(PredicateAtom('arith', key, '>=', lb, provenance=provenance))
    if ub < domain.i_max:
        atoms.append(PredicateAtom('arith', key, '<=', ub, provenance=provenance))
    return atoms


# ---------------------------------------------------------------------------
# IN 列表
# ---------------------------------------------------------------------------

def extract_in_list(ctx: BranchContext, key: ColumnKey) -> PredicateAtom:
    """
    逐字面量抽取 IN 列表：记录当前 D¹ 的取值，在隔离后的 D_I 中屏蔽带已记录字面量的行，
    仍为 FIT 则重新最小化得到下一个字面量，直到结果不再 FIT

    Returns:
        in_list 原子；只有一个字面量时为等值算术过滤
    """
    schema = ctx.source.catalog.table(key.table)
    idx = schema.index_of(key.column)
    literals = [ctx.cell(key)]
    rounds = 1
    journal = ctx.source.journal
    if journal is not None:
        journal.record('in_list_round', column=str(key), round=rounds, literal=str(literals[0]))
    while True:
        rows = ctx.source.raw_rows(key.table)
        keep = [i for i, r in enumerate(rows) if r[idx] not in literals]
        suppressed = ctx.source.derive(keep={key.table: keep})
        outcome = ctx.h.invoke(suppressed)
        if isinstance(outcome, EngineError):
            raise OracleFailure(f"IN 列表抽取时黑盒失败 [{outcome.kind}] {outcome.message}")
        if not is_fit(outcome, ctx.empty):
            break
        rounds += 1
        if rounds > ctx.limits.max_in_literals:
            raise LiteralBudgetExceeded(f"{key} 的字面量超过上限 {ctx.limits.max_in_literals}")
        d1 = minimize(suppressed, ctx.h, ctx.tables, initial=outcome,
                      optional_pair_probes=ctx.limits.optional_pair_probes, empty=ctx.empty)
        literal = d1.raw_rows(key.table)[0][idx]
        literals.append(literal)
        if journal is not None:
            journal.record('in_list_round', column=str(key), round=rounds, literal=str(literal))
        logger.info(f"{key} 第 {rounds} 轮最小化得到字面量 {literal!r}")
    ctx.in_list_rounds[key] = rounds
    if len(literals) == 1:
        return PredicateAtom('arith', key, '=', literals[0], provenance='in-list')
    return PredicateAtom('in_list', key, value=tuple(sorted(literals)), provenance='in-list')


# ---------------------------------------------------------------------------
# 外连接补空侧
# ---------------------------------------------------------------------------

def _pk_column(ctx: BranchContext, table: str) -> ColumnKey:
    schema = ctx.d1.catalog.table(table)
    pk = getattr(schema, 'primary_key', None) or schema.column_names[:1]
    return ColumnKey(table, pk[0])


def _violating_value(ctx: BranchContext, atom: PredicateAtom) -> Optional[Any]:
    domain = ctx.domain(atom.column)
    if atom.kind == 'like':
        return ''
    if atom.kind == 'in_list':
        outside = [v for v in domain.enum_values if v not in atom.value]
        return outside[0] if outside else None
    if atom.kind != 'arith' or not domain.is_ordered:
        return None
    g = domain.to_grid(atom.value)
    if atom.op in ('<=', '='):
        g += 1
    elif atom.op == '>=':
        g -= 1
    if domain.grid_min <= g <= domain.grid_max:
        return domain.from_grid(g)
    if atom.op == '=' and g - 2 >= domain.grid_min:
        return domain.from_grid(g - 2)
    return None


def outer_join_atoms(ctx: BranchContext, atoms: List[PredicateAtom]) -> List[PredicateAtom]:
    """
    对补空侧表：加入目录外键等值作为连接原子，
    对清空该表后不再生效的过滤以及该表自身列上的原子包上 (原子 OR 主键 IS NULL)
    """
    if not ctx.optional_tables:
        return atoms
    joined = {frozenset((a.column, a.other)) for a in atoms if a.kind == 'algebraic' and a.op == '='}
    out = list(atoms)
    for table in sorted(ctx.optional_tables):
        guard = _pk_column(ctx, table)
        for child, ccol, parent, pcol in ctx.d1.catalog.fk_edges():
            if table not in (child, parent) or child not in ctx.tables or parent not in ctx.tables:
                continue
            a, b = sorted([ColumnKey(child, ccol), ColumnKey(parent, pcol)])
            if frozenset((a, b)) in joined:
                continue
            if ctx.cell(a) != ctx.cell(b):
                ctx.ambiguities.append(f"补空侧表 {table} 的 D¹ 行与 {a} / {b} 不匹配，未加入外键等值")
                continue
            out.append(PredicateAtom('algebraic', a, '=', other=b, provenance='outer-join-fk'))
            ctx.heuristics.append(f"外连接: 以外键等值 {a} = {b} 代替 {table} 的外连接条件")
        wrapped = []
        for atom in out:
            if atom.null_guard is not None or atom.provenance == 'outer-join-fk':
                wrapped.append(atom)
                continue
            own = any(k.table == table for k in atom.columns())
            if own and atom.kind == 'algebraic' and atom.op == '=' and (atom.column.table != atom.other.table):
                wrapped.append(atom)
                continue
            bypassed = own
            if not own and atom.kind in ('arith', 'like', 'in_list'):
                bad = _violating_value(ctx, atom)
                if bad is not None:
                    token = void_tables(ctx.d1, [table])
                    try:
                        bypassed = ctx.probe([(atom.column, bad)])
                    finally:
                        ctx.d1.revert(token)
            if bypassed:
                atom = replace(atom, null_guard=guard)
                ctx.heuristics.append(f"外连接: {atom.describe()} 在 {table} 补空时不生效，加入 IS NULL 析取")
                logger.warning(f"启发式: {atom.describe()}")
            wrapped.append(atom)
        out = wrapped
    return out


# ---------------------------------------------------------------------------
# 分支谓词汇总
# ---------------------------------------------------------------------------

@dataclass
class BranchPredicates:
    atoms: List[PredicateAtom]
    svi: SveResult
    classes: List[List[ColumnKey]]


def extract_branch_predicates(ctx: BranchContext) -> BranchPredicates:
    """SVE → 不等式 → 等值类 → 算术过滤 / LIKE / IN 列表 → 外连接析取"""
    svi = compute_svi_all(ctx)
    atoms: List[PredicateAtom] = []
    for edge in enumerate_inequality_candidates(ctx.d1, svi):
        if svi[edge[0]].floating or svi[edge[1]].floating:
            continue
        atom = confirm_inequality(ctx, svi, edge)
        if atom is not None:
            atoms.append(atom)
    atoms.extend(extract_equalities(ctx, svi))
    in_class = {k for chain in ctx.classes for k in chain}
    for chain in ctx.classes:
        atoms.extend(_class_bounds(ctx, chain))
    for key in sorted(svi):
        if key in in_class:
            continue
        domain = ctx.domain(key)
        interval = svi[key]
        if key in svi.like:
            atoms.append(PredicateAtom('like', key, value=svi.like[key], provenance='like'))
        elif key in svi.restricted:
            atom = extract_in_list(ctx, key)
            scanned = set(svi.restricted[key])
            found = {atom.value} if atom.kind == 'arith' else set(atom.value)
            if scanned - found:
                merged = tuple(sorted(scanned | found))
                ctx.heuristics.append(f"{key} 的 IN 列表补入逐值扫描得到的字面量 {sorted(scanned - found)}")
                atom = PredicateAtom('in_list', key, value=merged, provenance='in-list')
            atoms.append(atom)
        elif domain.kind == DomainKind.TEXT_FREE:
            if interval.is_point:
                atoms.append(PredicateAtom('arith', key, '=', interval.lb, provenance='filter'))
        else:
            lb = domain.i_min if interval.floating and _floats_low(atoms, key) else interval.lb
            ub = domain.i_max if interval.floating and _floats_high(atoms, key) else interval.ub
            atoms.extend(_bound_atoms(key, domain, lb, ub, 'filter'))
    atoms = outer_join_atoms(ctx, atoms)
    return BranchPredicates(atoms, svi, list(ctx.classes))


def _floats_low(atoms: List[PredicateAtom], key: ColumnKey) -> bool:
    return any(a.kind == 'algebraic' and a.op in ('<=', '<') and a.other == key for a in atoms)


def _floats_high(atoms: List[PredicateAtom], key: ColumnKey) -> bool:
    return any(a.kind == 'algebraic' and a.op in ('<=', '<') and a.column == key for a in atoms)


# ---------------------------------------------------------------------------
# 种子查询拼装
# ---------------------------------------------------------------------------

@dataclass
class BlockSpec:
    """一个平坦分支的全部子句"""

    tables: List[str]
    atoms: List[PredicateAtom]
    select: List[SelectItem]
    group_by: List[Any] = field(default_factory=list)
    order_by: List[OrderItem] = field(default_factory=list)
    limit: Optional[int] = None


def column_ref(key: ColumnKey, tables: Sequence[str], catalog) -> ColumnRef:
    """列名在分支内唯一时不加表名限定"""
    owners = [t for t in tables if catalog.table(t).has_column(key.column)]
    return ColumnRef(None if len(owners) == 1 else key.table, key.column)


_ATOM_ORDER = {'algebraic': 0, 'arith': 1, 'like': 2, 'in_list': 3}


def _atom_sort_key(atom: PredicateAtom):
    return (atom.null_guard is not None, _ATOM_ORDER[atom.kind], atom.column, atom.other or atom.column,
            atom.op or '')


def atoms_to_where(atoms: List[PredicateAtom], tables: Sequence[str], catalog):
    """确定性排序；同一列的 >= 与 <= 合并为 BETWEEN"""
    def ref(k):
        return column_ref(k, tables, catalog)

    atoms = sorted(atoms, key=_atom_sort_key)
    lows = {a.column: a for a in atoms if a.kind == 'arith' and a.op == '>=' and a.null_guard is None}
    highs = {a.column: a for a in atoms if a.kind == 'arith' and a.op == '<=' and a.null_guard is None}
    preds, merged = [], set()
    for atom in atoms:
        if atom.kind == 'arith' and atom.null_guard is None and atom.column in lows and atom.column in highs:
            if atom.column in merged:
                continue
            merged.add(atom.column)
            pred = Between(ref(atom.column), Literal(lows[atom.column].value), Literal(highs[atom.column].value))
        elif atom.kind in ('arith', 'algebraic'):
            right = ref(atom.other) if atom.kind == 'algebraic' else Literal(atom.value)
            pred = Comparison(atom.op, ref(atom.column), right)
        elif atom.kind == 'like':
            pred = Like(ref(atom.column), atom.value)
        else:
            pred = InList(ref(atom.column), tuple(Literal(v) for v in atom.value))
        if atom.null_guard is not None:
            pred = Or((pred, IsNull(ref(atom.null_guard))))
        preds.append(pred)
    return make_and(preds)


def build_block(spec: BlockSpec, catalog) -> QueryBlock:
    return QueryBlock(
        select=tuple(spec.select),
        from_=tuple(TableRef(t) for t in sorted(spec.tables)),
        where=atoms_to_where(spec.atoms, spec.tables, catalog),
        group_by=tuple(spec.group_by),
        order_by=tuple(spec.order_by),
        limit=spec.limit,
    )


def _lift_to_union(order_by: Tuple[OrderItem, ...], select: Tuple[SelectItem, ...]) -> Tuple[OrderItem, ...]:
    """分支内的排序键改写为按输出列名排序"""
    lifted = []
    for item in order_by:
        name = None
        for s in select:
            if s.expr == item.expr or (isinstance(item.expr, ColumnRef) and s.alias == item.expr.name):
                name = s.alias or (s.expr.name if isinstance(s.expr, ColumnRef) else None)
                break
        if name is None:
            return ()
        lifted.append(OrderItem(ColumnRef(None, name), item.descending))
    return tuple(lifted)


def assemble_seed(blocks: List[BlockSpec], catalog) -> Tuple[Query, RenderedSQL]:
    """
    拼装种子查询：各分支为平坦合取块，以 UNION ALL 连接；
    所有分支的 ORDER BY / LIMIT 一致时提升到并集层

    Returns:
        (Q_S, 渲染结果与规范摘要)
    """
    built = [build_block(b, catalog) for b in blocks]
    if len(built) == 1:
        query = Query((built[0],))
    else:
        orders = {tuple((o.descending,) for o in b.order_by) for b in built}
        limits = {b.limit for b in built}
        order_by: Tuple[OrderItem, ...] = ()
        limit = None
        if len(limits) == 1:
            limit = limits.pop()
        if len(orders) == 1 and built[0].order_by:
            order_by = _lift_to_union(built[0].order_by, built[0].select)
            if any(_lift_to_union(b.order_by, b.select) != order_by for b in built[1:]):
                order_by = ()
        if order_by or limit is not None:
            built = [replace(b, order_by=() if order_by else b.order_by, limit=None if limit is not None else b.limit)
                     for b in built]
        query = Query(tuple(built), order_by, limit)
    rendered = RenderedSQL.of(query)
    logger.info(f"种子查询 Q_S: {rendered.text}")
    return query, rendered
