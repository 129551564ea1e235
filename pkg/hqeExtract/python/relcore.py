#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
关系数据模型模块
提供属性域、模式目录、数据库状态（含变更与回滚）、结果集以及 FIT 分类，
供抽取引擎的其他模块共用
"""

import csv
import hashlib
import io
import json
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ValidationError

from hqe_errors import (DataLoadError, DomainError, MutationOrderError, NameCollisionError,
                        ResolutionError, SchemaError, UnknownTableError)

logger = logging.getLogger(__name__)

# 日期以相对该纪元的天数参与网格运算
EPOCH = date(1970, 1, 1)

DEFAULT_INT_RANGE = (-(2 ** 31), 2 ** 31 - 1)
DEFAULT_DECIMAL_RANGE = (-(10 ** 9), 10 ** 9)
DEFAULT_DATE_RANGE = (date(1990, 1, 1), date(2030, 12, 31))
TEXT_MAX = '\U0010ffff'


class DomainKind(str, Enum):
    INTEGER = 'integer'
    DECIMAL = 'decimal'
    DATE = 'date'
    TEXT_CATEGORICAL = 'text-categorical'
    TEXT_FREE = 'text-free'


class FitClass(str, Enum):
    FIT = 'FIT'
    UNFIT = 'UNFIT'
    EMPTY = 'EMPTY'


@dataclass(frozen=True)
class AttrDomain:
    """属性域：类型、上下界与步长网格"""

    kind: DomainKind
    i_min: Any = None
    i_max: Any = None
    scale: int = 0
    enum_values: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == DomainKind.TEXT_CATEGORICAL:
            if not self.enum_values:
                raise DomainError("分类文本域必须给出枚举值")
            values = tuple(sorted(set(self.enum_values)))
            object.__setattr__(self, 'enum_values', values)
            object.__setattr__(self, 'i_min', values[0])
            object.__setattr__(self, 'i_max', values[-1])
            return
        if self.enum_values:
            raise DomainError(f"{self.kind.value} 域不允许枚举值")
        if self.kind == DomainKind.TEXT_FREE:
            object.__setattr__(self, 'i_min', '' if self.i_min is None else self.i_min)
            object.__setattr__(self, 'i_max', TEXT_MAX if self.i_max is None else self.i_max)
        else:
            defaults = {
                DomainKind.INTEGER: DEFAULT_INT_RANGE,
                DomainKind.DECIMAL: DEFAULT_DECIMAL_RANGE,
                DomainKind.DATE: DEFAULT_DATE_RANGE,
            }[self.kind]
            lo = defaults[0] if self.i_min is None else self.i_min
            hi = defaults[1] if self.i_max is None else self.i_max
            object.__setattr__(self, 'i_min', self._coerce_raw(lo))
            object.__setattr__(self, 'i_max', self._coerce_raw(hi))
        if self.scale < 0:
            raise DomainError("小数位数不能为负")
        if self.i_min > self.i_max:
            raise DomainError(f"域下界 {self.i_min} 大于上界 {self.i_max}")

    @property
    def is_ordered(self) -> bool:
        return self.kind != DomainKind.TEXT_FREE

    @property
    def is_numeric(self) -> bool:
        return self.kind in (DomainKind.INTEGER, DomainKind.DECIMAL)

    @property
    def step(self):
        """最小可表示增量"""
        if self.kind == DomainKind.DECIMAL:
            return Decimal(1).scaleb(-self.scale)
        if self.kind == DomainKind.DATE:
            return timedelta(days=1)
        return 1

    @property
    def signature(self) -> Tuple[str, int]:
        return (self.kind.value, self.scale if self.kind == DomainKind.DECIMAL else 0)

    def _quantum(self) -> Decimal:
        return Decimal(1).scaleb(-self.scale)

    def _coerce_raw(self, value):
        if self.kind == DomainKind.INTEGER:
            if isinstance(value, str):
                return int(value.strip())
            if isinstance(value, Decimal):
                if value != value.to_integral_value():
                    raise DomainError(f"整数域不接受 {value}")
                return int(value)
            return int(value)
        if self.kind == DomainKind.DECIMAL:
            try:
                return Decimal(str(value).strip()).quantize(self._quantum())
            except InvalidOperation as e:
                raise DomainError(f"无法解析小数 {value!r}: {e}")
        if self.kind == DomainKind.DATE:
            if isinstance(value, date):
                return value
            try:
                return date.fromisoformat(str(value).strip())
            except ValueError as e:
                raise DomainError(f"无法解析日期 {value!r}: {e}")
        return str(value)

    def coerce(self, value):
        """把文本或 Python 值转换为本域的类型化取值"""
        if value is None:
            return None
        try:
            return self._coerce_raw(value)
        except (TypeError, ValueError) as e:
            raise DomainError(f"{self.kind.value} 域无法接受 {value!r}: {e}")

    def contains(self, value) -> bool:
        if value is None:
            return True
        try:
            v = self.coerce(value)
        except DomainError:
            return False
        if self.kind == DomainKind.TEXT_CATEGORICAL:
            return v in self.enum_values
        if self.kind == DomainKind.DECIMAL and v != Decimal(str(value)):
            return False
        return self.i_min <= v <= self.i_max

    def to_grid(self, value) -> int:
        """取值映射到整数网格位置"""
        v = self.coerce(value)
        if self.kind == DomainKind.INTEGER:
            return v
        if self.kind == DomainKind.DECIMAL:
            return int(v.scaleb(self.scale).to_integral_value())
        if self.kind == DomainKind.DATE:
            return (v - EPOCH).days
        if self.kind == DomainKind.TEXT_CATEGORICAL:
            try:
                return self.enum_values.index(v)
            except ValueError:
                raise DomainError(f"{v!r} 不在枚举值内")
        raise DomainError("自由文本域没有网格")

    def from_grid(self, position: int):
        if self.kind == DomainKind.INTEGER:
            return int(position)
        if self.kind == DomainKind.DECIMAL:
            return Decimal(int(position)).scaleb(-self.scale).quantize(self._quantum())
        if self.kind == DomainKind.DATE:
            return EPOCH + timedelta(days=int(position))
        if self.kind == DomainKind.TEXT_CATEGORICAL:
            return self.enum_values[int(position)]
        raise DomainError("自由文本域没有网格")

    @property
    def grid_min(self) -> int:
        return self.to_grid(self.i_min)

    @property
    def grid_max(self) -> int:
        return self.to_grid(self.i_max)

    def format(self, value) -> str:
        if value is None:
            return ''
        if self.kind == DomainKind.DECIMAL:
            return format(self.coerce(value), 'f')
        if self.kind == DomainKind.DATE:
            return self.coerce(value).isoformat()
        return str(value)


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    domain: AttrDomain
    nullable: bool = True


@dataclass(frozen=True)
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: Tuple[ColumnSchema, ...]
    primary_key: Tuple[str, ...] = ()
    foreign_keys: Tuple[ForeignKey, ...] = ()

    @property
    def column_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def index_of(self, column: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == column:
                return i
        raise SchemaError(f"表 {self.name} 没有列 {column}")

    def column(self, column: str) -> ColumnSchema:
        return self.columns[self.index_of(column)]

    def has_column(self, column: str) -> bool:
        return any(c.name == column for c in self.columns)


class SchemaCatalog:
    """模式目录"""

    def __init__(self, tables: Iterable[TableSchema]):
        self.tables: Dict[str, TableSchema] = {}
        for t in tables:
            if t.name in self.tables:
                raise SchemaError(f"表名重复: {t.name}")
            names = t.column_names
            if len(set(names)) != len(names):
                raise SchemaError(f"表 {t.name} 列名重复")
            for pk in t.primary_key:
                t.index_of(pk)
            self.tables[t.name] = t
        for t in self.tables.values():
            for fk in t.foreign_keys:
                t.index_of(fk.column)
                if fk.ref_table not in self.tables:
                    raise SchemaError(f"外键 {t.name}.{fk.column} 引用不存在的表 {fk.ref_table}")
                self.tables[fk.ref_table].index_of(fk.ref_column)

    @property
    def table_names(self) -> List[str]:
        return sorted(self.tables)

    def table(self, name: str) -> TableSchema:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTableError(f"未知表: {name}")

    def domain(self, table: str, column: str) -> AttrDomain:
        return self.table(table).column(column).domain

    def tables_with_column(self, column: str) -> List[str]:
        return [n for n in self.table_names if self.tables[n].has_column(column)]

    def fk_edges(self) -> List[Tuple[str, str, str, str]]:
        """(子表, 子列, 父表, 父列)"""
        edges = []
        for name in self.table_names:
            for fk in self.tables[name].foreign_keys:
                edges.append((name, fk.column, fk.ref_table, fk.ref_column))
        return edges

    def to_ddl(self) -> str:
        """渲染为 DDL 文本（用于提示词的 Schema 槽位）"""
        parts = []
        for name in self.table_names:
            t = self.tables[name]
            lines = []
            for c in t.columns:
                lines.append(f"  {c.name} {_sql_type(c.domain)}" + ('' if c.nullable else ' NOT NULL'))
            if t.primary_key:
                lines.append(f"  PRIMARY KEY ({', '.join(t.primary_key)})")
            for fk in t.foreign_keys:
                lines.append(f"  FOREIGN KEY ({fk.column}) REFERENCES {fk.ref_table}({fk.ref_column})")
            parts.append(f"CREATE TABLE {name} (\n" + ',\n'.join(lines) + "\n);")
        return '\n'.join(parts)


def _sql_type(d: AttrDomain) -> str:
    if d.kind == DomainKind.INTEGER:
        return 'INTEGER'
    if d.kind == DomainKind.DECIMAL:
        return f'DECIMAL(15,{d.scale})'
    if d.kind == DomainKind.DATE:
        return 'DATE'
    return 'VARCHAR'


class DomainOverride(BaseModel):
    """侧车文件中单列的域覆盖"""

    min: Optional[Union[int, float, str]] = None
    max: Optional[Union[int, float, str]] = None
    enum: Optional[List[str]] = None


def load_domain_sidecar(path: Optional[str]) -> Dict[str, DomainOverride]:
    if not path:
        return {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
        result = {key.lower(): DomainOverride.model_validate(value) for key, value in raw.items()}
        logger.info(f"成功加载域定义文件: {path}（{len(result)} 列）")
        return result
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise SchemaError(f"域定义文件无效 {path}: {e}")


_TYPE_RE = re.compile(r'^(\w+)(?:\s+(?!(?:PRIMARY|NOT|NULL|REFERENCES|DEFAULT|UNIQUE)\b)\w+)?'
                      r'\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?', re.IGNORECASE)


def _split_top_level(body: str) -> List[str]:
    items, depth, current = [], 0, []
    for ch in body:
        if ch == '(':
            depth += 1
        elif ch == ')':
            depth -= 1
        if ch == ',' and depth == 0:
            items.append(''.join(current).strip())
            current = []
        else:
            current.append(ch)
    if ''.join(current).strip():
        items.append(''.join(current).strip())
    return items


def _domain_for(type_name: str, scale: Optional[str], override: Optional[DomainOverride]) -> AttrDomain:
    t = type_name.upper()
    lo = override.min if override else None
    hi = override.max if override else None
    if t in ('INTEGER', 'INT', 'BIGINT', 'SMALLINT'):
        return AttrDomain(DomainKind.INTEGER, lo, hi)
    if t in ('DECIMAL', 'NUMERIC'):
        return AttrDomain(DomainKind.DECIMAL, lo, hi, scale=int(scale or 0))
    if t == 'DATE':
        return AttrDomain(DomainKind.DATE, lo, hi)
    if t in ('CHAR', 'VARCHAR', 'TEXT', 'CHARACTER'):
        if override and override.enum:
            return AttrDomain(DomainKind.TEXT_CATEGORICAL, enum_values=tuple(override.enum))
        return AttrDomain(DomainKind.TEXT_FREE)
    raise SchemaError(f"不支持的列类型: {type_name}")


def parse_ddl(text: str, domains: Optional[Dict[str, DomainOverride]] = None) -> SchemaCatalog:
    """
    解析 DDL 子集（CREATE TABLE、列类型、PRIMARY KEY、FOREIGN KEY）

    Args:
        text: DDL 文本
        domains: 侧车域覆盖，键为 table.column

    Returns:
        模式目录
    """
    domains = domains or {}
    text = re.sub(r'--[^\n]*', '', text)
    tables = []
    for stmt in text.split(';'):
        stmt = stmt.strip()
        if not stmt:
            continue
        m = re.match(r'CREATE\s+TABLE\s+(\w+)\s*\((.*)\)\s*$', stmt, re.IGNORECASE | re.DOTALL)
        if not m:
            raise SchemaError(f"无法解析的 DDL 语句: {stmt[:60]}")
        name = m.group(1).lower()
        columns, pk, fks = [], [], []
        for item in _split_top_level(m.group(2)):
            item = re.sub(r'^CONSTRAINT\s+\w+\s+', '', item, flags=re.IGNORECASE)
            upper = item.upper()
            if upper.startswith('PRIMARY KEY'):
                cols = re.search(r'\((.*)\)', item).group(1)
                pk.extend(c.strip().lower() for c in cols.split(','))
                continue
            if upper.startswith('FOREIGN KEY'):
                fm = re.match(r'FOREIGN\s+KEY\s*\(\s*(\w+)\s*\)\s*REFERENCES\s+(\w+)\s*\(\s*(\w+)\s*\)',
                              item, re.IGNORECASE)
                if not fm:
                    raise SchemaError(f"表 {name} 外键定义无法解析: {item}")
                fks.append(ForeignKey(fm.group(1).lower(), fm.group(2).lower(), fm.group(3).lower()))
                continue
            parts = item.split(None, 1)
            if len(parts) < 2:
                raise SchemaError(f"表 {name} 列定义缺少类型: {item}")
            col = parts[0].lower()
            tm = _TYPE_RE.match(parts[1])
            if not tm:
                raise SchemaError(f"表 {name} 列 {col} 类型无法解析")
            override = domains.get(f"{name}.{col}")
            domain = _domain_for(tm.group(1), tm.group(3), override)
            rest = parts[1][tm.end():].upper()
            nullable = 'NOT NULL' not in rest and 'PRIMARY KEY' not in rest
            if 'PRIMARY KEY' in rest:
                pk.append(col)
            rm = re.search(r'REFERENCES\s+(\w+)\s*\(\s*(\w+)\s*\)', parts[1], re.IGNORECASE)
            if rm:
                fks.append(ForeignKey(col, rm.group(1).lower(), rm.group(2).lower()))
            columns.append(ColumnSchema(col, domain, nullable))
        tables.append(TableSchema(name, tuple(columns), tuple(pk), tuple(fks)))
    catalog = SchemaCatalog(tables)
    for key in domains:
        table, _, column = key.partition('.')
        if table not in catalog.tables or not catalog.tables[table].has_column(column):
            logger.warning(f"域定义引用了不存在的列: {key}")
    return catalog


@dataclass
class UndoToken:
    """撤销令牌，必须按后进先出顺序回滚"""

    state_label: str
    token_id: int
    op: str
    undo: Any = field(repr=False, default=None)
    table: Optional[str] = None


def format_cell(value) -> str:
    """结果单元格的规范文本"""
    if value is None:
        return '\\N'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, Decimal):
        if value == value.to_integral_value():
            return str(int(value))
        return format(value.normalize(), 'f')
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


class DatabaseState:
    """
    可变数据库状态
    维护每表的行存储、重命名覆盖层、清空集合与单调递增的变更计数，
    所有变更均产生撤销令牌并写入会话日志
    """

    def __init__(self, catalog: SchemaCatalog, rows: Optional[Dict[str, Sequence[Sequence[Any]]]] = None,
                 label: str = 'D_I', journal=None):
        self.catalog = catalog
        rows = rows or {}
        unknown = set(rows) - set(catalog.tables)
        if unknown:
            raise UnknownTableError(f"数据包含未知表: {sorted(unknown)}")
        self._rows: Dict[str, List[List[Any]]] = {}
        for name in catalog.table_names:
            arity = len(catalog.tables[name].columns)
            table_rows = [list(r) for r in rows.get(name, [])]
            for r in table_rows:
                if len(r) != arity:
                    raise DataLoadError(f"表 {name} 的行宽度 {len(r)} 与模式 {arity} 不符")
            self._rows[name] = table_rows
        self.rename_overlay: Dict[str, str] = {}
        self.void_set: Set[str] = set()
        self.generation = 0
        self.label = label
        self.journal = journal
        self.annotations: Dict[str, Any] = {}
        self._undo_stack: List[UndoToken] = []
        self._token_counter = 0
        self._child_counter = 0

    # ---- 读取 ----

    def resolve(self, name: str) -> str:
        """按当前重命名覆盖层解析查询中出现的表名"""
        name = name.lower()
        if name in self.rename_overlay:
            raise ResolutionError(f"relation \"{name}\" does not exist")
        for original, dummy in self.rename_overlay.items():
            if dummy == name:
                return original
        if name not in self.catalog.tables:
            raise ResolutionError(f"relation \"{name}\" does not exist")
        return name

    def table_rows(self, name: str) -> List[List[Any]]:
        """可见行；被清空的表返回空列表"""
        if name in self.void_set:
            return []
        return self._rows[name]

    def raw_rows(self, name: str) -> List[List[Any]]:
        return self._rows[name]

    def row_count(self, name: str) -> int:
        return len(self.table_rows(name))

    def effective_name(self, name: str) -> str:
        return self.rename_overlay.get(name, name)

    def populated_tables(self) -> List[str]:
        return [t for t in self.catalog.table_names if self.row_count(t) > 0]

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in self.catalog.table_names:
            h.update(f"{name}|{self.effective_name(name)}|{int(name in self.void_set)}\n".encode('utf-8'))
            for r in self._rows[name]:
                h.update(('\x1f'.join(format_cell(v) for v in r) + '\n').encode('utf-8'))
        return h.hexdigest()

    def content_equals(self, other: 'DatabaseState') -> bool:
        return self.digest() == other.digest()

    def assert_null_free(self):
        for name in self.catalog.table_names:
            for i, r in enumerate(self._rows[name]):
                if any(v is None for v in r):
                    raise DataLoadError(f"初始数据库必须不含 NULL: 表 {name} 第 {i + 1} 行")

    # ---- 变更 ----

    def _record(self, op: str, args: Dict[str, Any]):
        if self.journal is not None:
            self.journal.record('mutation', state=self.label, op=op, args=args, generation=self.generation)

    def encode_rows(self, table: str, rows: Sequence[Sequence[Any]]) -> List[List[str]]:
        domains = [c.domain for c in self.catalog.tables[table].columns]
        return [[None if v is None else d.format(v) for d, v in zip(domains, r)] for r in rows]

    def decode_rows(self, table: str, rows: Sequence[Sequence[str]]) -> List[List[Any]]:
        domains = [c.domain for c in self.catalog.tables[table].columns]
        return [[None if v is None else d.coerce(v) for d, v in zip(domains, r)] for r in rows]

    def apply(self, op: str, **args) -> UndoToken:
        """
        执行一次可撤销变更

        Args:
            op: void | rename | set | rows | keep
            args: 变更参数（类型化取值）

        Returns:
            撤销令牌
        """
        if op == 'void':
            tables = sorted(args['tables'])
            for t in tables:
                self.catalog.table(t)
            undo = {t: t in self.void_set for t in tables}
            self.void_set.update(tables)
            encoded = {'tables': tables}
        elif op == 'rename':
            table, dummy = args['table'], args['dummy'].lower()
            self.catalog.table(table)
            taken = set(self.catalog.tables) | set(self.rename_overlay.values())
            if dummy in taken or table in self.rename_overlay:
                raise NameCollisionError(f"重命名目标已被占用: {dummy}")
            self.rename_overlay[table] = dummy
            undo = table
            encoded = {'table': table, 'dummy': dummy}
        elif op == 'set':
            table, column = args['table'], args['column']
            row = args.get('row', 0)
            schema = self.catalog.table(table)
            col = schema.column(column)
            value = args['value']
            if not col.domain.contains(value):
                raise DomainError(f"{table}.{column} 的取值 {value!r} 超出域")
            value = col.domain.coerce(value)
            rows = self._rows[table]
            if not 0 <= row < len(rows):
                raise DomainError(f"表 {table} 没有第 {row} 行")
            idx = schema.index_of(column)
            undo = (row, idx, rows[row][idx])
            rows[row][idx] = value
            encoded = {'table': table, 'column': column, 'row': row, 'value': col.domain.format(value)}
        elif op == 'rows':
            table = args['table']
            self.catalog.table(table)
            new_rows = [list(r) for r in args['rows']]
            undo = self._rows[table]
            self._rows[table] = new_rows
            encoded = {'table': table, 'rows': self.encode_rows(table, new_rows)}
        elif op == 'keep':
            table = args['table']
            self.catalog.table(table)
            indices = list(args['indices'])
            undo = self._rows[table]
            self._rows[table] = [list(undo[i]) for i in indices]
            encoded = {'table': table, 'indices': indices}
        else:
            raise ValueError(f"未知变更类型: {op}")
        self._token_counter += 1
        token = UndoToken(self.label, self._token_counter, op, undo, table=args.get('table'))
        self._undo_stack.append(token)
        self.generation += 1
        self._record(op, encoded)
        return token

    def _check_top(self, token: UndoToken):
        if not self._undo_stack or self._undo_stack[-1] is not token:
            raise MutationOrderError(f"撤销令牌 {token.token_id} 不在栈顶，拒绝乱序回滚")

    def revert(self, token: UndoToken):
        self._check_top(token)
        self._undo_stack.pop()
        if token.op == 'void':
            for t, was_void in token.undo.items():
                if not was_void:
                    self.void_set.discard(t)
        elif token.op == 'rename':
            del self.rename_overlay[token.undo]
        elif token.op == 'set':
            row, idx, old = token.undo
            self._rows[token.table][row][idx] = old
        elif token.op in ('rows', 'keep'):
            self._rows[token.table] = token.undo
        self.generation += 1
        self._record('revert', {'token': token.token_id})

    def commit(self, token: UndoToken):
        """确认变更：丢弃撤销信息，变更保留"""
        self._check_top(token)
        self._undo_stack.pop()
        self._record('commit', {'token': token.token_id})

    @property
    def pending_tokens(self) -> int:
        return len(self._undo_stack)

    def derive(self, keep: Optional[Dict[str, Sequence[int]]] = None, label: Optional[str] = None) -> 'DatabaseState':
        """
        派生新状态：复制当前内容（可按行号保留子集），继承清空集合与重命名覆盖层
        """
        self._child_counter += 1
        child_label = label or f"{self.label}.{self._child_counter}"
        rows = {}
        for name in self.catalog.table_names:
            source = self._rows[name]
            if keep is not None and name in keep:
                rows[name] = [list(source[i]) for i in keep[name]]
            else:
                rows[name] = [list(r) for r in source]
        child = DatabaseState(self.catalog, rows, label=child_label, journal=self.journal)
        child.void_set = set(self.void_set)
        child.rename_overlay = dict(self.rename_overlay)
        if self.journal is not None:
            self.journal.record('mutation', state=child_label, op='derive',
                                args={'source': self.label,
                                      'keep': {k: list(v) for k, v in (keep or {}).items()}},
                                generation=0)
        return child


@dataclass
class ResultSet:
    """结果集：列头、行多重集以及顺序是否有意义"""

    columns: Tuple[str, ...]
    rows: List[Tuple[Any, ...]]
    ordered: bool = False

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.rows = [tuple(r) for r in self.rows]
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"结果行宽度 {len(r)} 与列头 {len(self.columns)} 不符")

    def __len__(self):
        return len(self.rows)

    def multiset(self) -> Counter:
        return Counter(self.rows)

    def canonical_csv(self) -> str:
        lines = [[format_cell(v) for v in r] for r in self.rows]
        if not self.ordered:
            lines.sort()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(self.columns)
        writer.writerows(lines)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_csv().encode('utf-8')).hexdigest()

    @property
    def fit_class(self) -> FitClass:
        return classify_fit(self)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[format_cell(v) if v is not None else None for v in r] for r in self.rows],
                            columns=list(self.columns))


def classify_fit(r: ResultSet) -> FitClass:
    """FIT：至少一行不含 NULL；UNFIT：有行但每行都含 NULL；EMPTY：无行"""
    if not r.rows:
        return FitClass.EMPTY
    for row in r.rows:
        if all(v is not None for v in row):
            return FitClass.FIT
    return FitClass.UNFIT


def domain_midpoint(d: AttrDomain, lo, hi):
    """在步长网格上取 [lo, hi] 的中点（向下取整）"""
    if not d.is_ordered:
        raise DomainError("自由文本域不支持中点运算")
    if not (d.contains(lo) and d.contains(hi)):
        raise DomainError(f"区间端点超出域: {lo}, {hi}")
    g_lo, g_hi = d.to_grid(lo), d.to_grid(hi)
    if g_lo > g_hi:
        raise DomainError(f"区间下界 {lo} 大于上界 {hi}")
    return d.from_grid(g_lo + (g_hi - g_lo) // 2)


def multiset_diff(left: ResultSet, right: ResultSet) -> Tuple[Counter, Counter]:
    """多重集对称差：(仅左侧有的行, 仅右侧有的行)"""
    a, b = left.multiset(), right.multiset()
    return a - b, b - a


def load_database(ddl_path: str, data_dir: str, domains_path: Optional[str] = None,
                  label: str = 'D_I', journal=None) -> DatabaseState:
    """
    从 DDL、侧车域文件与每表一个 CSV 加载初始数据库

    Args:
        ddl_path: DDL 文件路径
        data_dir: CSV 目录（文件名为 <表名>.csv）
        domains_path: 可选的域定义 JSON

    Returns:
        数据库状态（已断言不含 NULL）
    """
    try:
        with open(ddl_path, 'r', encoding='utf-8') as f:
            ddl = f.read()
    except OSError as e:
        raise SchemaError(f"无法读取 DDL 文件 {ddl_path}: {e}")
    catalog = parse_ddl(ddl, load_domain_sidecar(domains_path))
    rows = {}
    for name in catalog.table_names:
        path = os.path.join(data_dir, f"{name}.csv")
        if not os.path.exists(path):
            logger.warning(f"数据文件不存在，按空表处理: {path}")
            continue
        rows[name] = read_table_csv(catalog.tables[name], path)
    db = DatabaseState(catalog, rows, label=label, journal=journal)
    db.assert_null_free()
    logger.info(f"加载数据库完成: {len(catalog.tables)} 张表, "
                f"{sum(len(v) for v in rows.values())} 行")
    return db


def read_table_csv(table: TableSchema, path: str) -> List[List[Any]]:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[])
    except Exception as e:
        raise DataLoadError(f"读取 CSV 失败 {path}: {e}")
    frame.columns = [c.strip().lower() for c in frame.columns]
    missing = [c for c in table.column_names if c not in frame.columns]
    if missing:
        raise DataLoadError(f"{path} 缺少列: {missing}")
    rows = []
    for record in frame[list(table.column_names)].itertuples(index=False):
        row = []
        for col, raw in zip(table.columns, record):
            row.append(None if raw == '' else col.domain.coerce(raw))
        rows.append(row)
    return rows


def dump_database(db: DatabaseState, out_dir: str, effective_names: bool = False) -> List[str]:
    """每表写出一个 CSV；被清空的表只写列头"""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in db.catalog.table_names:
        schema = db.catalog.tables[name]
        file_name = db.effective_name(name) if effective_names else name
        frame = pd.DataFrame(db.encode_rows(name, db.table_rows(name)), columns=list(schema.column_names))
        path = os.path.join(out_dir, f"{file_name}.csv")
        frame.to_csv(path, index=False)
        written.append(path)
    return written
