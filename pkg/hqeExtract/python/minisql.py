#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
SQL 子集模块
提供查询中间表示（QueryIR）、词法分析、递归下降解析、确定性渲染以及规范化，
支持 SPJGAOL、UNION ALL、LEFT OUTER JOIN、IN（列表 / 子查询）、标量子查询比较、
LIKE、IS NULL 与算术投影；其余语法给出明确的不支持诊断
"""

import hashlib
import logging
import re
from dataclasses import dataclass, replace
from datetime import date
from decimal import Decimal
from typing import Any, Dict, Iterator, List, Optional, Tuple

from hqe_errors import SqlSyntaxError, UnsupportedFeatureError

logger = logging.getLogger(__name__)

# 顶层查询为第 0 层，子查询与派生表每嵌套一次加一
MAX_NESTING = 2

AGGREGATES = ('SUM', 'COUNT', 'MIN', 'MAX', 'AVG')
COMPARISON_OPS = ('=', '<', '<=', '>', '>=')


# ---------------------------------------------------------------------------
# 中间表示
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnRef:
    table: Optional[str]
    name: str


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class Arith:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class Aggregate:
    func: str
    arg: Any = None  # None 表示 COUNT(*)


@dataclass(frozen=True)
class ScalarSubquery:
    query: 'Query'


@dataclass(frozen=True)
class Star:
    table: Optional[str] = None


@dataclass(frozen=True)
class Comparison:
    op: str
    left: Any
    right: Any


@dataclass(frozen=True)
class Between:
    expr: Any
    low: Any
    high: Any


@dataclass(frozen=True)
class Like:
    expr: Any
    pattern: str


@dataclass(frozen=True)
class InList:
    expr: Any
    values: Tuple[Literal, ...]


@dataclass(frozen=True)
class InSubquery:
    expr: Any
    query: 'Query'


@dataclass(frozen=True)
class IsNull:
    expr: Any
    negated: bool = False


@dataclass(frozen=True)
class And:
    items: Tuple[Any, ...]


@dataclass(frozen=True)
class Or:
    items: Tuple[Any, ...]


@dataclass(frozen=True)
class TableRef:
    name: str
    alias: Optional[str] = None

    @property
    def binding(self) -> str:
        return self.alias or self.name


@dataclass(frozen=True)
class DerivedTable:
    query: 'Query'
    alias: str

    @property
    def binding(self) -> str:
        return self.alias


@dataclass(frozen=True)
class Join:
    left: Any
    right: Any
    kind: str  # inner | left
    condition: Any


@dataclass(frozen=True)
class SelectItem:
    expr: Any
    alias: Optional[str] = None


@dataclass(frozen=True)
class OrderItem:
    expr: Any
    descending: bool = False


@dataclass(frozen=True)
class QueryBlock:
    select: Tuple[SelectItem, ...]
    from_: Tuple[Any, ...]
    where: Any = None
    group_by: Tuple[Any, ...] = ()
    order_by: Tuple[OrderItem, ...] = ()
    limit: Optional[int] = None


@dataclass(frozen=True)
class Query:
    """UNION ALL 分支列表；单分支查询的 ORDER BY / LIMIT 放在分支内"""

    branches: Tuple[QueryBlock, ...]
    order_by: Tuple[OrderItem, ...] = ()
    limit: Optional[int] = None

    @property
    def is_union(self) -> bool:
        return len(self.branches) > 1


PREDICATE_TYPES = (Comparison, Between, Like, InList, InSubquery, IsNull, And, Or)


# ---------------------------------------------------------------------------
# 词法分析
# ---------------------------------------------------------------------------

KEYWORDS = {
    'SELECT', 'FROM', 'WHERE', 'AND', 'OR', 'NOT', 'IN', 'LIKE', 'BETWEEN', 'IS', 'NULL',
    'AS', 'ON', 'JOIN', 'LEFT', 'RIGHT', 'FULL', 'INNER', 'OUTER', 'CROSS', 'ORDER', 'BY',
    'ASC', 'DESC', 'LIMIT', 'OFFSET', 'GROUP', 'HAVING', 'DISTINCT', 'ALL', 'UNION',
    'INTERSECT', 'EXCEPT', 'DATE', 'INTERVAL', 'EXISTS', 'CASE', 'WITH', 'NULLS', 'ANY', 'SOME',
}

# 解析到这些关键字时直接给出不支持诊断
UNSUPPORTED_KEYWORDS = {
    'HAVING': 'HAVING', 'DISTINCT': 'DISTINCT', 'INTERVAL': 'INTERVAL', 'EXISTS': 'EXISTS',
    'CASE': 'CASE', 'WITH': 'WITH (CTE)', 'INTERSECT': 'INTERSECT', 'EXCEPT': 'EXCEPT',
    'RIGHT': 'RIGHT JOIN', 'FULL': 'FULL JOIN', 'CROSS': 'CROSS JOIN', 'OFFSET': 'OFFSET',
    'NULLS': 'NULLS FIRST/LAST', 'ANY': 'ANY', 'SOME': 'SOME',
}


@dataclass(frozen=True)
class Token:
    kind: str  # num | str | ident | kw | op | eof
    value: str
    start: int
    end: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<num>\d+(?:\.\d+)?|\.\d+)
  | (?P<str>'(?:[^']|'')*')
  | (?P<qident>"[^"]+")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<op><=|>=|<>|!=|\|\||[=<>(),.*+\-/;])
""", re.VERBOSE)


def tokenize(text: str) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SqlSyntaxError(f"无法识别的字符 {text[pos]!r}", span=(pos, pos + 1))
        kind = m.lastgroup
        value = m.group(kind)
        if kind == 'ws':
            pass
        elif kind == 'ident':
            upper = value.upper()
            if upper in KEYWORDS:
                tokens.append(Token('kw', upper, m.start(), m.end()))
            else:
                tokens.append(Token('ident', value.lower(), m.start(), m.end()))
        elif kind == 'qident':
            tokens.append(Token('ident', value[1:-1].lower(), m.start(), m.end()))
        elif kind == 'str':
            tokens.append(Token('str', value[1:-1].replace("''", "'"), m.start(), m.end()))
        else:
            tokens.append(Token(kind, value, m.start(), m.end()))
        pos = m.end()
    tokens.append(Token('eof', '', len(text), len(text)))
    return tokens


# ---------------------------------------------------------------------------
# 解析
# ---------------------------------------------------------------------------

class Parser:
    """递归下降解析器"""

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0
        self.depth = 0

    # ---- 基础工具 ----

    def _current(self) -> Token:
        return self.tokens[self.pos]

    def _peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def _advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != 'eof':
            self.pos += 1
        return tok

    def _is_kw(self, *words: str) -> bool:
        tok = self._current()
        return tok.kind == 'kw' and tok.value in words

    def _is_op(self, *ops: str) -> bool:
        tok = self._current()
        return tok.kind == 'op' and tok.value in ops

    def _match_kw(self, *words: str) -> bool:
        if self._is_kw(*words):
            self._advance()
            return True
        return False

    def _match_op(self, *ops: str) -> bool:
        if self._is_op(*ops):
            self._advance()
            return True
        return False

    def _expect_kw(self, word: str) -> Token:
        self._check_unsupported()
        if not self._is_kw(word):
            self._fail(f"期望关键字 {word}")
        return self._advance()

    def _expect_op(self, op: str) -> Token:
        if not self._is_op(op):
            self._fail(f"期望 {op!r}")
        return self._advance()

    def _fail(self, message: str):
        tok = self._current()
        found = tok.value or '输入结束'
        raise SqlSyntaxError(f"{message}，实际为 {found!r}", span=(tok.start, tok.end))

    def _unsupported(self, construct: str, tok: Optional[Token] = None):
        tok = tok or self._current()
        raise UnsupportedFeatureError(f"不支持的语法: {construct}", span=(tok.start, tok.end),
                                      construct=construct)

    def _check_unsupported(self):
        tok = self._current()
        if tok.kind == 'kw' and tok.value in UNSUPPORTED_KEYWORDS:
            self._unsupported(UNSUPPORTED_KEYWORDS[tok.value])
        if tok.kind == 'op' and tok.value in ('<>', '!='):
            self._unsupported('<> / !=')
        if tok.kind == 'op' and tok.value == '||':
            self._unsupported('||')

    def _identifier(self) -> str:
        tok = self._current()
        if tok.kind != 'ident':
            self._check_unsupported()
            self._fail("期望标识符")
        self._advance()
        return tok.value

    # ---- 查询 ----

    def parse(self) -> Query:
        query = self._parse_query()
        self._match_op(';')
        if self._current().kind != 'eof':
            self._check_unsupported()
            self._fail("语句结尾多余内容")
        return query

    def _starts_query(self) -> bool:
        i = self.pos
        while self.tokens[i].kind == 'op' and self.tokens[i].value == '(':
            i += 1
        tok = self.tokens[i]
        return tok.kind == 'kw' and tok.value in ('SELECT', 'WITH')

    def _parse_query(self) -> Query:
        branches: List[QueryBlock] = []
        bare_last = False
        while True:
            if self._is_op('('):
                start = self._advance()
                inner = self._parse_query()
                self._expect_op(')')
                if inner.is_union and (inner.order_by or inner.limit is not None):
                    self._unsupported('嵌套 UNION 上的 ORDER BY / LIMIT', start)
                branches.extend(inner.branches)
                bare_last = False
            else:
                branches.append(self._parse_block())
                bare_last = True
            self._check_set_operator()
            if self._is_kw('UNION'):
                tok = self._advance()
                if not self._match_kw('ALL'):
                    self._unsupported('UNION（去重）', tok)
                continue
            break
        order_by, limit = (), None
        if len(branches) > 1:
            last = branches[-1]
            if bare_last and (last.order_by or last.limit is not None):
                order_by, limit = last.order_by, last.limit
                branches[-1] = replace(last, order_by=(), limit=None)
            if self._is_kw('ORDER'):
                order_by = self._parse_order_by()
            if self._is_kw('LIMIT'):
                limit = self._parse_limit()
        elif not bare_last and (self._is_kw('ORDER') or self._is_kw('LIMIT')):
            block = branches[0]
            ob = self._parse_order_by() if self._is_kw('ORDER') else block.order_by
            lim = self._parse_limit() if self._is_kw('LIMIT') else block.limit
            branches[0] = replace(block, order_by=ob, limit=lim)
        return Query(tuple(branches), order_by, limit)

    def _check_set_operator(self):
        if self._is_kw('INTERSECT', 'EXCEPT'):
            self._check_unsupported()

    def _parse_block(self) -> QueryBlock:
        self._check_unsupported()
        self._expect_kw('SELECT')
        self._check_unsupported()
        self._match_kw('ALL')
        select = self._parse_select_list()
        self._expect_kw('FROM')
        from_items = [self._parse_from_item()]
        while self._match_op(','):
            from_items.append(self._parse_from_item())
        where = None
        if self._match_kw('WHERE'):
            where = self._parse_predicate()
        group_by: Tuple = ()
        if self._is_kw('GROUP'):
            self._advance()
            self._expect_kw('BY')
            items = [self._parse_expr()]
            while self._match_op(','):
                items.append(self._parse_expr())
            group_by = tuple(items)
        self._check_unsupported()
        order_by: Tuple = ()
        if self._is_kw('ORDER'):
            order_by = self._parse_order_by()
        limit = None
        if self._is_kw('LIMIT'):
            limit = self._parse_limit()
        self._check_unsupported()
        return QueryBlock(tuple(select), tuple(from_items), where, group_by, order_by, limit)

    def _parse_select_list(self) -> List[SelectItem]:
        items = []
        while True:
            if self._is_op('*'):
                self._advance()
                items.append(SelectItem(Star()))
            elif (self._current().kind == 'ident' and self._peek().kind == 'op'
                  and self._peek().value == '.' and self._peek(2).kind == 'op' and self._peek(2).value == '*'):
                table = self._identifier()
                self._advance()
                self._advance()
                items.append(SelectItem(Star(table)))
            else:
                expr = self._parse_expr()
                alias = None
                if self._match_kw('AS'):
                    alias = self._identifier()
                elif self._current().kind == 'ident':
                    alias = self._identifier()
                items.append(SelectItem(expr, alias))
            if not self._match_op(','):
                break
        return items

    def _parse_order_by(self) -> Tuple[OrderItem, ...]:
        self._expect_kw('ORDER')
        self._expect_kw('BY')
        items = []
        while True:
            expr = self._parse_expr()
            descending = False
            if self._match_kw('DESC'):
                descending = True
            else:
                self._match_kw('ASC')
            self._check_unsupported()
            items.append(OrderItem(expr, descending))
            if not self._match_op(','):
                break
        return tuple(items)

    def _parse_limit(self) -> int:
        self._expect_kw('LIMIT')
        tok = self._current()
        if tok.kind != 'num' or '.' in tok.value:
            self._fail("LIMIT 需要非负整数")
        self._advance()
        self._check_unsupported()
        return int(tok.value)

    def _enter_subquery(self, tok: Token):
        self.depth += 1
        if self.depth > MAX_NESTING:
            self._unsupported(f'嵌套深度超过 {MAX_NESTING}', tok)

    def _parse_subquery(self) -> Query:
        tok = self._current()
        self._enter_subquery(tok)
        try:
            return self._parse_query()
        finally:
            self.depth -= 1

    # ---- FROM ----

    def _parse_from_item(self):
        item = self._parse_from_primary()
        while True:
            self._check_unsupported()
            if self._is_kw('JOIN') or self._is_kw('INNER'):
                if self._match_kw('INNER'):
                    pass
                self._expect_kw('JOIN')
                right = self._parse_from_primary()
                self._expect_kw('ON')
                item = Join(item, right, 'inner', self._parse_predicate())
            elif self._is_kw('LEFT'):
                self._advance()
                self._match_kw('OUTER')
                self._expect_kw('JOIN')
                right = self._parse_from_primary()
                self._expect_kw('ON')
                item = Join(item, right, 'left', self._parse_predicate())
            else:
                return item

    def _parse_from_primary(self):
        if self._is_op('('):
            if not self._starts_query():
                self._advance()
                item = self._parse_from_item()
                self._expect_op(')')
                return item
            self._advance()
            query = self._parse_subquery()
            self._expect_op(')')
            self._match_kw('AS')
            if self._current().kind != 'ident':
                self._fail("派生表必须带别名")
            return DerivedTable(query, self._identifier())
        name = self._identifier()
        alias = None
        if self._match_kw('AS'):
            alias = self._identifier()
        elif self._current().kind == 'ident':
            alias = self._identifier()
        return TableRef(name, alias)

    # ---- 谓词 ----

    def _parse_predicate(self):
        node = self._parse_or()
        if not isinstance(node, PREDICATE_TYPES):
            self._fail("期望布尔谓词")
        return node

    def _parse_or(self):
        items = [self._parse_and()]
        while self._match_kw('OR'):
            items.append(self._parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def _parse_and(self):
        items = [self._parse_not()]
        while self._match_kw('AND'):
            items.append(self._parse_not())
        return items[0] if len(items) == 1 else And(tuple(items))

    def _parse_not(self):
        if self._is_kw('NOT'):
            self._unsupported('NOT')
        self._check_unsupported()
        return self._parse_comparison()

    def _parse_comparison(self):
        left = self._parse_expr()
        self._check_unsupported()
        tok = self._current()
        if tok.kind == 'op' and tok.value in COMPARISON_OPS:
            self._advance()
            self._check_unsupported()
            return Comparison(tok.value, left, self._parse_expr())
        if self._is_kw('NOT'):
            self._unsupported('NOT')
        if self._match_kw('BETWEEN'):
            low = self._parse_expr()
            self._expect_kw('AND')
            return Between(left, low, self._parse_expr())
        if self._match_kw('LIKE'):
            pat = self._current()
            if pat.kind != 'str':
                self._fail("LIKE 需要字符串模式")
            self._advance()
            return Like(left, pat.value)
        if self._match_kw('IN'):
            self._expect_op('(')
            if self._starts_query():
                query = self._parse_subquery()
                self._expect_op(')')
                return InSubquery(left, query)
            values = [self._parse_literal_value()]
            while self._match_op(','):
                values.append(self._parse_literal_value())
            self._expect_op(')')
            return InList(left, tuple(values))
        if self._match_kw('IS'):
            negated = self._match_kw('NOT')
            self._expect_kw('NULL')
            return IsNull(left, negated)
        return left

    def _parse_literal_value(self) -> Literal:
        node = self._parse_unary()
        if not isinstance(node, Literal):
            self._fail("IN 列表只能包含常量")
        return node

    # ---- 表达式 ----

    def _parse_expr(self):
        node = self._parse_term()
        while self._is_op('+', '-'):
            op = self._advance().value
            node = Arith(op, node, self._parse_term())
        return node

    def _parse_term(self):
        node = self._parse_unary()
        while self._is_op('*', '/'):
            op = self._advance().value
            node = Arith(op, node, self._parse_unary())
        return node

    def _parse_unary(self):
        if self._is_op('-'):
            tok = self._advance()
            operand = self._parse_unary()
            if isinstance(operand, Literal) and isinstance(operand.value, (int, Decimal)):
                return Literal(-operand.value)
            return Arith('-', Literal(0), operand)
        if self._is_op('+'):
            self._advance()
            return self._parse_unary()
        return self._parse_primary()

    def _parse_primary(self):
        self._check_unsupported()
        tok = self._current()
        if tok.kind == 'num':
            self._advance()
            return Literal(Decimal(tok.value) if '.' in tok.value else int(tok.value))
        if tok.kind == 'str':
            self._advance()
            return Literal(tok.value)
        if tok.kind == 'kw' and tok.value == 'DATE':
            self._advance()
            lit = self._current()
            if lit.kind != 'str':
                self._fail("DATE 之后需要字符串常量")
            self._advance()
            try:
                return Literal(date.fromisoformat(lit.value))
            except ValueError:
                raise SqlSyntaxError(f"非法日期常量 {lit.value!r}", span=(lit.start, lit.end))
        if tok.kind == 'kw' and tok.value == 'NULL':
            self._unsupported('NULL 常量', tok)
        if tok.kind == 'op' and tok.value == '(':
            if self._starts_query():
                self._advance()
                query = self._parse_subquery()
                self._expect_op(')')
                return ScalarSubquery(query)
            self._advance()
            node = self._parse_or()
            self._expect_op(')')
            return node
        if tok.kind == 'ident':
            name = self._identifier()
            if self._is_op('('):
                return self._parse_function(name, tok)
            if self._is_op('.'):
                self._advance()
                return ColumnRef(name, self._identifier())
            return ColumnRef(None, name)
        self._fail("期望表达式")

    def _parse_function(self, name: str, tok: Token):
        func = name.upper()
        if func not in AGGREGATES:
            self._unsupported(f'函数 {func}', tok)
        self._expect_op('(')
        self._check_unsupported()
        if func == 'COUNT' and self._is_op('*'):
            self._advance()
            self._expect_op(')')
            return Aggregate('COUNT', None)
        self._match_kw('ALL')
        arg = self._parse_expr()
        self._expect_op(')')
        return Aggregate(func, arg)


def parse_sql(text: str) -> Query:
    """
    解析 SQL 文本

    Args:
        text: 支持子集内的 SQL

    Returns:
        Query 中间表示

    Raises:
        SqlSyntaxError: 语法错误
        UnsupportedFeatureError: 语法正确但不在支持子集内
    """
    return Parser(text).parse()


# ---------------------------------------------------------------------------
# 渲染
# ---------------------------------------------------------------------------

_PRECEDENCE = {'+': 1, '-': 1, '*': 2, '/': 2}


def render_literal(value) -> str:
    if isinstance(value, bool):
        raise SqlSyntaxError("不支持布尔常量")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, Decimal):
        return format(value, 'f')
    if isinstance(value, date):
        return f"DATE '{value.isoformat()}'"
    return "'" + str(value).replace("'", "''") + "'"


def render_expr(node) -> str:
    if isinstance(node, ColumnRef):
        return f"{node.table}.{node.name}" if node.table else node.name
    if isinstance(node, Literal):
        return render_literal(node.value)
    if isinstance(node, Arith):
        prec = _PRECEDENCE[node.op]
        left = render_expr(node.left)
        right = render_expr(node.right)
        if isinstance(node.left, Arith) and _PRECEDENCE[node.left.op] < prec:
            left = f"({left})"
        if isinstance(node.right, Arith) and _PRECEDENCE[node.right.op] <= prec:
            right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Aggregate):
        return f"{node.func}(*)" if node.arg is None else f"{node.func}({render_expr(node.arg)})"
    if isinstance(node, ScalarSubquery):
        return f"({render_sql(node.query)})"
    if isinstance(node, Star):
        return f"{node.table}.*" if node.table else '*'
    if isinstance(node, PREDICATE_TYPES):
        return render_predicate(node)
    raise SqlSyntaxError(f"无法渲染节点 {type(node).__name__}")


def render_predicate(node) -> str:
    if isinstance(node, Comparison):
        return f"{render_expr(node.left)} {node.op} {render_expr(node.right)}"
    if isinstance(node, Between):
        return f"{render_expr(node.expr)} BETWEEN {render_expr(node.low)} AND {render_expr(node.high)}"
    if isinstance(node, Like):
        return f"{render_expr(node.expr)} LIKE {render_literal(node.pattern)}"
    if isinstance(node, InList):
        return f"{render_expr(node.expr)} IN ({', '.join(render_expr(v) for v in node.values)})"
    if isinstance(node, InSubquery):
        return f"{render_expr(node.expr)} IN ({render_sql(node.query)})"
    if isinstance(node, IsNull):
        return f"{render_expr(node.expr)} IS {'NOT ' if node.negated else ''}NULL"
    if isinstance(node, And):
        return ' AND '.join(f"({render_predicate(i)})" if isinstance(i, (And, Or)) else render_predicate(i)
                            for i in node.items)
    if isinstance(node, Or):
        return ' OR '.join(f"({render_predicate(i)})" if isinstance(i, (And, Or)) else render_predicate(i)
                           for i in node.items)
    return render_expr(node)


def _render_from(item) -> str:
    if isinstance(item, TableRef):
        return f"{item.name} AS {item.alias}" if item.alias else item.name
    if isinstance(item, DerivedTable):
        return f"({render_sql(item.query)}) AS {item.alias}"
    if isinstance(item, Join):
        keyword = 'LEFT OUTER JOIN' if item.kind == 'left' else 'JOIN'
        right = _render_from(item.right)
        if isinstance(item.right, Join):
            right = f"({right})"
        return f"{_render_from(item.left)} {keyword} {right} ON {render_predicate(item.condition)}"
    raise SqlSyntaxError(f"无法渲染 FROM 项 {type(item).__name__}")


def _render_order(items) -> str:
    return ', '.join(render_expr(o.expr) + (' DESC' if o.descending else '') for o in items)


def render_block(block: QueryBlock) -> str:
    parts = ['SELECT ' + ', '.join(
        render_expr(s.expr) + (f" AS {s.alias}" if s.alias else '') for s in block.select)]
    parts.append('FROM ' + ', '.join(_render_from(f) for f in block.from_))
    if block.where is not None:
        parts.append('WHERE ' + render_predicate(block.where))
    if block.group_by:
        parts.append('GROUP BY ' + ', '.join(render_expr(g) for g in block.group_by))
    if block.order_by:
        parts.append('ORDER BY ' + _render_order(block.order_by))
    if block.limit is not None:
        parts.append(f"LIMIT {block.limit}")
    return ' '.join(parts)


def render_sql(q: Query) -> str:
    """确定性渲染；输出可被 parse_sql 重新解析"""
    if not q.is_union and not q.order_by and q.limit is None:
        return render_block(q.branches[0])
    text = ' UNION ALL '.join(f"({render_block(b)})" for b in q.branches)
    if q.order_by:
        text += ' ORDER BY ' + _render_order(q.order_by)
    if q.limit is not None:
        text += f" LIMIT {q.limit}"
    return text


# ---------------------------------------------------------------------------
# 规范化
# ---------------------------------------------------------------------------

def _norm_literal(lit: Literal) -> Literal:
    v = lit.value
    if isinstance(v, Decimal):
        if v == v.to_integral_value():
            return Literal(int(v))
        return Literal(v.normalize())
    return lit


def _from_leaves(item) -> Iterator[Any]:
    if isinstance(item, Join):
        yield from _from_leaves(item.left)
        yield from _from_leaves(item.right)
    else:
        yield item


def _has_left_join(item) -> bool:
    if isinstance(item, Join):
        return item.kind == 'left' or _has_left_join(item.left) or _has_left_join(item.right)
    return False


def _conjuncts(pred) -> List[Any]:
    if pred is None:
        return []
    if isinstance(pred, And):
        out = []
        for item in pred.items:
            out.extend(_conjuncts(item))
        return out
    return [pred]


def _disjuncts(pred) -> List[Any]:
    if isinstance(pred, Or):
        out = []
        for item in pred.items:
            out.extend(_disjuncts(item))
        return out
    return [pred]


class _Canonicalizer:
    """作用域链上的别名规范化：单实例表去掉限定名，多实例表改为 name_k，派生表改为 dtk"""

    def __init__(self):
        self.scopes: List[Dict[str, Optional[str]]] = []

    def query(self, q: Query) -> Query:
        branches = [self.block(b) for b in q.branches]
        if len(branches) > 1:
            branches.sort(key=render_block)
        order_by = tuple(OrderItem(self.expr(o.expr), o.descending) for o in q.order_by)
        return Query(tuple(branches), order_by, q.limit)

    def _qualifier(self, table: Optional[str]) -> Optional[str]:
        if table is None:
            return None
        for scope in reversed(self.scopes):
            if table in scope:
                return scope[table]
        return table

    def block(self, b: QueryBlock) -> QueryBlock:
        leaves = []
        for item in b.from_:
            leaves.extend(_from_leaves(item))
        counts: Dict[str, int] = {}
        for leaf in leaves:
            if isinstance(leaf, TableRef):
                counts[leaf.name] = counts.get(leaf.name, 0) + 1
        mapping: Dict[str, Optional[str]] = {}
        renamed: Dict[int, Any] = {}
        seen: Dict[str, int] = {}
        derived = 0
        for leaf in leaves:
            if isinstance(leaf, TableRef):
                if counts[leaf.name] == 1:
                    mapping[leaf.binding] = None
                    renamed[id(leaf)] = TableRef(leaf.name)
                else:
                    seen[leaf.name] = seen.get(leaf.name, 0) + 1
                    alias = f"{leaf.name}_{seen[leaf.name]}"
                    mapping[leaf.binding] = alias
                    renamed[id(leaf)] = TableRef(leaf.name, alias)
            else:
                # 派生表不可引用外层，独立规范化
                derived += 1
                mapping[leaf.alias] = None
                renamed[id(leaf)] = DerivedTable(_Canonicalizer().query(leaf.query), f"dt{derived}")
        self.scopes.append(mapping)
        try:
            extra_conjuncts = []
            from_items = []
            for item in b.from_:
                if isinstance(item, Join) and not _has_left_join(item):
                    for leaf in _from_leaves(item):
                        from_items.append(renamed[id(leaf)])
                    extra_conjuncts.extend(self._join_conditions(item))
                else:
                    from_items.append(self._from(item, renamed))
            from_items.sort(key=_render_from)
            conjuncts = [self.pred(c) for c in _conjuncts(b.where) + extra_conjuncts]
            flat = []
            for c in conjuncts:
                flat.extend(_conjuncts(c))
            flat.sort(key=render_predicate)
            where = None
            if len(flat) == 1:
                where = flat[0]
            elif flat:
                where = And(tuple(flat))
            select = tuple(SelectItem(self.expr(s.expr), s.alias) for s in b.select)
            group_by = tuple(sorted((self.expr(g) for g in b.group_by), key=render_expr))
            order_by = tuple(OrderItem(self.expr(o.expr), o.descending) for o in b.order_by)
            return QueryBlock(select, tuple(from_items), where, group_by, order_by, b.limit)
        finally:
            self.scopes.pop()

    def _join_conditions(self, item) -> List[Any]:
        if isinstance(item, Join):
            return self._join_conditions(item.left) + self._join_conditions(item.right) + [item.condition]
        return []

    def _from(self, item, renamed):
        if isinstance(item, Join):
            return Join(self._from(item.left, renamed), self._from(item.right, renamed), item.kind,
                        self.pred(item.condition))
        return renamed[id(item)]

    def expr(self, node):
        if isinstance(node, ColumnRef):
            return ColumnRef(self._qualifier(node.table), node.name)
        if isinstance(node, Literal):
            return _norm_literal(node)
        if isinstance(node, Arith):
            return Arith(node.op, self.expr(node.left), self.expr(node.right))
        if isinstance(node, Aggregate):
            return Aggregate(node.func, None if node.arg is None else self.expr(node.arg))
        if isinstance(node, ScalarSubquery):
            return ScalarSubquery(self.query(node.query))
        if isinstance(node, Star):
            return Star(self._qualifier(node.table))
        if isinstance(node, PREDICATE_TYPES):
            return self.pred(node)
        return node

    def pred(self, node):
        if isinstance(node, Comparison):
            left, right, op = self.expr(node.left), self.expr(node.right), node.op
            if op in ('>', '>='):
                left, right, op = right, left, {'>': '<', '>=': '<='}[op]
            elif op == '=' and render_expr(right) < render_expr(left):
                left, right = right, left
            return Comparison(op, left, right)
        if isinstance(node, Between):
            return Between(self.expr(node.expr), self.expr(node.low), self.expr(node.high))
        if isinstance(node, Like):
            return Like(self.expr(node.expr), node.pattern)
        if isinstance(node, InList):
            values = sorted({_norm_literal(v) for v in node.values}, key=render_expr)
            return InList(self.expr(node.expr), tuple(values))
        if isinstance(node, InSubquery):
            return InSubquery(self.expr(node.expr), self.query(node.query))
        if isinstance(node, IsNull):
            return IsNull(self.expr(node.expr), node.negated)
        if isinstance(node, And):
            items = []
            for i in node.items:
                items.extend(_conjuncts(self.pred(i)))
            items.sort(key=render_predicate)
            return items[0] if len(items) == 1 else And(tuple(items))
        if isinstance(node, Or):
            items = []
            for i in node.items:
                items.extend(_disjuncts(self.pred(i)))
            items.sort(key=render_predicate)
            return items[0] if len(items) == 1 else Or(tuple(items))
        return self.expr(node)


def canonicalize(q: Query) -> Query:
    """
    规范形式：内连接展开到 FROM 与 WHERE，合取项排序，等式操作数排序，
    > / >= 翻转为 < / <=，IN 列表与 GROUP BY 排序，整数值小数常量转为整数，别名规范化
    """
    return _Canonicalizer().query(q)


@dataclass(frozen=True)
class RenderedSQL:
    text: str
    canonical_text: str
    digest: str

    @classmethod
    def of(cls, q: Query) -> 'RenderedSQL':
        canonical = render_sql(canonicalize(q))
        return cls(render_sql(q), canonical, hashlib.sha256(canonical.encode('utf-8')).hexdigest())


def sql_digest(q: Query) -> str:
    return RenderedSQL.of(q).digest


# ---------------------------------------------------------------------------
# 遍历工具
# ---------------------------------------------------------------------------

def iter_blocks(q: Query, depth: int = 0) -> Iterator[Tuple[QueryBlock, int]]:
    """先序遍历全部查询块（含子查询与派生表），给出嵌套层数"""
    for b in q.branches:
        yield b, depth
        for item in b.from_:
            for leaf in _from_leaves(item):
                if isinstance(leaf, DerivedTable):
                    yield from iter_blocks(leaf.query, depth + 1)
        for node in _walk_block_exprs(b):
            if isinstance(node, (InSubquery, ScalarSubquery)):
                yield from iter_blocks(node.query, depth + 1)


def _walk_block_exprs(b: QueryBlock) -> Iterator[Any]:
    roots = [s.expr for s in b.select] + list(b.group_by) + [o.expr for o in b.order_by]
    if b.where is not None:
        roots.append(b.where)
    for item in b.from_:
        roots.extend(_join_conditions_of(item))
    for root in roots:
        yield from walk_expr(root)


def _join_conditions_of(item) -> List[Any]:
    if isinstance(item, Join):
        return _join_conditions_of(item.left) + _join_conditions_of(item.right) + [item.condition]
    return []


def walk_expr(node) -> Iterator[Any]:
    """遍历表达式 / 谓词节点，不进入子查询内部"""
    yield node
    if isinstance(node, (Arith, Comparison)):
        yield from walk_expr(node.left)
        yield from walk_expr(node.right)
    elif isinstance(node, Aggregate) and node.arg is not None:
        yield from walk_expr(node.arg)
    elif isinstance(node, Between):
        yield from walk_expr(node.expr)
        yield from walk_expr(node.low)
        yield from walk_expr(node.high)
    elif isinstance(node, (Like, InList, InSubquery, IsNull)):
        yield from walk_expr(node.expr)
    elif isinstance(node, (And, Or)):
        for item in node.items:
            yield from walk_expr(item)


def from_leaves(item) -> List[Any]:
    return list(_from_leaves(item))


def conjuncts(pred) -> List[Any]:
    return _conjuncts(pred)


def disjuncts(pred) -> List[Any]:
    return _disjuncts(pred)


def make_and(items: List[Any]):
    items = list(items)
    if not items:
        return None
    return items[0] if len(items) == 1 else And(tuple(items))


def table_multiset(q: Query) -> Dict[str, int]:
    """整条查询中各基表出现次数（含子查询）"""
    counts: Dict[str, int] = {}
    for b, _ in iter_blocks(q):
        for item in b.from_:
            for leaf in _from_leaves(item):
                if isinstance(leaf, TableRef):
                    counts[leaf.name] = counts.get(leaf.name, 0) + 1
    return counts


def output_names(q: Query) -> List[str]:
    """按默认列名规则给出输出列名（星号无法静态展开时保留 *）"""
    names = []
    for s in q.branches[0].select:
        if s.alias:
            names.append(s.alias)
        elif isinstance(s.expr, ColumnRef):
            names.append(s.expr.name)
        elif isinstance(s.expr, Aggregate):
            names.append(s.expr.func.lower())
        elif isinstance(s.expr, Star):
            names.append('*')
        else:
            names.append('?column?')
    return names
