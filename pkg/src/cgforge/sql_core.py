"""SQL parsing, canonical printing, and template anonymization.

Covers the Spider-family SQL subset used by SParC/CoSQL gold queries:
SELECT/FROM/WHERE/GROUP BY/HAVING/ORDER BY/LIMIT, inner JOINs, one
UNION/INTERSECT/EXCEPT, subqueries on the right side of conditions, and
FROM-clause subqueries one level deep. Anything outside the subset raises
ParseError instead of degrading silently.

Canonical form produced by `parse_sql` (and printed by `print_sql`):

* keywords uppercase, aggregators lowercase;
* table aliases resolved away, every column fully qualified as
  ``Table.Column`` in the schema's original casing (``*`` excepted);
* string literals single-quoted, numbers kept textually as written;
* the placeholder literal prints as ``'value'`` and re-parses back to a
  placeholder, so recombined queries round-trip.

Anonymized templates replace table names with ``tabN``, column names with
``colN`` (optionally type-tagged ``colN:text``), and literals with ``valN``
in first-appearance order, so structurally equal queries share a template
hash regardless of the concrete schema vocabulary.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Union

from .errors import ParseError, ResolutionError
from .schema import Schema

AGGREGATORS = ("none", "count", "sum", "avg", "min", "max")
ARITH_OPS = ("+", "-", "*", "/")
COMPARISON_OPS = ("=", "!=", ">", "<", ">=", "<=")
CONDITION_OPS = COMPARISON_OPS + ("like", "not like", "in", "not in", "between")
SET_OPS = ("union", "intersect", "except")
ORDER_DIRECTIONS = ("asc", "desc")

PLACEHOLDER_TEXT = "value"

_KEYWORDS = {
    "select", "distinct", "from", "as", "join", "on", "where", "group", "by",
    "having", "order", "asc", "desc", "limit", "union", "intersect", "except",
    "and", "or", "not", "in", "like", "between", "is", "exists", "all",
}
_AGG_SET = set(AGGREGATORS) - {"none"}


# ---------------------------------------------------------------------------
# AST nodes. Everything is a frozen dataclass built on tuples so whole trees
# are hashable and comparable structurally.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnRef:
    table: Optional[str]  # None only for the bare '*'
    column: str


STAR = ColumnRef(None, "*")


@dataclass(frozen=True)
class ColUnit:
    col: ColumnRef
    agg: str = "none"
    distinct: bool = False


@dataclass(frozen=True)
class ValExpr:
    left: ColUnit
    op: str = "none"  # none | + | - | * | /
    right: Optional[ColUnit] = None


@dataclass(frozen=True)
class SelectItem:
    expr: ValExpr
    agg: str = "none"  # aggregator wrapping the whole expression
    distinct: bool = False  # DISTINCT inside that aggregator


@dataclass(frozen=True)
class Value:
    kind: str  # string | number | placeholder | slot
    raw: str


@dataclass(frozen=True)
class Condition:
    left: ValExpr
    op: str
    right: object  # Value | ColumnRef | QueryAst | None
    right2: Optional[Value] = None  # BETWEEN upper bound


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    children: tuple  # of Condition | BoolOp


CondNode = Union[Condition, BoolOp]


@dataclass(frozen=True)
class TableRef:
    name: str


@dataclass(frozen=True)
class SubqueryRef:
    query: "QueryAst"


FromItem = Union[TableRef, SubqueryRef]


@dataclass(frozen=True)
class FkJoin:
    """Template-only marker for a join condition that follows a foreign key."""

    child_table: str
    parent_table: str


@dataclass(frozen=True)
class OrderItem:
    expr: ValExpr
    direction: str = "asc"


@dataclass(frozen=True)
class QueryAst:
    select: tuple  # of SelectItem
    from_items: tuple  # of TableRef | SubqueryRef
    join_conds: tuple = ()  # of Condition (FkJoin in template trees)
    where: Optional[CondNode] = None
    group_by: tuple = ()  # of ColumnRef
    having: Optional[CondNode] = None
    order_by: tuple = ()  # of OrderItem
    limit: object = None  # int, or a slot token in template trees
    distinct: bool = False
    set_op: Optional[tuple] = None  # (kind, QueryAst)


@dataclass(frozen=True)
class QueryTemplate:
    text: str
    hash: str


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
      '(?:[^']|'')*'
    | "(?:[^"]|"")*"
    | \d+\.\d+ | \.\d+ | \d+
    | [A-Za-z_][A-Za-z0-9_]*\.(?:[A-Za-z_][A-Za-z0-9_]*|\*)
    | [A-Za-z_][A-Za-z0-9_]*
    | != | <> | >= | <= | = | > | <
    | [(),;*+\-/]
    """,
    re.VERBOSE,
)


def tokenize(sql: str) -> list[str]:
    tokens = []
    pos = 0
    for m in _TOKEN_RE.finditer(sql):
        gap = sql[pos : m.start()]
        if gap.strip():
            raise ParseError(f"unexpected character(s) {gap.strip()!r}", sql, pos)
        tokens.append(m.group(0))
        pos = m.end()
    if sql[pos:].strip():
        raise ParseError(f"unexpected character(s) {sql[pos:].strip()!r}", sql, pos)
    return tokens


def _is_string_token(tok: str) -> bool:
    return len(tok) >= 2 and tok[0] in "'\"" and tok[-1] == tok[0]


def _is_number_token(tok: str) -> bool:
    return bool(re.fullmatch(r"\d+\.\d+|\.\d+|\d+", tok))


def _is_ident_token(tok: str) -> bool:
    return bool(re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*(\.([A-Za-z_][A-Za-z0-9_]*|\*))?", tok))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, sql: str, schema: Schema):
        self.sql = sql
        self.schema = schema
        self.toks = tokenize(sql)
        self.pos = 0

    # -- token helpers ------------------------------------------------------

    def peek(self, ahead: int = 0) -> str | None:
        i = self.pos + ahead
        return self.toks[i] if i < len(self.toks) else None

    def peek_lower(self, ahead: int = 0) -> str | None:
        t = self.peek(ahead)
        return t.lower() if t is not None else None

    def advance(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of query", self.sql)
        self.pos += 1
        return tok

    def accept(self, word: str) -> bool:
        if self.peek_lower() == word:
            self.pos += 1
            return True
        return False

    def expect(self, word: str) -> None:
        tok = self.peek()
        if tok is None or tok.lower() != word:
            raise ParseError(f"expected {word.upper()!r}, found {tok!r}", self.sql, self.pos)
        self.pos += 1

    # -- entry points ---------------------------------------------------------

    def parse(self) -> QueryAst:
        ast = self.parse_query()
        while self.peek() == ";":
            self.advance()
        if self.peek() is not None:
            raise ParseError(f"trailing tokens starting at {self.peek()!r}", self.sql, self.pos)
        return ast

    def parse_query(self) -> QueryAst:
        ast = self.parse_select_stmt()
        op = self.peek_lower()
        if op in SET_OPS:
            self.advance()
            if self.peek_lower() == "all":
                raise ParseError(f"{op.upper()} ALL is outside the supported subset", self.sql)
            right = self.parse_query()
            if len(right.select) != len(ast.select):
                raise ParseError(
                    f"{op.upper()} operands have different select arity", self.sql
                )
            ast = replace(ast, set_op=(op, right))
        return ast

    # -- clauses --------------------------------------------------------------

    def parse_select_stmt(self) -> QueryAst:
        self.expect("select")
        distinct = self.accept("distinct")
        raw_items = [self.parse_select_item()]
        while self.accept(","):
            raw_items.append(self.parse_select_item())
        self.expect("from")
        from_items, join_conds, env = self.parse_from()

        where = None
        if self.accept("where"):
            where = self.parse_cond_tree()
        group_by: list[ColumnRef] = []
        if self.peek_lower() == "group":
            self.advance()
            self.expect("by")
            group_by.append(self.parse_colref())
            while self.accept(","):
                group_by.append(self.parse_colref())
        having = None
        if self.accept("having"):
            having = self.parse_cond_tree()
        order_by: list[OrderItem] = []
        if self.peek_lower() == "order":
            self.advance()
            self.expect("by")
            order_by.append(self.parse_order_item())
            while self.accept(","):
                order_by.append(self.parse_order_item())
        limit = None
        if self.accept("limit"):
            tok = self.advance()
            if not tok.isdigit():
                raise ParseError(f"LIMIT requires a non-negative integer, found {tok!r}", self.sql)
            limit = int(tok)

        if having is not None and not group_by:
            raise ParseError("HAVING without GROUP BY is outside the supported subset", self.sql)

        ast = QueryAst(
            select=tuple(raw_items),
            from_items=tuple(from_items),
            join_conds=tuple(join_conds),
            where=where,
            group_by=tuple(group_by),
            having=having,
            order_by=tuple(order_by),
            limit=limit,
            distinct=distinct,
        )
        return _resolve_query(ast, env, self.schema, self.sql)

    def parse_from(self):
        from_items: list[FromItem] = []
        join_conds: list[Condition] = []
        env: dict[str, str | None] = {}

        def parse_item():
            if self.peek() == "(":
                self.advance()
                sub = self.parse_query()
                self.expect(")")
                alias = self._maybe_alias()
                if alias:
                    env[alias.lower()] = None  # opaque: no column resolution through it
                from_items.append(SubqueryRef(sub))
                return
            tok = self.advance()
            if not _is_ident_token(tok) or "." in tok:
                raise ParseError(f"expected a table name, found {tok!r}", self.sql)
            original = self.schema.table_original(tok)
            if original is None:
                raise ResolutionError(
                    f"unknown table {tok!r} in database {self.schema.db_id!r}"
                )
            env[original.lower()] = original
            alias = self._maybe_alias()
            if alias:
                env[alias.lower()] = original
            from_items.append(TableRef(original))

        parse_item()
        while True:
            if self.accept(","):
                parse_item()
            elif self.peek_lower() == "join":
                self.advance()
                parse_item()
                if self.accept("on"):
                    join_conds.append(self.parse_cond_atom())
                    while self.peek_lower() == "and":
                        self.advance()
                        join_conds.append(self.parse_cond_atom())
            else:
                break
        return from_items, join_conds, env

    def _maybe_alias(self) -> str | None:
        if self.accept("as"):
            alias = self.advance()
            if not _is_ident_token(alias) or "." in alias:
                raise ParseError(f"bad alias {alias!r}", self.sql)
            return alias
        nxt = self.peek()
        if (
            nxt is not None
            and _is_ident_token(nxt)
            and "." not in nxt
            and nxt.lower() not in _KEYWORDS
            and nxt.lower() not in _AGG_SET
        ):
            self.advance()
            return nxt
        return None

    # -- expressions ------------------------------------------------------------

    def parse_colref(self) -> ColumnRef:
        tok = self.advance()
        if tok == "*":
            return STAR
        if not _is_ident_token(tok):
            raise ParseError(f"expected a column reference, found {tok!r}", self.sql)
        if "." in tok:
            qual, col = tok.split(".", 1)
            return ColumnRef(qual, col)
        if tok.lower() in _KEYWORDS:
            raise ParseError(f"expected a column reference, found keyword {tok!r}", self.sql)
        return ColumnRef(None, tok)  # unqualified; resolved later

    def parse_col_unit(self) -> ColUnit:
        tok = self.peek_lower()
        if tok in _AGG_SET and self.peek(1) == "(":
            agg = self.advance().lower()
            self.expect("(")
            distinct = self.accept("distinct")
            col = self.parse_colref()
            self.expect(")")
            return ColUnit(col, agg=agg, distinct=distinct)
        return ColUnit(self.parse_colref())

    def parse_val_unit(self) -> ValExpr:
        left = self.parse_col_unit()
        nxt = self.peek()
        if nxt in ("+", "-", "/", "*"):
            # '*' is arithmetic only between two column units; a bare '*'
            # column has already been consumed by parse_col_unit.
            if nxt == "*" and left.col == STAR:
                return ValExpr(left)
            lookahead = self.peek(1)
            if nxt == "*" and (lookahead is None or not _is_ident_token(lookahead)):
                return ValExpr(left)
            op = self.advance()
            right = self.parse_col_unit()
            return ValExpr(left, op=op, right=right)
        return ValExpr(left)

    def parse_select_item(self) -> SelectItem:
        expr = self.parse_val_unit()
        if expr.op == "none" and expr.left.agg != "none":
            # promote simple aggregated columns to the item level so that
            # "count(x)" has one canonical representation in SELECT
            unit = expr.left
            return SelectItem(
                expr=ValExpr(ColUnit(unit.col)), agg=unit.agg, distinct=unit.distinct
            )
        return SelectItem(expr=expr)

    def parse_order_item(self) -> OrderItem:
        expr = self.parse_val_unit()
        direction = "asc"
        if self.peek_lower() in ORDER_DIRECTIONS:
            direction = self.advance().lower()
        return OrderItem(expr, direction)

    # -- conditions --------------------------------------------------------------

    def parse_cond_tree(self) -> CondNode:
        node = self.parse_cond_and()
        children = [node]
        while self.peek_lower() == "or":
            self.advance()
            children.append(self.parse_cond_and())
        if len(children) == 1:
            return children[0]
        return BoolOp("or", tuple(children))

    def parse_cond_and(self) -> CondNode:
        children = [self.parse_cond_atom()]
        while self.peek_lower() == "and":
            self.advance()
            children.append(self.parse_cond_atom())
        if len(children) == 1:
            return children[0]
        return BoolOp("and", tuple(children))

    def parse_cond_atom(self) -> Condition:
        left = self.parse_val_unit()
        negated = self.accept("not")
        tok = self.peek_lower()
        if negated and tok not in ("in", "like"):
            raise ParseError(f"NOT must precede IN or LIKE, found {tok!r}", self.sql)
        if tok == "between":
            self.advance()
            low = self.parse_value()
            self.expect("and")
            high = self.parse_value()
            return Condition(left, "between", low, high)
        if tok == "in":
            self.advance()
            self.expect("(")
            if self.peek_lower() != "select":
                raise ParseError("IN requires a subquery in this subset", self.sql)
            sub = self.parse_query()
            self.expect(")")
            return Condition(left, "not in" if negated else "in", sub)
        if tok == "like":
            self.advance()
            value = self.parse_value()
            return Condition(left, "not like" if negated else "like", value)
        if tok in ("=", "!=", "<>", ">", "<", ">=", "<="):
            op = "!=" if tok == "<>" else tok
            self.advance()
            if self.peek() == "(":
                self.advance()
                if self.peek_lower() != "select":
                    raise ParseError("expected a subquery after comparison", self.sql)
                sub = self.parse_query()
                self.expect(")")
                return Condition(left, op, sub)
            nxt = self.peek()
            if nxt is not None and _is_ident_token(nxt) and not _is_number_token(nxt) \
                    and nxt.lower() not in _KEYWORDS:
                return Condition(left, op, self.parse_colref())
            return Condition(left, op, self.parse_value())
        raise ParseError(f"expected a condition operator, found {tok!r}", self.sql)

    def parse_value(self) -> Value:
        tok = self.peek()
        if tok is None:
            raise ParseError("expected a value", self.sql)
        if tok == "-" and self.peek(1) is not None and _is_number_token(self.peek(1)):
            self.advance()
            num = self.advance()
            return Value("number", "-" + num)
        if _is_number_token(tok):
            self.advance()
            return Value("number", tok)
        if _is_string_token(tok):
            self.advance()
            quote = tok[0]
            inner = tok[1:-1].replace(quote * 2, quote)
            if inner == PLACEHOLDER_TEXT:
                return Value("placeholder", PLACEHOLDER_TEXT)
            return Value("string", inner)
        raise ParseError(f"expected a literal value, found {tok!r}", self.sql)


# ---------------------------------------------------------------------------
# Alias/column resolution and validation
# ---------------------------------------------------------------------------


def _resolve_colref(
    ref: ColumnRef, env: dict, schema: Schema, from_tables: list[str], sql: str
) -> ColumnRef:
    if ref.column == "*" and ref.table is None:
        return STAR
    if ref.table is not None:
        key = ref.table.lower()
        if key not in env:
            raise ResolutionError(f"unknown table or alias {ref.table!r} (in: {sql!r})")
        table = env[key]
        if table is None:
            raise ResolutionError(
                f"cannot resolve column {ref.column!r} through a FROM subquery (in: {sql!r})"
            )
        if ref.column == "*":
            return ColumnRef(table, "*")
        entry = schema.column_entry(table, ref.column)
        if entry is None:
            raise ResolutionError(f"no column {ref.column!r} in table {table!r} (in: {sql!r})")
        return ColumnRef(table, entry[1].name)
    matches = [t for t in from_tables if schema.column_entry(t, ref.column) is not None]
    if not matches:
        raise ResolutionError(f"column {ref.column!r} not found in FROM tables (in: {sql!r})")
    if len(matches) > 1:
        raise ResolutionError(
            f"ambiguous unqualified column {ref.column!r}: in {matches} (in: {sql!r})"
        )
    table = matches[0]
    return ColumnRef(table, schema.column_entry(table, ref.column)[1].name)


def _resolve_query(ast: QueryAst, env: dict, schema: Schema, sql: str) -> QueryAst:
    from_tables = [it.name for it in ast.from_items if isinstance(it, TableRef)]

    def col(ref: ColumnRef) -> ColumnRef:
        return _resolve_colref(ref, env, schema, from_tables, sql)

    def col_unit(u: ColUnit) -> ColUnit:
        return replace(u, col=col(u.col))

    def val_expr(e: ValExpr) -> ValExpr:
        return replace(
            e, left=col_unit(e.left), right=col_unit(e.right) if e.right else None
        )

    def cond(c: Condition) -> Condition:
        right = c.right
        if isinstance(right, ColumnRef):
            right = col(right)
        # nested QueryAst values were resolved in their own scope
        return replace(c, left=val_expr(c.left), right=right)

    def tree(node: CondNode | None):
        if node is None:
            return None
        if isinstance(node, BoolOp):
            return BoolOp(node.op, tuple(tree(ch) for ch in node.children))
        return cond(node)

    return replace(
        ast,
        select=tuple(replace(si, expr=val_expr(si.expr)) for si in ast.select),
        join_conds=tuple(cond(c) for c in ast.join_conds),
        where=tree(ast.where),
        group_by=tuple(col(g) for g in ast.group_by),
        having=tree(ast.having),
        order_by=tuple(replace(o, expr=val_expr(o.expr)) for o in ast.order_by),
    )


def validate_ast(ast: QueryAst, schema: Schema) -> None:
    """Re-check QueryAst invariants; raises ResolutionError/ParseError."""
    from_tables = {it.name.lower() for it in ast.from_items if isinstance(it, TableRef)}

    def check_col(ref: ColumnRef):
        if ref.table is None:
            if ref.column != "*":
                raise ResolutionError(f"unresolved column {ref.column!r}")
            return
        if ref.table.lower() not in from_tables:
            raise ResolutionError(f"column {ref.table}.{ref.column} references a table not in FROM")
        if ref.column != "*" and schema.column_entry(ref.table, ref.column) is None:
            raise ResolutionError(f"no column {ref.column!r} in table {ref.table!r}")

    for ref in iter_column_refs(ast, recurse=False):
        check_col(ref)
    if ast.having is not None and not ast.group_by:
        raise ParseError("HAVING requires GROUP BY")
    if ast.limit is not None and isinstance(ast.limit, int) and ast.limit < 0:
        raise ParseError("LIMIT must be non-negative")
    if ast.set_op is not None:
        kind, right = ast.set_op
        if kind not in SET_OPS:
            raise ParseError(f"bad set operator {kind!r}")
        if len(right.select) != len(ast.select):
            raise ParseError("set operation operands differ in select arity")
        validate_ast(right, schema)
    for sub in _iter_condition_subqueries(ast):
        validate_ast(sub, schema)
    for item in ast.from_items:
        if isinstance(item, SubqueryRef):
            validate_ast(item.query, schema)


def parse_sql(text: str, schema: Schema) -> QueryAst:
    """Parse SQL text into the canonical, schema-bound AST."""
    if not text or not text.strip():
        raise ParseError("empty SQL text")
    return _Parser(text, schema).parse()


# ---------------------------------------------------------------------------
# Traversal helpers
# ---------------------------------------------------------------------------


def iter_condition_leaves(node: CondNode | None) -> Iterator[Condition]:
    if node is None:
        return
    if isinstance(node, BoolOp):
        for ch in node.children:
            yield from iter_condition_leaves(ch)
    else:
        yield node


def _iter_condition_subqueries(ast: QueryAst) -> Iterator[QueryAst]:
    for node in (ast.where, ast.having):
        for leaf in iter_condition_leaves(node):
            if isinstance(leaf.right, QueryAst):
                yield leaf.right


def iter_column_refs(ast: QueryAst, recurse: bool = True) -> Iterator[ColumnRef]:
    """Column references of one query scope (optionally nested scopes too)."""

    def from_val_expr(e: ValExpr):
        yield e.left.col
        if e.right is not None:
            yield e.right.col

    for si in ast.select:
        yield from from_val_expr(si.expr)
    for c in ast.join_conds:
        if isinstance(c, FkJoin):
            continue
        yield from from_val_expr(c.left)
        if isinstance(c.right, ColumnRef):
            yield c.right
    for node in (ast.where, ast.having):
        for leaf in iter_condition_leaves(node):
            yield from from_val_expr(leaf.left)
            if isinstance(leaf.right, ColumnRef):
                yield leaf.right
            elif recurse and isinstance(leaf.right, QueryAst):
                yield from iter_column_refs(leaf.right, recurse=True)
    yield from ast.group_by
    for o in ast.order_by:
        yield from from_val_expr(o.expr)
    if recurse:
        for item in ast.from_items:
            if isinstance(item, SubqueryRef):
                yield from iter_column_refs(item.query, recurse=True)
        if ast.set_op is not None:
            yield from iter_column_refs(ast.set_op[1], recurse=True)


def tables_of(ast: QueryAst) -> set[str]:
    return {it.name for it in ast.from_items if isinstance(it, TableRef)}


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------


def _print_col(ref: ColumnRef) -> str:
    if ref.table is None:
        return ref.column
    return f"{ref.table}.{ref.column}"


def _print_col_unit(u: ColUnit) -> str:
    inner = _print_col(u.col)
    if u.agg == "none":
        return inner
    if u.distinct:
        inner = f"DISTINCT {inner}"
    return f"{u.agg}({inner})"


def _print_val_expr(e: ValExpr) -> str:
    if e.op == "none":
        return _print_col_unit(e.left)
    return f"{_print_col_unit(e.left)} {e.op} {_print_col_unit(e.right)}"


def _print_select_item(si: SelectItem) -> str:
    inner = _print_val_expr(si.expr)
    if si.agg == "none":
        return inner
    if si.distinct:
        inner = f"DISTINCT {inner}"
    return f"{si.agg}({inner})"


def print_value(v: Value) -> str:
    if v.kind == "number":
        return v.raw
    if v.kind == "placeholder":
        return f"'{PLACEHOLDER_TEXT}'"
    if v.kind == "slot":
        return v.raw
    return "'" + v.raw.replace("'", "''") + "'"


def _print_condition(c: Condition) -> str:
    left = _print_val_expr(c.left)
    if c.op == "between":
        return f"{left} BETWEEN {print_value(c.right)} AND {print_value(c.right2)}"
    op = c.op.upper()
    right = c.right
    if isinstance(right, QueryAst):
        return f"{left} {op} ({print_sql(right)})"
    if isinstance(right, ColumnRef):
        return f"{left} {op} {_print_col(right)}"
    return f"{left} {op} {print_value(right)}"


def _print_cond_node(node: CondNode) -> str:
    if isinstance(node, BoolOp):
        sep = f" {node.op.upper()} "
        return sep.join(_print_cond_node(ch) for ch in node.children)
    return _print_condition(node)


def _print_from(ast: QueryAst) -> str:
    names = []
    for item in ast.from_items:
        if isinstance(item, TableRef):
            names.append(item.name)
        else:
            names.append(f"({print_sql(item.query)})")

    def table_pos(name: str | None) -> int:
        for i, item in enumerate(ast.from_items):
            if isinstance(item, TableRef) and item.name == name:
                return i
        return 0

    def cond_pos(c) -> int:
        if isinstance(c, FkJoin):
            return max(table_pos(c.child_table), table_pos(c.parent_table))
        refs = [c.left.left.col]
        if c.left.right is not None:
            refs.append(c.left.right.col)
        if isinstance(c.right, ColumnRef):
            refs.append(c.right)
        return max((table_pos(r.table) for r in refs if r.table is not None), default=0)

    by_join: dict[int, list] = {}
    for c in ast.join_conds:
        by_join.setdefault(max(cond_pos(c), 1), []).append(c)

    out = names[0]
    for i in range(1, len(names)):
        out += f" JOIN {names[i]}"
        conds = by_join.get(i)
        if conds:
            rendered = [
                f"FKJOIN({c.child_table}, {c.parent_table})"
                if isinstance(c, FkJoin)
                else _print_condition(c)
                for c in conds
            ]
            out += " ON " + " AND ".join(rendered)
    return out


def print_sql(ast: QueryAst) -> str:
    """Deterministic canonical rendering; inverse of parse_sql on valid asts."""
    parts = ["SELECT"]
    if ast.distinct:
        parts.append("DISTINCT")
    parts.append(", ".join(_print_select_item(si) for si in ast.select))
    parts.append("FROM")
    parts.append(_print_from(ast))
    if ast.where is not None:
        parts.append("WHERE")
        parts.append(_print_cond_node(ast.where))
    if ast.group_by:
        parts.append("GROUP BY")
        parts.append(", ".join(_print_col(g) for g in ast.group_by))
    if ast.having is not None:
        parts.append("HAVING")
        parts.append(_print_cond_node(ast.having))
    if ast.order_by:
        parts.append("ORDER BY")
        parts.append(
            ", ".join(f"{_print_val_expr(o.expr)} {o.direction.upper()}" for o in ast.order_by)
        )
    if ast.limit is not None:
        parts.append(f"LIMIT {ast.limit}")
    sql = " ".join(parts)
    if ast.set_op is not None:
        kind, right = ast.set_op
        sql = f"{sql} {kind.upper()} {print_sql(right)}"
    return sql


# ---------------------------------------------------------------------------
# Template anonymization
# ---------------------------------------------------------------------------


class SlotAllocator:
    """Assigns tabN/colN/valN slots in first-appearance order.

    With ``typed=True`` column slots carry the catalog type (``col1:text``),
    which modification templates need so slot filling can respect type
    compatibility. Base query templates use untyped column slots so that
    queries of equal shape share a hash regardless of column types.
    """

    def __init__(self, schema: Schema, typed: bool):
        self.schema = schema
        self.typed = typed
        self.table_slots: dict[str, str] = {}
        self.col_slots: dict[tuple[str, str], str] = {}
        self.col_concrete: dict[str, tuple[str, str]] = {}
        self.val_count = 0

    def table_slot(self, name: str) -> str:
        key = name.lower()
        if key not in self.table_slots:
            self.table_slots[key] = f"tab{len(self.table_slots) + 1}"
        return self.table_slots[key]

    def col_slot(self, table: str, column: str) -> str:
        key = (table.lower(), column.lower())
        if key not in self.col_slots:
            base = f"col{len(self.col_slots) + 1}"
            if self.typed:
                ctype = self.schema.column_type(table, column) or "others"
                slot = f"{base}:{ctype}"
            else:
                slot = base
            self.col_slots[key] = slot
            self.col_concrete[slot] = (table, column)
        return self.col_slots[key]

    def val_slot(self) -> str:
        self.val_count += 1
        return f"val{self.val_count}"


def _anonymize_colref(ref: ColumnRef, slots: SlotAllocator) -> ColumnRef:
    if ref.table is None:
        return ref
    tab = slots.table_slot(ref.table)
    if ref.column == "*":
        return ColumnRef(tab, "*")
    return ColumnRef(tab, slots.col_slot(ref.table, ref.column))


def anonymize_query(ast: QueryAst, schema: Schema, slots: SlotAllocator) -> QueryAst:
    """Replace schema names and literals with slot tokens (shared allocator)."""

    def col_unit(u: ColUnit) -> ColUnit:
        return replace(u, col=_anonymize_colref(u.col, slots))

    def val_expr(e: ValExpr) -> ValExpr:
        return replace(e, left=col_unit(e.left), right=col_unit(e.right) if e.right else None)

    def value(v: Value) -> Value:
        return Value("slot", slots.val_slot())

    def cond(c: Condition, fk_normalize: bool = False):
        if (
            fk_normalize
            and c.op == "="
            and isinstance(c.right, ColumnRef)
            and c.left.op == "none"
            and c.left.left.agg == "none"
            and c.left.left.col.table is not None
            and c.right.table is not None
        ):
            lc, rc = c.left.left.col, c.right
            if schema.is_foreign_key_pair((lc.table, lc.column), (rc.table, rc.column)):
                # orient the edge child -> parent
                li = schema.column_index(lc.table, lc.column)
                ri = schema.column_index(rc.table, rc.column)
                child, parent = (lc, rc) if (li, ri) in set(schema.foreign_keys) else (rc, lc)
                return FkJoin(slots.table_slot(child.table), slots.table_slot(parent.table))
        right = c.right
        if isinstance(right, Value):
            right = value(right)
        elif isinstance(right, ColumnRef):
            right = _anonymize_colref(right, slots)
        elif isinstance(right, QueryAst):
            right = anonymize_query(right, schema, slots)
        right2 = value(c.right2) if c.right2 is not None else None
        return Condition(val_expr(c.left), c.op, right, right2)

    def tree(node):
        if node is None:
            return None
        if isinstance(node, BoolOp):
            return BoolOp(node.op, tuple(tree(ch) for ch in node.children))
        return cond(node)

    from_items = tuple(
        TableRef(slots.table_slot(it.name))
        if isinstance(it, TableRef)
        else SubqueryRef(anonymize_query(it.query, schema, slots))
        for it in ast.from_items
    )
    set_op = None
    if ast.set_op is not None:
        set_op = (ast.set_op[0], anonymize_query(ast.set_op[1], schema, slots))
    return QueryAst(
        select=tuple(replace(si, expr=val_expr(si.expr)) for si in ast.select),
        from_items=from_items,
        join_conds=tuple(cond(c, fk_normalize=True) for c in ast.join_conds),
        where=tree(ast.where),
        group_by=tuple(_anonymize_colref(g, slots) for g in ast.group_by),
        having=tree(ast.having),
        order_by=tuple(replace(o, expr=val_expr(o.expr)) for o in ast.order_by),
        limit=slots.val_slot() if ast.limit is not None else None,
        distinct=ast.distinct,
        set_op=set_op,
    )


def stable_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def template_of(ast: QueryAst, schema: Schema) -> QueryTemplate:
    """Anonymize a query into its structural template with a stable hash."""
    slots = SlotAllocator(schema, typed=False)
    text = print_sql(anonymize_query(ast, schema, slots))
    return QueryTemplate(text=text, hash=stable_hash(text))


# ---------------------------------------------------------------------------
# JSON codec for AST payloads (used by the pattern library file format)
# ---------------------------------------------------------------------------

_NODE_TYPES = {
    cls.__name__: cls
    for cls in (
        ColumnRef, ColUnit, ValExpr, SelectItem, Value, Condition, BoolOp,
        TableRef, SubqueryRef, FkJoin, OrderItem, QueryAst,
    )
}


def ast_to_json(node):
    if node is None or isinstance(node, (str, int, float, bool)):
        return node
    if isinstance(node, tuple):
        return [ast_to_json(x) for x in node]
    cls = type(node).__name__
    if cls not in _NODE_TYPES:
        raise TypeError(f"cannot serialize {cls}")
    out = {"_t": cls}
    for name in node.__dataclass_fields__:
        out[name] = ast_to_json(getattr(node, name))
    return out


def ast_from_json(data):
    if data is None or isinstance(data, (str, int, float, bool)):
        return data
    if isinstance(data, list):
        return tuple(ast_from_json(x) for x in data)
    cls = _NODE_TYPES[data["_t"]]
    kwargs = {k: ast_from_json(v) for k, v in data.items() if k != "_t"}
    return cls(**kwargs)
