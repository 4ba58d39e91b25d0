"""Property tests over randomly generated canonical queries."""

import itertools

from hypothesis import given, settings
from hypothesis import strategies as st

from cgforge import evaluator, patterns, sql_core
from cgforge.sql_core import (
    BoolOp,
    ColumnRef,
    ColUnit,
    Condition,
    OrderItem,
    QueryAst,
    STAR,
    SelectItem,
    TableRef,
    ValExpr,
    Value,
    parse_sql,
    print_sql,
    template_of,
)

# airline_mini vocabulary, kept in sync with tests/fixtures/tables.json
TABLES = {
    "AIRLINES": [("uid", "number"), ("Airline", "text"), ("Abbreviation", "text"), ("Country", "text")],
    "AIRPORTS": [("City", "text"), ("AirportCode", "text"), ("AirportName", "text"), ("Country", "text")],
    "FLIGHTS": [("Airline", "number"), ("FlightNo", "number"), ("SourceAirport", "text"), ("DestAirport", "text")],
}
FK_JOINS = [
    ("FLIGHTS", "Airline", "AIRLINES", "uid"),
    ("FLIGHTS", "SourceAirport", "AIRPORTS", "AirportCode"),
]

table_names = st.sampled_from(sorted(TABLES))
aggs = st.sampled_from(["count", "sum", "avg", "min", "max"])
directions = st.sampled_from(["asc", "desc"])
string_values = st.text(alphabet="abcdefghij XYZ", min_size=1, max_size=8).filter(
    lambda s: s.strip() and s != sql_core.PLACEHOLDER_TEXT
)
number_values = st.integers(min_value=0, max_value=999).map(str)


def _cols(table, ctype=None):
    return [c for c, t in TABLES[table] if ctype is None or t == ctype]


def _numeric_cols(table):
    return _cols(table, "number")


@st.composite
def column_refs(draw, tables):
    table = draw(st.sampled_from(tables))
    name = draw(st.sampled_from(_cols(table)))
    return ColumnRef(table, name)


@st.composite
def select_items(draw, tables):
    kind = draw(st.sampled_from(["col", "agg", "count_star"]))
    if kind == "count_star":
        return SelectItem(ValExpr(ColUnit(STAR)), agg="count")
    col = draw(column_refs(tables))
    if kind == "agg":
        agg = draw(aggs)
        if agg in ("sum", "avg") and TABLES[col.table] and col.column not in _numeric_cols(col.table):
            agg = "count"
        distinct = agg == "count" and draw(st.booleans())
        return SelectItem(ValExpr(ColUnit(col)), agg=agg, distinct=distinct)
    return SelectItem(ValExpr(ColUnit(col)))


@st.composite
def conditions(draw, tables):
    col = draw(column_refs(tables))
    ctype = dict(TABLES[col.table])[col.column]
    if ctype == "number":
        op = draw(st.sampled_from(["=", "!=", ">", "<", ">=", "<=", "between"]))
        if op == "between":
            low, high = sorted(draw(st.tuples(number_values, number_values)), key=int)
            return Condition(ValExpr(ColUnit(col)), "between", Value("number", low), Value("number", high))
        return Condition(ValExpr(ColUnit(col)), op, Value("number", draw(number_values)))
    op = draw(st.sampled_from(["=", "!=", "like", "not like"]))
    return Condition(ValExpr(ColUnit(col)), op, Value("string", draw(string_values)))


@st.composite
def where_trees(draw, tables):
    shape = draw(st.sampled_from(["single", "and", "or"]))
    if shape == "single":
        return draw(conditions(tables))
    children = draw(st.lists(conditions(tables), min_size=2, max_size=3))
    return BoolOp("and" if shape == "and" else "or", tuple(children))


@st.composite
def queries(draw, with_order=True, with_where=True):
    if draw(st.booleans()):
        child, ccol, parent, pcol = draw(st.sampled_from(FK_JOINS))
        tables = [child, parent]
        from_items = (TableRef(child), TableRef(parent))
        join_conds = (
            Condition(ValExpr(ColUnit(ColumnRef(child, ccol))), "=", ColumnRef(parent, pcol)),
        )
    else:
        t = draw(table_names)
        tables = [t]
        from_items = (TableRef(t),)
        join_conds = ()

    select = tuple(draw(st.lists(select_items(tables), min_size=1, max_size=3)))
    where = draw(where_trees(tables)) if with_where and draw(st.booleans()) else None

    group_by = ()
    having = None
    if draw(st.booleans()):
        group_by = (draw(column_refs(tables)),)
        if draw(st.booleans()):
            having = Condition(
                ValExpr(ColUnit(STAR, agg="count")), ">", Value("number", draw(number_values))
            )

    order_by = ()
    limit = None
    if with_order and draw(st.booleans()):
        if group_by and draw(st.booleans()):
            expr = ValExpr(ColUnit(STAR, agg="count"))
        else:
            expr = ValExpr(ColUnit(draw(column_refs(tables))))
        order_by = (OrderItem(expr, draw(directions)),)
        if draw(st.booleans()):
            limit = draw(st.integers(min_value=1, max_value=20))

    return QueryAst(
        select=select,
        from_items=from_items,
        join_conds=join_conds,
        where=where,
        group_by=group_by,
        having=having,
        order_by=order_by,
        limit=limit,
        distinct=draw(st.booleans()) and not any(si.agg != "none" for si in select),
    )


@settings(max_examples=150, deadline=None)
@given(ast=queries())
def test_print_parse_round_trip(ast, airline):
    printed = print_sql(ast)
    assert parse_sql(printed, airline) == ast, printed


@settings(max_examples=100, deadline=None)
@given(ast=queries())
def test_canonicalization_idempotent(ast, airline):
    once = print_sql(parse_sql(print_sql(ast), airline))
    assert print_sql(parse_sql(once, airline)) == once


@settings(max_examples=100, deadline=None)
@given(ast=queries())
def test_template_is_value_invariant(ast, airline):
    def bump(node):
        if isinstance(node, Value):
            if node.kind == "number":
                return Value("number", str(int(node.raw) + 1))
            return Value("string", node.raw + "x")
        if isinstance(node, tuple):
            return tuple(bump(x) for x in node)
        if isinstance(node, QueryAst):
            return QueryAst(**{n: bump(getattr(node, n)) for n in node.__dataclass_fields__})
        if isinstance(node, BoolOp):
            return BoolOp(node.op, tuple(bump(c) for c in node.children))
        if hasattr(node, "__dataclass_fields__"):
            return type(node)(**{n: bump(getattr(node, n)) for n in node.__dataclass_fields__})
        return node

    other = bump(ast)
    assert template_of(ast, airline) == template_of(other, airline)
    assert evaluator.decompose(ast) == evaluator.decompose(other)
    assert evaluator.difficulty(ast) == evaluator.difficulty(other)


@settings(max_examples=60, deadline=None)
@given(asts=st.lists(queries(), min_size=2, max_size=6))
def test_template_hash_soundness(asts, airline):
    templates = [template_of(a, airline) for a in asts]
    for a, b in itertools.combinations(templates, 2):
        assert (a.hash == b.hash) == (a.text == b.text)


@settings(max_examples=100, deadline=None)
@given(ast=queries())
def test_exact_match_iff_equal_modulo_values(ast, airline):
    result = evaluator.question_match(print_sql(ast), print_sql(ast), airline)
    assert result.exact and all(result.per_component.values())


@settings(max_examples=120, deadline=None)
@given(base=queries(with_order=False), data=st.data())
def test_diff_apply_inverse_on_synthetic_edits(base, data, airline):
    # grow the base by one or two clauses; the diff must come back as a
    # Modification whose application reproduces the grown query
    tables = [it.name for it in base.from_items]
    changes = {}
    if base.where is None or (isinstance(base.where, Condition)):
        extra = data.draw(conditions(tables))
        existing = [base.where] if base.where is not None else []
        new_where = extra if not existing else BoolOp("and", (*existing, extra))
        changes["where"] = new_where
    expr = ValExpr(ColUnit(data.draw(column_refs(tables))))
    changes["order_by"] = (OrderItem(expr, data.draw(directions)),)
    grown = QueryAst(**{**{n: getattr(base, n) for n in base.__dataclass_fields__}, **changes})
    if grown == base:
        return
    outcome = patterns.diff_asts(base, grown)
    assert isinstance(outcome, patterns.Modification)
    assert patterns.apply_modification(base, outcome, airline) == grown
