"""Exact-set-match scoring, split tagging, difficulty, and error analysis.

Queries are decomposed into clause-level component sets after erasing
literal values (the standard exact-set-match convention, which is also why
recombined queries may carry placeholder values). A prediction matches
exactly iff every component set equals the gold one; WHERE comparisons
therefore match on (column, operator) skeletons. Set-operation branches are
folded into the same components under a branch prefix so that component
agreement still pins down the whole tree modulo values. Unparseable
predictions score false on every component rather than raising; evaluation
is total over model outputs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from . import sql_core
from .errors import CgforgeError
from .patterns import (
    NotIncremental,
    PatternLibrary,
    anonymize,
    diff_asts,
)
from .schema import Schema
from .sql_core import (
    BoolOp,
    ColumnRef,
    QueryAst,
    Value,
    iter_condition_leaves,
)

COMPONENTS = (
    "select",
    "select_no_agg",
    "where",
    "where_no_op",
    "group_by",
    "group_by_no_having",
    "order_by",
    "and_or",
    "keywords",
)

DIFFICULTIES = ("easy", "medium", "hard", "extra")

ERROR_CATEGORIES = ("correct", "context_info", "modification_info", "both")


@dataclass
class ComponentSets:
    select: Counter
    select_no_agg: Counter
    where: Counter
    where_no_op: Counter
    group_by: frozenset
    group_by_no_having: frozenset
    order_by: tuple
    and_or: Counter
    keywords: frozenset

    def component(self, name: str):
        return getattr(self, name)


@dataclass
class MatchResult:
    exact: bool
    per_component: dict  # component name -> bool


@dataclass
class SplitTag:
    tag: str  # CG | NonCG | other
    base_hash: str | None = None
    mod_hash: str | None = None


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------


def _skeleton_value(v: Value) -> str:
    return "VALUE"


def _skeleton_right(right) -> str:
    if isinstance(right, Value):
        return _skeleton_value(right)
    if isinstance(right, ColumnRef):
        return sql_core._print_col(right)
    if isinstance(right, QueryAst):
        return "(" + _erased_print(right) + ")"
    return "NONE"


def _erased_print(ast: QueryAst) -> str:
    """Canonical print with every literal replaced by VALUE."""

    def erase(node):
        if isinstance(node, Value):
            return Value("slot", "VALUE")
        if isinstance(node, QueryAst):
            kwargs = {n: erase(getattr(node, n)) for n in node.__dataclass_fields__}
            if node.limit is not None:
                kwargs["limit"] = "VALUE"
            return QueryAst(**kwargs)
        if isinstance(node, tuple):
            return tuple(erase(x) for x in node)
        if isinstance(node, BoolOp):
            return BoolOp(node.op, tuple(erase(c) for c in node.children))
        if hasattr(node, "__dataclass_fields__"):
            return type(node)(**{n: erase(getattr(node, n)) for n in node.__dataclass_fields__})
        return node

    return sql_core.print_sql(erase(ast))


def _condition_skeletons(node) -> list[tuple[str, str]]:
    """(left-with-op skeleton, left-only skeleton) per condition leaf."""
    out = []
    for leaf in iter_condition_leaves(node):
        left = sql_core._print_val_expr(leaf.left)
        out.append((f"{left} {leaf.op} {_skeleton_right(leaf.right)}", left))
    return out


def _connectives(node) -> Counter:
    c: Counter = Counter()

    def walk(n):
        if isinstance(n, BoolOp):
            c[n.op] += len(n.children) - 1
            for ch in n.children:
                walk(ch)

    walk(node)
    return c


def _keywords(ast: QueryAst) -> set[str]:
    kws = {"select"}
    if ast.where is not None:
        kws.add("where")
    if ast.group_by:
        kws.add("group_by")
    if ast.having is not None:
        kws.add("having")
    if ast.order_by:
        kws.add("order_by")
        for o in ast.order_by:
            kws.add(o.direction)
    if ast.limit is not None:
        kws.add("limit")
    if len(ast.from_items) > 1:
        kws.add("join")
    if ast.distinct or any(si.distinct for si in ast.select):
        kws.add("distinct")
    def has_or(n) -> bool:
        if isinstance(n, BoolOp):
            return n.op == "or" or any(has_or(ch) for ch in n.children)
        return False

    for node in (ast.where, ast.having):
        for leaf in iter_condition_leaves(node):
            if leaf.op in ("like", "not like"):
                kws.add("like")
            if leaf.op in ("in", "not in"):
                kws.add(leaf.op)
            if leaf.op == "between":
                kws.add("between")
            if isinstance(leaf.right, QueryAst):
                kws |= _keywords(leaf.right)
        if has_or(node):
            kws.add("or")
    for item in ast.from_items:
        if isinstance(item, sql_core.SubqueryRef):
            kws |= _keywords(item.query)
    if ast.set_op is not None:
        kws.add(ast.set_op[0])
        kws |= _keywords(ast.set_op[1])
    return kws


_BRANCH_PREFIX = {"union": "u:", "intersect": "i:", "except": "e:"}


def decompose(ast: QueryAst) -> ComponentSets:
    """Component sets of a canonical query, values erased.

    Nested queries fold into their parent's condition skeletons; the right
    branch of a set operation contributes its own elements under a branch
    prefix so component equality still implies tree equality modulo values.
    """

    def one_scope(q: QueryAst, prefix: str) -> dict:
        select = Counter()
        select_no_agg = Counter()
        for si in q.select:
            select[prefix + sql_core._print_select_item(si)] += 1
            select_no_agg[prefix + sql_core._print_val_expr(si.expr)] += 1
        if q.distinct:
            select[prefix + "DISTINCT"] += 1
            select_no_agg[prefix + "DISTINCT"] += 1

        where = Counter()
        where_no_op = Counter()
        for with_op, left_only in _condition_skeletons(q.where):
            where[prefix + with_op] += 1
            where_no_op[prefix + left_only] += 1

        group_cols = frozenset(prefix + sql_core._print_col(g) for g in q.group_by)
        having_parts = frozenset(
            prefix + "having:" + s for s, _ in _condition_skeletons(q.having)
        )

        order = tuple(
            prefix + f"{sql_core._print_val_expr(o.expr)} {o.direction}" for o in q.order_by
        )
        if q.limit is not None:
            order = order + (prefix + "limit",)

        and_or = Counter()
        for op, n in (_connectives(q.where) + _connectives(q.having)).items():
            and_or[prefix + op] += n

        parts = {
            "select": select,
            "select_no_agg": select_no_agg,
            "where": where,
            "where_no_op": where_no_op,
            "group_by": group_cols | having_parts,
            "group_by_no_having": group_cols,
            "order_by": order,
        }
        # FROM subqueries contribute their own components under a prefix
        for i, item in enumerate(q.from_items):
            if isinstance(item, sql_core.SubqueryRef):
                sub = one_scope(item.query, prefix + f"fs{i}:")
                parts = _merge(parts, sub)
        if q.set_op is not None:
            kind, right = q.set_op
            parts = _merge(parts, one_scope(right, prefix + _BRANCH_PREFIX[kind]))
        parts["and_or"] = and_or if "and_or" not in parts else parts["and_or"] + and_or
        return parts

    def _merge(a: dict, b: dict) -> dict:
        out = {}
        for key in ("select", "select_no_agg", "where", "where_no_op"):
            out[key] = a[key] + b[key]
        for key in ("group_by", "group_by_no_having"):
            out[key] = a[key] | b[key]
        out["order_by"] = a["order_by"] + b["order_by"]
        if "and_or" in a or "and_or" in b:
            out["and_or"] = a.get("and_or", Counter()) + b.get("and_or", Counter())
        return out

    parts = one_scope(ast, "")
    return ComponentSets(
        select=parts["select"],
        select_no_agg=parts["select_no_agg"],
        where=parts["where"],
        where_no_op=parts["where_no_op"],
        group_by=parts["group_by"],
        group_by_no_having=parts["group_by_no_having"],
        order_by=parts["order_by"],
        and_or=parts["and_or"],
        keywords=frozenset(_keywords(ast)),
    )


# ---------------------------------------------------------------------------
# Question match
# ---------------------------------------------------------------------------


def question_match(pred_sql: str, gold_sql: str, schema: Schema) -> MatchResult:
    """Exact set matching: per-component equality; exact iff all match.
    An unparseable prediction scores false on every component."""
    gold = decompose(sql_core.parse_sql(gold_sql, schema))
    try:
        pred = decompose(sql_core.parse_sql(pred_sql, schema))
    except CgforgeError:
        per = {c: False for c in COMPONENTS}
        return MatchResult(exact=False, per_component=per)
    per = {c: pred.component(c) == gold.component(c) for c in COMPONENTS}
    return MatchResult(exact=all(per.values()), per_component=per)


# ---------------------------------------------------------------------------
# Difficulty
# ---------------------------------------------------------------------------


def _count_aggs(ast: QueryAst) -> int:
    n = 0

    def val_expr(e):
        nonlocal n
        if e.left.agg != "none":
            n += 1
        if e.right is not None and e.right.agg != "none":
            n += 1

    for si in ast.select:
        if si.agg != "none":
            n += 1
        val_expr(si.expr)
    for node in (ast.where, ast.having):
        for leaf in iter_condition_leaves(node):
            val_expr(leaf.left)
    for o in ast.order_by:
        val_expr(o.expr)
    return n


def difficulty_counts(ast: QueryAst) -> tuple[int, int, int]:
    comp1 = 0
    if ast.where is not None:
        comp1 += 1
    if ast.group_by:
        comp1 += 1
    if ast.order_by:
        comp1 += 1
    if ast.limit is not None:
        comp1 += 1
    comp1 += max(0, len(ast.from_items) - 1)  # joins
    or_count = (_connectives(ast.where) + _connectives(ast.having)).get("or", 0)
    comp1 += or_count
    comp1 += sum(
        1
        for leaf in iter_condition_leaves(ast.where)
        if leaf.op in ("like", "not like")
    )

    comp2 = 0
    for node in (ast.where, ast.having):
        for leaf in iter_condition_leaves(node):
            if isinstance(leaf.right, QueryAst):
                comp2 += 1
    comp2 += sum(1 for it in ast.from_items if isinstance(it, sql_core.SubqueryRef))
    if ast.set_op is not None:
        comp2 += 1

    others = 0
    if _count_aggs(ast) > 1:
        others += 1
    if len(ast.select) > 1:
        others += 1
    if len(list(iter_condition_leaves(ast.where))) > 1:
        others += 1
    if len(ast.group_by) > 1:
        others += 1
    return comp1, comp2, others


def difficulty(ast: QueryAst) -> str:
    """Deterministic rule table over structural complexity counts."""
    comp1, comp2, others = difficulty_counts(ast)
    if comp1 <= 1 and comp2 == 0 and others == 0:
        return "easy"
    if comp2 == 0 and ((others <= 2 and comp1 <= 1) or (others == 0 and comp1 <= 2)):
        return "medium"
    if (comp2 <= 1 and others <= 2 and comp1 <= 2) or (
        comp2 == 0 and comp1 <= 3 and others <= 2
    ):
        return "hard"
    return "extra"


# ---------------------------------------------------------------------------
# Split tagging
# ---------------------------------------------------------------------------


@dataclass
class EvalQuestion:
    question_id: str
    interaction_id: str
    db_id: str
    turn_index: int
    utterance: str
    gold_sql: str
    gold_ast: QueryAst
    prev_ast: QueryAst | None


def enumerate_questions(dialogues) -> list[EvalQuestion]:
    """Flatten interactions into scored questions with stable ids q00000..."""
    out = []
    k = 0
    for inter in dialogues:
        prev = None
        for ti, turn in enumerate(inter.turns, start=1):
            out.append(
                EvalQuestion(
                    question_id=f"q{k:05d}",
                    interaction_id=inter.id,
                    db_id=inter.db_id,
                    turn_index=ti,
                    utterance=turn.utterance,
                    gold_sql=turn.gold_sql,
                    gold_ast=turn.ast,
                    prev_ast=prev,
                )
            )
            prev = turn.ast
            k += 1
    return out


def tag_question(q: EvalQuestion, library: PatternLibrary, schema: Schema) -> SplitTag:
    if q.prev_ast is None:
        return SplitTag("other")
    outcome = diff_asts(q.prev_ast, q.gold_ast)
    if isinstance(outcome, NotIncremental):
        return SplitTag("other")
    base_hash = sql_core.template_of(q.prev_ast, schema).hash
    mod_hash = anonymize(outcome, schema).hash
    if base_hash not in library.base_hashes or mod_hash not in library.templates:
        return SplitTag("other", base_hash, mod_hash)
    if (base_hash, mod_hash) in library.combos_seen:
        return SplitTag("NonCG", base_hash, mod_hash)
    return SplitTag("CG", base_hash, mod_hash)


def tag_splits(
    questions: list[EvalQuestion], library: PatternLibrary, catalog: dict[str, Schema]
) -> dict[str, SplitTag]:
    return {q.question_id: tag_question(q, library, catalog[q.db_id]) for q in questions}


# ---------------------------------------------------------------------------
# Error categorization
# ---------------------------------------------------------------------------


def _element_bag(ast: QueryAst) -> set:
    """Flattened, tagged structural elements used for error attribution."""
    sets = decompose(ast)
    bag = set()
    for e in sets.select:
        bag.add(("select", e))
    for e in sets.where:
        bag.add(("where", e))
    for e in sets.group_by:
        bag.add(("group", e))
    for i, e in enumerate(sets.order_by):
        bag.add(("order", i, e))
    return bag


def categorize_error(
    pred_sql: str,
    gold_cur: QueryAst,
    gold_prev: QueryAst | None,
    schema: Schema,
) -> str:
    """Attribute a wrong prediction to missing modification components,
    missing context components, or both. Exact matches are 'correct'."""
    result = question_match(pred_sql, sql_core.print_sql(gold_cur), schema)
    if result.exact:
        return "correct"
    cur_bag = _element_bag(gold_cur)
    prev_bag = _element_bag(gold_prev) if gold_prev is not None else set()
    mod_elems = cur_bag - prev_bag
    ctx_elems = cur_bag & prev_bag
    try:
        pred_bag = _element_bag(sql_core.parse_sql(pred_sql, schema))
    except CgforgeError:
        pred_bag = set()
    missing_mod = bool(mod_elems - pred_bag)
    missing_ctx = bool(ctx_elems - pred_bag)
    if missing_mod and missing_ctx:
        return "both"
    if missing_ctx:
        return "context_info"
    # wrong but nothing structurally missing (extra components only) counts
    # as a misread modification
    return "modification_info"


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def _pct(correct: int, total: int) -> float | None:
    if total == 0:
        return None
    return round(100.0 * correct / total, 1)


@dataclass
class ReportOptions:
    max_clauses: int = 2


def report(
    predictions: dict[str, str],
    questions: list[EvalQuestion],
    library: PatternLibrary,
    catalog: dict[str, Schema],
) -> dict:
    """Score a prediction file against benchmark questions.

    Returns overall question match, QM by split tag, per-component
    accuracy, per-difficulty and per-turn breakdowns, and error-category
    counts over the incorrect predictions. Missing predictions are listed
    and scored as wrong.
    """
    tags = tag_splits(questions, library, catalog)
    missing = [q.question_id for q in questions if q.question_id not in predictions]

    rows = []
    for q in questions:
        schema = catalog[q.db_id]
        pred = predictions.get(q.question_id, "")
        match = question_match(pred, q.gold_sql, schema)
        category = (
            "correct"
            if match.exact
            else categorize_error(pred, q.gold_ast, q.prev_ast, schema)
        )
        rows.append(
            {
                "question": q,
                "match": match,
                "tag": tags[q.question_id].tag,
                "difficulty": difficulty(q.gold_ast),
                "category": category,
            }
        )

    def block(selected) -> dict:
        total = len(selected)
        correct = sum(1 for r in selected if r["match"].exact)
        return {"count": total, "correct": correct, "qm": _pct(correct, total)}

    by_split = {
        tag: block([r for r in rows if r["tag"] == tag]) for tag in ("CG", "NonCG", "other")
    }
    by_difficulty = {
        d: block([r for r in rows if r["difficulty"] == d]) for d in DIFFICULTIES
    }
    turn_indices = sorted({r["question"].turn_index for r in rows})
    by_turn = {
        str(t): block([r for r in rows if r["question"].turn_index == t])
        for t in turn_indices
    }
    per_component = {}
    for comp in COMPONENTS:
        good = sum(1 for r in rows if r["match"].per_component[comp])
        per_component[comp] = _pct(good, len(rows))
    categories = {c: 0 for c in ERROR_CATEGORIES}
    for r in rows:
        categories[r["category"]] += 1

    return {
        "overall": block(rows),
        "by_split": by_split,
        "per_component": per_component,
        "by_difficulty": by_difficulty,
        "by_turn": by_turn,
        "error_categories": categories,
        "missing_predictions": missing,
        "metadata": {
            "components": list(COMPONENTS),
            "per_component_accuracy": "fraction of all questions whose component sets match",
            "error_rule": (
                "modification elements = gold components minus previous-turn components; "
                "context elements = their intersection; a category fires when the "
                "prediction lacks one of its elements"
            ),
        },
    }


def table1_stats(questions, library: PatternLibrary, catalog) -> dict:
    """Question totals by split tag for a benchmark file."""
    tags = tag_splits(questions, library, catalog)
    counts = Counter(t.tag for t in tags.values())
    return {
        "questions": len(questions),
        "cg_questions": counts.get("CG", 0),
        "non_cg_questions": counts.get("NonCG", 0),
        "other_questions": counts.get("other", 0),
    }
