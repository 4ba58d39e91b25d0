"""Template filling, recombination with base queries, novelty and linting.

Slot filling: table slots constrained to the base query's FROM tables
(``base(tabN)``) draw from those tables; new-table slots (``new(tabN)``)
draw from tables one foreign-key edge away from the base. Column slots draw
from their owning table's columns of the matching type, further restricted
by pk/fk constraints. Value slots do not enlarge the space: they are filled
with the canonical placeholder (the number 1 for number-typed contexts,
the 'value' literal otherwise) because exact-set matching ignores values.
"""

from __future__ import annotations

import itertools
import json
import random
import re
from dataclasses import dataclass, field

from . import sql_core
from .dataset_io import Candidate, CandidateBase, Interaction, candidate_id
from .errors import ApplyError, NoFill, UnknownTemplate
from .patterns import (
    Edit,
    Modification,
    ModificationTemplate,
    PatternLibrary,
    apply_modification,
)
from .schema import Schema
from .sql_core import (
    BoolOp,
    ColumnRef,
    Condition,
    QueryAst,
    TableRef,
    Value,
)

__all__ = [
    "SlotFill",
    "LintRule",
    "Violation",
    "enumerate_fills",
    "brute_force_fills",
    "apply_modification",
    "instantiate",
    "is_novel",
    "lint",
    "default_rules",
    "load_rules",
    "generate_candidates",
    "GenerationReport",
]

_COL_SLOT_RE = re.compile(r"^col(\d+)(?::(\w+))?$")
_TAB_SLOT_RE = re.compile(r"^tab(\d+)$")
_VAL_SLOT_RE = re.compile(r"^val(\d+)$")


@dataclass(frozen=True)
class SlotFill:
    assignment: tuple  # sorted tuple of (slot, token) pairs

    def as_dict(self) -> dict[str, str]:
        return dict(self.assignment)


@dataclass
class TemplateSlots:
    tabs: list[str]
    cols: list[str]
    vals: list[str]
    owner: dict[str, str]  # col slot -> tab slot
    base_tabs: set[str]
    new_tabs: set[str]
    pk_cols: set[str]
    fk_pairs: list[tuple[str, str]]  # (child col slot, parent col slot)


def _slot_sort_key(slot: str) -> int:
    m = _COL_SLOT_RE.match(slot) or _TAB_SLOT_RE.match(slot) or _VAL_SLOT_RE.match(slot)
    return int(m.group(1))


def template_slots(t: ModificationTemplate) -> TemplateSlots:
    tabs: set[str] = set()
    cols: set[str] = set()
    vals: set[str] = set()

    def walk(node):
        if isinstance(node, str):
            if _VAL_SLOT_RE.match(node):
                vals.add(node)
            elif _TAB_SLOT_RE.match(node):
                tabs.add(node)
            return
        if isinstance(node, ColumnRef):
            if node.table is not None:
                tabs.add(node.table)
            if node.column != "*":
                cols.add(node.column)
            return
        if isinstance(node, TableRef):
            tabs.add(node.name)
            return
        if isinstance(node, Value):
            if node.kind == "slot":
                vals.add(node.raw)
            return
        if isinstance(node, tuple):
            for x in node:
                walk(x)
            return
        if hasattr(node, "__dataclass_fields__"):
            for name in node.__dataclass_fields__:
                walk(getattr(node, name))

    for edit in t.edits:
        walk(edit.payload)

    owner: dict[str, str] = {}
    base_tabs: set[str] = set()
    new_tabs: set[str] = set()
    pk_cols: set[str] = set()
    fk_pairs: list[tuple[str, str]] = []
    for c in t.constraints:
        m = re.match(r"^owns\((tab\d+), (col\d+(?::\w+)?)\)$", c)
        if m:
            owner[m.group(2)] = m.group(1)
            continue
        m = re.match(r"^base\((tab\d+)\)$", c)
        if m:
            base_tabs.add(m.group(1))
            continue
        m = re.match(r"^new\((tab\d+)\)$", c)
        if m:
            new_tabs.add(m.group(1))
            continue
        m = re.match(r"^pk\((col\d+(?::\w+)?)\)$", c)
        if m:
            pk_cols.add(m.group(1))
            continue
        m = re.match(r"^fk\((col\d+(?::\w+)?), (col\d+(?::\w+)?)\)$", c)
        if m:
            fk_pairs.append((m.group(1), m.group(2)))
    return TemplateSlots(
        tabs=sorted(tabs, key=_slot_sort_key),
        cols=sorted(cols, key=_slot_sort_key),
        vals=sorted(vals, key=_slot_sort_key),
        owner=owner,
        base_tabs=base_tabs,
        new_tabs=new_tabs,
        pk_cols=pk_cols,
        fk_pairs=fk_pairs,
    )


def _col_slot_type(slot: str) -> str | None:
    m = _COL_SLOT_RE.match(slot)
    return m.group(2) if m else None


def _fk_adjacent_tables(base_tables: list[str], schema: Schema) -> list[str]:
    base_lower = {t.lower() for t in base_tables}
    out = []
    for (ct, _cc), (pt, _pc) in schema.fk_edges_named():
        for cand, anchor in ((ct, pt), (pt, ct)):
            if cand.lower() not in base_lower and anchor.lower() in base_lower:
                if cand not in out:
                    out.append(cand)
    return out


def _satisfies(assignment: dict[str, str], slots: TemplateSlots, schema: Schema) -> bool:
    for col_slot, tab_slot in slots.owner.items():
        table = assignment[tab_slot]
        column = assignment[col_slot]
        want = _col_slot_type(col_slot)
        ctype = schema.column_type(table, column)
        if ctype is None:
            return False
        if want is not None and ctype != want:
            return False
    for col_slot in slots.pk_cols:
        table = assignment[slots.owner[col_slot]]
        if not schema.is_primary_key(table, assignment[col_slot]):
            return False
    fk_set = set(schema.foreign_keys)
    for child_slot, parent_slot in slots.fk_pairs:
        ct = assignment[slots.owner[child_slot]]
        pt = assignment[slots.owner[parent_slot]]
        ci = schema.column_index(ct, assignment[child_slot])
        pi = schema.column_index(pt, assignment[parent_slot])
        if ci is None or pi is None or (ci, pi) not in fk_set:
            return False
    return True


def _derive_value_fills(
    assignment: dict[str, str], t: ModificationTemplate, slots: TemplateSlots, schema: Schema
) -> dict[str, str]:
    """Value slots take a fixed token typed by the column they accompany."""
    kinds: dict[str, str] = {}

    def note(val_slot: str, coltype: str | None):
        kinds[val_slot] = "1" if coltype == "number" else sql_core.PLACEHOLDER_TEXT

    def cond_coltype(cond: Condition) -> str | None:
        col = cond.left.left.col
        if col.column == "*" or col.table is None:
            return "number"  # aggregates compare numerically
        if cond.left.left.agg in ("count", "sum", "avg"):
            return "number"
        table = assignment.get(col.table, col.table)
        column = assignment.get(col.column, col.column)
        return schema.column_type(table, column)

    def walk(node):
        if isinstance(node, Condition):
            for v in (node.right, node.right2):
                if isinstance(v, Value) and v.kind == "slot":
                    note(v.raw, cond_coltype(node))
            if isinstance(node.right, QueryAst):
                walk(node.right)
            return
        if isinstance(node, BoolOp):
            for ch in node.children:
                walk(ch)
            return
        if isinstance(node, QueryAst):
            for part in (node.where, node.having):
                if part is not None:
                    walk(part)
            if isinstance(node.limit, str):
                kinds[node.limit] = "1"
            if node.set_op is not None:
                walk(node.set_op[1])
            return
        if isinstance(node, str):
            if _VAL_SLOT_RE.match(node):
                kinds.setdefault(node, "1")  # bare slot payload: a LIMIT count
            return
        if isinstance(node, tuple):
            for x in node:
                walk(x)

    for edit in t.edits:
        walk(edit.payload)
    for v in slots.vals:
        kinds.setdefault(v, sql_core.PLACEHOLDER_TEXT)
    return kinds


def enumerate_fills(
    t: ModificationTemplate,
    base: QueryAst,
    schema: Schema,
    seed: int = 0,
    cap: int | None = None,
) -> list[SlotFill]:
    """All constraint-satisfying slot fills, deterministic given the seed.

    Columns come from tables already in the base FROM clause unless a
    ``new(tabN)`` constraint licenses a single-FK join extension. With a cap,
    fills are sampled uniformly from the full space (order preserved).
    """
    slots = template_slots(t)
    base_tables = [it.name for it in base.from_items if isinstance(it, TableRef)]
    fills: list[SlotFill] = []

    tab_domains = []
    for tab in slots.tabs:
        if tab in slots.new_tabs:
            domain = _fk_adjacent_tables(base_tables, schema)
        else:
            domain = list(base_tables)
        if not domain:
            raise NoFill(f"no candidate tables for slot {tab}")
        tab_domains.append(domain)

    for tab_choice in itertools.product(*tab_domains):
        assignment = dict(zip(slots.tabs, tab_choice))
        col_domains = []
        feasible = True
        for col_slot in slots.cols:
            table = assignment[slots.owner[col_slot]]
            want = _col_slot_type(col_slot)
            domain = [
                col.name
                for _, col in schema.columns_of(table)
                if want is None or col.ctype == want
            ]
            if col_slot in slots.pk_cols:
                domain = [c for c in domain if schema.is_primary_key(table, c)]
            if not domain:
                feasible = False
                break
            col_domains.append(domain)
        if not feasible:
            continue
        for col_choice in itertools.product(*col_domains):
            full = dict(assignment)
            full.update(zip(slots.cols, col_choice))
            if not _satisfies(full, slots, schema):
                continue
            full.update(_derive_value_fills(full, t, slots, schema))
            fills.append(SlotFill(tuple(sorted(full.items()))))

    if not fills:
        raise NoFill(f"template {t.hash} has no fill over database {schema.db_id!r}")
    if cap is not None and len(fills) > cap:
        rng = random.Random(seed)
        picked = sorted(rng.sample(range(len(fills)), cap))
        fills = [fills[i] for i in picked]
    return fills


def brute_force_fills(
    t: ModificationTemplate, base: QueryAst, schema: Schema
) -> set[SlotFill]:
    """Independent oracle: cross product of maximal domains, then filter.

    Table slots range over every schema table, column slots over every
    column of the assigned table; the declared constraints (base/new
    membership, ownership typing, pk, fk) are checked one assignment at a
    time. Exponential, for small test schemas only.
    """
    slots = template_slots(t)
    base_tables = [it.name for it in base.from_items if isinstance(it, TableRef)]
    base_lower = {x.lower() for x in base_tables}
    adjacent = {x.lower() for x in _fk_adjacent_tables(base_tables, schema)}
    out: set[SlotFill] = set()
    all_tables = list(schema.tables)

    def tab_ok(slot: str, table: str) -> bool:
        if slot in slots.new_tabs:
            return table.lower() in adjacent
        return table.lower() in base_lower

    for tab_choice in itertools.product(all_tables, repeat=len(slots.tabs)):
        if not all(tab_ok(s, tb) for s, tb in zip(slots.tabs, tab_choice)):
            continue
        assignment = dict(zip(slots.tabs, tab_choice))
        col_domains = []
        for col_slot in slots.cols:
            table = assignment[slots.owner[col_slot]]
            col_domains.append([col.name for _, col in schema.columns_of(table)])
        for col_choice in itertools.product(*col_domains):
            full = dict(assignment)
            full.update(zip(slots.cols, col_choice))
            if not _satisfies(full, slots, schema):
                continue
            full.update(_derive_value_fills(full, t, slots, schema))
            out.add(SlotFill(tuple(sorted(full.items()))))
    return out


# ---------------------------------------------------------------------------
# Instantiation
# ---------------------------------------------------------------------------


def instantiate(t: ModificationTemplate, fill: SlotFill, schema: Schema) -> Modification:
    """Substitute a slot fill into the template's payloads."""
    a = fill.as_dict()

    def num_value(token: str) -> Value:
        return Value("number", token) if token.lstrip("-").isdigit() else Value(
            "placeholder", sql_core.PLACEHOLDER_TEXT
        )

    def sub(node):
        if node is None or isinstance(node, (bool, int)):
            return node
        if isinstance(node, str):
            if node in a:  # bare LIMIT slot
                return int(a[node])
            return node
        if isinstance(node, ColumnRef):
            table = a.get(node.table, node.table) if node.table else None
            column = a.get(node.column, node.column)
            return ColumnRef(table, column)
        if isinstance(node, TableRef):
            return TableRef(a.get(node.name, node.name))
        if isinstance(node, Value):
            if node.kind == "slot":
                token = a.get(node.raw, sql_core.PLACEHOLDER_TEXT)
                if token == sql_core.PLACEHOLDER_TEXT:
                    return Value("placeholder", sql_core.PLACEHOLDER_TEXT)
                return num_value(token)
            return node
        if isinstance(node, QueryAst):
            kwargs = {name: sub(getattr(node, name)) for name in node.__dataclass_fields__}
            if isinstance(node.limit, str) and node.limit in a:
                kwargs["limit"] = int(a[node.limit])
            return QueryAst(**kwargs)
        if isinstance(node, tuple):
            return tuple(sub(x) for x in node)
        if hasattr(node, "__dataclass_fields__"):
            return type(node)(**{name: sub(getattr(node, name)) for name in node.__dataclass_fields__})
        return node

    edits = tuple(Edit(e.clause, e.action, sub(e.payload)) for e in t.edits)
    return Modification(edits=edits, base_tables=())


# ---------------------------------------------------------------------------
# Novelty
# ---------------------------------------------------------------------------


def is_novel(base_hash: str, mod_hash: str, library: PatternLibrary) -> bool:
    """True iff the (base, modification) template pair is unseen in training."""
    if base_hash not in library.base_hashes:
        raise UnknownTemplate(f"base template {base_hash} never seen in training")
    if mod_hash not in library.templates:
        raise UnknownTemplate(f"modification template {mod_hash} never seen in training")
    return (base_hash, mod_hash) not in library.combos_seen


# ---------------------------------------------------------------------------
# Lint rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    location: str


@dataclass(frozen=True)
class LintRule:
    id: str
    description: str
    matcher: object  # callable QueryAst -> list[str] of locations


def _has_select_agg(ast: QueryAst) -> bool:
    return any(
        si.agg != "none" or si.expr.left.agg != "none"
        or (si.expr.right is not None and si.expr.right.agg != "none")
        for si in ast.select
    )


def _rule_agg_orderby(ast: QueryAst) -> list[str]:
    if _has_select_agg(ast) and ast.order_by and not ast.group_by:
        return ["order_by"]
    return []


def _rule_duplicate_condition(ast: QueryAst) -> list[str]:
    out = []
    for clause, node in (("where", ast.where), ("having", ast.having)):
        if isinstance(node, BoolOp) and node.op == "and":
            seen = set()
            for ch in node.children:
                if ch in seen:
                    out.append(clause)
                    break
                seen.add(ch)
    return out


def _rule_orderby_fixed_column(ast: QueryAst) -> list[str]:
    fixed = set()
    for leaf in conjunct_leaves(ast.where):
        if (
            leaf.op == "="
            and isinstance(leaf.right, Value)
            and leaf.left.op == "none"
            and leaf.left.left.agg == "none"
        ):
            fixed.add(leaf.left.left.col)
    for o in ast.order_by:
        if o.expr.op == "none" and o.expr.left.agg == "none" and o.expr.left.col in fixed:
            return ["order_by"]
    return []


def conjunct_leaves(node) -> list[Condition]:
    """Condition leaves of the top-level AND chain (OR branches excluded)."""
    if node is None:
        return []
    if isinstance(node, Condition):
        return [node]
    if isinstance(node, BoolOp) and node.op == "and":
        return [ch for ch in node.children if isinstance(ch, Condition)]
    return []


def _rule_having_without_groupby(ast: QueryAst) -> list[str]:
    if ast.having is not None and not ast.group_by:
        return ["having"]
    return []


_ALL_RULES = {
    "agg-select-with-orderby-no-groupby": LintRule(
        "agg-select-with-orderby-no-groupby",
        "an aggregate in SELECT is ordered without any GROUP BY",
        _rule_agg_orderby,
    ),
    "duplicate-and-condition": LintRule(
        "duplicate-and-condition",
        "the same condition appears twice under one AND",
        _rule_duplicate_condition,
    ),
    "orderby-on-equality-fixed-column": LintRule(
        "orderby-on-equality-fixed-column",
        "ORDER BY on a column already fixed by an equality in WHERE",
        _rule_orderby_fixed_column,
    ),
    "having-without-groupby": LintRule(
        "having-without-groupby",
        "HAVING without GROUP BY",
        _rule_having_without_groupby,
    ),
}


def default_rules() -> list[LintRule]:
    return list(_ALL_RULES.values())


def load_rules(path) -> list[LintRule]:
    """Config file: JSON object with a "rules" array of rule ids."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    names = data.get("rules", [])
    unknown = [n for n in names if n not in _ALL_RULES]
    if unknown:
        raise KeyError(f"unknown lint rule(s): {unknown}")
    return [_ALL_RULES[n] for n in names]


def lint(ast: QueryAst, rules: list[LintRule] | None = None) -> list[Violation]:
    rules = default_rules() if rules is None else rules
    violations = []
    for rule in rules:
        for loc in rule.matcher(ast):
            violations.append(Violation(rule.id, loc))
    return violations


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------


@dataclass
class GenerationReport:
    candidates: int = 0
    bases_considered: int = 0
    bases_unseen_template: int = 0
    pairs_considered: int = 0
    rejected: dict = field(default_factory=lambda: {
        "not_novel": 0,
        "no_fill": 0,
        "apply_error": 0,
        "no_change": 0,
        "lint_violation": 0,
        "duplicate": 0,
    })

    def as_dict(self) -> dict:
        return {
            "candidates": self.candidates,
            "bases_considered": self.bases_considered,
            "bases_unseen_template": self.bases_unseen_template,
            "pairs_considered": self.pairs_considered,
            "rejected": dict(self.rejected),
        }


def generate_candidates(
    library: PatternLibrary,
    base_pool: list[Interaction],
    catalog: dict[str, Schema],
    seed: int = 0,
    cap_per_pair: int = 3,
    rules: list[LintRule] | None = None,
) -> tuple[list[Candidate], GenerationReport]:
    """Recombine library templates with development-set turns.

    Every emitted candidate is a novel (base template, modification
    template) combination whose recombined query passes all lint rules.
    Deterministic for a fixed seed; re-runs produce byte-identical output.
    """
    rules = default_rules() if rules is None else rules
    report = GenerationReport()
    out: list[Candidate] = []
    seen_ids: set[str] = set()
    template_hashes = sorted(library.templates)

    for inter in base_pool:
        schema = catalog[inter.db_id]
        for ti, turn in enumerate(inter.turns, start=1):
            report.bases_considered += 1
            base_tpl = sql_core.template_of(turn.ast, schema)
            if base_tpl.hash not in library.base_hashes:
                report.bases_unseen_template += 1
                continue
            prefix = [t.utterance for t in inter.turns[:ti]]
            prev_sql = sql_core.print_sql(turn.ast)
            for mod_hash in template_hashes:
                report.pairs_considered += 1
                if not is_novel(base_tpl.hash, mod_hash, library):
                    report.rejected["not_novel"] += 1
                    continue
                template = library.templates[mod_hash]
                pair_seed = seed ^ int(
                    sql_core.stable_hash(f"{inter.id}:{ti}:{mod_hash}"), 16
                ) & 0x7FFFFFFF
                try:
                    fills = enumerate_fills(template, turn.ast, schema, pair_seed, cap_per_pair)
                except NoFill:
                    report.rejected["no_fill"] += 1
                    continue
                for fill in fills:
                    mod = instantiate(template, fill, schema)
                    try:
                        new_ast = apply_modification(turn.ast, mod, schema)
                    except ApplyError:
                        report.rejected["apply_error"] += 1
                        continue
                    if new_ast == turn.ast:
                        report.rejected["no_change"] += 1
                        continue
                    if lint(new_ast, rules):
                        report.rejected["lint_violation"] += 1
                        continue
                    new_sql = sql_core.print_sql(new_ast)
                    cid = candidate_id(inter.db_id, prefix, prev_sql, new_sql)
                    if cid in seen_ids:
                        report.rejected["duplicate"] += 1
                        continue
                    seen_ids.add(cid)
                    out.append(
                        Candidate(
                            id=cid,
                            db_id=inter.db_id,
                            base=CandidateBase(
                                interaction_id=inter.id,
                                turn_index=ti,
                                utterances=prefix,
                                prev_sql=prev_sql,
                            ),
                            new_sql=new_sql,
                            base_template_hash=base_tpl.hash,
                            modification_template_hash=mod_hash,
                        )
                    )
                    report.candidates += 1
    out.sort(key=lambda c: c.id)
    return out, report
