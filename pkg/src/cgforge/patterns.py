"""Modification extraction: clause-level AST diff and anonymized templates.

Consecutive gold queries are compared clause by clause, top down. Each
maximal differing clause child becomes one edit; WHERE/HAVING diffs go one
level deeper and work on top-level conjuncts, so a single changed condition
yields the minimal differing condition node. Turn pairs that differ in more
than `max_clauses` clauses, or that replace the query wholesale (disjoint
FROM tables and a different select list), are NotIncremental and excluded
from pattern extraction.

Every returned Modification is verified at construction: applying it to the
previous query must reproduce the current one. Pairs failing verification
come back as NotIncremental with a reason rather than a bogus pattern.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace

from . import sql_core
from .errors import ApplyError
from .schema import Schema
from .sql_core import (
    BoolOp,
    ColumnRef,
    Condition,
    QueryAst,
    SlotAllocator,
    SubqueryRef,
    TableRef,
    Value,
    anonymize_query,
    stable_hash,
)

CLAUSE_ORDER = ("from", "select", "where", "group_by", "having", "order_by", "limit", "set_op")

# Clause tags in the order used for combined tag names; select is excluded
# from tagging because nearly every modification also touches it.
TAG_ORDER = ("where", "groupby", "having", "orderby", "limit", "from", "iue")
_CLAUSE_TO_TAG = {
    "where": "where",
    "group_by": "groupby",
    "having": "having",
    "order_by": "orderby",
    "limit": "limit",
    "from": "from",
    "set_op": "iue",
}


@dataclass(frozen=True)
class Edit:
    clause: str  # one of CLAUSE_ORDER
    action: str  # add | remove | replace
    payload: object


@dataclass(frozen=True)
class Modification:
    edits: tuple  # of Edit, in CLAUSE_ORDER
    base_tables: tuple = ()  # FROM tables of the query being modified


@dataclass(frozen=True)
class NotIncremental:
    reason: str


@dataclass(frozen=True)
class ModificationTemplate:
    edits: tuple  # of Edit with slotted payloads
    constraints: tuple  # sorted human-readable constraint strings
    text: str
    hash: str


@dataclass
class PatternLibrary:
    templates: dict = field(default_factory=dict)  # hash -> ModificationTemplate
    support: Counter = field(default_factory=Counter)  # template hash -> count
    base_hashes: Counter = field(default_factory=Counter)  # base template hash -> count
    combos_seen: set = field(default_factory=set)  # (base_hash, mod_hash)

    def add(self, base_hash: str, template: ModificationTemplate) -> None:
        self.templates.setdefault(template.hash, template)
        self.support[template.hash] += 1
        self.base_hashes[base_hash] += 1
        self.combos_seen.add((base_hash, template.hash))


# ---------------------------------------------------------------------------
# Clause extraction and conjunct handling
# ---------------------------------------------------------------------------


def _clause_value(ast: QueryAst, clause: str):
    if clause == "select":
        return (ast.distinct, ast.select)
    if clause == "from":
        return (ast.from_items, ast.join_conds)
    if clause == "group_by":
        return ast.group_by
    return getattr(ast, clause)


def conjuncts(node) -> list:
    """Top-level AND conjuncts; an OR-rooted tree is one atomic unit."""
    if node is None:
        return []
    if isinstance(node, BoolOp) and node.op == "and":
        return list(node.children)
    return [node]


def _conjoin(units: list):
    if not units:
        return None
    if len(units) == 1:
        return units[0]
    flat = []
    for u in units:
        if isinstance(u, BoolOp) and u.op == "and":
            flat.extend(u.children)
        else:
            flat.append(u)
    return BoolOp("and", tuple(flat))


def _multiset_diff(a: list, b: list) -> list:
    """Elements of a not in b, respecting multiplicity."""
    rest = list(b)
    out = []
    for x in a:
        if x in rest:
            rest.remove(x)
        else:
            out.append(x)
    return out


# ---------------------------------------------------------------------------
# Diff
# ---------------------------------------------------------------------------


def _diff_tree_clause(clause: str, prev_node, cur_node) -> Edit:
    if prev_node is None:
        return Edit(clause, "add", cur_node)
    if cur_node is None:
        return Edit(clause, "remove", prev_node)
    p, c = conjuncts(prev_node), conjuncts(cur_node)
    added = _multiset_diff(c, p)
    removed = _multiset_diff(p, c)
    if added and not removed:
        return Edit(clause, "add", _conjoin(added))
    if removed and not added:
        return Edit(clause, "remove", _conjoin(removed))
    return Edit(clause, "replace", cur_node)


def _diff_from(prev: QueryAst, cur: QueryAst) -> Edit:
    prev_tables = sql_core.tables_of(prev)
    cur_tables = sql_core.tables_of(cur)
    prev_has_sub = any(isinstance(i, SubqueryRef) for i in prev.from_items)
    cur_has_sub = any(isinstance(i, SubqueryRef) for i in cur.from_items)
    if prev_tables < cur_tables and not (prev_has_sub or cur_has_sub):
        added = [it for it in cur.from_items if isinstance(it, TableRef) and it.name not in prev_tables]
        new_conds = _multiset_diff(list(cur.join_conds), list(prev.join_conds))
        if not _multiset_diff(list(prev.join_conds), list(cur.join_conds)):
            return Edit("from", "add", (tuple(added), tuple(new_conds)))
    if cur_tables < prev_tables and not (prev_has_sub or cur_has_sub):
        removed = [it for it in prev.from_items if isinstance(it, TableRef) and it.name not in cur_tables]
        gone_conds = _multiset_diff(list(prev.join_conds), list(cur.join_conds))
        if not _multiset_diff(list(cur.join_conds), list(prev.join_conds)):
            return Edit("from", "remove", (tuple(removed), tuple(gone_conds)))
    return Edit("from", "replace", (cur.from_items, cur.join_conds))


def _diff_list_clause(clause: str, prev_val, cur_val) -> Edit:
    if not prev_val and cur_val:
        return Edit(clause, "add", cur_val)
    if prev_val and not cur_val:
        return Edit(clause, "remove", prev_val)
    return Edit(clause, "replace", cur_val)


def _diff_scalar_clause(clause: str, prev_val, cur_val) -> Edit:
    if prev_val is None:
        return Edit(clause, "add", cur_val)
    if cur_val is None:
        return Edit(clause, "remove", prev_val)
    return Edit(clause, "replace", cur_val)


def diff_asts(prev: QueryAst, cur: QueryAst, max_clauses: int = 2):
    """Clause-level top-down diff. Returns Modification or NotIncremental."""
    changed = [cl for cl in CLAUSE_ORDER if _clause_value(prev, cl) != _clause_value(cur, cl)]
    if not changed:
        return NotIncremental("identical queries")
    if len(changed) > max_clauses:
        return NotIncremental("too many clauses differ")
    if (
        "select" in changed
        and sql_core.tables_of(prev)
        and sql_core.tables_of(cur)
        and sql_core.tables_of(prev).isdisjoint(sql_core.tables_of(cur))
    ):
        return NotIncremental("whole-query replacement (disjoint FROM tables)")

    edits = []
    for clause in CLAUSE_ORDER:
        if clause not in changed:
            continue
        if clause == "select":
            edits.append(Edit("select", "replace", (cur.distinct, cur.select)))
        elif clause == "from":
            edits.append(_diff_from(prev, cur))
        elif clause in ("where", "having"):
            edits.append(_diff_tree_clause(clause, getattr(prev, clause), getattr(cur, clause)))
        elif clause in ("group_by", "order_by"):
            edits.append(_diff_list_clause(clause, getattr(prev, clause), getattr(cur, clause)))
        else:  # limit, set_op
            edits.append(_diff_scalar_clause(clause, getattr(prev, clause), getattr(cur, clause)))

    mod = Modification(edits=tuple(edits), base_tables=tuple(sorted(sql_core.tables_of(prev))))
    try:
        rebuilt = apply_modification(prev, mod)
    except ApplyError:
        return NotIncremental("reconstruction failed")
    if rebuilt != cur:
        return NotIncremental("reconstruction mismatch")
    return mod


# ---------------------------------------------------------------------------
# Apply
# ---------------------------------------------------------------------------


def _payload_tables(payload) -> set[str]:
    tables: set[str] = set()

    def walk(node):
        if isinstance(node, ColumnRef):
            if node.table is not None:
                tables.add(node.table)
        elif isinstance(node, TableRef):
            tables.add(node.name)
        elif isinstance(node, QueryAst):
            return  # nested scopes own their tables
        elif isinstance(node, tuple):
            for x in node:
                walk(x)
        elif hasattr(node, "__dataclass_fields__"):
            for name in node.__dataclass_fields__:
                walk(getattr(node, name))

    walk(payload)
    return tables


def _auto_join(
    from_items: list, join_conds: list, needed: set[str], schema: Schema | None
) -> None:
    """Extend FROM with tables reachable over one FK edge; raises otherwise."""
    present = {it.name.lower() for it in from_items if isinstance(it, TableRef)}
    missing = [t for t in sorted(needed) if t.lower() not in present]
    if not missing:
        return
    if schema is None:
        raise ApplyError(f"payload references tables not in FROM: {missing}")
    for table in missing:
        edge = None
        for (ct, cc), (pt, pc) in schema.fk_edges_named():
            if ct.lower() == table.lower() and pt.lower() in present:
                edge = (ct, cc, pt, pc)
                break
            if pt.lower() == table.lower() and ct.lower() in present:
                edge = (ct, cc, pt, pc)
                break
        if edge is None:
            raise ApplyError(f"no foreign-key edge joins table {table!r} to the base query")
        ct, cc, pt, pc = edge
        from_items.append(TableRef(table))
        join_conds.append(
            Condition(
                sql_core.ValExpr(sql_core.ColUnit(ColumnRef(ct, cc))),
                "=",
                ColumnRef(pt, pc),
            )
        )
        present.add(table.lower())


def apply_modification(base: QueryAst, mod: Modification, schema: Schema | None = None) -> QueryAst:
    """Apply edits to a base query.

    add conjoins (WHERE/HAVING) or fills an absent clause; replace swaps the
    clause child; remove deletes it. When a schema is given, payload tables
    missing from the base FROM are joined in over a single FK edge. The
    result re-validates the query invariants; violations raise ApplyError.
    """
    state = {
        "select": list(base.select),
        "distinct": base.distinct,
        "from_items": list(base.from_items),
        "join_conds": list(base.join_conds),
        "where": base.where,
        "group_by": list(base.group_by),
        "having": base.having,
        "order_by": list(base.order_by),
        "limit": base.limit,
        "set_op": base.set_op,
    }
    edits = sorted(mod.edits, key=lambda e: CLAUSE_ORDER.index(e.clause))

    for edit in edits:
        cl, act, payload = edit.clause, edit.action, edit.payload
        if cl == "select":
            if act == "replace":
                distinct, items = payload
                state["select"] = list(items)
                state["distinct"] = distinct
            elif act == "add":
                state["select"].extend(x for x in payload if x not in state["select"])
            else:
                for x in payload:
                    if x not in state["select"]:
                        raise ApplyError("remove of a select item not present")
                    state["select"].remove(x)
                if not state["select"]:
                    raise ApplyError("remove would empty the select list")
        elif cl == "from":
            tables, conds = payload
            if act == "add":
                present = {i.name.lower() for i in state["from_items"] if isinstance(i, TableRef)}
                for t in tables:
                    if t.name.lower() in present:
                        raise ApplyError(f"table {t.name!r} already in FROM")
                    state["from_items"].append(t)
                state["join_conds"].extend(conds)
            elif act == "remove":
                names = {t.name.lower() for t in tables}
                kept = [
                    i
                    for i in state["from_items"]
                    if not (isinstance(i, TableRef) and i.name.lower() in names)
                ]
                if len(kept) == len(state["from_items"]):
                    raise ApplyError("remove of tables not present in FROM")
                if not kept:
                    raise ApplyError("remove would empty the FROM clause")
                state["from_items"] = kept
                state["join_conds"] = [
                    c for c in state["join_conds"] if not (_payload_tables(c) & set(
                        t.name for t in tables))
                ]
            else:
                state["from_items"] = list(tables)
                state["join_conds"] = list(conds)
        elif cl in ("where", "having"):
            if act == "add":
                existing = state[cl]
                if existing is None:
                    state[cl] = payload
                elif isinstance(existing, BoolOp) and existing.op == "or":
                    raise ApplyError(f"cannot conjoin onto an OR-rooted {cl} clause")
                else:
                    state[cl] = _conjoin(conjuncts(existing) + conjuncts(payload))
            elif act == "remove":
                existing = state[cl]
                if existing is None:
                    raise ApplyError(f"remove on absent {cl} clause")
                if existing == payload:
                    state[cl] = None
                else:
                    units = conjuncts(existing)
                    for u in conjuncts(payload):
                        if u not in units:
                            raise ApplyError(f"{cl} condition to remove not present")
                        units.remove(u)
                    state[cl] = _conjoin(units)
            else:
                if state[cl] is None:
                    raise ApplyError(f"replace on absent {cl} clause")
                state[cl] = payload
        elif cl in ("group_by", "order_by"):
            existing = state[cl]
            if act == "add":
                if existing:
                    raise ApplyError(f"add on non-empty {cl} clause")
                state[cl] = list(payload)
            elif act == "remove":
                if not existing:
                    raise ApplyError(f"remove on absent {cl} clause")
                state[cl] = []
            else:
                if not existing:
                    raise ApplyError(f"replace on absent {cl} clause")
                state[cl] = list(payload)
        else:  # limit, set_op
            existing = state[cl]
            if act == "add":
                if existing is not None:
                    raise ApplyError(f"add on present {cl} clause")
                state[cl] = payload
            elif act == "remove":
                if existing is None:
                    raise ApplyError(f"remove on absent {cl} clause")
                state[cl] = None
            else:
                if existing is None:
                    raise ApplyError(f"replace on absent {cl} clause")
                state[cl] = payload

    needed = set()
    for edit in edits:
        if edit.clause != "from":
            needed |= _payload_tables(edit.payload)
    _auto_join(state["from_items"], state["join_conds"], needed, schema)

    result = QueryAst(
        select=tuple(state["select"]),
        from_items=tuple(state["from_items"]),
        join_conds=tuple(state["join_conds"]),
        where=state["where"],
        group_by=tuple(state["group_by"]),
        having=state["having"],
        order_by=tuple(state["order_by"]),
        limit=state["limit"],
        distinct=state["distinct"],
        set_op=state["set_op"],
    )
    if result.having is not None and not result.group_by:
        raise ApplyError("result has HAVING without GROUP BY")
    if result.set_op is not None and len(result.set_op[1].select) != len(result.select):
        raise ApplyError("result set operation operands differ in select arity")
    from_tables = {i.name.lower() for i in result.from_items if isinstance(i, TableRef)}
    for ref in sql_core.iter_column_refs(result, recurse=False):
        if ref.table is not None and ref.table.lower() not in from_tables:
            raise ApplyError(f"column {ref.table}.{ref.column} references a table not in FROM")
    return result


# ---------------------------------------------------------------------------
# Anonymization to modification templates
# ---------------------------------------------------------------------------


def _anonymize_payload(payload, schema: Schema, slots: SlotAllocator):
    if payload is None or isinstance(payload, (bool, int)):
        if isinstance(payload, bool) or payload is None:
            return payload
        return slots.val_slot()  # LIMIT count
    if isinstance(payload, tuple):
        return tuple(_anonymize_payload(x, schema, slots) for x in payload)
    if isinstance(payload, str):
        return payload
    if isinstance(payload, ColumnRef):
        return sql_core._anonymize_colref(payload, slots)
    if isinstance(payload, TableRef):
        return TableRef(slots.table_slot(payload.name))
    if isinstance(payload, Value):
        return Value("slot", slots.val_slot())
    if isinstance(payload, QueryAst):
        return anonymize_query(payload, schema, slots)
    if isinstance(payload, BoolOp):
        return BoolOp(payload.op, tuple(_anonymize_payload(c, schema, slots) for c in payload.children))
    if hasattr(payload, "__dataclass_fields__"):
        kwargs = {
            name: _anonymize_payload(getattr(payload, name), schema, slots)
            for name in payload.__dataclass_fields__
        }
        return type(payload)(**kwargs)
    raise TypeError(f"cannot anonymize payload of type {type(payload).__name__}")


def _payload_text(payload) -> str:
    if payload is None:
        return "-"
    if isinstance(payload, bool):
        return "distinct" if payload else "plain"
    if isinstance(payload, (int, str)):
        return str(payload)
    if isinstance(payload, tuple):
        return ", ".join(_payload_text(x) for x in payload)
    if isinstance(payload, ColumnRef):
        return sql_core._print_col(payload)
    if isinstance(payload, TableRef):
        return payload.name
    if isinstance(payload, Value):
        return sql_core.print_value(payload)
    if isinstance(payload, QueryAst):
        return sql_core.print_sql(payload)
    if isinstance(payload, (Condition, BoolOp)):
        return sql_core._print_cond_node(payload)
    if isinstance(payload, sql_core.OrderItem):
        return f"{sql_core._print_val_expr(payload.expr)} {payload.direction.upper()}"
    if isinstance(payload, sql_core.SelectItem):
        return sql_core._print_select_item(payload)
    if isinstance(payload, sql_core.FkJoin):
        return f"FKJOIN({payload.child_table}, {payload.parent_table})"
    raise TypeError(f"cannot render payload of type {type(payload).__name__}")


def anonymize(mod: Modification, schema: Schema) -> ModificationTemplate:
    """Anonymize a modification's payloads into typed slots plus constraints.

    Constraints record, per column slot, its owning table slot; primary-key
    status; foreign-key edges between slotted columns; and whether each
    table slot was part of the modified query's FROM clause (base) or a
    newly joined table (new).
    """
    slots = SlotAllocator(schema, typed=True)
    base_lower = {t.lower() for t in mod.base_tables}
    slotted = tuple(
        Edit(e.clause, e.action, _anonymize_payload(e.payload, schema, slots))
        for e in mod.edits
    )

    constraints: set[str] = set()
    for (table_l, _col_l), col_slot in slots.col_slots.items():
        tab_slot = slots.table_slots[table_l]
        constraints.add(f"owns({tab_slot}, {col_slot})")
    for table_l, tab_slot in slots.table_slots.items():
        constraints.add(f"base({tab_slot})" if table_l in base_lower else f"new({tab_slot})")
    concrete = {slot: tc for slot, tc in slots.col_concrete.items()}
    for slot, (t, c) in concrete.items():
        if schema.is_primary_key(t, c):
            constraints.add(f"pk({slot})")
    slot_list = list(concrete.items())
    for i, (s1, tc1) in enumerate(slot_list):
        for s2, tc2 in slot_list[i + 1 :]:
            ci = schema.column_index(*tc1)
            cj = schema.column_index(*tc2)
            if (ci, cj) in set(schema.foreign_keys):
                constraints.add(f"fk({s1}, {s2})")
            elif (cj, ci) in set(schema.foreign_keys):
                constraints.add(f"fk({s2}, {s1})")

    ordered = tuple(sorted(constraints))
    lines = [f"({e.clause}, {e.action}, {_payload_text(e.payload)})" for e in slotted]
    text = "; ".join(lines) + " | " + " & ".join(ordered)
    return ModificationTemplate(
        edits=slotted, constraints=ordered, text=text, hash=stable_hash(text)
    )


def component_tags(template: ModificationTemplate) -> set[str]:
    """Tag a template by its edited clauses; select edits are not counted."""
    parts = sorted(
        {_CLAUSE_TO_TAG[e.clause] for e in template.edits if e.clause != "select"},
        key=TAG_ORDER.index,
    )
    if not parts:
        return set()
    return {"-".join(parts)}


# ---------------------------------------------------------------------------
# Library construction and serialization
# ---------------------------------------------------------------------------


def collect_patterns(
    dependent_turns, catalog: dict[str, Schema], corpus=None
) -> tuple[PatternLibrary, dict]:
    """Build the template library from the dependent partition of a dataset.

    Each dependent turn (index >= 2) is diffed against its predecessor's
    gold AST; those modifications form the template library. When the full
    training corpus is given, every training query's template and every
    consecutive-pair combination is additionally recorded as seen (in
    base_hashes/combos_seen) so that novelty checks and split tagging treat
    anything occurring anywhere in training as not novel, including
    context-independent turns whose patterns are not in the library.
    Returns the library plus a tally of skipped turns by reason.
    """
    library = PatternLibrary()
    tallies = {"patterns": 0, "not_incremental": 0, "first_turn": 0}
    reasons: Counter = Counter()
    for ref in dependent_turns:
        if ref.turn_index < 2:
            tallies["first_turn"] += 1
            continue
        schema = catalog[ref.interaction.db_id]
        prev = ref.interaction.turns[ref.turn_index - 2].ast
        cur = ref.interaction.turns[ref.turn_index - 1].ast
        outcome = diff_asts(prev, cur)
        if isinstance(outcome, NotIncremental):
            tallies["not_incremental"] += 1
            reasons[outcome.reason] += 1
            continue
        base = sql_core.template_of(prev, schema)
        template = anonymize(outcome, schema)
        library.add(base.hash, template)
        tallies["patterns"] += 1
    tallies["not_incremental_reasons"] = dict(reasons)
    if corpus is not None:
        for inter in corpus:
            schema = catalog[inter.db_id]
            prev = None
            for turn in inter.turns:
                library.base_hashes[sql_core.template_of(turn.ast, schema).hash] += 1
                if prev is not None:
                    outcome = diff_asts(prev, turn.ast)
                    if not isinstance(outcome, NotIncremental):
                        base = sql_core.template_of(prev, schema)
                        library.combos_seen.add((base.hash, anonymize(outcome, schema).hash))
                prev = turn.ast
    return library, tallies


def tag_distribution(library: PatternLibrary, by_support: bool = False) -> dict[str, int]:
    dist: Counter = Counter()
    for h, template in library.templates.items():
        weight = library.support[h] if by_support else 1
        for tag in component_tags(template):
            dist[tag] += weight
    return dict(sorted(dist.items(), key=lambda kv: (-kv[1], kv[0])))


def save_library(library: PatternLibrary, path) -> None:
    data = {
        "templates": [
            {
                "hash": t.hash,
                "support": library.support[t.hash],
                "text": t.text,
                "constraints": list(t.constraints),
                "edits": [
                    {
                        "clause": e.clause,
                        "action": e.action,
                        "payload": sql_core.ast_to_json(e.payload),
                    }
                    for e in t.edits
                ],
            }
            for t in sorted(library.templates.values(), key=lambda t: t.hash)
        ],
        "base_hashes": {h: n for h, n in sorted(library.base_hashes.items())},
        "combos_seen": sorted(list(pair) for pair in library.combos_seen),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def load_library(path) -> PatternLibrary:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    library = PatternLibrary()
    for rec in data["templates"]:
        edits = tuple(
            Edit(e["clause"], e["action"], sql_core.ast_from_json(e["payload"]))
            for e in rec["edits"]
        )
        template = ModificationTemplate(
            edits=edits,
            constraints=tuple(rec["constraints"]),
            text=rec["text"],
            hash=rec["hash"],
        )
        library.templates[template.hash] = template
        library.support[template.hash] = rec["support"]
    library.base_hashes = Counter({h: n for h, n in data["base_hashes"].items()})
    library.combos_seen = {tuple(pair) for pair in data["combos_seen"]}
    return library
