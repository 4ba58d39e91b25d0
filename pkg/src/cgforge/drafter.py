"""Draft utterance generation for candidates.

The rule-based realizer is the deterministic built-in; the external hook
runs any program speaking one-JSON-object-in, one-JSON-object-out over
stdio, matching the contract of a fine-tuned seq2seq generator. The
request carries the concrete modification, the previous SQL statement and
the previous utterance.

Realization table (rule-based), per edit:

    where     add      Only show the ones where <cond>.
              remove   Drop the condition that <cond>.
              replace  Instead, only show the ones where <cond>.
    having    add      Only keep groups where <cond>.
              remove   Drop the group condition.
              replace  Instead, only keep groups where <cond>.
    group_by  add      Break the results down by <cols>.
              remove   Don't break the results down anymore.
              replace  Break the results down by <cols> instead.
    order_by  add      Sort the results by <expr> in <dir> order.
              remove   Don't sort the results anymore.
              replace  Instead, sort the results by <expr> in <dir> order.
    limit     add      Just show the top <n>.
              remove   Show all of them.
              replace  Show the top <n> instead.
    select    add      Also show <items>.
              remove   Stop showing <items>.
              replace  Show <items> instead.
    from      add      Also use the <tables> information.
              remove   Don't use the <tables> information anymore.
              replace  Use the <tables> information instead.
    set_op    add/replace  union:     Combine those with <summary>.
                           intersect: Only keep the ones that are also in <summary>.
                           except:    Exclude the ones that are in <summary>.
              remove   Forget the combination with the other results.

Multiple edits are joined with "and also". Column and table phrases use the
catalog's natural-language names when present, else the original names with
underscores replaced by spaces.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass

from . import sql_core
from .errors import ExternalFailure, UnrealizableEdit
from .patterns import Edit, Modification
from .schema import Schema
from .sql_core import BoolOp, ColumnRef, Condition, QueryAst, Value


@dataclass
class DraftRequest:
    modification: Modification
    prev_sql: str
    prev_utterance: str


_AGG_WORDS = {
    "count": "number of",
    "sum": "total",
    "avg": "average",
    "min": "smallest",
    "max": "largest",
}

_OP_PHRASES = {
    "=": "is",
    "!=": "is not",
    ">": "is greater than",
    "<": "is less than",
    ">=": "is at least",
    "<=": "is at most",
    "like": "contains",
    "not like": "does not contain",
    "in": "is one of",
    "not in": "is not one of",
}

_DIR_WORDS = {"asc": "ascending", "desc": "descending"}


class _Phraser:
    def __init__(self, schema: Schema | None):
        self.schema = schema

    def column(self, ref: ColumnRef) -> str:
        if ref.column == "*":
            return "everything"
        if self.schema is not None and ref.table is not None:
            return self.schema.column_natural(ref.table, ref.column).lower()
        return ref.column.replace("_", " ").lower()

    def table(self, name: str) -> str:
        if self.schema is not None:
            return self.schema.table_natural(name).lower()
        return name.replace("_", " ").lower()

    def col_unit(self, u) -> str:
        inner = self.column(u.col)
        if u.agg == "none":
            return inner
        if u.agg == "count" and u.col.column == "*":
            return "the number of results"
        prefix = "distinct " if u.distinct else ""
        return f"the {_AGG_WORDS[u.agg]} {prefix}{inner}"

    def val_expr(self, e) -> str:
        words = {"+": "plus", "-": "minus", "*": "times", "/": "divided by"}
        if e.op == "none":
            return self.col_unit(e.left)
        return f"{self.col_unit(e.left)} {words[e.op]} {self.col_unit(e.right)}"

    def select_item(self, si) -> str:
        inner = self.val_expr(si.expr)
        if si.agg == "none":
            return inner
        if si.agg == "count" and si.expr.left.col.column == "*":
            return "the number of results"
        prefix = "distinct " if si.distinct else ""
        return f"the {_AGG_WORDS[si.agg]} {prefix}{inner}"

    def value(self, v: Value) -> str:
        return v.raw

    def query_summary(self, q: QueryAst) -> str:
        items = " and ".join(self.select_item(si) for si in q.select)
        tables = " and ".join(
            self.table(it.name)
            for it in q.from_items
            if isinstance(it, sql_core.TableRef)
        )
        if tables:
            return f"{items} from {tables}"
        return items

    def condition(self, c: Condition) -> str:
        left = self.val_expr(c.left)
        if c.op == "between":
            return f"{left} is between {self.value(c.right)} and {self.value(c.right2)}"
        phrase = _OP_PHRASES[c.op]
        right = c.right
        if isinstance(right, QueryAst):
            return f"{left} {phrase} the {self.query_summary(right)}"
        if isinstance(right, ColumnRef):
            return f"{left} {phrase} {self.column(right)}"
        return f"{left} {phrase} {self.value(right)}"

    def cond_node(self, node) -> str:
        if isinstance(node, BoolOp):
            sep = f" {node.op} "
            return sep.join(self.cond_node(ch) for ch in node.children)
        return self.condition(node)


def _realize_edit(edit: Edit, phraser: _Phraser) -> str:
    cl, act, payload = edit.clause, edit.action, edit.payload
    if cl == "where":
        if act == "add":
            return f"Only show the ones where {phraser.cond_node(payload)}"
        if act == "remove":
            return f"Drop the condition that {phraser.cond_node(payload)}"
        if act == "replace":
            return f"Instead, only show the ones where {phraser.cond_node(payload)}"
    if cl == "having":
        if act == "add":
            return f"Only keep groups where {phraser.cond_node(payload)}"
        if act == "remove":
            return "Drop the group condition"
        if act == "replace":
            return f"Instead, only keep groups where {phraser.cond_node(payload)}"
    if cl == "group_by":
        cols = " and ".join(phraser.column(c) for c in payload)
        if act == "add":
            return f"Break the results down by {cols}"
        if act == "remove":
            return "Don't break the results down anymore"
        if act == "replace":
            return f"Break the results down by {cols} instead"
    if cl == "order_by":
        items = " and then ".join(
            f"{phraser.val_expr(o.expr)} in {_DIR_WORDS[o.direction]} order" for o in payload
        )
        if act == "add":
            return f"Sort the results by {items}"
        if act == "remove":
            return "Don't sort the results anymore"
        if act == "replace":
            return f"Instead, sort the results by {items}"
    if cl == "limit":
        if act == "add":
            return f"Just show the top {payload}"
        if act == "remove":
            return "Show all of them"
        if act == "replace":
            return f"Show the top {payload} instead"
    if cl == "select":
        if act == "replace":
            distinct, items = payload
            phrase = " and ".join(phraser.select_item(si) for si in items)
            if distinct:
                phrase = f"the distinct {phrase}"
            return f"Show {phrase} instead"
        items = " and ".join(phraser.select_item(si) for si in payload)
        if act == "add":
            return f"Also show {items}"
        if act == "remove":
            return f"Stop showing {items}"
    if cl == "from":
        tables, _conds = payload
        names = " and ".join(phraser.table(t.name) for t in tables)
        if act == "add":
            return f"Also use the {names} information"
        if act == "remove":
            return f"Don't use the {names} information anymore"
        if act == "replace":
            return f"Use the {names} information instead"
    if cl == "set_op":
        if act == "remove":
            return "Forget the combination with the other results"
        kind, right = payload
        summary = phraser.query_summary(right)
        if kind == "union":
            return f"Combine those with the {summary}"
        if kind == "intersect":
            return f"Only keep the ones that are also in the {summary}"
        if kind == "except":
            return f"Exclude the ones that are in the {summary}"
    raise UnrealizableEdit(f"no realization for ({cl}, {act})")


def draft_rule_based(req: DraftRequest, schema: Schema | None = None) -> str:
    """Deterministic English realization of the modification."""
    phraser = _Phraser(schema)
    fragments = [_realize_edit(e, phraser) for e in req.modification.edits]
    text = fragments[0]
    for frag in fragments[1:]:
        text += " and also " + frag[0].lower() + frag[1:]
    return text + "."


def _request_json(req: DraftRequest) -> dict:
    return {
        "modification": [
            {
                "clause": e.clause,
                "action": e.action,
                "payload": sql_core.ast_to_json(e.payload),
            }
            for e in req.modification.edits
        ],
        "prev_sql": req.prev_sql,
        "prev_utterance": req.prev_utterance,
    }


def draft_external(req: DraftRequest, command: list[str], timeout: float = 30.0) -> str:
    """Run an external generator: one JSON request on stdin, one JSON
    object {"utterance": ...} expected on stdout."""
    payload = json.dumps(_request_json(req), ensure_ascii=False)
    try:
        proc = subprocess.run(
            command,
            input=payload.encode("utf-8"),
            capture_output=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired as exc:
        raise ExternalFailure(f"generator timed out after {timeout}s") from exc
    except OSError as exc:
        raise ExternalFailure(f"cannot run generator: {exc}") from exc
    if proc.returncode != 0:
        raise ExternalFailure(
            f"generator exited {proc.returncode}: {proc.stderr.decode('utf-8', 'replace')[:200]}"
        )
    try:
        out = json.loads(proc.stdout.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ExternalFailure(f"generator output is not valid JSON: {exc}") from exc
    if not isinstance(out, dict) or not isinstance(out.get("utterance"), str):
        raise ExternalFailure("generator output lacks an 'utterance' string")
    utterance = out["utterance"].strip()
    if not utterance:
        raise ExternalFailure("generator returned an empty utterance")
    return utterance
