"""Schema linking and the context-dependence filter.

A turn is context-dependent when some schema item of its gold query is
mentioned in the dialogue history but not in the current question. Matching
is n-gram based over normalized tokens; all tuning knobs live in
`LinkerConfig` so the matching rules can be adjusted in one place without
touching callers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import sql_core
from .dataset_io import Interaction
from .schema import Schema
from .sql_core import QueryAst


@dataclass(frozen=True)
class SchemaItem:
    """A table (column is None) or a column of a table."""

    table: str
    column: str | None = None

    def label(self) -> str:
        return self.table if self.column is None else f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Mention:
    item: SchemaItem
    span: tuple[int, int]  # token [start, end) in the question
    kind: str  # exact | partial


@dataclass
class DependenceVerdict:
    S: frozenset
    S_c: frozenset
    S_p: frozenset
    dependent: bool


@dataclass
class LinkerConfig:
    """Matching rules, isolated so target counts can be tuned in one block."""

    min_partial_len: int = 4  # schema-name tokens shorter than this never match partially
    split_camel_case: bool = True
    use_natural_names: bool = True
    strip_plural: bool = True


DEFAULT_CONFIG = LinkerConfig()

_WORD_RE = re.compile(r"[A-Za-z0-9]+")
_CAMEL_RE = re.compile(r"[A-Z]+(?![a-z])|[A-Z][a-z0-9]*|[a-z0-9]+|[0-9]+")


def _stem(token: str) -> str:
    """Light plural stripping: cities->city, matches->match, airlines->airline."""
    t = token
    if len(t) > 4 and t.endswith("ies"):
        return t[:-3] + "y"
    if len(t) > 3 and t.endswith("es") and (t[-3] in "sxz" or t[-4:-2] in ("ch", "sh")):
        return t[:-2]
    if len(t) > 3 and t.endswith("s") and not t.endswith("ss"):
        return t[:-1]
    return t


def tokenize_question(question: str, config: LinkerConfig = DEFAULT_CONFIG) -> list[str]:
    tokens = [t.lower() for t in _WORD_RE.findall(question)]
    if config.strip_plural:
        tokens = [_stem(t) for t in tokens]
    return tokens


def _name_tokens(name: str, config: LinkerConfig) -> list[str]:
    parts: list[str] = []
    for chunk in name.split("_"):
        if not chunk:
            continue
        if config.split_camel_case:
            parts.extend(_CAMEL_RE.findall(chunk))
        else:
            parts.append(chunk)
    tokens = [p.lower() for p in parts if p]
    if config.strip_plural:
        tokens = [_stem(t) for t in tokens]
    return tokens


def _name_variants(item: SchemaItem, schema: Schema, config: LinkerConfig):
    """Token sequences an item can be referred to by (original + natural name)."""
    names = []
    if item.column is None:
        names.append(item.table)
        if config.use_natural_names:
            names.append(schema.table_natural(item.table))
    else:
        names.append(item.column)
        if config.use_natural_names:
            names.append(schema.column_natural(item.table, item.column))
    variants = []
    seen = set()
    for raw in names:
        toks = tuple(_name_tokens(raw, config))
        if toks and toks not in seen:
            seen.add(toks)
            variants.append((raw, toks))
    return variants


def link_mentions(
    question: str,
    schema: Schema,
    restrict_to: set[SchemaItem],
    config: LinkerConfig = DEFAULT_CONFIG,
) -> list[Mention]:
    """All exact n-gram and single-token partial matches of the given items.

    Exact: every token of the item name appears as a contiguous question
    n-gram. Partial: any single item-name token of length >= 4 equals a
    question token. Output is ordered by span start (exact before partial
    on ties); one question token may match several items.
    """
    qtoks = tokenize_question(question, config)
    mentions: set[Mention] = set()
    for item in restrict_to:
        exact_cover: set[int] = set()
        partial: set[Mention] = set()
        for raw, toks in _name_variants(item, schema, config):
            n = len(toks)
            if n > 0:
                for i in range(0, len(qtoks) - n + 1):
                    if tuple(qtoks[i : i + n]) == toks:
                        mentions.add(Mention(item, (i, i + n), "exact"))
                        exact_cover.update(range(i, i + n))
            for raw_tok, tok in zip(_raw_tokens(raw, config), toks):
                if len(raw_tok) < config.min_partial_len:
                    continue
                for i, qt in enumerate(qtoks):
                    if qt == tok:
                        partial.add(Mention(item, (i, i + 1), "partial"))
        # a token inside an exact match of the same item is not a separate
        # partial mention
        mentions.update(m for m in partial if m.span[0] not in exact_cover)
    return sorted(
        mentions, key=lambda m: (m.span[0], m.span[1], m.kind != "exact", m.item.label())
    )


def _raw_tokens(name: str, config: LinkerConfig) -> list[str]:
    parts: list[str] = []
    for chunk in name.split("_"):
        if not chunk:
            continue
        if config.split_camel_case:
            parts.extend(_CAMEL_RE.findall(chunk))
        else:
            parts.append(chunk)
    return [p for p in parts if p]


def schema_items_of(ast: QueryAst) -> set[SchemaItem]:
    """Tables and columns the query touches, anywhere in the tree."""
    items: set[SchemaItem] = set()

    def walk(q: QueryAst):
        for t in sql_core.tables_of(q):
            items.add(SchemaItem(t))
        for ref in sql_core.iter_column_refs(q, recurse=False):
            if ref.table is not None and ref.column != "*":
                items.add(SchemaItem(ref.table, ref.column))
        for item in q.from_items:
            if isinstance(item, sql_core.SubqueryRef):
                walk(item.query)
        for node in (q.where, q.having):
            for leaf in sql_core.iter_condition_leaves(node):
                if isinstance(leaf.right, QueryAst):
                    walk(leaf.right)
        if q.set_op is not None:
            walk(q.set_op[1])

    walk(ast)
    return items


def classify_dependence(
    turn_index: int,
    interaction: Interaction,
    schema: Schema,
    config: LinkerConfig = DEFAULT_CONFIG,
) -> DependenceVerdict:
    """Verdict for a 1-based turn index of an interaction."""
    turn = interaction.turns[turn_index - 1]
    S = schema_items_of(turn.ast)
    S_c = {m.item for m in link_mentions(turn.utterance, schema, S, config)}
    S_p: set[SchemaItem] = set()
    for prev in interaction.turns[: turn_index - 1]:
        S_p |= {m.item for m in link_mentions(prev.utterance, schema, S, config)}
    return DependenceVerdict(
        S=frozenset(S),
        S_c=frozenset(S_c),
        S_p=frozenset(S_p),
        dependent=bool(S_p - S_c),
    )


@dataclass
class TurnRef:
    interaction: Interaction
    turn_index: int  # 1-based
    verdict: DependenceVerdict


@dataclass
class FilterReport:
    dependent_count: int = 0
    independent_count: int = 0
    per_db: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "dependent_count": self.dependent_count,
            "independent_count": self.independent_count,
            "per_db": {
                db: dict(counts) for db, counts in sorted(self.per_db.items())
            },
        }


def filter_dataset(
    dialogues: list[Interaction],
    catalog: dict[str, Schema],
    config: LinkerConfig = DEFAULT_CONFIG,
) -> tuple[list[TurnRef], list[TurnRef], FilterReport]:
    """Partition every turn into (dependent, independent).

    Turn 1 of each interaction is always independent; later turns follow
    their DependenceVerdict. The decision is per-turn only, so the result
    is stable under re-ordering of interactions.
    """
    dependent: list[TurnRef] = []
    independent: list[TurnRef] = []
    report = FilterReport()
    for inter in dialogues:
        schema = catalog[inter.db_id]
        db_counts = report.per_db.setdefault(inter.db_id, {"dependent": 0, "independent": 0})
        for idx in range(1, len(inter.turns) + 1):
            verdict = classify_dependence(idx, inter, schema, config)
            if idx == 1:
                verdict.dependent = False
            ref = TurnRef(inter, idx, verdict)
            if verdict.dependent:
                dependent.append(ref)
                report.dependent_count += 1
                db_counts["dependent"] += 1
            else:
                independent.append(ref)
                report.independent_count += 1
                db_counts["independent"] += 1
    return dependent, independent, report
