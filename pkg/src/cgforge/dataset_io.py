"""Dialogue datasets and every artifact file format.

Input formats follow the upstream datasets: the schema catalog is a JSON
array (see `schema.load_schema_catalog`), dialogue files are JSON arrays of
records with a `database_id` and an `interaction` array of
``{utterance, query}`` turns. All artifact outputs are UTF-8; multi-record
artifacts are line-delimited JSON except benchmark files, which keep the
upstream array shape so existing model code can read them.

Gold SQL text is always re-parsed here so that every module shares one AST
definition; pre-tokenized fields in upstream files are ignored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

from . import sql_core
from .errors import CgforgeError, FormatError, UnknownDatabase
from .schema import Schema
from .sql_core import QueryAst


@dataclass
class Turn:
    utterance: str
    gold_sql: str
    ast: QueryAst


@dataclass
class Interaction:
    id: str
    db_id: str
    turns: list[Turn]


@dataclass
class RejectedRecord:
    index: int
    db_id: str
    reason: str


@dataclass(frozen=True)
class PrefixAlignedExample:
    interaction_id: str
    turn_index: int  # 1-based
    prefix_utterances: tuple[str, ...]
    target_sql: str


@dataclass
class CandidateBase:
    interaction_id: str
    turn_index: int  # 1-based index of the turn whose query is modified
    utterances: list[str]
    prev_sql: str


@dataclass
class Candidate:
    id: str
    db_id: str
    base: CandidateBase
    new_sql: str
    base_template_hash: str
    modification_template_hash: str
    draft_utterance: str = ""
    status: str = "pending"
    final_utterance: str | None = None
    reviews: list[dict] = field(default_factory=list)


CANDIDATE_STATUSES = ("pending", "accepted", "rejected", "revised", "disputed")


def candidate_id(db_id: str, base_utterances: Iterable[str], prev_sql: str, new_sql: str) -> str:
    """Content hash so re-runs are idempotent and decisions survive regeneration."""
    payload = json.dumps(
        [db_id, list(base_utterances), prev_sql, new_sql], ensure_ascii=False
    )
    return "c" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Dialogue loading
# ---------------------------------------------------------------------------


def load_dialogues(
    path, catalog: dict[str, Schema]
) -> tuple[list[Interaction], list[RejectedRecord], int]:
    """Load a SParC/CoSQL-shaped dialogue file.

    Returns (interactions, rejects, skipped_turns). A record whose query
    fails to parse is routed to the rejects list with the reason instead of
    aborting the load. Turns without a gold query (CoSQL clarification
    acts) are skipped and counted in skipped_turns.
    """
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise FormatError("dialogue file must be a JSON array")
    interactions: list[Interaction] = []
    rejects: list[RejectedRecord] = []
    skipped_turns = 0
    for i, rec in enumerate(data):
        if not isinstance(rec, dict) or "database_id" not in rec:
            raise FormatError("record lacks database_id", i)
        db_id = rec["database_id"]
        if db_id not in catalog:
            raise UnknownDatabase(f"database_id {db_id!r} not in catalog (record {i})")
        schema = catalog[db_id]
        raw_turns = rec.get("interaction")
        if not isinstance(raw_turns, list):
            raise FormatError("record lacks an interaction array", i, "interaction")
        turns: list[Turn] = []
        failure: str | None = None
        for k, t in enumerate(raw_turns):
            utterance = (t.get("utterance") or "").strip()
            query = (t.get("query") or "").strip()
            if not query:
                skipped_turns += 1
                continue
            try:
                ast = sql_core.parse_sql(query, schema)
            except CgforgeError as exc:
                failure = f"turn {k + 1}: {exc}"
                break
            turns.append(Turn(utterance=utterance, gold_sql=query, ast=ast))
        if failure is not None:
            rejects.append(RejectedRecord(index=i, db_id=db_id, reason=failure))
            continue
        if not turns:
            rejects.append(RejectedRecord(index=i, db_id=db_id, reason="no turns with a query"))
            continue
        interactions.append(Interaction(id=f"i{i:05d}_{db_id}", db_id=db_id, turns=turns))
    return interactions, rejects, skipped_turns


# ---------------------------------------------------------------------------
# p-align pair export
# ---------------------------------------------------------------------------


def export_palign_pairs(dialogues: list[Interaction]) -> list[PrefixAlignedExample]:
    """One example per turn: the i-th carries utterances 1..i and gold SQL i."""
    out = []
    for inter in dialogues:
        for i, turn in enumerate(inter.turns, start=1):
            out.append(
                PrefixAlignedExample(
                    interaction_id=inter.id,
                    turn_index=i,
                    prefix_utterances=tuple(t.utterance for t in inter.turns[:i]),
                    target_sql=turn.gold_sql,
                )
            )
    return out


def write_palign_jsonl(examples: list[PrefixAlignedExample], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(
                json.dumps(
                    {
                        "interaction_id": ex.interaction_id,
                        "turn_index": ex.turn_index,
                        "prefix_utterances": list(ex.prefix_utterances),
                        "target_sql": ex.target_sql,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_palign_jsonl(path) -> list[PrefixAlignedExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(
                PrefixAlignedExample(
                    interaction_id=rec["interaction_id"],
                    turn_index=rec["turn_index"],
                    prefix_utterances=tuple(rec["prefix_utterances"]),
                    target_sql=rec["target_sql"],
                )
            )
    return out


# ---------------------------------------------------------------------------
# Candidate records
# ---------------------------------------------------------------------------


def candidate_to_dict(c: Candidate) -> dict:
    return {
        "id": c.id,
        "db_id": c.db_id,
        "base": {
            "interaction_id": c.base.interaction_id,
            "turn_index": c.base.turn_index,
            "utterances": list(c.base.utterances),
            "prev_sql": c.base.prev_sql,
        },
        "new_sql": c.new_sql,
        "base_template_hash": c.base_template_hash,
        "modification_template_hash": c.modification_template_hash,
        "draft_utterance": c.draft_utterance,
        "status": c.status,
        "final_utterance": c.final_utterance,
        "reviews": list(c.reviews),
    }


def candidate_from_dict(rec: dict) -> Candidate:
    if rec.get("status") not in CANDIDATE_STATUSES:
        raise FormatError(f"bad candidate status {rec.get('status')!r}", field="status")
    base = rec["base"]
    return Candidate(
        id=rec["id"],
        db_id=rec["db_id"],
        base=CandidateBase(
            interaction_id=base["interaction_id"],
            turn_index=base["turn_index"],
            utterances=list(base["utterances"]),
            prev_sql=base["prev_sql"],
        ),
        new_sql=rec["new_sql"],
        base_template_hash=rec["base_template_hash"],
        modification_template_hash=rec["modification_template_hash"],
        draft_utterance=rec.get("draft_utterance", ""),
        status=rec["status"],
        final_utterance=rec.get("final_utterance"),
        reviews=list(rec.get("reviews", [])),
    )


def write_candidates_jsonl(candidates: list[Candidate], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in candidates:
            f.write(json.dumps(candidate_to_dict(c), ensure_ascii=False, sort_keys=True) + "\n")


def read_candidates_jsonl(path) -> list[Candidate]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(candidate_from_dict(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Benchmark files (upstream dialogue-array shape) and predictions
# ---------------------------------------------------------------------------


def write_benchmark(records: list[dict], path) -> None:
    """Records are upstream-shaped dicts: {database_id, interaction: [...]}."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(records, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def read_predictions_jsonl(path) -> dict[str, str]:
    """Line-delimited {question_id, predicted_sql} records."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "question_id" not in rec or "predicted_sql" not in rec:
                raise FormatError("prediction line needs question_id and predicted_sql", n)
            out[str(rec["question_id"])] = str(rec["predicted_sql"])
    return out
