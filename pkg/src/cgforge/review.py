"""Persistent double-review queue for generated candidates.

Storage is two files in a store directory: `candidates.jsonl` (immutable
queue) and `decisions.log` (append-only line-delimited JSON). Candidate
statuses are derived state, recomputed from the decision log, which is the
single source of truth; replaying the log always reproduces the stored
statuses. Every decision line is flushed and fsynced before the call
returns, so an acknowledged decision survives a crash.

Status resolution over the effective decisions (one per reviewer, the
latest wins): a strict reject majority among two or more decisions rejects
the candidate; otherwise two or more non-reject decisions accept it (or
mark it revised when at least one of them is a revision, taking the latest
revision text); a single decision leaves it pending; a one-one split is
disputed until a third decision breaks the tie.
"""

import difflib
import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .dataset_io import (
    Candidate,
    candidate_from_dict,
    candidate_to_dict,
)
from .errors import InvalidDecision, StoreError, UnknownCandidate

DECISION_ACTIONS = ("accept", "reject", "revise")


@dataclass(frozen=True)
class Decision:
    candidate_id: str
    reviewer: str
    action: str
    revised_utterance: str | None = None
    timestamp: str = ""

    def validate(self) -> None:
        if self.action not in DECISION_ACTIONS:
            raise InvalidDecision(f"unknown action {self.action!r}")
        if not self.reviewer or not self.reviewer.strip():
            raise InvalidDecision("reviewer must be non-empty")
        if self.action == "revise" and not (self.revised_utterance or "").strip():
            raise InvalidDecision("revise requires a non-empty revised_utterance")


def decision_to_dict(d: Decision) -> dict:
    out = {
        "candidate_id": d.candidate_id,
        "reviewer": d.reviewer,
        "action": d.action,
        "timestamp": d.timestamp,
    }
    if d.revised_utterance is not None:
        out["revised_utterance"] = d.revised_utterance
    return out


def decision_from_dict(rec: dict) -> Decision:
    return Decision(
        candidate_id=rec["candidate_id"],
        reviewer=rec["reviewer"],
        action=rec["action"],
        revised_utterance=rec.get("revised_utterance"),
        timestamp=rec.get("timestamp", ""),
    )


def resolve_status(candidate: Candidate, decisions: list[Decision]) -> tuple[str, str | None]:
    """(status, final_utterance) from chronologically ordered decisions."""
    effective: dict[str, tuple[int, Decision]] = {}
    for i, d in enumerate(decisions):
        effective[d.reviewer] = (i, d)
    ordered = [d for _, d in sorted(effective.values(), key=lambda x: x[0])]
    n = len(ordered)
    rejects = sum(1 for d in ordered if d.action == "reject")
    accepts = sum(1 for d in ordered if d.action == "accept")
    revises = [d for d in ordered if d.action == "revise"]
    if n == 0:
        return "pending", None
    if n >= 2 and rejects * 2 > n:
        return "rejected", None
    if (accepts + len(revises)) >= 2 and revises:
        return "revised", revises[-1].revised_utterance
    if accepts >= 2:
        return "accepted", candidate.draft_utterance
    if n == 1:
        return "pending", None
    return "disputed", None


class ReviewStore:
    """Candidate queue + append-only decision log in one directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.candidates_path = self.root / "candidates.jsonl"
        self.decisions_path = self.root / "decisions.log"
        self._lock = threading.Lock()
        self._candidates: dict[str, Candidate] = {}
        self._decisions: dict[str, list[Decision]] = {}
        self._load()

    def _load(self) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            if self.candidates_path.exists():
                with open(self.candidates_path, encoding="utf-8") as f:
                    for line in f:
                        if line.strip():
                            c = candidate_from_dict(json.loads(line))
                            self._candidates[c.id] = c
            if self.decisions_path.exists():
                with open(self.decisions_path, encoding="utf-8") as f:
                    for line in f:
                        if line.strip():
                            d = decision_from_dict(json.loads(line))
                            self._decisions.setdefault(d.candidate_id, []).append(d)
        except OSError as exc:
            raise StoreError(f"cannot load review store: {exc}") from exc
        self._recompute_all()

    def _recompute_all(self) -> None:
        for cid, cand in self._candidates.items():
            status, final = resolve_status(cand, self._decisions.get(cid, []))
            cand.status = status
            cand.final_utterance = final
            cand.reviews = [decision_to_dict(d) for d in self._decisions.get(cid, [])]

    # -- queue operations ---------------------------------------------------

    def enqueue(self, candidates: list[Candidate]) -> dict:
        """Idempotent by candidate id; existing decisions are preserved."""
        added, existing, invalid = 0, 0, []
        with self._lock:
            try:
                with open(self.candidates_path, "a", encoding="utf-8") as f:
                    for c in candidates:
                        if not c.id or not c.new_sql:
                            invalid.append({"id": c.id, "reason": "missing id or new_sql"})
                            continue
                        if c.id in self._candidates:
                            existing += 1
                            continue
                        f.write(
                            json.dumps(candidate_to_dict(c), ensure_ascii=False, sort_keys=True)
                            + "\n"
                        )
                        self._candidates[c.id] = c
                        added += 1
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as exc:
                raise StoreError(f"cannot append candidates: {exc}") from exc
            self._recompute_all()
        return {"added": added, "existing": existing, "invalid": invalid, "total": len(self._candidates)}

    def record_decision(self, decision: Decision) -> Candidate:
        decision.validate()
        with self._lock:
            cand = self._candidates.get(decision.candidate_id)
            if cand is None:
                raise UnknownCandidate(f"no candidate {decision.candidate_id!r}")
            if not decision.timestamp:
                decision = Decision(
                    decision.candidate_id,
                    decision.reviewer,
                    decision.action,
                    decision.revised_utterance,
                    datetime.now(timezone.utc).isoformat(),
                )
            try:
                with open(self.decisions_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(decision_to_dict(decision), ensure_ascii=False) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as exc:
                raise StoreError(f"cannot append decision: {exc}") from exc
            self._decisions.setdefault(decision.candidate_id, []).append(decision)
            status, final = resolve_status(cand, self._decisions[decision.candidate_id])
            cand.status = status
            cand.final_utterance = final
            cand.reviews = [decision_to_dict(d) for d in self._decisions[decision.candidate_id]]
            return cand

    # -- views ----------------------------------------------------------------

    def candidates(self, status: str | None = None, reviewer: str | None = None) -> list[Candidate]:
        out = sorted(self._candidates.values(), key=lambda c: c.id)
        if status:
            out = [c for c in out if c.status == status]
        if reviewer:
            out = [
                c
                for c in out
                if any(r["reviewer"] == reviewer for r in c.reviews)
            ]
        return out

    def get(self, candidate_id: str) -> Candidate:
        cand = self._candidates.get(candidate_id)
        if cand is None:
            raise UnknownCandidate(f"no candidate {candidate_id!r}")
        return cand

    def stats(self) -> dict:
        counts = {s: 0 for s in ("pending", "accepted", "revised", "rejected", "disputed")}
        for c in self._candidates.values():
            counts[c.status] += 1
        counts["total"] = len(self._candidates)
        return counts

    def replay_statuses(self) -> dict[str, str]:
        """Recompute every status from the log alone (for audits/tests)."""
        out = {}
        for cid, cand in self._candidates.items():
            status, _ = resolve_status(cand, self._decisions.get(cid, []))
            out[cid] = status
        return out


def export_benchmark(store: ReviewStore) -> list[dict]:
    """Accepted and revised candidates as upstream-shaped dialogue records,
    each one's base prefix extended with the reviewed turn. Deterministic
    order by candidate id."""
    records = []
    for cand in store.candidates():
        if cand.status not in ("accepted", "revised"):
            continue
        turns = [
            {"utterance": u, "query": ""} for u in cand.base.utterances
        ]
        # the base prefix carries utterances only up to the modified turn;
        # its gold query is the last prefix turn's query
        if turns:
            turns[-1]["query"] = cand.base.prev_sql
        turns.append({"utterance": cand.final_utterance or "", "query": cand.new_sql})
        records.append(
            {
                "database_id": cand.db_id,
                "interaction": turns,
                "candidate_id": cand.id,
            }
        )
    return records


# ---------------------------------------------------------------------------
# Diff highlighting for the review UI
# ---------------------------------------------------------------------------


def highlight_segments(prev_sql: str, new_sql: str) -> list[dict]:
    """Token-level segments of new_sql with changed spans marked, computed
    server-side so the client never parses SQL."""
    prev_toks = re.findall(r"\S+", prev_sql)
    new_toks = re.findall(r"\S+", new_sql)
    sm = difflib.SequenceMatcher(a=prev_toks, b=new_toks, autojunk=False)
    segments = []
    for tag, _i1, _i2, j1, j2 in sm.get_opcodes():
        if j1 == j2:
            continue
        segments.append({"text": " ".join(new_toks[j1:j2]), "changed": tag != "equal"})
    return segments


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


def candidate_payload(c: Candidate) -> dict:
    rec = candidate_to_dict(c)
    rec["highlight"] = highlight_segments(c.base.prev_sql, c.new_sql)
    return rec


def build_app(store: ReviewStore, assets_dir=None):
    """FastAPI app exposing the review API plus the UI's static assets."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import HTMLResponse, JSONResponse
    from fastapi.staticfiles import StaticFiles
    from starlette.exceptions import HTTPException as StarletteHTTPException

    app = FastAPI(title="cgforge review", docs_url=None, redoc_url=None)

    def error_response(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status, content={"error": {"code": code, "message": message}}
        )

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        return error_response(exc.status_code, "http_error", str(exc.detail))

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return error_response(422, "invalid_request", str(exc.errors()))

    @app.get("/api/candidates")
    def list_candidates(status: str | None = None, reviewer: str | None = None):
        return [candidate_payload(c) for c in store.candidates(status, reviewer)]

    @app.get("/api/candidates/{candidate_id}")
    def get_candidate(candidate_id: str):
        try:
            return candidate_payload(store.get(candidate_id))
        except UnknownCandidate as exc:
            return error_response(404, "unknown_candidate", str(exc))

    @app.post("/api/candidates/{candidate_id}/decisions")
    async def post_decision(candidate_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return error_response(422, "invalid_request", "body must be a JSON object")
        if not isinstance(body, dict):
            return error_response(422, "invalid_request", "body must be a JSON object")
        decision = Decision(
            candidate_id=candidate_id,
            reviewer=str(body.get("reviewer", "")),
            action=str(body.get("action", "")),
            revised_utterance=body.get("revised_utterance"),
        )
        try:
            cand = store.record_decision(decision)
        except InvalidDecision as exc:
            return error_response(422, "invalid_decision", str(exc))
        except UnknownCandidate as exc:
            return error_response(404, "unknown_candidate", str(exc))
        return candidate_payload(cand)

    @app.get("/api/stats")
    def get_stats():
        return store.stats()

    @app.get("/api/export")
    def get_export():
        return export_benchmark(store)

    if assets_dir and Path(assets_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(assets_dir), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index():
            return (
                "<!doctype html><title>cgforge review</title>"
                "<p>Review service is running. The API lives under /api/. "
                "Build the review UI and pass --assets to serve it here.</p>"
            )

    return app


def serve(store_dir, port: int = 8765, assets_dir=None, host: str = "127.0.0.1"):
    """Run the review service until interrupted."""
    import uvicorn

    store = ReviewStore(store_dir)
    app = build_app(store, assets_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
