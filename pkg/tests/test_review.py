import json
import random

import pytest
from fastapi.testclient import TestClient

from cgforge.dataset_io import Candidate, CandidateBase, candidate_id
from cgforge.errors import InvalidDecision, UnknownCandidate
from cgforge.review import (
    Decision,
    ReviewStore,
    build_app,
    export_benchmark,
    highlight_segments,
    resolve_status,
)


def _candidate(n: int, db_id: str = "airline_mini") -> Candidate:
    prev = "SELECT Airline FROM AIRLINES"
    new = f"SELECT Airline FROM AIRLINES LIMIT {n + 1}"
    return Candidate(
        id=candidate_id(db_id, [f"question {n}"], prev, new),
        db_id=db_id,
        base=CandidateBase(f"i{n:05d}_{db_id}", 1, [f"question {n}"], prev),
        new_sql=new,
        base_template_hash="b" * 16,
        modification_template_hash="m" * 16,
        draft_utterance=f"Just show the top {n + 1}.",
    )


def _d(action, reviewer="r1", text=None):
    return Decision("x", reviewer, action, text, timestamp=f"t-{reviewer}-{action}")


class TestResolveStatus:
    CAND = _candidate(0)

    def test_no_decisions_pending(self):
        assert resolve_status(self.CAND, []) == ("pending", None)

    def test_single_accept_still_pending(self):
        assert resolve_status(self.CAND, [_d("accept")])[0] == "pending"

    def test_single_reject_still_pending(self):
        assert resolve_status(self.CAND, [_d("reject")])[0] == "pending"

    def test_double_accept(self):
        status, final = resolve_status(self.CAND, [_d("accept", "r1"), _d("accept", "r2")])
        assert status == "accepted"
        assert final == self.CAND.draft_utterance

    def test_accept_reject_disputed(self):
        status, _ = resolve_status(self.CAND, [_d("accept", "r1"), _d("reject", "r2")])
        assert status == "disputed"

    def test_majority_breaks_dispute(self):
        decisions = [_d("accept", "r1"), _d("reject", "r2"), _d("accept", "r3")]
        assert resolve_status(self.CAND, decisions)[0] == "accepted"
        decisions = [_d("accept", "r1"), _d("reject", "r2"), _d("reject", "r3")]
        assert resolve_status(self.CAND, decisions)[0] == "rejected"

    def test_double_reject(self):
        assert resolve_status(self.CAND, [_d("reject", "r1"), _d("reject", "r2")])[0] == "rejected"

    def test_revise_plus_accept(self):
        decisions = [_d("revise", "r1", "which are in the USA?"), _d("accept", "r2")]
        status, final = resolve_status(self.CAND, decisions)
        assert status == "revised"
        assert final == "which are in the USA?"

    def test_latest_revision_wins(self):
        decisions = [
            _d("revise", "r1", "first wording"),
            _d("revise", "r2", "second wording"),
        ]
        status, final = resolve_status(self.CAND, decisions)
        assert status == "revised" and final == "second wording"

    def test_later_entry_supersedes_same_reviewer(self):
        decisions = [_d("reject", "r1"), _d("accept", "r1"), _d("accept", "r2")]
        assert resolve_status(self.CAND, decisions)[0] == "accepted"


class TestStore:
    def test_enqueue_idempotent(self, tmp_path):
        store = ReviewStore(tmp_path / "store")
        cands = [_candidate(i) for i in range(10)]
        first = store.enqueue(cands)
        assert first["added"] == 10
        assert store.stats()["pending"] == 10
        second = store.enqueue(cands)
        assert second["added"] == 0 and second["existing"] == 10
        assert store.stats()["total"] == 10

    def test_reenqueue_preserves_decisions(self, tmp_path):
        store = ReviewStore(tmp_path / "store")
        cands = [_candidate(i) for i in range(3)]
        store.enqueue(cands)
        store.record_decision(Decision(cands[0].id, "r1", "accept"))
        store.record_decision(Decision(cands[0].id, "r2", "accept"))
        store.enqueue(cands)
        assert store.get(cands[0].id).status == "accepted"

    def test_invalid_candidates_reported(self, tmp_path):
        store = ReviewStore(tmp_path / "store")
        bad = _candidate(0)
        bad.new_sql = ""
        result = store.enqueue([bad, _candidate(1)])
        assert result["added"] == 1
        assert len(result["invalid"]) == 1

    def test_unknown_candidate(self, tmp_path):
        store = ReviewStore(tmp_path / "store")
        with pytest.raises(UnknownCandidate):
            store.record_decision(Decision("missing", "r1", "accept"))

    def test_invalid_decision(self, tmp_path):
        store = ReviewStore(tmp_path / "store")
        store.enqueue([_candidate(0)])
        cid = store.candidates()[0].id
        with pytest.raises(InvalidDecision):
            store.record_decision(Decision(cid, "r1", "revise", ""))
        with pytest.raises(InvalidDecision):
            store.record_decision(Decision(cid, "r1", "promote"))
        with pytest.raises(InvalidDecision):
            store.record_decision(Decision(cid, "", "accept"))

    def test_statuses_survive_reload(self, tmp_path):
        root = tmp_path / "store"
        store = ReviewStore(root)
        cands = [_candidate(i) for i in range(4)]
        store.enqueue(cands)
        store.record_decision(Decision(cands[0].id, "r1", "accept"))
        store.record_decision(Decision(cands[0].id, "r2", "accept"))
        store.record_decision(Decision(cands[1].id, "r1", "reject"))
        store.record_decision(Decision(cands[1].id, "r2", "accept"))
        reloaded = ReviewStore(root)
        assert reloaded.get(cands[0].id).status == "accepted"
        assert reloaded.get(cands[1].id).status == "disputed"
        assert reloaded.stats() == store.stats()

    def test_randomized_replay(self, tmp_path):
        rng = random.Random(1234)
        root = tmp_path / "store"
        store = ReviewStore(root)
        cands = [_candidate(i) for i in range(60)]
        store.enqueue(cands)
        reviewers = ["r1", "r2", "r3", "r4", "r5"]
        for k in range(500):
            cand = rng.choice(cands)
            action = rng.choice(["accept", "reject", "revise"])
            text = f"rewrite {k}" if action == "revise" else None
            store.record_decision(Decision(cand.id, rng.choice(reviewers), action, text))
        live = {c.id: c.status for c in store.candidates()}
        replayed = ReviewStore(root)
        assert {c.id: c.status for c in replayed.candidates()} == live
        assert replayed.replay_statuses() == live
        counts = replayed.stats()
        assert sum(v for k, v in counts.items() if k != "total") == counts["total"] == 60

    def test_export_contains_exactly_accepted_and_revised(self, tmp_path):
        store = ReviewStore(tmp_path / "store")
        cands = [_candidate(i) for i in range(5)]
        store.enqueue(cands)
        store.record_decision(Decision(cands[0].id, "r1", "accept"))
        store.record_decision(Decision(cands[0].id, "r2", "accept"))
        store.record_decision(Decision(cands[1].id, "r1", "revise", "better wording"))
        store.record_decision(Decision(cands[1].id, "r2", "accept"))
        store.record_decision(Decision(cands[2].id, "r1", "reject"))
        store.record_decision(Decision(cands[2].id, "r2", "reject"))
        records = export_benchmark(store)
        ids = {r["candidate_id"] for r in records}
        assert ids == {cands[0].id, cands[1].id}
        revised = next(r for r in records if r["candidate_id"] == cands[1].id)
        assert revised["interaction"][-1]["utterance"] == "better wording"
        assert revised["interaction"][-1]["query"] == cands[1].new_sql
        # base prefix turns precede the new final turn
        assert [t["utterance"] for t in revised["interaction"][:-1]] == cands[1].base.utterances

    def test_empty_queue_exports_empty(self, tmp_path):
        assert export_benchmark(ReviewStore(tmp_path / "store")) == []


class TestHighlight:
    def test_segments_mark_the_new_clause(self):
        segments = highlight_segments(
            "SELECT Airline FROM AIRLINES",
            "SELECT Airline FROM AIRLINES WHERE Country = 'USA'",
        )
        assert "".join(s["text"] for s in segments if s["changed"]).startswith("WHERE")
        rebuilt = " ".join(s["text"] for s in segments)
        assert rebuilt == "SELECT Airline FROM AIRLINES WHERE Country = 'USA'"


@pytest.fixture
def client(tmp_path):
    store = ReviewStore(tmp_path / "store")
    store.enqueue([_candidate(i) for i in range(5)])
    app = build_app(store)
    return TestClient(app), store


class TestHttpApi:
    def test_list_by_status(self, client):
        http, store = client
        body = http.get("/api/candidates", params={"status": "pending"}).json()
        assert len(body) == 5
        assert all(c["status"] == "pending" for c in body)
        assert all("highlight" in c for c in body)

    def test_get_by_id_and_404(self, client):
        http, store = client
        cid = store.candidates()[0].id
        assert http.get(f"/api/candidates/{cid}").json()["id"] == cid
        resp = http.get("/api/candidates/nope")
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "unknown_candidate"

    def test_post_decision_flow(self, client):
        http, store = client
        cid = store.candidates()[0].id
        r1 = http.post(
            f"/api/candidates/{cid}/decisions", json={"reviewer": "r1", "action": "accept"}
        )
        assert r1.status_code == 200 and r1.json()["status"] == "pending"
        r2 = http.post(
            f"/api/candidates/{cid}/decisions", json={"reviewer": "r2", "action": "accept"}
        )
        assert r2.json()["status"] == "accepted"

    def test_empty_revision_is_422(self, client):
        http, store = client
        cid = store.candidates()[0].id
        resp = http.post(
            f"/api/candidates/{cid}/decisions",
            json={"reviewer": "r1", "action": "revise", "revised_utterance": "  "},
        )
        assert resp.status_code == 422
        assert resp.json()["error"]["code"] == "invalid_decision"

    def test_stats_sum_to_total(self, client):
        http, store = client
        cid = store.candidates()[0].id
        http.post(f"/api/candidates/{cid}/decisions", json={"reviewer": "r1", "action": "reject"})
        http.post(f"/api/candidates/{cid}/decisions", json={"reviewer": "r2", "action": "reject"})
        stats = http.get("/api/stats").json()
        assert sum(v for k, v in stats.items() if k != "total") == stats["total"] == 5
        assert stats["rejected"] == 1

    def test_export_endpoint(self, client):
        http, store = client
        cid = store.candidates()[0].id
        http.post(f"/api/candidates/{cid}/decisions", json={"reviewer": "r1", "action": "accept"})
        http.post(f"/api/candidates/{cid}/decisions", json={"reviewer": "r2", "action": "accept"})
        body = http.get("/api/export").json()
        assert len(body) == 1 and body[0]["candidate_id"] == cid

    def test_decision_log_is_durable_jsonl(self, client):
        http, store = client
        cid = store.candidates()[0].id
        http.post(f"/api/candidates/{cid}/decisions", json={"reviewer": "r1", "action": "accept"})
        lines = store.decisions_path.read_text().strip().splitlines()
        assert len(lines) == 1
        rec = json.loads(lines[0])
        assert rec["candidate_id"] == cid and rec["action"] == "accept"
