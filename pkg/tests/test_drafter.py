import stat
import sys

import pytest

from cgforge.drafter import DraftRequest, draft_external, draft_rule_based
from cgforge.errors import ExternalFailure, UnrealizableEdit
from cgforge.patterns import Edit, Modification, diff_asts
from cgforge.sql_core import parse_sql


def _request(schema, prev_sql, cur_sql, prev_utt="previous question"):
    mod = diff_asts(parse_sql(prev_sql, schema), parse_sql(cur_sql, schema))
    return DraftRequest(modification=mod, prev_sql=prev_sql, prev_utterance=prev_utt)


class TestRuleBased:
    def test_where_add(self, airline):
        req = _request(
            airline,
            "SELECT Airline FROM AIRLINES",
            "SELECT Airline FROM AIRLINES WHERE Country = 'USA'",
        )
        assert draft_rule_based(req, airline) == "Only show the ones where country is USA."

    def test_order_by_replace(self, airline):
        req = _request(
            airline,
            "SELECT Airline FROM AIRLINES ORDER BY Country ASC",
            "SELECT Airline FROM AIRLINES ORDER BY Airline DESC",
        )
        assert draft_rule_based(req, airline) == (
            "Instead, sort the results by airline name in descending order."
        )

    def test_limit_add(self, airline):
        req = _request(
            airline,
            "SELECT Airline FROM AIRLINES",
            "SELECT Airline FROM AIRLINES LIMIT 5",
        )
        assert draft_rule_based(req, airline) == "Just show the top 5."

    def test_multiple_edits_joined(self, airline):
        req = _request(
            airline,
            "SELECT Airline FROM AIRLINES",
            "SELECT Airline FROM AIRLINES WHERE Country = 'USA' LIMIT 5",
        )
        text = draft_rule_based(req, airline)
        assert " and also " in text
        assert text.endswith(".")
        assert text.count(".") == 1

    def test_purity(self, airline):
        req = _request(
            airline,
            "SELECT Airline FROM AIRLINES",
            "SELECT count(*) FROM AIRLINES",
        )
        assert draft_rule_based(req, airline) == draft_rule_based(req, airline)

    def test_every_clause_kind_realizes(self, airline, tennis, shop, catalog):
        cases = [
            (airline, "SELECT Airline FROM AIRLINES",
             "SELECT count(*) FROM AIRLINES"),
            (airline, "SELECT Airline FROM AIRLINES WHERE Country = 'USA'",
             "SELECT Airline FROM AIRLINES"),
            (airline, "SELECT Country FROM AIRLINES",
             "SELECT Country FROM AIRLINES UNION SELECT Country FROM AIRPORTS"),
            (airline, "SELECT count(*) FROM FLIGHTS",
             "SELECT count(*) FROM FLIGHTS JOIN AIRLINES ON FLIGHTS.Airline = AIRLINES.uid"),
            (tennis, "SELECT loser_entry, count(*) FROM matches GROUP BY loser_entry",
             "SELECT loser_entry, count(*) FROM matches GROUP BY loser_entry"
             " HAVING count(*) >= 5"),
            (tennis, "SELECT winner_name, winner_age FROM matches",
             "SELECT winner_name, winner_age FROM matches ORDER BY winner_age DESC LIMIT 3"),
            (shop, "SELECT City, avg(Score) FROM SHOPS GROUP BY City",
             "SELECT City, avg(Score) FROM SHOPS"),
            (shop, "SELECT Name FROM SHOPS WHERE Score > 30",
             "SELECT Name FROM SHOPS WHERE Score BETWEEN 10 AND 20"),
        ]
        for schema, prev, cur in cases:
            req = _request(schema, prev, cur)
            text = draft_rule_based(req, schema)
            assert text and text.endswith(".")

    def test_unrealizable_edit_signals_gap(self, airline):
        bogus = Modification(edits=(Edit("select", "rotate", ()),), base_tables=())
        req = DraftRequest(bogus, "SELECT Airline FROM AIRLINES", "q")
        with pytest.raises(UnrealizableEdit):
            draft_rule_based(req, airline)


def _script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(f"#!{sys.executable}\n{body}")
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return path


@pytest.fixture
def sample_request(airline):
    return _request(
        airline,
        "SELECT Airline FROM AIRLINES",
        "SELECT Airline FROM AIRLINES WHERE Country = 'USA'",
    )


class TestExternal:
    def test_echo_stub(self, tmp_path, sample_request):
        script = _script(
            tmp_path,
            "gen.py",
            "import json,sys\n"
            "req = json.load(sys.stdin)\n"
            "assert 'modification' in req and 'prev_sql' in req and 'prev_utterance' in req\n"
            "print(json.dumps({'utterance': '  Fixed draft.  '}))\n",
        )
        assert draft_external(sample_request, [str(script)]) == "Fixed draft."

    def test_timeout(self, tmp_path, sample_request):
        script = _script(tmp_path, "slow.py", "import time\ntime.sleep(5)\n")
        with pytest.raises(ExternalFailure, match="timed out"):
            draft_external(sample_request, [str(script)], timeout=0.3)

    def test_invalid_json(self, tmp_path, sample_request):
        script = _script(tmp_path, "bad.py", "print('not json at all')\n")
        with pytest.raises(ExternalFailure, match="JSON"):
            draft_external(sample_request, [str(script)])

    def test_nonzero_exit(self, tmp_path, sample_request):
        script = _script(tmp_path, "fail.py", "import sys\nsys.exit(3)\n")
        with pytest.raises(ExternalFailure, match="exited 3"):
            draft_external(sample_request, [str(script)])

    def test_missing_utterance_key(self, tmp_path, sample_request):
        script = _script(tmp_path, "empty.py", "print('{}')")
        with pytest.raises(ExternalFailure, match="utterance"):
            draft_external(sample_request, [str(script)])
