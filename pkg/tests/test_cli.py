import json
import os
from pathlib import Path

import pytest

from cgforge import cli

FIXTURES = Path(__file__).parent / "fixtures"


def run_cli(capsys, *argv):
    code = cli.run(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _first_json(text):
    return json.loads(text.strip().splitlines()[0]) if text.strip() else None


def test_unknown_subcommand_exits_1(capsys):
    code, out, err = run_cli(capsys, "frobnicate")
    assert code == 1
    assert "usage" in err.lower()


def test_no_subcommand_exits_1(capsys):
    code, _, err = run_cli(capsys)
    assert code == 1
    assert "usage" in err.lower()


def test_missing_input_file_exits_2(capsys, tmp_path):
    code, _, _ = run_cli(
        capsys,
        "evaluate",
        "--gold", str(tmp_path / "nope.json"),
        "--pred", str(tmp_path / "nope.jsonl"),
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--schema", str(FIXTURES / "tables.json"),
    )
    assert code == 2


def test_filter_summary_on_stdout(capsys, tmp_path):
    out_path = tmp_path / "report.json"
    code, out, err = run_cli(
        capsys,
        "filter",
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(out_path),
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["dependent_count"] == 65
    assert summary["independent_count"] == 57
    assert out_path.exists()
    on_disk = json.loads(out_path.read_text())
    assert on_disk["dependent_count"] == 65
    assert set(on_disk["per_db"]) == {"airline_mini", "tennis_mini", "shop_mini"}


def test_patterns_summary(capsys, tmp_path):
    lib_path = tmp_path / "library.json"
    code, out, _ = run_cli(
        capsys,
        "patterns",
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(lib_path),
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["tallies"]["patterns"] == 63
    assert max(summary["tag_distribution"], key=summary["tag_distribution"].get) == "where"
    assert lib_path.exists()


@pytest.fixture(scope="module")
def library_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("lib") / "library.json"
    code = cli.run(
        [
            "patterns",
            "--train", str(FIXTURES / "dialogues_50.json"),
            "--schema", str(FIXTURES / "tables.json"),
            "--out", str(path),
        ]
    )
    assert code == 0
    return path


def test_recombine_deterministic_bytes(capsys, tmp_path, library_file):
    outputs = []
    for name in ("one.jsonl", "two.jsonl"):
        out_path = tmp_path / name
        code, out, _ = run_cli(
            capsys,
            "recombine",
            "--library", str(library_file),
            "--dev", str(FIXTURES / "eval_gold.json"),
            "--schema", str(FIXTURES / "tables.json"),
            "--out", str(out_path),
            "--seed", "0",
        )
        assert code == 0
        outputs.append(out_path.read_bytes())
    assert outputs[0] == outputs[1]


def test_seed_env_var_overrides_flag(capsys, tmp_path, library_file):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    run_cli(
        capsys, "recombine",
        "--library", str(library_file),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(a), "--seed", "123", "--cap-per-pair", "1",
    )
    os.environ["CGFORGE_SEED"] = "123"
    try:
        run_cli(
            capsys, "recombine",
            "--library", str(library_file),
            "--dev", str(FIXTURES / "eval_gold.json"),
            "--schema", str(FIXTURES / "tables.json"),
            "--out", str(b), "--seed", "999", "--cap-per-pair", "1",
        )
    finally:
        del os.environ["CGFORGE_SEED"]
    assert a.read_bytes() == b.read_bytes()


def test_draft_fills_utterances(capsys, tmp_path, library_file):
    cand_path = tmp_path / "candidates.jsonl"
    run_cli(
        capsys, "recombine",
        "--library", str(library_file),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(cand_path), "--seed", "0", "--cap-per-pair", "1",
    )
    drafted_path = tmp_path / "drafted.jsonl"
    code, out, _ = run_cli(
        capsys, "draft",
        "--candidates", str(cand_path),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(drafted_path),
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["undraftable"] == []
    from cgforge import dataset_io

    drafted = dataset_io.read_candidates_jsonl(drafted_path)
    assert drafted and all(c.draft_utterance for c in drafted)


def test_evaluate_end_to_end(capsys, tmp_path):
    report_path = tmp_path / "report.json"
    code, out, _ = run_cli(
        capsys,
        "evaluate",
        "--gold", str(FIXTURES / "eval_gold.json"),
        "--pred", str(FIXTURES / "eval_predictions.jsonl"),
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(report_path),
    )
    assert code == 0
    rep = json.loads(out)
    assert rep["overall"]["qm"] == 60.0
    assert report_path.exists()


def test_split_tag_summary(capsys, tmp_path):
    out_path = tmp_path / "tags.json"
    code, out, _ = run_cli(
        capsys,
        "split-tag",
        "--gold", str(FIXTURES / "eval_gold.json"),
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(out_path),
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["questions"] == 10
    tags = json.loads(out_path.read_text())["tags"]
    assert len(tags) == 10


def test_stats_csv(capsys, library_file):
    code, out, _ = run_cli(capsys, "stats", "--library", str(library_file), "--format", "csv")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "section,key,value"
    assert any("where" in line for line in lines)


def test_stats_requires_inputs(capsys):
    code, _, _ = run_cli(capsys, "stats")
    assert code == 1


def test_pipeline_end_to_end(capsys, tmp_path):
    out_dir = tmp_path / "out"
    code, out, _ = run_cli(
        capsys,
        "pipeline",
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(out_dir),
        "--seed", "0",
        "--cap-per-pair", "1",
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["filter"]["dependent_count"] == 65
    assert summary["patterns"]["tallies"]["patterns"] == 63
    assert summary["recombine"]["candidates"] == summary["enqueue"]["total"]
    assert summary["palign_pairs"] == 122
    for name in ("filter_report.json", "library.json", "candidates.jsonl", "palign.jsonl"):
        assert (out_dir / name).exists()
    assert (out_dir / "review" / "candidates.jsonl").exists()


def test_pipeline_summary_matches_stage_runs(capsys, tmp_path, library_file):
    out_dir = tmp_path / "pipe"
    code, out, _ = run_cli(
        capsys,
        "pipeline",
        "--train", str(FIXTURES / "dialogues_50.json"),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(out_dir),
        "--seed", "7",
        "--cap-per-pair", "2",
    )
    assert code == 0
    pipe = json.loads(out)
    solo = tmp_path / "solo.jsonl"
    code, out, _ = run_cli(
        capsys,
        "recombine",
        "--library", str(out_dir / "library.json"),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(solo),
        "--seed", "7",
        "--cap-per-pair", "2",
    )
    assert code == 0
    stage = json.loads(out)
    assert stage["candidates"] == pipe["recombine"]["candidates"]


def test_review_apply_and_export(capsys, tmp_path, library_file):
    cand_path = tmp_path / "candidates.jsonl"
    run_cli(
        capsys, "recombine",
        "--library", str(library_file),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(cand_path), "--seed", "0", "--cap-per-pair", "1",
    )
    drafted_path = tmp_path / "drafted.jsonl"
    run_cli(
        capsys, "draft",
        "--candidates", str(cand_path),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(drafted_path),
    )
    from cgforge import dataset_io, review

    store_dir = tmp_path / "store"
    store = review.ReviewStore(store_dir)
    candidates = dataset_io.read_candidates_jsonl(drafted_path)
    store.enqueue(candidates)

    decisions_path = tmp_path / "decisions.jsonl"
    with open(decisions_path, "w") as f:
        for reviewer in ("r1", "r2"):
            f.write(json.dumps({
                "candidate_id": candidates[0].id,
                "reviewer": reviewer,
                "action": "accept",
            }) + "\n")
        f.write(json.dumps({
            "candidate_id": candidates[1].id,
            "reviewer": "r1",
            "action": "revise",
            "revised_utterance": "Rewritten question?",
        }) + "\n")
        f.write(json.dumps({
            "candidate_id": candidates[1].id,
            "reviewer": "r2",
            "action": "accept",
        }) + "\n")
        f.write(json.dumps({
            "candidate_id": "unknown-id",
            "reviewer": "r1",
            "action": "accept",
        }) + "\n")

    code, out, _ = run_cli(
        capsys, "review-apply", "--store", str(store_dir), "--decisions", str(decisions_path)
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["applied"] == 4
    assert len(summary["errors"]) == 1
    assert summary["stats"]["accepted"] == 1 and summary["stats"]["revised"] == 1

    export_path = tmp_path / "benchmark.json"
    code, out, _ = run_cli(capsys, "export", "--store", str(store_dir), "--out", str(export_path))
    assert code == 0
    records = json.loads(export_path.read_text())
    assert len(records) == 2
    # exported benchmark re-loads through the standard dialogue loader
    from cgforge.schema import load_schema_catalog

    catalog = load_schema_catalog(FIXTURES / "tables.json")
    loaded, rejects, _ = dataset_io.load_dialogues(export_path, catalog)
    assert len(loaded) == 2 and not rejects


def test_config_file_fills_missing_flags(capsys, tmp_path, library_file):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"seed": 5, "cap_per_pair": 1}))
    out_path = tmp_path / "c.jsonl"
    code, out, _ = run_cli(
        capsys,
        "--config", str(config),
        "recombine",
        "--library", str(library_file),
        "--dev", str(FIXTURES / "eval_gold.json"),
        "--schema", str(FIXTURES / "tables.json"),
        "--out", str(out_path),
    )
    assert code == 0
    assert json.loads(out)["seed"] == 5
