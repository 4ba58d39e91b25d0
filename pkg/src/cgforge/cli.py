"""Command line entry point wiring the pipeline stages.

Machine-readable JSON summaries go to stdout; the human log goes to
stderr, so CI can assert on counts without scraping log lines. Exit codes:
0 success, 1 validation/config error, 2 I/O error, 3 internal invariant
breach. The CGFORGE_SEED environment variable overrides --seed; a --config
JSON file fills in values not given as flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

from . import dataset_io, drafter, evaluator, linker, patterns, recombiner, review, sql_core
from .errors import CgforgeError, FormatError, ParseError, StoreError, UnknownDatabase
from .schema import load_schema_catalog

log = logging.getLogger("cgforge")

SUBCOMMANDS = (
    "filter",
    "patterns",
    "recombine",
    "draft",
    "review-serve",
    "review-apply",
    "export",
    "split-tag",
    "evaluate",
    "stats",
    "pipeline",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(1, message)


class SystemExit2(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _emit(summary: dict) -> None:
    sys.stdout.write(json.dumps(summary, ensure_ascii=False, sort_keys=True) + "\n")


def _load_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise FormatError("config file must be a JSON object")
    return data


def _merge_config(args, config: dict, keys: list[str]) -> None:
    """Config fills argument values the command line left at None."""
    for key in keys:
        if getattr(args, key, None) is None and key in config:
            setattr(args, key, config[key])


def _seed_of(args) -> int:
    env = os.environ.get("CGFORGE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise SystemExit2(1, f"CGFORGE_SEED must be an integer, got {env!r}") from exc
    return args.seed if getattr(args, "seed", None) is not None else 0


def _load_inputs(schema_path, dialogue_path):
    catalog = load_schema_catalog(schema_path)
    dialogues, rejects, skipped = dataset_io.load_dialogues(dialogue_path, catalog)
    if rejects:
        log.info("%d record(s) rejected while loading %s", len(rejects), dialogue_path)
    if skipped:
        log.info("%d turn(s) without a gold query skipped in %s", skipped, dialogue_path)
    return catalog, dialogues, rejects, skipped


def _rules_from(args):
    if getattr(args, "rules", None):
        return recombiner.load_rules(args.rules)
    return recombiner.default_rules()


# ---------------------------------------------------------------------------
# Stage implementations (shared by single commands and `pipeline`)
# ---------------------------------------------------------------------------


def _stage_filter(catalog, dialogues, out_path=None):
    dependent, independent, rep = linker.filter_dataset(dialogues, catalog)
    summary = rep.as_dict()
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
    return dependent, independent, summary


def _stage_patterns(catalog, dependent, out_path=None, corpus=None):
    library, tallies = patterns.collect_patterns(dependent, catalog, corpus=corpus)
    if out_path:
        patterns.save_library(library, out_path)
    summary = {
        "templates": len(library.templates),
        "combos_seen": len(library.combos_seen),
        "base_templates": len(library.base_hashes),
        "tallies": tallies,
        "tag_distribution": patterns.tag_distribution(library),
    }
    return library, summary


def _stage_recombine(library, dev_dialogues, catalog, seed, cap_per_pair, rules, out_path=None):
    candidates, rep = recombiner.generate_candidates(
        library, dev_dialogues, catalog, seed=seed, cap_per_pair=cap_per_pair, rules=rules
    )
    if out_path:
        dataset_io.write_candidates_jsonl(candidates, out_path)
    return candidates, rep.as_dict()


def _stage_draft(candidates, catalog, generator="rule", command=None, timeout=30.0):
    drafted = 0
    fallbacks = 0
    failures = []
    for cand in candidates:
        schema = catalog[cand.db_id]
        prev_ast = sql_core.parse_sql(cand.base.prev_sql, schema)
        new_ast = sql_core.parse_sql(cand.new_sql, schema)
        outcome = patterns.diff_asts(prev_ast, new_ast, max_clauses=8)
        if isinstance(outcome, patterns.NotIncremental):
            failures.append({"id": cand.id, "reason": outcome.reason})
            continue
        req = drafter.DraftRequest(
            modification=outcome,
            prev_sql=cand.base.prev_sql,
            prev_utterance=cand.base.utterances[-1] if cand.base.utterances else "",
        )
        if generator == "external":
            try:
                cand.draft_utterance = drafter.draft_external(req, command, timeout)
            except CgforgeError as exc:
                log.warning("external generator failed for %s: %s", cand.id, exc)
                cand.draft_utterance = drafter.draft_rule_based(req, schema)
                fallbacks += 1
        else:
            cand.draft_utterance = drafter.draft_rule_based(req, schema)
        drafted += 1
    return {"drafted": drafted, "external_fallbacks": fallbacks, "undraftable": failures}


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_filter(args):
    catalog, dialogues, rejects, skipped = _load_inputs(args.schema, args.train)
    _, _, summary = _stage_filter(catalog, dialogues, args.out)
    summary["rejected_records"] = len(rejects)
    summary["skipped_turns"] = skipped
    _emit(summary)
    return 0


def cmd_patterns(args):
    catalog, dialogues, _, _ = _load_inputs(args.schema, args.train)
    dependent, _, _ = _stage_filter(catalog, dialogues)
    _, summary = _stage_patterns(catalog, dependent, args.out, corpus=dialogues)
    _emit(summary)
    return 0


def cmd_recombine(args):
    catalog = load_schema_catalog(args.schema)
    library = patterns.load_library(args.library)
    dev, _, _ = dataset_io.load_dialogues(args.dev, catalog)
    seed = _seed_of(args)
    _, summary = _stage_recombine(
        library, dev, catalog, seed, args.cap_per_pair, _rules_from(args), args.out
    )
    summary["seed"] = seed
    _emit(summary)
    return 0


def cmd_draft(args):
    catalog = load_schema_catalog(args.schema)
    candidates = dataset_io.read_candidates_jsonl(args.candidates)
    command = args.command.split() if args.command else None
    if args.generator == "external" and not command:
        raise SystemExit2(1, "--generator external requires --command")
    summary = _stage_draft(candidates, catalog, args.generator, command, args.timeout)
    dataset_io.write_candidates_jsonl(candidates, args.out)
    _emit(summary)
    return 0


def cmd_review_serve(args):
    review.serve(args.store, port=args.port, assets_dir=args.assets, host=args.host)
    return 0


def cmd_review_apply(args):
    store = review.ReviewStore(args.store)
    applied, errors = 0, []
    with open(args.decisions, encoding="utf-8") as f:
        for n, line in enumerate(f):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                store.record_decision(review.decision_from_dict(rec))
                applied += 1
            except CgforgeError as exc:
                errors.append({"line": n, "error": str(exc)})
    _emit({"applied": applied, "errors": errors, "stats": store.stats()})
    return 0


def cmd_export(args):
    store = review.ReviewStore(args.store)
    records = review.export_benchmark(store)
    dataset_io.write_benchmark(records, args.out)
    _emit({"exported": len(records), "out": str(args.out)})
    return 0


def cmd_split_tag(args):
    catalog = load_schema_catalog(args.schema)
    train, _, _ = dataset_io.load_dialogues(args.train, catalog)
    gold, _, _ = dataset_io.load_dialogues(args.gold, catalog)
    dependent, _, _ = linker.filter_dataset(train, catalog)
    library, _ = patterns.collect_patterns(dependent, catalog, corpus=train)
    questions = evaluator.enumerate_questions(gold)
    tags = evaluator.tag_splits(questions, library, catalog)
    out = {qid: tag.tag for qid, tag in sorted(tags.items())}
    summary = evaluator.table1_stats(questions, library, catalog)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"summary": summary, "tags": out}, f, indent=2, sort_keys=True)
            f.write("\n")
    _emit(summary)
    return 0


def cmd_evaluate(args):
    catalog = load_schema_catalog(args.schema)
    train, _, _ = dataset_io.load_dialogues(args.train, catalog)
    gold, _, _ = dataset_io.load_dialogues(args.gold, catalog)
    predictions = dataset_io.read_predictions_jsonl(args.pred)
    dependent, _, _ = linker.filter_dataset(train, catalog)
    library, _ = patterns.collect_patterns(dependent, catalog, corpus=train)
    questions = evaluator.enumerate_questions(gold)
    rep = evaluator.report(predictions, questions, library, catalog)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(rep, f, indent=2, sort_keys=True)
            f.write("\n")
    _emit(rep)
    return 0


def cmd_stats(args):
    out: dict = {}
    if args.library:
        library = patterns.load_library(args.library)
        out["tag_distribution"] = patterns.tag_distribution(library)
        out["tag_distribution_by_support"] = patterns.tag_distribution(library, by_support=True)
        out["templates"] = len(library.templates)
    if args.gold and args.train:
        catalog = load_schema_catalog(args.schema)
        train, _, _ = dataset_io.load_dialogues(args.train, catalog)
        gold, _, _ = dataset_io.load_dialogues(args.gold, catalog)
        dependent, _, _ = linker.filter_dataset(train, catalog)
        library, _ = patterns.collect_patterns(dependent, catalog, corpus=train)
        questions = evaluator.enumerate_questions(gold)
        out["table1"] = evaluator.table1_stats(questions, library, catalog)
    if not out:
        raise SystemExit2(1, "stats needs --library and/or (--gold with --train and --schema)")
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["section", "key", "value"])
        for section, data in out.items():
            if isinstance(data, dict):
                for k, v in data.items():
                    writer.writerow([section, k, v])
            else:
                writer.writerow([section, "", data])
        sys.stdout.write(buf.getvalue())
    else:
        _emit(out)
    return 0


def cmd_pipeline(args):
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    seed = _seed_of(args)
    catalog, train, rejects, skipped = _load_inputs(args.schema, args.train)
    dev, dev_rejects, _ = dataset_io.load_dialogues(args.dev, catalog)

    dependent, _, filter_summary = _stage_filter(
        catalog, train, os.path.join(out_dir, "filter_report.json")
    )
    library, pattern_summary = _stage_patterns(
        catalog, dependent, os.path.join(out_dir, "library.json"), corpus=train
    )
    candidates, recombine_summary = _stage_recombine(
        library, dev, catalog, seed, args.cap_per_pair, _rules_from(args),
        os.path.join(out_dir, "candidates.jsonl"),
    )
    command = args.command.split() if args.command else None
    draft_summary = _stage_draft(candidates, catalog, args.generator, command, args.timeout)
    dataset_io.write_candidates_jsonl(candidates, os.path.join(out_dir, "candidates.jsonl"))
    store = review.ReviewStore(os.path.join(out_dir, "review"))
    enqueue_summary = store.enqueue(candidates)

    palign = dataset_io.export_palign_pairs(train)
    dataset_io.write_palign_jsonl(palign, os.path.join(out_dir, "palign.jsonl"))

    _emit(
        {
            "seed": seed,
            "filter": filter_summary,
            "patterns": pattern_summary,
            "recombine": recombine_summary,
            "draft": draft_summary,
            "enqueue": enqueue_summary,
            "palign_pairs": len(palign),
            "rejected_records": len(rejects) + len(dev_rejects),
            "skipped_turns": skipped,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="cgforge", description=__doc__)
    p.add_argument("--config", help="JSON config file; flags win over config values")
    sub = p.add_subparsers(dest="subcommand")

    def add(name, fn, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("filter", cmd_filter, help="partition turns into context-dependent/independent")
    sp.add_argument("--train", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out")

    sp = add("patterns", cmd_patterns, help="extract the modification template library")
    sp.add_argument("--train", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out")

    sp = add("recombine", cmd_recombine, help="recombine templates with development turns")
    sp.add_argument("--library", required=True)
    sp.add_argument("--dev", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--cap-per-pair", type=int, default=3)
    sp.add_argument("--rules")

    sp = add("draft", cmd_draft, help="fill in draft utterances")
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--generator", choices=("rule", "external"), default="rule")
    sp.add_argument("--command")
    sp.add_argument("--timeout", type=float, default=30.0)

    sp = add("review-serve", cmd_review_serve, help="run the review HTTP service")
    sp.add_argument("--store", required=True)
    sp.add_argument("--port", type=int, default=8765)
    sp.add_argument("--assets")
    sp.add_argument("--host", default="127.0.0.1")

    sp = add("review-apply", cmd_review_apply, help="apply a decisions file offline")
    sp.add_argument("--store", required=True)
    sp.add_argument("--decisions", required=True)

    sp = add("export", cmd_export, help="export accepted/revised candidates as a benchmark")
    sp.add_argument("--store", required=True)
    sp.add_argument("--out", required=True)

    sp = add("split-tag", cmd_split_tag, help="tag benchmark questions CG/NonCG/other")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out")

    sp = add("evaluate", cmd_evaluate, help="score predictions with exact set matching")
    sp.add_argument("--gold", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out")

    sp = add("stats", cmd_stats, help="benchmark statistics tables")
    sp.add_argument("--library")
    sp.add_argument("--gold")
    sp.add_argument("--train")
    sp.add_argument("--schema")
    sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = add("pipeline", cmd_pipeline, help="filter -> patterns -> recombine -> draft -> enqueue")
    sp.add_argument("--train", required=True)
    sp.add_argument("--dev", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--cap-per-pair", type=int, default=3)
    sp.add_argument("--rules")
    sp.add_argument("--generator", choices=("rule", "external"), default="rule")
    sp.add_argument("--command")
    sp.add_argument("--timeout", type=float, default=30.0)

    return p


def run(argv: list[str]) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "subcommand", None):
            parser.print_usage(sys.stderr)
            return 1
        if args.config:
            config = _load_config(args.config)
            keys = [k for k in vars(args) if k not in ("fn", "subcommand", "config")]
            _merge_config(args, config, keys)
        return args.fn(args)
    except SystemExit2 as exc:
        log.error(str(exc))
        return exc.code
    except (FileNotFoundError, IsADirectoryError, PermissionError, StoreError) as exc:
        log.error(str(exc))
        return 2
    except (FormatError, ParseError, UnknownDatabase, json.JSONDecodeError, KeyError) as exc:
        log.error(str(exc))
        return 1
    except CgforgeError as exc:
        log.error("internal invariant breach: %s", exc)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        log.error("internal error: %s", exc)
        return 3


def main() -> None:
    raise SystemExit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
