"""Command-line entry point: generate, prepare, train, evaluate, rank.

Exit codes: 0 ok, 2 bad config, 3 malformed or missing input, 4 empty split,
5 missing model artifact, 6 plan that cannot be featurized.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .datapipe import TooFewFlights
from .evaluation import (
    evaluate_model,
    save_report,
    write_confusion_csv,
    write_correlation_csv,
    write_error_trace_csv,
)
from .handover_atlas import AtlasQuery, MalformedAtlasFile
from .knn_model import TooFewPoints, build_index, load_index, predict_knn, save_index
from .neural.checkpoint import Checkpoint, CorruptCheckpoint, VersionMismatch, load_checkpoint, save_checkpoint
from .neural.train import EmptySplit, TrainConfig, predict_scores, train, write_log
from .performance_grid import AircraftHistory
from .pipeline import load_bundle, prepare_bundle, write_bundle
from .planning import PlanError, featurize_plan, load_plans, rank_plans
from .records import MalformedRecord, read_records
from .rule_based import EmptyTraining, load_table, predict_rule, save_table, table_from_grid
from .synthgen import ConfigError, ScenarioConfig, generate_scenario, load_beams, load_config, read_events, write_scenario

log = logging.getLogger("flightperf")

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_EMPTY = 4
EXIT_ARTIFACT = 5
EXIT_PLAN = 6

ARTIFACTS = {"lstm": "checkpoint.json", "knn": "knn_index.json", "rule": "rule_table.json"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ commands

def cmd_generate(args) -> int:
    try:
        config = load_config(args.config) if args.config else ScenarioConfig()
        if args.seed is not None:
            config = ScenarioConfig.from_json({**config.to_json(), "seed": args.seed})
    except (ConfigError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"config error: {exc}") from None
    scenario = generate_scenario(config)
    write_scenario(scenario, args.out)
    print(f"flights {scenario.n_flights}  records {len(scenario.records)}  "
          f"handover events {len(scenario.events)}  beams {len(scenario.beams)}  -> {args.out}")
    return 0


def cmd_prepare(args) -> int:
    data = Path(args.data)
    records_path = Path(args.records) if args.records else data / "records.jsonl"
    events_path = Path(args.events) if args.events else data / "events.jsonl"
    beams_path = data / "beams.json"
    for p in (records_path, events_path):
        if not p.is_file():
            raise CliError(EXIT_INPUT, f"missing input file {p}")
    try:
        records = read_records(records_path)
        events = read_events(events_path)
        anchors = {b.beam_id: b.center for b in load_beams(beams_path)} if beams_path.is_file() else None
    except (MalformedRecord, ValueError, KeyError) as exc:
        raise CliError(EXIT_INPUT, f"malformed input: {exc}") from None
    try:
        bundle = prepare_bundle(records, events, seed=args.seed, cell_radius_km=args.cell_radius_km, anchors=anchors)
    except TooFewFlights as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from None
    write_bundle(bundle, args.out)
    counts = {k: len(v) for k, v in bundle.split_ids.items()}
    print(f"train {counts['train']}  val {counts['val']}  test {counts['test']}  "
          f"atlas regions {sum(len(r) for r in bundle.atlas.partitions.values())}  "
          f"grid cells {len(bundle.grid.cells)}  -> {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    try:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.max_epochs is not None:
            doc["max_epochs"] = args.max_epochs
        return TrainConfig.from_json(doc)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"train config error: {exc}") from None


def _load_bundle(path) -> object:
    try:
        return load_bundle(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"bundle incomplete: {exc}") from None
    except (MalformedAtlasFile, MalformedRecord, ValueError, KeyError) as exc:
        raise CliError(EXIT_INPUT, f"bundle malformed: {exc}") from None


def cmd_train(args) -> int:
    bundle = _load_bundle(args.bundle)
    out = Path(args.bundle)
    try:
        if args.model == "lstm":
            config = _train_config(args)
            result = train(bundle.sequences["train"], bundle.sequences["val"], config)
            save_checkpoint(Checkpoint(result.params, config, bundle.normalization, bundle.vocab,
                                       result.weights, result.best_epoch), out / ARTIFACTS["lstm"])
            write_log(result.log, out / "train_log.csv")
            print(f"epochs {len(result.log)}  best epoch {result.best_epoch}  "
                  f"best val loss {result.best_val_loss:.6f}")
        elif args.model == "knn":
            index = build_index(bundle.sequences["train"])
            save_index(index, out / ARTIFACTS["knn"])
            print(f"knn index of {index.size} points")
        else:
            table = table_from_grid(bundle.grid)
            save_table(table, out / ARTIFACTS["rule"])
            print(f"rule table of {len(table.lookup)} cells, global mean {table.global_mean:.4f}")
    except (EmptySplit, TooFewPoints, EmptyTraining) as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from None
    return 0


def _predictor(bundle, model: str, bundle_dir: Path):
    path = bundle_dir / ARTIFACTS[model]
    if not path.is_file():
        raise CliError(EXIT_ARTIFACT, f"no {model} artifact at {path}; run `train --model {model}` first")
    try:
        if model == "lstm":
            ckpt = load_checkpoint(path)
            return lambda seqs: predict_scores(ckpt.params, seqs)
        if model == "knn":
            index = load_index(path)
            return lambda seqs: predict_knn(index, seqs)
        table = load_table(path)
    except (CorruptCheckpoint, VersionMismatch, ValueError, KeyError) as exc:
        raise CliError(EXIT_ARTIFACT, f"unusable {model} artifact: {exc}") from None
    by_id = {recs[0].flight_id: recs for recs in bundle.test_records}
    return lambda seqs: predict_rule(table, [by_id[s.flight_id] for s in seqs])


def cmd_evaluate(args) -> int:
    bundle_dir = Path(args.bundle)
    bundle = _load_bundle(bundle_dir)
    predictor = _predictor(bundle, args.model, bundle_dir)
    test = bundle.sequences["test"]
    report, preds = evaluate_model(args.model, predictor, test, k=args.k)
    out = Path(args.out) if args.out else bundle_dir / f"report_{args.model}.json"
    save_report(report, out)
    stem = out.with_suffix("")
    write_confusion_csv(report, f"{stem}_confusion.csv")
    write_correlation_csv(report, f"{stem}_correlation.csv")
    positions = {recs[0].flight_id: [(r.position.latitude, r.position.longitude) for r in recs]
                 for recs in bundle.test_records}
    write_error_trace_csv(test, preds, f"{stem}_errors.csv", positions)
    print(f"{args.model}: precision {report.precision:.2f}  recall {report.recall:.2f}  f1 {report.f1:.2f}  "
          f"accuracy {report.accuracy:.2f}  rmse {report.rmse:.4f}  within-{args.k} {report.within_k_rate:.2f}  "
          f"inference {report.timing['inference_seconds']:.3f}s")
    return 0


def cmd_rank(args) -> int:
    bundle_dir = Path(args.bundle)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else bundle_dir / ARTIFACTS["lstm"]
    if not ckpt_path.is_file():
        raise CliError(EXIT_ARTIFACT, f"no checkpoint at {ckpt_path}")
    try:
        ckpt = load_checkpoint(ckpt_path)
    except (CorruptCheckpoint, VersionMismatch) as exc:
        raise CliError(EXIT_ARTIFACT, str(exc)) from None
    bundle = _load_bundle(bundle_dir)
    try:
        plans = load_plans(args.plans)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"plans file: {exc}") from None
    except (PlanError, ValueError) as exc:
        raise CliError(EXIT_PLAN, str(exc)) from None
    query = AtlasQuery(bundle.atlas)
    history = AircraftHistory(bundle.summaries)
    try:
        seqs = [featurize_plan(p, query, bundle.grid, history, ckpt.vocab, ckpt.normalization, args.cruise_kmh)
                for p in plans]
    except (PlanError, ValueError) as exc:
        raise CliError(EXIT_PLAN, str(exc)) from None
    ranked = rank_plans(plans, seqs, lambda s: predict_scores(ckpt.params, s), args.cruise_kmh)
    doc = [r.to_json() for r in ranked]
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    for r in ranked:
        print(f"{r.rank:>3}  {r.plan_id:<16} mean {r.mean_score:.3f}  worst {r.min_score} at step {r.min_step}")
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flightperf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic telemetry scenario")
    g.add_argument("--config", help="scenario JSON (defaults when omitted)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    p = sub.add_parser("prepare", help="build atlas, grid and the featurized dataset bundle")
    p.add_argument("data", help="directory written by `generate`")
    p.add_argument("--records")
    p.add_argument("--events")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--cell-radius-km", type=float, default=50.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    t = sub.add_parser("train", help="fit a model on the bundle's training split")
    t.add_argument("bundle")
    t.add_argument("--model", choices=sorted(ARTIFACTS), default="lstm")
    t.add_argument("--config", help="training config JSON (LSTM only)")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a trained model on the test split")
    e.add_argument("bundle")
    e.add_argument("--model", choices=sorted(ARTIFACTS), default="lstm")
    e.add_argument("--k", type=int, default=1, help="tolerance for the within-k rate")
    e.add_argument("--out", help="report path (default <bundle>/report_<model>.json)")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rank", help="rank candidate flight plans by predicted score")
    r.add_argument("plans", help="JSON list of flight plans")
    r.add_argument("--bundle", required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--cruise-kmh", type=float, default=900.0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_rank)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
