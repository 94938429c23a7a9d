"""Command line entry point: ``paits <command> --config cfg.json [flags]``.

Exit status is 0 on success, 1 on usage or validation errors and 2 when a
run fails while executing. Every command writes into a fresh run directory
under ``runs_dir`` and refuses to reuse an existing one.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import torch

from . import config as config_mod
from .config import ExperimentConfig
from .dataio import DataFormatError, export_csv, ingest_csv, prepare_data
from .metrics import MetricReport, SweepTable, evaluate_predictions, format_table, table_csv
from .model import build_model, config_to_dict, load_checkpoint, save_checkpoint
from .search import Outcome, default_evaluator, run_search, write_summary
from .data import subsample_labels
from .strategy import BASELINES, NULL_STRATEGY, Strategy, baseline_strategy
from .synthetic import generate_synthetic
from .training import finetune, predict_proba, pretrain

log = logging.getLogger("paits")

DATA_FILES = ("triplets", "statics", "labels")


class UsageError(Exception):
    """Bad flags, config or inputs (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_experiment(args) -> ExperimentConfig:
    try:
        exp = config_mod.load_config(args.config) if args.config else ExperimentConfig()
        changes = {}
        for item in args.set or []:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            changes[key] = _parse_value(value)
        return config_mod.override(exp, **changes) if changes else exp
    except UsageError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


def _data_paths(exp: ExperimentConfig) -> dict[str, Path]:
    return {k: Path(exp.data_dir) / f"{k}.csv" for k in DATA_FILES}


def load_prepared(exp: ExperimentConfig):
    paths = _data_paths(exp)
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise UsageError(f"missing data files {', '.join(missing)} (run gen-data first)")
    try:
        raw = ingest_csv(paths["triplets"], paths["statics"], paths["labels"], exp.mode,
                         supervised_window=exp.supervised_window, split_seed=exp.split_seed)
    except DataFormatError as exc:
        raise UsageError(str(exc)) from exc
    return prepare_data(raw, exp)


def new_run_dir(exp: ExperimentConfig, run_id: str) -> Path:
    path = Path(exp.runs_dir) / run_id
    if path.exists():
        raise UsageError(f"run directory {path} already exists; pick another --run-id")
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, payload) -> None:
    if path.exists():
        raise FileExistsError(f"refusing to overwrite {path}")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_checkpoint(path, kind: str, data):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"checkpoint {p} not found")
    try:
        meta, state = load_checkpoint(p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if meta.get("kind") != kind:
        raise UsageError(f"{p} holds a {meta.get('kind')!r} checkpoint, expected {kind!r}")
    if meta.get("encoder_config") != config_to_dict(data.ctx.encoder):
        raise UsageError(f"{p} was trained with a different model/data configuration")
    return meta, state


def _encoder_meta(method: str, strategy: Strategy, objective: str, data, exp, **extra) -> dict:
    return {
        "kind": "encoder",
        "method": method,
        "objective": objective,
        "strategy": strategy.to_dict(),
        "encoder_config": config_to_dict(data.ctx.encoder),
        "experiment": config_mod.to_dict(exp),
        **extra,
    }


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    exp = load_experiment(args)
    synth = exp.synth
    changes = {k: v for k, v in (("n_entities", args.entities), ("n_features", args.features), ("seed", args.seed))
               if v is not None}
    if exp.mode != synth.mode:
        changes["mode"] = exp.mode
    try:
        synth = dataclasses.replace(synth, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out or exp.data_dir)
    existing = [str(out / f"{k}.csv") for k in DATA_FILES if (out / f"{k}.csv").exists()]
    if existing:
        raise UsageError(f"refusing to overwrite {', '.join(existing)}")
    raw = generate_synthetic(synth)
    paths = export_csv(raw, out)
    (out / "synth_config.json").write_text(json.dumps(dataclasses.asdict(synth), indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    return 0


def _strategy_arg(text: str) -> Strategy:
    p = Path(text)
    payload = p.read_text(encoding="utf-8") if p.exists() else text
    try:
        return Strategy.from_dict(json.loads(payload))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid --strategy: {exc}") from exc


def cmd_pretrain(args) -> int:
    exp = load_experiment(args)
    if bool(args.baseline) == bool(args.strategy):
        raise UsageError("give exactly one of --baseline or --strategy")
    if args.baseline:
        try:
            plan = baseline_strategy(args.baseline)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        method, strategy, objective = args.baseline, plan.strategy, plan.objective
    else:
        method, strategy, objective = "paits", _strategy_arg(args.strategy), "paits"
    seed = exp.train.seed if args.seed is None else args.seed
    data = load_prepared(exp)
    run = new_run_dir(exp, args.run_id or f"pretrain-{method}-s{seed}")
    start = time.perf_counter()
    model = build_model(data.ctx.encoder, seed)
    pre = pretrain(model, data.unlabeled_train, data.unlabeled_val, strategy, exp.train, data.ctx,
                   objective=objective, seed=seed)
    ckpt = run / "encoder.ckpt"
    # a skipped pretraining still ships the (random) initial encoder
    save_checkpoint(ckpt, pre.encoder_state(), _encoder_meta(method, strategy, objective, data, exp, seed=seed,
                                                            random_init=pre.history.skipped))
    _write_json(run / "record.json", {"method": method, "objective": objective, "strategy": strategy.to_dict(),
                                      "seed": seed, "history": pre.history.to_dict(), "checkpoint": str(ckpt),
                                      "wall_clock": time.perf_counter() - start})
    print(ckpt)
    return 0


def cmd_search(args) -> int:
    exp = load_experiment(args)
    budget = exp.search_budget if args.budget is None else args.budget
    seed = exp.search_seed if args.seed is None else args.seed
    if budget < 1:
        raise UsageError("--budget must be >= 1")
    data = load_prepared(exp)
    if exp.search_fraction < 1:
        data = data.with_labeled_train(subsample_labels(data.labeled_train, exp.search_fraction, seed))
    run = new_run_dir(exp, args.run_id or f"search-b{budget}-s{seed}")
    records_dir = run / "records"
    records_dir.mkdir()
    base = default_evaluator(data, exp.train, args.objective, args.selector == "metric")
    saved: dict[int, str] = {}

    def evaluate(strategy, index, run_seed) -> Outcome:
        out = base(strategy, index, run_seed)
        if out.encoder_state is not None:
            path = records_dir / f"run_{index:03d}.ckpt"
            save_checkpoint(path, out.encoder_state,
                            _encoder_meta("paits", strategy, args.objective, data, exp, seed=run_seed))
            saved[index] = str(path)
        return out

    def on_record(rec) -> None:
        rec.checkpoint = saved.get(rec.index)
        _write_json(records_dir / f"run_{rec.index:03d}.json", rec.to_dict())

    result = run_search(data, budget, seed, exp.train, evaluate=evaluate, objective=args.objective,
                        selector=args.selector, on_record=on_record)
    write_summary(result.records, run / "summary.jsonl")
    method = "cl_paits" if args.objective == "contrastive" else "paits"
    best_ckpt = run / "encoder.ckpt"
    if result.best_encoder_state is not None:
        save_checkpoint(best_ckpt, result.best_encoder_state,
                        _encoder_meta(method, result.best_strategy, args.objective, data, exp, seed=seed,
                                      best_index=result.best_index))
    _write_json(run / "best.json", {"best_index": result.best_index, "best_loss": result.best_loss,
                                    "strategy": result.best_strategy.to_dict(), "trace": result.best_trace,
                                    "method": method})
    print(json.dumps({"best_index": result.best_index, "best_loss": result.best_loss,
                      "strategy": result.best_strategy.name}))
    return 0


def cmd_finetune(args) -> int:
    exp = load_experiment(args)
    if not 0 < args.fraction <= 1:
        raise UsageError("--fraction must be in (0, 1]")
    seed = exp.train.seed if args.seed is None else args.seed
    data = load_prepared(exp)
    if args.checkpoint:
        meta, state = _read_checkpoint(args.checkpoint, "encoder", data)
        strategy, method = Strategy.from_dict(meta["strategy"]), meta.get("method", "paits")
        if meta.get("random_init"):
            state = None
    else:
        meta, state, strategy, method = {}, None, NULL_STRATEGY, "none"
    if meta.get("objective") in ("tstcc", "none"):
        strategy = NULL_STRATEGY  # no PAITS augmentation to reuse
    if args.ft_aug is not None:
        strategy = Strategy.from_dict({**strategy.to_dict(), "finetune_aug": args.ft_aug})
    subset = subsample_labels(data.labeled_train, args.fraction, seed)
    run = new_run_dir(exp, args.run_id or f"finetune-{method}-f{args.fraction:g}-s{seed}")
    start = time.perf_counter()
    ft = finetune(state, subset, data.labeled_val, exp.train, data.ctx, strategy=strategy, seed=seed)
    ckpt = run / "model.ckpt"
    save_checkpoint(ckpt, ft.model.state_dict(), {
        "kind": "model", "method": method, "fraction": args.fraction, "seed": seed,
        "strategy": strategy.to_dict(), "encoder_config": config_to_dict(data.ctx.encoder),
        "pretrained_from": args.checkpoint, "val_loss": ft.val_loss,
    })
    _write_json(run / "record.json", {"method": method, "fraction": args.fraction, "seed": seed,
                                      "val_loss": ft.val_loss, "history": ft.history.to_dict(),
                                      "checkpoint": str(ckpt), "wall_clock": time.perf_counter() - start})
    print(ckpt)
    return 0


def cmd_evaluate(args) -> int:
    exp = load_experiment(args)
    data = load_prepared(exp)
    meta, state = _read_checkpoint(args.checkpoint, "model", data)
    model = build_model(data.ctx.encoder, 0)
    model.load_state_dict(state)
    scores = evaluate_predictions(predict_proba(model, data.labeled_test, data.ctx),
                                  [x.label for x in data.labeled_test])
    scores.pop("selection")
    payload = {"method": meta["method"], "fraction": meta["fraction"], "seed": meta["seed"], "metrics": scores}
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "evaluation.json"
    _write_json(out, payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def collect_evaluations(runs_dir) -> SweepTable:
    cells: dict[tuple[str, float, str], list[float]] = {}
    for path in sorted(Path(runs_dir).glob("*/evaluation.json")):
        d = json.loads(path.read_text(encoding="utf-8"))
        for metric, value in d["metrics"].items():
            cells.setdefault((d["method"], float(d["fraction"]), metric), []).append(value)
    if not cells:
        raise UsageError(f"no evaluations found under {runs_dir}")
    methods = list(dict.fromkeys(k[0] for k in sorted(cells)))
    fractions = sorted({k[1] for k in cells})
    reports = [MetricReport(metric, values, method, frac) for (method, frac, metric), values in sorted(cells.items())]
    return SweepTable(reports, fractions, methods)


def cmd_report(args) -> int:
    exp = load_experiment(args)
    runs_dir = Path(args.runs_dir or exp.runs_dir)
    if not runs_dir.is_dir():
        raise UsageError(f"runs directory {runs_dir} does not exist")
    table = collect_evaluations(runs_dir)
    for metric in table.metrics:
        rows = {(r.method, r.fraction) for r in table.rows(metric)}
        complete = SweepTable(table.rows(metric), table.fractions, table.methods)
        if len(rows) == len(table.methods) * len(table.fractions):
            print(format_table(complete, metric))
        else:
            for r in table.rows(metric):
                print(f"{metric} {r.method} {100 * r.fraction:g}% {r.formatted()}")
        print()
    if args.csv:
        p = Path(args.csv)
        if p.exists():
            raise UsageError(f"refusing to overwrite {p}")
        p.write_text(table_csv(table), encoding="utf-8")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.max_epochs=5 (repeatable)")
    common.add_argument("--run-id", help="name of the run directory under runs_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="paits", description="Pretraining and augmentation search for irregular time series.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic CSV trio")
    p.add_argument("--entities", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: data_dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain one strategy or baseline")
    p.add_argument("--baseline", choices=BASELINES)
    p.add_argument("--strategy", help="strategy as JSON text or a path to a JSON file")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("search", parents=[common], help="random search over pretraining strategies")
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--objective", choices=("paits", "contrastive"), default="paits")
    p.add_argument("--selector", choices=("loss", "metric"), default="loss")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("finetune", parents=[common], help="finetune a pretrained encoder on labeled data")
    p.add_argument("--checkpoint", help="encoder checkpoint (omit for random initialization)")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--ft-aug", choices=("same", "none"))
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="test-split metrics of a finetuned model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="where to write the evaluation JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="aggregate evaluations into a table")
    p.add_argument("--runs-dir")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"paits {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.exception("command failed")
        print(f"paits {args.command}: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
