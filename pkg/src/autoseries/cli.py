"""Command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 budget violation or pipeline failure during a run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .automl import PipelineConfig
from .dataset import DatasetError, Schema, load_long_csv
from .harness import RunConfig, durations_table, repeat_runs, run_streaming_evaluation
from .metrics import DifficultyReport, PredictionLog, best_solution, difficulty, rank_solutions, rank_stability
from .synth import InvalidConfig, SynthConfig, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def bundled(name: str) -> Path:
    return Path(str(resources.files("autoseries") / "data" / name))


# ---- loading -------------------------------------------------------------


def load_dataset(data_dir):
    """``(table, schema_doc)`` from a directory holding data.csv and schema.json."""
    data_dir = Path(data_dir)
    try:
        doc = json.loads((data_dir / "schema.json").read_text())
        schema = Schema.from_dict(doc)
        table = load_long_csv(data_dir / "data.csv", schema)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"missing dataset file: {exc.filename}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError(EXIT_DATA, f"bad schema.json: {exc}") from exc
    except DatasetError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    return table, doc


def load_pipeline_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.from_json(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_USAGE, f"pipeline config not found: {path}") from exc
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_USAGE, f"bad pipeline config {path}: {exc}") from exc


def _run_config(args, doc: dict, pipeline: PipelineConfig, seed: int) -> RunConfig:
    split = doc.get("split_instant")
    return RunConfig(
        budget_multiplier=args.budget_multiplier,
        seed=seed,
        pipeline=pipeline,
        split_instant=pd.Timestamp(split) if split and args.train_fraction is None else None,
        train_fraction=args.train_fraction or 0.8,
    )


def _write_result(result, out: Path, solution: str) -> dict:
    out.parent.mkdir(parents=True, exist_ok=True)
    pred_path = out.with_name(out.stem + "_predictions.csv")
    result.log.to_csv(pred_path)
    doc = result.to_dict()
    doc["solution"] = solution
    doc["predictions"] = pred_path.name
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


# ---- subcommands -----------------------------------------------------------


def cmd_datagen(args) -> int:
    try:
        cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig.from_json(bundled("smoke.json"))
        if args.seed is not None:
            cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    except FileNotFoundError as exc:
        raise CliError(EXIT_USAGE, f"config not found: {args.config}") from exc
    except InvalidConfig as exc:
        raise CliError(EXIT_USAGE, f"invalid config key {exc.field!r}: {exc}") from exc
    paths = write_dataset(cfg, args.out)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_run(args) -> int:
    table, doc = load_dataset(args.data)
    pipeline = load_pipeline_config(args.pipeline)
    rc = _run_config(args, doc, pipeline, args.seed)
    result = run_streaming_evaluation(table, rc, dataset_name=doc.get("name", Path(args.data).name))
    solution = args.solution or (Path(args.pipeline).stem if args.pipeline else "autoseries")
    out = _write_result(result, Path(args.out), solution)
    m = out["metrics"]
    if m is not None:
        print(f"rmse={m['rmse']:.6g} smape={m['smape_percent']:.6g} corr={m['corr']:.6g}")
    if result.panic is not None:
        print(f"pipeline failure: {result.panic['error']}", file=sys.stderr)
        return EXIT_RUN
    if result.budget_violation is not None:
        print(f"budget violation: overran by {result.budget_violation:.3f}s", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def cmd_repeat(args) -> int:
    table, doc = load_dataset(args.data)
    pipeline = load_pipeline_config(args.pipeline)
    rc = _run_config(args, doc, pipeline, args.seed)
    threads = int(os.environ.get("AUTOSERIES_THREADS", "0") or 0)
    name = doc.get("name", Path(args.data).name)
    results = repeat_runs(table, rc, args.n_seeds, dataset_name=name, threads=threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    solution = args.solution or (Path(args.pipeline).stem if args.pipeline else "autoseries")
    rows = []
    for r in results:
        _write_result(r, out / f"result_seed{r.seed}.json", solution)
        m = r.report.to_dict() if r.report else {"rmse": np.nan, "smape_percent": np.nan, "corr": np.nan}
        rows.append({"seed": r.seed, **m, "disqualified": r.disqualified})
    frame = pd.DataFrame(rows)
    frame.to_csv(out / "seeds.csv", index=False, lineterminator="\n")
    tables = [pd.DataFrame({name: [row["rmse"]]}, index=[solution]) for row in rows]
    if len(tables) >= 2:
        rank_stability(tables).to_csv(out / "rank_stability.csv", index_label="solution", lineterminator="\n")
    print(frame.to_string(index=False))
    return EXIT_RUN if any(r.disqualified for r in results) else EXIT_OK


def _read_results(paths) -> list:
    docs = []
    for p in paths:
        p = Path(p)
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError as exc:
            raise CliError(EXIT_DATA, f"result file not found: {p}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_DATA, f"bad result file {p}: {exc}") from exc
        for key in ("dataset", "solution", "metrics"):
            if key not in doc:
                raise CliError(EXIT_DATA, f"result file {p} lacks {key!r}")
        doc["_path"] = p
        docs.append(doc)
    if not docs:
        raise CliError(EXIT_USAGE, "no result files given")
    return docs


def _metric_tables(docs) -> tuple:
    """Per-seed solutions x datasets RMSE frames (NaN for disqualified runs)."""
    datasets = sorted({d["dataset"] for d in docs})
    solutions = sorted({d["solution"] for d in docs})
    for s in solutions:
        have = {d["dataset"] for d in docs if d["solution"] == s}
        if have != set(datasets):
            raise CliError(EXIT_DATA, f"solution {s!r} covers datasets {sorted(have)}, expected {datasets}")
    seeds = sorted({d.get("seed", 0) for d in docs})
    per_seed = []
    for seed in seeds:
        frame = pd.DataFrame(np.nan, index=solutions, columns=datasets)
        for d in docs:
            if d.get("seed", 0) == seed and d["metrics"] is not None and not d.get("disqualified", False):
                frame.loc[d["solution"], d["dataset"]] = d["metrics"]["rmse"]
        per_seed.append(frame)
    mean = pd.concat(per_seed).groupby(level=0).mean().reindex(solutions)
    return mean, per_seed, seeds


def _rank(docs, out_dir: Path) -> dict:
    mean, per_seed, seeds = _metric_tables(docs)
    table = rank_solutions(mean)
    table.to_csv(out_dir / "rank.csv")
    written = {"rank": "rank.csv"}
    if len(seeds) >= 2:
        rank_stability(per_seed).to_csv(out_dir / "rank_stability.csv", index_label="solution",
                                        lineterminator="\n")
        written["rank_stability"] = "rank_stability.csv"
    return written


def _difficulty(docs, baseline: str, out_dir: Path) -> dict:
    report = DifficultyReport()
    for dataset in sorted({d["dataset"] for d in docs}):
        runs = [d for d in docs if d["dataset"] == dataset and d["metrics"] is not None]
        base = [d for d in runs if d["solution"] == baseline]
        if not base:
            raise CliError(EXIT_DATA, f"no {baseline!r} result for dataset {dataset!r}")
        rmses = {}
        for d in runs:
            rmses.setdefault(d["solution"], []).append(d["metrics"]["rmse"])
        best_name = best_solution({k: float(np.mean(v)) for k, v in rmses.items()})
        best = min((d for d in runs if d["solution"] == best_name), key=lambda d: (d["metrics"]["rmse"], d.get("seed", 0)))
        base_doc = min(base, key=lambda d: d.get("seed", 0))
        logs = []
        for d in (best, base_doc):
            pred = d["_path"].with_name(d.get("predictions", d["_path"].stem + "_predictions.csv"))
            try:
                logs.append(PredictionLog.from_csv(pred))
            except FileNotFoundError as exc:
                raise CliError(EXIT_DATA, f"prediction log not found: {pred}") from exc
        try:
            report.entries[dataset] = difficulty(*logs)
        except ValueError as exc:
            raise CliError(EXIT_DATA, f"dataset {dataset!r}: {exc}") from exc
    report.to_csv(out_dir / "difficulty.csv")
    report.to_svg(out_dir / "difficulty.svg")
    return {"difficulty": "difficulty.csv", "difficulty_svg": "difficulty.svg"}


def cmd_rank(args) -> int:
    docs = _read_results(args.results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _rank(docs, out)
    print((out / "rank.csv").read_text(), end="")
    return EXIT_OK


def cmd_difficulty(args) -> int:
    docs = _read_results(args.results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _difficulty(docs, args.baseline, out)
    print((out / "difficulty.csv").read_text(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    docs = _read_results(args.results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {"results": sorted(str(d["_path"]) for d in docs)}
    index.update(_rank(docs, out))
    if args.baseline:
        index.update(_difficulty(docs, args.baseline, out))
    rows = []
    for d in docs:
        dur = d.get("durations", {})
        rows.append({
            "dataset": d["dataset"],
            "budget": d.get("budget_seconds", np.nan),
            "solution": d["solution"],
            "seconds": sum(dur.get(k, 0.0) for k in ("train_seconds", "total_update_seconds", "total_predict_seconds")),
        })
    dur = pd.DataFrame(rows).groupby(["dataset", "budget", "solution"])["seconds"].mean().unstack("solution")
    dur.reset_index().to_csv(out / "durations.csv", index=False, lineterminator="\n")
    index["durations"] = "durations.csv"
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    print(json.dumps(index, indent=2, sort_keys=True))
    return EXIT_OK


# ---- parser ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="autoseries", description="Streaming time-series AutoML evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("datagen", help="generate a synthetic dataset")
    g.add_argument("--config", help="synth config JSON (default: bundled smoke config)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_datagen)

    def run_flags(q):
        q.add_argument("--data", required=True, help="directory with data.csv and schema.json")
        q.add_argument("--pipeline", help="pipeline config JSON")
        q.add_argument("--budget-multiplier", type=float, default=1.0)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--train-fraction", type=float, help="split at this fraction of the time axis")
        q.add_argument("--solution", help="solution name recorded in the result")
        q.add_argument("--out", required=True)

    r = sub.add_parser("run", help="one streaming evaluation")
    run_flags(r)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("repeat", help="streaming evaluations over consecutive seeds")
    run_flags(rp)
    rp.add_argument("--n-seeds", type=int, default=3)
    rp.set_defaults(func=cmd_repeat)

    k = sub.add_parser("rank", help="leaderboard from result files")
    k.add_argument("--results", nargs="+", required=True)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_rank)

    d = sub.add_parser("difficulty", help="intrinsic and modeling difficulty per dataset")
    d.add_argument("--results", nargs="+", required=True)
    d.add_argument("--baseline", default="baseline")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_difficulty)

    rep = sub.add_parser("report", help="rank, difficulty and durations in one directory")
    rep.add_argument("--results", nargs="+", required=True)
    rep.add_argument("--baseline")
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "budget_multiplier", 1.0) <= 0:
            raise CliError(EXIT_USAGE, "--budget-multiplier must be positive")
        if getattr(args, "n_seeds", 1) < 1:
            raise CliError(EXIT_USAGE, "--n-seeds must be >= 1")
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
