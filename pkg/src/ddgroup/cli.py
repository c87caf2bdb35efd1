"""Command-line entry point: ``ddgroup {synth,fit,bench,score}``.

Every run writes ``manifest.json`` into its output directory. Passing that
manifest back through ``--config`` replays the run with the same resolved
settings. Errors go to stderr as one JSON line and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import yaml

from . import __version__
from .dataset import DatasetError, SplitSpec, load_csv, split, standardize_fit, write_csv
from .numerics import RankDeficientError
from .pipeline import (GroupReport, SelectionError, baseline_mse, config_from_dict,
                       fit_multi, with_test)
from .region import Box
from .synth import (BENCH_NS, SynthConfig, bench_config, bench_trial, demo_instance, generate,
                    read_truth, robustness_sweep, sample_size_instance, score_region, summarize,
                    write_truth)


class CliError(Exception):
    """A failure reported to the user as ``{"error": kind, "message": ...}``."""

    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", 2)


# ---------------------------------------------------------------- helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        d = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise CliError("config", f"cannot read config {path}: {exc.strerror}", 2) from exc
    except yaml.YAMLError as exc:
        raise CliError("config", f"config {path} is not valid YAML: {exc}".replace("\n", " "), 2) from exc
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise CliError("config", f"config {path} must be a mapping", 2)
    # A manifest carries its resolved settings under "config".
    if "command" in d and isinstance(d.get("config"), dict):
        return dict(d["config"])
    return d


def _merge(defaults: dict, config: dict, flags: dict) -> dict:
    """flags > config > defaults; flags left as None do not override."""
    unknown = set(config) - set(defaults)
    if unknown:
        raise CliError("config", f"unknown config keys: {sorted(unknown)}", 2)
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _parse_split(value) -> tuple[float, float, float]:
    parts = value.split(",") if isinstance(value, str) else list(value)
    try:
        fr = tuple(float(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"bad split {value!r}: expected three comma-separated fractions", 2) from exc
    if len(fr) != 3:
        raise CliError("config", f"bad split {value!r}: expected three fractions", 2)
    return fr


def _parse_ints(value) -> list[int]:
    parts = value.split(",") if isinstance(value, str) else list(value)
    try:
        return [int(p) for p in parts]
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"bad integer list {value!r}", 2) from exc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _cell(r.get(c)) for c in columns})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, (list, tuple)):
        return ";".join(str(x) for x in v)
    return v


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jobs(value) -> int:
    n = (os.cpu_count() or 1) if value is None else int(value)
    if n < 1:
        raise CliError("config", "--jobs must be at least 1", 2)
    return n


def _manifest(out: Path, command: str, argv: Sequence[str], config: dict, seed: int,
              inputs: Sequence[str], started: float) -> None:
    _write_json(out / "manifest.json", {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "version": __version__,
        "duration_seconds": round(time.perf_counter() - started, 3),
    })


# ---------------------------------------------------------------- synth


SYNTH_DEFAULTS = {"instance": "demo", "n": 1000, "seed": 0, "bbox": None, "truth": None,
                  "beta": None, "sigma_in": 0.3, "sigma_out": 5.0}


def _synth_config(opts: dict) -> SynthConfig:
    try:
        if opts["bbox"] is not None or opts["truth"] is not None:
            keys = ("bbox", "truth", "beta", "sigma_in", "sigma_out", "n", "seed")
            return SynthConfig.from_dict({k: opts[k] for k in keys if opts[k] is not None})
        make = {"demo": demo_instance, "sample_size": sample_size_instance}.get(opts["instance"])
        if make is None:
            raise ValueError(f"unknown instance {opts['instance']!r}; expected demo or sample_size")
        base = make(int(opts["n"]), int(opts["seed"]))
        beta = base.beta if opts["beta"] is None else opts["beta"]
        return SynthConfig(base.bbox, base.truth, beta, float(opts["sigma_in"]),
                           float(opts["sigma_out"]), base.n, base.seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("schema", f"invalid synth config: {exc}", 2) from exc


def cmd_synth(args, argv) -> None:
    started = time.perf_counter()
    opts = _merge(SYNTH_DEFAULTS, _load_config(args.config), {"seed": args.seed, "n": args.n})
    cfg = _synth_config(opts)
    out = _outdir(args.out)
    data, _ = generate(cfg)
    write_csv(data, out / "data.csv")
    write_truth(cfg, out / "truth.json")
    _manifest(out, "synth", argv, cfg.to_dict(), cfg.seed,
              [args.config] if args.config else [], started)


# ---------------------------------------------------------------- fit


FIT_DEFAULTS = {"data": None, "target": None, "seed": 0, "split": "0.5,0.3,0.2", "groups": 1,
                "baseline": None, "score_truth": None, "standardize": True, "pipeline": {}}


def _grid_rows(round_: int, result) -> list[dict]:
    rows = []
    for i, r in enumerate(result.log):
        row = {"round": round_, "index": i, "selected": int(i == result.best_index)}
        row.update(r.hyperparameters)
        row.update(core_size=r.core_size, core_anchor=r.core_anchor, rejected=r.rejected_count,
                   volume=r.volume, train_frac=r.train_frac, val_frac=r.val_frac,
                   train_mse=r.train_mse, val_mse=r.val_mse, sigma_hat=r.sigma_hat,
                   q_hat=r.q_hat, flags=r.flags)
        rows.append(row)
    return rows


GRID_COLUMNS = ("round", "index", "selected", "core_frac", "core_k", "speed", "delta", "threshold",
                "sigma", "gamma1", "gamma2", "rho", "core_size", "core_anchor", "rejected", "volume",
                "train_frac", "val_frac", "train_mse", "val_mse", "sigma_hat", "q_hat", "flags")


def _original_box(box: Box, std) -> Box:
    if std is None:
        return box
    return Box(box.lo * std.feature_std + std.feature_mean, box.hi * std.feature_std + std.feature_mean)


def _report_dict(rep: GroupReport, std, truth: Box | None) -> dict:
    d = rep.to_dict()
    orig = _original_box(rep.box, std)
    d["box_original_units"] = orig.to_dict(rep.feature_names or None)
    d["mse_units"] = "standardized" if std is not None else "original"
    if truth is not None:
        sc = score_region(orig, truth)
        d["score"] = {"precision": sc.precision, "recall": sc.recall, "f1": sc.f1}
    return d


def cmd_fit(args, argv) -> None:
    started = time.perf_counter()
    config = _load_config(args.config)
    pipe_flags = {"p_min": args.p_min, "selection": args.selection,
                  "speeds": [args.speeds] if args.speeds else None}
    opts = _merge(FIT_DEFAULTS, config, {
        "data": args.data, "target": args.target, "seed": args.seed, "split": args.split,
        "groups": args.groups, "baseline": args.baseline, "score_truth": args.score_truth})
    pipe = dict(opts["pipeline"] or {})
    pipe.update({k: v for k, v in pipe_flags.items() if v is not None})
    pipe["seed"] = int(opts["seed"])
    pipe["jobs"] = _jobs(args.jobs if args.jobs is not None else pipe.get("jobs"))
    if opts["data"] is None or opts["target"] is None:
        raise CliError("usage", "fit needs a data CSV and --target", 2)
    if opts["baseline"] not in (None, "kmeans"):
        raise CliError("usage", f"unknown baseline {opts['baseline']!r}; expected kmeans", 2)
    try:
        cfg = config_from_dict(pipe)
        spec = SplitSpec(*_parse_split(opts["split"]), seed=int(opts["seed"]))
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc), 2) from exc
    groups = int(opts["groups"])
    if groups < 1:
        raise CliError("config", "--groups must be at least 1", 2)

    data = load_csv(opts["data"], opts["target"])
    train, val, test = split(data, spec)
    std = None
    if opts["standardize"]:
        std = standardize_fit(train)
        train, val, test = std.apply(train), std.apply(val), std.apply(test)
    truth = read_truth(opts["score_truth"]) if opts["score_truth"] else None

    logs: list = []
    reports = [with_test(r, test) for r in fit_multi(train, val, cfg, groups, logs)]
    result = {
        "groups": [_report_dict(r, std, truth) for r in reports],
        "whole_data": {"test_mse": baseline_mse(train, test) if test.n else None},
        "split": {"train": train.n, "val": val.n, "test": test.n},
        "baseline": None,
    }
    if opts["baseline"] == "kmeans":
        from .baseline import cluster_subgroup
        km, _ = cluster_subgroup(train, val, p_min=cfg.p_min, seed=cfg.seed, refit=cfg.refit,
                                 selection=cfg.selection, quantile_q=cfg.quantile_q,
                                 quantile_factor=cfg.quantile_factor)
        result["baseline"] = _report_dict(with_test(km, test), std, truth)

    out = _outdir(args.out)
    _write_json(out / "reports.json", result)
    grid = [row for g, res in enumerate(logs) for row in _grid_rows(g, res)]
    _write_rows(out / "grid_log.csv", grid, GRID_COLUMNS)
    # Plot data: validation MSE against subgroup size over the grid.
    _write_rows(out / "mse_vs_size.csv", grid, ("round", "index", "val_frac", "val_mse"))
    resolved = {**opts, "split": [spec.train_frac, spec.val_frac, spec.test_frac],
                "pipeline": cfg.to_dict()}
    inputs = [opts["data"]] + ([opts["score_truth"]] if opts["score_truth"] else [])
    _manifest(out, "fit", argv, resolved, int(opts["seed"]), inputs + ([args.config] if args.config else []),
              started)


# ---------------------------------------------------------------- bench


BENCH_DEFAULTS = {"ns": list(BENCH_NS), "trials": 20, "seed": 0, "baseline": True,
                  "pipeline": {}, "robustness": None}


def _bench_task(task):
    n, seed, pipe, baseline = task
    return bench_trial(n, seed, bench_config(**pipe), baseline)


def _markdown_table(rows: list[dict]) -> str:
    ns = sorted({r["n"] for r in rows})
    methods = sorted({r["method"] for r in rows}, key=lambda m: (m != "ddgroup", m))
    cell = {(r["method"], r["n"]): f"{r['f1_mean']:.2f} ± {r['f1_sem']:.2f}" for r in rows}
    lines = ["| method | " + " | ".join(f"n={n}" for n in ns) + " |",
             "|---|" + "---|" * len(ns)]
    for m in methods:
        lines.append(f"| {m} | " + " | ".join(cell.get((m, n), "") for n in ns) + " |")
    return "\n".join(lines) + "\n"


def cmd_bench(args, argv) -> None:
    started = time.perf_counter()
    opts = _merge(BENCH_DEFAULTS, _load_config(args.config), {
        "ns": _parse_ints(args.ns) if args.ns else None, "trials": args.trials, "seed": args.seed,
        "robustness": _parse_offsets(args.robustness) if args.robustness else None})
    if args.no_baseline:
        opts["baseline"] = False
    jobs = _jobs(args.jobs)
    pipe = dict(opts["pipeline"] or {})
    try:
        bench_config(**pipe)
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"invalid bench pipeline settings: {exc}", 2) from exc
    trials = int(opts["trials"])
    if trials < 1 or not opts["ns"]:
        raise CliError("config", "bench needs at least one n and one trial", 2)
    seed = int(opts["seed"])
    tasks = [(int(n), seed + t, pipe, bool(opts["baseline"])) for n in opts["ns"] for t in range(trials)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for batch in pool.map(_bench_task, tasks) for r in batch]
    else:
        results = [r for task in tasks for r in _bench_task(task)]

    out = _outdir(args.out)
    rows = summarize(results)
    _write_rows(out / "bench.csv", rows, ("n", "method", "trials", "f1_mean", "f1_sem"))
    (out / "bench.md").write_text(_markdown_table(rows))
    trial_rows = [{"n": r.n, "seed": r.seed, "method": r.method, "precision": r.score.precision,
                   "recall": r.score.recall, "f1": r.score.f1, "flags": list(r.flags)} for r in results]
    _write_rows(out / "trials.csv", trial_rows, ("n", "seed", "method", "precision", "recall", "f1", "flags"))
    if opts["robustness"]:
        stats = robustness_sweep(demo_instance(1000, seed), opts["robustness"], seeds=trials)
        _write_rows(out / "f1_vs_offset.csv", stats.rows(),
                    ("offset", "precision", "precision_sem", "recall", "recall_sem", "f1", "f1_sem"))
    resolved = {**opts, "ns": [int(n) for n in opts["ns"]], "pipeline": bench_config(**pipe).to_dict()}
    resolved["pipeline"]["jobs"] = 1
    _manifest(out, "bench", argv, resolved, seed, [args.config] if args.config else [], started)


def _parse_offsets(value) -> list[float]:
    parts = value.split(",") if isinstance(value, str) else list(value)
    try:
        return [float(p) for p in parts]
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"bad offset list {value!r}", 2) from exc


# ---------------------------------------------------------------- score


def _boxes_from_report(path: str) -> list[tuple[str, Box]]:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("schema", f"{path} is not JSON: {exc.msg}", 2) from exc

    def to_box(intervals):
        return Box([iv["lo"] for iv in intervals], [iv["hi"] for iv in intervals])

    try:
        if "groups" in d:
            out = [(f"group_{g + 1}", to_box(r["box_original_units"])) for g, r in enumerate(d["groups"])]
            if d.get("baseline"):
                out.append(("baseline", to_box(d["baseline"]["box_original_units"])))
            return out
        if "box_original_units" in d:
            return [("group_1", to_box(d["box_original_units"]))]
        if "lo" in d and "hi" in d:
            return [("box", Box(d["lo"], d["hi"]))]
    except (KeyError, TypeError) as exc:
        raise CliError("schema", f"{path}: malformed region entry ({exc})", 2) from exc
    raise CliError("schema", f"{path}: no region found (expected a fit report or a lo/hi box)", 2)


def cmd_score(args, argv) -> None:
    started = time.perf_counter()
    if not args.score_truth:
        raise CliError("usage", "score needs --score-truth", 2)
    truth = read_truth(args.score_truth)
    scores = {}
    for name, box in _boxes_from_report(args.report):
        sc = score_region(box, truth)
        scores[name] = {"precision": sc.precision, "recall": sc.recall, "f1": sc.f1}
    out = _outdir(args.out)
    _write_json(out / "scores.json", scores)
    print(json.dumps(scores, sort_keys=True))
    _manifest(out, "score", argv, {"report": args.report, "score_truth": args.score_truth}, 0,
              [args.report, args.score_truth], started)


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddgroup", description="Find box-shaped subgroups where one linear model fits.")
    p.add_argument("--version", action="version", version=f"ddgroup {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset and its truth file")
    s.add_argument("--config", help="YAML synth config (or a manifest)")
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--out", default="ddgroup-out")

    f = sub.add_parser("fit", help="fit subgroups on a CSV")
    f.add_argument("data", nargs="?")
    f.add_argument("--target")
    f.add_argument("--config", help="YAML run config (or a manifest)")
    f.add_argument("--seed", type=int)
    f.add_argument("--split", help="train,val,test fractions, e.g. 0.5,0.3,0.2")
    f.add_argument("--groups", type=int)
    f.add_argument("--p-min", dest="p_min", type=float)
    f.add_argument("--selection", choices=("valmse", "quantile"))
    f.add_argument("--speeds", choices=("uniform", "bbox"))
    f.add_argument("--baseline", choices=("kmeans",))
    f.add_argument("--score-truth", dest="score_truth")
    f.add_argument("--jobs", type=int)
    f.add_argument("--out", default="ddgroup-out")

    b = sub.add_parser("bench", help="synthetic F1 table across sample sizes")
    b.add_argument("--config", help="YAML bench config (or a manifest)")
    b.add_argument("--ns", help="comma-separated sample sizes")
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--no-baseline", action="store_true", help="skip the k-means baseline")
    b.add_argument("--robustness", help="comma-separated core offsets; writes f1_vs_offset.csv")
    b.add_argument("--jobs", type=int)
    b.add_argument("--out", default="ddgroup-out")

    c = sub.add_parser("score", help="score a fitted region against a truth file")
    c.add_argument("report")
    c.add_argument("--score-truth", dest="score_truth")
    c.add_argument("--out", default="ddgroup-out")
    return p


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "bench": cmd_bench, "score": cmd_score}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, argv)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.code)
    except DatasetError as exc:
        return _fail("data", str(exc), 1)
    except (SelectionError, RankDeficientError) as exc:
        return _fail("fit", str(exc), 1)
    except OSError as exc:
        return _fail("io", f"{exc.filename}: {exc.strerror}" if exc.filename else str(exc), 1)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail("config", str(exc), 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
