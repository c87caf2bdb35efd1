"""Synthetic well-specified-region data, region overlap scores, core-misspecification sweeps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coregroup import core_from_members
from .dataset import Dataset, INTERCEPT_NAME
from .pipeline import GridPoint, PipelineConfig, ThresholdRule, fit_from_core, sweep
from .region import Box, intersect, volume


@dataclass(frozen=True)
class SynthConfig:
    bbox: Box
    truth: Box
    beta: np.ndarray
    sigma_in: float = 0.3
    sigma_out: float = 5.0
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        object.__setattr__(self, "beta", beta)
        if not (self.bbox.d == self.truth.d == beta.shape[0]):
            raise ValueError("bbox, truth and beta must have the same dimension")
        if not np.any(beta != 0):
            raise ValueError("beta must be nonzero")
        if not np.all((self.truth.lo >= self.bbox.lo) & (self.truth.hi <= self.bbox.hi)):
            raise ValueError("true region must lie inside the bounding box")
        if not 0 <= self.sigma_in < self.sigma_out:
            raise ValueError(f"need 0 <= sigma_in < sigma_out, got {self.sigma_in}, {self.sigma_out}")
        if self.n < 1:
            raise ValueError("n must be positive")

    def with_n(self, n: int, seed: int | None = None) -> "SynthConfig":
        return SynthConfig(self.bbox, self.truth, self.beta, self.sigma_in, self.sigma_out, n,
                           self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        return {
            "bbox": {"lo": self.bbox.lo.tolist(), "hi": self.bbox.hi.tolist()},
            "truth": {"lo": self.truth.lo.tolist(), "hi": self.truth.hi.tolist()},
            "beta": self.beta.tolist(),
            "sigma_in": self.sigma_in,
            "sigma_out": self.sigma_out,
            "n": self.n,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        required = {"bbox", "truth", "beta"}
        missing = required - set(d)
        if missing:
            raise ValueError(f"synth config missing keys: {sorted(missing)}")
        extra = set(d) - required - {"sigma_in", "sigma_out", "n", "seed"}
        if extra:
            raise ValueError(f"unknown synth config keys: {sorted(extra)}")
        return cls(Box(d["bbox"]["lo"], d["bbox"]["hi"]), Box(d["truth"]["lo"], d["truth"]["hi"]),
                   d["beta"], float(d.get("sigma_in", 0.3)), float(d.get("sigma_out", 5.0)),
                   int(d.get("n", 1000)), int(d.get("seed", 0)))


# Coefficients for the planted region; the experiments fix a nonzero beta without stating it.
DEFAULT_BETA = (1.0, -1.0, 0.5)


def demo_instance(n: int = 1000, seed: int = 0, beta=DEFAULT_BETA) -> SynthConfig:
    """B = [-1,1]^2 x {1}, R* = [-1/3,1/3] x [-2/3,2/3] x {1}."""
    return SynthConfig(Box([-1, -1, 1], [1, 1, 1]), Box([-1 / 3, -2 / 3, 1], [1 / 3, 2 / 3, 1]),
                       beta, 0.3, 5.0, n, seed)


def sample_size_instance(n: int = 1000, seed: int = 0, beta=DEFAULT_BETA) -> SynthConfig:
    """B = [-1,1]^2 x {1}, R* = [-1/3,1/3]^2 x {1}, sigma_in 0.3, sigma_out 5."""
    return SynthConfig(Box([-1, -1, 1], [1, 1, 1]), Box([-1 / 3, -1 / 3, 1], [1 / 3, 1 / 3, 1]),
                       beta, 0.3, 5.0, n, seed)


def _feature_names(bbox: Box) -> tuple[str, ...]:
    return tuple(INTERCEPT_NAME if bbox.lo[j] == bbox.hi[j] == 1.0 else f"x{j + 1}"
                 for j in range(bbox.d))


def _sample_features(bbox: Box, n: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.uniform(bbox.lo, bbox.hi, size=(n, bbox.d))
    X[:, bbox.sides == 0] = bbox.lo[bbox.sides == 0]
    return X


def _as_dataset(X, y, bbox: Box) -> Dataset:
    names = _feature_names(bbox)
    return Dataset(X, y, names, INTERCEPT_NAME in names, "y")


def generate(cfg: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Features uniform on B; y = beta.x + N(0, sigma_in^2) inside R*, N(0, sigma_out^2) outside.

    Returns the dataset and the boolean in-R* label of each row.
    """
    rng = np.random.default_rng(cfg.seed)
    X = _sample_features(cfg.bbox, cfg.n, rng)
    inside = np.atleast_1d(cfg.truth.contains(X))
    noise = rng.standard_normal(cfg.n)
    y = np.where(inside, X @ cfg.beta + cfg.sigma_in * noise, cfg.sigma_out * noise)
    return _as_dataset(X, y, cfg.bbox), inside


@dataclass(frozen=True)
class PlantedRegion:
    box: Box
    beta: np.ndarray
    sigma: float


@dataclass(frozen=True)
class MultiSynthConfig:
    bbox: Box
    regions: tuple[PlantedRegion, ...]
    sigma_out: float = 5.0
    n: int = 4000
    seed: int = 0

    def __post_init__(self):
        axes = self.bbox.nondegenerate_axes()
        for i, a in enumerate(self.regions):
            if a.sigma >= self.sigma_out:
                raise ValueError("each region's sigma must be below sigma_out")
            for b in self.regions[i + 1:]:
                if volume(intersect(a.box, b.box), axes) > 0:
                    raise ValueError("planted regions must be pairwise disjoint")


def generate_multi(cfg: MultiSynthConfig) -> tuple[Dataset, np.ndarray]:
    """Like ``generate`` with several planted regions; labels are region ids, -1 for background."""
    rng = np.random.default_rng(cfg.seed)
    X = _sample_features(cfg.bbox, cfg.n, rng)
    noise = rng.standard_normal(cfg.n)
    y = cfg.sigma_out * noise
    labels = np.full(cfg.n, -1)
    for g, reg in enumerate(cfg.regions):
        m = np.atleast_1d(reg.box.contains(X)) & (labels < 0)
        labels[m] = g
        y[m] = X[m] @ np.asarray(reg.beta, dtype=float) + reg.sigma * noise[m]
    return _as_dataset(X, y, cfg.bbox), labels


def write_truth(cfg: SynthConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def read_truth(path) -> Box:
    d = json.loads(Path(path).read_text())
    return Box(d["truth"]["lo"], d["truth"]["hi"])


@dataclass(frozen=True)
class RegionScore:
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision > 0 and recall > 0 else 0.0


def score_region(estimate: Box, truth: Box) -> RegionScore:
    """Volume overlap of ``estimate`` with ``truth`` over the truth's non-flat axes."""
    if estimate.d != truth.d:
        raise ValueError(f"dimension mismatch: {estimate.d} vs {truth.d}")
    axes = truth.nondegenerate_axes()
    v_truth = volume(truth, axes)
    if v_truth <= 0:
        raise ValueError("true region has zero volume")
    v_est = volume(estimate, axes)
    v_both = volume(intersect(estimate, truth), axes)
    precision = v_both / v_est if v_est > 0 else 0.0
    recall = v_both / v_truth
    return RegionScore(precision, recall, f1_score(precision, recall))


@dataclass
class SweepStats:
    offsets: list[float]
    mean: dict[str, list[float]] = field(default_factory=dict)
    sem: dict[str, list[float]] = field(default_factory=dict)
    bad_core_offset: float = math.nan
    center_exit_offset: float = math.nan

    def rows(self) -> list[dict]:
        out = []
        for i, o in enumerate(self.offsets):
            row = {"offset": o}
            for key in ("precision", "recall", "f1"):
                row[key] = self.mean[key][i]
                row[f"{key}_sem"] = self.sem[key][i]
            out.append(row)
        return out


def default_core_halfwidth(truth: Box) -> np.ndarray:
    """Half-widths of a box with half of R*'s side lengths."""
    return truth.sides / 4


def robustness_sweep(cfg: SynthConfig, offsets: Sequence[float], core_halfwidth=None,
                     seeds: int = 50, rule: ThresholdRule | None = None, delta: float = 0.0,
                     speed: str = "uniform") -> SweepStats:
    """Replace the core search by the points in a box shifted by (o, o, ...) from R*'s center.

    For each offset, phases 2-3 run from that supplied core on ``seeds`` fresh
    datasets; the mean and standard error of precision, recall and F1 are reported.
    The default rule is the theory threshold with the true ``sigma_in``.
    """
    rule = rule or ThresholdRule("theory", sigma=cfg.sigma_in)
    axes = list(cfg.truth.nondegenerate_axes())
    half = np.asarray(default_core_halfwidth(cfg.truth) if core_halfwidth is None else core_halfwidth,
                      dtype=float)
    half = np.broadcast_to(half, (cfg.truth.d,)).copy()
    center = (cfg.truth.lo + cfg.truth.hi) / 2
    point = GridPoint(rule, speed, delta)
    scores = {key: np.zeros((len(offsets), seeds)) for key in ("precision", "recall", "f1")}
    for s in range(seeds):
        data, _ = generate(cfg.with_n(cfg.n, cfg.seed + s))
        X = data.features
        for i, o in enumerate(offsets):
            c = center.copy()
            c[axes] += o
            lo, hi = c - half, c + half
            mask = np.all((X[:, axes] >= lo[axes]) & (X[:, axes] <= hi[axes]), axis=1)
            members = np.flatnonzero(mask)
            if members.size <= data.d:
                raise ValueError(f"offset {o}: supplied core has {members.size} points, need > {data.d}")
            core = core_from_members(data, members)
            rep = fit_from_core(data, data, core, point, refit=False)
            sc = score_region(rep.box, cfg.truth)
            scores["precision"][i, s], scores["recall"][i, s], scores["f1"][i, s] = \
                sc.precision, sc.recall, sc.f1
    stats = SweepStats([float(o) for o in offsets])
    for key, arr in scores.items():
        stats.mean[key] = arr.mean(axis=1).tolist()
        stats.sem[key] = (arr.std(axis=1, ddof=1) / math.sqrt(seeds)).tolist() if seeds > 1 \
            else [0.0] * len(offsets)
    # Offsets at which the supplied core first pokes out of R*, and its center leaves R*.
    stats.bad_core_offset = float(np.min((cfg.truth.hi - center - half)[axes]))
    stats.center_exit_offset = float(np.min((cfg.truth.hi - center)[axes]))
    return stats


# Table-1 style protocol: k = n/20, constant rho grid, quantile selection.
BENCH_NS = (200, 400, 800, 1600, 3200, 6400, 12800)


def bench_config(**overrides) -> PipelineConfig:
    base = dict(core_fracs=(0.05,), threshold="constant", rhos=(2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
                speeds=("uniform",), deltas=(0.1, 0.05, 0.025, 0.01), selection="quantile")
    base.update(overrides)
    return PipelineConfig(**base)


def bench_split(data: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """80/20 train/val split; the synthetic protocol scores against R* so no test rows are held out."""
    perm = np.random.default_rng(seed).permutation(data.n)
    n_val = data.n // 5
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


@dataclass(frozen=True)
class TrialResult:
    n: int
    seed: int
    method: str
    score: RegionScore
    flags: tuple[str, ...] = ()


def bench_trial(n: int, seed: int, cfg: PipelineConfig | None = None, baseline: bool = True,
                beta=DEFAULT_BETA) -> list[TrialResult]:
    """One synthetic trial: DDGroup (and the k-means baseline) scored against R*."""
    from .baseline import cluster_subgroup

    cfg = cfg or bench_config()
    inst = sample_size_instance(n, seed, beta)
    data, _ = generate(inst)
    train, val = bench_split(data, seed)
    best = sweep(train, val, cfg).best
    out = [TrialResult(n, seed, "ddgroup", score_region(best.box, inst.truth), tuple(best.flags))]
    if baseline:
        km, _ = cluster_subgroup(train, val, p_min=cfg.p_min, seed=seed, refit=cfg.refit,
                                 selection=cfg.selection, quantile_q=cfg.quantile_q,
                                 quantile_factor=cfg.quantile_factor)
        out.append(TrialResult(n, seed, "kmeans", score_region(km.box, inst.truth), tuple(km.flags)))
    return out


def summarize(results: Sequence[TrialResult]) -> list[dict]:
    """Mean and standard error of F1 per (n, method), ordered by n then method."""
    groups: dict[tuple[int, str], list[float]] = {}
    for r in results:
        groups.setdefault((r.n, r.method), []).append(r.score.f1)
    rows = []
    for (n, method), f1s in sorted(groups.items()):
        a = np.array(f1s)
        sem = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
        rows.append({"n": n, "method": method, "trials": int(a.size), "f1_mean": float(a.mean()),
                     "f1_sem": sem})
    return rows


def growth_config(n_train: int, sigma: float, multiples=(1, 2, 4, 8, 16)) -> PipelineConfig:
    """Theory threshold with a known sigma, bbox speeds, and shrinkage on the 1/n scale.

    Shrinkage values are c / n_train, so the pull-back vanishes as the sample grows.
    """
    deltas = (0.0,) + tuple(c / n_train for c in multiples)
    return PipelineConfig(core_fracs=(0.05,), threshold="theory", sigma=sigma, speeds=("bbox",),
                          deltas=deltas, selection="quantile", refit=False)
