"""End-to-end subgroup search: core group, residual rejection, box growth, selection."""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .coregroup import CoreGroup, core_size, find_core_group
from .dataset import Dataset
from .neighbors import KnnIndex
from .numerics import LinearFit, RankDeficientError, abs_residual_quantile, mse, ols
from .region import Box, Region, grow_box, preset_directions, volume

THEORY_CONSTANT = 2.1


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ThresholdRule:
    """Residual cutoff for rejecting points.

    ``theory``: 2.1 * sigma * sqrt(ln n). ``affine``: sigma * (gamma1 * ||x|| + gamma2).
    ``constant``: rho. ``sigma=None`` means use the core group's estimate.
    """

    variant: str = "theory"
    sigma: float | None = None
    gamma1: float = 1.0
    gamma2: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        if self.variant not in ("theory", "affine", "constant"):
            raise ValueError(f"unknown threshold variant {self.variant!r}")
        if self.variant == "affine" and (self.gamma1 < 0 or self.gamma2 < 0):
            raise ValueError("gamma1 and gamma2 must be nonnegative")
        if self.variant == "constant" and self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def thresholds(self, X: np.ndarray, n: int, sigma: float | None = None) -> np.ndarray:
        m = X.shape[0]
        if self.variant == "constant":
            return np.full(m, float(self.rho))
        s = self.sigma if self.sigma is not None else sigma
        if s is None:
            raise ValueError("threshold needs sigma: none given and none estimated")
        if self.variant == "theory":
            return np.full(m, THEORY_CONSTANT * s * math.sqrt(math.log(n)))
        return s * self.gamma1 * np.linalg.norm(X, axis=1) + s * self.gamma2

    def params(self) -> dict:
        if self.variant == "constant":
            return {"threshold": "constant", "rho": self.rho}
        out = {"threshold": self.variant, "sigma": self.sigma}
        if self.variant == "affine":
            out.update(gamma1=self.gamma1, gamma2=self.gamma2)
        return out


def reject_labels(fit: LinearFit | np.ndarray, data: Dataset, rule: ThresholdRule,
                  n: int | None = None) -> np.ndarray:
    """Boolean rejection label per row: |y - beta.x| >= rho(x)."""
    beta = fit.beta if isinstance(fit, LinearFit) else np.asarray(fit, dtype=float)
    sigma = fit.sigma_hat if isinstance(fit, LinearFit) else None
    if rule.variant != "constant" and rule.sigma is None and sigma is None:
        raise ValueError("sigma cannot be estimated from a core group with k <= d")
    resid = np.abs(data.targets - data.features @ beta)
    return resid >= rule.thresholds(data.features, data.n if n is None else n, sigma)


@dataclass(frozen=True)
class GridPoint:
    rule: ThresholdRule
    speed: str = "uniform"
    delta: float = 0.0
    core_frac: float | None = 0.05
    core_k: int | None = None

    def k_for(self, n: int, d: int) -> int:
        if self.core_k is not None:
            return self.core_k
        return core_size(n, d, self.core_frac)

    def params(self) -> dict:
        out = {"core_frac": self.core_frac, "core_k": self.core_k, "speed": self.speed,
               "delta": self.delta}
        out.update(self.rule.params())
        return out


@dataclass(frozen=True)
class PipelineConfig:
    core_fracs: tuple[float, ...] = (0.01, 0.05, 0.1, 0.15, 0.2)
    core_sizes: tuple[int, ...] = ()
    threshold: str = "affine"
    gamma1s: tuple[float, ...] = tuple(2.0 ** e for e in range(-4, 6))
    gamma2s: tuple[float, ...] = (0.0,)
    rhos: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    sigma: float | None = None
    speeds: tuple[str, ...] = ("uniform", "bbox")
    deltas: tuple[float, ...] = (0.0, 0.1, 0.05, 0.025, 0.01)
    p_min: float = 0.05
    refit: bool = True
    selection: str = "valmse"
    quantile_q: float = 0.9
    quantile_factor: float = 3.0
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p_min <= 1.0:
            raise ValueError(f"p_min must be in [0, 1], got {self.p_min}")
        if self.selection not in ("valmse", "quantile"):
            raise ValueError(f"unknown selection rule {self.selection!r}")
        if not (self.core_fracs or self.core_sizes):
            raise ValueError("empty core-size grid")
        if not self.speeds or not self.deltas:
            raise ValueError("empty speed or shrinkage grid")
        if any(dl < 0 for dl in self.deltas):
            raise ValueError("shrinkage values must be nonnegative")
        if self.threshold == "affine" and not (self.gamma1s and self.gamma2s):
            raise ValueError("empty gamma grid")
        if self.threshold == "constant" and not self.rhos:
            raise ValueError("empty rho grid")

    def rules(self) -> list[ThresholdRule]:
        if self.threshold == "theory":
            return [ThresholdRule("theory", self.sigma)]
        if self.threshold == "constant":
            return [ThresholdRule("constant", rho=r) for r in self.rhos]
        if self.threshold == "affine":
            return [ThresholdRule("affine", self.sigma, g1, g2)
                    for g1, g2 in itertools.product(self.gamma1s, self.gamma2s)]
        raise ValueError(f"unknown threshold variant {self.threshold!r}")

    def grid(self) -> list[GridPoint]:
        cores = [dict(core_k=k, core_frac=None) for k in self.core_sizes] or \
                [dict(core_frac=p) for p in self.core_fracs]
        return [GridPoint(rule, speed, delta, **core)
                for core, rule, speed, delta in itertools.product(cores, self.rules(), self.speeds, self.deltas)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroupReport:
    region: Region
    box: Box
    beta: np.ndarray
    core_beta: np.ndarray
    sigma_hat: float | None
    q_hat: float
    rejected_count: int
    core_anchor: int
    core_size: int
    volume: float
    train_frac: float
    val_frac: float
    train_mse: float | None
    val_mse: float | None
    hyperparameters: dict
    test_frac: float | None = None
    test_mse: float | None = None
    seed: int = 0
    flags: list[str] = field(default_factory=list)
    feature_names: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta

    def inside(self, X) -> np.ndarray:
        return np.atleast_1d(self.box.contains(np.asarray(X, dtype=float)))

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else float(v)
        return {
            "region": self.region.to_dict(self.feature_names or None),
            "beta": [float(b) for b in self.beta],
            "core_beta": [float(b) for b in self.core_beta],
            "sigma_hat": num(self.sigma_hat),
            "q_hat": num(self.q_hat) if math.isfinite(self.q_hat) else None,
            "rejected_count": int(self.rejected_count),
            "core_anchor": int(self.core_anchor),
            "core_size": int(self.core_size),
            "volume": float(self.volume),
            "fractions": {"train": num(self.train_frac), "val": num(self.val_frac),
                          "test": num(self.test_frac)},
            "mse": {"train": num(self.train_mse), "val": num(self.val_mse), "test": num(self.test_mse)},
            "hyperparameters": self.hyperparameters,
            "seed": int(self.seed),
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _inside_mse(beta, X, Y, mask) -> float | None:
    return mse(beta, X[mask], Y[mask]) if mask.any() else None


def evaluate(report: GroupReport, data: Dataset) -> tuple[float, float | None]:
    """Fraction of ``data`` inside the report's region and the model's MSE there."""
    if data.n == 0:
        return 0.0, None
    mask = report.inside(data.features)
    return float(mask.mean()), _inside_mse(report.beta, data.features, data.targets, mask)


def with_test(report: GroupReport, test: Dataset) -> GroupReport:
    frac, err = evaluate(report, test)
    return replace(report, test_frac=frac, test_mse=err)


def fit_from_core(train: Dataset, val: Dataset, core: CoreGroup, point: GridPoint,
                  refit: bool = True, quantile_q: float = 0.9, seed: int = 0,
                  bbox: Box | None = None) -> GroupReport:
    """Phases 2-3 from a given core group: reject, grow the box, refit, score on val."""
    fit = core.fit
    rejected = reject_labels(fit, train, point.rule)
    bbox = Box.bounding(train.features) if bbox is None else bbox
    U = preset_directions(bbox, point.speed)
    region = grow_box(core.center, train.features[rejected], U, point.delta, bbox)
    box = region.box()
    flags = []
    in_train = np.atleast_1d(box.contains(train.features))
    beta = fit.beta
    if refit:
        if not in_train.any():
            flags.append("degenerate")
        else:
            try:
                beta = ols(train.features[in_train], train.targets[in_train]).beta
            except RankDeficientError:
                flags.append("refit_rank_deficient")
    in_val = np.atleast_1d(box.contains(val.features)) if val.n else np.zeros(0, dtype=bool)
    val_mse = _inside_mse(beta, val.features, val.targets, in_val)
    if val_mse is None and "degenerate" not in flags:
        flags.append("degenerate")
    q_hat = (abs_residual_quantile(fit.beta, val.features[in_val], val.targets[in_val], quantile_q)
             if in_val.any() else math.inf)
    return GroupReport(
        region=region, box=box, beta=beta, core_beta=fit.beta, sigma_hat=fit.sigma_hat,
        q_hat=q_hat, rejected_count=int(rejected.sum()), core_anchor=core.anchor,
        core_size=core.k, volume=volume(box, bbox.nondegenerate_axes()),
        train_frac=float(in_train.mean()), val_frac=float(in_val.mean()) if val.n else 0.0,
        train_mse=_inside_mse(beta, train.features, train.targets, in_train), val_mse=val_mse,
        hyperparameters=point.params(), seed=seed, flags=flags,
        feature_names=train.feature_names)


def fit_one(train: Dataset, val: Dataset, point: GridPoint, refit: bool = True,
            index: KnnIndex | None = None, seed: int = 0) -> GroupReport:
    k = point.k_for(train.n, train.d)
    core = find_core_group(train, k, index)
    return fit_from_core(train, val, core, point, refit, seed=seed)


def _valmse_key(i: int, r: GroupReport):
    return (r.val_mse, -r.volume, i)


def select_valmse(reports: Sequence[GroupReport], p_min: float) -> tuple[int, bool]:
    """Index of the lowest-val-MSE region holding at least ``p_min`` of val, and a fallback flag."""
    live = [(i, r) for i, r in enumerate(reports) if not r.degenerate]
    eligible = [(i, r) for i, r in live if r.val_frac >= p_min]
    if eligible:
        return min(eligible, key=lambda t: _valmse_key(*t))[0], False
    if live:
        return min(live, key=lambda t: (-t[1].val_frac, t[1].val_mse, t[0]))[0], True
    return 0, True


def quantile_select(reports: Sequence[GroupReport], factor: float = 3.0) -> int:
    """Index of the largest-volume region whose val residual quantile is at most factor * sigma_hat."""
    ok = [(i, r) for i, r in enumerate(reports)
          if r.sigma_hat is not None and r.q_hat <= factor * r.sigma_hat]
    if not ok:
        raise SelectionError(f"no candidate satisfies q_hat <= {factor} * sigma_hat")
    return min(ok, key=lambda t: (-t[1].volume, t[0]))[0]


def _closest_to_quantile_rule(reports: Sequence[GroupReport]) -> int:
    def ratio(r):
        return r.q_hat / r.sigma_hat if r.sigma_hat else math.inf
    return min(range(len(reports)), key=lambda i: (ratio(reports[i]), -reports[i].volume, i))


@dataclass
class SweepResult:
    best: GroupReport
    log: list[GroupReport]
    best_index: int
    fallback: bool = False


def _run_core_block(args) -> list[GroupReport]:
    train, val, k, points, refit, q, seed = args
    try:
        core = find_core_group(train, k)
    except (ValueError, RankDeficientError) as exc:
        raise SelectionError(f"core group of size {k}: {exc}") from exc
    bbox = Box.bounding(train.features)
    return [fit_from_core(train, val, core, p, refit, q, seed, bbox) for p in points]


def run_grid(train: Dataset, val: Dataset, cfg: PipelineConfig) -> list[GroupReport]:
    """Evaluate every grid point, in grid order. Core groups are shared across points with equal k."""
    if val.n == 0:
        raise ValueError("validation set is empty")
    points = cfg.grid()
    ks = [p.k_for(train.n, train.d) for p in points]
    blocks: dict[int, list[int]] = {}
    for i, k in enumerate(ks):
        blocks.setdefault(k, []).append(i)
    usable = {k: idx for k, idx in blocks.items() if train.d < k <= train.n}
    if not usable:
        raise SelectionError(f"training set of {train.n} rows is too small for any core size")
    jobs = [(train, val, k, [points[i] for i in idx], cfg.refit, cfg.quantile_q, cfg.seed)
            for k, idx in usable.items()]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_core_block, jobs))
    else:
        results = [_run_core_block(j) for j in jobs]
    out: list[GroupReport | None] = [None] * len(points)
    for idx, reps in zip(usable.values(), results):
        for i, r in zip(idx, reps):
            out[i] = r
    return [r for r in out if r is not None]


def sweep(train: Dataset, val: Dataset, cfg: PipelineConfig) -> SweepResult:
    log = run_grid(train, val, cfg)
    if cfg.selection == "quantile":
        try:
            i, fallback = quantile_select(log, cfg.quantile_factor), False
        except SelectionError:
            i, fallback = _closest_to_quantile_rule(log), True
    else:
        i, fallback = select_valmse(log, cfg.p_min)
    best = log[i]
    if fallback:
        best = replace(best, flags=best.flags + ["fallback"])
    return SweepResult(best, log, i, fallback)


def fit_multi(train: Dataset, val: Dataset, cfg: PipelineConfig, groups: int,
              logs: list | None = None) -> list[GroupReport]:
    """Run the sweep ``groups`` times, removing training points claimed by earlier regions.

    Validation points inside an earlier region are also withheld from later rounds.
    Pass a list as ``logs`` to collect each round's ``SweepResult``.
    """
    if groups < 1:
        raise ValueError("need at least one group")
    reports: list[GroupReport] = []
    tr, va = train, val
    for g in range(groups):
        try:
            if va.n == 0:
                raise SelectionError("validation set exhausted")
            result = sweep(tr, va, cfg)
        except SelectionError:
            if not reports:
                raise
            reports[-1].flags.append("exhausted")
            break
        if logs is not None:
            logs.append(result)
        best = result.best
        best.hyperparameters = {**best.hyperparameters, "round": g}
        reports.append(best)
        keep_tr = ~best.inside(tr.features)
        keep_va = ~best.inside(va.features)
        if not keep_tr.any():
            if g + 1 < groups:
                best.flags.append("exhausted")
            break
        tr = tr.subset(np.flatnonzero(keep_tr))
        va = va.subset(np.flatnonzero(keep_va))
    return reports


def baseline_mse(train: Dataset, data: Dataset) -> float:
    """MSE on ``data`` of one linear model fit to all of ``train``."""
    return mse(ols(train.features, train.targets).beta, data.features, data.targets)


def config_from_dict(d: dict[str, Any]) -> PipelineConfig:
    known = PipelineConfig.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ValueError(f"unknown pipeline options: {sorted(unknown)}")
    clean = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    return PipelineConfig(**clean)
