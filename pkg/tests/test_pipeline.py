from __future__ import annotations

import math

import numpy as np
import pytest

from ddgroup.coregroup import core_from_members, find_core_group
from ddgroup.dataset import SplitSpec, from_arrays, split
from ddgroup.pipeline import (GridPoint, GroupReport, PipelineConfig, SelectionError, ThresholdRule,
                              config_from_dict, fit_from_core, fit_multi, fit_one, quantile_select,
                              reject_labels, run_grid, select_valmse, sweep, with_test)
from ddgroup.region import Box, Region
from ddgroup.synth import demo_instance, generate, score_region

SMALL = dict(core_fracs=(0.05,), gamma1s=(1.0, 4.0), speeds=("uniform",), deltas=(0.0, 0.05))


def _data(n=600, seed=0):
    data, _ = generate(demo_instance(n, seed))
    return data


def _cand(val_mse, val_frac, vol, sigma=1.0, q=1.0, flags=()):
    b = Box([0, 0], [vol, 1])
    return GroupReport(region=Region(np.zeros(2), (), b), box=b, beta=np.zeros(2), core_beta=np.zeros(2),
                       sigma_hat=sigma, q_hat=q, rejected_count=0, core_anchor=0, core_size=5,
                       volume=vol, train_frac=val_frac, val_frac=val_frac, train_mse=val_mse,
                       val_mse=val_mse, hyperparameters={}, flags=list(flags))


def test_theory_threshold_value():
    rho = ThresholdRule("theory", sigma=0.3).thresholds(np.zeros((1, 2)), 1000)[0]
    assert rho == pytest.approx(2.1 * 0.3 * math.sqrt(math.log(1000)), rel=1e-15)
    assert rho == pytest.approx(1.6558, abs=5e-5)
    X = np.ones((2, 1))
    data = from_arrays(X, [1.6, -1.7])
    labels = reject_labels(np.zeros(1), data, ThresholdRule("theory", sigma=0.3), n=1000)
    assert labels.tolist() == [False, True]


def test_theory_threshold_n_one():
    data = from_arrays(np.ones((2, 1)), [0.0, 1e-9])
    assert reject_labels(np.zeros(1), data, ThresholdRule("theory", sigma=1.0), n=1).tolist() == [True, True]


def test_affine_and_constant_thresholds():
    r = ThresholdRule("affine", sigma=2.0, gamma1=1.0, gamma2=0.0)
    assert r.thresholds(np.array([[3.0, 0.0]]), 10)[0] == 6.0
    assert ThresholdRule("constant", rho=4.0).thresholds(np.zeros((3, 2)), 10).tolist() == [4.0] * 3
    with pytest.raises(ValueError):
        ThresholdRule("affine", gamma1=-1)
    with pytest.raises(ValueError):
        ThresholdRule("bogus")


def test_sigma_needed():
    data = _data(50)
    core = core_from_members(data, np.arange(3, 4 + 3))
    with pytest.raises(ValueError):
        ThresholdRule("theory").thresholds(np.zeros((1, 3)), 10, None)
    # k = d + 1 still gives a sigma estimate with one degree of freedom.
    assert core.fit.sigma_hat is not None


def test_fit_one_recovers_truth():
    hits = 0
    for s in range(50):
        inst = demo_instance(1000, s)
        data, _ = generate(inst)
        rep = fit_one(data, data, GridPoint(ThresholdRule("theory", sigma=0.3), "uniform", 0.025, 0.05))
        hits += score_region(rep.box, inst.truth).f1 >= 0.9
    assert hits >= 40


def test_no_rejections_gives_train_bbox():
    data = _data(300)
    rep = fit_one(data, data, GridPoint(ThresholdRule("constant", rho=1e9)))
    assert rep.rejected_count == 0
    bb = Box.bounding(data.features)
    np.testing.assert_array_equal(rep.box.lo, bb.lo)
    np.testing.assert_array_equal(rep.box.hi, bb.hi)


def test_everything_rejected_still_contains_center():
    data = _data(300)
    core = find_core_group(data, 30)
    rep = fit_from_core(data, data, core, GridPoint(ThresholdRule("constant", rho=0.0)))
    assert rep.box.contains(core.center)


def test_report_fields():
    data = _data(600)
    tr, va, te = split(data, SplitSpec(seed=1))
    rep = with_test(sweep(tr, va, PipelineConfig(**SMALL)).best, te)
    for f in (rep.train_frac, rep.val_frac, rep.test_frac):
        assert 0.0 <= f <= 1.0
    d = rep.to_dict()
    assert set(d) >= {"region", "beta", "sigma_hat", "fractions", "mse", "hyperparameters", "seed", "flags"}
    far = from_arrays(np.array([[50.0, 50.0, 1.0]]), [0.0], ["x1", "x2", "intercept"])
    assert with_test(rep, far).test_mse is None


def test_degenerate_flag_when_region_empty_of_train():
    data = _data(200)
    core = find_core_group(data, 20)
    val = from_arrays(np.array([[5.0, 5.0, 1.0]]), [0.0], ["x1", "x2", "intercept"])
    rep = fit_from_core(data, val, core, GridPoint(ThresholdRule("constant", rho=0.0)))
    assert "degenerate" in rep.flags and rep.val_mse is None


def test_valmse_rule():
    a, b = _cand(0.2, 0.5, 1.0), _cand(0.1, 0.06, 1.0)
    assert select_valmse([a, b], 0.05) == (1, False)
    assert select_valmse([a, b], 0.1) == (0, False)
    # Tie on val MSE: the larger region, then grid order.
    assert select_valmse([_cand(0.1, 0.5, 1.0), _cand(0.1, 0.5, 2.0)], 0.05) == (1, False)
    assert select_valmse([_cand(0.1, 0.5, 1.0), _cand(0.1, 0.5, 1.0)], 0.05) == (0, False)
    # Nobody qualifies: largest val fraction, flagged.
    assert select_valmse([_cand(0.1, 0.02, 1.0), _cand(0.5, 0.04, 1.0)], 0.05) == (1, True)
    # Degenerate candidates lose unless nothing else exists.
    deg = _cand(None, 0.0, 5.0, flags=["degenerate"])
    assert select_valmse([deg, _cand(9.0, 0.01, 1.0)], 0.05) == (1, True)
    assert select_valmse([deg], 0.05) == (0, True)


def test_quantile_rule():
    assert quantile_select([_cand(1, 1, 1.0, sigma=1.0, q=2.0)]) == 0
    assert quantile_select([_cand(1, 1, 1.0, q=1.0), _cand(1, 1, 2.0, q=1.0)]) == 1
    with pytest.raises(SelectionError):
        quantile_select([_cand(1, 1, 1.0, sigma=1.0, q=3.01)])
    assert quantile_select([_cand(1, 1, 9.0, q=3.01), _cand(1, 1, 1.0, q=3.0)]) == 1


def test_sweep_single_point_and_log():
    data = _data(600)
    tr, va, _ = split(data, SplitSpec(seed=0))
    one = PipelineConfig(core_fracs=(0.05,), gamma1s=(2.0,), speeds=("bbox",), deltas=(0.0,))
    res = sweep(tr, va, one)
    assert len(res.log) == 1 and res.best_index == 0
    cfg = PipelineConfig(**SMALL)
    log = run_grid(tr, va, cfg)
    assert len(log) == len(cfg.grid())
    keys = [tuple(sorted(r.hyperparameters.items())) for r in log]
    assert len(set(keys)) == len(keys)
    assert [r.hyperparameters for r in log] == [p.params() for p in cfg.grid()]


def test_sweep_empty_val():
    data = _data(100)
    with pytest.raises(ValueError):
        sweep(data, data.subset([]), PipelineConfig(**SMALL))


def test_sweep_deterministic_json():
    data = _data(600, 3)
    tr, va, _ = split(data, SplitSpec(seed=3))
    a = sweep(tr, va, PipelineConfig(**SMALL)).best.to_json()
    b = sweep(tr, va, PipelineConfig(**SMALL)).best.to_json()
    assert a == b


def test_jobs_do_not_change_result():
    data = _data(600, 4)
    tr, va, _ = split(data, SplitSpec(seed=4))
    base = dict(SMALL, core_fracs=(0.05, 0.1))
    a = sweep(tr, va, PipelineConfig(**base, jobs=1))
    b = sweep(tr, va, PipelineConfig(**base, jobs=2))
    assert [r.to_json() for r in a.log] == [r.to_json() for r in b.log]


def test_fit_multi_one_group_equals_sweep():
    data = _data(600, 5)
    tr, va, _ = split(data, SplitSpec(seed=5))
    cfg = PipelineConfig(**SMALL)
    single = sweep(tr, va, cfg).best
    multi = fit_multi(tr, va, cfg, 1)
    assert len(multi) == 1
    assert np.array_equal(multi[0].box.lo, single.box.lo) and np.array_equal(multi[0].box.hi, single.box.hi)
    assert multi[0].hyperparameters["round"] == 0


def test_fit_multi_second_core_outside_first_region():
    data = _data(1500, 6)
    tr, va, _ = split(data, SplitSpec(seed=6))
    cfg = PipelineConfig(**SMALL)
    logs = []
    reps = fit_multi(tr, va, cfg, 2, logs)
    assert len(logs) == len(reps)
    if len(reps) == 2:
        rest = tr.subset(np.flatnonzero(~reps[0].inside(tr.features)))
        core = find_core_group(rest, reps[1].core_size)
        assert not np.any(reps[0].inside(rest.features[core.members]))


def test_fit_multi_exhausts():
    data = _data(400, 7)
    tr, va, _ = split(data, SplitSpec(seed=7))
    cfg = PipelineConfig(core_fracs=(0.05,), threshold="constant", rhos=(1e9,), speeds=("uniform",),
                         deltas=(0.0,))
    reps = fit_multi(tr, va, cfg, 3)
    assert len(reps) == 1 and "exhausted" in reps[0].flags
    with pytest.raises(ValueError):
        fit_multi(tr, va, cfg, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(p_min=1.5)
    with pytest.raises(ValueError):
        PipelineConfig(selection="best")
    with pytest.raises(ValueError):
        PipelineConfig(deltas=())
    with pytest.raises(ValueError):
        config_from_dict({"bogus": 1})
    cfg = config_from_dict({"deltas": [0.0, 0.1], "threshold": "constant"})
    assert cfg.deltas == (0.0, 0.1) and len(cfg.rules()) == 6


def test_default_grid_size():
    # 5 core fractions x 10 gammas x 2 speeds x 5 shrinkages.
    assert len(PipelineConfig().grid()) == 500
