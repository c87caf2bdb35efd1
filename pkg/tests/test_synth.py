from __future__ import annotations

import math

import numpy as np
import pytest

from ddgroup.region import Box
from ddgroup.synth import (MultiSynthConfig, PlantedRegion, SynthConfig, bench_trial, demo_instance,
                           f1_score, generate, generate_multi, read_truth, robustness_sweep,
                           sample_size_instance, score_region, summarize, write_truth)

TRUTH_FRACTION = (2 / 3 * 4 / 3) / 4


def _within_3se(frac, p, n):
    return abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_demo_inside_fraction():
    _, inside = generate(demo_instance(1000, 0))
    assert _within_3se(inside.mean(), TRUTH_FRACTION, 1000)
    _, inside = generate(demo_instance(100_000, 1))
    assert _within_3se(inside.mean(), TRUTH_FRACTION, 100_000)


def test_generator_layout_and_noise():
    cfg = demo_instance(500, 2)
    data, inside = generate(cfg)
    assert data.feature_names == ("x1", "x2", "intercept") and data.has_intercept_column
    assert np.all(data.features[:, 2] == 1.0)
    assert np.all(cfg.bbox.contains(data.features))
    clean = SynthConfig(cfg.bbox, cfg.truth, cfg.beta, 0.0, 5.0, 500, 2)
    d0, in0 = generate(clean)
    np.testing.assert_allclose(d0.targets[in0], d0.features[in0] @ cfg.beta, atol=1e-15)


def test_table1_instance():
    cfg = sample_size_instance(800, 0)
    np.testing.assert_allclose(cfg.truth.lo[:2], [-1 / 3, -1 / 3])
    np.testing.assert_allclose(cfg.truth.hi[:2], [1 / 3, 1 / 3])
    assert (cfg.sigma_in, cfg.sigma_out) == (0.3, 5.0)
    assert cfg.bbox.lo.tolist() == [-1, -1, 1] and cfg.bbox.hi.tolist() == [1, 1, 1]


def test_determinism_and_seed_dependence():
    a, _ = generate(demo_instance(200, 5))
    b, _ = generate(demo_instance(200, 5))
    c, _ = generate(demo_instance(200, 6))
    assert np.array_equal(a.features, b.features) and np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.features, c.features)


@pytest.mark.parametrize("kw", [dict(sigma_in=5.0), dict(sigma_in=6.0), dict(beta=[0, 0, 0]),
                                dict(truth=Box([-2, 0, 1], [0, 1, 1]))])
def test_config_validation(kw):
    base = demo_instance()
    args = dict(bbox=base.bbox, truth=base.truth, beta=base.beta, sigma_in=0.3, sigma_out=5.0)
    args.update(kw)
    with pytest.raises(ValueError):
        SynthConfig(**args)


def test_config_dict_round_trip(tmp_path):
    cfg = demo_instance(321, 9)
    back = SynthConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        SynthConfig.from_dict({**cfg.to_dict(), "extra": 1})
    write_truth(cfg, tmp_path / "t.json")
    t = read_truth(tmp_path / "t.json")
    np.testing.assert_array_equal(t.lo, cfg.truth.lo)


def test_score_examples():
    cfg = demo_instance()
    same = score_region(cfg.truth, cfg.truth)
    assert (same.precision, same.recall, same.f1) == (1.0, 1.0, 1.0)
    whole = score_region(cfg.bbox, cfg.truth)
    assert whole.precision == 2 / 9 and whole.recall == 1.0
    far = score_region(Box([0.5, 0.8, 1], [0.9, 0.9, 1]), cfg.truth)
    assert (far.precision, far.recall, far.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        score_region(Box([0], [1]), cfg.truth)
    with pytest.raises(ValueError):
        score_region(cfg.bbox, Box([0, 0, 1], [0, 0, 1]))


def test_score_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(200):
        lo1, lo2 = rng.uniform(-1, 0, 2), rng.uniform(-1, 0, 2)
        a = Box(lo1, lo1 + rng.uniform(0.1, 1, 2))
        b = Box(lo2, lo2 + rng.uniform(0.1, 1, 2))
        assert score_region(a, b).precision == pytest.approx(score_region(b, a).recall, abs=1e-15)


def test_f1_definition():
    assert f1_score(0.5, 0.5) == 0.5
    assert f1_score(0.0, 1.0) == 0.0


def test_multi_generator():
    bbox = Box([-1, -1, 1], [1, 1, 1])
    r1 = PlantedRegion(Box([-0.8, -0.8, 1], [-0.2, 0.8, 1]), np.array([1.0, -1.0, 0.5]), 0.0)
    r2 = PlantedRegion(Box([0.2, -0.8, 1], [0.8, 0.8, 1]), np.array([-1.0, 2.0, -0.5]), 0.0)
    data, labels = generate_multi(MultiSynthConfig(bbox, (r1, r2), 5.0, 2000, 0))
    for g, r in enumerate((r1, r2)):
        m = labels == g
        assert m.any()
        np.testing.assert_allclose(data.targets[m], data.features[m] @ r.beta, atol=1e-14)
    with pytest.raises(ValueError):
        MultiSynthConfig(bbox, (r1, PlantedRegion(Box([-0.5, 0, 1], [0, 1, 1]), r1.beta, 0.1)))


def test_robustness_sweep_shape():
    stats = robustness_sweep(demo_instance(1000, 0), [0.0, 0.45], seeds=4)
    assert len(stats.rows()) == 2 and stats.rows()[0]["offset"] == 0.0
    assert stats.mean["f1"][0] > stats.mean["f1"][1]
    assert stats.bad_core_offset == pytest.approx(1 / 6)
    assert stats.center_exit_offset == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        robustness_sweep(demo_instance(1000, 0), [0.0], core_halfwidth=0.01, seeds=1)


def test_bench_trial_and_summary():
    res = bench_trial(400, 0)
    assert [r.method for r in res] == ["ddgroup", "kmeans"]
    rows = summarize(res + bench_trial(400, 1))
    assert [(r["n"], r["method"], r["trials"]) for r in rows] == [(400, "ddgroup", 2), (400, "kmeans", 2)]
    assert all(0 <= r["f1_mean"] <= 1 for r in rows)
