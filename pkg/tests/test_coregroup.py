from __future__ import annotations

import numpy as np
import pytest

from ddgroup.coregroup import core_from_members, core_size, find_core_group
from ddgroup.dataset import from_arrays
from ddgroup.numerics import RankDeficientError, mse
from ddgroup.synth import demo_instance, generate
from oracles import exhaustive_core


def _random_mixed(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = np.where(X[:, 0] > 0, X @ [1.0, 2.0] + 0.1 * rng.normal(size=n), rng.normal(size=n))
    return from_arrays(X, y, add_intercept=True)


def test_core_size_rule():
    assert core_size(1000, 3, 0.05) == 50
    assert core_size(10, 3, 0.01) == 4
    assert core_size(30, 2, 0.05) == 3  # 1.5 rounds half up to 2, then max with d+1
    assert core_size(5, 2, 1.0) == 5
    with pytest.raises(ValueError):
        core_size(10, 2, 0.0)


def test_k_equals_n_gives_whole_dataset():
    data = _random_mixed(0, 12)
    core = find_core_group(data, 12)
    assert sorted(core.members.tolist()) == list(range(12))
    assert core.anchor == 0


def test_bad_k():
    data = _random_mixed(0, 12)
    with pytest.raises(ValueError):
        find_core_group(data, 3)
    with pytest.raises(ValueError):
        find_core_group(data, 13)


def test_all_rank_deficient():
    X = np.column_stack([np.arange(10.0), np.arange(10.0)])
    with pytest.raises(RankDeficientError):
        find_core_group(from_arrays(X, np.arange(10.0) ** 2), 4)


def test_planted_exact_line():
    rng = np.random.default_rng(3)
    # Exact linear responses on a patch in [0,1]^2 (not collinear in feature space).
    line = rng.uniform(0, 1, size=(30, 2))
    noise = rng.uniform(2, 4, size=(100, 2))
    X = np.vstack([noise[:50], line, noise[50:]])
    y = np.concatenate([rng.normal(size=50), 3 * line[:, 0] - line[:, 1] - 1, rng.normal(size=50)])
    data = from_arrays(X, y, add_intercept=True)
    core = find_core_group(data, 20)
    assert 50 <= core.anchor < 80
    assert core.fit.train_mse == pytest.approx(0.0, abs=1e-20)


def test_invariants_and_determinism():
    data = _random_mixed(4, 200)
    a = find_core_group(data, 15)
    b = find_core_group(data, 15)
    assert a.anchor == b.anchor and np.array_equal(a.members, b.members)
    assert a.k == 15
    X, Y = data.features[a.members], data.targets[a.members]
    assert a.fit.train_mse == pytest.approx(mse(a.fit.beta, X, Y), abs=1e-10)
    assert np.all(a.center >= X.min(axis=0)) and np.all(a.center <= X.max(axis=0))


@pytest.mark.parametrize("seed", range(5))
def test_matches_exhaustive_scan(seed):
    data = _random_mixed(seed, 120 + 20 * seed)
    k = 8 + seed
    core = find_core_group(data, k)
    best, anchor = exhaustive_core(data.features, data.targets, k)
    assert core.fit.train_mse == pytest.approx(best, abs=1e-10)
    assert core.anchor == anchor


def test_core_from_members_needs_enough_points():
    data = _random_mixed(0, 20)
    with pytest.raises(ValueError):
        core_from_members(data, [0, 1, 2])


def test_core_mostly_inside_truth():
    # Most core members come from the well-specified region.
    outside = []
    for s in range(5):
        inst = demo_instance(2000, s)
        data, inside = generate(inst)
        core = find_core_group(data, core_size(data.n, data.d, 0.05))
        outside.append(1 - inside[core.members].mean())
    assert np.mean(outside) < 0.1
