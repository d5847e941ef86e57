import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from corridorbo.gp import GpHyperparams, ObservationSet
from corridorbo.turbo import (
    TrustRegionState,
    TurboConfig,
    TurboRun,
    gen_candidates,
    region_box,
    run_turbo,
    tr_side_lengths,
    update_region,
    write_region_csv,
)


def _region(center, L=0.8, ls=None):
    c = np.asarray(center, dtype=float)
    obs = ObservationSet(c[None, :], np.array([0.0]))
    tr = TrustRegionState(center=c, L=L, local_obs=obs)
    if ls is not None:
        tr.hyper = GpHyperparams(np.asarray(ls, dtype=float), 1.0, 1e-6, 0.0)
    return tr


def test_side_lengths_hand_values():
    assert np.allclose(tr_side_lengths(0.8, [1.0, 4.0]), [0.4, 1.6], atol=1e-15)
    assert np.allclose(tr_side_lengths(0.5, [0.3] * 6), 0.5, atol=1e-15)


def test_side_length_volume_1000_draws():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 120))
        ls = np.exp(rng.uniform(math.log(0.005), math.log(10), d))
        L = rng.uniform(2**-7, 1.6)
        side = tr_side_lengths(L, ls)
        assert abs(np.sum(np.log(side)) - d * math.log(L)) <= 1e-9 * max(1.0, d)
        assert abs(np.prod(side) - L**d) <= 1e-9 * L**d


def test_three_successes_double_then_cap():
    cfg = TurboConfig()
    tr = _region([0.5])
    for _ in range(3):
        update_region(tr, True, cfg)
    assert tr.L == 1.6
    for _ in range(6):
        update_region(tr, True, cfg)
    assert tr.L == 1.6


def test_fifteen_failures_halve():
    cfg = TurboConfig()
    tr = _region([0.5])
    for i in range(14):
        update_region(tr, False, cfg)
        assert tr.L == 0.8
    update_region(tr, False, cfg)
    assert tr.L == 0.4 and tr.fail_count == 0


def test_repeated_halving_kills_region():
    cfg = TurboConfig()
    tr = _region([0.5])
    halvings = 0
    while tr.alive:
        for _ in range(15):
            update_region(tr, False, cfg)
        halvings += 1
    # 0.8 / 2^7 = 0.00625 is the first value below 2^-7
    assert halvings == 7 and tr.L < cfg.L_min


@given(st.lists(st.booleans(), min_size=1, max_size=80))
def test_counter_and_length_invariants(outcomes):
    cfg = TurboConfig()
    tr = _region([0.5])
    for ok in outcomes:
        update_region(tr, ok, cfg)
        assert tr.succ_count >= 0 and tr.fail_count >= 0
        assert tr.succ_count == 0 or tr.fail_count == 0
        if tr.alive:
            assert cfg.L_min <= tr.L <= cfg.L_max


def test_respawn_restarts_at_l_init():
    run = TurboRun(lambda x: -float(np.sum(x**2)), np.array([[-1.0, 1.0]] * 2),
                   TurboConfig(n_regions=2, max_evals=40, n_init=8))
    run.regions[0].L = 0.001
    run.regions[0].alive = False
    before = run.n_evals
    run._respawn(0)
    assert run.regions[0].L == 0.8 and run.regions[0].alive and run.regions[0].restarts == 1
    assert run.n_evals == before + 4


@given(arrays(float, 7, elements=st.floats(0, 1)), st.floats(0.01, 1.6), st.integers(0, 1000))
def test_candidates_inside_clipped_box(center, L, seed):
    rng = np.random.default_rng(seed)
    tr = _region(center, L, ls=rng.uniform(0.1, 3, 7))
    box = region_box(tr)
    c = gen_candidates(tr, 200, rng)
    assert np.all(c >= box[:, 0]) and np.all(c <= box[:, 1])
    assert np.all((c >= 0) & (c <= 1))


def test_one_dimension_always_perturbed():
    tr = _region([0.5], 0.8)
    c = gen_candidates(tr, 500, np.random.default_rng(0))
    assert np.all(c[:, 0] != 0.5)


def test_corner_center_feasible():
    tr = _region(np.ones(30), 1.6)
    c = gen_candidates(tr, 300, np.random.default_rng(1))
    assert np.all((c >= 0) & (c <= 1))
    # sparse perturbation: about 20 of 30 coordinates move on average
    moved = (c != 1.0).sum(1)
    assert moved.min() >= 1 and 15 < moved.mean() < 25


def sphere(x):
    return -float(np.sum((np.asarray(x) - 0.3) ** 2))


def test_single_region_whole_box_sphere():
    bounds = np.array([[-1.0, 1.0]] * 2)
    cfg = TurboConfig(n_regions=1, batch_q=1, L_init=4.0, L_max=4.0, tau_succ=10**6, tau_fail=10**6,
                      max_evals=56, n_init=4, seed=0)
    tr = run_turbo(sphere, bounds, cfg)
    assert len(tr) == 60
    grid = np.linspace(-1, 1, 201)
    oracle = max(sphere([a, b]) for a in grid for b in grid)
    assert tr.best_value >= oracle - 1e-2


def test_run_invariants_and_determinism(tmp_path):
    bounds = np.array([[-1.0, 1.0]] * 6)
    cfg = TurboConfig(n_regions=3, batch_q=4, max_evals=40, seed=3, gp_restarts=2)
    a = run_turbo(sphere, bounds, cfg)
    b = run_turbo(sphere, bounds, cfg)
    assert a.to_json() == b.to_json()
    assert np.all(np.diff(a.best_sequence()) >= 0)
    assert a.meta["n_evals"] == 40
    assert len(a) == 12 + 40
    write_region_csv(a.region_log, tmp_path / "r.csv", "hdr")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[:2] == ["# hdr", "step,region,L,best"]
    threaded = run_turbo(sphere, bounds, TurboConfig(**{**cfg.to_dict(), "threads": 3}))
    assert threaded.to_json() == a.to_json()


def test_proposals_lie_in_proposing_region(monkeypatch):
    import corridorbo.turbo as turbo

    boxes = {}
    real = turbo.gen_candidates

    def recording(tr, n, rng):
        boxes[id(tr)] = region_box(tr)
        return real(tr, n, rng)

    monkeypatch.setattr(turbo, "gen_candidates", recording)
    bounds = np.array([[0.0, 1.0]] * 5)
    run = TurboRun(sphere, bounds, TurboConfig(n_regions=2, batch_q=3, max_evals=30, seed=1, gp_restarts=2))
    checked = 0
    while not run.done():
        boxes.clear()
        ids = [id(tr) for tr in run.regions]
        n0 = len(run.trace)
        run.step()
        for r in run.trace.records[n0:]:
            if r.phase == "opt":
                box = boxes[ids[r.region]]
                assert np.all(r.point >= box[:, 0]) and np.all(r.point <= box[:, 1])
                checked += 1
    assert checked > 0


def test_config_validation():
    with pytest.raises(ValueError):
        TurboConfig(L_init=2.0)
    with pytest.raises(ValueError):
        TurboConfig(L_min=0.0)
