import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.stats import norm

from corridorbo.bo_core import (
    BoConfig,
    RunTrace,
    cycle_index,
    expected_improvement,
    propose_by_ei,
    run_iterative_bo,
    run_vanilla_bo,
    score_ei,
)
from corridorbo.gp import GpHyperparams, ObservationSet, condition


def _ei_numeric(mu, sigma, f_star, xi):
    g = lambda z: max(0.0, mu + sigma * z - f_star - xi) * norm.pdf(z)
    lo = (f_star + xi - mu) / sigma
    val, _ = integrate.quad(g, max(lo, -12.0), 12.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def test_ei_phi_zero():
    assert float(expected_improvement(1.01, 1.0, 1.0, 0.01)) == pytest.approx(0.398942, abs=1e-6)


def test_ei_closed_form_vs_integration_grid():
    worst = 0.0
    for mu in np.linspace(-2, 2, 9):
        for sigma in (0.05, 0.3, 1.0, 2.5):
            a = float(expected_improvement(mu, sigma, 0.2, 0.01))
            worst = max(worst, abs(a - _ei_numeric(mu, sigma, 0.2, 0.01)))
    assert worst <= 1e-6


@given(st.floats(-50, 50), st.floats(0, 20), st.floats(-50, 50), st.floats(0, 0.99))
def test_ei_nonnegative(mu, sigma, f, xi):
    assert expected_improvement(mu, sigma, f, xi) >= 0.0
    assert expected_improvement(mu, sigma, f, xi, literal_sigma2=True) >= 0.0


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_ei_zero_sigma_limit_exact(mu, f):
    assert float(expected_improvement(mu, 0.0, f, 0.01)) == max(mu - f - 0.01, 0.0)


def test_ei_vanishes_as_sigma_shrinks():
    vals = [float(expected_improvement(0.5, s, 1.0, 0.01)) for s in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert vals[-1] < 1e-12 and all(a >= b for a, b in zip(vals, vals[1:]))


def test_ei_monotone_in_mu():
    mu = np.linspace(-3, 3, 200)
    for s in (0.1, 1.0, 3.0):
        ei = expected_improvement(mu, np.full_like(mu, s), 0.0, 0.01)
        assert np.all(np.diff(ei) >= -1e-15)


def test_ei_literal_variance_form():
    # with s = sigma^2 the formula is the standard one evaluated at scale sigma^2
    assert float(expected_improvement(1.0, 0.5, 0.5, 0.0, literal_sigma2=True)) == pytest.approx(
        float(expected_improvement(1.0, 0.25, 0.5, 0.0)), rel=1e-14)


def _quad_model(d=2):
    g = np.linspace(0.05, 0.95, 7)
    x = np.array([[a, b] for a in g for b in g])
    y = -((x - 0.4) ** 2).sum(1)
    return condition(ObservationSet(x, y), GpHyperparams(np.full(d, 0.4), 0.2, 1e-8, -0.2))


def test_propose_single_candidate_returned():
    m = _quad_model()
    c = np.array([[0.9, 0.9]])
    assert np.array_equal(propose_by_ei(m, None, 0.0, BoConfig(), np.random.default_rng(0), candidates=c), c[0])


def test_propose_matches_exhaustive_scoring():
    m = _quad_model()
    rng = np.random.default_rng(1)
    cand = rng.random((500, 2))
    cand[17] = [0.4, 0.4]
    cfg = BoConfig()
    best = propose_by_ei(m, None, m.values.max(), cfg, rng, candidates=cand)
    mu, var = m.predict(cand)
    scores = [float(expected_improvement(a, math.sqrt(v), m.values.max(), 0.01)) for a, v in zip(mu, var)]
    assert np.array_equal(best, cand[int(np.argmax(scores))])
    assert np.linalg.norm(best - [0.4, 0.4]) < 0.1


def test_batched_scoring_equals_unbatched():
    m = _quad_model()
    cand = np.random.default_rng(2).random((500, 2))
    a = score_ei(m, cand, 0.0, BoConfig())
    b = score_ei(m, cand, 0.0, BoConfig(n_batches=1, batch_size=500))
    c = score_ei(m, cand, 0.0, BoConfig(threads=3))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)
    assert np.array_equal(a, c)


def test_propose_seeded():
    m = _quad_model()
    box = np.tile([0.0, 1.0], (2, 1))
    a = propose_by_ei(m, box, 0.0, BoConfig(), np.random.default_rng(3))
    b = propose_by_ei(m, box, 0.0, BoConfig(), np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_config_validation():
    with pytest.raises(ValueError):
        BoConfig(n_batches=3, batch_size=50)
    with pytest.raises(ValueError):
        BoConfig(xi=1.0)


def sphere(x):
    return -float(np.sum((np.asarray(x) - 0.3) ** 2))


def test_vanilla_bo_sphere_2d():
    bounds = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    tr = run_vanilla_bo(sphere, bounds, BoConfig(max_iters=50, seed=0, gp_restarts=4))
    # grid oracle: the optimum of the sphere is 0 at (0.3, 0.3)
    grid = np.linspace(-1, 1, 201)
    oracle = max(sphere([a, b]) for a in grid for b in grid)
    assert abs(oracle) <= 1e-12
    assert tr.best_value >= oracle - 1e-2
    assert np.all(np.diff(tr.best_sequence()) >= 0)


def test_vanilla_zero_iterations_only_initial():
    bounds = np.array([[-1.0, 1.0]] * 3)
    tr = run_vanilla_bo(sphere, bounds, BoConfig(max_iters=0))
    assert len(tr) == 6 and all(r.phase == "init" for r in tr.records)


@pytest.mark.parametrize("d", [1, 2, 57, 114])
def test_cycle_index_exact(d):
    for n in range(1, 3 * d + 1):
        b = cycle_index(n, d)
        assert b == (n - 1) % d + 1
    assert cycle_index(1, d) == 1 and cycle_index(d, d) == d and cycle_index(d + 1, d) == 1


def test_iterative_separable_matches_grid_oracle():
    targets = np.array([0.7, -0.4, 0.1])

    def f(x):
        return -float(np.sum((np.asarray(x) - targets) ** 2))

    bounds = np.array([[-1.0, 1.0]] * 3)
    tr = run_iterative_bo(f, bounds, BoConfig(max_iters=30, seed=0, n_init=6, ell_max=3, gp_restarts=4))
    grid = np.linspace(-1, 1, 2001)
    oracle = np.array([grid[np.argmax(-(grid - t) ** 2)] for t in targets])
    assert np.all(np.abs(tr.best_point - oracle) <= 0.02), tr.best_point


def test_iterative_moves_one_coordinate_per_iteration():
    bounds = np.array([[-1.0, 1.0]] * 4)
    tr = run_iterative_bo(sphere, bounds, BoConfig(max_iters=12, seed=1, gp_restarts=2))
    opt = [r for r in tr.records if r.phase == "opt"]
    prev = np.zeros(4)
    for r in opt:
        b = cycle_index(r.iteration, 4) - 1
        changed = np.nonzero(r.point != prev)[0]
        assert set(changed) <= {b}
        others = np.delete(np.arange(4), b)
        assert r.point[others].tobytes() == prev[others].tobytes()
        prev = r.point


def test_iterative_stops_after_stale_loops():
    bounds = np.array([[-1.0, 1.0]] * 2)
    tr = run_iterative_bo(lambda x: 1.0 + 0.0 * x[0], bounds, BoConfig(max_iters=100, ell_max=3, n_init=4))
    # first loop sets the iterate best, three more loops fail to raise it
    assert tr.meta["stopped_at_iteration"] == 8


def test_runs_bit_reproducible():
    bounds = np.array([[-1.0, 1.0]] * 3)
    cfg = BoConfig(max_iters=8, seed=5, gp_restarts=2)
    for runner in (run_vanilla_bo, run_iterative_bo):
        a = runner(sphere, bounds, cfg)
        b = runner(sphere, bounds, cfg)
        assert a.to_json() == b.to_json()


def test_trace_csv_and_json(tmp_path):
    bounds = np.array([[-1.0, 1.0]] * 2)
    tr = run_vanilla_bo(sphere, bounds, BoConfig(max_iters=3, gp_restarts=2))
    tr.to_csv(tmp_path / "t.csv", "hdr", to_geomean=math.exp)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# hdr"
    assert lines[1].split(",")[:5] == ["iteration", "phase", "region", "value", "best_observed"]
    assert len(lines) == 2 + len(tr)
    back = RunTrace.from_dict(tr.to_dict())
    assert back.to_json() == tr.to_json()
    obs = tr.observations()
    assert obs.n == len(tr) and np.all((obs.points >= 0) & (obs.points <= 1))
