import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from corridorbo.channel import GainTable
from corridorbo.netsim import (
    EvalSettings,
    NetworkSimulator,
    associate,
    dbm_to_w,
    geo_mean,
    load_factors,
    map_objective_to_geomean,
    noise_power_dbm,
    objective,
    rate,
    sinr_linear,
    uav_coverage,
)
from corridorbo.scenario import DecisionVector, ScenarioSpec


def _table(gains_db, is_uav):
    g = np.asarray(gains_db, dtype=float)
    return GainTable(g, np.ones(g.shape, bool), np.zeros(g.shape), np.asarray(is_uav, bool))


def test_noise_power_10mhz_nf9():
    assert noise_power_dbm(10e6, 9.0) == pytest.approx(-95.0, abs=1e-12)


def test_single_cell_association():
    t = _table(np.random.default_rng(0).normal(-100, 10, (1, 20)), np.zeros(20))
    assert np.all(associate(t, 46.0) == 0)


def test_association_ties_go_to_lowest_id():
    t = _table([[-80.0, -90.0], [-80.0, -70.0], [-85.0, -70.0]], [False, True])
    assert associate(t, 46.0).tolist() == [0, 1]


@given(st.integers(0, 9), st.floats(0.1, 30))
def test_raising_one_cell_only_moves_users_toward_it(c, boost):
    rng = np.random.default_rng(c)
    g = rng.normal(-100, 8, (10, 40))
    before = associate(_table(g, np.zeros(40)), 46.0)
    g2 = g.copy()
    g2[c] += boost
    after = associate(_table(g2, np.zeros(40)), 46.0)
    moved = before != after
    assert np.all(after[moved] == c)


def test_single_cell_sinr_is_snr():
    g = np.array([[-100.0]])
    s = sinr_linear(_table(g, [True]), np.array([0]), np.ones((1, 1)), 1e-13, 46.0)
    assert s[0] == pytest.approx(float(dbm_to_w(46.0 - 100.0)) / 1e-13, rel=1e-12)


@given(arrays(float, (4, 12), elements=st.floats(-140, -60)), st.floats(-30, 30))
def test_sinr_scale_invariant(g, shift_db):
    t = _table(g, np.zeros(12))
    a = associate(t, 46.0)
    h = np.random.default_rng(0).exponential(size=g.shape)
    noise = 1e-13
    s1 = sinr_linear(t, a, h, noise)
    s2 = sinr_linear(_table(g + shift_db, np.zeros(12)), a, h, noise * 10 ** (shift_db / 10))
    assert np.allclose(s1, s2, rtol=1e-9)


def test_single_uav_rate_is_shannon():
    g = np.array([[-90.0], [-110.0]])
    t = _table(g, [True])
    noise = 1e-13
    r = rate(t, np.array([0]), EvalSettings(n_fading_draws=3), np.random.default_rng(0), noise_w=noise)
    s = float(dbm_to_w(46 - 90)) / (float(dbm_to_w(46 - 110)) + noise)
    assert r[0] == pytest.approx(10e6 * math.log2(1 + s), rel=1e-12)


def test_two_identical_users_share_half():
    g = np.array([[-90.0, -90.0]])
    one = rate(_table(g[:, :1], [True]), np.array([0]), EvalSettings(1), np.random.default_rng(0), noise_w=1e-13)
    two = rate(_table(g, [True, True]), np.array([0, 0]), EvalSettings(1), np.random.default_rng(0), noise_w=1e-13)
    assert np.allclose(two, one[0] / 2, rtol=1e-12)


def test_uav_rates_independent_of_draw_count():
    rng = np.random.default_rng(1)
    g = rng.normal(-100, 8, (6, 10))
    uav = np.array([True] * 4 + [False] * 6)
    t = _table(g, uav)
    a = associate(t, 46.0)
    r5 = rate(t, a, EvalSettings(5), np.random.default_rng(2), noise_w=1e-13)
    r10 = rate(t, a, EvalSettings(10), np.random.default_rng(3), noise_w=1e-13)
    assert r5[uav].tobytes() == r10[uav].tobytes()


@given(st.integers(1, 60), st.integers(1, 8))
def test_load_shares_sum_to_one(n, cells):
    a = np.random.default_rng(n).integers(0, cells, n)
    eta = load_factors(a, cells)
    for c in np.unique(a):
        assert eta[a == c].sum() == pytest.approx(1.0, abs=1e-12)


def test_rate_monotone_in_own_sinr():
    g = np.array([[-90.0, -95.0], [-100.0, -105.0]])
    t = _table(g, [True, True])
    a = np.array([0, 0])
    base = rate(t, a, EvalSettings(1), np.random.default_rng(0), noise_w=1e-13)
    g2 = g.copy()
    g2[0, 1] += 3.0
    up = rate(_table(g2, [True, True]), a, EvalSettings(1), np.random.default_rng(0), noise_w=1e-13)
    assert up[1] >= base[1] and up[0] == base[0]


def test_objective_special_cases():
    r = np.array([1e6, 2e6, 4e6, 8e6])
    uav = np.array([True, False, True, False])
    assert objective(r, uav, 0.0) == pytest.approx(math.log(2e6) + math.log(8e6))
    assert objective(r, uav, 1.0) == pytest.approx(math.log(1e6) + math.log(4e6))


@given(st.floats(1.0, 1e9), st.integers(1, 900))
def test_objective_equal_rates_closed_form(r, n):
    uav = np.arange(n) % 3 == 0
    assert abs(objective(np.full(n, r), uav, 0.5) - 0.5 * n * math.log(r)) <= 1e-12 * max(1.0, abs(n * math.log(r)))


def test_objective_floors_zero_rates():
    assert objective(np.array([0.0, 1.0]), np.array([False, False]), 0.0, rate_floor_bps=1.0) == 0.0


def test_geo_mean_examples():
    assert geo_mean(np.full(5, 3e6)) == pytest.approx(3e6, rel=1e-12)
    assert geo_mean(np.array([1.0, 4.0])) == pytest.approx(2.0, rel=1e-12)


@given(arrays(float, st.integers(1, 300), elements=st.floats(1.0, 1e9)))
def test_geomean_objective_round_trip(r):
    uav = np.arange(len(r)) % 2 == 1
    f = objective(r, uav, 0.5)
    back = map_objective_to_geomean(f * 2.0, len(r))
    assert abs(back - geo_mean(r)) <= 1e-12 * geo_mean(r)
    assert abs(map_objective_to_geomean(f, len(r), 0.5) - geo_mean(r)) <= 1e-12 * geo_mean(r)


def test_coverage_examples():
    assert uav_coverage(np.array([0.0, 3.0, 10.0]), -5.0) == 1.0
    s = np.random.default_rng(4).normal(-3, 6, 500)
    assert uav_coverage(s, -5.0) == sum(1 for v in s if v >= -5.0) / 500
    with pytest.raises(ValueError):
        uav_coverage(np.array([]), -5.0)


@given(arrays(float, 40, elements=st.floats(-30, 30)), st.floats(-20, 20), st.floats(0, 10))
def test_coverage_monotone_in_threshold(s, t1, gap):
    assert uav_coverage(s, t1) >= uav_coverage(s, t1 + gap)


def test_evaluate_deterministic(table1_spec):
    s = EvalSettings(n_fading_draws=4)
    a = NetworkSimulator(table1_spec, s).evaluate(DecisionVector.baseline(57))
    b = NetworkSimulator(table1_spec, s).evaluate(DecisionVector.baseline(57))
    assert a.rate_bps.tobytes() == b.rate_bps.tobytes()
    assert a.objective == b.objective


def test_redrop_mode_draws_fresh_realisations(table1_spec):
    sim = NetworkSimulator(table1_spec, EvalSettings(n_fading_draws=2, redrop_per_eval=True))
    a = sim.evaluate(DecisionVector.baseline(57))
    b = sim.evaluate(DecisionVector.baseline(57))
    assert a.objective != b.objective
    sim2 = NetworkSimulator(table1_spec, EvalSettings(n_fading_draws=2, redrop_per_eval=True))
    assert sim2.evaluate(DecisionVector.baseline(57)).objective == a.objective


def test_report_consistency(table1_spec, tmp_path):
    rep = NetworkSimulator(table1_spec, EvalSettings(n_fading_draws=4)).evaluate(DecisionVector.baseline(57))
    assert np.all(rep.rate_bps >= 0)
    assert rep.uav_coverage + rep.uav_outage == pytest.approx(1.0)
    assert rep.geo_mean_rate_bps == pytest.approx(map_objective_to_geomean(rep.objective, 850, 0.5), rel=1e-12)
    rep.write_ue_csv(tmp_path / "ue.csv", "h")
    assert len((tmp_path / "ue.csv").read_text().splitlines()) == 1 + 1 + 850 + 1
