"""Association, SINR, Shannon rates, the sum-log-rate objective and UAV coverage."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .channel import GainModel, GainTable, constants, draw_link_state, link_geometry, small_scale
from .errors import ConfigurationError
from .scenario import DecisionVector, Deployment, ScenarioSpec, build_hex_layout, drop_ues


@dataclass(frozen=True)
class EvalSettings:
    n_fading_draws: int = 50
    rate_floor_bps: float = 1.0
    outage_threshold_db: float = -5.0
    redrop_per_eval: bool = False

    def __post_init__(self):
        if self.n_fading_draws < 1:
            raise ConfigurationError("n_fading_draws must be >= 1")
        if not self.rate_floor_bps > 0:
            raise ConfigurationError("rate_floor_bps must be positive")


@dataclass(frozen=True, eq=False)
class EvalReport:
    assoc: np.ndarray
    sinr_db: np.ndarray
    rate_bps: np.ndarray
    ue_is_uav: np.ndarray
    objective: float
    geo_mean_rate_bps: float
    uav_coverage: float
    uav_outage: float
    n_floored: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def gue_geo_mean_bps(self) -> float:
        return geo_mean(self.rate_bps[~self.ue_is_uav]) if (~self.ue_is_uav).any() else float("nan")

    @property
    def uav_geo_mean_bps(self) -> float:
        return geo_mean(self.rate_bps[self.ue_is_uav]) if self.ue_is_uav.any() else float("nan")

    def summary(self) -> dict:
        uav = self.ue_is_uav
        return {
            "objective": self.objective,
            "geo_mean_rate_bps": self.geo_mean_rate_bps,
            "gue_geo_mean_bps": self.gue_geo_mean_bps,
            "uav_geo_mean_bps": self.uav_geo_mean_bps,
            "uav_coverage": self.uav_coverage,
            "uav_outage": self.uav_outage,
            "median_gue_sinr_db": float(np.median(self.sinr_db[~uav])) if (~uav).any() else None,
            "median_uav_sinr_db": float(np.median(self.sinr_db[uav])) if uav.any() else None,
            "n_ues": int(len(uav)),
            "n_uavs": int(uav.sum()),
            "n_floored": self.n_floored,
        }

    def write_ue_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["ue_id", "kind", "serving_cell", "sinr_db", "rate_bps"])
            for k in range(len(self.assoc)):
                kind = "UAV" if self.ue_is_uav[k] else "GUE"
                w.writerow([k, kind, int(self.assoc[k]), repr(float(self.sinr_db[k])), repr(float(self.rate_bps[k]))])
            s = self.summary()
            w.writerow(["summary", "all", "", "", repr(float(s["geo_mean_rate_bps"]))])


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    return constants()["thermal_noise_dbm_hz"] + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def associate(gain_table: GainTable, tx_power_dbm) -> np.ndarray:
    """Strongest large-scale received power; np.argmax keeps the lowest cell id on ties."""
    p = np.broadcast_to(np.asarray(tx_power_dbm, dtype=float), (gain_table.n_cells,))
    rss = p[:, None] + gain_table.gains_db
    return np.argmax(rss, axis=0)


def received_power_w(gain_table: GainTable, tx_power_dbm) -> np.ndarray:
    p = np.broadcast_to(np.asarray(tx_power_dbm, dtype=float), (gain_table.n_cells,))
    return np.ascontiguousarray(dbm_to_w(p[:, None] + gain_table.gains_db))


def sinr_linear(gain_table: GainTable, assoc, fading, noise_w: float, tx_power_dbm=46.0) -> np.ndarray:
    """Per-UE SINR for one fading realisation (FadingDraw or plain (C, K) matrix)."""
    h = getattr(fading, "power_gain", fading)
    rx = received_power_w(gain_table, tx_power_dbm) * h
    cols = np.arange(rx.shape[1])
    sig = rx[assoc, cols]
    mask = np.ones_like(rx, dtype=bool)
    mask[assoc, cols] = False
    interf = np.where(mask, rx, 0.0).sum(axis=0)
    return sig / (interf + noise_w)


def expected_sinr_db(gain_table: GainTable, assoc, noise_w: float, tx_power_dbm=46.0) -> np.ndarray:
    """SINR with every |h|^2 replaced by its mean of one."""
    return 10.0 * np.log10(sinr_linear(gain_table, assoc, np.ones(gain_table.gains_db.shape), noise_w, tx_power_dbm))


def load_factors(assoc, n_cells: int) -> np.ndarray:
    """Per-UE time share 1/(number of UEs on the serving cell)."""
    counts = np.bincount(assoc, minlength=n_cells)
    return 1.0 / counts[assoc]


def rate(
    gain_table: GainTable,
    assoc,
    settings: EvalSettings,
    rng: np.random.Generator | None = None,
    *,
    bandwidth_hz: float = 10e6,
    noise_w: float | None = None,
    tx_power_dbm=46.0,
    fading: np.ndarray | None = None,
) -> np.ndarray:
    """Per-UE rate: load share x bandwidth x Monte-Carlo mean of log2(1 + SINR).

    Pass precomputed ``fading`` of shape (draws, cells, ues) to reuse draws; otherwise
    ``settings.n_fading_draws`` draws are taken from ``rng``.
    """
    if noise_w is None:
        noise_w = float(dbm_to_w(noise_power_dbm(bandwidth_hz, 9.0)))
    is_uav = np.asarray(gain_table.ue_is_uav, dtype=bool)
    if fading is None:
        if rng is None:
            raise ValueError("rng or fading required")
        fading = small_scale(rng, is_uav, gain_table.n_cells, settings.n_fading_draws)
    rx = received_power_w(gain_table, tx_power_dbm)
    se = _backend.mc_mean_log2_sinr(rx, fading, np.ascontiguousarray(assoc, dtype=np.int64), float(noise_w), is_uav)
    return load_factors(assoc, gain_table.n_cells) * bandwidth_hz * se


def objective(rates, ue_is_uav, lam: float, rate_floor_bps: float = 1.0) -> float:
    """lam * sum_UAV ln R + (1 - lam) * sum_GUE ln R, rates floored before the log."""
    logs = np.log(np.maximum(np.asarray(rates, dtype=float), rate_floor_bps))
    uav = np.asarray(ue_is_uav, dtype=bool)
    return float(lam * logs[uav].sum() + (1.0 - lam) * logs[~uav].sum())


def geo_mean(rates, rate_floor_bps: float = 1.0) -> float:
    r = np.maximum(np.asarray(rates, dtype=float), rate_floor_bps)
    return float(np.exp(np.mean(np.log(r))))


def map_objective_to_geomean(f: float, n_ues: int, weight: float = 1.0) -> float:
    """exp(f / (weight * n)); weight=lam rescales a lam-weighted objective with equal weights."""
    return float(np.exp(f / (weight * n_ues)))


def uav_coverage(sinr_db_uav, tau_db: float = -5.0) -> float:
    s = np.asarray(sinr_db_uav, dtype=float)
    if s.size == 0:
        raise ValueError("coverage needs at least one UAV")
    return float(np.count_nonzero(s >= tau_db) / s.size)


class NetworkSimulator:
    """Evaluates decisions on one scenario, caching everything the decision does not touch.

    Fixed mode (default): the UE drop, LoS/shadowing and fading draws are derived from
    ``spec.seed`` once.  Redrop mode: every evaluation consumes a fresh child stream.
    """

    def __init__(self, spec: ScenarioSpec, settings: EvalSettings | None = None, seed: int | None = None):
        self.spec = spec
        self.settings = settings or EvalSettings()
        self.seed = spec.seed if seed is None else seed
        self.noise_w = float(dbm_to_w(noise_power_dbm(spec.bandwidth, spec.noise_figure_db)))
        self.layout = build_hex_layout(spec)
        self._redrop_seq = np.random.SeedSequence([self.seed, 1])
        self.n_evals = 0
        if not self.settings.redrop_per_eval:
            self._model, self._fading = self._realise(np.random.SeedSequence([self.seed, 0]))

    @property
    def deployment(self) -> Deployment:
        return self._model.dep

    @property
    def gain_model(self) -> GainModel:
        return self._model

    @property
    def n_ues(self) -> int:
        return self.spec.n_gues + self.spec.n_uavs

    def _realise(self, seq: np.random.SeedSequence):
        s_drop, s_link, s_fade = seq.spawn(3)
        dep = drop_ues(self.spec, self.layout, np.random.default_rng(s_drop))
        geom = link_geometry(dep)
        state = draw_link_state(dep, geom, self.spec.carrier_freq, np.random.default_rng(s_link))
        fading = small_scale(np.random.default_rng(s_fade), dep.ue_is_uav, dep.n_cells, self.settings.n_fading_draws)
        return GainModel(dep, geom, state), fading

    def evaluate(self, decision: DecisionVector) -> EvalReport:
        if self.settings.redrop_per_eval:
            model, fading = self._realise(self._redrop_seq.spawn(1)[0])
        else:
            model, fading = self._model, self._fading
        self.n_evals += 1
        return self._report(model, fading, decision)

    def _report(self, model: GainModel, fading, decision: DecisionVector) -> EvalReport:
        spec, st = self.spec, self.settings
        table = model.table(decision)
        assoc = associate(table, spec.tx_power_dbm)
        rates = rate(table, assoc, st, bandwidth_hz=spec.bandwidth, noise_w=self.noise_w,
                     tx_power_dbm=spec.tx_power_dbm, fading=fading)
        sinr_db = expected_sinr_db(table, assoc, self.noise_w, spec.tx_power_dbm)
        uav = table.ue_is_uav
        cov = uav_coverage(sinr_db[uav], st.outage_threshold_db) if uav.any() else float("nan")
        return EvalReport(
            assoc=assoc,
            sinr_db=sinr_db,
            rate_bps=rates,
            ue_is_uav=uav,
            objective=objective(rates, uav, spec.lambda_tradeoff, st.rate_floor_bps),
            geo_mean_rate_bps=geo_mean(rates, st.rate_floor_bps),
            uav_coverage=cov,
            uav_outage=1.0 - cov if uav.any() else float("nan"),
            n_floored=int(np.count_nonzero(rates < st.rate_floor_bps)),
        )


def evaluate(spec: ScenarioSpec, decision: DecisionVector, settings: EvalSettings | None = None,
             rng: np.random.Generator | None = None) -> EvalReport:
    """One-shot evaluation.  With redrop off the result depends only on (spec, decision, settings);
    with redrop on, the realisation is drawn from ``rng`` so successive calls differ."""
    settings = settings or EvalSettings()
    sim = NetworkSimulator(spec, EvalSettings(**{**settings.__dict__, "redrop_per_eval": False}))
    if settings.redrop_per_eval:
        if rng is None:
            raise ValueError("redrop mode needs an rng")
        seq = np.random.SeedSequence(int(rng.integers(0, 2**63)))
        model, fading = sim._realise(seq)
        return sim._report(model, fading, decision)
    return sim.evaluate(decision)
