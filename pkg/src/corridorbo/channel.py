"""Large-scale link gains (path loss, shadowing, antenna pattern) and small-scale fading."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import _backend
from .errors import ConfigurationError
from .scenario import DecisionVector, Deployment


@lru_cache(maxsize=1)
def constants() -> dict:
    """The adopted channel constants, shipped as a JSON resource."""
    text = resources.files("corridorbo").joinpath("data/channel_constants.json").read_text()
    return json.loads(text)


_ANT = constants()["antenna"]


@dataclass(frozen=True)
class AntennaPattern:
    bearing_deg: float
    tilt_deg: float
    h_hpbw_deg: float = _ANT["h_hpbw_deg"]
    v_hpbw_deg: float = 10.0
    max_gain_dbi: float | None = None

    def __post_init__(self):
        if not (self.h_hpbw_deg > 0 and self.v_hpbw_deg > 0):
            raise ConfigurationError("beamwidths must be positive")
        if self.max_gain_dbi is None:
            object.__setattr__(self, "max_gain_dbi", float(max_gain(self.v_hpbw_deg, self.h_hpbw_deg)))
        if not math.isfinite(self.max_gain_dbi):
            raise ConfigurationError("max gain must be finite")


def max_gain(v_hpbw_deg, h_hpbw_deg=_ANT["h_hpbw_deg"]):
    """Peak gain in dBi, scaled by beam solid angle from 8 dBi at 65x65 degrees."""
    a_v, a_h = _ANT["anchor_hpbw_deg"]
    return _ANT["anchor_gain_dbi"] + 10.0 * np.log10((a_v * a_h) / (np.asarray(v_hpbw_deg) * h_hpbw_deg))


def wrap_deg(angle):
    """Wrap to (-180, 180]."""
    a = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(a == -180.0, 180.0, a)


def horizontal_attenuation(rel_azimuth_deg, h_hpbw_deg):
    return -np.minimum(_ANT["slope"] * (np.asarray(rel_azimuth_deg) / h_hpbw_deg) ** 2, _ANT["floor_db"])


def vertical_attenuation(rel_elevation_deg, v_hpbw_deg):
    return -np.minimum(_ANT["slope"] * (np.asarray(rel_elevation_deg) / v_hpbw_deg) ** 2, _ANT["floor_db"])


def combined_attenuation(att_h, att_v):
    """Double-min composition, -min(-(A_H + A_V), floor)."""
    return -np.minimum(-(att_h + att_v), _ANT["floor_db"])


def antenna_gain(azimuth_deg, elevation_deg, pattern: AntennaPattern):
    """Gain in dBi toward (azimuth, elevation); azimuth clockwise from north, elevation above horizon."""
    att_h = horizontal_attenuation(wrap_deg(np.asarray(azimuth_deg) - pattern.bearing_deg), pattern.h_hpbw_deg)
    att_v = vertical_attenuation(np.asarray(elevation_deg) - pattern.tilt_deg, pattern.v_hpbw_deg)
    return pattern.max_gain_dbi + combined_attenuation(att_h, att_v)


# ---- propagation ---------------------------------------------------------

_GUE = constants()["gue_uma"]
_UAV = constants()["uav_uma_av"]


def check_heights(h_ue, is_uav) -> None:
    h = np.asarray(h_ue, dtype=float)
    uav = np.broadcast_to(np.asarray(is_uav, dtype=bool), h.shape)
    g_lo, g_hi = _GUE["height_band_m"]
    a_lo, a_hi = _UAV["height_band_m"]
    bad_g = ~uav & ((h < g_lo) | (h > g_hi))
    bad_a = uav & ((h <= a_lo) | (h > a_hi))
    if np.any(bad_g):
        raise ConfigurationError(f"ground UE height outside [{g_lo}, {g_hi}] m")
    if np.any(bad_a):
        raise ConfigurationError(f"UAV height outside ({a_lo}, {a_hi}] m")


def _gue_los_pl(d2d, d3d, h_ue, fc, h_bs):
    h_e = _GUE["effective_env_height_m"]
    d_bp = 4.0 * (h_bs - h_e) * (h_ue - h_e) * fc * 1e9 / constants()["speed_of_light_m_s"]
    near = _GUE["los_intercept_db"] + _GUE["los_slope_near"] * np.log10(d3d) + _GUE["fc_slope"] * np.log10(fc)
    far = (
        _GUE["los_intercept_db"]
        + _GUE["los_slope_far"] * np.log10(d3d)
        + _GUE["fc_slope"] * np.log10(fc)
        - _GUE["los_far_breakpoint_coeff"] * np.log10(d_bp**2 + (h_bs - h_ue) ** 2)
    )
    return np.where(d2d <= d_bp, near, far)


def _gue_nlos_pl(d2d, d3d, h_ue, fc, h_bs):
    nlos = (
        _GUE["nlos_intercept_db"]
        + _GUE["nlos_slope"] * np.log10(d3d)
        + _GUE["fc_slope"] * np.log10(fc)
        - _GUE["nlos_height_coeff"] * (h_ue - _GUE["nlos_height_ref_m"])
    )
    return np.maximum(_gue_los_pl(d2d, d3d, h_ue, fc, h_bs), nlos)


def _uav_los_pl(d3d, fc):
    return _UAV["los_intercept_db"] + _UAV["los_slope"] * np.log10(d3d) + _UAV["fc_slope"] * np.log10(fc)


def _uav_nlos_pl(d3d, h_ue, fc):
    slope = _UAV["nlos_slope_base"] - _UAV["nlos_slope_height_coeff"] * np.log10(h_ue)
    nlos = _UAV["nlos_intercept_db"] + slope * np.log10(d3d) + 20.0 * np.log10(40.0 * math.pi * fc / 3.0)
    # never below the LoS value of the same link
    return np.maximum(nlos, _uav_los_pl(d3d, fc))


def path_loss(d2d, d3d, h_ue, is_uav, los, fc: float, h_bs: float):
    """Path loss in dB; arrays broadcast together."""
    d2d, d3d, h_ue = (np.asarray(a, dtype=float) for a in (d2d, d3d, h_ue))
    is_uav = np.asarray(is_uav, dtype=bool)
    los = np.asarray(los, dtype=bool)
    if np.any(d3d <= 0):
        raise ConfigurationError("3D distance must be positive")
    check_heights(h_ue, is_uav)
    d2d_g = np.maximum(d2d, 1.0)
    gue = np.where(los, _gue_los_pl(d2d_g, d3d, h_ue, fc, h_bs), _gue_nlos_pl(d2d_g, d3d, h_ue, fc, h_bs))
    h_air = np.maximum(h_ue, 1.0)
    uav = np.where(los, _uav_los_pl(d3d, fc), _uav_nlos_pl(d3d, h_air, fc))
    return np.where(is_uav, uav, gue)


def los_probability(d2d, h_ue, is_uav):
    d2d = np.maximum(np.asarray(d2d, dtype=float), 1e-9)
    h_ue = np.asarray(h_ue, dtype=float)
    is_uav = np.asarray(is_uav, dtype=bool)
    d1, d2 = _GUE["los_prob_d1_m"], _GUE["los_prob_d2_m"]
    base = np.where(d2d <= d1, 1.0, d1 / d2d + np.exp(-d2d / d2) * (1.0 - d1 / d2d))
    h_ref = _GUE["los_prob_height_ref_m"]
    c_h = np.where(h_ue <= h_ref, 0.0, np.abs((h_ue - h_ref) / 10.0) ** 1.5)
    p_gue = np.where(d2d <= d1, 1.0, base * (1.0 + c_h * 1.25 * (d2d / 100.0) ** 3 * np.exp(-d2d / 150.0)))
    h_air = np.maximum(h_ue, 1.0)
    dd = _UAV["los_prob_d1"]
    pp = _UAV["los_prob_p1"]
    a_d1 = np.maximum(dd["coeff"] * np.log10(h_air) + dd["offset"], dd["min_m"])
    a_p1 = np.maximum(pp["coeff"] * np.log10(h_air) + pp["offset"], 1.0)
    p_mid = np.where(d2d <= a_d1, 1.0, a_d1 / d2d + np.exp(-d2d / a_p1) * (1.0 - a_d1 / d2d))
    p_uav = np.where(h_ue > _UAV["los_prob_one_above_m"], 1.0, p_mid)
    return np.clip(np.where(is_uav, p_uav, p_gue), 0.0, 1.0)


def los_draw(d2d, h_ue, is_uav, rng: np.random.Generator):
    p = los_probability(d2d, h_ue, is_uav)
    u = rng.random(np.shape(p))
    return u < p


def shadow_sigma(h_ue, is_uav, los):
    h_ue = np.asarray(h_ue, dtype=float)
    los = np.asarray(los, dtype=bool)
    gue = np.where(los, _GUE["sf_sigma_los_db"], _GUE["sf_sigma_nlos_db"])
    uav_los = _UAV["sf_sigma_los_scale_db"] * np.exp(-_UAV["sf_sigma_los_decay_per_m"] * h_ue)
    uav = np.where(los, uav_los, _UAV["sf_sigma_nlos_db"])
    return np.where(np.asarray(is_uav, dtype=bool), uav, gue)


def shadow_fading(rng: np.random.Generator, h_ue, is_uav, los):
    sigma = shadow_sigma(h_ue, is_uav, los)
    return sigma * rng.standard_normal(np.shape(sigma))


@dataclass(frozen=True, eq=False)
class FadingDraw:
    power_gain: np.ndarray  # (cells, ues)


def small_scale(rng: np.random.Generator, ue_is_uav, n_cells: int, n_draws: int | None = None):
    """|h|^2 draws: Exp(1) on ground-user links, exactly 1 on UAV links.

    With n_draws=None a single FadingDraw is returned, else a (draws, cells, ues) array.
    """
    is_uav = np.asarray(ue_is_uav, dtype=bool)
    shape = (1 if n_draws is None else n_draws, n_cells, len(is_uav))
    out = np.ones(shape)
    n_gue = int((~is_uav).sum())
    if n_gue:
        out[:, :, ~is_uav] = rng.standard_exponential((shape[0], n_cells, n_gue))
    if n_draws is None:
        return FadingDraw(out[0])
    return out


# ---- per-deployment link state -------------------------------------------


@dataclass(frozen=True, eq=False)
class LinkGeometry:
    """Geometry of every (cell, UE) link toward the closest wrap copy of the cell's site."""

    d2d: np.ndarray  # (C, K)
    d3d: np.ndarray
    azimuth_deg: np.ndarray  # absolute, clockwise from north
    elevation_deg: np.ndarray  # above the horizon, seen from the antenna
    wrap_index: np.ndarray  # (C, K) chosen row of deployment.wrap_offsets


def link_geometry(dep: Deployment) -> LinkGeometry:
    if dep.n_ues == 0:
        raise ConfigurationError("deployment has no UEs")
    ue = dep.ue_xyz
    # (S, W, K) horizontal displacement of each UE from each wrapped site copy
    copies = dep.site_xy[:, None, :] + dep.wrap_offsets[None, :, :]
    dx = ue[None, None, :, 0] - copies[:, :, 0, None]
    dy = ue[None, None, :, 1] - copies[:, :, 1, None]
    dist = np.hypot(dx, dy)
    # path loss grows with distance in every regime, so the nearest copy has minimum path loss
    best = np.argmin(dist, axis=1)  # (S, K)
    s_idx = np.arange(dep.n_sites)[:, None]
    k_idx = np.arange(dep.n_ues)[None, :]
    sdx, sdy = dx[s_idx, best, k_idx], dy[s_idx, best, k_idx]
    d2d = np.hypot(sdx, sdy)
    dh = ue[:, 2][None, :] - dep.bs_height
    d3d = np.sqrt(d2d**2 + dh**2)
    az = np.degrees(np.arctan2(sdx, sdy))
    el = np.degrees(np.arctan2(np.broadcast_to(dh, d2d.shape), d2d))
    cs = dep.cell_site
    return LinkGeometry(d2d[cs], d3d[cs], az[cs], el[cs], best[cs])


@dataclass(frozen=True, eq=False)
class LinkState:
    los: np.ndarray  # (C, K) bool
    sf_db: np.ndarray  # (C, K)
    pl_db: np.ndarray  # (C, K)


def draw_link_state(dep: Deployment, geom: LinkGeometry, fc: float, rng: np.random.Generator) -> LinkState:
    """LoS states and shadow fading per (site, UE) link.

    The three sectors of a site share one propagation path, so they share the LoS
    state and the shadowing draw; only their antenna gains differ.
    """
    first = np.searchsorted(dep.cell_site, np.arange(dep.n_sites))
    d2d, d3d = geom.d2d[first], geom.d3d[first]
    h = np.broadcast_to(dep.ue_xyz[:, 2][None, :], d2d.shape)
    uav = np.broadcast_to(dep.ue_is_uav[None, :], d2d.shape)
    los = los_draw(d2d, h, uav, rng)
    sf = shadow_fading(rng, h, uav, los)
    pl = path_loss(d2d, d3d, h, uav, los, fc, dep.bs_height)
    cs = dep.cell_site
    return LinkState(los[cs], sf[cs], pl[cs])


@dataclass(frozen=True, eq=False)
class GainTable:
    gains_db: np.ndarray  # (C, K) large-scale gain -PL + SF + antenna
    los: np.ndarray
    sf_db: np.ndarray
    ue_is_uav: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.gains_db.shape[0]

    @property
    def n_ues(self) -> int:
        return self.gains_db.shape[1]

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["cell_id", "ue_id", "gain_db", "los"])
            for c in range(self.n_cells):
                for k in range(self.n_ues):
                    w.writerow([c, k, repr(float(self.gains_db[c, k])), int(self.los[c, k])])


class GainModel:
    """Decision-independent part of the gain table, cached for repeated evaluation."""

    def __init__(self, dep: Deployment, geom: LinkGeometry, state: LinkState):
        self.dep = dep
        self.geom = geom
        self.state = state
        self.base_db = np.ascontiguousarray(-state.pl_db + state.sf_db)
        rel_az = wrap_deg(geom.azimuth_deg - dep.cell_bearing_deg[:, None])
        self.att_h_db = np.ascontiguousarray(horizontal_attenuation(rel_az, _ANT["h_hpbw_deg"]))
        self.elev_deg = np.ascontiguousarray(geom.elevation_deg)

    def gains_db(self, decision: DecisionVector) -> np.ndarray:
        if decision.n_cells != self.dep.n_cells:
            raise ConfigurationError(f"decision has {decision.n_cells} cells, deployment {self.dep.n_cells}")
        vh = np.ascontiguousarray(decision.effective_vhpbw(), dtype=float)
        return _backend.compose_gain_db(
            self.base_db,
            self.att_h_db,
            self.elev_deg,
            np.ascontiguousarray(decision.tilts_deg, dtype=float),
            vh,
            np.ascontiguousarray(max_gain(vh), dtype=float),
            float(_ANT["slope"]),
            float(_ANT["floor_db"]),
        )

    def table(self, decision: DecisionVector) -> GainTable:
        return GainTable(self.gains_db(decision), self.state.los, self.state.sf_db, self.dep.ue_is_uav)


def build_gain_table(dep: Deployment, decision: DecisionVector, rng: np.random.Generator, fc: float = 2.0) -> GainTable:
    geom = link_geometry(dep)
    state = draw_link_state(dep, geom, fc, rng)
    return GainModel(dep, geom, state).table(decision)
