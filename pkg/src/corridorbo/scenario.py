"""Network geometry: hexagonal sites, three-sector cells, wrap-around and UE drops."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

SECTOR_BEARINGS_DEG = (30.0, 150.0, 270.0)
TILT_BOUNDS_DEG = (-20.0, 45.0)
VHPBW_BOUNDS_DEG = (5.0, 70.0)
BASELINE_TILT_DEG = -12.0
BASELINE_VHPBW_DEG = 10.0
# ground users closer than this to a site are re-drawn (UMa minimum BS-UT distance)
MIN_GUE_DISTANCE_M = 35.0

# axial neighbour directions of a hexagonal lattice
_HEX_DIRECTIONS = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))


@dataclass(frozen=True)
class CorridorSpec:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    height: float

    def __post_init__(self):
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        if not (x0 < x1 and y0 < y1):
            raise ConfigurationError(f"corridor ranges must satisfy min < max: {self}")
        if not self.height > 0:
            raise ConfigurationError(f"corridor height must be positive: {self.height}")

    def to_dict(self) -> dict:
        return {"x_range": list(self.x_range), "y_range": list(self.y_range), "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CorridorSpec":
        try:
            return cls(tuple(map(float, d["x_range"])), tuple(map(float, d["y_range"])), float(d["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad corridor entry {d!r}: {exc}") from exc


def default_corridors(height: float = 150.0) -> tuple[CorridorSpec, ...]:
    """The four straight corridors bordering the central area of the 19-site layout."""
    return (
        CorridorSpec((-650.0, -610.0), (-780.0, 780.0), height),
        CorridorSpec((-780.0, 780.0), (-650.0, -610.0), height),
        CorridorSpec((-780.0, 780.0), (610.0, 650.0), height),
        CorridorSpec((610.0, 650.0), (-780.0, 780.0), height),
    )


@dataclass(frozen=True)
class ScenarioSpec:
    n_rings: int = 2
    isd: float = 500.0
    bs_height: float = 25.0
    carrier_freq: float = 2.0  # GHz
    bandwidth: float = 10e6  # Hz
    tx_power_dbm: float = 46.0
    noise_figure_db: float = 9.0
    gue_per_cell: int = 10
    gue_height: float = 1.5
    corridors: tuple[CorridorSpec, ...] = field(default_factory=default_corridors)
    uavs_per_corridor: int = 70
    uav_mode: str = "corridors"
    uniform_uav_height: float = 150.0
    lambda_tradeoff: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "corridors", tuple(self.corridors))
        if self.n_rings < 0:
            raise ConfigurationError("n_rings must be >= 0")
        if not self.isd > 0:
            raise ConfigurationError("isd must be positive")
        if not self.bandwidth > 0:
            raise ConfigurationError("bandwidth must be positive")
        if not 0.0 <= self.lambda_tradeoff <= 1.0:
            raise ConfigurationError("lambda_tradeoff must lie in [0, 1]")
        if self.uav_mode not in ("corridors", "uniform"):
            raise ConfigurationError(f"unknown uav_mode {self.uav_mode!r}")
        if self.uav_mode == "corridors" and not self.corridors and self.uavs_per_corridor > 0:
            raise ConfigurationError("corridors mode needs at least one corridor")
        if self.gue_per_cell < 0 or self.uavs_per_corridor < 0:
            raise ConfigurationError("UE densities must be nonnegative")
        if not (0 <= self.seed < 2**64):
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def n_sites(self) -> int:
        return 1 + 3 * self.n_rings * (self.n_rings + 1)

    @property
    def n_cells(self) -> int:
        return 3 * self.n_sites

    @property
    def n_uavs(self) -> int:
        return self.uavs_per_corridor * len(self.corridors)

    @property
    def n_gues(self) -> int:
        return self.gue_per_cell * self.n_cells

    def replace(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    def with_corridor_height(self, height: float) -> "ScenarioSpec":
        corridors = tuple(CorridorSpec(c.x_range, c.y_range, height) for c in self.corridors)
        return replace(self, corridors=corridors, uniform_uav_height=height)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corridors"] = [c.to_dict() for c in self.corridors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        kw = dict(d)
        if "corridors" in kw:
            kw["corridors"] = tuple(CorridorSpec.from_dict(c) for c in kw["corridors"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class Deployment:
    """Sites, cells and (optionally) UEs.  Arrays are treated as read-only."""

    site_xy: np.ndarray  # (S, 2)
    cell_site: np.ndarray  # (C,) site index of each cell
    cell_bearing_deg: np.ndarray  # (C,)
    wrap_offsets: np.ndarray  # (W, 2), first row is the zero vector
    wrap_enabled: bool
    isd: float
    n_rings: int
    bs_height: float
    ue_xyz: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    ue_is_uav: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n_sites(self) -> int:
        return len(self.site_xy)

    @property
    def n_cells(self) -> int:
        return len(self.cell_site)

    @property
    def n_ues(self) -> int:
        return len(self.ue_xyz)

    @property
    def sites(self) -> list[tuple[int, tuple[float, float]]]:
        return [(i, (float(x), float(y))) for i, (x, y) in enumerate(self.site_xy)]

    @property
    def cells(self) -> list[tuple[int, int, float]]:
        return [(i, int(s), float(b)) for i, (s, b) in enumerate(zip(self.cell_site, self.cell_bearing_deg))]

    @property
    def ues(self) -> list[tuple[int, tuple[float, float, float], str]]:
        return [
            (i, tuple(float(v) for v in p), "UAV" if u else "GUE")
            for i, (p, u) in enumerate(zip(self.ue_xyz, self.ue_is_uav))
        ]

    def with_ues(self, ue_xyz: np.ndarray, ue_is_uav: np.ndarray) -> "Deployment":
        return replace(self, ue_xyz=ue_xyz, ue_is_uav=ue_is_uav)


def hex_ring_axial(n_rings: int) -> list[tuple[int, int]]:
    """Axial coordinates of the sites, center first, then ring by ring."""
    out = [(0, 0)]
    for radius in range(1, n_rings + 1):
        q, r = _HEX_DIRECTIONS[4][0] * radius, _HEX_DIRECTIONS[4][1] * radius
        for side in range(6):
            for _ in range(radius):
                out.append((q, r))
                q += _HEX_DIRECTIONS[side][0]
                r += _HEX_DIRECTIONS[side][1]
    return out


def axial_to_xy(q, r, isd: float):
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.stack([isd * (q + 0.5 * r), isd * (math.sqrt(3.0) / 2.0) * r], axis=-1)


def nearest_lattice_axial(xy: np.ndarray, isd: float) -> np.ndarray:
    """Axial coordinates of the lattice site whose hexagonal cell contains each point."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    r = xy[:, 1] / (isd * math.sqrt(3.0) / 2.0)
    q = xy[:, 0] / isd - 0.5 * r
    # cube rounding
    cx, cz = q, r
    cy = -cx - cz
    rx, ry, rz = np.round(cx), np.round(cy), np.round(cz)
    dx, dy, dz = np.abs(rx - cx), np.abs(ry - cy), np.abs(rz - cz)
    fix_x = (dx > dy) & (dx > dz)
    fix_y = ~fix_x & (dy > dz)
    fix_z = ~fix_x & ~fix_y
    rx = np.where(fix_x, -ry - rz, rx)
    rz = np.where(fix_z, -rx - ry, rz)
    return np.stack([rx, rz], axis=-1).astype(int)


def hex_distance(axial: np.ndarray) -> np.ndarray:
    q, r = axial[..., 0], axial[..., 1]
    return np.maximum(np.maximum(np.abs(q), np.abs(r)), np.abs(q + r))


def in_footprint(xy: np.ndarray, isd: float, n_rings: int) -> np.ndarray:
    """True where a 2D point lies inside the union of the cluster's hexagonal cells."""
    return hex_distance(nearest_lattice_axial(xy, isd)) <= n_rings


def build_hex_layout(spec: ScenarioSpec) -> Deployment:
    axial = np.array(hex_ring_axial(spec.n_rings), dtype=float)
    site_xy = axial_to_xy(axial[:, 0], axial[:, 1], spec.isd)
    n_sites = len(site_xy)
    cell_site = np.repeat(np.arange(n_sites), 3)
    cell_bearing = np.tile(np.array(SECTOR_BEARINGS_DEG), n_sites)
    offsets, enabled = _wrap(spec)
    return Deployment(
        site_xy=site_xy,
        cell_site=cell_site,
        cell_bearing_deg=cell_bearing,
        wrap_offsets=offsets,
        wrap_enabled=enabled,
        isd=spec.isd,
        n_rings=spec.n_rings,
        bs_height=spec.bs_height,
    )


def _wrap(spec: ScenarioSpec) -> tuple[np.ndarray, bool]:
    if spec.n_rings < 1:
        return np.zeros((1, 2)), False
    n = spec.n_rings
    # a cluster of n rings tiles the plane with period (2n+1, -n) and its 60-degree rotations
    q, r = 2 * n + 1, -n
    vecs = [(0, 0)]
    for _ in range(6):
        vecs.append((q, r))
        q, r = -r, q + r
    arr = np.array(vecs, dtype=float)
    return axial_to_xy(arr[:, 0], arr[:, 1], spec.isd), True


def wrap_offsets(spec: ScenarioSpec) -> np.ndarray:
    offsets, enabled = _wrap(spec)
    if not enabled and spec.n_rings != 0:
        log.warning("wrap-around unsupported for n_rings=%d, running without wrap", spec.n_rings)
    return offsets


def _uniform_in_footprint(rng: np.random.Generator, n: int, spec: ScenarioSpec, min_site_dist: float) -> np.ndarray:
    extent = spec.isd * spec.n_rings + spec.isd / math.sqrt(3.0)
    out = np.zeros((0, 2))
    while len(out) < n:
        batch = rng.uniform(-extent, extent, size=(max(2 * (n - len(out)), 64), 2))
        axial = nearest_lattice_axial(batch, spec.isd)
        keep = hex_distance(axial) <= spec.n_rings
        if min_site_dist > 0:
            centre = axial_to_xy(axial[:, 0], axial[:, 1], spec.isd)
            keep &= np.hypot(*(batch - centre).T) >= min_site_dist
        out = np.concatenate([out, batch[keep]])
    return out[:n]


def _check_corridor(c: CorridorSpec, spec: ScenarioSpec) -> None:
    xs = np.linspace(c.x_range[0], c.x_range[1], max(2, int(np.ceil((c.x_range[1] - c.x_range[0]) / 10.0)) + 1))
    ys = np.linspace(c.y_range[0], c.y_range[1], max(2, int(np.ceil((c.y_range[1] - c.y_range[0]) / 10.0)) + 1))
    grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    if not np.all(in_footprint(grid, spec.isd, spec.n_rings)):
        raise ConfigurationError(f"corridor {c.to_dict()} leaves the layout footprint")


def drop_ues(spec: ScenarioSpec, deployment: Deployment, rng: np.random.Generator) -> Deployment:
    """Fill the deployment with ground users and UAVs; GUEs come first, then UAVs."""
    n_gue = spec.gue_per_cell * deployment.n_cells
    gue_xy = _uniform_in_footprint(rng, n_gue, spec, MIN_GUE_DISTANCE_M)
    parts = [np.column_stack([gue_xy, np.full(n_gue, spec.gue_height)])]
    n_uav = spec.n_uavs
    if n_uav > 0 and spec.uav_mode == "corridors":
        for c in spec.corridors:
            _check_corridor(c, spec)
        for c in spec.corridors:
            x = rng.uniform(c.x_range[0], c.x_range[1], spec.uavs_per_corridor)
            y = rng.uniform(c.y_range[0], c.y_range[1], spec.uavs_per_corridor)
            parts.append(np.column_stack([x, y, np.full(spec.uavs_per_corridor, c.height)]))
    elif n_uav > 0:
        uav_xy = _uniform_in_footprint(rng, n_uav, spec, 0.0)
        parts.append(np.column_stack([uav_xy, np.full(n_uav, spec.uniform_uav_height)]))
    ue_xyz = np.concatenate(parts) if parts else np.zeros((0, 3))
    is_uav = np.zeros(len(ue_xyz), dtype=bool)
    is_uav[n_gue:] = True
    return deployment.with_ues(ue_xyz, is_uav)


def decision_bounds(n_cells: int, joint: bool) -> np.ndarray:
    rows = [TILT_BOUNDS_DEG] * n_cells
    if joint:
        rows += [VHPBW_BOUNDS_DEG] * n_cells
    return np.array(rows, dtype=float)


@dataclass(frozen=True, eq=False)
class DecisionVector:
    """Per-cell tilts, plus per-cell vertical beamwidths in joint mode."""

    tilts_deg: np.ndarray
    vhpbw_deg: np.ndarray | None = None

    def __post_init__(self):
        tilts = np.asarray(self.tilts_deg, dtype=float).copy()
        object.__setattr__(self, "tilts_deg", tilts)
        lo, hi = TILT_BOUNDS_DEG
        if tilts.ndim != 1 or np.any(tilts < lo - 1e-9) or np.any(tilts > hi + 1e-9):
            raise ConfigurationError(f"tilts must lie in [{lo}, {hi}] degrees")
        if self.vhpbw_deg is not None:
            vh = np.asarray(self.vhpbw_deg, dtype=float).copy()
            object.__setattr__(self, "vhpbw_deg", vh)
            lo, hi = VHPBW_BOUNDS_DEG
            if vh.shape != tilts.shape or np.any(vh < lo - 1e-9) or np.any(vh > hi + 1e-9):
                raise ConfigurationError(f"vertical HPBW must lie in [{lo}, {hi}] degrees, one per cell")

    @property
    def joint(self) -> bool:
        return self.vhpbw_deg is not None

    @property
    def n_cells(self) -> int:
        return len(self.tilts_deg)

    @property
    def bounds(self) -> np.ndarray:
        return decision_bounds(self.n_cells, self.joint)

    def effective_vhpbw(self) -> np.ndarray:
        if self.vhpbw_deg is None:
            return np.full(self.n_cells, BASELINE_VHPBW_DEG)
        return self.vhpbw_deg

    def as_array(self) -> np.ndarray:
        if self.vhpbw_deg is None:
            return self.tilts_deg.copy()
        return np.concatenate([self.tilts_deg, self.vhpbw_deg])

    @classmethod
    def from_array(cls, x, n_cells: int, joint: bool) -> "DecisionVector":
        x = np.asarray(x, dtype=float)
        expected = 2 * n_cells if joint else n_cells
        if x.shape != (expected,):
            raise ConfigurationError(f"decision length {x.shape} does not match {expected}")
        if joint:
            return cls(x[:n_cells], x[n_cells:])
        return cls(x)

    def to_unit(self) -> np.ndarray:
        b = self.bounds
        return (self.as_array() - b[:, 0]) / (b[:, 1] - b[:, 0])

    @classmethod
    def from_unit(cls, u, n_cells: int, joint: bool) -> "DecisionVector":
        b = decision_bounds(n_cells, joint)
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return cls.from_array(b[:, 0] + u * (b[:, 1] - b[:, 0]), n_cells, joint)

    @classmethod
    def baseline(cls, n_cells: int, joint: bool = False) -> "DecisionVector":
        """All cells down-tilted to -12 degrees with a 10 degree vertical beamwidth."""
        tilts = np.full(n_cells, BASELINE_TILT_DEG)
        return cls(tilts, np.full(n_cells, BASELINE_VHPBW_DEG) if joint else None)

    def to_dict(self) -> dict:
        d = {"tilts_deg": self.tilts_deg.tolist()}
        if self.vhpbw_deg is not None:
            d["vhpbw_deg"] = self.vhpbw_deg.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionVector":
        return cls(np.asarray(d["tilts_deg"], dtype=float), None if d.get("vhpbw_deg") is None else np.asarray(d["vhpbw_deg"], dtype=float))
