"""Two-objective trust-region BO: Pareto bookkeeping, 2-d hypervolume and HVI-ranked Thompson picks."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .gp import GpHyperparams, ObservationSet, condition, fit, sample_joint
from .turbo import TrustRegionState, gen_candidates


@dataclass(frozen=True)
class ObjectiveVector:
    gue_obj: float
    uav_cov: float

    def __post_init__(self):
        if not (math.isfinite(self.gue_obj) and math.isfinite(self.uav_cov)):
            raise ValueError("objective vector must be finite")
        if not 0.0 <= self.uav_cov <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.gue_obj, self.uav_cov])


def dominates(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_mask(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(len(points), -1) if len(points) else np.zeros((0, 2))
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        ge = np.all(pts >= pts[i], axis=1) & np.any(pts > pts[i], axis=1)
        if ge.any():
            keep[i] = False
    return keep


def pareto_front(points) -> np.ndarray:
    """Nondominated subset ordered by the first objective, descending (stable)."""
    pts = np.asarray(points, dtype=float).reshape(len(points), -1) if len(points) else np.zeros((0, 2))
    front = pts[pareto_mask(pts)]
    order = np.argsort(-front[:, 0], kind="stable")
    return front[order]


def hypervolume_2d(front, ref) -> float:
    """Area dominated by the points and bounded below by ``ref`` (points not above ref are ignored)."""
    pts = np.asarray(front, dtype=float).reshape(-1, 2)
    r = np.asarray(ref, dtype=float)
    pts = pts[np.all(pts > r, axis=1)]
    if len(pts) == 0:
        return 0.0
    pts = pts[np.lexsort((-pts[:, 1], -pts[:, 0]))]
    area, y_top = 0.0, r[1]
    for x, y in pts:
        if y > y_top:
            area += (x - r[0]) * (y - y_top)
            y_top = y
    return float(area)


def hv_contribution(point, front, ref) -> float:
    pts = np.asarray(front, dtype=float).reshape(-1, 2)
    p = np.asarray(point, dtype=float)
    hits = np.nonzero(np.all(pts == p, axis=1))[0]
    if len(hits) == 0:
        raise ValueError("point is not in the front")
    rest = np.delete(pts, hits[0], axis=0)
    return hypervolume_2d(pts, ref) - hypervolume_2d(rest, ref)


def hv_improvement(new_points, front, ref) -> float:
    base = np.asarray(front, dtype=float).reshape(-1, 2)
    both = np.vstack([base, np.asarray(new_points, dtype=float).reshape(-1, 2)])
    return hypervolume_2d(both, ref) - hypervolume_2d(base, ref)


class ParetoArchive:
    """Mutually nondominated (decision, objective) pairs with their hypervolume."""

    def __init__(self, ref_point, bounds=None):
        self.ref = np.asarray(ref_point, dtype=float)
        self.bounds = bounds
        self.decisions: list[np.ndarray] = []
        self.values = np.zeros((0, 2))
        self.sources: list[int] = []  # index into the run's observation list
        self.hv = 0.0

    def __len__(self) -> int:
        return len(self.decisions)

    def add(self, decision, value, source: int = -1) -> bool:
        """Insert if not dominated; drops entries it dominates.  Returns whether it entered."""
        v = np.asarray(value, dtype=float)
        for w in self.values:
            if dominates(w, v) or np.array_equal(w, v):
                return False
        keep = [i for i, w in enumerate(self.values) if not dominates(v, w)]
        self.decisions = [self.decisions[i] for i in keep] + [np.asarray(decision, dtype=float).copy()]
        self.values = np.vstack([self.values[keep], v])
        self.sources = [self.sources[i] for i in keep] + [source]
        self.hv = hypervolume_2d(self.values, self.ref)
        return True

    def contributions(self) -> np.ndarray:
        return np.array([hv_contribution(v, self.values, self.ref) for v in self.values])

    def write_csv(self, path, n_gues: int, header_comment: str | None = None) -> None:
        """Rows sorted by coverage: GUE geo-mean (Mbps), coverage, short hash of the decision."""
        order = np.argsort(self.values[:, 1], kind="stable")
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["gue_geo_mean_mbps", "uav_coverage", "decision_hash"])
            for i in order:
                g = math.exp(self.values[i, 0] / n_gues) / 1e6
                h = hashlib.sha256(np.asarray(self.decisions[i], dtype="<f8").tobytes()).hexdigest()[:12]
                w.writerow([repr(g), repr(float(self.values[i, 1])), h])


def gue_at_coverage(front, coverage: float) -> float:
    """Best first objective among front points reaching ``coverage`` (-inf if none)."""
    pts = np.asarray(front, dtype=float).reshape(-1, 2)
    ok = pts[:, 1] >= coverage
    return float(pts[ok, 0].max()) if ok.any() else -math.inf


def coverage_at_gue(front, gue_value: float) -> float:
    """Best coverage among front points whose first objective is at least ``gue_value``."""
    pts = np.asarray(front, dtype=float).reshape(-1, 2)
    ok = pts[:, 0] >= gue_value
    return float(pts[ok, 1].max()) if ok.any() else -math.inf


@dataclass
class MorboConfig:
    n_regions: int = 5
    batch_q: int = 5
    tau_succ: int = 3
    tau_fail: int = 15
    L_init: float = 0.8
    L_min: float = 0.01
    L_max: float = 1.6
    n_candidates: int = 500
    max_evals: int = 550
    n_init: int | None = None
    seed: int = 0
    gp_restarts: int = 4
    refit_restarts: int = 1
    max_fit_points: int = 300  # hyperparameters are fit on the front plus the newest points
    ref_point: tuple[float, float] | None = None  # None -> first initial point's GUE value minus 10%, coverage 0

    def init_size(self, d: int) -> int:
        return 2 * d if self.n_init is None else self.n_init

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MorboResult:
    archive: ParetoArchive
    points: np.ndarray  # unit-cube decisions, evaluation order
    values: np.ndarray  # (n, 2)
    hv_history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def write_trace_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["step", "hypervolume"])
            for i, hv in enumerate(self.hv_history):
                w.writerow([i, repr(float(hv))])


def _update_counts(tr: TrustRegionState, improved: bool, cfg: MorboConfig) -> None:
    if improved:
        tr.succ_count += 1
        tr.fail_count = 0
    else:
        tr.fail_count += 1
        tr.succ_count = 0
    if tr.succ_count >= cfg.tau_succ:
        tr.L = min(cfg.L_max, 2.0 * tr.L)
        tr.succ_count = 0
    elif tr.fail_count >= cfg.tau_fail:
        tr.L /= 2.0
        tr.fail_count = 0
    if tr.L < cfg.L_min:
        tr.alive = False


def _fit_subset(n: int, front_sources, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    keep = sorted(set(front_sources))[:cap]
    rest = [i for i in range(n - 1, -1, -1) if i not in set(keep)][: cap - len(keep)]
    return np.array(sorted(keep + rest))


def run_morbo(eval_fn2, bounds, config: MorboConfig) -> MorboResult:
    """Maximize (GUE objective, UAV coverage) over a box.

    ``eval_fn2`` maps a raw decision vector to an ObjectiveVector (or a length-2 array).
    All regions share one observation set and one GP per objective; each region is
    centred on the archive point of largest hypervolume contribution among the points
    it collected.  Each step draws one joint posterior sample per objective and region
    and adds candidates greedily by the hypervolume improvement of the sampled values.
    """
    bounds = np.asarray(bounds, dtype=float)
    d = len(bounds)
    span = bounds[:, 1] - bounds[:, 0]
    cfg = config
    ss = np.random.SeedSequence(cfg.seed)
    s_init, s_cand, s_fit, s_restart = ss.spawn(4)
    cand_rng = np.random.default_rng(s_cand)
    restart_rng = np.random.default_rng(s_restart)

    def f(u):
        v = eval_fn2(bounds[:, 0] + np.asarray(u) * span)
        return v.as_array() if isinstance(v, ObjectiveVector) else np.asarray(v, dtype=float)

    pts = np.random.default_rng(s_init).random((cfg.init_size(d), d))
    vals = np.array([f(p) for p in pts])
    ref = np.asarray(cfg.ref_point if cfg.ref_point is not None
                     else (vals[0, 0] - 0.1 * abs(vals[0, 0]), 0.0), dtype=float)
    archive = ParetoArchive(ref, bounds)
    for i, (p, v) in enumerate(zip(pts, vals)):
        archive.add(bounds[:, 0] + p * span, v, i)
    hv_history = [archive.hv]
    owner = list(np.arange(len(pts)) % cfg.n_regions)

    def centre_of(r: int) -> np.ndarray:
        mine = [(k, s) for k, s in enumerate(archive.sources) if owner[s] == r]
        if not mine:
            ids = [i for i in range(len(owner)) if owner[i] == r] or list(range(len(owner)))
            # no front point yet: fall back to the region's best by the sum of ranks
            sub = vals[ids]
            score = np.argsort(np.argsort(sub[:, 0])) + np.argsort(np.argsort(sub[:, 1]))
            return pts[ids[int(np.argmax(score))]].copy()
        hvc = archive.contributions()
        k, s = max(mine, key=lambda t: (hvc[t[0]], -t[1]))
        return pts[s].copy()

    regions = [TrustRegionState(center=centre_of(r), L=cfg.L_init, local_obs=ObservationSet.empty(d))
               for r in range(cfg.n_regions)]
    hypers: list[GpHyperparams | None] = [None, None]
    n_evals = 0
    step = 0
    while n_evals < cfg.max_evals:
        step += 1
        q = min(cfg.batch_q, cfg.max_evals - n_evals)
        models = []
        for j in range(2):
            seed = int(s_fit.spawn(1)[0].generate_state(1)[0])
            obs = ObservationSet(pts, vals[:, j], np.tile([0.0, 1.0], (d, 1)))
            restarts = cfg.gp_restarts if hypers[j] is None else cfg.refit_restarts
            hypers[j] = fit(obs.subset(_fit_subset(len(pts), archive.sources, cfg.max_fit_points)),
                            n_restarts=restarts, seed=seed, init=hypers[j])
            models.append(condition(obs, hypers[j]))
        ls = np.sqrt(hypers[0].lengthscales * hypers[1].lengthscales)
        cands, samples, cand_owner = [], [], []
        for r, tr in enumerate(regions):
            tr.center = centre_of(r)
            tr.hyper = GpHyperparams(ls, 1.0, 0.0, 0.0)
            c = gen_candidates(tr, cfg.n_candidates, cand_rng)
            s = np.column_stack([sample_joint(m, c, cand_rng) for m in models])
            cands.append(c)
            samples.append(s)
            cand_owner.append(np.full(len(c), r))
        all_c = np.vstack(cands)
        all_s = np.vstack(samples)
        all_o = np.concatenate(cand_owner)
        front = archive.values.copy()
        used = np.zeros(len(all_c), dtype=bool)
        picks = []
        for _ in range(q):
            base = hypervolume_2d(front, ref)
            gains = np.array([-1.0 if used[i] else hypervolume_2d(np.vstack([front, all_s[i]]), ref) - base
                              for i in range(len(all_c))])
            i = int(np.argmax(gains))
            if gains[i] <= 0.0:
                # nothing improves the sampled front: take the unused sample farthest above ref
                z = (all_s - ref) / np.maximum(np.abs(front - ref).max(axis=0), 1e-12) if len(front) else all_s
                score = np.where(used, -np.inf, z.min(axis=1))
                i = int(np.argmax(score))
            used[i] = True
            picks.append(i)
            front = np.vstack([front, all_s[i]])
        improved = set()
        for i in picks:
            y = f(all_c[i])
            pts = np.vstack([pts, all_c[i]])
            vals = np.vstack([vals, y])
            owner.append(int(all_o[i]))
            n_evals += 1
            if archive.add(bounds[:, 0] + all_c[i] * span, y, len(pts) - 1):
                improved.add(int(all_o[i]))
            hv_history.append(archive.hv)
        for r, tr in enumerate(regions):
            if r in set(int(all_o[i]) for i in picks):
                _update_counts(tr, r in improved, cfg)
            if not tr.alive and n_evals < cfg.max_evals:
                p = restart_rng.random(d)
                y = f(p)
                pts = np.vstack([pts, p])
                vals = np.vstack([vals, y])
                owner.append(r)
                n_evals += 1
                archive.add(bounds[:, 0] + p * span, y, len(pts) - 1)
                hv_history.append(archive.hv)
                regions[r] = TrustRegionState(center=p.copy(), L=cfg.L_init, local_obs=ObservationSet.empty(d),
                                              restarts=tr.restarts + 1)
    return MorboResult(archive, pts, vals, hv_history,
                       {"n_evals": n_evals, "steps": step, "ref_point": ref.tolist()})
