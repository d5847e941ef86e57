"""Expected improvement, run traces, and the two global optimizers (vanilla and per-coordinate iterative BO)."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .gp import GpHyperparams, GpPosterior, ObservationSet, condition, fit

log = logging.getLogger(__name__)

EvalFn = Callable[[np.ndarray], float]


@dataclass
class BoConfig:
    n_init: int | None = None  # None -> 2d
    n_candidates: int = 500
    n_batches: int = 10
    batch_size: int = 50
    xi: float = 0.01
    max_iters: int = 250
    ell_max: int = 3
    seed: int = 0
    f_star: str = "observed"  # or "surrogate": max posterior mean over the candidates
    literal_sigma2: bool = False
    gp_restarts: int = 8
    refit_restarts: int = 2  # later fits are warm-started from the previous hyperparameters
    threads: int = 1

    def __post_init__(self):
        if self.n_batches * self.batch_size != self.n_candidates:
            raise ValueError("n_batches * batch_size must equal n_candidates")
        if not 0.0 <= self.xi < 1.0:
            raise ValueError("xi must lie in [0, 1)")
        if self.f_star not in ("observed", "surrogate"):
            raise ValueError("f_star must be 'observed' or 'surrogate'")

    def init_size(self, d: int) -> int:
        return 2 * d if self.n_init is None else self.n_init

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceRecord:
    iteration: int
    point: np.ndarray
    value: float
    best_value: float
    best_point: np.ndarray
    phase: str = "opt"  # init | opt | copied
    region: int = -1


class RunTrace:
    """Every evaluation in order, with the running best (nondecreasing by construction)."""

    def __init__(self, bounds=None):
        self.records: list[TraceRecord] = []
        self.bounds = None if bounds is None else np.asarray(bounds, dtype=float)
        self.meta: dict = {}

    def __len__(self) -> int:
        return len(self.records)

    def add(self, iteration: int, point, value: float, phase: str = "opt", region: int = -1) -> TraceRecord:
        point = np.asarray(point, dtype=float).copy()
        if self.records and self.records[-1].best_value >= value:
            best_v, best_p = self.records[-1].best_value, self.records[-1].best_point
        else:
            best_v, best_p = float(value), point
        rec = TraceRecord(iteration, point, float(value), float(best_v), best_p, phase, region)
        self.records.append(rec)
        return rec

    @property
    def best_value(self) -> float:
        return self.records[-1].best_value if self.records else -np.inf

    @property
    def best_point(self) -> np.ndarray | None:
        return self.records[-1].best_point if self.records else None

    def best_sequence(self) -> np.ndarray:
        return np.array([r.best_value for r in self.records])

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    def points(self) -> np.ndarray:
        return np.array([r.point for r in self.records])

    def observations(self) -> ObservationSet:
        b = self.bounds
        pts = self.points()
        unit = (pts - b[:, 0]) / (b[:, 1] - b[:, 0])
        prov = ["source" if r.phase == "copied" else "target" for r in self.records]
        return ObservationSet(np.clip(unit, 0.0, 1.0), self.values(), b, prov)

    def best_by_iteration(self) -> list[tuple[int, float]]:
        """Best observed value after each iteration index (last record of each iteration)."""
        out: dict[int, float] = {}
        for r in self.records:
            out[r.iteration] = r.best_value
        return sorted(out.items())

    def to_csv(self, path, header_comment: str | None = None, to_geomean: Callable[[float], float] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["iteration", "phase", "region", "value", "best_observed", "best_observed_geomean", "proposal_norm"])
            for r in self.records:
                geo = repr(float(to_geomean(r.best_value))) if to_geomean else ""
                w.writerow([r.iteration, r.phase, r.region, repr(r.value), repr(r.best_value), geo,
                            repr(float(np.linalg.norm(r.point)))])

    def to_dict(self) -> dict:
        return {
            "bounds": None if self.bounds is None else self.bounds.tolist(),
            "meta": self.meta,
            "records": [
                {"iteration": r.iteration, "point": r.point.tolist(), "value": r.value, "phase": r.phase,
                 "region": r.region}
                for r in self.records
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunTrace":
        t = cls(d.get("bounds"))
        t.meta = d.get("meta", {})
        for r in d["records"]:
            t.add(r["iteration"], r["point"], r["value"], r.get("phase", "opt"), r.get("region", -1))
        return t

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def expected_improvement(mu, sigma, f_star: float, xi: float = 0.01, literal_sigma2: bool = False):
    """EI of maximization: (mu - f* - xi) Phi(delta) + s phi(delta), delta = (mu - f* - xi) / s.

    s is the posterior standard deviation, or the variance when ``literal_sigma2`` is set.
    Where s == 0 the limit max(mu - f* - xi, 0) is returned.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    s = sigma * sigma if literal_sigma2 else sigma
    imp = mu - f_star - xi
    pos = s > 0
    safe = np.where(pos, s, 1.0)
    delta = np.clip(imp / safe, -40.0, 40.0)  # beyond +-40 Phi and phi are exactly 0 or 1 in doubles
    ei = np.where(pos, imp * norm.cdf(delta) + safe * norm.pdf(delta), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def uniform_candidates(box: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in a (d, 2) box; coordinates with lo == hi are copied exactly."""
    box = np.asarray(box, dtype=float)
    cand = rng.uniform(box[:, 0], box[:, 1], size=(n, len(box)))
    fixed = box[:, 0] == box[:, 1]
    cand[:, fixed] = box[fixed, 0]
    return cand


def output_scale(model: GpPosterior) -> float:
    """Standard deviation of the training values (1 when undefined)."""
    sd = float(np.std(model.values)) if model.n > 1 else 0.0
    return sd if sd > 0 else 1.0


def score_ei(model: GpPosterior, cand: np.ndarray, f_star: float, config: BoConfig) -> np.ndarray:
    # the variance form is not scale invariant, so it is applied to standardized outputs
    scale = output_scale(model) if config.literal_sigma2 else 1.0

    def one(batch):
        mu, var = model.predict(batch)
        return expected_improvement(mu / scale, np.sqrt(var) / scale, f_star / scale, config.xi,
                                    config.literal_sigma2)

    batches = np.array_split(cand, config.n_batches) if len(cand) >= config.n_batches else [cand]
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            return np.concatenate(list(ex.map(one, batches)))
    return np.concatenate([one(b) for b in batches])


def propose_by_ei(model: GpPosterior, search_box, f_star: float | None, config: BoConfig,
                  rng: np.random.Generator, candidates: np.ndarray | None = None) -> np.ndarray:
    """Score N_c uniform candidates by EI in batches and return the argmax (first on ties)."""
    cand = uniform_candidates(search_box, config.n_candidates, rng) if candidates is None else candidates
    if len(cand) == 1:
        return cand[0].copy()
    if config.f_star == "surrogate" or f_star is None:
        mu, _ = model.predict(cand)
        f_star = float(mu.max())
    scores = score_ei(model, cand, f_star, config)
    return cand[int(np.argmax(scores))].copy()


class _Fitter:
    """Refits the GP each iteration, warm-starting from the previous solution."""

    def __init__(self, config: BoConfig, seed_seq: np.random.SeedSequence):
        self.config = config
        self.seed_seq = seed_seq
        self.hyper: GpHyperparams | None = None

    def __call__(self, obs: ObservationSet) -> GpPosterior:
        seed = int(self.seed_seq.spawn(1)[0].generate_state(1)[0])
        restarts = self.config.gp_restarts if self.hyper is None else self.config.refit_restarts
        self.hyper = fit(obs, n_restarts=restarts, seed=seed, init=self.hyper)
        return condition(obs, self.hyper)


def _unit_eval(eval_fn: EvalFn, bounds: np.ndarray):
    span = bounds[:, 1] - bounds[:, 0]

    def f(u):
        return float(eval_fn(bounds[:, 0] + np.asarray(u) * span))

    return f


def _initial_design(bounds, n, rng):
    return rng.random((n, len(bounds)))


def run_vanilla_bo(eval_fn: EvalFn, bounds, config: BoConfig, initial: ObservationSet | None = None) -> RunTrace:
    """Global BO over all coordinates at once."""
    bounds = np.asarray(bounds, dtype=float)
    d = len(bounds)
    ss = np.random.SeedSequence(config.seed)
    s_init, s_cand, s_fit = ss.spawn(3)
    f = _unit_eval(eval_fn, bounds)
    trace = RunTrace(bounds)
    obs = _seed_observations(f, bounds, config.init_size(d), np.random.default_rng(s_init), trace, initial)
    rng = np.random.default_rng(s_cand)
    fitter = _Fitter(config, s_fit)
    unit_box = np.tile([0.0, 1.0], (d, 1))
    for n in range(1, config.max_iters + 1):
        model = fitter(obs)
        u = propose_by_ei(model, unit_box, obs.values.max(), config, rng)
        y = f(u)
        obs = obs.append(u, [y])
        trace.add(n, bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0]), y)
    return trace


def _seed_observations(f, bounds, n_init, rng, trace: RunTrace, initial: ObservationSet | None) -> ObservationSet:
    span = bounds[:, 1] - bounds[:, 0]
    if initial is not None:
        for p, v, prov in zip(initial.points, initial.values, initial.provenance):
            trace.add(0, bounds[:, 0] + p * span, v, "copied" if prov == "source" else "init")
        return initial
    pts = _initial_design(bounds, n_init, rng)
    vals = np.array([f(p) for p in pts])
    for p, v in zip(pts, vals):
        trace.add(0, bounds[:, 0] + p * span, v, "init")
    return ObservationSet(pts, vals, bounds)


def cycle_index(n: int, n_coords: int) -> int:
    """1-based coordinate optimized at iteration n: ((n - 1) mod |B|) + 1."""
    return ((n - 1) % n_coords) + 1


def run_iterative_bo(eval_fn: EvalFn, bounds, config: BoConfig, x0=None,
                     initial: ObservationSet | None = None) -> RunTrace:
    """Per-coordinate BO: each iteration moves only coordinate b_n of the current vector.

    One global GP over all coordinates is refit every iteration; the proposal sweeps
    N_c uniform values of the active coordinate with the others held at the previous
    iterate.  The stopping rule only looks at the iterates themselves: their running best
    starts at -inf, and the run ends after ``ell_max`` consecutive full loops that fail to
    raise it (or after ``max_iters`` iterations).  The trace's best still covers the
    initial design too.
    """
    bounds = np.asarray(bounds, dtype=float)
    d = len(bounds)
    span = bounds[:, 1] - bounds[:, 0]
    ss = np.random.SeedSequence(config.seed)
    s_init, s_cand, s_fit = ss.spawn(3)
    f = _unit_eval(eval_fn, bounds)
    trace = RunTrace(bounds)
    obs = _seed_observations(f, bounds, config.init_size(d), np.random.default_rng(s_init), trace, initial)
    rng = np.random.default_rng(s_cand)
    fitter = _Fitter(config, s_fit)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    current = np.clip((x0 - bounds[:, 0]) / span, 0.0, 1.0)
    stale_loops = 0
    iter_best = -np.inf
    loop_best = -np.inf
    n = 0
    while n < config.max_iters:
        n += 1
        b = cycle_index(n, d) - 1
        model = fitter(obs)
        box = np.column_stack([current, current])
        box[b] = (0.0, 1.0)
        u = propose_by_ei(model, box, obs.values.max(), config, rng)
        current = current.copy()
        current[b] = u[b]
        y = f(current)
        obs = obs.append(current, [y])
        trace.add(n, bounds[:, 0] + current * span, y)
        iter_best = max(iter_best, y)
        if b == d - 1:
            if iter_best > loop_best:
                loop_best = iter_best
                stale_loops = 0
            else:
                stale_loops += 1
            if stale_loops >= config.ell_max:
                break
    trace.meta["stopped_at_iteration"] = n
    return trace
