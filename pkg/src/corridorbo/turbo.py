"""Trust-region BO with several local GP models and Thompson sampling across regions."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .bo_core import EvalFn, RunTrace, _unit_eval
from .gp import GpHyperparams, GpPosterior, ObservationSet, condition, fit, sample_joint


@dataclass
class TurboConfig:
    n_regions: int = 5
    batch_q: int = 5
    tau_succ: int = 3
    tau_fail: int = 15
    L_init: float = 0.8
    L_min: float = 2.0**-7
    L_max: float = 1.6
    n_candidates: int = 500  # per region and step
    max_evals: int = 550  # evaluations after the initial design
    n_init: int | None = None  # total initial design, None -> 2d; split across regions
    seed: int = 0
    gp_restarts: int = 4
    refit_restarts: int = 1
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.L_min < self.L_init <= self.L_max:
            raise ValueError("need 0 < L_min < L_init <= L_max")
        if self.n_regions < 1 or self.batch_q < 1:
            raise ValueError("n_regions and batch_q must be positive")

    def init_size(self, d: int) -> int:
        return 2 * d if self.n_init is None else self.n_init

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrustRegionState:
    center: np.ndarray
    L: float
    local_obs: ObservationSet
    succ_count: int = 0
    fail_count: int = 0
    model: GpPosterior | None = None
    hyper: GpHyperparams | None = None
    alive: bool = True
    restarts: int = 0

    @property
    def best_value(self) -> float:
        return float(self.local_obs.values.max()) if self.local_obs.n else -math.inf


def tr_side_lengths(L: float, lengthscales) -> np.ndarray:
    """Per-dimension side lengths proportional to the lengthscales with volume L^d."""
    ls = np.asarray(lengthscales, dtype=float)
    geo = math.exp(np.mean(np.log(ls)))
    return ls * L / geo


def region_box(tr: TrustRegionState) -> np.ndarray:
    d = len(tr.center)
    ls = tr.hyper.lengthscales if tr.hyper is not None else np.ones(d)
    half = 0.5 * tr_side_lengths(tr.L, ls)
    return np.column_stack([np.clip(tr.center - half, 0.0, 1.0), np.clip(tr.center + half, 0.0, 1.0)])


def update_region(tr: TrustRegionState, batch_improved: bool, config: TurboConfig) -> TrustRegionState:
    """Success/failure streak bookkeeping and side-length doubling or halving.

    A region whose L falls below L_min is flagged dead; respawning is the caller's job.
    """
    if batch_improved:
        tr.succ_count += 1
        tr.fail_count = 0
    else:
        tr.fail_count += 1
        tr.succ_count = 0
    if tr.succ_count >= config.tau_succ:
        tr.L = min(config.L_max, 2.0 * tr.L)
        tr.succ_count = 0
    elif tr.fail_count >= config.tau_fail:
        tr.L = tr.L / 2.0
        tr.fail_count = 0
    if tr.L < config.L_min:
        tr.alive = False
    return tr


def gen_candidates(tr: TrustRegionState, n: int, rng: np.random.Generator) -> np.ndarray:
    """Coordinate-sparse perturbations of the centre inside the region's box.

    Each coordinate is redrawn uniformly in the box with probability min(20/d, 1);
    candidates that would perturb nothing get one random coordinate.
    """
    box = region_box(tr)
    d = len(tr.center)
    p = min(20.0 / d, 1.0)
    pert = box[:, 0] + rng.random((n, d)) * (box[:, 1] - box[:, 0])
    mask = rng.random((n, d)) <= p
    empty = ~mask.any(axis=1)
    if empty.any():
        mask[np.nonzero(empty)[0], rng.integers(0, d, int(empty.sum()))] = True
    cand = np.where(mask, pert, tr.center)
    return cand


def _new_region(obs: ObservationSet, config: TurboConfig) -> TrustRegionState:
    i = int(np.argmax(obs.values))
    return TrustRegionState(center=obs.points[i].copy(), L=config.L_init, local_obs=obs)


class TurboRun:
    """State of a TuRBO-m run.  ``step`` proposes, evaluates and updates one batch."""

    def __init__(self, eval_fn: EvalFn, bounds, config: TurboConfig, initial: ObservationSet | None = None):
        self.bounds = np.asarray(bounds, dtype=float)
        self.config = config
        self.d = len(self.bounds)
        self.f = _unit_eval(eval_fn, self.bounds)
        self.trace = RunTrace(self.bounds)
        self.region_log: list[tuple[int, int, float, float]] = []
        ss = np.random.SeedSequence(config.seed)
        s_init, s_cand, s_fit, s_restart = ss.spawn(4)
        self._cand_rng = np.random.default_rng(s_cand)
        self._restart_rng = np.random.default_rng(s_restart)
        self._fit_seq = s_fit
        self.n_evals = 0
        self.step_no = 0
        span = self.bounds[:, 1] - self.bounds[:, 0]
        if initial is None:
            pts = np.random.default_rng(s_init).random((config.init_size(self.d), self.d))
            vals = np.array([self.f(p) for p in pts])
            initial = ObservationSet(pts, vals, self.bounds)
        for p, v, prov in zip(initial.points, initial.values, initial.provenance):
            self.trace.add(0, self.bounds[:, 0] + p * span, v, "copied" if prov == "source" else "init")
        m = config.n_regions
        self.regions = [_new_region(initial.subset(np.arange(l, initial.n, m)), config) for l in range(m)]
        self._init_per_region = max(2, initial.n // m)

    def _fit(self, tr: TrustRegionState, seed: int) -> None:
        restarts = self.config.gp_restarts if tr.hyper is None else self.config.refit_restarts
        tr.hyper = fit(tr.local_obs, n_restarts=restarts, seed=seed, init=tr.hyper)
        tr.model = condition(tr.local_obs, tr.hyper)

    def _respawn(self, idx: int) -> None:
        old = self.regions[idx]
        pts = self._restart_rng.random((self._init_per_region, self.d))
        vals = np.array([self.f(p) for p in pts])
        span = self.bounds[:, 1] - self.bounds[:, 0]
        for p, v in zip(pts, vals):
            self.n_evals += 1
            self.trace.add(self.step_no, self.bounds[:, 0] + p * span, v, "restart", idx)
        tr = _new_region(ObservationSet(pts, vals, self.bounds), self.config)
        tr.restarts = old.restarts + 1
        self.regions[idx] = tr

    def done(self) -> bool:
        return self.n_evals >= self.config.max_evals

    def step(self) -> None:
        cfg = self.config
        self.step_no += 1
        q = min(cfg.batch_q, cfg.max_evals - self.n_evals)
        if q <= 0:
            return
        # seeds are drawn up front so threaded fits stay reproducible
        seeds = [int(s.generate_state(1)[0]) for s in self._fit_seq.spawn(len(self.regions))]
        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as ex:
                list(ex.map(self._fit, self.regions, seeds))
        else:
            for tr, seed in zip(self.regions, seeds):
                self._fit(tr, seed)
        cands, draws = [], []
        for tr in self.regions:
            c = gen_candidates(tr, cfg.n_candidates, self._cand_rng)
            cands.append(c)
            draws.append(sample_joint(tr.model, c, self._cand_rng, n_samples=q))
        # slot j takes the best unused candidate of the j-th joint draw over the union
        owner = np.concatenate([np.full(len(c), r) for r, c in enumerate(cands)])
        all_c = np.vstack(cands)
        all_d = np.vstack(draws)
        used = np.zeros(len(all_c), dtype=bool)
        picks = []
        for j in range(q):
            s = np.where(used, -np.inf, all_d[:, j])
            i = int(np.argmax(s))
            used[i] = True
            picks.append(i)
        span = self.bounds[:, 1] - self.bounds[:, 0]
        new = {r: ([], []) for r in range(len(self.regions))}
        for i in picks:
            r = int(owner[i])
            y = self.f(all_c[i])
            self.n_evals += 1
            self.trace.add(self.step_no, self.bounds[:, 0] + all_c[i] * span, y, "opt", r)
            new[r][0].append(all_c[i])
            new[r][1].append(y)
        for r, (pts, vals) in new.items():
            if not pts:
                continue
            tr = self.regions[r]
            improved = max(vals) > tr.best_value
            tr.local_obs = tr.local_obs.append(np.array(pts), vals)
            tr.center = tr.local_obs.points[int(np.argmax(tr.local_obs.values))].copy()
            update_region(tr, improved, cfg)
        for r, tr in enumerate(self.regions):
            self.region_log.append((self.step_no, r, tr.L, tr.best_value))
            if not tr.alive and not self.done():
                self._respawn(r)

    def run(self) -> RunTrace:
        while not self.done():
            self.step()
        self.trace.meta["n_evals"] = self.n_evals
        self.trace.meta["region_restarts"] = [tr.restarts for tr in self.regions]
        return self.trace


def run_turbo(eval_fn: EvalFn, bounds, config: TurboConfig, initial: ObservationSet | None = None) -> RunTrace:
    """TuRBO-m: ``n_regions`` local GPs; each step evaluates ``batch_q`` Thompson picks."""
    run = TurboRun(eval_fn, bounds, config, initial)
    trace = run.run()
    trace.region_log = run.region_log
    return trace


def write_region_csv(region_log, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["step", "region", "L", "best"])
        for step, r, L, best in region_log:
            w.writerow([step, r, repr(float(L)), repr(float(best))])
