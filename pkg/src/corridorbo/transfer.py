"""Seeding a target optimization with observations carried over from a source scenario."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .bo_core import EvalFn, RunTrace
from .errors import ConfigurationError
from .gp import ObservationSet
from .scenario import ScenarioSpec
from .turbo import TurboConfig, run_turbo

DEFAULT_MIXES = (1.0, 0.5, 0.0)


@dataclass
class TransferPlan:
    source: ObservationSet  # unit-cube points with the values observed on the source scenario
    target_spec: ScenarioSpec | None
    mix: float  # fraction of the initial design evaluated fresh on the target
    n_init: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mix <= 1.0:
            raise ConfigurationError("mix must lie in [0, 1]")
        if self.n_init < 1:
            raise ConfigurationError("n_init must be positive")

    def with_mix(self, mix: float) -> "TransferPlan":
        return TransferPlan(self.source, self.target_spec, mix, self.n_init, self.seed)

    @property
    def n_fresh(self) -> int:
        return int(math.ceil(self.mix * self.n_init - 1e-12))


def source_observations(trace: RunTrace) -> ObservationSet:
    """Every evaluation of a finished source run, in unit-cube coordinates."""
    return trace.observations()


def build_seeded_dataset(plan: TransferPlan, target_eval: EvalFn, bounds) -> ObservationSet:
    """ceil(mix * n_init) fresh target evaluations plus copied source pairs, values used as-is.

    The fresh points come from the same stream a cold TuRBO start with ``plan.seed`` uses,
    so mix=1 reproduces the cold start exactly.
    """
    bounds = np.asarray(bounds, dtype=float)
    d = len(bounds)
    if plan.source.d != d:
        raise ConfigurationError(f"source dimension {plan.source.d} does not match target {d}")
    if plan.source.bounds is not None and not np.allclose(plan.source.bounds, bounds):
        raise ConfigurationError("source and target bounds differ")
    n_fresh = plan.n_fresh
    n_copy = plan.n_init - n_fresh
    if n_copy > plan.source.n:
        raise ConfigurationError(f"need {n_copy} source observations, have {plan.source.n}")
    s_init = np.random.SeedSequence(plan.seed).spawn(4)[0]
    span = bounds[:, 1] - bounds[:, 0]
    fresh = np.random.default_rng(s_init).random((plan.n_init, d))[:n_fresh]
    vals = np.array([float(target_eval(bounds[:, 0] + p * span)) for p in fresh])
    obs = ObservationSet(fresh, vals, bounds, ["target"] * n_fresh)
    if n_copy:
        pick_rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 7]))
        idx = np.sort(pick_rng.choice(plan.source.n, size=n_copy, replace=False))
        obs = obs.append(plan.source.points[idx], plan.source.values[idx], "source")
    return obs


def target_curve(trace: RunTrace) -> np.ndarray:
    """Running best over points actually evaluated on the target (copied values excluded)."""
    vals = [r.value for r in trace.records if r.phase != "copied"]
    return np.maximum.accumulate(np.array(vals)) if vals else np.zeros(0)


def run_transfer_experiment(plan: TransferPlan, target_eval: EvalFn, bounds, config: TurboConfig,
                            mixes=DEFAULT_MIXES) -> dict[float, RunTrace]:
    """One TuRBO run on the target per mix, each started from its own seeded dataset."""
    out = {}
    for mix in mixes:
        p = plan.with_mix(mix)
        init = build_seeded_dataset(p, target_eval, bounds)
        cfg = TurboConfig(**{**config.to_dict(), "seed": plan.seed, "n_init": plan.n_init})
        out[mix] = run_turbo(target_eval, bounds, cfg, initial=init)
    return out


def write_comparison_csv(traces: dict[float, RunTrace], path, header_comment: str | None = None) -> None:
    """Columns: optimizer iteration and the target-only running best of each arm."""
    mixes = sorted(traces, reverse=True)
    curves = {m: [r for r in traces[m].records if r.phase != "init" and r.phase != "copied"] for m in mixes}
    best = {}
    for m in mixes:
        prior = [r.value for r in traces[m].records if r.phase == "init"]
        run = max(prior) if prior else -math.inf
        seq = []
        for r in curves[m]:
            run = max(run, r.value)
            seq.append(run)
        best[m] = seq
    n = max(len(s) for s in best.values()) if best else 0
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"best_mix{int(round(100 * m))}" for m in mixes])
        for i in range(n):
            w.writerow([i + 1] + [repr(float(best[m][i])) if i < len(best[m]) else "" for m in mixes])
