"""Command-line experiment runner: evaluate, optimize, pareto and transfer modes."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bo_core import BoConfig, RunTrace, run_iterative_bo, run_vanilla_bo
from .errors import CheckpointMismatch, ConfigurationError
from .morbo import MorboConfig, ObjectiveVector, run_morbo
from .netsim import EvalReport, EvalSettings, NetworkSimulator, map_objective_to_geomean
from .scenario import DecisionVector, ScenarioSpec, decision_bounds
from .transfer import TransferPlan, run_transfer_experiment, source_observations, write_comparison_csv
from .turbo import TurboConfig, run_turbo, write_region_csv

log = logging.getLogger("corridorbo")

OUT_ENV = "CORRIDORBO_OUT"
MODES = ("evaluate", "optimize", "pareto", "transfer")
OPTIMIZERS = ("vanilla", "iterative", "turbo")
PRESETS = ("baseline-3gpp",)
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _sub(cls, d: dict | None, what: str):
    d = dict(d or {})
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown {what} fields: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{what}: {exc}") from exc


@dataclass
class TransferSettings:
    source_scenario: dict = field(default_factory=dict)  # overrides applied to the target scenario
    source_evals: int = 550
    n_init: int | None = None
    mixes: tuple = (1.0, 0.5, 0.0)


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    mode: str = "evaluate"
    optimizer: str = "iterative"
    joint_hpbw: bool = False
    preset: str | None = None
    decision: dict | None = None
    eval: EvalSettings = field(default_factory=EvalSettings)
    bo: BoConfig = field(default_factory=BoConfig)
    turbo: TurboConfig = field(default_factory=TurboConfig)
    morbo: MorboConfig = field(default_factory=MorboConfig)
    transfer: TransferSettings = field(default_factory=TransferSettings)
    pareto_modes: tuple = ("corridors",)
    checkpoint_every: int = 25
    output_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}")
        if self.mode == "transfer" and self.optimizer != "turbo":
            raise ConfigurationError("transfer experiments run the turbo optimizer")
        for m in self.pareto_modes:
            if m not in ("corridors", "uniform"):
                raise ConfigurationError(f"unknown pareto mode {m!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k not in ("scenario", "eval", "bo", "turbo", "morbo", "transfer")}
        kw["scenario"] = ScenarioSpec.from_dict(d.get("scenario", {}))
        kw["eval"] = _sub(EvalSettings, d.get("eval"), "eval")
        kw["bo"] = _sub(BoConfig, d.get("bo"), "bo")
        kw["turbo"] = _sub(TurboConfig, d.get("turbo"), "turbo")
        mo = dict(d.get("morbo") or {})
        if mo.get("ref_point") is not None:
            mo["ref_point"] = tuple(mo["ref_point"])
        kw["morbo"] = _sub(MorboConfig, mo, "morbo")
        tr = dict(d.get("transfer") or {})
        if "mixes" in tr:
            tr["mixes"] = tuple(float(m) for m in tr["mixes"])
        kw["transfer"] = _sub(TransferSettings, tr, "transfer")
        if "pareto_modes" in kw:
            kw["pareto_modes"] = tuple(kw["pareto_modes"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "mode": self.mode,
            "optimizer": self.optimizer,
            "joint_hpbw": self.joint_hpbw,
            "preset": self.preset,
            "decision": self.decision,
            "eval": dict(self.eval.__dict__),
            "bo": self.bo.to_dict(),
            "turbo": self.turbo.to_dict(),
            "morbo": {**self.morbo.to_dict(), "ref_point": None if self.morbo.ref_point is None else list(self.morbo.ref_point)},
            "transfer": {**self.transfer.__dict__, "mixes": list(self.transfer.mixes)},
            "pareto_modes": list(self.pareto_modes),
            "checkpoint_every": self.checkpoint_every,
            "output_dir": self.output_dir,
        }

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["scenario"]["seed"] = seed
        for k in ("bo", "turbo", "morbo"):
            d[k]["seed"] = seed
        return ExperimentConfig.from_dict(d)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("checkpoint_every")
        for k in ("bo", "turbo"):
            d[k].pop("threads", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_id() -> str:
    """git-describe of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Outputs:
    """Writes every artifact into one directory with a provenance header."""

    def __init__(self, root: Path, config: ExperimentConfig):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.provenance = {"config_hash": config.config_hash(), "seed": config.scenario.seed, "build": build_id()}

    @property
    def header(self) -> str:
        p = self.provenance
        return f"config_hash={p['config_hash']} seed={p['seed']} build={p['build']}"

    def path(self, name: str) -> Path:
        return self.root / name

    def json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({"provenance": self.provenance, **payload}, indent=2, sort_keys=True) + "\n")
        return p


def write_cdf_csv(path: Path, values, kinds, column: str, header: str) -> None:
    rows = []
    for kind in ("GUE", "UAV"):
        v = np.sort(np.asarray(values)[np.asarray(kinds) == kind])
        n = len(v)
        rows += [(kind, repr(float(x)), repr((i + 1) / n)) for i, x in enumerate(v)]
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write(f"kind,{column},cdf\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


def write_report(out: Outputs, report: EvalReport, prefix: str, sim: NetworkSimulator, decision: DecisionVector,
                 baseline: EvalReport | None = None) -> dict:
    report.write_ue_csv(out.path(f"{prefix}ue.csv"), out.header)
    kinds = np.where(report.ue_is_uav, "UAV", "GUE")
    write_cdf_csv(out.path(f"{prefix}sinr_cdf.csv"), report.sinr_db, kinds, "sinr_db", out.header)
    write_cdf_csv(out.path(f"{prefix}rate_cdf.csv"), report.rate_bps, kinds, "rate_bps", out.header)
    summary = report.summary()
    summary["decision"] = decision.to_dict()
    if baseline is not None:
        summary["baseline_geo_mean_rate_bps"] = baseline.geo_mean_rate_bps
        summary["ratio_to_baseline"] = report.geo_mean_rate_bps / baseline.geo_mean_rate_bps
    out.json(f"{prefix}summary.json", summary)
    return summary


def _simulator(config: ExperimentConfig, spec: ScenarioSpec | None = None) -> NetworkSimulator:
    return NetworkSimulator(spec or config.scenario, config.eval)


def _decision_for(config: ExperimentConfig, n_cells: int) -> DecisionVector:
    if config.decision is not None:
        return DecisionVector.from_dict(config.decision)
    # the all-downtilt preset is also the default decision
    return DecisionVector.baseline(n_cells, config.joint_hpbw)


def cmd_evaluate(config: ExperimentConfig, out: Outputs) -> dict:
    sim = _simulator(config)
    dec = _decision_for(config, config.scenario.n_cells)
    rep = sim.evaluate(dec)
    return write_report(out, rep, "", sim, dec)


class CachedEval:
    """Objective wrapper that replays values stored in a checkpoint and records new ones."""

    def __init__(self, fn, cache: dict[str, float] | None = None):
        self.fn = fn
        self.cache = dict(cache or {})
        self.n_new = 0
        self.on_new = None

    @staticmethod
    def key(x) -> str:
        return np.asarray(x, dtype="<f8").tobytes().hex()

    def __call__(self, x) -> float:
        k = self.key(x)
        if k in self.cache:
            return self.cache[k]
        v = float(self.fn(x))
        self.cache[k] = v
        self.n_new += 1
        if self.on_new is not None:
            self.on_new()
        return v


def load_checkpoint(path: Path, config_hash: str) -> dict:
    if not path.exists():
        return {}
    data = json.loads(path.read_text())
    if data.get("config_hash") != config_hash:
        raise CheckpointMismatch(
            f"{path} belongs to config {data.get('config_hash')}, this run is {config_hash}; "
            "use a different --out or delete the checkpoint")
    return data.get("cache", {})


def _checkpointing(out: Outputs, config: ExperimentConfig, ev: CachedEval, name: str = "checkpoint.json"):
    path = out.path(name)

    def save():
        if ev.n_new % max(1, config.checkpoint_every) == 0:
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"config_hash": out.provenance["config_hash"], "cache": ev.cache}))
            os.replace(tmp, path)

    ev.on_new = save
    return save


def _finish_checkpoint(out: Outputs, ev: CachedEval, name: str = "checkpoint.json") -> None:
    path = out.path(name)
    path.write_text(json.dumps({"config_hash": out.provenance["config_hash"], "cache": ev.cache}))


def _run_optimizer(config: ExperimentConfig, fn, bounds, initial=None) -> RunTrace:
    if config.optimizer == "vanilla":
        return run_vanilla_bo(fn, bounds, config.bo, initial)
    if config.optimizer == "iterative":
        return run_iterative_bo(fn, bounds, config.bo, initial=initial)
    return run_turbo(fn, bounds, config.turbo, initial)


def geomean_mapper(spec: ScenarioSpec, n_ues: int):
    """Objective -> geo-mean rate; only exact when both UE classes carry weight 1/2."""
    if spec.lambda_tradeoff != 0.5:
        return lambda f: math.nan
    return lambda f: map_objective_to_geomean(f, n_ues, 0.5)


def cmd_optimize(config: ExperimentConfig, out: Outputs) -> dict:
    spec = config.scenario
    sim = _simulator(config)
    n_cells, joint = spec.n_cells, config.joint_hpbw
    bounds = decision_bounds(n_cells, joint)
    cache = load_checkpoint(out.path("checkpoint.json"), out.provenance["config_hash"])
    ev = CachedEval(lambda x: sim.evaluate(DecisionVector.from_array(x, n_cells, joint)).objective, cache)
    _checkpointing(out, config, ev)
    trace = _run_optimizer(config, ev, bounds)
    _finish_checkpoint(out, ev)
    n = sim.n_ues
    trace.to_csv(out.path("convergence.csv"), out.header, to_geomean=geomean_mapper(spec, sim.n_ues))
    if getattr(trace, "region_log", None):
        write_region_csv(trace.region_log, out.path("regions.csv"), out.header)
    best = DecisionVector.from_array(trace.best_point, n_cells, joint)
    out.json("best_decision.json", {"decision": best.to_dict(), "best_objective": trace.best_value})
    base = sim.evaluate(DecisionVector.baseline(n_cells, joint))
    summary = write_report(out, sim.evaluate(best), "best_", sim, best, base)
    summary["n_evaluations"] = len(trace)
    summary["optimizer"] = config.optimizer
    summary["trace_meta"] = trace.meta
    out.json("summary.json", summary)
    log.info("best geo-mean %.4f Mbps, %.3fx baseline", summary["geo_mean_rate_bps"] / 1e6, summary["ratio_to_baseline"])
    return summary


def morbo_objective(sim: NetworkSimulator, n_cells: int, joint: bool):
    def f(x):
        r = sim.evaluate(DecisionVector.from_array(x, n_cells, joint))
        gue = np.log(np.maximum(r.rate_bps[~r.ue_is_uav], sim.settings.rate_floor_bps)).sum()
        return ObjectiveVector(float(gue), float(r.uav_coverage))

    return f


def cmd_pareto(config: ExperimentConfig, out: Outputs) -> dict:
    joint = config.joint_hpbw
    result = {}
    for mode in config.pareto_modes:
        spec = config.scenario.replace(uav_mode=mode)
        sim = _simulator(config, spec)
        f = morbo_objective(sim, spec.n_cells, joint)
        mcfg = config.morbo
        if mcfg.ref_point is None:
            b = f(DecisionVector.baseline(spec.n_cells, joint).as_array())
            mcfg = MorboConfig(**{**mcfg.to_dict(), "ref_point": (b.gue_obj - 0.1 * abs(b.gue_obj), 0.0)})
        res = run_morbo(lambda x: f(x), decision_bounds(spec.n_cells, joint), mcfg)
        res.archive.write_csv(out.path(f"archive_{mode}.csv"), spec.n_gues, out.header)
        res.write_trace_csv(out.path(f"hypervolume_{mode}.csv"), out.header)
        result[mode] = {"front_size": len(res.archive), "hypervolume": res.archive.hv, **res.meta}
    out.json("summary.json", {"pareto": result})
    return result


def cmd_transfer(config: ExperimentConfig, out: Outputs) -> dict:
    target = config.scenario
    src_d = {**target.to_dict(), **config.transfer.source_scenario}
    source = ScenarioSpec.from_dict(src_d)
    joint = config.joint_hpbw
    n_cells = target.n_cells
    if source.n_cells != n_cells:
        raise ConfigurationError("source and target must have the same number of cells")
    bounds = decision_bounds(n_cells, joint)
    s_sim, t_sim = _simulator(config, source), _simulator(config, target)
    s_ev = CachedEval(lambda x: s_sim.evaluate(DecisionVector.from_array(x, n_cells, joint)).objective,
                      load_checkpoint(out.path("checkpoint_source.json"), out.provenance["config_hash"]))
    _checkpointing(out, config, s_ev, "checkpoint_source.json")
    s_cfg = TurboConfig(**{**config.turbo.to_dict(), "max_evals": config.transfer.source_evals})
    s_trace = run_turbo(s_ev, bounds, s_cfg)
    _finish_checkpoint(out, s_ev, "checkpoint_source.json")
    s_trace.to_csv(out.path("source_convergence.csv"), out.header)
    n_init = config.transfer.n_init or 2 * len(bounds)
    plan = TransferPlan(source_observations(s_trace), target, 1.0, n_init, config.turbo.seed)
    t_ev = CachedEval(lambda x: t_sim.evaluate(DecisionVector.from_array(x, n_cells, joint)).objective,
                      load_checkpoint(out.path("checkpoint_target.json"), out.provenance["config_hash"]))
    _checkpointing(out, config, t_ev, "checkpoint_target.json")
    traces = run_transfer_experiment(plan, t_ev, bounds, config.turbo, config.transfer.mixes)
    _finish_checkpoint(out, t_ev, "checkpoint_target.json")
    write_comparison_csv(traces, out.path("comparison.csv"), out.header)
    summary = {}
    for mix, tr in traces.items():
        tr.to_csv(out.path(f"trace_mix{int(round(100 * mix))}.csv"), out.header)
        vals = [r.value for r in tr.records if r.phase != "copied"]
        summary[f"mix{int(round(100 * mix))}"] = {"best_target_objective": max(vals)}
    out.json("summary.json", {"transfer": summary})
    return summary


COMMANDS = {"evaluate": cmd_evaluate, "optimize": cmd_optimize, "pareto": cmd_pareto, "transfer": cmd_transfer}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corridorbo", description=__doc__)
    p.add_argument("mode", nargs="?", choices=MODES, help="overrides the config's mode")
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="overrides every seed in the config")
    p.add_argument("--threads", type=int, help="cap on worker threads")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV}/<mode>-<hash> or ./runs/...)")
    p.add_argument("--preset", choices=PRESETS, help="named decision for evaluate mode")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
    if args.mode:
        raw["mode"] = args.mode
    if args.preset:
        raw["preset"] = args.preset
        raw["decision"] = None
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        for k in ("bo", "turbo"):
            raw.setdefault(k, {})
            raw[k]["threads"] = args.threads
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must fit in an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    return cfg


def output_root(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    if cfg.output_dir:
        return Path(cfg.output_dir)
    base = Path(os.environ.get(OUT_ENV) or "runs")
    return base / f"{cfg.mode}-{cfg.config_hash()}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Outputs(output_root(args, cfg), cfg)
        out.json("config.json", {"config": cfg.to_dict()})
        COMMANDS[cfg.mode](cfg, out)
    except (ConfigurationError, CheckpointMismatch) as exc:
        print(f"corridorbo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure mid-run maps to the runtime exit code
        log.debug("run failed", exc_info=True)
        print(f"corridorbo: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(str(out.root))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
