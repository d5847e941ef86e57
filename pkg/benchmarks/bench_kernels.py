"""Times the compiled kernels against the numpy fallback on inputs the size of the 19-site, 850-UE scenario.

    python benchmarks/bench_kernels.py [--repeat N] [--draws D]

Also runs one full objective evaluation per backend.  Results go to stdout as CSV.
"""
import argparse
import sys
import timeit

import numpy as np

from corridorbo import _kernels_py
from corridorbo.channel import constants, max_gain
from corridorbo.netsim import EvalSettings, NetworkSimulator, received_power_w
from corridorbo.scenario import DecisionVector, ScenarioSpec

try:
    from corridorbo import _ckernels
except ImportError:
    _ckernels = None


def inputs(draws: int):
    spec = ScenarioSpec()
    sim = NetworkSimulator(spec, EvalSettings(n_fading_draws=draws))
    gm = sim.gain_model
    dec = DecisionVector.baseline(spec.n_cells)
    table = gm.table(dec)
    rx = received_power_w(table, spec.tx_power_dbm)
    assoc = np.argmax(table.gains_db, axis=0).astype(np.int64)
    ant = constants()["antenna"]
    vh = np.ascontiguousarray(dec.effective_vhpbw(), dtype=float)
    gain_args = (gm.base_db, gm.att_h_db, gm.elev_deg, dec.tilts_deg, vh,
                 np.ascontiguousarray(max_gain(vh), dtype=float), float(ant["slope"]), float(ant["floor_db"]))
    return sim, dec, gain_args, (rx, sim._fading, assoc, sim.noise_w, table.ue_is_uav)


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--draws", type=int, default=50)
    a = p.parse_args(argv)
    sim, dec, gain_args, mc_args = inputs(a.draws)
    backends = [("python", _kernels_py)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("# compiled extension not built; only the numpy fallback is timed", file=sys.stderr)
    print("kernel,backend,ms_per_call")
    ref = {}
    for name, mod in backends:
        for kname, args in (("compose_gain_db", gain_args), ("mc_mean_log2_sinr", mc_args)):
            fn = getattr(mod, kname)
            out = fn(*args)
            if kname in ref:
                assert np.allclose(out, ref[kname], rtol=1e-10, atol=1e-12), f"{kname} backends disagree"
            ref[kname] = out
            t = min(timeit.repeat(lambda: fn(*args), number=1, repeat=a.repeat))
            print(f"{kname},{name},{1e3 * t:.3f}")
    t = min(timeit.repeat(lambda: sim.evaluate(dec), number=1, repeat=max(3, a.repeat // 4)))
    print(f"full_evaluation,active,{1e3 * t:.3f}")


if __name__ == "__main__":
    main()
