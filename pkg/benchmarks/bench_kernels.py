"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--quick]

Times the path-map march and the event simulator on both backends, checks
that the outputs agree bit for bit and prints a small table.
"""
import argparse
import time

import numpy as np

from manyserver import _backend, des, psi
from manyserver import phasetype as pt


def bench_psi(backend, K, steps, reps=3):
    rng = np.random.default_rng(0)
    grid = psi.Grid(steps * 1e-3, 1e-3)
    inp = psi.smooth_input(rng, K, grid)
    prm = pt.PhaseTypeParams.erlang(K, float(K))
    d = pt.derive(prm)
    best, out = np.inf, None
    for _ in range(reps):
        t = time.perf_counter()
        out = psi.psi(inp, 0.5, d.R, prm.p, grid, check=False, backend=backend)
        best = min(best, time.perf_counter() - t)
    return best, steps / best, out


def bench_des(backend, n, t_end, K=2):
    prm = pt.PhaseTypeParams.erlang(K, float(K))
    cfg = des.SystemConfig(n, 0.5, "exponential", prm, 0.5)
    init = des.state_from_scaled(0.0, np.zeros(K), cfg)
    sim = des.Simulator(cfg, seed=1, initial=init, backend=backend)
    t = time.perf_counter()
    snaps = sim.run_until(t_end, np.linspace(0.0, t_end, 101))
    el = time.perf_counter() - t
    c = sim.counters()
    events = c["arrivals"] + int(c["C"].sum()) + c["abandons"]
    return el, events / el, snaps.rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args()
    backends = _backend.available()
    steps = 20_000 if args.quick else 200_000
    t_end = 5.0 if args.quick else 50.0
    print(f"backends: {', '.join(backends)} (default {_backend.NAME})")
    print(f"{'kernel':<10}{'backend':<10}{'seconds':>10}{'rate/s':>14}")
    ref = {}
    for name in backends:
        el, rate, out = bench_psi(name, 3, steps)
        print(f"{'psi':<10}{name:<10}{el:>10.4f}{rate:>14.3g}")
        ref.setdefault("psi", []).append((name, out))
        el, rate, rows = bench_des(name, 100, t_end)
        print(f"{'des':<10}{name:<10}{el:>10.4f}{rate:>14.3g}")
        ref.setdefault("des", []).append((name, rows))
    if len(backends) > 1:
        (a, pa), (b, pb) = ref["psi"]
        same_psi = np.array_equal(pa.x, pb.x) and np.array_equal(pa.z, pb.z)
        (_, da), (_, db) = ref["des"]
        same_des = np.array_equal(da, db)
        print(f"bitwise equal: psi {same_psi}, des {same_des}")


if __name__ == "__main__":
    main()
