"""Compare the compiled and pure-Python kernels on the hot paths.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from gridincentive import kernels
from gridincentive.agents import AgentPool, CostParams, DerAgent, FeasibleSet
from gridincentive.feeder import compute_sensitivity
from gridincentive.operator import OperatorConfig
from gridincentive.scenario import build_ieee37_phase_c, data_path, load_feeder


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def offline_case(mod, spec, iters):
    model = compute_sensitivity(spec.topology)
    pool = spec.pool()
    n = model.n
    cfg = OperatorConfig.uniform(n)
    R, X = np.ascontiguousarray(model.R), np.ascontiguousarray(model.X)

    def run():
        p, q = pool.uncontrolled()
        mlo, mhi, al, be = (np.zeros(n) for _ in range(4))
        vhat = R @ p + X @ q + model.a
        empty = np.empty(0)
        mod.offline_iterate(p, q, mlo, mhi, al, be, vhat, pool.kind, pool.lo, pool.hi,
                            pool.eta, pool.cp, pool.cq, pool.pref, R, X, model.a, cfg.v_lo,
                            cfg.v_hi, 1.0, 0.0, cfg.phi, cfg.eps1, cfg.eps2, iters, 0.0,
                            empty, empty, empty, empty, np.empty((0, 4 * n)))
    return run


def sweep_case(mod, spec, solves):
    top = spec.topology
    rng = np.random.default_rng(0)
    n = top.n
    injections = [(np.r_[0.0, rng.uniform(-0.05, 0.1, n)], np.r_[0.0, rng.uniform(-0.05, 0.05, n)])
                  for _ in range(solves)]

    def run():
        for p, q in injections:
            P, Q, L, v = np.zeros(n), np.zeros(n), np.zeros(n), np.empty(n + 1)
            mod.sweep(top.frm, top.to, top.r, top.x, p, q, top.v0, 1e-10, 200, P, Q, L, v)
    return run


def project_case(mod, n, calls):
    rng = np.random.default_rng(1)
    agents = [DerAgent(i, FeasibleSet.pv(rng.uniform(0, 1), rng.uniform(0.2, 1)), CostParams())
              for i in range(1, n + 1)]
    pool = AgentPool(agents, n)
    pts = rng.normal(0, 1, (calls, 2, n))
    out_p, out_q = np.empty(n), np.empty(n)

    def run():
        for x, y in pts:
            mod.project_all(x, y, pool.kind, pool.lo, pool.hi, pool.eta, out_p, out_q)
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.backends()
    f3 = load_feeder(data_path("fixture3.feeder.json"))
    ieee = build_ieee37_phase_c()
    cases = [
        ("offline_iterate  fixture3, 20k iters", lambda m: offline_case(m, f3, 20_000)),
        ("offline_iterate  ieee37,    2k iters", lambda m: offline_case(m, ieee, 2_000)),
        ("sweep            ieee37,  200 solves", lambda m: sweep_case(m, ieee, 200)),
        ("project_all      36 buses, 5k calls", lambda m: project_case(m, 36, 5_000)),
    ]
    names = list(backends)
    print(f"{'case':40s}" + "".join(f"{n:>12s}" for n in names) + "     speedup")
    for label, make in cases:
        times = {n: best_of(make(backends[n]), args.repeat) for n in names}
        row = f"{label:40s}" + "".join(f"{times[n]:11.4f}s" for n in names)
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
