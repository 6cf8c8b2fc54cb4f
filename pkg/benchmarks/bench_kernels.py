"""Compare the compiled and numpy backends on the EM hot spots.

    python benchmarks/bench_kernels.py [--n 5000] [--J 40] [--k 4] [--repeat 5] [--iterations 200]
"""

import argparse
import time

import numpy as np

from lcirt import _fallback, kernels
from lcirt.config import FitConfig
from lcirt.data import DimensionPartition
from lcirt.lc import LcParams, em_fit_lc
from lcirt.simulate import GeneratorSpec, simulate
from lcirt.twopl import em_fit_2pl

try:
    from lcirt import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def with_backend(module, fn):
    saved = kernels._impl
    kernels._impl = module
    try:
        return fn()
    finally:
        kernels._impl = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--J", type=int, default=40)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--s", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=200, help="EM iteration cap for the full fits")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, J, k, s = args.n, args.J, args.k, args.s
    lam = rng.uniform(0.1, 0.9, size=(J, k))
    pi = rng.dirichlet(np.ones(k))
    data = simulate(GeneratorSpec(LcParams(pi, lam), n, 1)).data
    Y = data.values
    log_lam, log_1m, log_pi = np.log(lam), np.log1p(-lam), np.log(pi)
    part = DimensionPartition(tuple(1 + j * s // J for j in range(J)))
    _, _, N, S = _fallback.estep(Y, log_lam, log_1m, log_pi)
    free = np.ones(J, dtype=np.uint8)
    free[part.anchors()] = 0
    theta0 = rng.normal(size=(k, s))

    def mstep(mod):
        return mod.mstep_2pl(N, S, part.dims, free, np.ones(J), np.zeros(J), theta0.copy(),
                             0.05, 20.0, 10.0, 30.0, 1e-10, 50)

    config = FitConfig(n_random_starts=2, max_iterations=args.iterations)
    backends = [("python", _fallback)] + ([("cython", _core)] if _core is not None else [])
    print(f"n={n} J={J} k={k} s={s}; best of {args.repeat}; fits capped at {args.iterations} iterations", flush=True)
    print(f"{'benchmark':<14}" + "".join(f"{name:>12}" for name, _ in backends) + ("     speedup" if _core else ""))
    rows = [
        ("estep", lambda mod: best_of(lambda: mod.estep(Y, log_lam, log_1m, log_pi), args.repeat)),
        ("mstep_2pl", lambda mod: best_of(lambda: mstep(mod), args.repeat)),
        ("fit_lc", lambda mod: with_backend(mod, lambda: best_of(lambda: em_fit_lc(data, k, config), 1))),
        ("fit_2pl", lambda mod: with_backend(mod, lambda: best_of(lambda: em_fit_2pl(data, part, k, config), 1))),
    ]
    for label, run in rows:
        times = [run(mod) for _, mod in backends]
        line = f"{label:<14}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line, flush=True)


if __name__ == "__main__":
    main()
