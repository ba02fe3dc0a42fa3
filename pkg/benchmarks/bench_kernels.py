"""Time the compiled and NumPy integration kernels on identical work.

    python3 benchmarks/bench_kernels.py [--truth-steps N] [--coarse-steps N] [--members M]
"""
import argparse
import time

import numpy as np

from stochl96 import kernels
from stochl96.dynamics import preset
from stochl96.models import GlobalModel, noise_spec
from stochl96.pod import PodBasis


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def truth_case(be, p, n_steps):
    rng = np.random.default_rng(0)
    x0, y0 = rng.standard_normal(p.K), rng.standard_normal(p.K * p.J)

    def run():
        x, y = x0.copy(), y0.copy()
        be.truth_run(x, y, p.K, p.J, p.h, p.F, p.b, p.c, 0.001, n_steps, 0, np.empty((0, p.K)))
        return x
    return run


def coarse_case(be, n_steps, members, K=8):
    rng = np.random.default_rng(0)
    modes, _ = np.linalg.qr(rng.standard_normal((K, K)))
    basis = PodBasis(np.full(K, 1.5), modes, np.linspace(4.7, 2.9, K), np.zeros((K, 0)), np.zeros(K), K)
    spec = noise_spec(GlobalModel(basis), K)
    x0 = 3.0 + rng.standard_normal((members, K))
    eps = rng.standard_normal((n_steps, members, K))

    def run():
        x, r = x0.copy(), np.zeros((members, K))
        out = np.empty((0, members, K))
        div = np.full(members, -1, dtype=np.int64)
        be.coarse_run(x, r, 20.0, 0.005, n_steps, 0, spec.poly, spec.d0, spec.phi, spec.c0, spec.G,
                      spec.xi, spec.a, spec.bq, spec.proj, eps, out, div)
        return x
    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--truth-steps", type=int, default=2000)
    ap.add_argument("--coarse-steps", type=int, default=2000)
    ap.add_argument("--members", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--check-steps", type=int, default=100,
                    help="horizon for the agreement check; chaos amplifies rounding beyond it")
    args = ap.parse_args()
    p = preset("c10")
    print(f"{'kernel':<8} {'backend':<9} {'us/step':>10} {'speedup':>8} {'max |diff|':>11}")
    for label, make, n in (("truth", lambda be, k: truth_case(be, p, k), args.truth_steps),
                           ("coarse", lambda be, k: coarse_case(be, k, args.members), args.coarse_steps)):
        ref = None
        base = None
        for name in ("python", "compiled"):
            if name not in kernels.BACKENDS:
                print(f"{label:<8} {name:<9} {'n/a':>10}")
                continue
            be = kernels.get_backend(name)
            t = best_of(make(be, n), args.repeat)
            res = make(be, args.check_steps)()
            ref = res if ref is None else ref
            base = t if base is None else base
            print(f"{label:<8} {name:<9} {1e6 * t / n:>10.2f} {base / t:>8.1f} {np.abs(res - ref).max():>11.2e}")


if __name__ == "__main__":
    main()
