"""Time the compiled kernels against the pure-Python fallback.

Run ``python benchmarks/bench_kernels.py``. Each case reports the best of a
few repeats and checks that both backends return the same loadings.
"""

import argparse
import time

import numpy as np

from sparsefa import kernels
from sparsefa.em import SolverOptions, e_step, fit, principal_start
from sparsefa.penalty import PenaltySpec
from sparsefa.simulation import TrueModel, generate_dataset


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def sweep_case(backend, sm, m, pen):
    start = principal_start(sm.S, m)
    est = e_step(sm, start)
    Lam = np.ascontiguousarray(start.Lambda)
    B = np.ascontiguousarray(est.B)
    A = np.ascontiguousarray(est.A)
    psi = np.ascontiguousarray(start.Psi)

    def run():
        L = Lam.copy()
        backend.cd_sweep(L, B, A, psi, pen.rho, pen.gamma, pen.code, 1, 1e-6, 100)
        return L

    return run


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernels are not built; only the Python fallback is available")
        return
    backends = {name: kernels.get_backend(name) for name in ("python", "cython")}
    cases = [("B", 100, 3), ("C", 50, 4), ("C", 200, 4)]
    pen = PenaltySpec("mcp", 0.05, 2.1)
    print(f"{'case':<24}{'python ms':>12}{'cython ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, n, m in cases:
        sm = generate_dataset(TrueModel.named(name), n, 0)
        label = f"model {name}, N={n}"
        res = {}
        for key, be in backends.items():
            res[key] = best_of(sweep_case(be, sm, m, pen), args.repeats)
        diff = np.max(np.abs(res["python"][1] - res["cython"][1]))
        print(f"{'sweep ' + label:<24}{1e3 * res['python'][0]:>12.3f}{1e3 * res['cython'][0]:>12.3f}"
              f"{res['python'][0] / res['cython'][0]:>10.1f}{diff:>12.1e}")
        res = {}
        for key in backends:
            opts = SolverOptions(backend=key)
            res[key] = best_of(lambda: fit(sm, m, pen, opts)[0].Lambda, args.repeats)
        diff = np.max(np.abs(res["python"][1] - res["cython"][1]))
        print(f"{'EM fit ' + label:<24}{1e3 * res['python'][0]:>12.3f}{1e3 * res['cython'][0]:>12.3f}"
              f"{res['python'][0] / res['cython'][0]:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
