"""Compare the compiled and numpy kernels on a realistic drop.

Run with ``python3 benchmarks/bench_kernels.py [--M 200 --K 5 --L 4]``.
"""

import argparse
import timeit

import numpy as np

from lsfd import _pykernels
from lsfd.scenario import NetworkConfig, generate_scenario
from lsfd.spectral_efficiency import closed_form_coefficients, single_layer_lsfd

try:
    from lsfd import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _inputs(L, K, M):
    sc = generate_scenario(NetworkConfig(L=L, K=K, M=M, varsigma=0.8), 0)
    co = closed_form_coefficients(sc)
    b = np.ascontiguousarray(co.b, dtype=np.complex128)
    c = np.ascontiguousarray(co.c, dtype=np.float64)
    d = np.ascontiguousarray(co.d, dtype=np.float64)
    rho_max = np.sqrt(np.ascontiguousarray(sc.p_max, dtype=np.float64))
    return b, c, d, rho_max


def _time(fn, repeat):
    number = max(1, int(0.2 / max(min(timeit.repeat(fn, number=1, repeat=3)), 1e-9)))
    best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return best * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=4)
    ap.add_argument("--K", type=int, default=5)
    ap.add_argument("--M", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    b, c, d, rho_max = _inputs(args.L, args.K, args.M)
    p = rho_max ** 2
    a = single_layer_lsfd(args.L, args.K).astype(np.complex128)
    backends = {"numpy": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels

    print(f"L={args.L} K={args.K} M={args.M}")
    print(f"{'kernel':<22}{'backend':<10}{'us/call':>12}")
    results = {}
    for name, mod in backends.items():
        results[("sinr_all", name)] = _time(lambda: mod.sinr_all(b, c, d, p, a), args.repeat)

        def sweep(mod=mod, update_a=True):
            rho, aa = rho_max * 0.5, a.copy()
            mod.wmmse_sweep(b, c, d, rho, aa, rho_max, update_a)

        results[("wmmse_sweep", name)] = _time(sweep, args.repeat)
        results[("wmmse_sweep (fixed a)", name)] = _time(
            lambda: sweep(update_a=False), args.repeat)

    for (kernel, name), us in results.items():
        print(f"{kernel:<22}{name:<10}{us:>12.1f}")
    if _ckernels is not None:
        print()
        for kernel in ("sinr_all", "wmmse_sweep", "wmmse_sweep (fixed a)"):
            ratio = results[(kernel, "numpy")] / results[(kernel, "cython")]
            print(f"speed-up {kernel}: {ratio:.1f}x")
    else:
        print("compiled extension not available; numpy only")


if __name__ == "__main__":
    main()
