#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends on the evolution step.

For each grid size and backend this times one full step per iteration
(after warm-up, so numba compilation is excluded), prints the per-kernel
profile of the slowest rows, and checks the two backends agree on the
resulting level set.

Usage:
    python benchmarks/bench_backends.py [--sizes 32 64 96] [--iterations 10] [--workers N]
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from rsfseg import kernels
from rsfseg.profiling import profile_evolution
from rsfseg.rsf import RsfParams, evolve


def sphere_case(n, seed=0):
    c = (n - 1) / 2.0
    z, y, x = np.mgrid[0:n, 0:n, 0:n].astype(float)
    phi0 = np.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2) - n / 4
    rng = np.random.default_rng(seed)
    img = np.where(phi0 < 0, 180.0, 60.0) + rng.normal(scale=10.0, size=phi0.shape)
    return img, phi0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 96])
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--workers", type=int, default=None, help="numba threads (default: all)")
    ap.add_argument("--sigma1", type=float, default=3.0)
    ap.add_argument("--sigma2", type=float, default=1.0)
    ap.add_argument("--top", type=int, default=4, help="slowest kernels to list per run")
    args = ap.parse_args(argv)

    params = RsfParams(sigma1=args.sigma1, sigma2=args.sigma2)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}   sigma1={args.sigma1} sigma2={args.sigma2}   "
          f"iterations={args.iterations}")
    print(f"{'size':>6} {'backend':>8} {'ms/iter':>10} {'ns/voxel':>10}  slowest kernels")
    ok = True
    for n in args.sizes:
        img, phi0 = sphere_case(n)
        per_iter, final = {}, {}
        for name in backends:
            with kernels.use_backend(name):
                rep = profile_evolution(img, phi0, params, iterations=args.iterations, warmup=2,
                                        workers=args.workers)
                final[name] = evolve(phi0, img, RsfParams(sigma1=args.sigma1, sigma2=args.sigma2, max_iters=3),
                                     workers=args.workers)
            per_iter[name] = rep.total_per_iter
            order = np.argsort(rep.seconds_per_iter)[::-1][:args.top]
            slow = ", ".join(f"{rep.names[i]} {rep.percents[i]:.0f}%" for i in order)
            print(f"{n:>5}^3 {name:>8} {1e3 * rep.total_per_iter:>10.2f} "
                  f"{1e9 * rep.total_per_iter / n ** 3:>10.2f}  {slow}")
        if len(backends) > 1:
            ref = final[backends[0]]
            diff = max(float(np.abs(final[b] - ref).max()) for b in backends[1:])
            agree = all(np.allclose(final[b], ref, rtol=1e-9, atol=1e-9) for b in backends[1:])
            ok &= agree
            speed = per_iter["numpy"] / per_iter["numba"] if "numba" in per_iter else float("nan")
            print(f"{'':>6} numba speedup {speed:.1f}x, max |phi difference| after 3 steps {diff:.1e}"
                  f"{'' if agree else '  MISMATCH'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
