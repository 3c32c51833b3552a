"""Per-kernel wall-clock profile of the evolution step."""
from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ParameterError
from .ops import as_grid
from .rsf import KERNEL_NAMES, RsfParams, evolve_step, init_state


@dataclass
class ProfileReport:
    names: tuple[str, ...]
    seconds_per_iter: tuple[float, ...]
    percents: tuple[float, ...]
    iterations: int
    dims: tuple[int, int, int]
    workers: int | None
    backend: str

    @property
    def total_per_iter(self):
        return float(sum(self.seconds_per_iter))

    def row(self, name):
        i = self.names.index(name)
        return self.seconds_per_iter[i], self.percents[i]

    def to_table(self):
        nx, ny, nz = self.dims
        head = (f"dims {nx}x{ny}x{nz}  iterations {self.iterations}  "
                f"workers {self.workers if self.workers else 'default'}  backend {self.backend}")
        lines = [head, f"{'kernel':<22}{'ms/iter':>10}{'percent':>10}"]
        for n, s, p in zip(self.names, self.seconds_per_iter, self.percents):
            lines.append(f"{n:<22}{1e3 * s:>10.3f}{p:>10.2f}")
        lines.append(f"{'total':<22}{1e3 * self.total_per_iter:>10.3f}{sum(self.percents):>10.2f}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        lines = ["kernel,seconds_per_iter,percent"]
        lines += [f"{n},{s!r},{p!r}" for n, s, p in zip(self.names, self.seconds_per_iter, self.percents)]
        return "\n".join(lines) + "\n"


def profile_evolution(image, phi0, params: RsfParams, iterations=10, warmup=2, workers=None) -> ProfileReport:
    """Time each named kernel over ``iterations`` steps after ``warmup`` untimed steps."""
    if iterations < 1 or warmup < 0:
        raise ParameterError("iterations must be >= 1 and warmup >= 0")
    img = as_grid(image)
    state = init_state(phi0, img, params)
    acc = defaultdict(float)

    @contextmanager
    def timer(name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            acc[name] += time.perf_counter() - t0

    with kernels.worker_threads(workers):
        for _ in range(warmup):
            state = evolve_step(state, img, params)
        for _ in range(iterations):
            state = evolve_step(state, img, params, timer)

    per = np.array([acc[n] / iterations for n in KERNEL_NAMES])
    total = per.sum()
    pct = 100.0 * per / total if total > 0 else np.full(len(per), 100.0 / len(per))
    nz, ny, nx = img.shape
    return ProfileReport(KERNEL_NAMES, tuple(float(v) for v in per), tuple(float(v) for v in pct),
                         int(iterations), (nx, ny, nz), workers, kernels.get_backend())
