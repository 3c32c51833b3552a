"""Overlap metrics, Monte-Carlo sub-volume sampling and the Otsu baseline.

Masks are numpy arrays shaped ``(nz, ny, nx)`` (any nonzero value counts as
foreground). Sample origins are ``(x, y, z)`` voxel coordinates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError
from .ops import as_grid

N_BINS = 256


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _counts(a, b):
    a, b = _pair(a, b)
    inter = int(np.count_nonzero(a & b))
    return inter, int(np.count_nonzero(a)), int(np.count_nonzero(b))


def dice(a, b) -> float:
    """``2|A & B| / (|A| + |B|)``; 1.0 when both masks are empty."""
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def jaccard(a, b) -> float:
    """``|A & B| / |A | B|``; 1.0 when both masks are empty."""
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def otsu_threshold(hist):
    """Otsu threshold of a 256-bin histogram as ``(t, degenerate)``.

    Bins ``>= t`` form the upper class. The between-class variance is
    compared exactly in integer arithmetic and ties go to the lowest ``t``.
    A histogram whose mass sits in a single bin (or is empty) has no valid
    split: the occupied bin (0 if empty) is returned with ``degenerate`` set.
    """
    h = np.asarray(hist)
    if h.shape != (N_BINS,):
        raise ShapeError(f"histogram must have {N_BINS} bins, got shape {h.shape}")
    if np.any(h < 0):
        raise ParameterError("histogram counts must be >= 0")
    counts = [int(c) for c in h]
    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))
    occupied = [i for i, c in enumerate(counts) if c]
    if len(occupied) < 2:
        return (occupied[0] if occupied else 0), True

    # maximize (N*s0 - S*n0)^2 / (n0*n1) over splits with both classes nonempty
    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t in range(1, N_BINS):
        n0 += counts[t - 1]
        s0 += (t - 1) * counts[t - 1]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total * s0 - total_sum * n0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t, False


def _bins(values):
    return np.clip(np.floor(np.asarray(values, dtype=np.float64)), 0, N_BINS - 1).astype(np.int64)


def slice_histogram(slice2d):
    """256-bin histogram of values in [0, 255] (bin ``floor(v)``, clamped)."""
    return np.bincount(_bins(slice2d).ravel(), minlength=N_BINS)


def otsu_slice_segment(vol, polarity="bright", return_info=False):
    """Threshold every z slice independently with its own Otsu threshold.

    Bright polarity marks bins ``>= t`` as foreground, dark marks bins
    ``< t``. Degenerate slices are all background. With ``return_info`` the
    per-slice thresholds and degenerate flags are returned as well.
    """
    if polarity not in ("bright", "dark"):
        raise ParameterError(f"polarity must be 'bright' or 'dark', got {polarity!r}")
    a = as_grid(vol)
    mask = np.zeros(a.shape, dtype=np.uint8)
    thresholds, degenerate = [], []
    for z in range(a.shape[0]):
        bins = _bins(a[z])
        t, flat = otsu_threshold(np.bincount(bins.ravel(), minlength=N_BINS))
        thresholds.append(t)
        degenerate.append(flat)
        if not flat:
            mask[z] = (bins >= t) if polarity == "bright" else (bins < t)
    if np.ndim(vol) == 2:
        mask = mask[0]
    if return_info:
        return mask, thresholds, degenerate
    return mask


@dataclass(frozen=True)
class SamplePlan:
    rng_seed: int
    count: int
    subvol: tuple[int, int, int]
    origins: tuple[tuple[int, int, int], ...]


def sample_plan(dims, count, subvol, rng_seed=0) -> SamplePlan:
    """``count`` sub-volume origins drawn uniformly from all valid positions.

    Uses ``numpy.random.default_rng(rng_seed)`` (PCG64), so a seed fully
    determines the plan.
    """
    dims = tuple(int(d) for d in dims)
    subvol = tuple(int(s) for s in subvol)
    if len(dims) != 3 or len(subvol) != 3:
        raise ParameterError("dims and subvol need three entries (x, y, z)")
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if any(s < 1 or s > d for s, d in zip(subvol, dims)):
        raise ParameterError(f"sub-volume {subvol} does not fit in dims {dims}")
    rng = np.random.default_rng(rng_seed)
    high = np.array([d - s + 1 for d, s in zip(dims, subvol)])
    origins = rng.integers(0, high, size=(int(count), 3))
    return SamplePlan(int(rng_seed), int(count), subvol, tuple(tuple(int(v) for v in o) for o in origins))


@dataclass
class MetricsReport:
    """Per-sample Dice/Jaccard plus aggregates."""

    dice: np.ndarray
    jaccard: np.ndarray
    both_empty: np.ndarray = field(default=None)

    def __post_init__(self):
        self.dice = np.asarray(self.dice, dtype=np.float64)
        self.jaccard = np.asarray(self.jaccard, dtype=np.float64)
        if self.both_empty is None:
            self.both_empty = np.zeros(len(self.dice), dtype=bool)
        self.both_empty = np.asarray(self.both_empty, dtype=bool)

    def __len__(self):
        return len(self.dice)

    def summary(self):
        out = {}
        for name in ("dice", "jaccard"):
            v = getattr(self, name)
            if len(v):
                out[name] = {"mean": float(v.mean()), "median": float(np.median(v)), "std": float(v.std())}
            else:
                out[name] = {"mean": float("nan"), "median": float("nan"), "std": float("nan")}
        return out

    def to_table(self):
        lines = [f"{'sample':>6}  {'dice':>8}  {'jaccard':>8}"]
        for i, (d, j, e) in enumerate(zip(self.dice, self.jaccard, self.both_empty)):
            lines.append(f"{i:>6}  {d:8.4f}  {j:8.4f}" + ("  (both empty)" if e else ""))
        s = self.summary()
        for stat in ("mean", "median", "std"):
            lines.append(f"{stat:>6}  {s['dice'][stat]:8.4f}  {s['jaccard'][stat]:8.4f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "dice", "jaccard"])
            for i, (d, j) in enumerate(zip(self.dice, self.jaccard)):
                w.writerow([i, repr(float(d)), repr(float(j))])


def read_metrics_csv(path) -> MetricsReport:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return MetricsReport([float(r["dice"]) for r in rows], [float(r["jaccard"]) for r in rows])


def evaluate(pred, gt, plan: SamplePlan) -> MetricsReport:
    """Dice and Jaccard on every sub-volume of ``plan``."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.ndim == 2:
        p, g = p[np.newaxis], g[np.newaxis]
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    nz, ny, nx = p.shape
    sx, sy, sz = plan.subvol
    if sx > nx or sy > ny or sz > nz:
        raise ParameterError(f"sub-volume {plan.subvol} does not fit in dims {(nx, ny, nz)}")
    d, j, empty = [], [], []
    for x, y, z in plan.origins:
        win = np.s_[z:z + sz, y:y + sy, x:x + sx]
        a, b = p[win], g[win]
        d.append(dice(a, b))
        j.append(jaccard(a, b))
        empty.append(not a.any() and not b.any())
    return MetricsReport(d, j, empty)
