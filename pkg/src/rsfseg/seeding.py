"""Initial level sets from per-slice blob seeds.

Seeds are local maxima of the scale-normalized determinant of the Hessian in
each z slice. The seed set is turned into the exact Euclidean distance to the
nearest seed and shifted by ``seed_radius`` so every seed owns a small
interior ball.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import ParameterError, ShapeError
from .ops import as_grid, convolve_separable
from .volume import gaussian_kernel

@dataclass(frozen=True)
class BlobParams:
    sigma_b: float = 3.0
    response_threshold: float = 0.1
    nms_radius: float | None = None
    polarity: str = "bright"
    min_response: float = 0.0

    def __post_init__(self):
        if not self.sigma_b > 0:
            raise ParameterError(f"sigma_b must be > 0, got {self.sigma_b}")
        if self.nms_radius is None:
            object.__setattr__(self, "nms_radius", 2.0 * self.sigma_b)
        if self.nms_radius < 1:
            raise ParameterError(f"nms_radius must be >= 1, got {self.nms_radius}")
        if self.polarity not in ("bright", "dark"):
            raise ParameterError(f"polarity must be 'bright' or 'dark', got {self.polarity!r}")
        if self.response_threshold < 0 or self.min_response < 0:
            raise ParameterError("thresholds must be >= 0")


@dataclass
class SeedSet:
    """Seed voxels as an ``(n, 3)`` int array of (x, y, z) plus their responses."""

    points: np.ndarray
    responses: np.ndarray = None
    detection_scale: float = 0.0
    response_threshold: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        if self.responses is None:
            self.responses = np.zeros(len(self.points))
        self.responses = np.asarray(self.responses, dtype=np.float64).reshape(-1)
        if len(self.responses) != len(self.points):
            raise ShapeError("one response per seed point required")

    def __len__(self):
        return len(self.points)

    def in_bounds(self, dims):
        p = self.points
        return bool(np.all((p >= 0) & (p < np.asarray(dims))))


def write_seeds(path, seeds: SeedSet):
    lines = [f"{x} {y} {z} {r!r}" for (x, y, z), r in zip(seeds.points.tolist(), seeds.responses.tolist())]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_seeds(path) -> SeedSet:
    pts, resp = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParameterError(f"{path}:{lineno}: expected 'x y z response', got {line!r}")
        pts.append([int(p) for p in parts[:3]])
        resp.append(float(parts[3]))
    return SeedSet(np.array(pts, dtype=np.int64).reshape(-1, 3), np.array(resp))


def _clamped(a, dy, dx):
    ny, nx = a.shape
    yi = np.clip(np.arange(ny) + dy, 0, ny - 1)
    xi = np.clip(np.arange(nx) + dx, 0, nx - 1)
    return a[np.ix_(yi, xi)]


def _second_derivatives(slice2d, sigma_b, polarity):
    s = np.asarray(slice2d, dtype=np.float64)
    if s.ndim != 2 or min(s.shape) < 5:
        raise ShapeError(f"slice must be 2D with both dims >= 5, got shape {s.shape}")
    if polarity == "dark":
        s = -s
    elif polarity != "bright":
        raise ParameterError(f"polarity must be 'bright' or 'dark', got {polarity!r}")
    s = convolve_separable(s, gaussian_kernel(sigma_b))
    ixx = _clamped(s, 0, 1) - 2.0 * s + _clamped(s, 0, -1)
    iyy = _clamped(s, 1, 0) - 2.0 * s + _clamped(s, -1, 0)
    ixy = 0.25 * (_clamped(s, 1, 1) - _clamped(s, -1, 1) - _clamped(s, 1, -1) + _clamped(s, -1, -1))
    return ixx, iyy, ixy


def hessian_det_slice(slice2d, sigma_b, polarity="bright"):
    """Scale-normalized ``sigma^4 * (Ixx * Iyy - Ixy^2)`` of a smoothed slice."""
    if not sigma_b > 0:
        raise ParameterError(f"sigma_b must be > 0, got {sigma_b}")
    ixx, iyy, ixy = _second_derivatives(slice2d, sigma_b, polarity)
    return sigma_b ** 4 * (ixx * iyy - ixy * ixy)


def _local_maxima(resp):
    keep = np.ones(resp.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                keep &= resp >= _clamped(resp, dy, dx)
    return keep


def _slice_seeds(s, bp: BlobParams):
    ixx, iyy, ixy = _second_derivatives(s, bp.sigma_b, bp.polarity)
    resp = bp.sigma_b ** 4 * (ixx * iyy - ixy * ixy)
    top = resp.max()
    if not top > 0:
        return []
    thr = max(bp.response_threshold * top, bp.min_response)
    # a positive determinant with positive trace is a blob of the other polarity
    cand = _local_maxima(resp) & (resp > thr) & (ixx + iyy < 0)
    ys, xs = np.nonzero(cand)
    vals = resp[ys, xs]
    order = np.lexsort((ys, xs, -vals))
    kept = []
    r2 = bp.nms_radius ** 2
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if all((x - kx) ** 2 + (y - ky) ** 2 > r2 for kx, ky, _ in kept):
            kept.append((x, y, float(vals[i])))
    return kept


def detect_seeds(vol, bp: BlobParams = BlobParams()) -> SeedSet:
    """Per-z-slice blob maxima above ``response_threshold * slice max`` with NMS.

    Among candidates closer than ``nms_radius`` the strongest wins; equal
    responses resolve to the smallest (x, y).
    """
    a = as_grid(vol)
    pts, resp = [], []
    for z in range(a.shape[0]):
        for x, y, r in _slice_seeds(a[z], bp):
            pts.append((x, y, z))
            resp.append(r)
    return SeedSet(np.array(pts, dtype=np.int64).reshape(-1, 3), np.array(resp),
                   detection_scale=bp.sigma_b, response_threshold=bp.response_threshold)


def fast_sweep_distance(dims, seeds) -> np.ndarray:
    """Euclidean distance to the nearest seed, shaped ``(nz, ny, nx)``.

    The field is the exact viscosity solution of ``|grad phi| = 1`` with
    ``phi = 0`` on the seeds, so it is nonnegative, zero exactly at seeds,
    the pointwise minimum of the single-seed fields and never increases
    when a seed is added.
    """
    if not isinstance(seeds, SeedSet):
        seeds = SeedSet(seeds)
    if len(seeds) == 0:
        raise ParameterError("the distance field needs at least one seed")
    nx, ny, nz = (int(d) for d in dims)
    if not seeds.in_bounds((nx, ny, nz)):
        raise ParameterError("seed outside the volume bounds")
    free = np.ones((nz, ny, nx), dtype=bool)
    x, y, z = seeds.points.T
    free[z, y, x] = False
    return distance_transform_edt(free).astype(np.float64, copy=False)


def init_phi(vol, bp: BlobParams = BlobParams(), seed_radius=2.0, seeds: SeedSet | None = None):
    """Initial level set ``distance_to_seeds - seed_radius`` and the seeds used."""
    a = as_grid(vol)
    if seeds is None:
        seeds = detect_seeds(a, bp)
    if len(seeds) == 0:
        raise ParameterError(
            "no seeds detected; lower response_threshold/min_response or adjust sigma_b")
    nz, ny, nx = a.shape
    phi0 = fast_sweep_distance((nx, ny, nz), seeds) - float(seed_radius)
    if np.ndim(vol) == 2:
        phi0 = phi0[0]
    return phi0, seeds
