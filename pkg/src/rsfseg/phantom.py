"""Synthetic tubular-network phantoms with exact ground truth.

Branches are random walks with bounded turning, swept by a ball whose radius
varies linearly along the branch. The image is a two-level composite with a
one-voxel linear edge ramp centered on the tube surface, so the ground-truth
mask (signed tube distance <= 0) coincides with the 50% intensity level.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .ops import convolve_separable
from .volume import gaussian_kernel

SNR_CAP = 1e6


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    n_branches: int = 8
    radius_range: tuple[float, float] = (2.0, 4.0)
    tortuosity: float = 0.12
    foreground: float = 200.0
    background: float = 50.0
    rng_seed: int = 0
    connected: bool = True
    axial_blur: float = 0.0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ParameterError(f"dims must be three positive ints, got {self.dims}")
        rmin, rmax = self.radius_range
        if rmin < 1 or rmax < rmin:
            raise ParameterError(f"radius_range must satisfy 1 <= rmin <= rmax, got {self.radius_range}")
        if self.foreground == self.background:
            raise ParameterError("foreground and background intensities must differ")
        if self.n_branches < 0 or self.tortuosity < 0 or self.axial_blur < 0:
            raise ParameterError("n_branches, tortuosity and axial_blur must be >= 0")

    def to_text(self):
        return "".join(f"{k}: {_fmt(v)}\n" for k, v in asdict(self).items())


@dataclass(frozen=True)
class PerturbSpec:
    gaussian_sigma: float = 0.0
    contrast_axis: str = "none"
    contrast_range: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ParameterError("gaussian_sigma must be >= 0")
        if self.contrast_axis not in ("x", "y", "z", "none"):
            raise ParameterError(f"contrast_axis must be x, y, z or none, got {self.contrast_axis!r}")
        lo, hi = self.contrast_range
        if not 0 < lo <= hi:
            raise ParameterError(f"contrast_range must satisfy 0 < lo <= hi, got {self.contrast_range}")


def _fmt(v):
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    return str(v)


def _random_direction(rng, flat_z):
    while True:
        d = rng.normal(size=3)
        if flat_z:
            d[2] = 0.0
        n = np.linalg.norm(d)
        if n > 1e-6:
            return d / n


def _walk(rng, start, direction, length, lo, hi, tortuosity, flat_z):
    """Random walk with unit steps; stops at ``length`` or the bounding box."""
    pts = [np.asarray(start, dtype=float)]
    d = direction.copy()
    max_turn = 3.0 * tortuosity
    for _ in range(int(length)):
        if tortuosity > 0:
            kick = rng.normal(scale=tortuosity, size=3)
            if flat_z:
                kick[2] = 0.0
            kick -= kick.dot(d) * d
            norm = np.linalg.norm(kick)
            if norm > max_turn:
                kick *= max_turn / norm
            d = d + kick
            d /= np.linalg.norm(d)
        nxt = pts[-1] + d
        if np.any(nxt < lo) or np.any(nxt > hi):
            break
        pts.append(nxt)
    return np.array(pts)


def rasterize_tubes(dims, centerlines, radii, foreground=200.0, background=50.0):
    """Composite image and mask for tubes given as point lists.

    ``centerlines`` holds ``(n, 3)`` arrays of (x, y, z) points spaced at
    most half a voxel apart; ``radii`` the matching per-point radii.
    Returns ``(image, mask, signed_distance)`` shaped ``(nz, ny, nx)``.
    """
    nx, ny, nz = dims
    dist = np.full((nz, ny, nx), np.inf)
    for pts, rad in zip(centerlines, radii):
        rad = np.broadcast_to(np.asarray(rad, dtype=float), (len(pts),))
        for (cx, cy, cz), r in zip(pts, rad):
            pad = r + 2.0
            x0, x1 = max(0, int(np.floor(cx - pad))), min(nx, int(np.ceil(cx + pad)) + 1)
            y0, y1 = max(0, int(np.floor(cy - pad))), min(ny, int(np.ceil(cy + pad)) + 1)
            z0, z1 = max(0, int(np.floor(cz - pad))), min(nz, int(np.ceil(cz + pad)) + 1)
            if x0 >= x1 or y0 >= y1 or z0 >= z1:
                continue
            zz, yy, xx = np.ogrid[z0:z1, y0:y1, x0:x1]
            local = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2) - r
            view = dist[z0:z1, y0:y1, x0:x1]
            np.minimum(view, local, out=view)
    ramp = np.clip(0.5 - dist, 0.0, 1.0)
    image = background + (foreground - background) * ramp
    mask = (dist <= 0).astype(np.uint8)
    return image, mask, dist


def _resample(pts, step=0.5):
    """Insert points so consecutive samples are at most ``step`` apart."""
    if len(pts) < 2:
        return pts, np.zeros(len(pts))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(0.0, arc[-1] + 1e-9, step)
    out = np.stack([np.interp(s, arc, pts[:, i]) for i in range(3)], axis=1)
    return out, s / max(arc[-1], 1e-9)


def generate_network(spec: PhantomSpec):
    """Draw a random tube network.

    Returns ``(image, gt_mask, centerlines)``: float64 image and uint8 mask
    shaped ``(nz, ny, nx)`` and an ``(n, 3)`` int array of (x, y, z) voxel
    coordinates on the branch centerlines.
    """
    nx, ny, nz = spec.dims
    flat_z = nz == 1
    rmin, rmax = spec.radius_range
    margin = rmax + 1.0
    size = np.array([nx, ny, nz], dtype=float)
    lo = np.array([margin, margin, 0.0 if flat_z else margin])
    hi = size - 1.0 - lo
    if flat_z:
        hi[2] = 0.0
    if spec.n_branches and np.any(hi < lo):
        raise ParameterError(f"radius range {spec.radius_range} does not fit in dims {spec.dims}")

    rng = np.random.default_rng(spec.rng_seed)
    lines, radii = [], []
    span = float(max(nx, ny, nz))
    for b in range(spec.n_branches):
        length = rng.uniform(0.5, 1.0) * span
        direction = _random_direction(rng, flat_z)
        if b == 0 or not spec.connected:
            start = lo + rng.uniform(0.25, 0.75, size=3) * (hi - lo)
            fwd = _walk(rng, start, direction, length / 2, lo, hi, spec.tortuosity, flat_z)
            back = _walk(rng, start, -direction, length / 2, lo, hi, spec.tortuosity, flat_z)
            pts = np.concatenate([back[::-1], fwd[1:]])
        else:
            donor = lines[rng.integers(len(lines))]
            start = donor[rng.integers(len(donor))]
            pts = _walk(rng, start, direction, length, lo, hi, spec.tortuosity, flat_z)
        pts, t = _resample(pts)
        r_a, r_b = rng.uniform(rmin, rmax, size=2)
        lines.append(pts)
        radii.append(r_a + (r_b - r_a) * t)

    image, mask, _ = rasterize_tubes(spec.dims, lines, radii, spec.foreground, spec.background)
    if spec.axial_blur > 0 and nz > 1:
        k = gaussian_kernel(spec.axial_blur)
        from . import kernels
        image = kernels.correlate1d(np.ascontiguousarray(image), np.ascontiguousarray(k.weights), 0)

    if lines:
        cl = np.unique(np.rint(np.concatenate(lines)).astype(np.int64), axis=0)
    else:
        cl = np.zeros((0, 3), dtype=np.int64)
    return image, mask, cl


def perturb(image, p: PerturbSpec, rng_seed=0):
    """Additive Gaussian noise, then a linear gain ramp along one axis, clamped to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    out = img.copy()
    if p.gaussian_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        out = out + rng.normal(scale=p.gaussian_sigma, size=img.shape)
    lo, hi = p.contrast_range
    if p.contrast_axis != "none" and (lo != 1.0 or hi != 1.0):
        axis = {"x": -1, "y": -2, "z": -3}[p.contrast_axis]
        n = img.shape[axis]
        gain = np.linspace(lo, hi, n) if n > 1 else np.array([lo])
        shape = [1] * img.ndim
        shape[axis] = n
        out = out * gain.reshape(shape)
    return np.clip(out, 0.0, 255.0)


def snr(image, gt_mask):
    """``(mean foreground - mean background) / std(background)``, capped at :data:`SNR_CAP`."""
    img = np.asarray(image, dtype=np.float64)
    m = np.asarray(gt_mask).astype(bool)
    if not m.any() or m.all():
        raise ParameterError("SNR needs both foreground and background voxels")
    diff = img[m].mean() - img[~m].mean()
    if diff == 0:
        return 0.0
    sd = img[~m].std()
    if sd * SNR_CAP <= abs(diff):
        return float(np.copysign(SNR_CAP, diff))
    return float(diff / sd)
