"""Region-scalable fitting (RSF) level-set evolution.

Sign convention: ``phi < 0`` inside the segmented object. ``H+`` weights the
outside, ``H- = 1 - H+`` the inside; ``r+``/``r-`` are the Gaussian-localized
mean intensities on either side and ``F+``/``F-`` the local fitting errors.

One explicit Euler step is::

    E = [lap(phi) - curv(phi)] + delta(phi) * (alpha * curv(phi) - beta * (F+ - F-))
    phi <- phi + dt * E

with ``curv = div(grad phi / |grad phi|)``. The step is split into the
fourteen named kernels listed in :data:`KERNEL_NAMES` so it can be profiled
kernel by kernel.
"""
from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .errors import NumericalBlowupError, ParameterError, ShapeError
from .ops import DEFAULT_GRAD_FLOOR, as_grid
from .volume import Kernel1D, gaussian_kernel

log = logging.getLogger(__name__)

KERNEL_NAMES = (
    "H-I", "H+I", "K*H-I", "K*H+I", "K*H-", "K*H+", "delta",
    "grad_phi", "|grad_phi|", "lap_phi", "grad_phi/|grad_phi|",
    "R-combine", "E+", "E-",
)

DEFAULT_DENOM_FLOOR = 1e-8


@dataclass(frozen=True)
class RsfParams:
    sigma1: float = 5.0
    sigma2: float = 0.0
    alpha: float = 255.0 * 255.0 * 0.0009
    beta: float = 0.1
    epsilon: float = 1.0
    dt: float = 0.06
    max_iters: int = 500
    convergence_fraction: float = 0.0
    grad_floor: float = DEFAULT_GRAD_FLOOR
    denom_floor: float = DEFAULT_DENOM_FLOOR

    def __post_init__(self):
        if not (self.sigma1 >= 0 and self.sigma2 >= 0):
            raise ParameterError("sigma1 and sigma2 must be >= 0")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.dt > 0:
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ParameterError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not 0 <= self.convergence_fraction < 1:
            raise ParameterError("convergence_fraction must lie in [0, 1)")
        if not (self.grad_floor > 0 and self.denom_floor > 0):
            raise ParameterError("grad_floor and denom_floor must be > 0")

    @classmethod
    def paper_2d(cls, **overrides):
        """Parameter set used for the 2D synthetic-vessel experiments."""
        base = dict(sigma1=19.0, sigma2=9.0, beta=3.5, alpha=255.0 * 255.0 * 0.01, dt=0.1,
                    max_iters=400)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper_3d(cls, **overrides):
        """Parameter set shared by all 3D microscopy segmentations."""
        base = dict(sigma1=5.0, sigma2=0.0, dt=0.06, alpha=255.0 * 255.0 * 0.0009, beta=0.1,
                    max_iters=300)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EvolutionState:
    """Level set plus the image-only convolutions reused by every step."""

    phi: np.ndarray
    iteration: int
    k1: Kernel1D
    k2: Kernel1D
    ki: np.ndarray
    ki2: np.ndarray
    imin: float
    imax: float
    sign_changes: int = field(default=0)


def heaviside_eps(u, epsilon=1.0):
    """Smoothed step ``0.5 * (1 + (2/pi) * arctan(u / epsilon))``."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(np.asarray(u, dtype=np.float64) / epsilon))


def delta_eps(u, epsilon=1.0):
    """Derivative of :func:`heaviside_eps`."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    u = np.asarray(u, dtype=np.float64)
    return (1.0 / np.pi) * (epsilon / (epsilon * epsilon + u * u))


def _conv(a, k: Kernel1D):
    if k.is_dirac:
        return a
    w = k.weights
    out = a
    for axis in (2, 1, 0):
        if a.shape[axis] > 1:
            out = kernels.correlate1d(out, w, axis)
    return out


def _check_same(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"dimension mismatch: {shape} vs {a.shape}")


def _restore(out, like):
    return out[0] if np.ndim(like) == 2 else out


def region_intensities(image, phi, sigma1, epsilon=1.0, denom_floor=DEFAULT_DENOM_FLOOR):
    """Gaussian-localized mean intensity outside (``r+``) and inside (``r-``).

    Where the smoothed Heaviside mass drops below ``denom_floor`` the ratio
    is taken against the floor and clamped to the image range.
    """
    img, ph = as_grid(image), as_grid(phi)
    _check_same(img, ph)
    k1 = gaussian_kernel(sigma1)
    imin, imax = float(img.min()), float(img.max())
    out = []
    for sign in (+1, -1):
        h, hi = kernels.heaviside_product(ph, img, float(epsilon), sign)
        out.append(kernels.region_mean(_conv(hi, k1), _conv(h, k1), float(denom_floor), imin, imax))
    return _restore(out[0], image), _restore(out[1], image)


def directional_forces(image, r_plus, r_minus, ki=None, ki2=None):
    """Local fitting errors ``F+ = K*I^2 - 2 r+ K*I + r+^2`` (same for ``F-``).

    ``ki``/``ki2`` are the image and squared image smoothed at the force
    scale. Passing neither selects the point-kernel form ``(I - r)^2``,
    which is what the expansion reduces to when that scale is zero.
    """
    img = as_grid(image)
    rp, rm = as_grid(r_plus), as_grid(r_minus)
    _check_same(img, rp, rm)
    if ki is None and ki2 is None:
        fp = kernels.fitting_force_dirac(img, rp)
        fm = kernels.fitting_force_dirac(img, rm)
    else:
        ki, ki2 = as_grid(ki), as_grid(ki2)
        _check_same(img, ki, ki2)
        fp = kernels.fitting_force(img, ki, ki2, rp)
        fm = kernels.fitting_force(img, ki, ki2, rm)
    return _restore(fp, image), _restore(fm, image)


def init_state(phi0, image, params: RsfParams) -> EvolutionState:
    phi, img = as_grid(phi0), as_grid(image)
    _check_same(phi, img)
    if not np.all(np.isfinite(phi)):
        raise ParameterError("initial level set contains NaN or Inf")
    k1, k2 = gaussian_kernel(params.sigma1), gaussian_kernel(params.sigma2)
    if k2.is_dirac:
        ki, ki2 = img, img * img
    else:
        ki, ki2 = _conv(img, k2), _conv(img * img, k2)
    return EvolutionState(phi=phi.copy(), iteration=0, k1=k1, k2=k2, ki=ki, ki2=ki2,
                          imin=float(img.min()), imax=float(img.max()))


def _no_timer(name):
    return contextlib.nullcontext()


def _energy(state: EvolutionState, img, p: RsfParams, timer=_no_timer):
    phi = state.phi
    eps = float(p.epsilon)
    floor = float(p.denom_floor)
    dirac = state.k2.is_dirac
    forces = {}
    for sign, tag in ((-1, "-"), (+1, "+")):
        with timer(f"H{tag}I"):
            h, hi = kernels.heaviside_product(phi, img, eps, sign)
        with timer(f"K*H{tag}I"):
            khi = _conv(hi, state.k1)
        with timer(f"K*H{tag}"):
            kh = _conv(h, state.k1)
        del h, hi
        with timer(f"E{tag}"):
            r = kernels.region_mean(khi, kh, floor, state.imin, state.imax)
            if dirac:
                forces[tag] = kernels.fitting_force_dirac(img, r)
            else:
                forces[tag] = kernels.fitting_force(img, state.ki, state.ki2, r)
        del khi, kh, r
    with timer("delta"):
        dlt = kernels.delta(phi, eps)
    with timer("grad_phi"):
        g = kernels.gradient(phi)
    with timer("|grad_phi|"):
        mag = kernels.magnitude(*g)
    with timer("lap_phi"):
        lap = kernels.laplacian(phi)
    with timer("grad_phi/|grad_phi|"):
        n = kernels.normalize(*g, mag, float(p.grad_floor))
        del g, mag
        kappa = kernels.divergence(*n)
        del n
    with timer("R-combine"):
        e = kernels.combine(lap, kappa, dlt, forces["+"], forces["-"],
                            float(p.alpha), float(p.beta))
    return e


def energy(state: EvolutionState, image, params: RsfParams) -> np.ndarray:
    """Update field ``E`` for the current level set (same shape as ``state.phi``)."""
    img = as_grid(image)
    _check_same(img, state.phi)
    return _energy(state, img, params)


def _first_bad_voxel(a):
    z, y, x = np.argwhere(~np.isfinite(a))[0]
    return int(x), int(y), int(z)


def evolve_step(state: EvolutionState, image, params: RsfParams, timer=_no_timer) -> EvolutionState:
    """One explicit Euler step; the input state is left untouched."""
    img = as_grid(image)
    _check_same(img, state.phi)
    e = _energy(state, img, params, timer)
    with timer("R-combine"):
        phi_new = kernels.euler_update(state.phi, e, float(params.dt))
    del e
    if not np.isfinite(phi_new).all():
        voxel = _first_bad_voxel(phi_new)
        raise NumericalBlowupError(
            f"non-finite level set value at voxel (x, y, z) = {voxel} "
            f"in iteration {state.iteration + 1}", voxel=voxel, iteration=state.iteration + 1)
    changes = int(np.count_nonzero((phi_new < 0) != (state.phi < 0)))
    return replace(state, phi=phi_new, iteration=state.iteration + 1, sign_changes=changes)


def evolve(phi0, image, params: RsfParams, workers=None, callback=None, return_state=False):
    """Run up to ``params.max_iters`` steps from ``phi0``.

    Stops early once the fraction of voxels that changed sign in an
    iteration falls below ``params.convergence_fraction`` (0 disables this).
    ``callback(state)`` is invoked after every step.
    """
    img = as_grid(image)
    state = init_state(phi0, img, params)
    n = state.phi.size
    with kernels.worker_threads(workers):
        for _ in range(int(params.max_iters)):
            state = evolve_step(state, img, params)
            if callback is not None:
                callback(state)
            if state.sign_changes / n < params.convergence_fraction:
                log.debug("converged after %d iterations", state.iteration)
                break
    if return_state:
        return state
    return _restore(state.phi, phi0)


def extract_mask(phi) -> np.ndarray:
    """Binary mask (uint8) of the interior ``phi < 0``."""
    return (np.asarray(phi) < 0).astype(np.uint8)
