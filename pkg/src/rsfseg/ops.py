"""Discrete differential and convolution operators on 3D grids.

All operators take numpy arrays shaped ``(nz, ny, nx)`` (a 2D ``(ny, nx)``
array is treated as a single slice and returned 2D), work in voxel units in
float64, and never modify their inputs. Axes of length 1 are flat: their
derivatives are zero and convolution along them is the identity.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ParameterError, ShapeError
from .volume import Kernel1D, gaussian_kernel

DEFAULT_GRAD_FLOOR = 1e-8


class VectorField(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray


def as_grid(a) -> np.ndarray:
    """Contiguous float64 3D view/copy of ``a`` (2D input gains a z axis)."""
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[np.newaxis]
    if a.ndim != 3:
        raise ShapeError(f"expected a 2D or 3D array, got shape {a.shape}")
    return np.ascontiguousarray(a, dtype=np.float64)


def _restore(out, like):
    return out[0] if np.ndim(like) == 2 else out


def convolve_separable(v, k: Kernel1D | float) -> np.ndarray:
    """Convolve with ``k`` along every non-flat axis, clamp-to-edge boundaries."""
    if not isinstance(k, Kernel1D):
        k = gaussian_kernel(k)
    a = as_grid(v)
    if k.is_dirac:
        return _restore(a.copy(), v)
    w = np.ascontiguousarray(k.weights)
    out = a
    for axis in (2, 1, 0):
        if a.shape[axis] > 1:
            out = kernels.correlate1d(out, w, axis)
    if out is a:
        out = a.copy()
    return _restore(out, v)


def gradient(phi) -> VectorField:
    """Central differences inside, one-sided differences on the faces."""
    a = as_grid(phi)
    if max(a.shape) < 2:
        raise ShapeError(f"gradient needs at least one axis of length >= 2, got {a.shape}")
    gx, gy, gz = kernels.gradient(a)
    return VectorField(_restore(gx, phi), _restore(gy, phi), _restore(gz, phi))


def gradient_magnitude(g: VectorField) -> np.ndarray:
    gx, gy, gz = (as_grid(c) for c in g)
    if not gx.shape == gy.shape == gz.shape:
        raise ShapeError("vector field components differ in shape")
    return _restore(kernels.magnitude(gx, gy, gz), g[0])


def laplacian(phi) -> np.ndarray:
    """7-point Laplacian (5-point on a single slice), clamp-to-edge."""
    a = as_grid(phi)
    return _restore(kernels.laplacian(a), phi)


def normalized_gradient(phi, grad_floor: float = DEFAULT_GRAD_FLOOR) -> VectorField:
    if not grad_floor > 0:
        raise ParameterError(f"grad_floor must be > 0, got {grad_floor}")
    a = as_grid(phi)
    g = kernels.gradient(a)
    mag = kernels.magnitude(*g)
    n = kernels.normalize(*g, mag, float(grad_floor))
    return VectorField(*(_restore(c, phi) for c in n))


def div_normalized_gradient(phi, grad_floor: float = DEFAULT_GRAD_FLOOR) -> np.ndarray:
    """Curvature ``div(grad phi / max(|grad phi|, grad_floor))``.

    For a signed distance function this is the sum of principal curvatures,
    e.g. ``2/d`` at distance ``d`` from the center of a sphere.
    """
    if not grad_floor > 0:
        raise ParameterError(f"grad_floor must be > 0, got {grad_floor}")
    a = as_grid(phi)
    g = kernels.gradient(a)
    mag = kernels.magnitude(*g)
    n = kernels.normalize(*g, mag, float(grad_floor))
    return _restore(kernels.divergence(*n), phi)
