"""Pure-numpy kernels.

Same signatures and arithmetic order as the numba versions so both backends
agree to rounding. Arrays are float64, shape (nz, ny, nx).
"""
import numpy as np

NAME = "numpy"


def _shift(a, axis, offset):
    """a[i + offset] along ``axis`` with clamp-to-edge indexing."""
    n = a.shape[axis]
    idx = np.clip(np.arange(n) + offset, 0, n - 1)
    return np.take(a, idx, axis=axis)


def correlate1d(src, w, axis):
    r = w.shape[0] // 2
    n = src.shape[axis]
    out = w[r] * src
    if r == 0:
        return out
    pad = [(0, 0)] * 3
    pad[axis] = (r, r)
    padded = np.pad(src, pad, mode="edge")
    sl = [slice(None)] * 3
    for t in range(1, r + 1):
        sl[axis] = slice(r - t, r - t + n)
        lo = padded[tuple(sl)]
        sl[axis] = slice(r + t, r + t + n)
        hi = padded[tuple(sl)]
        out += w[r + t] * (lo + hi)
    return out


def _diff(a, axis):
    n = a.shape[axis]
    out = np.zeros_like(a)
    if n < 2:
        return out
    sl = lambda s: tuple(s if ax == axis else slice(None) for ax in range(3))
    out[sl(slice(1, -1))] = (a[sl(slice(2, None))] - a[sl(slice(None, -2))]) * 0.5
    out[sl(slice(0, 1))] = a[sl(slice(1, 2))] - a[sl(slice(0, 1))]
    out[sl(slice(n - 1, n))] = a[sl(slice(n - 1, n))] - a[sl(slice(n - 2, n - 1))]
    return out


def gradient(phi):
    return _diff(phi, 2), _diff(phi, 1), _diff(phi, 0)


def magnitude(gx, gy, gz):
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def laplacian(phi):
    out = np.zeros_like(phi)
    for axis in (2, 1, 0):
        if phi.shape[axis] > 1:
            out += _shift(phi, axis, 1) + _shift(phi, axis, -1) - 2.0 * phi
    return out


def normalize(gx, gy, gz, mag, floor):
    m = np.maximum(mag, floor)
    return gx / m, gy / m, gz / m


def divergence(nx, ny, nz):
    return _diff(nx, 2) + _diff(ny, 1) + _diff(nz, 0)


def heaviside_product(phi, img, eps, sign):
    h = 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(phi / eps))
    if sign < 0:
        h = 1.0 - h
    return h, h * img


def delta(phi, eps):
    return (1.0 / np.pi) * (eps / (eps * eps + phi * phi))


def region_mean(khi, kh, floor, imin, imax):
    floored = kh < floor
    r = khi / np.maximum(kh, floor)
    r = np.where(floored, np.clip(r, imin, imax), r)
    return r


def fitting_force(img, ki, ki2, r):
    return ki2 - 2.0 * r * ki + r * r


def fitting_force_dirac(img, r):
    d = img - r
    return d * d


def combine(lap, kappa, dlt, fp, fm, alpha, beta):
    return (lap - kappa) + dlt * (alpha * kappa + beta * (-(fp - fm)))


def euler_update(phi, e, dt):
    return phi + dt * e

