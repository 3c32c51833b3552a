"""Numba kernels.

Every kernel is compiled twice from the same source: a ``parallel=True``
variant used for voxel-level parallelism and a serial ``nogil`` variant used
when tiles run concurrently on a thread pool (numba's workqueue threading
layer must not be entered from several threads at once).

Each output voxel is written by exactly one iteration with a fixed
accumulation order, so results do not depend on the thread count.
"""
import math
import os
import threading
import types

import numba
import numpy as np
from numba import prange

# TBB in this ecosystem is frequently too old; avoid the probing warning.
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"

NAME = "numba"

_local = threading.local()


def serial_mode():
    return getattr(_local, "serial", False)


def set_serial_mode(flag):
    _local.serial = bool(flag)


class _Dual:
    """Dispatch between the parallel and serial compilation of one function."""

    def __init__(self, fn):
        self.parallel = numba.njit(parallel=True, nogil=True, cache=True)(fn)
        # the on-disk cache is keyed by qualified name, so the serial build
        # needs its own name or it would load the parallel one
        twin = types.FunctionType(fn.__code__, fn.__globals__, fn.__name__ + "_serial",
                                  fn.__defaults__, fn.__closure__)
        twin.__qualname__ = fn.__qualname__ + "_serial"
        self.serial = numba.njit(nogil=True, cache=True)(twin)
        self.__name__ = fn.__name__
        self.__doc__ = fn.__doc__

    def __call__(self, *args):
        if serial_mode():
            return self.serial(*args)
        return self.parallel(*args)


def dual(fn):
    return _Dual(fn)


@dual
def _corr_x(src, w, out):
    nz, ny, nx = src.shape
    r = w.shape[0] // 2
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            acc = w[r] * src[z, y, x]
            for t in range(1, r + 1):
                a = x - t
                if a < 0:
                    a = 0
                b = x + t
                if b > nx - 1:
                    b = nx - 1
                acc += w[r + t] * (src[z, y, a] + src[z, y, b])
            out[z, y, x] = acc


@dual
def _corr_y(src, w, out):
    nz, ny, nx = src.shape
    r = w.shape[0] // 2
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            out[z, y, x] = w[r] * src[z, y, x]
        for t in range(1, r + 1):
            a = y - t
            if a < 0:
                a = 0
            b = y + t
            if b > ny - 1:
                b = ny - 1
            wt = w[r + t]
            for x in range(nx):
                out[z, y, x] += wt * (src[z, a, x] + src[z, b, x])


@dual
def _corr_z(src, w, out):
    nz, ny, nx = src.shape
    r = w.shape[0] // 2
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            out[z, y, x] = w[r] * src[z, y, x]
        for t in range(1, r + 1):
            a = z - t
            if a < 0:
                a = 0
            b = z + t
            if b > nz - 1:
                b = nz - 1
            wt = w[r + t]
            for x in range(nx):
                out[z, y, x] += wt * (src[a, y, x] + src[b, y, x])


def correlate1d(src, w, axis):
    out = np.empty_like(src)
    if axis == 2:
        _corr_x(src, w, out)
    elif axis == 1:
        _corr_y(src, w, out)
    else:
        _corr_z(src, w, out)
    return out


@dual
def _gradient(phi, gx, gy, gz):
    nz, ny, nx = phi.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            if nx < 2:
                gx[z, y, x] = 0.0
            elif x == 0:
                gx[z, y, x] = phi[z, y, 1] - phi[z, y, 0]
            elif x == nx - 1:
                gx[z, y, x] = phi[z, y, x] - phi[z, y, x - 1]
            else:
                gx[z, y, x] = (phi[z, y, x + 1] - phi[z, y, x - 1]) * 0.5
            if ny < 2:
                gy[z, y, x] = 0.0
            elif y == 0:
                gy[z, y, x] = phi[z, 1, x] - phi[z, 0, x]
            elif y == ny - 1:
                gy[z, y, x] = phi[z, y, x] - phi[z, y - 1, x]
            else:
                gy[z, y, x] = (phi[z, y + 1, x] - phi[z, y - 1, x]) * 0.5
            if nz < 2:
                gz[z, y, x] = 0.0
            elif z == 0:
                gz[z, y, x] = phi[1, y, x] - phi[0, y, x]
            elif z == nz - 1:
                gz[z, y, x] = phi[z, y, x] - phi[z - 1, y, x]
            else:
                gz[z, y, x] = (phi[z + 1, y, x] - phi[z - 1, y, x]) * 0.5


def gradient(phi):
    gx = np.empty_like(phi)
    gy = np.empty_like(phi)
    gz = np.empty_like(phi)
    _gradient(phi, gx, gy, gz)
    return gx, gy, gz


@dual
def _magnitude(gx, gy, gz, out):
    nz, ny, nx = gx.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            a = gx[z, y, x]
            b = gy[z, y, x]
            c = gz[z, y, x]
            out[z, y, x] = math.sqrt(a * a + b * b + c * c)


def magnitude(gx, gy, gz):
    out = np.empty_like(gx)
    _magnitude(gx, gy, gz, out)
    return out


@dual
def _laplacian(phi, out):
    nz, ny, nx = phi.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            c = phi[z, y, x]
            acc = 0.0
            if nx > 1:
                xa = x - 1 if x > 0 else 0
                xb = x + 1 if x < nx - 1 else nx - 1
                acc += phi[z, y, xb] + phi[z, y, xa] - 2.0 * c
            if ny > 1:
                ya = y - 1 if y > 0 else 0
                yb = y + 1 if y < ny - 1 else ny - 1
                acc += phi[z, yb, x] + phi[z, ya, x] - 2.0 * c
            if nz > 1:
                za = z - 1 if z > 0 else 0
                zb = z + 1 if z < nz - 1 else nz - 1
                acc += phi[zb, y, x] + phi[za, y, x] - 2.0 * c
            out[z, y, x] = acc


def laplacian(phi):
    out = np.empty_like(phi)
    _laplacian(phi, out)
    return out


@dual
def _normalize(gx, gy, gz, mag, floor, nxo, nyo, nzo):
    nz, ny, nx = gx.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            m = mag[z, y, x]
            if m < floor:
                m = floor
            nxo[z, y, x] = gx[z, y, x] / m
            nyo[z, y, x] = gy[z, y, x] / m
            nzo[z, y, x] = gz[z, y, x] / m


def normalize(gx, gy, gz, mag, floor):
    a = np.empty_like(gx)
    b = np.empty_like(gx)
    c = np.empty_like(gx)
    _normalize(gx, gy, gz, mag, floor, a, b, c)
    return a, b, c


@dual
def _divergence(vx, vy, vz, out):
    nz, ny, nx = vx.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            if nx < 2:
                dx = 0.0
            elif x == 0:
                dx = vx[z, y, 1] - vx[z, y, 0]
            elif x == nx - 1:
                dx = vx[z, y, x] - vx[z, y, x - 1]
            else:
                dx = (vx[z, y, x + 1] - vx[z, y, x - 1]) * 0.5
            if ny < 2:
                dy = 0.0
            elif y == 0:
                dy = vy[z, 1, x] - vy[z, 0, x]
            elif y == ny - 1:
                dy = vy[z, y, x] - vy[z, y - 1, x]
            else:
                dy = (vy[z, y + 1, x] - vy[z, y - 1, x]) * 0.5
            if nz < 2:
                dz = 0.0
            elif z == 0:
                dz = vz[1, y, x] - vz[0, y, x]
            elif z == nz - 1:
                dz = vz[z, y, x] - vz[z - 1, y, x]
            else:
                dz = (vz[z + 1, y, x] - vz[z - 1, y, x]) * 0.5
            out[z, y, x] = dx + dy + dz


def divergence(vx, vy, vz):
    out = np.empty_like(vx)
    _divergence(vx, vy, vz, out)
    return out


@dual
def _heaviside_product(phi, img, eps, sign, h, hi):
    nz, ny, nx = phi.shape
    c = 2.0 / np.pi
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            v = 0.5 * (1.0 + c * math.atan(phi[z, y, x] / eps))
            if sign < 0:
                v = 1.0 - v
            h[z, y, x] = v
            hi[z, y, x] = v * img[z, y, x]


def heaviside_product(phi, img, eps, sign):
    h = np.empty_like(phi)
    hi = np.empty_like(phi)
    _heaviside_product(phi, img, eps, sign, h, hi)
    return h, hi


@dual
def _delta(phi, eps, out):
    nz, ny, nx = phi.shape
    c = 1.0 / np.pi
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            u = phi[z, y, x]
            out[z, y, x] = c * (eps / (eps * eps + u * u))


def delta(phi, eps):
    out = np.empty_like(phi)
    _delta(phi, eps, out)
    return out


@dual
def _region_mean(khi, kh, floor, imin, imax, out):
    nz, ny, nx = kh.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            d = kh[z, y, x]
            if d < floor:
                r = khi[z, y, x] / floor
                if r < imin:
                    r = imin
                elif r > imax:
                    r = imax
            else:
                r = khi[z, y, x] / d
            out[z, y, x] = r


def region_mean(khi, kh, floor, imin, imax):
    out = np.empty_like(kh)
    _region_mean(khi, kh, floor, imin, imax, out)
    return out


@dual
def _fitting_force(ki, ki2, r, out):
    nz, ny, nx = r.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            rv = r[z, y, x]
            out[z, y, x] = ki2[z, y, x] - 2.0 * rv * ki[z, y, x] + rv * rv


def fitting_force(img, ki, ki2, r):
    out = np.empty_like(r)
    _fitting_force(ki, ki2, r, out)
    return out


@dual
def _fitting_force_dirac(img, r, out):
    nz, ny, nx = r.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            d = img[z, y, x] - r[z, y, x]
            out[z, y, x] = d * d


def fitting_force_dirac(img, r):
    out = np.empty_like(r)
    _fitting_force_dirac(img, r, out)
    return out


@dual
def _combine(lap, kappa, dlt, fp, fm, alpha, beta, out):
    nz, ny, nx = lap.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            kv = kappa[z, y, x]
            out[z, y, x] = (lap[z, y, x] - kv) + dlt[z, y, x] * (
                alpha * kv + beta * (-(fp[z, y, x] - fm[z, y, x])))


def combine(lap, kappa, dlt, fp, fm, alpha, beta):
    out = np.empty_like(lap)
    _combine(lap, kappa, dlt, fp, fm, alpha, beta, out)
    return out


@dual
def _euler_update(phi, e, dt, out):
    nz, ny, nx = phi.shape
    for k in prange(nz * ny):
        z = k // ny
        y = k - z * ny
        for x in range(nx):
            out[z, y, x] = phi[z, y, x] + dt * e[z, y, x]


def euler_update(phi, e, dt):
    out = np.empty_like(phi)
    _euler_update(phi, e, dt, out)
    return out

