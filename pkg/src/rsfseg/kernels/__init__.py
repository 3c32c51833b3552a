"""Backend dispatch for the voxel kernels.

The backend is chosen at import time from ``RSFSEG_BACKEND`` (``numba`` or
``numpy``); numba is used when importable unless the variable says otherwise.
:func:`use_backend` switches temporarily, which the tests and the benchmark
rely on.
"""
import contextlib
import os
import threading

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba

_KERNELS = (
    "correlate1d", "gradient", "magnitude", "laplacian", "normalize",
    "divergence", "heaviside_product", "delta", "region_mean",
    "fitting_force", "fitting_force_dirac", "combine", "euler_update",
)


def _default_backend():
    name = os.environ.get("RSFSEG_BACKEND", "").strip().lower()
    if not name:
        return "numba" if "numba" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ValueError(f"RSFSEG_BACKEND={name!r}; expected one of {sorted(_BACKENDS)}")
    return name


_active = _BACKENDS[_default_backend()]


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active.NAME


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


@contextlib.contextmanager
def use_backend(name):
    prev = _active.NAME
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _make(fname):
    def call(*args):
        return getattr(_active, fname)(*args)
    call.__name__ = fname
    return call


for _f in _KERNELS:
    globals()[_f] = _make(_f)


_pool_lock = threading.Lock()


@contextlib.contextmanager
def worker_threads(n):
    """Run parallel kernels with ``n`` threads (numba backend only)."""
    if _active.NAME != "numba" or n is None:
        yield
        return
    import numba

    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    with _pool_lock:
        prev = numba.get_num_threads()
        numba.set_num_threads(n)
    try:
        yield
    finally:
        numba.set_num_threads(prev)


@contextlib.contextmanager
def serial_kernels():
    """Force single-threaded kernels in the calling thread (used by tile workers)."""
    if _numba is None:
        yield
        return
    prev = _numba.serial_mode()
    _numba.set_serial_mode(True)
    try:
        yield
    finally:
        _numba.set_serial_mode(prev)
