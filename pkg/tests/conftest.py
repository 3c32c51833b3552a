import numpy as np
import pytest

from rsfseg import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sphere_sdf(n, radius, center=None):
    c = (n - 1) / 2.0 if center is None else center
    z, y, x = np.mgrid[0:n, 0:n, 0:n].astype(float)
    return np.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2) - radius


def clamp_index(i, n):
    return min(max(i, 0), n - 1)


def dense_convolve(v, weights):
    """Non-separable 3D convolution with the tensor-product kernel, clamp-to-edge."""
    v = np.asarray(v, dtype=np.float64)
    nz, ny, nx = v.shape
    r = len(weights) // 2
    pad = np.pad(v, r, mode="edge")
    out = np.zeros_like(v)
    for dz in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                w = weights[dz + r] * weights[dy + r] * weights[dx + r]
                out += w * pad[r + dz:r + dz + nz, r + dy:r + dy + ny, r + dx:r + dx + nx]
    return out


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
