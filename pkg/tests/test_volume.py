import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_convolve, sphere_sdf
from rsfseg import ops
from rsfseg.errors import ParameterError, ShapeError, VolumeFormatError
from rsfseg.volume import Kernel1D, Volume, gaussian_kernel, read_volume, write_volume

# 1 / sum_{u=-6..6} exp(-u^2 / 8), evaluated independently
SIGMA2_CENTER_WEIGHT = 0.19967562749792112


class TestGaussianKernel:
    def test_dirac(self):
        k = gaussian_kernel(0)
        assert k.radius == 0
        assert k.weights.tolist() == [1.0]
        assert k.is_dirac

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 1.5, 2.0, 5.0, 19.0])
    def test_normalized_and_symmetric(self, sigma):
        k = gaussian_kernel(sigma)
        assert k.radius == math.ceil(3 * sigma)
        assert abs(k.weights.sum() - 1.0) <= 1e-6
        assert np.array_equal(k.weights, k.weights[::-1])

    def test_center_weight_sigma2(self):
        k = gaussian_kernel(2.0)
        brute = 1.0 / sum(math.exp(-u * u / 8.0) for u in range(-6, 7))
        assert k.weights[k.radius] == pytest.approx(brute, abs=1e-15)
        assert k.weights[k.radius] == pytest.approx(SIGMA2_CENTER_WEIGHT, abs=1e-15)

    @pytest.mark.parametrize("sigma", [-1.0, float("nan"), float("inf")])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ParameterError):
            gaussian_kernel(sigma)

    def test_kernel_invariants(self):
        with pytest.raises(ParameterError):
            Kernel1D(1, np.array([0.2, 0.2, 0.2]))
        with pytest.raises(ParameterError):
            Kernel1D(1, np.array([0.5, 0.3, 0.2]))
        with pytest.raises(ParameterError):
            Kernel1D(2, np.array([0.25, 0.5, 0.25]))


class TestConvolution:
    def test_dirac_is_bitwise_identity(self, rng, backend):
        v = rng.normal(size=(7, 8, 9))
        out = ops.convolve_separable(v, gaussian_kernel(0))
        assert np.array_equal(out, v)
        assert out is not v

    @given(c=st.floats(-300, 300), sigma=st.floats(0.3, 4.0))
    @settings(max_examples=25, deadline=None)
    def test_constant_preserved(self, c, sigma):
        v = np.full((6, 7, 8), c)
        assert np.allclose(ops.convolve_separable(v, sigma), c, atol=1e-5, rtol=0)

    @pytest.mark.parametrize("sigma", [0.8, 1.5])
    def test_matches_dense_oracle(self, rng, backend, sigma):
        v = rng.uniform(0, 255, size=(16, 16, 16))
        k = gaussian_kernel(sigma)
        err = np.abs(ops.convolve_separable(v, k) - dense_convolve(v, k.weights)).max()
        assert err <= 1e-5

    def test_flat_axis_is_identity_along_it(self, rng):
        v = rng.normal(size=(1, 12, 10))
        k = gaussian_kernel(1.0)
        assert np.allclose(ops.convolve_separable(v, k), dense_convolve(v, k.weights), atol=1e-12)

    def test_2d_in_2d_out(self, rng):
        v = rng.normal(size=(10, 11))
        assert ops.convolve_separable(v, 1.0).shape == (10, 11)

    def test_pure(self, rng):
        v = rng.normal(size=(6, 6, 6))
        keep = v.copy()
        ops.convolve_separable(v, 1.0)
        ops.gradient(v)
        ops.laplacian(v)
        ops.div_normalized_gradient(v)
        assert np.array_equal(v, keep)


class TestDifferentialOps:
    def grid(self, n=9):
        return np.mgrid[0:n, 0:n, 0:n].astype(float)  # z, y, x

    def test_gradient_of_ramp(self, backend):
        z, y, x = self.grid()
        g = ops.gradient(x)
        assert np.all(g.gx == 1.0)
        assert np.all(g.gy == 0.0) and np.all(g.gz == 0.0)

    def test_gradient_of_constant(self, backend):
        g = ops.gradient(np.full((5, 6, 7), 3.0))
        assert all(np.all(c == 0) for c in g)

    def test_gradient_of_quadratic(self, backend):
        z, y, x = self.grid()
        g = ops.gradient(x ** 2 + y ** 2)
        inner = np.s_[1:-1, 1:-1, 1:-1]
        assert np.array_equal(g.gx[inner], 2 * x[inner])
        assert np.array_equal(g.gy[inner], 2 * y[inner])

    def test_gradient_needs_an_axis(self):
        with pytest.raises(ShapeError):
            ops.gradient(np.zeros((1, 1, 1)))

    def test_magnitude(self, rng, backend):
        one = np.ones((3, 3, 3))
        assert np.all(ops.gradient_magnitude(ops.VectorField(one, 0 * one, 0 * one)) == 1)
        assert ops.gradient_magnitude(ops.VectorField(3 * one, 4 * one, 0 * one))[1, 1, 1] == 5.0
        gx, gy, gz = rng.normal(size=(3, 5, 5, 5))
        mag = ops.gradient_magnitude(ops.VectorField(gx, gy, gz))
        for idx in [(0, 0, 0), (2, 3, 4), (4, 4, 1)]:
            assert abs(mag[idx] - math.sqrt(gx[idx] ** 2 + gy[idx] ** 2 + gz[idx] ** 2)) <= 1e-6

    def test_laplacian(self, backend):
        z, y, x = self.grid()
        inner = np.s_[1:-1, 1:-1, 1:-1]
        assert np.all(ops.laplacian(np.full((5, 5, 5), 2.0)) == 0)
        assert np.all(ops.laplacian(x ** 2)[inner] == 2.0)
        assert np.all(ops.laplacian(x ** 2 + y ** 2 + z ** 2)[inner] == 6.0)

    def test_curvature_of_plane(self, backend):
        z, y, x = self.grid(12)
        k = ops.div_normalized_gradient(x - 5.5)
        assert np.abs(k[1:-1, 1:-1, 1:-1]).max() <= 1e-6

    @pytest.mark.parametrize("d", [5, 8])
    def test_curvature_of_sphere(self, backend, d):
        phi = sphere_sdf(32, 10.0, center=15.0)
        k = ops.div_normalized_gradient(phi)
        for idx in [(15, 15, 15 + d), (15, 15 - d, 15), (15 + d, 15, 15)]:
            assert abs(k[idx] - 2.0 / d) <= 0.1 * 2.0 / d

    def test_curvature_of_constant(self, backend):
        assert np.all(ops.div_normalized_gradient(np.full((6, 6, 6), 4.0)) == 0)

    @pytest.mark.parametrize("floor", [0.0, -1e-8])
    def test_curvature_floor_validated(self, floor):
        with pytest.raises(ParameterError):
            ops.div_normalized_gradient(np.zeros((4, 4, 4)), grad_floor=floor)

    def test_sdf_gradient_is_unit(self, backend):
        n = 32
        phi = sphere_sdf(n, 9.0)
        mag = ops.gradient_magnitude(ops.gradient(phi))
        c = (n - 1) / 2.0
        z, y, x = np.mgrid[0:n, 0:n, 0:n]
        r = np.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2)
        edge = np.minimum.reduce([x, y, z, n - 1 - x, n - 1 - y, n - 1 - z])
        sel = (edge >= 2) & (r >= 2)
        assert np.abs(mag[sel] - 1).mean() <= 0.05


class TestVolume:
    @given(dims=st.tuples(st.integers(1, 7), st.integers(1, 7), st.integers(1, 7)), data=st.data())
    @settings(max_examples=40, deadline=None)
    def test_index_round_trip(self, dims, data):
        nx, ny, nz = dims
        flat = np.arange(nx * ny * nz, dtype=np.float32)
        v = Volume.from_flat(flat, dims)
        x = data.draw(st.integers(0, nx - 1))
        y = data.draw(st.integers(0, ny - 1))
        z = data.draw(st.integers(0, nz - 1))
        i = v.index(x, y, z)
        assert i == x + nx * (y + ny * z)
        assert v.coords(i) == (x, y, z)
        assert v.data[z, y, x] == flat[i]

    def test_dims_and_length(self):
        v = Volume(np.zeros((2, 3, 4)))
        assert v.dims == (4, 3, 2)
        assert v.flat.size == 24
        assert v.data.dtype == np.float32
        with pytest.raises(ShapeError):
            Volume.from_flat(np.zeros(7), (2, 2, 2))


class TestVolumeIO:
    def test_float_round_trip_bitwise(self, tmp_path, rng):
        data = rng.normal(size=(4, 4, 4)).astype(np.float32)
        path = write_volume(tmp_path / "v.vmh", Volume(data, spacing=(0.5, 0.5, 2.0)))
        back = read_volume(path)
        assert back.dims == (4, 4, 4)
        assert back.spacing == (0.5, 0.5, 2.0)
        assert np.array_equal(back.data.view(np.uint32), data.view(np.uint32))

    def test_u16_rescaled(self, tmp_path):
        raw = np.array([0, 65535, 1000, 65535], dtype="<u2")
        raw.tofile(tmp_path / "a.raw")
        (tmp_path / "a.vmh").write_text("dims: 2 2 1\nspacing: 1 1 1\ndtype: u16\ndata: a.raw\n")
        v = read_volume(tmp_path / "a.vmh")
        assert v.data.max() == 255.0
        assert v.value_range == (0.0, 65535.0)

    @pytest.mark.parametrize("dtype", ["u8", "u16"])
    def test_integer_round_trip(self, tmp_path, dtype):
        data = np.array([[[0, 1, 128, 255]]], dtype=np.float32)
        back = read_volume(write_volume(tmp_path / "m.vmh", Volume(data), dtype=dtype))
        assert np.allclose(back.data, data, atol=1e-3)

    def test_size_mismatch(self, tmp_path):
        np.zeros(7, dtype="<f4").tofile(tmp_path / "b.raw")
        (tmp_path / "b.vmh").write_text("dims: 2 2 2\ndtype: f32\ndata: b.raw\n")
        with pytest.raises(VolumeFormatError, match="payload"):
            read_volume(tmp_path / "b.vmh")

    @pytest.mark.parametrize("header", [
        "dtype: f32\ndata: c.raw\n",
        "dims: 2 2\ndtype: f32\ndata: c.raw\n",
        "dims: 2 2 2\ndtype: f64\ndata: c.raw\n",
        "dims: 2 2 2\nthis line is garbage\ndtype: f32\ndata: c.raw\n",
        "dims: 2 x 2\ndtype: f32\ndata: c.raw\n",
    ])
    def test_bad_headers(self, tmp_path, header):
        np.zeros(8, dtype="<f4").tofile(tmp_path / "c.raw")
        (tmp_path / "c.vmh").write_text(header)
        with pytest.raises(VolumeFormatError):
            read_volume(tmp_path / "c.vmh")

    def test_missing_files(self, tmp_path):
        with pytest.raises(VolumeFormatError):
            read_volume(tmp_path / "nope.vmh")
        (tmp_path / "d.vmh").write_text("dims: 1 1 1\ndtype: f32\ndata: d.raw\n")
        with pytest.raises(VolumeFormatError):
            read_volume(tmp_path / "d.vmh")

    def test_nan_payload_rejected(self, tmp_path):
        np.array([1.0, np.nan], dtype="<f4").tofile(tmp_path / "e.raw")
        (tmp_path / "e.vmh").write_text("dims: 2 1 1\ndtype: f32\ndata: e.raw\n")
        with pytest.raises(VolumeFormatError):
            read_volume(tmp_path / "e.vmh")
