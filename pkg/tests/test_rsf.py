import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_convolve, sphere_sdf
from rsfseg import kernels, ops
from rsfseg.errors import NumericalBlowupError, ParameterError, ShapeError
from rsfseg.phantom import PerturbSpec, PhantomSpec, generate_network, perturb
from rsfseg.rsf import (KERNEL_NAMES, RsfParams, delta_eps, directional_forces, energy,
                        evolve, evolve_step, extract_mask, heaviside_eps, init_state,
                        region_intensities)
from rsfseg.seeding import BlobParams, init_phi
from rsfseg.volume import gaussian_kernel


def interior_off_center(n, margin=2):
    """Voxels at least ``margin`` from the faces and from the grid center."""
    c = (n - 1) / 2.0
    z, y, x = np.mgrid[0:n, 0:n, 0:n]
    r = np.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2)
    edge = np.minimum.reduce([x, y, z, n - 1 - x, n - 1 - y, n - 1 - z])
    return (edge >= margin) & (r >= margin)


def mean_unit_gradient_error(phi, sel=None):
    err = np.abs(ops.gradient_magnitude(ops.gradient(phi)) - 1)
    return float(err[sel].mean() if sel is not None else err.mean())


class TestHeavisideDelta:
    def test_values(self):
        assert heaviside_eps(0.0) == 0.5
        assert abs(heaviside_eps(1e6) - 1.0) <= 1e-5
        assert heaviside_eps(1.0, 1.0) == pytest.approx(0.75, abs=1e-15)
        assert delta_eps(0.0) == pytest.approx(1 / math.pi, abs=1e-15)
        assert delta_eps(1e9) < 1e-15

    @given(u=st.floats(-1e6, 1e6), eps=st.floats(0.01, 10))
    @settings(max_examples=200)
    def test_partition_of_unity(self, u, eps):
        hp = heaviside_eps(u, eps)
        assert hp + (1.0 - hp) == 1.0
        assert 0.0 <= hp <= 1.0

    def test_delta_integrates_to_one(self):
        u = np.linspace(-1000, 1000, 200001)
        assert abs(np.trapezoid(delta_eps(u), u) - 1.0) <= 1e-3

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
    def test_delta_is_derivative(self, eps):
        u = np.arange(-1000, 1001) * 0.01
        h = 1e-4
        fd = (heaviside_eps(u + h, eps) - heaviside_eps(u - h, eps)) / (2 * h)
        assert np.max(np.abs(delta_eps(u, eps) - fd) / delta_eps(u, eps)) <= 1e-3

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_bad_eps(self, eps):
        with pytest.raises(ParameterError):
            heaviside_eps(0.0, eps)
        with pytest.raises(ParameterError):
            delta_eps(0.0, eps)


def scalar_region_means(img, phi, sigma, eps=1.0, floor=1e-8):
    """Per-voxel ratio with the dense oracle convolution."""
    w = gaussian_kernel(sigma).weights
    hp = heaviside_eps(phi, eps)
    out = []
    for h in (hp, 1.0 - hp):
        num = dense_convolve(h * img, w)
        den = dense_convolve(h, w)
        r = num / np.maximum(den, floor)
        r = np.where(den < floor, np.clip(r, img.min(), img.max()), r)
        out.append(r)
    return out


class TestRegionIntensities:
    def test_constant_image(self, rng, backend):
        img = np.full((6, 7, 8), 77.0)
        phi = rng.normal(scale=3, size=img.shape)
        rp, rm = region_intensities(img, phi, 2.0)
        assert np.allclose(rp, 77.0, atol=1e-9) and np.allclose(rm, 77.0, atol=1e-9)

    @pytest.mark.parametrize("phi_value", [10.0, 1e9])
    def test_all_outside_matches_oracle(self, rng, backend, phi_value):
        img = rng.uniform(0, 255, size=(8, 8, 8))
        phi = np.full(img.shape, phi_value)
        rp, rm = region_intensities(img, phi, 1.5)
        op, om = scalar_region_means(img, phi, 1.5)
        assert np.allclose(rp, op, atol=1e-8)
        assert np.allclose(rm, om, atol=1e-8)
        assert np.allclose(rp, dense_convolve(img, gaussian_kernel(1.5).weights), atol=1e-6)
        if phi_value > 1e8:
            # inside mass is below the floor everywhere: clamped into the image range
            assert rm.min() >= img.min() and rm.max() <= img.max()

    def test_step_image(self, backend):
        n = 64
        z, y, x = np.mgrid[0:4, 0:n, 0:n].astype(float)
        img = np.where(x < 32, 0.0, 255.0)
        phi = x - 31.5
        rp, rm = region_intensities(img, phi, 3.0)
        assert np.abs(rm[:, :, :16]).max() <= 1.0
        assert np.abs(rp[:, :, 48:] - 255.0).max() <= 1.0

    def test_bounded_by_image_range(self, rng, backend):
        img = rng.uniform(20, 230, size=(10, 10, 10))
        phi = rng.normal(scale=5, size=img.shape)
        for r in region_intensities(img, phi, 2.0):
            assert r.min() >= img.min() - 1e-9 and r.max() <= img.max() + 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            region_intensities(np.zeros((4, 4, 4)), np.zeros((4, 4, 5)), 1.0)


class TestDirectionalForces:
    def test_constant_image(self, backend):
        img = np.full((5, 5, 5), 123.0)
        ki = ops.convolve_separable(img, 2.0)
        ki2 = ops.convolve_separable(img * img, 2.0)
        fp, fm = directional_forces(img, img.copy(), img.copy(), ki, ki2)
        assert np.abs(fp).max() <= 1e-6 and np.abs(fm).max() <= 1e-6
        assert np.abs(-(fp - fm)).max() <= 1e-6

    def test_dirac_form_is_exact(self, rng, backend):
        img = rng.uniform(0, 255, size=(6, 6, 6))
        rp, rm = rng.uniform(0, 255, size=(2, 6, 6, 6))
        fp, fm = directional_forces(img, rp, rm)
        assert np.array_equal(fp, (img - rp) ** 2)
        assert np.array_equal(fm, (img - rm) ** 2)

    def test_expansion_matches_weighted_sum(self, rng, backend):
        n, sigma = 12, 1.0
        img = rng.uniform(0, 255, size=(n, n, n))
        rp, rm = rng.uniform(0, 255, size=(2, n, n, n))
        w = gaussian_kernel(sigma).weights
        fp, fm = directional_forces(img, rp, rm, dense_convolve(img, w), dense_convolve(img * img, w))
        rad = len(w) // 2
        pad = np.pad(img, rad, mode="edge")
        for (z, y, x) in [(0, 0, 0), (5, 6, 7), (11, 3, 11), (6, 6, 6)]:
            win = pad[z:z + 2 * rad + 1, y:y + 2 * rad + 1, x:x + 2 * rad + 1]
            kw = w[:, None, None] * w[None, :, None] * w[None, None, :]
            for r, f in ((rp, fp), (rm, fm)):
                assert abs(np.sum(kw * (win - r[z, y, x]) ** 2) - f[z, y, x]) <= 1e-4 * max(1.0, f[z, y, x])

    def test_nonnegative(self, rng, backend):
        img = rng.uniform(0, 255, size=(8, 8, 8))
        ki = ops.convolve_separable(img, 1.5)
        ki2 = ops.convolve_separable(img * img, 1.5)
        rp, rm = region_intensities(img, rng.normal(size=img.shape), 2.0)
        for f in directional_forces(img, rp, rm, ki, ki2):
            assert f.min() >= -1e-4


def unfused_energy(phi, img, p: RsfParams):
    """Term-by-term recomputation with the dense oracle convolutions."""
    rp, rm = scalar_region_means(img, phi, p.sigma1, p.epsilon, p.denom_floor)
    if p.sigma2 == 0:
        fp, fm = (img - rp) ** 2, (img - rm) ** 2
    else:
        w2 = gaussian_kernel(p.sigma2).weights
        ki, ki2 = dense_convolve(img, w2), dense_convolve(img * img, w2)
        fp, fm = ki2 - 2 * rp * ki + rp ** 2, ki2 - 2 * rm * ki + rm ** 2
    force = -(fp - fm)
    # gradient and curvature by explicit index arithmetic
    g = []
    for axis in (2, 1, 0):
        g.append(np.gradient(phi, axis=axis, edge_order=1))
    mag = np.sqrt(g[0] ** 2 + g[1] ** 2 + g[2] ** 2)
    nvec = [c / np.maximum(mag, p.grad_floor) for c in g]
    kappa = sum(np.gradient(c, axis=a, edge_order=1) for c, a in zip(nvec, (2, 1, 0)))
    pad = np.pad(phi, 1, mode="edge")
    lap = (pad[2:, 1:-1, 1:-1] + pad[:-2, 1:-1, 1:-1] + pad[1:-1, 2:, 1:-1] + pad[1:-1, :-2, 1:-1]
           + pad[1:-1, 1:-1, 2:] + pad[1:-1, 1:-1, :-2] - 6 * phi)
    return (lap - kappa) + delta_eps(phi, p.epsilon) * (p.alpha * kappa + p.beta * force)


class TestEnergy:
    def test_matches_unfused_oracle(self, rng, backend):
        img = rng.uniform(0, 255, size=(10, 10, 10))
        phi = rng.normal(scale=3, size=img.shape)
        for p in (RsfParams(sigma1=1.5, sigma2=0.0), RsfParams(sigma1=1.5, sigma2=1.0, beta=2.0)):
            e = energy(init_state(phi, img, p), img, p)
            ref = unfused_energy(phi, img, p)
            assert np.abs(e - ref).max() <= 1e-5 * max(1.0, np.abs(ref).max())

    def test_plane_on_constant_image(self, backend):
        z, y, x = np.mgrid[0:12, 0:12, 0:12].astype(float)
        phi = x - 5.5
        img = np.full(phi.shape, 100.0)
        p = RsfParams()
        e = energy(init_state(phi, img, p), img, p)
        assert np.abs(e[1:-1, 1:-1, 1:-1]).max() <= 1e-6

    def test_regularization_only(self, rng, backend):
        img = rng.uniform(0, 255, size=(8, 8, 8))
        phi = sphere_sdf(8, 2.5) + rng.normal(scale=0.2, size=img.shape)
        p = RsfParams(alpha=0.0, beta=0.0)
        e = energy(init_state(phi, img, p), img, p)
        expect = ops.laplacian(phi) - ops.div_normalized_gradient(phi)
        assert np.allclose(e, expect, atol=1e-12)


class TestEvolution:
    def test_fixed_point(self, backend):
        phi = np.full((6, 6, 6), 3.0)
        img = np.random.default_rng(0).uniform(0, 255, size=phi.shape)
        p = RsfParams(beta=0.0)
        s = evolve_step(init_state(phi, img, p), img, p)
        assert np.array_equal(s.phi, phi)
        assert s.iteration == 1

    def test_zero_step_size_kernel(self, rng, backend):
        phi = rng.normal(size=(4, 5, 6))
        e = rng.normal(size=phi.shape)
        assert np.array_equal(kernels.euler_update(phi, e, 0.0), phi)

    def test_one_step_improves_band_fit(self, backend):
        spec = PhantomSpec(dims=(256, 256, 1), n_branches=4, radius_range=(12, 16), tortuosity=0.08, rng_seed=0)
        img = perturb(generate_network(spec)[0], PerturbSpec(gaussian_sigma=20.0), rng_seed=0)
        p = RsfParams.paper_2d()
        phi0, _ = init_phi(img, BlobParams(sigma_b=8.0, response_threshold=0.1))

        def band_residual(phi):
            rp, rm = region_intensities(img, phi, p.sigma1, p.epsilon)
            h = heaviside_eps(phi, p.epsilon)
            band = np.abs(phi) < 2 * p.epsilon
            return np.abs(img - (h * rp + (1 - h) * rm))[band].mean()

        s = evolve_step(init_state(phi0, img, p), img, p)
        assert band_residual(s.phi) < band_residual(phi0)

    def test_params_validated(self):
        for bad in (dict(dt=0.0), dict(epsilon=0.0), dict(sigma1=-1.0), dict(max_iters=0),
                    dict(convergence_fraction=1.0), dict(max_iters=2.5)):
            with pytest.raises(ParameterError):
                RsfParams(**bad)

    def test_profiles(self):
        p2, p3 = RsfParams.paper_2d(), RsfParams.paper_3d()
        assert (p2.sigma1, p2.sigma2, p2.beta, p2.dt) == (19.0, 9.0, 3.5, 0.1)
        assert p2.alpha == pytest.approx(650.25)
        assert (p3.sigma1, p3.sigma2, p3.dt, p3.beta) == (5.0, 0.0, 0.06, 0.1)
        assert p3.alpha == pytest.approx(58.5225)

    def test_one_iteration_equals_one_step(self, rng, backend):
        img = rng.uniform(0, 255, size=(8, 8, 8))
        phi = sphere_sdf(8, 2.0)
        p = RsfParams(sigma1=1.5, max_iters=1)
        assert np.array_equal(evolve(phi, img, p), evolve_step(init_state(phi, img, p), img, p).phi)

    def test_input_not_modified(self, rng):
        img = rng.uniform(0, 255, size=(6, 6, 6))
        phi = sphere_sdf(6, 2.0)
        keep = phi.copy()
        evolve(phi, img, RsfParams(max_iters=3))
        assert np.array_equal(phi, keep)

    def test_curvature_flow_shrinks_sphere(self, backend):
        phi = sphere_sdf(24, 7.0)
        img = np.full(phi.shape, 100.0)
        p = RsfParams(beta=0.0, max_iters=40)
        vols = []
        evolve(phi, img, p, callback=lambda s: vols.append(int(extract_mask(s.phi).sum())))
        assert vols[-1] < extract_mask(phi).sum()
        assert all(b <= a for a, b in zip(vols, vols[1:]))

    def test_fab_redistances(self, rng, backend):
        n = 24
        phi0 = sphere_sdf(n, 7.0) + rng.uniform(-0.3, 0.3, size=(n, n, n))
        phi = evolve(phi0, np.zeros(phi0.shape), RsfParams(alpha=0.0, beta=0.0, max_iters=50))
        sel = interior_off_center(n)
        assert mean_unit_gradient_error(phi, sel) < mean_unit_gradient_error(phi0, sel)

    def test_blowup_reports_voxel(self):
        img = np.full((5, 5, 5), 10.0)
        phi = sphere_sdf(5, 1.5)
        p = RsfParams(dt=1e308, alpha=1e308)
        with pytest.raises(NumericalBlowupError) as info:
            evolve(phi, img, p)
        assert info.value.iteration == 1
        x, y, z = info.value.voxel
        assert all(0 <= c < 5 for c in (x, y, z))

    def test_non_finite_initial_phi(self):
        phi = np.zeros((3, 3, 3))
        phi[1, 1, 1] = np.nan
        with pytest.raises(ParameterError):
            init_state(phi, np.zeros((3, 3, 3)), RsfParams())

    def test_convergence_fraction_stops_early(self):
        phi = np.full((6, 6, 6), 3.0)
        img = np.zeros(phi.shape)
        s = evolve(phi, img, RsfParams(max_iters=50, convergence_fraction=0.01), return_state=True)
        assert s.iteration == 1

    def test_backends_agree(self, rng):
        if len(kernels.available_backends()) < 2:
            pytest.skip("numba not installed")
        img = rng.uniform(0, 255, size=(9, 10, 11))
        phi = sphere_sdf(11, 3.0)[:9, :10, :11]
        p = RsfParams(sigma1=2.0, sigma2=1.0, beta=1.0, max_iters=3)
        with kernels.use_backend("numpy"):
            a = evolve(phi, img, p)
        with kernels.use_backend("numba"):
            b = evolve(phi, img, p)
        # numpy's vectorized arctan and libm's may differ in the last ulp
        assert np.allclose(a, b, rtol=1e-9, atol=1e-9)

    def test_worker_count_invariance(self, rng):
        img = rng.uniform(0, 255, size=(12, 12, 12))
        phi = sphere_sdf(12, 3.0)
        p = RsfParams(sigma1=2.0, max_iters=3)
        assert np.array_equal(evolve(phi, img, p, workers=1), evolve(phi, img, p, workers=4))

    def test_2d_input_2d_output(self, rng):
        img = rng.uniform(0, 255, size=(20, 20))
        y, x = np.mgrid[0:20, 0:20]
        phi = np.hypot(x - 10, y - 10) - 4.0
        assert evolve(phi, img, RsfParams(max_iters=2)).shape == (20, 20)


class TestMask:
    def test_constant(self):
        assert extract_mask(np.ones((3, 3, 3))).sum() == 0
        assert extract_mask(-np.ones((3, 3, 3))).all()
        assert extract_mask(np.zeros(4)).dtype == np.uint8

    def test_sphere_volume(self):
        m = extract_mask(sphere_sdf(21, 5.0))
        assert abs(m.sum() - 4 / 3 * math.pi * 125) <= 0.1 * 4 / 3 * math.pi * 125


def test_kernel_name_set():
    assert len(KERNEL_NAMES) == 14
    assert len(set(KERNEL_NAMES)) == 14
