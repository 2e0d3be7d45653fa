"""Heat semigroup, Biot-Savart law, convolution noise and the nonlinearity M."""

import math

import numpy as np
import pytest

from randvort.grid import GridSpec, PhysicalVectorField, SpectralVectorField, curl, divergence, lp_norm, to_physical, to_spectral
from randvort.initial import random_field, taylor_green, taylor_green_velocity
from randvort.operators import (
    ADMISSIBILITY_FACTOR,
    KernelSpec,
    NoiseModel,
    biot_savart,
    convolution_noise,
    heat_semigroup,
    nonlinearity_M,
)


def sine_e2(grid):
    X, _, _ = grid.coordinates()
    data = np.zeros((3,) + grid.physical_shape)
    data[1] = np.sin(X)
    return to_spectral(PhysicalVectorField(grid, data))


class TestHeat:
    def test_identity_at_zero(self, grid16, rng):
        F = random_field(grid16, rng)
        assert np.array_equal(heat_semigroup(F, 0.0).data, F.data)

    def test_eigenfunction_decay(self, grid16):
        F = sine_e2(grid16)
        out = heat_semigroup(F, 1.0)
        assert np.allclose(out.data, math.exp(-1.0) * F.data, rtol=1e-14, atol=1e-16)
        assert math.exp(-1.0) == pytest.approx(0.367879, abs=1e-6)

    def test_semigroup(self, grid32, rng):
        F = random_field(grid32, rng)
        a = heat_semigroup(heat_semigroup(F, 0.13), 0.29).data
        b = heat_semigroup(F, 0.42).data
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)

    def test_negative_time(self, grid16):
        with pytest.raises(ValueError):
            heat_semigroup(SpectralVectorField.zeros(grid16), -1e-3)


class TestBiotSavart:
    def test_sine_mode(self, grid16):
        """K(0, sin xi_1, 0) = (0, 0, cos xi_1)."""
        X, _, _ = grid16.coordinates()
        out = to_physical(biot_savart(sine_e2(grid16))).data
        assert np.allclose(out[2], np.cos(X), atol=1e-14)
        assert np.allclose(out[:2], 0, atol=1e-14)

    def test_zero(self, grid16):
        assert np.all(biot_savart(SpectralVectorField.zeros(grid16)).data == 0)

    def test_inverts_curl(self, grid32, rng):
        U = random_field(grid32, rng)
        err = np.linalg.norm(curl(biot_savart(U)).data - U.data) / np.linalg.norm(U.data)
        assert err <= 1e-12

    def test_velocity_divergence_free(self, grid16, rng):
        data = to_spectral(PhysicalVectorField(grid16, rng.standard_normal((3,) + grid16.physical_shape))).data
        X = biot_savart(SpectralVectorField(grid16, data))
        assert np.max(np.abs(divergence(X))) <= 1e-14

    def test_taylor_green_velocity_recovered(self, grid16):
        """curl of the Taylor-Green velocity maps back to that velocity."""
        v = taylor_green_velocity(grid16)
        assert np.allclose(biot_savart(taylor_green(grid16)).data, v.data, atol=1e-15)


class TestKernels:
    def test_parse_named_and_positional(self):
        assert KernelSpec.parse("gaussian{eps=0.5, mass=2}") == KernelSpec("gaussian", 0.5, 2.0)
        assert KernelSpec.parse("mollified_dirac{0.3}") == KernelSpec("mollified_dirac", 0.3)
        assert KernelSpec.parse(str(KernelSpec("gaussian", 0.25, 1.5))) == KernelSpec("gaussian", 0.25, 1.5)

    @pytest.mark.parametrize("bad", ["gauss{eps=1}", "gaussian{mass=1}", "gaussian{eps=1, width=2}", "gaussian(1)"])
    def test_parse_errors(self, bad):
        with pytest.raises(ValueError):
            KernelSpec.parse(bad)

    def test_nonpositive_eps(self):
        with pytest.raises(ValueError):
            KernelSpec("gaussian", 0.0)

    @pytest.mark.parametrize("spec", ["gaussian{eps=0.5, mass=1}", "gaussian{eps=0.2, mass=0.3}", "mollified_dirac{0.4}",
                                      "mollified_dirac{0.01}"])
    def test_quadrature_mass(self, grid16, spec):
        ker = KernelSpec.parse(spec)
        h = ker.sample(grid16)
        assert h.sum() * grid16.cell_volume == pytest.approx(ker.mass, rel=1e-13)
        assert np.all(h >= 0)


class TestNoiseModel:
    def test_l1_and_symbol_bound(self, grid16):
        model = NoiseModel.single(grid16, "gaussian{eps=0.5, mass=1}", 7.0)
        assert model.l1[0] == pytest.approx(1.0, rel=1e-13)
        assert np.max(np.abs(model.symbols)) <= model.l1[0] * (1 + 1e-12)
        assert model.symbols[0, 0, 0, 0] == pytest.approx(1.0, rel=1e-13)

    def test_alpha_and_admissibility(self, grid16):
        ok = NoiseModel.single(grid16, "gaussian{eps=0.5, mass=1}", 7.0)
        assert ok.alpha[0] == pytest.approx(2.0, rel=1e-12)
        assert ok.admissible[0]
        bad = NoiseModel.single(grid16, "gaussian{eps=0.5, mass=1}", 6.0)
        assert not bad.admissible[0]
        assert ADMISSIBILITY_FACTOR == pytest.approx(6.4641016, abs=1e-7)

    def test_admissible_implies_positive_alpha(self, grid16):
        for lam in np.linspace(6.5, 12, 12):
            m = NoiseModel.single(grid16, "gaussian{eps=0.3, mass=1}", lam)
            assert m.admissible[0] and m.alpha[0] > 0

    def test_mismatched_lengths(self, grid16):
        with pytest.raises(ValueError):
            NoiseModel(grid16, (KernelSpec("gaussian", 0.5),), (1.0, 2.0))

    def test_constant_field_scaled_by_mass(self, grid16):
        model = NoiseModel.single(grid16, "gaussian{eps=0.5, mass=0.7}", 7.0)
        const = np.zeros((3,) + grid16.spectral_shape, dtype=complex)
        const[:, 0, 0, 0] = [1.0, -2.0, 0.5]
        F = SpectralVectorField(grid16, const)
        out = convolution_noise(F, model, 0)
        assert np.allclose(out.data, 0.7 * const, rtol=1e-13)
        unit = NoiseModel.single(grid16, "mollified_dirac{0.4}", 7.0)
        assert np.allclose(convolution_noise(F, unit, 0).data, const, rtol=1e-13)

    def test_channels_commute(self, grid16, rng):
        model = NoiseModel(grid16, (KernelSpec("gaussian", 0.5), KernelSpec("mollified_dirac", 0.6)), (7.0, 8.0))
        F = random_field(grid16, rng)
        a = convolution_noise(convolution_noise(F, model, 0), model, 1).data
        b = convolution_noise(convolution_noise(F, model, 1), model, 0).data
        assert np.allclose(a, b, rtol=1e-15, atol=0)

    def test_zero_and_range(self, grid16):
        model = NoiseModel.single(grid16, "gaussian{eps=0.5, mass=1}", 7.0)
        Z = SpectralVectorField.zeros(grid16)
        assert np.all(convolution_noise(Z, model, 0).data == 0)
        with pytest.raises(IndexError):
            convolution_noise(Z, model, 1)

    def test_young_inequality_on_grid(self, grid16, rng):
        model = NoiseModel.single(grid16, "gaussian{eps=0.4, mass=1}", 7.0)
        for _ in range(3):
            F = random_field(grid16, rng, solenoidal=False)
            for q in (1.2, 2.0, 3.5):
                lhs = lp_norm(to_physical(convolution_noise(F, model, 0)), q)
                assert lhs <= model.l1[0] * lp_norm(to_physical(F), q) * (1 + 1e-6)


def fd_derivative(f, axis, h):
    """Fourth-order central difference on a periodic grid."""
    return (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis) - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (12 * h)


class TestNonlinearity:
    def test_zero_and_constant(self, grid16):
        assert np.all(nonlinearity_M(SpectralVectorField.zeros(grid16)).data == 0)
        const = np.zeros((3,) + grid16.spectral_shape, dtype=complex)
        const[:, 0, 0, 0] = [1.0, 2.0, 3.0]
        assert np.allclose(nonlinearity_M(SpectralVectorField(grid16, const)).data, 0, atol=1e-15)

    def test_shear_is_steady(self, grid16):
        """For U = (0, sin xi_1, 0) both advection terms vanish."""
        assert np.max(np.abs(nonlinearity_M(sine_e2(grid16)).data)) <= 1e-15

    def test_finite_difference_oracle(self, grid32):
        """-(v.grad w - w.grad v) by finite differences of the analytic Taylor-Green fields on a 4x finer grid."""
        fine = GridSpec(128)
        h = fine.dx
        x, y, z = fine.coordinates()
        v = np.stack([np.sin(x) * np.cos(y) * np.cos(z), -np.cos(x) * np.sin(y) * np.cos(z), np.zeros_like(x)])
        w = np.stack([-np.cos(x) * np.sin(y) * np.sin(z), -np.sin(x) * np.cos(y) * np.sin(z),
                      2 * np.sin(x) * np.sin(y) * np.cos(z)])
        adv = np.zeros_like(w)
        for c in range(3):
            for j in range(3):
                adv[c] += v[j] * fd_derivative(w[c], j, h) - w[j] * fd_derivative(v[c], j, h)
        oracle = -adv[:, ::4, ::4, ::4]
        M = to_physical(nonlinearity_M(taylor_green(grid32))).data
        err = np.linalg.norm(M - oracle) / np.linalg.norm(oracle)
        assert np.linalg.norm(oracle) > 1.0
        assert err <= 1e-3

    def test_output_divergence_free(self, grid32, rng):
        U = random_field(grid32, rng, kmax=6)
        out = nonlinearity_M(U)
        scale = np.sqrt(np.sum(grid32.k2 * np.abs(out.data) ** 2))
        assert np.sqrt(np.sum(np.abs(divergence(out)) ** 2)) <= 1e-12 * scale

    def test_quadratic(self, grid16, rng):
        U = random_field(grid16, rng)
        a = nonlinearity_M(U * 3.0).data
        b = 9.0 * nonlinearity_M(U).data
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)
