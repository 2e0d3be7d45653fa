"""Duhamel quadrature, Picard iteration, smallness report and solution diagnostics."""

import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad_vec

from randvort.config import FROZEN_C1, FROZEN_C2
from randvort.grid import GridSpec, PhysicalVectorField, SpectralVectorField, forward, relative_divergence
from randvort.initial import initial_vorticity, norm32, rescale, shear, taylor_green
from randvort.noise import GammaMultiplier, noise_diagnostics, sample_paths
from randvort.operators import NoiseModel, nonlinearity_array
from randvort.solver import (
    PicardDivergence,
    SmallnessRefused,
    SolverConfig,
    beta_constant,
    calibrate,
    duhamel_all,
    duhamel_F,
    heat_history,
    kato_trajectory,
    picard_solve,
    smallness_check,
    step_weights,
    threshold,
    velocity_diagnostics,
    weak_pairing,
)

# B(1/6, 2/3) and B(1/6, 1/6), frozen from mpmath at 30 digits
BETA_16_23 = 6.6774760471338332
BETA_16_16 = 11.565727779959978


@pytest.fixture(scope="module")
def small_setup():
    """n = 16, M = 16, one admissible channel, Taylor-Green data at half threshold."""
    grid = GridSpec(16)
    model = NoiseModel.single(grid, "gaussian{eps=0.5, mass=1}", 7.0)
    cfg = SolverConfig(T=1.0, M=16, C1=FROZEN_C1, C2=FROZEN_C2)
    G = GammaMultiplier(model, sample_paths(5, cfg.times, 1))
    diag = noise_diagnostics(G)
    U0 = rescale(taylor_green(grid), 0.5 * threshold(diag, cfg))
    return grid, model, cfg, G, diag, U0


@pytest.fixture(scope="module")
def small_record(small_setup):
    grid, model, cfg, G, diag, U0 = small_setup
    return picard_solve(U0, G, cfg, diag)


class TestConfig:
    def test_exponents(self):
        cfg = SolverConfig(p=1.8)
        assert cfg.q == pytest.approx(9 / 7, abs=1e-12)
        assert cfg.r1 == pytest.approx(4.5, abs=1e-12)
        assert cfg.qprime == pytest.approx(4.5, abs=1e-12)
        assert 1 / cfg.q == pytest.approx(2 / cfg.p - 1 / 3, abs=1e-12)

    @pytest.mark.parametrize("kw", [{"p": 1.5}, {"p": 2.0}, {"T": 0.0}, {"M": 1}, {"grading": 0.5}, {"tol": 0.0},
                                    {"max_iter": 0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_graded_grid(self):
        t = SolverConfig(T=2.0, M=32, grading=2.0).times
        assert t[0] == 0 and t[-1] == 2.0
        assert np.all(np.diff(t) > 0)
        assert np.all(np.diff(np.diff(t)) > 0)  # steps grow away from 0

    def test_cstar_default(self):
        cfg = SolverConfig(C1=0.5, C2=0.1)
        assert cfg.cstar == pytest.approx(min(1 / (2 * 0.5 * 0.1), 1 / (4 * 0.25)))
        assert SolverConfig(C1=0.5, C2=0.1, Cstar=0.3).cstar == 0.3
        assert SolverConfig().cstar is None
        assert SolverConfig(C1=0.5, C2=0.1).R_star(2.0) == 2.0


class TestBetaConstants:
    def test_p_18(self):
        b1, b2 = beta_constant(1.8)
        assert b1 == pytest.approx(BETA_16_23, rel=1e-13)
        assert b2 == pytest.approx(BETA_16_16, rel=1e-13)
        assert float(mpmath.beta(mpmath.mpf(1) / 6, mpmath.mpf(2) / 3)) == pytest.approx(b1, rel=1e-14)
        assert float(mpmath.beta(mpmath.mpf(1) / 6, mpmath.mpf(1) / 6)) == pytest.approx(b2, rel=1e-14)

    def test_poles_at_endpoints(self):
        near_lower = [beta_constant(1.5 + e)[1] for e in (1e-2, 1e-4, 1e-6)]
        assert near_lower[0] < near_lower[1] < near_lower[2] and near_lower[2] > 1e5
        near_upper = [beta_constant(2 - e) for e in (1e-2, 1e-4, 1e-6)]
        for j in range(2):
            assert near_upper[0][j] < near_upper[1][j] < near_upper[2][j]

    def test_outside_range_divergent(self):
        assert beta_constant(1.5)[1] == math.inf
        assert beta_constant(2.0)[1] == math.inf
        assert beta_constant(2.2)[0] == math.inf


class TestQuadrature:
    def test_step_weights_small_argument_branch(self):
        """Series and closed-form branches agree at the switch."""
        k2 = np.array([0.999e-2, 1.001e-2])
        E, wl, wr = step_weights(k2, 1.0)
        assert wl[0] == pytest.approx(wl[1], rel=1e-3)
        assert wr[0] == pytest.approx(wr[1], rel=1e-3)

    @pytest.mark.parametrize("k2", [0.0, 1e-6, 0.3, 3.0, 700.0])
    def test_step_weights_exact(self, k2):
        h = 0.05
        left = mpmath.quad(lambda s: mpmath.exp(-k2 * (h - s)) * (1 - s / h), [0, h])
        right = mpmath.quad(lambda s: mpmath.exp(-k2 * (h - s)) * (s / h), [0, h])
        E, wl, wr = step_weights(np.array([k2]), h)
        assert wl[0] == pytest.approx(float(left), rel=1e-12, abs=1e-300)
        assert wr[0] == pytest.approx(float(right), rel=1e-12, abs=1e-300)
        assert E[0] == pytest.approx(math.exp(-k2 * h), rel=1e-15)

    def test_constant_integrand_exact(self, grid16, rng):
        g = forward(rng.standard_normal((3,) + grid16.physical_shape))
        times = SolverConfig(T=1.0, M=8).times
        out = duhamel_all(np.stack([g] * times.size), times, grid16)
        k2 = grid16.k2
        with np.errstate(divide="ignore", invalid="ignore"):
            exact = np.where(k2 > 0, -np.expm1(-k2 * times[-1]) / np.where(k2 > 0, k2, 1), times[-1]) * g
        assert np.allclose(out[-1], exact, rtol=1e-12, atol=1e-15)

    def test_zero_history_and_zero_time(self, grid16):
        times = np.linspace(0, 1, 5)
        z = [SpectralVectorField.zeros(grid16)] * 5
        for t in times:
            assert np.all(duhamel_F(z, times, t).data == 0)
        hist = [taylor_green(grid16)] * 5
        assert np.all(duhamel_F(hist, times, 0.0).data == 0)

    def test_off_grid(self, grid16):
        times = np.linspace(0, 1, 5)
        with pytest.raises(ValueError):
            duhamel_F([taylor_green(grid16)] * 5, times, 0.3)

    def test_quadratic_scaling(self, grid16):
        times = np.linspace(0, 0.5, 11)
        U0 = taylor_green(grid16) * 0.3
        z = [SpectralVectorField(grid16, U0.data * np.exp(-grid16.k2 * t)) for t in times]
        a = duhamel_F([f * 2.5 for f in z], times, 0.5).data
        b = 6.25 * duhamel_F(z, times, 0.5).data
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)

    def test_adaptive_oracle(self, grid16):
        """F(z)(t) for z(s) = e^{s Lap} U0 against scipy's adaptive vector quadrature."""
        U0 = taylor_green(grid16)
        t_end = 0.5
        times = np.linspace(0, t_end, 201)
        z = [SpectralVectorField(grid16, U0.data * np.exp(-grid16.k2 * s)) for s in times]
        got = duhamel_F(z, times, t_end).data

        def integrand(s):
            zs = U0.data * np.exp(-grid16.k2 * s)
            v = np.exp(-grid16.k2 * (t_end - s)) * nonlinearity_array(zs, grid16)
            return np.concatenate([v.real.ravel(), v.imag.ravel()])

        val, _ = quad_vec(integrand, 0.0, t_end, epsabs=1e-14, epsrel=1e-12)
        half = val.size // 2
        oracle = (val[:half] + 1j * val[half:]).reshape(got.shape)
        assert np.linalg.norm(oracle) > 0
        assert np.linalg.norm(got - oracle) / np.linalg.norm(oracle) <= 1e-4


class TestPicard:
    def test_zero_data(self, small_setup):
        grid, model, cfg, G, diag, _ = small_setup
        rec = picard_solve(SpectralVectorField.zeros(grid), G, cfg, diag)
        assert rec.iterations == 1 and rec.converged
        assert np.all(rec.y == 0)
        assert rec.kato.znorm == 0.0

    def test_linear_model_is_heat_flow(self, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        rec = picard_solve(U0, G, replace(cfg, nonlinear=False), diag)
        assert rec.iterations == 1
        assert np.array_equal(rec.y, heat_history(U0.data, cfg.times, grid))

    def test_converged_record(self, small_record, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        rec = small_record
        assert rec.converged and rec.iterations <= cfg.max_iter
        assert all(r < 1 for r in rec.ratios)
        assert rec.diffs[-1] <= cfg.tol * rec.kato.znorm * 1.01
        assert rec.mild_residual <= cfg.tol
        assert rec.max_residual <= 1e-5
        div = rec.max_relative_divergence()
        assert max(div.values()) <= 1e-12

    def test_record_reconstruction(self, small_record, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        m = 7
        assert np.allclose(small_record.U_at(m).data, small_record.y[m] * G.symbol(cfg.times[m]))
        X = small_record.X_at(m)
        assert relative_divergence(X) <= 1e-14

    def test_kato_trajectory_consistent(self, small_record):
        k = small_record.kato
        assert np.all(np.isfinite(k.w0)) and np.all(k.w0 >= 0) and np.all(k.w >= 0)
        assert k.znorm == pytest.approx(np.max(k.w0[None, :] + k.w), rel=0)
        assert k.times[0] > 0

    def test_nonlinearity_matters(self, small_record, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        lin = heat_history(U0.data, cfg.times, grid)
        assert np.max(np.abs(small_record.y - lin)) > 1e-8 * np.max(np.abs(lin))

    def test_smallness_refusal(self, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        big = U0 * 10.0
        with pytest.raises(SmallnessRefused) as info:
            picard_solve(big, G, cfg, diag)
        assert not info.value.report.passed("l2")
        rec = picard_solve(big, G, cfg, diag, override=True)
        assert rec.converged

    def test_precheck_needs_diagnostics(self, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        with pytest.raises(ValueError):
            picard_solve(U0, G, cfg)

    def test_nonconvergence_reports_history(self, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        with pytest.raises(PicardDivergence) as info:
            picard_solve(U0, G, replace(cfg, max_iter=2, tol=1e-300), diag)
        err = info.value
        assert len(err.diffs) == 2 and len(err.ratios) == 1
        assert err.diagnosis in ("too-large data", "quadrature too coarse", "undetermined")

    def test_contraction_with_analytic_eta(self, small_setup):
        """Data passing the check with the analytic eta bound contracts from the second iterate on."""
        grid, model, cfg, G, diag, _ = small_setup
        U0 = rescale(taylor_green(grid), 0.5 * threshold(diag, cfg, "analytic"))
        assert smallness_check(norm32(U0), diag, cfg).passed("analytic")
        rec = picard_solve(U0, G, cfg, diag)
        assert all(r < 1 for r in rec.ratios)


class TestSmallness:
    def test_zero_data_infinite_margin(self, small_setup):
        grid, model, cfg, G, diag, _ = small_setup
        rep = smallness_check(0.0, diag, cfg)
        assert rep.passed("l2") and rep.passed("analytic")
        assert all(c.margin == math.inf for c in rep.checks)
        assert len(rep.checks) == 6

    def test_half_threshold_margin_two(self, small_setup):
        grid, model, cfg, G, diag, _ = small_setup
        u = cfg.cstar / (2 * diag.eta_inf_exact)
        rep = smallness_check(u, diag, cfg)
        first = [c for c in rep.checks if c.eta_kind == "l2" and "C*" in c.name][0]
        assert first.passed and first.margin == pytest.approx(2.0, rel=1e-12)
        assert "beta constants" in rep.text()

    def test_uncalibrated_constants_omitted(self, small_setup):
        grid, model, cfg, G, diag, _ = small_setup
        rep = smallness_check(1.0, diag, SolverConfig())
        assert rep.checks == () and not rep.passed()


class TestDiagnostics:
    def test_weak_pairing_zero_test_function(self, small_record):
        zero = PhysicalVectorField(small_record.grid, np.zeros((3,) + small_record.grid.physical_shape))
        assert np.all(weak_pairing(small_record, zero) == 0)

    def test_weak_pairing_linear_closed_form(self, grid16):
        """Heat flow against a single mode: exp(-|k|^2 t) <U0, phi>."""
        X, Y, Z = grid16.coordinates()
        phi = np.zeros((3,) + grid16.physical_shape)
        phi[2] = np.cos(X - Y + Z)
        phi = PhysicalVectorField(grid16, phi)
        U0 = taylor_green(grid16)
        times = np.linspace(0, 1, 6)
        y = heat_history(U0.data, times, grid16)
        pair = weak_pairing(y, phi, grid16)
        direct = np.sum(np.fft.irfftn(U0.data[2], s=grid16.physical_shape, axes=(0, 1, 2), norm="forward") * phi.data[2])
        direct *= grid16.cell_volume
        assert abs(direct) > 1.0
        assert np.allclose(pair, np.exp(-3 * times) * direct, rtol=1e-12)

    def test_weak_pairing_jumps_shrink_under_refinement(self, small_setup):
        grid, model, cfg, G, diag, U0 = small_setup
        X, Y, Z = grid.coordinates()
        phi = np.zeros((3,) + grid.physical_shape)
        phi[2] = np.cos(X - Y + Z)
        phi = PhysicalVectorField(grid, phi)
        jumps = []
        for M in (16, 32):
            c = replace(cfg, M=M)
            Gm = GammaMultiplier(model, sample_paths(5, c.times, 1))
            rec = picard_solve(U0, Gm, c, noise_diagnostics(Gm), override=True)
            jumps.append(np.max(np.abs(np.diff(weak_pairing(rec, phi)))))
        assert jumps[0] / jumps[1] >= 1.5

    def test_velocity_zero_field_skipped(self, small_setup):
        grid, model, cfg, G, diag, _ = small_setup
        rec = picard_solve(SpectralVectorField.zeros(grid), G, cfg, diag)
        rep = velocity_diagnostics(rec)
        assert np.all(rep.skipped)
        assert all(math.isnan(v) for v in rep.maxima().values())

    def test_velocity_shear_closed_form(self, small_setup):
        """U = (0, sin xi_1, 0): X = (0, 0, cos xi_1), so |X|_r1/|U|_p is a ratio of |cos|-integrals."""
        grid, model, cfg, G, diag, _ = small_setup
        c = replace(cfg, nonlinear=False)
        rec = picard_solve(shear(grid), None, c, override=True)
        rep = velocity_diagnostics(rec)
        p, r1 = c.p, c.r1

        def box_norm(r):
            return float((4 * mpmath.pi**2 * mpmath.quad(lambda x: abs(mpmath.cos(x)) ** r, [0, mpmath.pi / 2]) * 4)
                         ** (1 / r))

        expected = box_norm(r1) / box_norm(p)
        # midpoint rule on |cos|^r with a kink: tolerance set by n = 16
        assert np.allclose(rep.ratio_X, expected, rtol=2e-3)
        assert np.all(np.isfinite(rep.weighted_X))

    def test_velocity_ratios_resolution_stable(self):
        rng = np.random.default_rng(3)
        from randvort.initial import random_field
        from randvort.verify import resample

        F = random_field(GridSpec(16), rng, kmax=4)
        maxima = []
        for n in (16, 32):
            G = resample(F, n)
            c = SolverConfig(T=0.01, M=2, nonlinear=False)
            rec = picard_solve(G, None, c, override=True)
            maxima.append(velocity_diagnostics(rec).maxima())
        for key in ("X", "DX", "DDX"):
            assert abs(maxima[1][key] / maxima[0][key] - 1) <= 0.10


class TestCalibration:
    def test_constants_cover_samples(self, grid16):
        model = NoiseModel.single(grid16, "gaussian{eps=0.5, mass=1}", 7.0)
        cfg = SolverConfig(T=1.0, M=8)
        G = GammaMultiplier(model, sample_paths(1, cfg.times, 1))
        shapes = {"taylor_green": initial_vorticity("taylor_green", grid16)}
        cal = calibrate(shapes, [(1, G, noise_diagnostics(G))], cfg, sizes=[0.5, 1.0], iterations=3)
        assert len(cal.samples) == 2
        for s in cal.samples:
            assert s.linear_ratio <= cal.C1 and s.quadratic_ratio <= cal.C1
            assert s.contraction <= cal.C2 * s.eta_inf * 2 * cal.C1 * s.u0_norm * (1 + 1e-12)
        assert cal.Cstar == pytest.approx(min(1 / (2 * cal.C1 * cal.C2), 1 / (4 * cal.C1**2)))
        assert cal.text().startswith("C1 = ")
