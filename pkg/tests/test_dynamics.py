"""Solvers and the transport term, checked against analytic single-mode
solutions, dense-grid quadrature oracles, and self-convergence studies."""

import numpy as np
import pytest

from sqglab import make_grid, random_field, sobolev_norm, unit_mode, zero_field
from sqglab.dynamics import (
    AprioriReport,
    DynamicsConfig,
    monitor_apriori,
    nonlinear_term,
    solve_delayed_mollified,
    solve_deterministic,
    solve_skeleton,
    transport_exponent,
)
from sqglab.errors import BlowUpError, ConfigurationError
from sqglab.noise import Control, GFunction, NoiseModel
from sqglab.spectral import (
    SpectralField,
    TWO_PI,
    apply_lambda_power,
    riesz_velocity,
    to_physical,
)

TRIG = np.sqrt(2.0) * np.pi


def mode_sum(grid, terms):
    """Field sum(amp * trig(k . x)) given as [(amp, (k1, k2), 'sin'|'cos'), ...]."""
    c = np.zeros(grid.n_modes)
    for amp, k, trig in terms:
        c[grid.index_of(k, trig)] += amp * TRIG
    return SpectralField(grid, c)


def transport_oracle(grid, terms, n_dense=96):
    """Dense-grid quadrature of u . grad theta, with u and grad theta built
    analytically mode by mode, projected onto the orthonormal basis."""
    xs = np.arange(n_dense) * (TWO_PI / n_dense)
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    u1 = np.zeros_like(X1)
    u2 = np.zeros_like(X1)
    d1 = np.zeros_like(X1)
    d2 = np.zeros_like(X1)
    for amp, (k1, k2), trig in terms:
        phase = k1 * X1 + k2 * X2
        kabs = np.hypot(k1, k2)
        if trig == "sin":
            u1 += amp * (k2 / kabs) * np.cos(phase)
            u2 += amp * (-k1 / kabs) * np.cos(phase)
            d1 += amp * k1 * np.cos(phase)
            d2 += amp * k2 * np.cos(phase)
        else:
            u1 += amp * (-k2 / kabs) * np.sin(phase)
            u2 += amp * (k1 / kabs) * np.sin(phase)
            d1 += amp * (-k1) * np.sin(phase)
            d2 += amp * (-k2) * np.sin(phase)
    prod = u1 * d1 + u2 * d2
    cell = (TWO_PI / n_dense) ** 2
    out = np.zeros(grid.n_modes)
    for j, (k1, k2) in enumerate(grid.kvec):
        phase = k1 * X1 + k2 * X2
        basis = (np.sin(phase) if grid.is_sin[j] else np.cos(phase)) / TRIG
        out[j] = np.sum(prod * basis) * cell
    return out


class TestNonlinearTerm:
    @pytest.mark.parametrize("k,trig", [((1, 0), "sin"), ((2, 1), "cos"), ((0, 3), "sin")])
    def test_single_mode_vanishes(self, k, trig):
        grid = make_grid(4)
        b = nonlinear_term(unit_mode(grid, k, trig))
        assert b.l2() == pytest.approx(0.0, abs=1e-14)

    def test_matches_quadrature_oracle_zero_case(self):
        grid = make_grid(4)
        terms = [(1.0, (1, 0), "sin"), (1.0, (0, 1), "sin")]
        b = nonlinear_term(mode_sum(grid, terms))
        oracle = transport_oracle(grid, terms)
        assert np.allclose(b.coeffs, oracle, atol=1e-10)
        assert b.l2() == pytest.approx(0.0, abs=1e-12)

    def test_matches_quadrature_oracle_nontrivial(self):
        grid = make_grid(4)
        terms = [(0.7, (1, 0), "sin"), (-0.4, (1, 1), "sin"), (0.9, (0, 2), "cos")]
        b = nonlinear_term(mode_sum(grid, terms))
        oracle = transport_oracle(grid, terms)
        assert b.l2() > 1e-3
        assert np.allclose(b.coeffs, oracle, atol=1e-10)

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_transport_orthogonality(self, n):
        grid = make_grid(n)
        rng = np.random.default_rng(n)
        for _ in range(25):
            theta = random_field(grid, rng, decay=1.0)
            b = nonlinear_term(theta)
            assert abs(b.dot(theta)) <= 1e-10 * max(b.l2() * theta.l2(), 1e-30)

    def test_skew_symmetry(self):
        # <u . grad theta, phi> = -<u . grad phi, theta> for a shared velocity.
        grid = make_grid(12)
        rng = np.random.default_rng(42)
        from sqglab.spectral import to_spectral_array, to_physical_array, partial_array

        for _ in range(10):
            theta = random_field(grid, rng, decay=1.0)
            phi = random_field(grid, rng, decay=1.0)
            u1, u2 = riesz_velocity(theta)
            u1p = to_physical_array(grid, u1.coeffs)
            u2p = to_physical_array(grid, u2.coeffs)

            def advect(f):
                g1 = to_physical_array(grid, partial_array(grid, f.coeffs, 0))
                g2 = to_physical_array(grid, partial_array(grid, f.coeffs, 1))
                return to_spectral_array(grid, u1p * g1 + u2p * g2)

            lhs = float(np.dot(advect(theta), phi.coeffs))
            rhs = -float(np.dot(advect(phi), theta.coeffs))
            scale = max(abs(lhs), abs(rhs), 1e-30)
            assert abs(lhs - rhs) <= 1e-10 * max(scale, theta.l2() * phi.l2())

    def test_inverse_gradient_cancellation(self):
        # <(u_a - u_b) . grad theta_a, L^{-1}(theta_a - theta_b)> = 0: the
        # advecting field of the difference is orthogonal to the gradient of
        # its own stream function.
        grid = make_grid(12)
        rng = np.random.default_rng(7)
        from sqglab.spectral import (
            partial_array,
            to_physical_array,
            to_spectral_array,
        )

        for _ in range(10):
            ta = random_field(grid, rng, decay=1.0)
            tb = random_field(grid, rng, decay=1.0)
            w = ta - tb
            w1, w2 = riesz_velocity(w)
            g1 = to_physical_array(grid, partial_array(grid, ta.coeffs, 0))
            g2 = to_physical_array(grid, partial_array(grid, ta.coeffs, 1))
            u1p = to_physical_array(grid, w1.coeffs)
            u2p = to_physical_array(grid, w2.coeffs)
            adv = to_spectral_array(grid, u1p * g1 + u2p * g2)
            lam_inv = apply_lambda_power(w, -1.0)
            val = float(np.dot(adv, lam_inv.coeffs))
            scale = max(np.linalg.norm(adv) * lam_inv.l2(), 1e-30)
            assert abs(val) <= 1e-10 * scale


class TestDeterministicSolver:
    def test_single_mode_exact_decay(self):
        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=0.8, resolution=4, dt=1e-3, t_final=1.0)
        theta0 = unit_mode(grid, (1, 0), "sin")
        tr = solve_deterministic(theta0, cfg)
        # |k| = 1, so the decay rate is kappa regardless of alpha.
        assert tr.final.l2() == pytest.approx(np.exp(-0.8), rel=1e-8)
        k_idx = grid.index_of((1, 0), "sin")
        assert tr.final.coeffs[k_idx] == pytest.approx(np.exp(-0.8), rel=1e-8)

    def test_zero_initial_state(self):
        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=0.01, t_final=0.5)
        tr = solve_deterministic(zero_field(grid), cfg)
        assert tr.final.l2() == 0.0
        assert np.all(tr.norm("l2") == 0.0)

    def test_l2_non_increasing(self):
        grid = make_grid(16)
        cfg = DynamicsConfig(alpha=0.7, kappa=0.2, resolution=16, dt=0.01, t_final=0.5)
        theta0 = random_field(grid, np.random.default_rng(3), decay=1.5, norm=1.0)
        tr = solve_deterministic(theta0, cfg)
        l2 = tr.norm("l2")
        assert np.all(np.diff(l2) <= 1e-12)

    def test_self_convergence_second_order(self):
        grid = make_grid(16)
        theta0 = random_field(grid, np.random.default_rng(11), decay=2.0, norm=1.0)

        def endpoint(dt):
            cfg = DynamicsConfig(alpha=0.75, kappa=0.1, resolution=16, dt=dt, t_final=0.25)
            return solve_deterministic(theta0, cfg).final

        f1, f2, f4 = endpoint(0.025), endpoint(0.0125), endpoint(0.00625)
        d1 = (f1 - f2).l2()
        d2 = (f2 - f4).l2()
        assert 2.5 < d1 / d2 < 6.0

    def test_energy_identity_defect_order(self):
        grid = make_grid(16)
        theta0 = random_field(grid, np.random.default_rng(5), decay=2.0, norm=1.0)

        def defect(dt):
            cfg = DynamicsConfig(alpha=0.75, kappa=0.1, resolution=16, dt=dt, t_final=0.5)
            tr = solve_deterministic(theta0, cfg)
            diss = np.trapezoid(tr.norm("h_alpha") ** 2, tr.times)
            return abs(tr.final.l2() ** 2 + 2.0 * cfg.kappa * diss - theta0.l2() ** 2)

        d1, d2 = defect(0.02), defect(0.01)
        assert d1 / d2 > 2.5

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up_detected(self):
        grid = make_grid(8)
        cfg = DynamicsConfig(alpha=0.75, kappa=1e-6, resolution=8, dt=5.0, t_final=50.0,
                             scheme="exponential-euler")
        theta0 = random_field(grid, np.random.default_rng(1), norm=5e150)
        with pytest.raises(BlowUpError) as err:
            solve_deterministic(theta0, cfg)
        assert err.value.step >= 1


class TestSkeletonSolver:
    def _model(self, grid):
        return NoiseModel(grid, [unit_mode(grid, (1, 0), "sin")], GFunction("constant", 1.0))

    def test_zero_control_matches_deterministic(self):
        grid = make_grid(8)
        cfg = DynamicsConfig(alpha=0.8, kappa=0.3, resolution=8, dt=0.01, t_final=0.5)
        theta0 = random_field(grid, np.random.default_rng(2), decay=1.0, norm=1.0)
        v = Control.zeros(m=1, n_cells=10, horizon=0.5)
        tr_v = solve_skeleton(theta0, v, self._model(grid), cfg)
        tr_0 = solve_deterministic(theta0, cfg)
        assert (tr_v.final - tr_0.final).l2() <= 1e-12

    def test_scalar_linear_oracle(self):
        # Single controlled mode: theta stays on the (1,0) sin mode, so the
        # run is the scalar ODE x' = -kappa x + b v with constant v.
        grid = make_grid(4)
        kappa, b, vbar, T = 0.7, 1.0, 0.9, 1.0
        cfg = DynamicsConfig(alpha=0.75, kappa=kappa, resolution=4, dt=1.0 / 4096, t_final=T)
        v = Control(np.array([0.0, T]), np.array([[vbar]]))
        tr = solve_skeleton(zero_field(grid), v, self._model(grid), cfg)
        x = tr.final.coeffs[grid.index_of((1, 0), "sin")]
        exact = b * vbar * (1.0 - np.exp(-kappa * T)) / kappa
        assert x == pytest.approx(exact, rel=1e-8)

    def test_horizon_mismatch_rejected(self):
        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=0.01, t_final=1.0)
        v = Control.zeros(m=1, n_cells=4, horizon=0.5)
        with pytest.raises(ConfigurationError):
            solve_skeleton(zero_field(grid), v, self._model(grid), cfg)

    def test_apriori_monitor_finite(self):
        grid = make_grid(8)
        cfg = DynamicsConfig(alpha=0.75, kappa=0.5, resolution=8, dt=0.02, t_final=0.5,
                             record_delta=1.0, record_p=8.0)
        theta0 = random_field(grid, np.random.default_rng(4), decay=1.5, norm=1.0)
        v = Control(np.array([0.0, 0.5]), np.array([[0.5]]))
        tr = solve_skeleton(theta0, v, self._model(grid), cfg)
        report = monitor_apriori(tr, 1.0, 8.0)
        assert report.finite
        assert report.sup_energy > 0.0


class TestDelayedMollified:
    def test_zero_history_window_pure_decay(self):
        # On [0, delta] the velocity is zero, so each mode of the mollified
        # initial datum decays linearly.
        grid = make_grid(6)
        delta = 0.25
        cfg = DynamicsConfig(alpha=0.75, kappa=0.4, resolution=6, dt=delta / 8, t_final=delta)
        theta0 = mode_sum(grid, [(0.8, (1, 0), "sin"), (0.5, (2, 1), "cos")])
        tr = solve_delayed_mollified(theta0, delta, cfg=cfg)
        expected = theta0.coeffs * np.exp(-delta * grid.kabs) \
            * np.exp(-cfg.kappa * grid.kabs ** (2 * cfg.alpha) * delta)
        assert np.allclose(tr.final.coeffs, expected, rtol=1e-8, atol=1e-12)

    def test_mollified_initial_contraction(self):
        grid = make_grid(8)
        theta0 = random_field(grid, np.random.default_rng(8), norm=2.0)
        delta = 0.1
        cfg = DynamicsConfig(alpha=0.75, kappa=0.3, resolution=8, dt=delta / 4, t_final=delta)
        tr = solve_delayed_mollified(theta0, delta, cfg=cfg)
        assert tr.norm("l2")[0] <= theta0.l2()

    def test_invalid_delay_rejected(self):
        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=0.01, t_final=1.0)
        theta0 = unit_mode(grid, (1, 0))
        with pytest.raises(ConfigurationError):
            solve_delayed_mollified(theta0, -0.1, cfg=cfg)
        with pytest.raises(ConfigurationError):
            solve_delayed_mollified(theta0, 0.3, cfg=cfg)  # does not divide T

    def test_converges_to_main_solver(self):
        grid = make_grid(8)
        theta0 = random_field(grid, np.random.default_rng(12), decay=2.5, norm=1.0)
        cfg = DynamicsConfig(alpha=0.75, kappa=0.4, resolution=8, dt=0.0125, t_final=0.8)
        reference = solve_deterministic(theta0, cfg)
        ref = np.array([s.coeffs for s in reference.snapshots])

        def sup_distance(delta):
            tr = solve_delayed_mollified(theta0, delta, cfg=cfg)
            approx = np.array([s.coeffs for s in tr.snapshots])
            return float(np.max(np.linalg.norm(approx - ref, axis=1)))

        dists = [sup_distance(d) for d in (0.2, 0.1, 0.05)]
        assert dists[0] > dists[1] > dists[2]


class TestAprioriMonitor:
    def test_zero_trajectory(self):
        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=0.05, t_final=0.5,
                             record_p=8.0)
        tr = solve_deterministic(zero_field(grid), cfg)
        report = monitor_apriori(tr, cfg.record_delta, cfg.record_p)
        assert report.sup_energy == 0.0
        assert report.dissipation_integral == 0.0
        assert report.transport_integral == 0.0

    def test_transport_exponent_value(self):
        # alpha = 0.75, p = 8: exponent = 0.75 / (0.75 - 0.5 - 0.125) = 6.
        assert transport_exponent(0.75, 8.0) == pytest.approx(6.0, rel=1e-14)

    def test_boundary_pair_rejected(self):
        with pytest.raises(ConfigurationError):
            transport_exponent(0.75, 4.0)

    def test_monitor_rejects_boundary_pair(self):
        grid = make_grid(4)
        cfg = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=0.05, t_final=0.5,
                             record_p=4.0)
        tr = solve_deterministic(unit_mode(grid, (1, 0)), cfg)
        with pytest.raises(ConfigurationError):
            monitor_apriori(tr, cfg.record_delta, 4.0)


class TestConfigValidation:
    def test_subcritical_warning_flag(self):
        cfg = DynamicsConfig(alpha=0.4, kappa=1.0, resolution=4, dt=0.01, t_final=1.0)
        assert cfg.subcritical_warning
        cfg2 = DynamicsConfig(alpha=0.75, kappa=1.0, resolution=4, dt=0.01, t_final=1.0)
        assert not cfg2.subcritical_warning

    def test_invalid_parameters(self):
        good = dict(alpha=0.75, kappa=1.0, resolution=4, dt=0.01, t_final=1.0)
        for bad in (dict(kappa=0.0), dict(dt=-1.0), dict(t_final=0.001),
                    dict(resolution=0), dict(scheme="leapfrog")):
            with pytest.raises(ConfigurationError):
                DynamicsConfig(**{**good, **bad})
