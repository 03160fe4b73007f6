"""Spectral core: grids, multipliers, transforms, norms.

Expected values follow independent oracles: brute-force wavevector
enumeration, dense trigonometric quadrature, and direct evaluation of the
coefficient-space norm formula.
"""

import numpy as np
import pytest

from sqglab import (
    ConfigurationError,
    apply_lambda_power,
    galerkin_project,
    lp_norm,
    make_grid,
    poisson_mollify,
    random_field,
    riesz_velocity,
    sobolev_norm,
    to_physical,
    to_spectral,
    unit_mode,
    zero_field,
)
from sqglab.spectral import PhysicalField, SpectralField, TWO_PI


def brute_force_modes(n):
    """Oracle: every nonzero integer pair inside the Euclidean ball |k| <= n."""
    out = []
    for k1 in range(-n, n + 1):
        for k2 in range(-n, n + 1):
            if (k1, k2) != (0, 0) and k1 * k1 + k2 * k2 <= n * n:
                out.append((k1, k2))
    return out


class TestMakeGrid:
    def test_n1_exact_enumeration(self):
        grid = make_grid(1)
        assert grid.n_modes == 4
        sin_part = {tuple(k) for k in grid.kvec[grid.is_sin]}
        cos_part = {tuple(k) for k in grid.kvec[~grid.is_sin]}
        assert sin_part == {(1, 0), (0, 1)}
        assert cos_part == {(-1, 0), (0, -1)}

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    def test_counts_match_brute_force(self, n):
        grid = make_grid(n)
        assert grid.n_modes == len(brute_force_modes(n))
        if n == 2:
            assert grid.n_modes == 12

    def test_rejects_zero_resolution(self):
        with pytest.raises(ConfigurationError):
            make_grid(0)
        with pytest.raises(ConfigurationError):
            make_grid(-3)

    def test_no_zero_mode_no_duplicates(self):
        grid = make_grid(6)
        keys = set(map(tuple, grid.kvec))
        assert (0, 0) not in keys
        assert len(keys) == grid.n_modes

    def test_partition_into_half_lattices(self):
        grid = make_grid(4)
        for (k1, k2), sin in zip(grid.kvec, grid.is_sin):
            in_plus = k2 > 0 or (k2 == 0 and k1 > 0)
            assert bool(sin) == in_plus

    def test_eigenvalues_integer_exact(self):
        grid = make_grid(7)
        assert grid.ksq.dtype.kind == "i"
        assert np.array_equal(grid.ksq, grid.kvec[:, 0] ** 2 + grid.kvec[:, 1] ** 2)

    def test_canonical_order_sorted_within_blocks(self):
        grid = make_grid(5)
        for block in (grid.kvec[: grid.n_pairs], grid.kvec[grid.n_pairs:]):
            keys = [(int(k1) ** 2 + int(k2) ** 2, (int(k1), int(k2))) for k1, k2 in block]
            assert keys == sorted(keys)


class TestLambdaPower:
    def test_unit_eigenvalue(self):
        grid = make_grid(3)
        f = unit_mode(grid, (1, 0), "sin")
        g = apply_lambda_power(f, 2.0)
        assert np.allclose(g.coeffs, f.coeffs, rtol=0, atol=0)

    def test_sqrt2_eigenvalue(self):
        grid = make_grid(3)
        f = unit_mode(grid, (1, 1), "sin")
        g = apply_lambda_power(f, 1.0)
        assert g.coeffs[grid.index_of((1, 1), "sin")] == pytest.approx(np.sqrt(2.0), rel=1e-15)

    def test_zero_power_identity(self):
        grid = make_grid(8)
        f = random_field(grid, np.random.default_rng(0))
        g = apply_lambda_power(f, 0.0)
        assert np.array_equal(g.coeffs, f.coeffs)

    @pytest.mark.parametrize("n", [8, 16])
    def test_composition(self, n):
        grid = make_grid(n)
        rng = np.random.default_rng(n)
        for _ in range(20):
            f = random_field(grid, rng)
            s, t = rng.uniform(-1.5, 1.5, size=2)
            lhs = apply_lambda_power(apply_lambda_power(f, s), t)
            rhs = apply_lambda_power(f, s + t)
            assert np.allclose(lhs.coeffs, rhs.coeffs, rtol=1e-12, atol=1e-14)

    def test_negative_power_well_defined(self):
        grid = make_grid(4)
        f = random_field(grid, np.random.default_rng(1))
        g = apply_lambda_power(f, -0.5)
        assert np.all(np.isfinite(g.coeffs))


class TestSobolevNorm:
    def test_single_mode_k2(self):
        grid = make_grid(3)
        assert sobolev_norm(unit_mode(grid, (0, 2), "sin"), 1.0) == pytest.approx(2.0, rel=1e-15)

    def test_zero_field(self):
        grid = make_grid(3)
        for s in (-2.0, 0.0, 1.5):
            assert sobolev_norm(zero_field(grid), s) == 0.0

    def test_scaled_mode_half_power(self):
        # Direct evaluation of the norm formula: (9 * (sqrt 2)^1)^(1/2) = 3 * 2^(1/4).
        grid = make_grid(3)
        f = 3.0 * unit_mode(grid, (1, 1), "sin")
        assert sobolev_norm(f, 0.5) == pytest.approx(3.0 * 2.0**0.25, rel=1e-14)

    def test_parseval_s0_is_euclidean(self):
        grid = make_grid(12)
        f = random_field(grid, np.random.default_rng(7))
        assert sobolev_norm(f, 0.0) == pytest.approx(np.linalg.norm(f.coeffs), rel=0, abs=0)

    def test_negative_order_permitted(self):
        grid = make_grid(6)
        f = random_field(grid, np.random.default_rng(3))
        v = sobolev_norm(f, -0.5)
        oracle = np.sqrt(np.sum(grid.kabs ** (-1.0) * f.coeffs**2))
        assert v == pytest.approx(oracle, rel=1e-14)


class TestRieszVelocity:
    def test_sin_x1(self):
        # theta = sin(x1) => u = (0, -cos(x1)); stream-function convention.
        grid = make_grid(2)
        theta = SpectralField(grid, _TRIG * unit_mode(grid, (1, 0), "sin").coeffs)
        u1, u2 = riesz_velocity(theta)
        assert np.allclose(u1.coeffs, 0.0, atol=1e-15)
        x1 = grid.x1
        u2_phys = to_physical(u2).values
        assert np.allclose(u2_phys, -np.cos(x1), atol=1e-12)

    def test_sin_x2(self):
        grid = make_grid(2)
        theta = SpectralField(grid, _TRIG * unit_mode(grid, (0, 1), "sin").coeffs)
        u1, u2 = riesz_velocity(theta)
        assert np.allclose(u2.coeffs, 0.0, atol=1e-15)
        assert np.allclose(to_physical(u1).values, np.cos(grid.x2), atol=1e-12)

    def test_divergence_free_per_mode(self):
        grid = make_grid(16)
        rng = np.random.default_rng(5)
        theta = random_field(grid, rng)
        u1, u2 = riesz_velocity(theta)
        # Per-mode divergence: pair coefficients of d1 u1 + d2 u2 must vanish.
        from sqglab.spectral import partial_array

        div = partial_array(grid, u1.coeffs, 0) + partial_array(grid, u2.coeffs, 1)
        assert np.max(np.abs(div)) <= 1e-12 * theta.l2() * grid.resolution

    def test_isometry(self):
        grid = make_grid(16)
        rng = np.random.default_rng(6)
        for _ in range(10):
            theta = random_field(grid, rng)
            u1, u2 = riesz_velocity(theta)
            lhs = sobolev_norm(u1, 0.0) ** 2 + sobolev_norm(u2, 0.0) ** 2
            rhs = sobolev_norm(theta, 0.0) ** 2
            assert lhs == pytest.approx(rhs, rel=1e-12)


class TestPoissonMollify:
    def test_sigma_zero_identity(self):
        grid = make_grid(5)
        f = random_field(grid, np.random.default_rng(2))
        assert np.array_equal(poisson_mollify(f, 0.0).coeffs, f.coeffs)

    def test_single_mode(self):
        grid = make_grid(2)
        f = unit_mode(grid, (1, 0), "sin")
        g = poisson_mollify(f, 1.0)
        assert g.coeffs[grid.index_of((1, 0), "sin")] == pytest.approx(np.exp(-1.0), rel=1e-15)

    def test_two_modes_mode_wise(self):
        grid = make_grid(3)
        f = unit_mode(grid, (2, 0), "sin") + unit_mode(grid, (0, 1), "sin")
        g = poisson_mollify(f, 0.5)
        assert g.coeffs[grid.index_of((2, 0), "sin")] == pytest.approx(np.exp(-1.0), rel=1e-14)
        assert g.coeffs[grid.index_of((0, 1), "sin")] == pytest.approx(np.exp(-0.5), rel=1e-14)

    def test_semigroup(self):
        grid = make_grid(8)
        f = random_field(grid, np.random.default_rng(9))
        lhs = poisson_mollify(poisson_mollify(f, 0.3), 0.45)
        rhs = poisson_mollify(f, 0.75)
        assert np.allclose(lhs.coeffs, rhs.coeffs, rtol=1e-12, atol=1e-15)

    def test_norms_non_increasing(self):
        grid = make_grid(8)
        f = random_field(grid, np.random.default_rng(10))
        g = poisson_mollify(f, 0.2)
        for s in (-0.5, 0.0, 1.0):
            assert sobolev_norm(g, s) <= sobolev_norm(f, s)

    def test_negative_sigma_rejected(self):
        grid = make_grid(2)
        with pytest.raises(ConfigurationError):
            poisson_mollify(unit_mode(grid, (1, 0)), -0.1)


class TestGalerkinProject:
    def test_full_rank_identity(self):
        grid = make_grid(4)
        f = random_field(grid, np.random.default_rng(11))
        g = galerkin_project(f, grid.n_modes + 5)
        assert np.array_equal(g.coeffs, f.coeffs)

    def test_rank_one(self):
        grid = make_grid(4)
        f = random_field(grid, np.random.default_rng(12))
        g = galerkin_project(f, 1)
        assert g.coeffs[0] == f.coeffs[0]
        assert np.all(g.coeffs[1:] == 0.0)

    def test_parseval_tail(self):
        grid = make_grid(6)
        f = random_field(grid, np.random.default_rng(13))
        k = 17
        g = galerkin_project(f, k)
        tail = np.sum(f.coeffs[k:] ** 2)
        assert (f - g).l2() ** 2 == pytest.approx(tail, rel=1e-14)

    def test_idempotent_and_contractive(self):
        grid = make_grid(6)
        f = random_field(grid, np.random.default_rng(14))
        g = galerkin_project(f, 9)
        assert np.array_equal(galerkin_project(g, 9).coeffs, g.coeffs)
        assert g.l2() <= f.l2()


_TRIG = np.sqrt(2.0) * np.pi  # turns a unit mode into the bare sin/cos function


class TestTransforms:
    def test_unit_mode_samples(self):
        grid = make_grid(2)
        f = SpectralField(grid, _TRIG * unit_mode(grid, (1, 0), "sin").coeffs)
        phys = to_physical(f)
        assert np.allclose(phys.values, np.sin(grid.x1), atol=1e-13)

    def test_round_trip_random(self):
        grid = make_grid(32)
        f = random_field(grid, np.random.default_rng(15))
        g = to_spectral(to_physical(f))
        assert np.allclose(g.coeffs, f.coeffs, rtol=1e-12, atol=1e-13 * f.l2())

    def test_constant_maps_to_zero(self):
        grid = make_grid(3)
        M = grid.phys_size
        g = PhysicalField(grid, np.full((M, M), 4.2))
        assert to_spectral(g).l2() == pytest.approx(0.0, abs=1e-12)

    def test_physical_mean_is_zero(self):
        grid = make_grid(8)
        f = random_field(grid, np.random.default_rng(16))
        phys = to_physical(f)
        linf = np.max(np.abs(phys.values))
        assert abs(np.mean(phys.values)) <= 1e-12 * max(linf, 1.0)

    def test_mismatched_grid_rejected(self):
        g3, g4 = make_grid(3), make_grid(4)
        f = random_field(g3, np.random.default_rng(17))
        with pytest.raises(ConfigurationError):
            PhysicalField(g4, to_physical(f).values)


class TestLpNorm:
    def test_sin_l2(self):
        # integral of sin^2(x1) over the torus is 2 pi^2, so the norm is pi sqrt(2);
        # cross-checked against a dense quadrature oracle.
        grid = make_grid(2)
        f = SpectralField(grid, _TRIG * unit_mode(grid, (1, 0), "sin").coeffs)
        v = lp_norm(to_physical(f), 2.0)
        xs = np.linspace(0.0, TWO_PI, 400, endpoint=False)
        X1, _ = np.meshgrid(xs, xs, indexing="ij")
        oracle = np.sqrt(np.sum(np.sin(X1) ** 2) * (TWO_PI / 400) ** 2)
        assert v == pytest.approx(np.pi * np.sqrt(2.0), rel=1e-12)
        assert v == pytest.approx(oracle, rel=1e-10)

    def test_zero(self):
        grid = make_grid(2)
        assert lp_norm(to_physical(zero_field(grid)), 3.0) == 0.0

    def test_p2_matches_parseval(self):
        for n in (8, 32, 64):
            grid = make_grid(n)
            f = random_field(grid, np.random.default_rng(n))
            quad = lp_norm(to_physical(f), 2.0)
            assert quad == pytest.approx(sobolev_norm(f, 0.0), rel=1e-10)

    def test_p_below_one_rejected(self):
        grid = make_grid(2)
        with pytest.raises(ConfigurationError):
            lp_norm(to_physical(zero_field(grid)), 0.5)


class TestFieldInvariants:
    def test_nan_rejected(self):
        grid = make_grid(2)
        c = np.zeros(grid.n_modes)
        c[0] = np.nan
        with pytest.raises(ConfigurationError):
            SpectralField(grid, c)

    def test_immutable(self):
        grid = make_grid(2)
        f = unit_mode(grid, (1, 0))
        with pytest.raises(ValueError):
            f.coeffs[0] = 2.0
