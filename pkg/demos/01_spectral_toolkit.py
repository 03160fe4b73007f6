#!/usr/bin/env python3
"""Tour of the spectral toolkit: grids, multipliers, transforms, norms.

Everything lives in the zero-mean trigonometric basis on the torus, so
norms are Euclidean, fractional Laplacian powers are diagonal, and the
Riesz velocity is an exact mode-wise rotation.
"""

import numpy as np

from sqglab import (
    apply_lambda_power,
    lp_norm,
    make_grid,
    poisson_mollify,
    random_field,
    riesz_velocity,
    sobolev_norm,
    to_physical,
    to_spectral,
    unit_mode,
)

grid = make_grid(16)
print(f"band limit 16 -> {grid.n_modes} modes, physical grid {grid.phys_size}^2")

# Single modes have closed-form norms: ||e_k||_{H^s} = |k|^s.
f = unit_mode(grid, (3, 4), "sin")
print(f"||e_(3,4)||_L2      = {sobolev_norm(f, 0.0):.12f}   (exact: 1)")
print(f"||e_(3,4)||_H1      = {sobolev_norm(f, 1.0):.12f}   (exact: 5)")
print(f"||e_(3,4)||_H^-1/2  = {sobolev_norm(f, -0.5):.12f}   (exact: 5^-1/2 = {5**-0.5:.12f})")

# Multiplier calculus: Lambda^s Lambda^t = Lambda^(s+t); Poisson kernels compose.
theta = random_field(grid, np.random.default_rng(1), decay=1.0, norm=1.0)
comp = apply_lambda_power(apply_lambda_power(theta, 0.7), -0.2)
direct = apply_lambda_power(theta, 0.5)
print(f"multiplier composition error: {(comp - direct).l2():.2e}")
semigroup = poisson_mollify(poisson_mollify(theta, 0.1), 0.2) - poisson_mollify(theta, 0.3)
print(f"mollifier semigroup error:    {semigroup.l2():.2e}")

# The velocity law: divergence-free and an L2 isometry, mode by mode.
u1, u2 = riesz_velocity(theta)
print(f"Riesz isometry defect:        "
      f"{abs(u1.l2()**2 + u2.l2()**2 - theta.l2()**2):.2e}")

# Physical-grid round trip and quadrature vs Parseval.
phys = to_physical(theta)
print(f"round-trip error:             {(to_spectral(phys) - theta).l2():.2e}")
print(f"quadrature L2 vs Parseval:    {abs(lp_norm(phys, 2.0) - theta.l2()):.2e}")
print(f"L8 norm (quadrature):         {lp_norm(phys, 8.0):.6f}")
