"""Fourier infrastructure on the 2-torus for zero-mean scalar fields.

The state space is the set of real, zero-mean functions on
T^2 = [0, 2pi)^2, expanded in the orthonormalized trigonometric eigenbasis
of -Laplace:

    e_k(x) = sin(k.x) / (sqrt(2) pi)   for k in Z2_PLUS,
    e_k(x) = cos(k.x) / (sqrt(2) pi)   for k in Z2_MINUS,

where Z2_PLUS = {k2 > 0} u {k2 = 0, k1 > 0} and Z2_MINUS = -Z2_PLUS.  A
``WaveGrid`` enumerates every nonzero wavevector with |k| <= N in a fixed
canonical order (the sin block, then the cos block, each sorted by |k|^2
and then lexicographically); this order is also the serialization order.

Coefficients are stored as plain real vectors, so the L2 norm of a field
is the Euclidean norm of its coefficients and |k|^s multipliers act
diagonally.  Transforms to and from the uniform physical grid (3N points
per axis, which keeps quadratic products alias-free inside the band) are
thin wrappers around ``numpy.fft.rfft2``.

All array-level helpers accept arbitrary leading batch dimensions; the
``SpectralField`` / ``PhysicalField`` wrappers hold a single field and are
immutable values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi

# Threads for batched FFTs.  Splitting a batch across threads does not
# change any transform's result, so outputs are identical for any count.
_FFT_WORKERS = max(os.cpu_count() or 1, 1)

# Below this work size a dense synthesis matrix (one BLAS call) beats many
# tiny FFTs; the matrices are built once per grid.
_DENSE_LIMIT = 320_000

# 1 / norm of the raw trig functions: ||sin(k.x)||_L2 = sqrt(2) pi on T^2.
_TRIG_NORM = np.sqrt(2.0) * np.pi
# Complex amplitude of one orthonormal mode: a*sin + b*cos = Re[(b - i a) e^{ik.x}] / (sqrt2 pi).
_CPAIR = 1.0 / (2.0 * _TRIG_NORM)


class WaveGrid:
    """Wavevector table for band limit N plus cached transform indexing.

    Modes are all k in Z^2 \\ {0} with |k| <= N.  ``kvec[j]`` is the j-th
    wavevector in canonical order, ``is_sin[j]`` marks the sin block and
    ``partner[j]`` is the index of the matching cos (or sin) entry of the
    same +-k pair.  ``phys_size`` is the side of the padded physical grid
    used for dealiased products and L^p quadrature.
    """

    def __init__(self, resolution: int):
        if not isinstance(resolution, (int, np.integer)):
            raise ConfigurationError(f"grid resolution must be an integer, got {resolution!r}")
        if resolution < 1:
            raise ConfigurationError(f"grid resolution must be >= 1, got {resolution}")
        if resolution > 4096:
            raise ConfigurationError(f"grid resolution {resolution} is unreasonably large")
        N = int(resolution)

        plus, minus = [], []
        for k1 in range(-N, N + 1):
            for k2 in range(-N, N + 1):
                if k1 == 0 and k2 == 0:
                    continue
                if k1 * k1 + k2 * k2 > N * N:
                    continue
                if k2 > 0 or (k2 == 0 and k1 > 0):
                    plus.append((k1, k2))
                else:
                    minus.append((k1, k2))
        key = lambda k: (k[0] * k[0] + k[1] * k[1], k)
        plus.sort(key=key)
        minus.sort(key=key)

        self.resolution = N
        self.kvec = np.array(plus + minus, dtype=np.int64)
        self.n_modes = len(self.kvec)
        self.n_pairs = len(plus)
        self.ksq = self.kvec[:, 0] ** 2 + self.kvec[:, 1] ** 2
        self.kabs = np.sqrt(self.ksq.astype(np.float64))
        self.is_sin = np.zeros(self.n_modes, dtype=bool)
        self.is_sin[: self.n_pairs] = True

        index_of = {tuple(k): j for j, k in enumerate(map(tuple, self.kvec))}
        self.partner = np.array(
            [index_of[(-k1, -k2)] for k1, k2 in self.kvec], dtype=np.int64
        )

        # Representative (+) wavevector of each mode's pair, shared ratios,
        # and the sign that turns "gather partner" into i k_j-type multipliers.
        self.rep_k = np.where(self.is_sin[:, None], self.kvec, -self.kvec)
        self.rep_k1 = self.rep_k[:, 0].astype(np.float64)
        self.rep_k2 = self.rep_k[:, 1].astype(np.float64)
        self.ratio1 = self.rep_k1 / self.kabs
        self.ratio2 = self.rep_k2 / self.kabs
        self.odd_sign = np.where(self.is_sin, -1.0, 1.0)

        # rfft2 layout: physical grid M x M, half-spectrum M x (M//2 + 1).
        M = 3 * N
        W = M // 2 + 1
        self.phys_size = M
        self._spec_w = W
        sin_k = self.kvec[: self.n_pairs]
        rows = np.mod(sin_k[:, 0], M)
        cols = sin_k[:, 1]
        self._pair_flat = rows * W + cols
        mirror = cols == 0
        self._mirror_src = np.nonzero(mirror)[0]
        self._mirror_flat = (np.mod(-sin_k[mirror, 0], M) * W).astype(np.int64)

        x = np.arange(M) * (TWO_PI / M)
        self.x1, self.x2 = np.meshgrid(x, x, indexing="ij")

        for arr in (self.kvec, self.ksq, self.kabs, self.is_sin, self.partner):
            arr.setflags(write=False)

        # Dense synthesis/analysis matrices for small grids: synth rows are
        # the basis functions sampled on the grid; analysis is the exact
        # quadrature transpose (cell area times synth transposed).
        self._dense = self.n_modes * M * M <= _DENSE_LIMIT
        if self._dense:
            synth = _to_physical_fft(self, np.eye(self.n_modes))
            self._synth = np.ascontiguousarray(synth.reshape(self.n_modes, M * M))
            self._anal = np.ascontiguousarray(self._synth.T * (TWO_PI**2 / (M * M)))
        self._transport_synth = None

    def __eq__(self, other):
        return isinstance(other, WaveGrid) and other.resolution == self.resolution

    def __hash__(self):
        return hash(("WaveGrid", self.resolution))

    def __repr__(self):
        return f"WaveGrid(resolution={self.resolution}, n_modes={self.n_modes})"

    def index_of(self, kvec, trig: str) -> int:
        """Canonical index of the mode sin(k.x) or cos(k.x)."""
        k1, k2 = int(kvec[0]), int(kvec[1])
        if trig == "cos":
            k1, k2 = (-k1, -k2) if (k2 > 0 or (k2 == 0 and k1 > 0)) else (k1, k2)
        elif trig == "sin":
            k1, k2 = (k1, k2) if (k2 > 0 or (k2 == 0 and k1 > 0)) else (-k1, -k2)
        else:
            raise ConfigurationError(f"trig must be 'sin' or 'cos', got {trig!r}")
        matches = np.nonzero((self.kvec[:, 0] == k1) & (self.kvec[:, 1] == k2))[0]
        if len(matches) == 0:
            raise ConfigurationError(f"wavevector {(k1, k2)} outside band limit {self.resolution}")
        return int(matches[0])


def make_grid(resolution: int) -> WaveGrid:
    """Build the wavevector table for band limit ``resolution``."""
    return WaveGrid(resolution)


# ---------------------------------------------------------------------------
# Array-level operations (broadcast over leading batch dimensions)
# ---------------------------------------------------------------------------

def lambda_power_array(grid: WaveGrid, coeffs: np.ndarray, s: float) -> np.ndarray:
    """Multiply coefficients by |k|^s (diagonal fractional Laplacian power)."""
    if s == 0.0:
        return np.array(coeffs, copy=True)
    return coeffs * grid.kabs**s


def sobolev_norm_array(grid: WaveGrid, coeffs: np.ndarray, s: float) -> np.ndarray:
    """H^s norm per batch entry: sqrt(sum |k|^{2s} c_k^2)."""
    if s == 0.0:
        w = coeffs * coeffs
    else:
        w = grid.kabs ** (2.0 * s) * coeffs * coeffs
    return np.sqrt(np.sum(w, axis=-1))


def riesz_velocity_array(grid: WaveGrid, coeffs: np.ndarray):
    """Velocity pair u = (-R2, R1) theta in coefficient form."""
    cp = np.take(coeffs, grid.partner, axis=-1)
    u1 = grid.odd_sign * grid.ratio2 * cp
    u2 = -grid.odd_sign * grid.ratio1 * cp
    return u1, u2


def partial_array(grid: WaveGrid, coeffs: np.ndarray, axis: int) -> np.ndarray:
    """Coefficient form of the partial derivative along torus axis 0 or 1."""
    rep = grid.rep_k1 if axis == 0 else grid.rep_k2
    cp = np.take(coeffs, grid.partner, axis=-1)
    return grid.odd_sign * rep * cp


def poisson_mollify_array(grid: WaveGrid, coeffs: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0.0:
        raise ConfigurationError(f"mollifier width must be >= 0, got {sigma}")
    if sigma == 0.0:
        return np.array(coeffs, copy=True)
    return coeffs * np.exp(-sigma * grid.kabs)


def _to_physical_fft(grid: WaveGrid, coeffs: np.ndarray) -> np.ndarray:
    M, W = grid.phys_size, grid._spec_w
    batch = coeffs.shape[:-1]
    a = coeffs[..., : grid.n_pairs]
    b = np.take(coeffs, grid.partner[: grid.n_pairs], axis=-1)
    vals = (b - 1j * a) * (_CPAIR * M * M)
    spec = np.zeros(batch + (M * W,), dtype=np.complex128)
    spec[..., grid._pair_flat] = vals
    if len(grid._mirror_src):
        spec[..., grid._mirror_flat] = np.conj(vals[..., grid._mirror_src])
    return _fft.irfft2(spec.reshape(batch + (M, W)), s=(M, M), axes=(-2, -1),
                       workers=_FFT_WORKERS)


def _to_spectral_fft(grid: WaveGrid, values: np.ndarray) -> np.ndarray:
    M, W = grid.phys_size, grid._spec_w
    spec = _fft.rfft2(values, axes=(-2, -1), workers=_FFT_WORKERS)
    spec = spec.reshape(values.shape[:-2] + (M * W,))
    z = np.take(spec, grid._pair_flat, axis=-1) / (_CPAIR * M * M)
    out = np.empty(values.shape[:-2] + (grid.n_modes,), dtype=np.float64)
    out[..., : grid.n_pairs] = -z.imag
    pcols = grid.partner[: grid.n_pairs]
    out[..., pcols] = z.real
    return out


def to_physical_array(grid: WaveGrid, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate coefficient arrays (..., n_modes) on the padded physical grid."""
    M = grid.phys_size
    if grid._dense:
        out = coeffs @ grid._synth
        return out.reshape(coeffs.shape[:-1] + (M, M))
    return _to_physical_fft(grid, coeffs)


def to_spectral_array(grid: WaveGrid, values: np.ndarray) -> np.ndarray:
    """Project physical samples (..., M, M) onto the band; removes the mean."""
    M = grid.phys_size
    if values.shape[-2:] != (M, M):
        raise ConfigurationError(
            f"physical grid shape {values.shape[-2:]} does not match ({M}, {M})"
        )
    if grid._dense:
        return values.reshape(values.shape[:-2] + (M * M,)) @ grid._anal
    return _to_spectral_fft(grid, values)


def _fused_transport_synth(grid: WaveGrid) -> np.ndarray:
    """(n_modes, 4 M^2) matrix sending coefficients straight to the sampled
    (u1, u2, d1 theta, d2 theta) block; built once per dense grid."""
    if grid._transport_synth is None:
        eye = np.eye(grid.n_modes)
        u1, u2 = riesz_velocity_array(grid, eye)
        d1 = partial_array(grid, eye, 0)
        d2 = partial_array(grid, eye, 1)
        blocks = [np.ascontiguousarray(m @ grid._synth) for m in (u1, u2, d1, d2)]
        grid._transport_synth = np.ascontiguousarray(np.concatenate(blocks, axis=1))
    return grid._transport_synth


def transport_array(grid: WaveGrid, coeffs: np.ndarray) -> np.ndarray:
    """Dealiased transport term B(theta) = u . grad theta, u = Riesz velocity."""
    if grid._dense:
        m2 = grid.phys_size**2
        derived = coeffs @ _fused_transport_synth(grid)
        u1 = derived[..., 0:m2]
        u2 = derived[..., m2:2 * m2]
        d1 = derived[..., 2 * m2:3 * m2]
        d2 = derived[..., 3 * m2:4 * m2]
        return (u1 * d1 + u2 * d2) @ grid._anal
    u1, u2 = riesz_velocity_array(grid, coeffs)
    d1 = partial_array(grid, coeffs, 0)
    d2 = partial_array(grid, coeffs, 1)
    stacked = np.stack([u1, u2, d1, d2], axis=-2)
    phys = to_physical_array(grid, stacked)
    prod = phys[..., 0, :, :] * phys[..., 2, :, :] + phys[..., 1, :, :] * phys[..., 3, :, :]
    return to_spectral_array(grid, prod)


def transport_with_velocity_array(grid: WaveGrid, coeffs: np.ndarray,
                                  u1_phys: np.ndarray, u2_phys: np.ndarray) -> np.ndarray:
    """u . grad theta for a frozen physical velocity pair (delayed scheme)."""
    d1 = partial_array(grid, coeffs, 0)
    d2 = partial_array(grid, coeffs, 1)
    stacked = np.stack([d1, d2], axis=-2)
    phys = to_physical_array(grid, stacked)
    prod = u1_phys * phys[..., 0, :, :] + u2_phys * phys[..., 1, :, :]
    return to_spectral_array(grid, prod)


def lp_norm_array(grid: WaveGrid, values: np.ndarray, p: float) -> np.ndarray:
    """Uniform-grid quadrature of the L^p norm on (..., M, M) samples."""
    if p < 1.0:
        raise ConfigurationError(f"L^p norm requires p >= 1, got {p}")
    M = grid.phys_size
    cell = TWO_PI**2 / (M * M)
    return (cell * np.sum(np.abs(values) ** p, axis=(-2, -1))) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralField:
    """Zero-mean scalar field as real coefficients in canonical grid order."""

    grid: WaveGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.shape != (self.grid.n_modes,):
            raise ConfigurationError(
                f"coefficient vector has shape {c.shape}, expected ({self.grid.n_modes},)"
            )
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("non-finite spectral coefficients")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # -- linear-space conveniences ------------------------------------
    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs)

    def _check(self, other: "SpectralField"):
        if other.grid != self.grid:
            raise ConfigurationError("fields live on different grids")

    def dot(self, other: "SpectralField") -> float:
        self._check(other)
        return float(np.dot(self.coeffs, other.coeffs))

    def l2(self) -> float:
        return float(np.linalg.norm(self.coeffs))


@dataclass(frozen=True)
class PhysicalField:
    """Samples on the uniform padded grid of T^2."""

    grid: WaveGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        M = self.grid.phys_size
        if v.shape != (M, M):
            raise ConfigurationError(f"sample array has shape {v.shape}, expected ({M}, {M})")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def zero_field(grid: WaveGrid) -> SpectralField:
    return SpectralField(grid, np.zeros(grid.n_modes))


def unit_mode(grid: WaveGrid, kvec, trig: str = "sin") -> SpectralField:
    """The orthonormal basis field for one wavevector."""
    c = np.zeros(grid.n_modes)
    c[grid.index_of(kvec, trig)] = 1.0
    return SpectralField(grid, c)


def random_field(grid: WaveGrid, rng: np.random.Generator,
                 decay: float = 0.0, norm: float | None = None) -> SpectralField:
    """Gaussian coefficients, optionally damped by |k|^-decay and renormalized."""
    c = rng.standard_normal(grid.n_modes)
    if decay:
        c = c * grid.kabs ** (-decay)
    if norm is not None:
        n = np.linalg.norm(c)
        if n > 0:
            c = c * (norm / n)
    return SpectralField(grid, c)


# ---------------------------------------------------------------------------
# Field-level operations
# ---------------------------------------------------------------------------

def apply_lambda_power(f: SpectralField, s: float) -> SpectralField:
    """|k|^s multiplier; negative s is well defined because k = 0 is excluded."""
    return SpectralField(f.grid, lambda_power_array(f.grid, f.coeffs, s))


def sobolev_norm(f: SpectralField, s: float) -> float:
    return float(sobolev_norm_array(f.grid, f.coeffs, s))


def riesz_velocity(theta: SpectralField):
    """u = (-R2 theta, R1 theta); divergence-free and an L2 isometry mode-wise."""
    u1, u2 = riesz_velocity_array(theta.grid, theta.coeffs)
    return SpectralField(theta.grid, u1), SpectralField(theta.grid, u2)


def poisson_mollify(f: SpectralField, sigma: float) -> SpectralField:
    """Poisson-kernel smoothing: c_k -> exp(-sigma |k|) c_k."""
    return SpectralField(f.grid, poisson_mollify_array(f.grid, f.coeffs, sigma))


def galerkin_project(f: SpectralField, n_keep: int) -> SpectralField:
    """Keep the first ``n_keep`` canonical modes, zero the rest."""
    if n_keep < 1:
        raise ConfigurationError(f"projection rank must be >= 1, got {n_keep}")
    c = f.coeffs.copy()
    c[n_keep:] = 0.0
    return SpectralField(f.grid, c)


def to_physical(f: SpectralField) -> PhysicalField:
    return PhysicalField(f.grid, to_physical_array(f.grid, f.coeffs))


def to_spectral(g: PhysicalField) -> SpectralField:
    """Band projection of grid samples; subtracts the grid mean by construction."""
    return SpectralField(g.grid, to_spectral_array(g.grid, g.values))


def lp_norm(g: PhysicalField, p: float) -> float:
    return float(lp_norm_array(g.grid, g.values, p))
