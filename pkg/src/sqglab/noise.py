"""Truncated multiplicative noise operator and its driving paths.

The operator acts on a field theta and a vector y in U = R^m as

    G(theta) y = sum_k y_k b_k(x) g(theta(x)),

assembled pointwise on the padded physical grid and projected back onto
the zero-mean band.  ``g`` is one of: a constant (additive noise), the
identity (linear multiplicative noise), or a tabulated bounded function
with a declared derivative bound.  Spatial profiles ``b_k`` may be
band-limited fields or plain constants.

Wiener increments are reproducible from a single master seed: worker or
sample ``i`` draws from ``numpy``'s PCG64 seeded with ``mix64(master, i)``,
the SplitMix64 output stream evaluated at position ``i``.  This derivation
is part of the on-disk contract and is recorded in every results table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .spectral import (
    SpectralField,
    WaveGrid,
    lambda_power_array,
    sobolev_norm_array,
    to_physical_array,
    to_spectral_array,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(master_seed: int, index: int) -> int:
    """SplitMix64 finalizer composition: the index-th output of the stream
    whose initial state is ``master_seed``.  Bit-exact seed derivation for
    worker/sample ``index``."""
    z = (int(master_seed) + (int(index) + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class NoisePath:
    """Matrix of Wiener increments, one row per noise direction."""

    seed: int
    dt: float
    increments: np.ndarray  # (m, n_steps), each entry N(0, dt)

    @classmethod
    def generate(cls, seed: int, m: int, dt: float, n_steps: int) -> "NoisePath":
        if m < 1 or n_steps < 1 or dt <= 0.0:
            raise ConfigurationError("NoisePath requires m >= 1, n_steps >= 1, dt > 0")
        rng = np.random.default_rng(seed)
        dw = rng.standard_normal((m, n_steps)) * np.sqrt(dt)
        dw.setflags(write=False)
        return cls(seed=int(seed), dt=float(dt), increments=dw)

    @property
    def m(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]


def sample_increments(master_seed: int, indices, m: int, dt: float, n_steps: int) -> np.ndarray:
    """Stack per-sample increment matrices (len(indices), m, n_steps).

    Each sample uses its own generator seeded via the mix64 contract, so the
    result does not depend on how samples are batched across workers.
    """
    out = np.empty((len(indices), m, n_steps))
    root = np.sqrt(dt)
    for row, i in enumerate(indices):
        rng = np.random.default_rng(mix64(master_seed, i))
        out[row] = rng.standard_normal((m, n_steps)) * root
    return out


# ---------------------------------------------------------------------------
# Pointwise nonlinearity g
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GFunction:
    """Pointwise nonlinearity: 'constant' c, 'identity', or a 'table'
    (piecewise-linear interpolant with constant extrapolation and a
    declared derivative bound)."""

    kind: str
    value: float = 1.0
    table_x: np.ndarray | None = None
    table_y: np.ndarray | None = None
    deriv_bound: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "identity", "table"):
            raise ConfigurationError(f"unknown g kind {self.kind!r}")
        if self.kind == "table":
            if self.table_x is None or self.table_y is None:
                raise ConfigurationError("table g requires table_x and table_y")
            x = np.asarray(self.table_x, dtype=np.float64)
            y = np.asarray(self.table_y, dtype=np.float64)
            if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
                raise ConfigurationError("table g needs matching 1-d arrays, length >= 2")
            if not np.all(np.diff(x) > 0):
                raise ConfigurationError("table abscissae must be strictly increasing")
            if self.deriv_bound is None:
                raise ConfigurationError("table g requires a declared derivative bound")
            slopes = np.diff(y) / np.diff(x)
            if np.max(np.abs(slopes)) > self.deriv_bound + 1e-12:
                raise ConfigurationError("table slopes exceed the declared derivative bound")
            object.__setattr__(self, "table_x", x)
            object.__setattr__(self, "table_y", y)

    def __call__(self, theta_phys: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(theta_phys, self.value)
        if self.kind == "identity":
            return theta_phys
        return np.interp(theta_phys, self.table_x, self.table_y)

    def derivative(self, theta_phys: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.zeros_like(theta_phys)
        if self.kind == "identity":
            return np.ones_like(theta_phys)
        # Piecewise-constant slope of the interpolant; clamped tails have slope 0.
        x, y = self.table_x, self.table_y
        slopes = np.concatenate([[0.0], np.diff(y) / np.diff(x), [0.0]])
        idx = np.searchsorted(x, theta_phys, side="right")
        return slopes[idx]

    @property
    def is_additive(self) -> bool:
        return self.kind == "constant"


# ---------------------------------------------------------------------------
# Noise model
# ---------------------------------------------------------------------------

class NoiseModel:
    """The operator G: m spatial profiles, a pointwise nonlinearity, and
    declared regularity constants.  Immutable and shareable."""

    def __init__(self, grid: WaveGrid, profiles, g: GFunction | None = None,
                 declared_bound: float | None = None):
        if len(profiles) < 1:
            raise ConfigurationError("noise model needs at least one direction")
        self.grid = grid
        self.g = g if g is not None else GFunction("constant", 1.0)
        self.m = len(profiles)
        M = grid.phys_size

        phys = np.empty((self.m, M, M))
        spec = np.zeros((self.m, grid.n_modes))
        means = np.zeros(self.m)
        for j, b in enumerate(profiles):
            if isinstance(b, SpectralField):
                if b.grid != grid:
                    raise ConfigurationError("profile grid does not match the model grid")
                phys[j] = to_physical_array(grid, b.coeffs)
                spec[j] = b.coeffs
            else:
                val = float(b)
                if not np.isfinite(val):
                    raise ConfigurationError("non-finite constant profile")
                phys[j] = val
                means[j] = val
        if not np.all(np.isfinite(phys)):
            raise ConfigurationError("non-finite noise profile values")

        self.profiles_phys = phys
        self.profiles_spec = spec
        self.profile_means = means
        self.declared_bound = declared_bound
        self.sum_sq_peak = float(np.sum(np.max(phys**2, axis=(-2, -1))))
        if declared_bound is not None and self.sum_sq_peak > declared_bound + 1e-12:
            raise ConfigurationError(
                f"sum of squared profile peaks {self.sum_sq_peak:.6g} exceeds the "
                f"declared bound {declared_bound:.6g}"
            )
        phys.setflags(write=False)
        spec.setflags(write=False)

    @property
    def is_additive(self) -> bool:
        return self.g.is_additive

    def __repr__(self):
        return f"NoiseModel(m={self.m}, g={self.g.kind!r}, N={self.grid.resolution})"


def combine_profiles(model: NoiseModel, y: np.ndarray) -> np.ndarray:
    """sum_k y_k b_k on the physical grid; y may carry batch dims (..., m)."""
    return np.einsum("...k,kxy->...xy", y, model.profiles_phys)


def apply_g_array(model: NoiseModel, theta_coeffs: np.ndarray, y: np.ndarray,
                  theta_phys: np.ndarray | None = None) -> np.ndarray:
    """Coefficient form of G(theta) y; batch dims broadcast across both args."""
    if y.shape[-1] != model.m:
        raise ConfigurationError(f"direction vector has length {y.shape[-1]}, expected {model.m}")
    grid = model.grid
    if model.is_additive:
        # State-independent: the band projection of sum_k y_k c b_k is a
        # plain spectral combination, no transforms needed.
        return (y @ model.profiles_spec) * model.g.value
    mix = combine_profiles(model, y)
    if theta_phys is None:
        theta_phys = to_physical_array(grid, theta_coeffs)
    return to_spectral_array(grid, mix * model.g(theta_phys))


def apply_g(model: NoiseModel, theta: SpectralField, y) -> SpectralField:
    """G(theta) y as a zero-mean band-limited field."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ConfigurationError("direction vector must be one-dimensional")
    return SpectralField(model.grid, apply_g_array(model, theta.coeffs, y))


def hs_norm_g(model: NoiseModel, theta: SpectralField) -> float:
    """Hilbert-Schmidt norm (sum over directions of ||G(theta) f_j||_L2^2)^(1/2)."""
    grid = model.grid
    if model.is_additive:
        point = model.profiles_phys * model.g.value
    else:
        point = model.profiles_phys * model.g(to_physical_array(grid, theta.coeffs))
    cols = to_spectral_array(grid, point)
    return float(np.sqrt(np.sum(cols**2)))


# ---------------------------------------------------------------------------
# Controls (time-discretized elements of L^2([0,T], U))
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Control:
    """Piecewise-constant control: values[:, i] holds on [times[i], times[i+1])."""

    times: np.ndarray   # (n_cells + 1,) strictly increasing, starts at 0
    values: np.ndarray  # (m, n_cells)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1 or len(t) < 2:
            raise ConfigurationError("control needs at least one cell")
        if not np.all(np.diff(t) > 0):
            raise ConfigurationError("control time grid must be strictly increasing")
        if abs(t[0]) > 1e-12:
            raise ConfigurationError("control time grid must start at 0")
        if v.ndim != 2 or v.shape[1] != len(t) - 1:
            raise ConfigurationError(
                f"control values shape {v.shape} does not match {len(t) - 1} cells"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("non-finite control values")
        t = t.copy(); t.setflags(write=False)
        v = v.copy(); v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def cell_widths(self) -> np.ndarray:
        return np.diff(self.times)

    def squared_l2(self) -> float:
        return float(np.sum(self.values**2 * self.cell_widths()))

    def cell_of(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def step_values(self, step_times: np.ndarray) -> np.ndarray:
        """(m, n_steps) control value per solver step (looked up mid-step)."""
        return self.values[:, self.cell_of(step_times)]

    @classmethod
    def zeros(cls, m: int, n_cells: int, horizon: float) -> "Control":
        return cls(np.linspace(0.0, horizon, n_cells + 1), np.zeros((m, n_cells)))


# ---------------------------------------------------------------------------
# Hypothesis validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisReport:
    """Pass/fail structural conditions plus empirically probed constants.

    Probed values are reported, never asserted: the underlying conditions
    posit existence of constants, not their size.
    """

    alpha: float
    p: float
    delta: float
    subcritical: bool
    integrability_ok: bool          # 1/p < alpha - 1/2
    smoothing_order: float          # r = max(2 - 2 alpha, alpha)
    delta_exceeds_gap: bool         # delta > 2 - 2 alpha
    delta_small_time_ok: bool       # delta >= max(3/4 - alpha/2, alpha - 1/2)
    profile_bound_ok: bool
    sum_sq_peak: float
    probes: dict = field(default_factory=dict)

    @property
    def all_structural_ok(self) -> bool:
        return (self.subcritical and self.integrability_ok
                and self.delta_exceeds_gap and self.delta_small_time_ok
                and self.profile_bound_ok)


def validate_hypotheses(model: NoiseModel, alpha: float, p: float, delta: float,
                        n_probe: int = 8, probe_seed: int = 2024) -> HypothesisReport:
    """Check the structural noise conditions and probe growth/Lipschitz
    constants on sampled field pairs."""
    grid = model.grid
    rng = np.random.default_rng(probe_seed)

    growth, lip_h, lip_half = [], [], []
    for _ in range(n_probe):
        c1 = rng.standard_normal(grid.n_modes) * grid.kabs ** (-1.5)
        c2 = rng.standard_normal(grid.n_modes) * grid.kabs ** (-1.5)
        f1, f2 = SpectralField(grid, c1), SpectralField(grid, c2)
        hs1 = hs_norm_g(model, f1)
        growth.append(hs1**2 / (1.0 + f1.l2() ** 2))

        cols = np.empty((model.m, grid.n_modes))
        basis = np.eye(model.m)
        for j in range(model.m):
            cols[j] = (apply_g_array(model, c1, basis[j])
                       - apply_g_array(model, c2, basis[j]))
        diff_l2 = max((f1 - f2).l2(), 1e-300)
        lip_h.append(np.sqrt(np.sum(cols**2)) / diff_l2)
        half = lambda_power_array(grid, cols, -0.5)
        dhalf = max(float(sobolev_norm_array(grid, c1 - c2, -0.5)), 1e-300)
        lip_half.append(np.sqrt(np.sum(half**2)) / dhalf)

    bound_ok = (model.declared_bound is None
                or model.sum_sq_peak <= model.declared_bound + 1e-12)
    return HypothesisReport(
        alpha=alpha,
        p=p,
        delta=delta,
        subcritical=alpha > 0.5,
        integrability_ok=(p > 0 and 1.0 / p < alpha - 0.5),
        smoothing_order=max(2.0 - 2.0 * alpha, alpha),
        delta_exceeds_gap=delta > 2.0 - 2.0 * alpha,
        delta_small_time_ok=delta >= max(0.75 - 0.5 * alpha, alpha - 0.5),
        profile_bound_ok=bound_ok,
        sum_sq_peak=model.sum_sq_peak,
        probes={
            "growth_const": float(np.max(growth)),
            "lipschitz_l2": float(np.max(lip_h)),
            "lipschitz_half": float(np.max(lip_half)),
        },
    )
