"""Transport-dissipation dynamics: deterministic flow, controlled skeleton
flow, and the delayed-mollified piecewise-linear scheme.

All solvers integrate

    d theta / dt = -s (A theta + B(theta)) + G(theta) v(t),

where A has per-mode symbol kappa |k|^{2 alpha}, B is the dealiased
transport term, s is the drift scale (1 for the standard equations,
epsilon for the short-time rescaling, 0 for drift-free flavors), and the
control term is optional.  Time stepping is an exponential integrator:
the stiff diagonal part is propagated exactly by exp(-s kappa |k|^{2a} dt)
and the rest receives a Heun (trapezoidal predictor-corrector) treatment,
which makes single-mode linear problems exact up to rounding and the
energy identity second-order accurate.

The delayed-mollified scheme advects with a Poisson-mollified velocity
read from strictly earlier history, so each subinterval of length delta_n
is a linear problem; it reproduces the main solver as delta_n -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad

from .errors import BlowUpError, ConfigurationError
from .noise import Control, NoiseModel, apply_g_array
from .spectral import (
    SpectralField,
    WaveGrid,
    lp_norm_array,
    make_grid,
    poisson_mollify_array,
    riesz_velocity_array,
    sobolev_norm_array,
    to_physical_array,
    transport_array,
    transport_with_velocity_array,
)

SCHEMES = ("heun-exponential", "exponential-euler")


@dataclass(frozen=True)
class DynamicsConfig:
    """Physical and numerical parameters of a run.

    ``drift_scale`` multiplies both the dissipation and the transport term
    (1 for the standard equation, epsilon for the short-time rescaling).
    ``record_delta`` / ``record_p`` fix which extra Sobolev and L^p norm
    series trajectories carry.  ``subcritical_warning`` flags dissipation
    exponents at or below 1/2, where nothing is guaranteed.
    """

    alpha: float
    kappa: float
    resolution: int
    dt: float
    t_final: float
    drift_scale: float = 1.0
    scheme: str = "heun-exponential"
    record_delta: float = 1.0
    record_p: float = 8.0
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.kappa <= 0.0:
            raise ConfigurationError(f"dissipation strength must be > 0, got {self.kappa}")
        if not (0.0 < self.alpha < 2.0):
            raise ConfigurationError(f"dissipation exponent must lie in (0, 2), got {self.alpha}")
        if self.dt <= 0.0:
            raise ConfigurationError(f"time step must be > 0, got {self.dt}")
        if self.t_final < self.dt:
            raise ConfigurationError("horizon must be at least one time step")
        if self.resolution < 1:
            raise ConfigurationError("resolution must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.drift_scale < 0.0:
            raise ConfigurationError("drift scale must be >= 0")
        if self.record_p < 1.0:
            raise ConfigurationError("recorded L^p order must be >= 1")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot stride must be >= 1")

    @property
    def subcritical_warning(self) -> bool:
        return self.alpha <= 0.5

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_final / self.dt))
        return max(n, 1)


NORM_NAMES = ("l2", "h_alpha", "h_delta", "h_delta_alpha", "h_minus_half", "lp")


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed snapshots plus norm series.

    Norms are recorded at every step; snapshots are thinned by the
    configured stride (the final state is always kept).
    """

    grid: WaveGrid
    config: DynamicsConfig
    times: np.ndarray
    norms: dict
    snap_times: np.ndarray
    snapshots: list

    def norm(self, name: str) -> np.ndarray:
        if name not in self.norms:
            raise ConfigurationError(f"trajectory does not store norm {name!r}")
        return self.norms[name]

    @property
    def final(self) -> SpectralField:
        return self.snapshots[-1]


class _Recorder:
    """Accumulates norm series and stride-thinned snapshots."""

    def __init__(self, grid: WaveGrid, cfg: DynamicsConfig, n_steps: int):
        self.grid = grid
        self.cfg = cfg
        self.times = np.zeros(n_steps + 1)
        self.series = {name: np.zeros(n_steps + 1) for name in NORM_NAMES}
        self.snap_times = []
        self.snapshots = []
        self._i = 0

    def push(self, t: float, coeffs: np.ndarray, theta_phys: np.ndarray | None = None):
        grid, cfg, i = self.grid, self.cfg, self._i
        self.times[i] = t
        self.series["l2"][i] = sobolev_norm_array(grid, coeffs, 0.0)
        self.series["h_alpha"][i] = sobolev_norm_array(grid, coeffs, cfg.alpha)
        self.series["h_delta"][i] = sobolev_norm_array(grid, coeffs, cfg.record_delta)
        self.series["h_delta_alpha"][i] = sobolev_norm_array(
            grid, coeffs, cfg.record_delta + cfg.alpha)
        self.series["h_minus_half"][i] = sobolev_norm_array(grid, coeffs, -0.5)
        if theta_phys is None:
            theta_phys = to_physical_array(grid, coeffs)
        self.series["lp"][i] = lp_norm_array(grid, theta_phys, cfg.record_p)
        is_last = i == len(self.times) - 1
        if i % cfg.snapshot_stride == 0 or is_last:
            self.snap_times.append(t)
            self.snapshots.append(SpectralField(grid, coeffs.copy()))
        self._i += 1

    def build(self) -> Trajectory:
        return Trajectory(
            grid=self.grid,
            config=self.cfg,
            times=self.times,
            norms=self.series,
            snap_times=np.array(self.snap_times),
            snapshots=self.snapshots,
        )


def _check_finite(coeffs: np.ndarray, step: int, t: float, grid: WaveGrid):
    if not np.all(np.isfinite(coeffs)):
        finite = coeffs[np.isfinite(coeffs)]
        norms = {"l2_of_finite_part": float(np.linalg.norm(finite))}
        raise BlowUpError(
            f"non-finite coefficients after step {step} (t = {t:.6g}); "
            "reduce dt or stay in the subcritical range",
            step=step, time=t, norms=norms,
        )


def make_propagator(grid: WaveGrid, cfg: DynamicsConfig, scale: float | None = None) -> np.ndarray:
    """Per-mode linear factor exp(-scale * kappa |k|^{2 alpha} dt)."""
    s = cfg.drift_scale if scale is None else scale
    return np.exp(-s * cfg.kappa * grid.kabs ** (2.0 * cfg.alpha) * cfg.dt)


def heun_exponential_step(theta, propagator, dt, nonlin, scheme="heun-exponential"):
    """One step of the exponential integrator for d theta/dt = L theta + N(theta).

    ``nonlin`` maps coefficient arrays to coefficient arrays and may be None
    (pure linear decay).  Works on arbitrary leading batch dimensions.
    """
    if nonlin is None:
        return propagator * theta
    k1 = nonlin(theta)
    if scheme == "exponential-euler":
        return propagator * (theta + dt * k1)
    predictor = propagator * (theta + dt * k1)
    k2 = nonlin(predictor)
    return propagator * (theta + 0.5 * dt * k1) + 0.5 * dt * k2


def solve_deterministic(theta0: SpectralField, cfg: DynamicsConfig) -> Trajectory:
    """Integrate d theta/dt = -drift_scale (A theta + B(theta))."""
    return solve_skeleton(theta0, None, None, cfg)


def solve_skeleton(theta0: SpectralField, v: Control | None, model: NoiseModel | None,
                   cfg: DynamicsConfig) -> Trajectory:
    """Controlled flow d theta/dt = -s (A theta + B(theta)) + G(theta) v(t).

    With ``v`` (or ``model``) absent the control term is dropped and the
    result is the deterministic flow.
    """
    grid = theta0.grid
    if grid.resolution != cfg.resolution:
        raise ConfigurationError("initial condition grid does not match the config resolution")
    n_steps = cfg.n_steps
    v_steps = None
    if v is not None:
        if model is None:
            raise ConfigurationError("a control requires a noise model")
        if v.m != model.m:
            raise ConfigurationError("control dimension does not match the noise model")
        if v.horizon < cfg.t_final - 1e-9:
            raise ConfigurationError(
                f"control horizon {v.horizon} does not span the run horizon {cfg.t_final}")
        mid = (np.arange(n_steps) + 0.5) * cfg.dt
        v_steps = v.step_values(mid)

    E = make_propagator(grid, cfg)
    scale = cfg.drift_scale
    rec = _Recorder(grid, cfg, n_steps)
    c = theta0.coeffs.copy()
    rec.push(0.0, c)

    for n in range(n_steps):
        if v_steps is None:
            nonlin = (lambda th: -scale * transport_array(grid, th)) if scale else None
        else:
            yn = v_steps[:, n]
            if scale:
                def nonlin(th, yn=yn):
                    return -scale * transport_array(grid, th) + apply_g_array(model, th, yn)
            else:
                def nonlin(th, yn=yn):
                    return apply_g_array(model, th, yn)
        c = heun_exponential_step(c, E, cfg.dt, nonlin, cfg.scheme)
        t = (n + 1) * cfg.dt
        _check_finite(c, n + 1, t, grid)
        rec.push(t, c)
    return rec.build()


# ---------------------------------------------------------------------------
# Transport term (public wrapper)
# ---------------------------------------------------------------------------

def nonlinear_term(theta: SpectralField) -> SpectralField:
    """B(theta) = u . grad theta with u the Riesz velocity; dealiased, so
    <B(theta), theta> vanishes to rounding."""
    return SpectralField(theta.grid, transport_array(theta.grid, theta.coeffs))


# ---------------------------------------------------------------------------
# Delayed-mollified piecewise-linear scheme
# ---------------------------------------------------------------------------

def _bump_normalizer() -> float:
    val, _ = quad(lambda u: math.exp(-1.0 / (1.0 - u * u)), -1.0, 1.0, limit=200)
    return 0.5 * val  # substitution u = 2 tau - 3 halves the integral


_BUMP_Z = _bump_normalizer()
_N_TAU = 16
_TAU_NODES = 1.0 + (np.arange(_N_TAU) + 0.5) / _N_TAU


def time_bump(tau: np.ndarray) -> np.ndarray:
    """Smooth averaging kernel supported on [1, 2] with unit integral."""
    tau = np.asarray(tau, dtype=np.float64)
    u = 2.0 * tau - 3.0
    out = np.zeros_like(tau)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2)) / _BUMP_Z
    return out


_TAU_WEIGHTS = time_bump(_TAU_NODES) / _N_TAU


class _VelocityHistory:
    """Stores the mollified Riesz velocity at step times; linear in-between,
    zero before t = 0."""

    def __init__(self, grid: WaveGrid, dt: float):
        self.grid = grid
        self.dt = dt
        self.u1: list[np.ndarray] = []
        self.u2: list[np.ndarray] = []

    def append(self, coeffs: np.ndarray, sigma: float):
        mollified = poisson_mollify_array(self.grid, coeffs, sigma)
        v1, v2 = riesz_velocity_array(self.grid, mollified)
        pair = to_physical_array(self.grid, np.stack([v1, v2], axis=0))
        self.u1.append(pair[0])
        self.u2.append(pair[1])

    def _at(self, s: float):
        M = self.grid.phys_size
        if s <= 0.0:
            if s > -1e-12 and self.u1:
                return self.u1[0], self.u2[0]
            return np.zeros((M, M)), np.zeros((M, M))
        x = s / self.dt
        i = int(math.floor(x))
        frac = x - i
        last = len(self.u1) - 1
        if i >= last:
            return self.u1[last], self.u2[last]
        return ((1.0 - frac) * self.u1[i] + frac * self.u1[i + 1],
                (1.0 - frac) * self.u2[i] + frac * self.u2[i + 1])

    def velocity(self, t: float, delta: float):
        """Kernel-weighted average of history at times t - delta * tau."""
        M = self.grid.phys_size
        acc1 = np.zeros((M, M))
        acc2 = np.zeros((M, M))
        for tau, w in zip(_TAU_NODES, _TAU_WEIGHTS):
            s = t - delta * tau
            if s < -1e-12:
                continue
            h1, h2 = self._at(s)
            acc1 += w * h1
            acc2 += w * h2
        return acc1, acc2


def solve_delayed_mollified(theta0: SpectralField, delta_n: float,
                            v: Control | None = None, model: NoiseModel | None = None,
                            cfg: DynamicsConfig | None = None) -> Trajectory:
    """Piecewise-linear approximation: velocity is the Poisson-mollified,
    time-lagged Riesz transform of the solution's own history, so on each
    subinterval of length delta_n the equation is linear.  Initial data is
    mollified; history before t = 0 counts as zero."""
    if cfg is None:
        raise ConfigurationError("a DynamicsConfig is required")
    if delta_n <= 0.0:
        raise ConfigurationError(f"delay width must be > 0, got {delta_n}")
    ratio = cfg.t_final / delta_n
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigurationError("delay width must divide the horizon")
    sub = delta_n / cfg.dt
    if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
        raise ConfigurationError("time step must divide the delay width")

    grid = theta0.grid
    if grid.resolution != cfg.resolution:
        raise ConfigurationError("initial condition grid does not match the config resolution")
    n_steps = cfg.n_steps
    v_steps = None
    if v is not None:
        if model is None:
            raise ConfigurationError("a control requires a noise model")
        mid = (np.arange(n_steps) + 0.5) * cfg.dt
        v_steps = v.step_values(mid)

    E = make_propagator(grid, cfg)
    scale = cfg.drift_scale
    c = poisson_mollify_array(grid, theta0.coeffs, delta_n)
    hist = _VelocityHistory(grid, cfg.dt)
    hist.append(c, delta_n)
    rec = _Recorder(grid, cfg, n_steps)
    rec.push(0.0, c)

    for n in range(n_steps):
        t0, t1 = n * cfg.dt, (n + 1) * cfg.dt
        u_start = hist.velocity(t0, delta_n)
        u_end = hist.velocity(t1, delta_n)

        def rhs(th, u_pair, step_idx=n):
            out = -scale * transport_with_velocity_array(grid, th, u_pair[0], u_pair[1])
            if v_steps is not None:
                gv = apply_g_array(model, th, v_steps[:, step_idx])
                out = out + poisson_mollify_array(grid, gv, delta_n)
            return out

        k1 = rhs(c, u_start)
        predictor = E * (c + cfg.dt * k1)
        k2 = rhs(predictor, u_end)
        c = E * (c + 0.5 * cfg.dt * k1) + 0.5 * cfg.dt * k2
        _check_finite(c, n + 1, t1, grid)
        hist.append(c, delta_n)
        rec.push(t1, c)
    return rec.build()


# ---------------------------------------------------------------------------
# A priori bound monitoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AprioriReport:
    """Empirical values of the regularity functionals along a trajectory."""

    sup_energy: float            # sup_t (||L^d theta||^2 + ||theta||_Lp^p)
    dissipation_integral: float  # int ||L^{d+a} theta||^2 dt (trapezoidal)
    transport_integral: float    # int ||theta||_Lp^N0 dt
    transport_exponent: float    # N0 = alpha / (alpha - 1/2 - 1/p)

    @property
    def finite(self) -> bool:
        return all(np.isfinite([self.sup_energy, self.dissipation_integral,
                                self.transport_integral]))


def transport_exponent(alpha: float, p: float) -> float:
    """N0 = alpha / (alpha - 1/2 - 1/p); rejected outside the admissible range."""
    gap = alpha - 0.5 - 1.0 / p
    if gap <= 0.0:
        raise ConfigurationError(
            f"inadmissible pair (alpha={alpha}, p={p}): requires 1/p < alpha - 1/2")
    return alpha / gap


def monitor_apriori(tr: Trajectory, delta: float, p: float) -> AprioriReport:
    """Evaluate the a priori regularity functionals stored with a trajectory."""
    cfg = tr.config
    if abs(delta - cfg.record_delta) > 1e-12 or abs(p - cfg.record_p) > 1e-12:
        raise ConfigurationError(
            f"trajectory records (delta={cfg.record_delta}, p={cfg.record_p}), "
            f"cannot monitor (delta={delta}, p={p})")
    n0 = transport_exponent(cfg.alpha, p)
    lp = tr.norm("lp")
    sup_energy = float(np.max(tr.norm("h_delta") ** 2 + lp**p))
    dissipation = float(np.trapezoid(tr.norm("h_delta_alpha") ** 2, tr.times))
    transport = float(np.trapezoid(lp**n0, tr.times))
    return AprioriReport(
        sup_energy=sup_energy,
        dissipation_integral=dissipation,
        transport_integral=transport,
        transport_exponent=n0,
    )
