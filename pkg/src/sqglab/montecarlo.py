"""Rare-event Monte Carlo and scaling diagnostics.

Probabilities are estimated either naively (hit fractions with Wilson
intervals) or by importance sampling under a control tilt (self-normalized
weighted mean with a delta-method interval).  Per-sample seeds follow the
mix64 contract, so estimates are bit-identical for any batch size or
worker count; zero-hit cells report p_hat = 0 with a one-sided interval
and a symbolic (None) value on the eps log p scale, never an error.

The limits the theory speaks about (eps -> 0, thresholds -> infinity) are
out of reach; every report here is a finite-grid trend with confidence
intervals, and the fit helpers only extrapolate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .action import ObservableSpec
from .dynamics import DynamicsConfig, transport_exponent
from .errors import ConfigurationError
from .noise import Control, NoiseModel, sample_increments
from .processes import FLAVORS, StepKernel
from .spectral import (
    SpectralField,
    lp_norm_array,
    sobolev_norm_array,
    to_physical_array,
)

Z95 = 1.959963984540054
DEFAULT_BATCH = 4096


def wilson_interval(hits: int, n: int, z: float = Z95):
    """Binomial 95% interval; behaves sanely at 0 or n hits."""
    if n < 1:
        raise ConfigurationError("interval needs at least one sample")
    phat = hits / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom
    lo = 0.0 if hits == 0 else max(center - half, 0.0)
    hi = 1.0 if hits == n else min(center + half, 1.0)
    return lo, hi


@dataclass(frozen=True)
class ProbabilityEstimate:
    p_hat: float
    ci_lo: float
    ci_hi: float
    n_samples: int
    eps: float
    method: str
    seed: int
    ess: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p_hat <= 1.0):
            raise ConfigurationError("estimate outside [0, 1]")
        if not (self.ci_lo - 1e-12 <= self.p_hat <= self.ci_hi + 1e-12):
            raise ConfigurationError("interval does not contain the estimate")

    @property
    def eps_log_p(self):
        """eps * log(p_hat); None (a sentinel, not a number) when p_hat = 0."""
        if self.p_hat <= 0.0:
            return None
        return self.eps * math.log(self.p_hat)


@dataclass(frozen=True)
class RareEventSpec:
    """Event definition: which process, which functional, which level set."""

    theta0: SpectralField
    model: NoiseModel
    cfg: DynamicsConfig
    observable: ObservableSpec
    threshold: float
    flavor: str = "small-noise"
    direction: str = ">="
    at: str = "terminal"
    tilt: Control | None = None
    tilt_scale: float = 1.0

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ConfigurationError(f"unknown flavor {self.flavor!r}")
        if self.direction not in (">=", "<="):
            raise ConfigurationError("direction must be '>=' or '<='")
        if self.at not in ("terminal", "sup"):
            raise ConfigurationError("event time must be 'terminal' or 'sup'")
        if not np.isfinite(self.threshold):
            raise ConfigurationError("threshold must be finite")

    def indicator(self, values: np.ndarray) -> np.ndarray:
        if self.direction == ">=":
            return values >= self.threshold
        return values <= self.threshold


# ---------------------------------------------------------------------------
# Batched evaluation
# ---------------------------------------------------------------------------

def _eval_range(spec: RareEventSpec, eps: float, master_seed: int,
                start: int, stop: int, tilted: bool):
    """Observable values and log-weights for samples [start, stop)."""
    grid = spec.theta0.grid
    control = None
    if tilted:
        if spec.tilt is None:
            raise ConfigurationError("tilted estimation requires a tilt control in the spec")
        control = Control(spec.tilt.times, spec.tilt_scale * spec.tilt.values)
    kernel = StepKernel(grid, spec.model, spec.cfg, eps, spec.flavor, control=control)
    dw = sample_increments(master_seed, range(start, stop), spec.model.m,
                           spec.cfg.dt, spec.cfg.n_steps)

    if spec.at == "terminal":
        terminal, logw = kernel.run(spec.theta0.coeffs, dw)
        vals = spec.observable.evaluate_batch(grid, terminal)
        return vals, logw

    running = {}

    def observer(step, t, theta):
        v = spec.observable.evaluate_batch(grid, theta)
        running["max"] = v if step == 0 else np.maximum(running["max"], v)

    _, logw = kernel.run(spec.theta0.coeffs, dw, observer)
    return running["max"], logw


def _worker_eval(args):
    spec, eps, master_seed, start, stop, tilted = args
    vals, logw = _eval_range(spec, eps, master_seed, start, stop, tilted)
    return start, vals, logw


def _collect(spec: RareEventSpec, eps: float, n: int, master_seed: int,
             tilted: bool, batch_size: int, workers: int):
    ranges = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
    vals = np.empty(n)
    logw = np.zeros(n)
    if workers <= 1 or len(ranges) == 1:
        for s, e in ranges:
            v, lw = _eval_range(spec, eps, master_seed, s, e, tilted)
            vals[s:e] = v
            logw[s:e] = lw
    else:
        jobs = [(spec, eps, master_seed, s, e, tilted) for s, e in ranges]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for start, v, lw in pool.map(_worker_eval, jobs):
                vals[start:start + len(v)] = v
                logw[start:start + len(v)] = lw
    return vals, logw


def estimate_probability(spec: RareEventSpec, eps: float, n: int, master_seed: int,
                         method: str = "naive", batch_size: int = DEFAULT_BATCH,
                         workers: int = 1) -> ProbabilityEstimate:
    """P(event) under the chosen flavor at noise level eps.

    naive: fraction of independent hits with a Wilson interval.  tilted:
    self-normalized importance-sampling mean of indicator * exp(log-weight)
    under the control-shifted process, with a delta-method interval.
    """
    if n < 1:
        raise ConfigurationError("sample count must be >= 1")
    if eps <= 0.0:
        raise ConfigurationError("noise level must be > 0")
    if method not in ("naive", "tilted"):
        raise ConfigurationError(f"unknown estimator {method!r}")

    tilted = method == "tilted"
    vals, logw = _collect(spec, eps, n, master_seed, tilted, batch_size, workers)
    ind = spec.indicator(vals)

    if not tilted:
        hits = int(np.sum(ind))
        lo, hi = wilson_interval(hits, n)
        return ProbabilityEstimate(p_hat=hits / n, ci_lo=lo, ci_hi=hi, n_samples=n,
                                   eps=eps, method=method, seed=master_seed,
                                   ess=float(n))

    # Weights normalized by their maximum for overflow safety; the
    # self-normalized ratio is invariant under that scaling.
    w = np.exp(logw - np.max(logw))
    s0 = float(np.sum(w))
    s1 = float(np.sum(w * ind))
    p_hat = s1 / s0
    ess = s0 * s0 / float(np.sum(w * w))
    resid = w * (ind.astype(float) - p_hat)
    var = float(np.sum(resid * resid)) / (s0 * s0)
    half = Z95 * math.sqrt(var)
    if p_hat == 0.0:
        # No weighted hits: fall back to a one-sided binomial bound at the
        # effective sample size.
        lo, hi = wilson_interval(0, max(int(ess), 1))
    else:
        lo, hi = max(p_hat - half, 0.0), min(p_hat + half, 1.0)
    return ProbabilityEstimate(p_hat=p_hat, ci_lo=lo, ci_hi=hi, n_samples=n,
                               eps=eps, method=method, seed=master_seed, ess=ess)


# ---------------------------------------------------------------------------
# Scaling studies and fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingStudy:
    """Per-eps estimates of one event on a strictly decreasing eps grid."""

    eps_grid: tuple
    estimates: tuple
    method: str
    n_samples: int

    def __post_init__(self):
        g = np.asarray(self.eps_grid)
        if len(g) < 1 or np.any(g <= 0) or np.any(np.diff(g) >= 0):
            raise ConfigurationError("eps grid must be positive and strictly decreasing")
        if len(self.estimates) != len(g):
            raise ConfigurationError("one estimate per eps point required")

    def eps_log_p(self):
        return [e.eps_log_p for e in self.estimates]


def run_scaling_study(spec: RareEventSpec, eps_grid, n: int, master_seed: int,
                      method: str = "naive", batch_size: int = DEFAULT_BATCH,
                      workers: int = 1) -> ScalingStudy:
    estimates = tuple(
        estimate_probability(spec, eps, n, master_seed, method, batch_size, workers)
        for eps in eps_grid)
    return ScalingStudy(eps_grid=tuple(float(e) for e in eps_grid),
                        estimates=estimates, method=method, n_samples=n)


@dataclass(frozen=True)
class ScalingFit:
    """Linear-in-eps extrapolation of eps log p_hat to eps -> 0."""

    eps_used: tuple
    eps_log_p: tuple
    limit: float | None
    slope: float | None
    informative: bool
    i_ref: float | None = None
    rel_gap: float | None = None


def scaling_fit(study: ScalingStudy, i_ref: float | None = None) -> ScalingFit:
    """Fit eps log p_hat = a + b eps on the nonzero-hit points and report the
    intercept a as the eps -> 0 limit; with a reference rate, also the
    relative gap |a - (-i_ref)| / i_ref."""
    pts = [(eps, y) for eps, y in zip(study.eps_grid, study.eps_log_p()) if y is not None]
    if len(pts) < 3:
        return ScalingFit(eps_used=tuple(p[0] for p in pts),
                          eps_log_p=tuple(p[1] for p in pts),
                          limit=None, slope=None, informative=False, i_ref=i_ref)
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    gap = None
    if i_ref is not None and i_ref != 0.0:
        gap = abs(intercept - (-i_ref)) / abs(i_ref)
    return ScalingFit(eps_used=tuple(x), eps_log_p=tuple(y),
                      limit=float(intercept), slope=float(slope),
                      informative=True, i_ref=i_ref, rel_gap=gap)


# ---------------------------------------------------------------------------
# Exponential-equivalence diagnostic (coupled short-time vs diffusion-only)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceRow:
    eps: float
    q_hat: float
    ci_lo: float
    ci_hi: float

    @property
    def eps_log_q(self):
        return None if self.q_hat <= 0.0 else self.eps * math.log(self.q_hat)

    @property
    def eps_log_ci(self):
        lo = None if self.ci_lo <= 0.0 else self.eps * math.log(self.ci_lo)
        hi = None if self.ci_hi <= 0.0 else self.eps * math.log(self.ci_hi)
        return lo, hi


@dataclass(frozen=True)
class EquivalenceReport:
    eta: float
    n_samples: int
    seed: int
    rows: tuple

    def strictly_decreasing_within_ci(self) -> bool:
        """True when the eps log q sequence decreases with separated intervals."""
        seq = list(self.rows)
        for a, b in zip(seq, seq[1:]):
            lo_a, _ = a.eps_log_ci
            _, hi_b = b.eps_log_ci
            if lo_a is None:  # a already at 0 probability: cannot decrease further
                return False
            if hi_b is not None and not (hi_b < lo_a):
                return False
        return True


def _coupled_gap_sup(theta0, model, cfg, eps, master_seed, start, stop):
    grid = theta0.grid
    k_theta = StepKernel(grid, model, cfg, eps, "small-time")
    k_diff = StepKernel(grid, model, cfg, eps, "diffusion-only")
    dw = sample_increments(master_seed, range(start, stop), model.m, cfg.dt, cfg.n_steps)
    B = stop - start
    th = np.broadcast_to(theta0.coeffs, (B, grid.n_modes)).copy()
    vv = th.copy()
    sup = np.zeros(B)
    for n in range(cfg.n_steps):
        th, _ = k_theta.step(th, dw[:, :, n], n)
        vv, _ = k_diff.step(vv, dw[:, :, n], n)
        gap = sobolev_norm_array(grid, th - vv, -0.5) ** 2
        sup = np.maximum(sup, gap)
    return sup


def _worker_coupled(args):
    theta0, model, cfg, eps, master_seed, start, stop = args
    return start, _coupled_gap_sup(theta0, model, cfg, eps, master_seed, start, stop)


def exponential_equivalence(theta0: SpectralField, eps_grid, eta: float, n: int,
                            master_seed: int, cfg: DynamicsConfig, model: NoiseModel,
                            batch_size: int = DEFAULT_BATCH,
                            workers: int = 1) -> EquivalenceReport:
    """Estimate q(eps) = P(sup_t ||theta_eps - v_eps||^2_{H^{-1/2}} > eta) with
    both processes driven by the same increments, and report eps log q per
    eps.  The theory sends this to -infinity; at desk scale the check is a
    decreasing trend with confidence intervals."""
    if eta < 0.0:
        raise ConfigurationError("gap threshold must be >= 0")
    g = np.asarray(eps_grid, dtype=float)
    if np.any(g <= 0) or np.any(np.diff(g) >= 0):
        raise ConfigurationError("eps grid must be positive and strictly decreasing")
    rows = []
    for eps in g:
        sup = np.empty(n)
        ranges = [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]
        if workers <= 1 or len(ranges) == 1:
            for s, e in ranges:
                sup[s:e] = _coupled_gap_sup(theta0, model, cfg, eps, master_seed, s, e)
        else:
            jobs = [(theta0, model, cfg, eps, master_seed, s, e) for s, e in ranges]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for s, part in pool.map(_worker_coupled, jobs):
                    sup[s:s + len(part)] = part
        hits = int(np.sum(sup > eta))
        lo, hi = wilson_interval(hits, n)
        rows.append(EquivalenceRow(eps=float(eps), q_hat=hits / n, ci_lo=lo, ci_hi=hi))
    return EquivalenceReport(eta=eta, n_samples=n, seed=master_seed, rows=tuple(rows))


# ---------------------------------------------------------------------------
# L^p tail study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailCell:
    eps: float
    level: float
    p_hat: float
    ci_lo: float
    ci_hi: float

    @property
    def eps_log_p(self):
        return None if self.p_hat <= 0.0 else self.eps * math.log(self.p_hat)


@dataclass(frozen=True)
class TailTable:
    p: float
    n_samples: int
    seed: int
    cells: tuple  # row-major over (eps, level)

    def monotone_in_level(self) -> bool:
        """Nested events share samples, so p_hat never increases with the level."""
        by_eps = {}
        for c in self.cells:
            by_eps.setdefault(c.eps, []).append(c)
        for cells in by_eps.values():
            cells.sort(key=lambda c: c.level)
            for a, b in zip(cells, cells[1:]):
                if b.p_hat > a.p_hat:
                    return False
        return True


def _sup_lp_power(theta0, model, cfg, p, eps, master_seed, start, stop):
    grid = theta0.grid
    kernel = StepKernel(grid, model, cfg, eps, "small-time")
    dw = sample_increments(master_seed, range(start, stop), model.m, cfg.dt, cfg.n_steps)
    B = stop - start
    th = np.broadcast_to(theta0.coeffs, (B, grid.n_modes)).copy()
    sup = lp_norm_array(grid, to_physical_array(grid, th), p) ** p
    for n in range(cfg.n_steps):
        th, _ = kernel.step(th, dw[:, :, n], n)
        lp = lp_norm_array(grid, to_physical_array(grid, th), p) ** p
        sup = np.maximum(sup, lp)
    return sup


def lp_tail_study(theta0: SpectralField, eps_grid, level_grid, p: float, n: int,
                  master_seed: int, cfg: DynamicsConfig, model: NoiseModel,
                  batch_size: int = DEFAULT_BATCH) -> TailTable:
    """Table of eps log P(sup_t ||theta_eps||_{L^p}^p > level) over the grid.

    Requires an admissible (alpha, p) pair; each eps reuses one batch of
    samples across all levels, so rows are monotone in the level by
    construction."""
    transport_exponent(cfg.alpha, p)  # admissibility gate
    g = np.asarray(eps_grid, dtype=float)
    if np.any(g <= 0):
        raise ConfigurationError("eps grid must be positive")
    levels = np.asarray(level_grid, dtype=float)
    if np.any(levels <= 0):
        raise ConfigurationError("levels must be positive")
    cells = []
    for eps in g:
        sup = np.empty(n)
        for s in range(0, n, batch_size):
            e = min(s + batch_size, n)
            sup[s:e] = _sup_lp_power(theta0, model, cfg, p, eps, master_seed, s, e)
        for level in levels:
            hits = int(np.sum(sup > level))
            lo, hi = wilson_interval(hits, n)
            cells.append(TailCell(eps=float(eps), level=float(level),
                                  p_hat=hits / n, ci_lo=lo, ci_hi=hi))
    return TailTable(p=p, n_samples=n, seed=master_seed, cells=tuple(cells))
