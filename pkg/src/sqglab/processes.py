"""The three driven processes and their Girsanov-shifted variant.

Flavors share one step rule: the drift (if any) gets the same
Heun-exponential treatment as the deterministic solver, and the noise
enters explicitly at the left point,

    theta_{n+1} = drift_step(theta_n) + G(theta_n)(sqrt(eps) dW_n + v_n dt),

so a run with eps = 0 and no control reproduces the deterministic flow to
rounding, and the discrete change of measure induced by the control shift
is exact: reweighting a shifted path by

    exp(-(1/sqrt(eps)) sum v_n . dW_n - (1/(2 eps)) sum |v_n|^2 dt)

makes expectations over shifted paths unbiased for the unshifted chain.

* ``small-noise``:     full drift, noise scaled by sqrt(eps).
* ``small-time``:      drift scaled by eps (short-time rescaling), noise sqrt(eps).
* ``diffusion-only``:  no drift at all.

``StepKernel`` exposes the batched loop used by the Monte Carlo layer; the
``simulate_*`` wrappers run one path and record a full Trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsConfig, Trajectory, _check_finite, _Recorder
from .errors import ConfigurationError
from .noise import Control, NoiseModel, NoisePath, apply_g_array
from .spectral import SpectralField, to_physical_array, transport_array

FLAVORS = ("small-noise", "small-time", "diffusion-only")


class StepKernel:
    """Precomputed stepping data for one (flavor, eps, config) triple.

    ``run`` advances a batch of states through all steps, invoking an
    optional observer after every push (including the initial state) and
    returning the terminal coefficients plus per-sample Girsanov
    log-weights (zero when no control shift is active).
    """

    def __init__(self, grid, model: NoiseModel, cfg: DynamicsConfig, eps: float,
                 flavor: str, control: Control | None = None):
        if flavor not in FLAVORS:
            raise ConfigurationError(f"unknown process flavor {flavor!r}")
        if eps < 0.0:
            raise ConfigurationError(f"noise intensity must be >= 0, got {eps}")
        if model.grid != grid:
            raise ConfigurationError("noise model grid does not match the state grid")
        if flavor == "small-time" and cfg.drift_scale != 1.0:
            raise ConfigurationError(
                "short-time runs rescale the drift internally; set drift_scale = 1")
        self.grid = grid
        self.model = model
        self.cfg = cfg
        self.eps = float(eps)
        self.flavor = flavor
        self.n_steps = cfg.n_steps
        self.dt = cfg.dt

        if flavor == "small-noise":
            self.scale = cfg.drift_scale
        elif flavor == "small-time":
            self.scale = eps
        else:
            self.scale = 0.0
        lam = cfg.kappa * grid.kabs ** (2.0 * cfg.alpha)
        self.propagator = np.exp(-self.scale * lam * self.dt)
        self.sqrt_eps = np.sqrt(self.eps)

        self.v_steps = None
        if control is not None:
            if control.m != model.m:
                raise ConfigurationError("control dimension does not match the noise model")
            if control.horizon < cfg.t_final - 1e-9:
                raise ConfigurationError("control horizon does not span the run horizon")
            if eps <= 0.0:
                raise ConfigurationError("a Girsanov shift requires eps > 0")
            mid = (np.arange(self.n_steps) + 0.5) * self.dt
            self.v_steps = control.step_values(mid)

    def _drift(self, theta):
        """Heun-exponential drift step on (..., n_modes) coefficients."""
        if self.scale == 0.0:
            return theta
        E, dt, s, grid = self.propagator, self.dt, self.scale, self.grid
        k1 = -s * transport_array(grid, theta)
        predictor = E * (theta + dt * k1)
        k2 = -s * transport_array(grid, predictor)
        return E * (theta + 0.5 * dt * k1) + 0.5 * dt * k2

    def step(self, theta: np.ndarray, dw: np.ndarray, n: int):
        """One step for a batch: theta (B, n_modes), dw (B, m) ~ N(0, dt).

        Returns (theta_next, log_weight_increment (B,)).
        """
        noisy = self.eps > 0.0 or self.v_steps is not None
        if not noisy:
            return self._drift(theta), 0.0
        logw_inc = 0.0
        y = self.sqrt_eps * dw
        if self.v_steps is not None:
            vn = self.v_steps[:, n]
            y = y + vn * self.dt
            logw_inc = -(dw @ vn) / self.sqrt_eps \
                - float(vn @ vn) * self.dt / (2.0 * self.eps)
        kick = apply_g_array(self.model, theta, y)
        return self._drift(theta) + kick, logw_inc

    def run(self, theta0: np.ndarray, increments: np.ndarray, observer=None):
        """Advance a batch.

        theta0: (n,) or (B, n) coefficients; increments: (B, m, n_steps).
        Returns (terminal (B, n), log_weights (B,)).
        """
        B = increments.shape[0]
        if increments.shape[1] != self.model.m or increments.shape[2] != self.n_steps:
            raise ConfigurationError(
                f"increment array {increments.shape} does not match "
                f"(batch, {self.model.m}, {self.n_steps})")
        theta = np.broadcast_to(theta0, (B, theta0.shape[-1])).copy()
        logw = np.zeros(B)
        if observer is not None:
            observer(0, 0.0, theta)

        for n in range(self.n_steps):
            theta, logw_inc = self.step(theta, increments[:, :, n], n)
            logw += logw_inc
            t = (n + 1) * self.dt
            _check_finite(theta, n + 1, t, self.grid)
            if observer is not None:
                observer(n + 1, t, theta)
        return theta, logw


def _single_run(theta0: SpectralField, eps: float, model: NoiseModel,
                cfg: DynamicsConfig, path: NoisePath, flavor: str,
                control: Control | None = None):
    grid = theta0.grid
    if grid.resolution != cfg.resolution:
        raise ConfigurationError("initial condition grid does not match the config resolution")
    if path.m != model.m:
        raise ConfigurationError("noise path dimension does not match the model")
    if path.n_steps != cfg.n_steps:
        raise ConfigurationError(
            f"noise path holds {path.n_steps} steps, run needs {cfg.n_steps}")
    if abs(path.dt - cfg.dt) > 1e-12:
        raise ConfigurationError("noise path step size does not match the config")

    kernel = StepKernel(grid, model, cfg, eps, flavor, control)
    rec = _Recorder(grid, cfg, cfg.n_steps)

    def observer(step, t, theta_batch):
        rec.push(t, theta_batch[0])

    _, logw = kernel.run(theta0.coeffs, path.increments[None, :, :], observer)
    return rec.build(), float(logw[0])


def simulate_small_noise(theta0: SpectralField, eps: float, model: NoiseModel,
                         cfg: DynamicsConfig, path: NoisePath) -> Trajectory:
    """Full drift, noise amplitude sqrt(eps); eps = 0 is the deterministic flow."""
    tr, _ = _single_run(theta0, eps, model, cfg, path, "small-noise")
    return tr


def simulate_small_time(theta0: SpectralField, eps: float, model: NoiseModel,
                        cfg: DynamicsConfig, path: NoisePath) -> Trajectory:
    """Short-time rescaling: drift scaled by eps, noise by sqrt(eps)."""
    tr, _ = _single_run(theta0, eps, model, cfg, path, "small-time")
    return tr


def simulate_diffusion_only(theta0: SpectralField, eps: float, model: NoiseModel,
                            cfg: DynamicsConfig, path: NoisePath) -> Trajectory:
    """No drift: theta(t) = theta0 + sqrt(eps) int G(theta) dW."""
    tr, _ = _single_run(theta0, eps, model, cfg, path, "diffusion-only")
    return tr


def simulate_tilted(theta0: SpectralField, eps: float, model: NoiseModel,
                    v: Control, cfg: DynamicsConfig, path: NoisePath,
                    flavor: str = "small-noise"):
    """Control-shifted process plus its Girsanov log-weight.

    The returned weight makes shifted-path expectations estimate the
    unshifted law: E[f(theta) ] = E[ f(shifted) * exp(log_weight) ].
    """
    if v.squared_l2() == 0.0:
        tr, _ = _single_run(theta0, eps, model, cfg, path, flavor)
        return tr, 0.0
    return _single_run(theta0, eps, model, cfg, path, flavor, control=v)
