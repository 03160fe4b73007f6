"""Configuration, persistence, and experiment orchestration.

File contracts (all little-endian, all text UTF-8):

* Snapshot ``.sqgf``: magic ``SQGF`` | version u32 | band limit u32 |
  alpha f64 | kappa f64 | coefficient count u32 | coefficients f64[] in
  canonical grid order.  Loading is bit-exact; corrupt files are rejected
  with byte offsets.
* Results table ``results.csv``: fixed header
  ``run_id,flavor,epsilon,M_or_eta,method,n_samples,p_hat,ci_lo,ci_hi,
  eps_log_p,seed,wallclock_s``; floats printed with 17 significant digits
  (round-trip exact); a zero-hit cell prints ``-inf`` in the
  ``eps_log_p`` column.  The ``wallclock_s`` column is pinned to 0 so that
  (config, seed) determines every output byte; timing goes to the log
  stream instead.
* Trajectory series ``trajectory.csv``: header
  ``t,l2,h_alpha,h_delta,h_delta_alpha,h_minus_half,lp``.
* Delayed-scheme study ``convergence.csv``: header
  ``delta_n,sup_l2_distance``.
* ``manifest.json``: canonical (sorted, fixed-separator) JSON holding the
  effective config, its SHA-256 hash, and the master seed.

Configs are JSON documents; unknown keys are hard errors and every
validation problem is reported, not just the first.
"""

from __future__ import annotations

import hashlib
import json
import struct
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .action import ActionProblem, ObservableSpec, TargetSpec, minimize_action
from .dynamics import (
    DynamicsConfig,
    Trajectory,
    solve_delayed_mollified,
    solve_deterministic,
    solve_skeleton,
    transport_exponent,
)
from .errors import BlowUpError, ConfigurationError, FormatError
from .montecarlo import (
    estimate_probability,
    exponential_equivalence,
    lp_tail_study,
    run_scaling_study,
    scaling_fit,
)
from .noise import Control, GFunction, NoiseModel, NoisePath, validate_hypotheses
from .processes import simulate_diffusion_only, simulate_small_noise, simulate_small_time
from .spectral import SpectralField, WaveGrid, make_grid, random_field, unit_mode, zero_field

RESULTS_HEADER = ("run_id", "flavor", "epsilon", "M_or_eta", "method", "n_samples",
                  "p_hat", "ci_lo", "ci_hi", "eps_log_p", "seed", "wallclock_s")
TRAJECTORY_HEADER = ("t", "l2", "h_alpha", "h_delta", "h_delta_alpha", "h_minus_half", "lp")
CONVERGENCE_HEADER = ("delta_n", "sup_l2_distance")

COMMANDS = ("simulate", "skeleton", "delayed", "action", "mc", "equiv", "lptail", "validate")

SNAPSHOT_MAGIC = b"SQGF"
SNAPSHOT_VERSION = 1


def fmt17(x) -> str:
    """17-significant-digit decimal text; round-trips any 64-bit float."""
    if x is None:
        return "-inf"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def save_snapshot(f: SpectralField, path, alpha: float = 0.0, kappa: float = 0.0) -> None:
    coeffs = np.ascontiguousarray(f.coeffs, dtype="<f8")
    blob = (SNAPSHOT_MAGIC
            + struct.pack("<I", SNAPSHOT_VERSION)
            + struct.pack("<I", f.grid.resolution)
            + struct.pack("<d", float(alpha))
            + struct.pack("<d", float(kappa))
            + struct.pack("<I", f.grid.n_modes)
            + coeffs.tobytes())
    Path(path).write_bytes(blob)


def load_snapshot(path) -> SpectralField:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (expected {SNAPSHOT_MAGIC!r})")
    if len(raw) < 32:
        raise FormatError(f"{path}: truncated header, {len(raw)} bytes < 32")
    version, = struct.unpack_from("<I", raw, 4)
    if version != SNAPSHOT_VERSION:
        raise FormatError(
            f"{path}: unsupported version {version} in the version field at byte 4")
    resolution, = struct.unpack_from("<I", raw, 8)
    count, = struct.unpack_from("<I", raw, 28)
    expected = 32 + 8 * count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload has {len(raw)} bytes, expected {expected} "
            f"(truncated or trailing garbage after byte {min(len(raw), expected)})")
    grid = make_grid(int(resolution))
    if count != grid.n_modes:
        raise FormatError(
            f"{path}: coefficient count {count} at byte 28 does not match "
            f"band limit {resolution} ({grid.n_modes} modes)")
    coeffs = np.frombuffer(raw, dtype="<f8", count=count, offset=32).astype(np.float64)
    return SpectralField(grid, coeffs)


def snapshot_header(path) -> dict:
    raw = Path(path).read_bytes()[:32]
    if raw[:4] != SNAPSHOT_MAGIC or len(raw) < 32:
        raise FormatError(f"{path}: not a snapshot file")
    version, resolution = struct.unpack_from("<II", raw, 4)
    alpha, kappa = struct.unpack_from("<dd", raw, 12)
    count, = struct.unpack_from("<I", raw, 28)
    return {"version": version, "resolution": resolution, "alpha": alpha,
            "kappa": kappa, "count": count}


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows) -> None:
    path = Path(path)
    header_line = ",".join(header)
    if path.exists():
        with path.open("r", encoding="utf-8") as fh:
            first = fh.readline().rstrip("\n")
        if first != header_line:
            raise FormatError(
                f"{path}: existing header {first!r} does not match the "
                f"contract {header_line!r}")
        mode = "a"
    else:
        mode = "w"
    with path.open(mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write(header_line + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def write_table(rows, path) -> None:
    """Append result rows (dicts keyed by the fixed header) to a CSV file."""
    encoded = []
    for row in rows:
        extra = set(row) - set(RESULTS_HEADER)
        missing = set(RESULTS_HEADER) - set(row)
        if extra or missing:
            raise FormatError(
                f"row schema drift: extra={sorted(extra)}, missing={sorted(missing)}")
        encoded.append([
            str(row["run_id"]), str(row["flavor"]), fmt17(row["epsilon"]),
            fmt17(row["M_or_eta"]), str(row["method"]), str(int(row["n_samples"])),
            fmt17(row["p_hat"]), fmt17(row["ci_lo"]), fmt17(row["ci_hi"]),
            fmt17(row["eps_log_p"]), str(int(row["seed"])), fmt17(row["wallclock_s"]),
        ])
    _write_csv(path, RESULTS_HEADER, encoded)


def read_table(path) -> list[dict]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != ",".join(RESULTS_HEADER):
        raise FormatError(f"{path}: missing or wrong results header")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        out.append(dict(zip(RESULTS_HEADER, parts)))
    return out


def write_trajectory(tr: Trajectory, path) -> None:
    rows = []
    for i, t in enumerate(tr.times):
        rows.append([fmt17(t)] + [fmt17(tr.norms[k][i]) for k in
                                  ("l2", "h_alpha", "h_delta", "h_delta_alpha",
                                   "h_minus_half", "lp")])
    _write_csv(path, TRAJECTORY_HEADER, rows)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

class ConfigError(ConfigurationError):
    """Carries the full list of validation problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


_TOP_KEYS = {
    "run_id", "command", "master_seed", "out_dir", "workers", "snapshot_stride",
    "dynamics", "noise", "initial", "event", "action", "equiv", "lptail",
    "delayed", "control", "eps", "eps_grid", "n_samples", "method", "tilt",
    "batch_size",
}
_DYNAMICS_KEYS = {"alpha", "kappa", "resolution", "dt", "t_final", "drift_scale",
                  "scheme", "record_delta", "record_p"}
_NOISE_KEYS = {"g", "profiles", "declared_bound"}
_G_KEYS = {"kind", "value", "x", "y", "deriv_bound"}
_PROFILE_KEYS = {"kind", "k", "trig", "amplitude", "value"}
_INITIAL_KEYS = {"kind", "terms", "seed", "decay", "norm", "path", "k", "trig", "amplitude"}
_OBS_KEYS = {"kind", "k", "trig", "p"}
_EVENT_KEYS = {"flavor", "observable", "threshold", "direction", "at"}
_ACTION_KEYS = {"flavor", "observable", "target", "penalties", "n_cells",
                "grad_tol", "max_iterations"}
_TARGET_KEYS = {"kind", "eta", "radius"}
_EQUIV_KEYS = {"eta"}
_LPTAIL_KEYS = {"p", "level_factors", "levels"}
_DELAYED_KEYS = {"delta_sequence"}
_CONTROL_KEYS = {"kind", "values", "n_cells"}
_TILT_KEYS = {"source", "scale"}


def _check_keys(section: dict, allowed: set, where: str, errors: list):
    for key in section:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r}")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description; ``raw`` is the effective document."""

    run_id: str
    command: str
    master_seed: int
    out_dir: str
    workers: int
    snapshot_stride: int
    raw: dict
    warnings: tuple = ()

    def dynamics(self) -> DynamicsConfig:
        d = self.raw["dynamics"]
        return DynamicsConfig(alpha=d["alpha"], kappa=d["kappa"],
                              resolution=d["resolution"], dt=d["dt"],
                              t_final=d["t_final"], drift_scale=d["drift_scale"],
                              scheme=d["scheme"], record_delta=d["record_delta"],
                              record_p=d["record_p"],
                              snapshot_stride=self.snapshot_stride)

    def grid(self) -> WaveGrid:
        return make_grid(self.raw["dynamics"]["resolution"])

    def noise_model(self) -> NoiseModel:
        grid = self.grid()
        spec = self.raw["noise"]
        gspec = spec["g"]
        if gspec["kind"] == "table":
            g = GFunction("table", table_x=np.asarray(gspec["x"]),
                          table_y=np.asarray(gspec["y"]),
                          deriv_bound=gspec["deriv_bound"])
        else:
            g = GFunction(gspec["kind"], value=gspec.get("value", 1.0))
        profiles = []
        for prof in spec["profiles"]:
            if prof["kind"] == "constant":
                profiles.append(float(prof["value"]))
            else:
                profiles.append(float(prof["amplitude"])
                                * unit_mode(grid, tuple(prof["k"]), prof["trig"]))
        return NoiseModel(grid, profiles, g, declared_bound=spec.get("declared_bound"))

    def initial_state(self) -> SpectralField:
        grid = self.grid()
        spec = self.raw["initial"]
        kind = spec["kind"]
        if kind == "zero":
            return zero_field(grid)
        if kind == "modes":
            out = zero_field(grid)
            for term in spec["terms"]:
                out = out + float(term["amplitude"]) * unit_mode(
                    grid, tuple(term["k"]), term["trig"])
            return out
        if kind == "random":
            rng = np.random.default_rng(spec["seed"])
            return random_field(grid, rng, decay=spec.get("decay", 0.0),
                                norm=spec.get("norm"))
        if kind == "snapshot":
            f = load_snapshot(spec["path"])
            if f.grid != grid:
                raise ConfigurationError("snapshot band limit does not match the config")
            return f
        raise ConfigurationError(f"unknown initial state kind {kind!r}")

    def observable(self, section: dict) -> ObservableSpec:
        kind = section["kind"]
        if kind == "mode":
            return ObservableSpec("mode", mode_k=tuple(section["k"]),
                                  mode_trig=section.get("trig", "sin"))
        return ObservableSpec(kind, p=section.get("p", 8.0))


def _parse_observable(section, where, errors):
    if not isinstance(section, dict):
        errors.append(f"{where}: must be an object")
        return {"kind": "l2"}
    _check_keys(section, _OBS_KEYS, where, errors)
    kind = section.get("kind")
    if kind not in ("mode", "l2", "hminus_half", "lp_p"):
        errors.append(f"{where}.kind: unknown observable {kind!r}")
    out = {"kind": kind}
    if kind == "mode":
        k = section.get("k")
        if (not isinstance(k, (list, tuple)) or len(k) != 2
                or not all(isinstance(x, int) for x in k)):
            errors.append(f"{where}.k: expected an integer pair")
            k = [1, 0]
        out["k"] = list(k)
        trig = section.get("trig", "sin")
        if trig not in ("sin", "cos"):
            errors.append(f"{where}.trig: expected 'sin' or 'cos'")
            trig = "sin"
        out["trig"] = trig
    if kind == "lp_p":
        out["p"] = float(section.get("p", 8.0))
    return out


def _positive_number(value, where, errors, allow_zero=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok or (value <= 0 and not (allow_zero and value == 0)):
        errors.append(f"{where}: expected a positive number, got {value!r}")
        return 1.0
    return float(value)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a JSON config; raises ConfigError listing every
    problem found.  ``overrides`` replaces top-level scalars (CLI flags)."""
    errors: list[str] = []
    warnings: list[str] = []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be an object"])
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value

    _check_keys(doc, _TOP_KEYS, "top level", errors)

    command = doc.get("command")
    if command not in COMMANDS:
        errors.append(f"command: expected one of {COMMANDS}, got {command!r}")

    run_id = doc.get("run_id", "run")
    if not isinstance(run_id, str) or not run_id:
        errors.append("run_id: expected a nonempty string")
        run_id = "run"

    master_seed = doc.get("master_seed", 0)
    if not isinstance(master_seed, int) or isinstance(master_seed, bool) or master_seed < 0:
        errors.append(f"master_seed: expected a nonnegative integer, got {master_seed!r}")
        master_seed = 0

    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        errors.append(f"workers: expected a positive integer, got {workers!r}")
        workers = 1

    stride = doc.get("snapshot_stride", 1)
    if not isinstance(stride, int) or stride < 1:
        errors.append(f"snapshot_stride: expected a positive integer, got {stride!r}")
        stride = 1

    out_dir = doc.get("out_dir", "runs/" + run_id)
    if not isinstance(out_dir, str) or not out_dir:
        errors.append("out_dir: expected a nonempty string")
        out_dir = "runs/" + run_id

    # dynamics ---------------------------------------------------------
    dyn = doc.get("dynamics")
    if not isinstance(dyn, dict):
        errors.append("dynamics: section is required")
        dyn = {}
    dyn = dict(dyn)
    _check_keys(dyn, _DYNAMICS_KEYS, "dynamics", errors)
    alpha = _positive_number(dyn.get("alpha", 0.75), "dynamics.alpha", errors)
    kappa = _positive_number(dyn.get("kappa", 1.0), "dynamics.kappa", errors)
    resolution = dyn.get("resolution", 8)
    if not isinstance(resolution, int) or resolution < 1:
        errors.append(f"dynamics.resolution: expected a positive integer, got {resolution!r}")
        resolution = 8
    dt = _positive_number(dyn.get("dt", 0.01), "dynamics.dt", errors)
    t_final = _positive_number(dyn.get("t_final", 1.0), "dynamics.t_final", errors)
    drift_scale = dyn.get("drift_scale", 1.0)
    if not isinstance(drift_scale, (int, float)) or drift_scale < 0:
        errors.append("dynamics.drift_scale: expected a number >= 0")
        drift_scale = 1.0
    scheme = dyn.get("scheme", "heun-exponential")
    record_delta = dyn.get("record_delta", 1.0)
    record_p = _positive_number(dyn.get("record_p", 8.0), "dynamics.record_p", errors)
    if alpha <= 0.5:
        warnings.append(
            f"dynamics.alpha = {alpha} is at or below 1/2: outside the subcritical "
            "range, the solver runs but guarantees nothing")
    elif record_p >= 1.0 and 1.0 / record_p >= alpha - 0.5:
        errors.append(
            f"dynamics.record_p = {record_p} with alpha = {alpha} violates the "
            "integrability requirement 1/p < alpha - 1/2")

    # noise ------------------------------------------------------------
    noise = doc.get("noise")
    if not isinstance(noise, dict):
        errors.append("noise: section is required")
        noise = {}
    noise = dict(noise)
    _check_keys(noise, _NOISE_KEYS, "noise", errors)
    g = noise.get("g", {"kind": "constant", "value": 1.0})
    if isinstance(g, dict):
        _check_keys(g, _G_KEYS, "noise.g", errors)
        if g.get("kind") not in ("constant", "identity", "table"):
            errors.append(f"noise.g.kind: unknown kind {g.get('kind')!r}")
        if g.get("kind") == "table":
            if not (isinstance(g.get("x"), list) and isinstance(g.get("y"), list)):
                errors.append("noise.g: table kind requires x and y arrays")
            if "deriv_bound" not in g:
                errors.append("noise.g: table kind requires deriv_bound")
    else:
        errors.append("noise.g: must be an object")
        g = {"kind": "constant", "value": 1.0}
    profiles = noise.get("profiles", [])
    if not isinstance(profiles, list) or not profiles:
        errors.append("noise.profiles: expected a nonempty list")
        profiles = [{"kind": "constant", "value": 1.0}]
    parsed_profiles = []
    for i, prof in enumerate(profiles):
        where = f"noise.profiles[{i}]"
        if not isinstance(prof, dict):
            errors.append(f"{where}: must be an object")
            continue
        _check_keys(prof, _PROFILE_KEYS, where, errors)
        kind = prof.get("kind")
        if kind == "constant":
            if "value" not in prof:
                errors.append(f"{where}: constant profile needs a value")
            parsed_profiles.append({"kind": "constant", "value": float(prof.get("value", 1.0))})
        elif kind == "mode":
            k = prof.get("k")
            if not isinstance(k, (list, tuple)) or len(k) != 2:
                errors.append(f"{where}.k: expected an integer pair")
                k = [1, 0]
            trig = prof.get("trig", "sin")
            if trig not in ("sin", "cos"):
                errors.append(f"{where}.trig: expected 'sin' or 'cos'")
                trig = "sin"
            parsed_profiles.append({"kind": "mode", "k": list(k), "trig": trig,
                                    "amplitude": float(prof.get("amplitude", 1.0))})
        else:
            errors.append(f"{where}.kind: expected 'constant' or 'mode', got {kind!r}")

    # initial ------------------------------------------------------------
    initial = doc.get("initial", {"kind": "zero"})
    if not isinstance(initial, dict):
        errors.append("initial: must be an object")
        initial = {"kind": "zero"}
    initial = dict(initial)
    _check_keys(initial, _INITIAL_KEYS, "initial", errors)
    ikind = initial.get("kind", "zero")
    if ikind not in ("zero", "modes", "random", "snapshot"):
        errors.append(f"initial.kind: unknown kind {ikind!r}")
    if ikind == "modes":
        terms = initial.get("terms")
        if not isinstance(terms, list) or not terms:
            errors.append("initial.terms: expected a nonempty list")
    if ikind == "random" and not isinstance(initial.get("seed"), int):
        errors.append("initial.seed: random initial state needs an integer seed")
    if ikind == "snapshot" and not isinstance(initial.get("path"), str):
        errors.append("initial.path: snapshot initial state needs a path")

    # per-command sections ---------------------------------------------
    effective = {
        "run_id": run_id,
        "command": command,
        "master_seed": master_seed,
        "out_dir": out_dir,
        "workers": workers,
        "snapshot_stride": stride,
        "dynamics": {"alpha": alpha, "kappa": kappa, "resolution": resolution,
                     "dt": dt, "t_final": t_final, "drift_scale": float(drift_scale),
                     "scheme": scheme, "record_delta": float(record_delta),
                     "record_p": record_p},
        "noise": {"g": g, "profiles": parsed_profiles,
                  "declared_bound": noise.get("declared_bound")},
        "initial": initial,
    }

    def need(name):
        if name not in doc:
            errors.append(f"{name}: required by the {command!r} command")
            return None
        return doc[name]

    if command in ("mc", "equiv", "lptail"):
        grid_vals = need("eps_grid")
        if isinstance(grid_vals, list) and grid_vals:
            vals = [
                _positive_number(v, f"eps_grid[{i}]", errors)
                for i, v in enumerate(grid_vals)
            ]
            if any(b >= a for a, b in zip(vals, vals[1:])):
                errors.append("eps_grid: must be strictly decreasing")
            effective["eps_grid"] = vals
        else:
            errors.append("eps_grid: expected a nonempty list")
            effective["eps_grid"] = [0.1]
        n_samples = need("n_samples")
        if not isinstance(n_samples, int) or n_samples < 1:
            errors.append(f"n_samples: expected a positive integer, got {n_samples!r}")
            n_samples = 1
        effective["n_samples"] = n_samples
        effective["batch_size"] = doc.get("batch_size", 4096)

    if command == "mc":
        event = need("event")
        if isinstance(event, dict):
            event = dict(event)
            _check_keys(event, _EVENT_KEYS, "event", errors)
            flavor = event.get("flavor", "small-noise")
            if flavor not in ("small-noise", "small-time", "diffusion-only"):
                errors.append(f"event.flavor: unknown flavor {flavor!r}")
            obs = _parse_observable(event.get("observable", {}), "event.observable", errors)
            threshold = event.get("threshold")
            if not isinstance(threshold, (int, float)):
                errors.append("event.threshold: expected a number")
                threshold = 0.0
            direction = event.get("direction", ">=")
            if direction not in (">=", "<="):
                errors.append("event.direction: expected '>=' or '<='")
                direction = ">="
            at = event.get("at", "terminal")
            if at not in ("terminal", "sup"):
                errors.append("event.at: expected 'terminal' or 'sup'")
                at = "terminal"
            effective["event"] = {"flavor": flavor, "observable": obs,
                                  "threshold": float(threshold),
                                  "direction": direction, "at": at}
        else:
            errors.append("event: section is required for mc runs")
        method = doc.get("method", "naive")
        if method not in ("naive", "tilted"):
            errors.append(f"method: expected 'naive' or 'tilted', got {method!r}")
            method = "naive"
        effective["method"] = method
        if method == "tilted":
            tilt = doc.get("tilt", {"source": "minimize-action", "scale": 1.0})
            if isinstance(tilt, dict):
                _check_keys(tilt, _TILT_KEYS, "tilt", errors)
                if tilt.get("source", "minimize-action") != "minimize-action":
                    errors.append("tilt.source: only 'minimize-action' is supported")
                effective["tilt"] = {"source": "minimize-action",
                                     "scale": float(tilt.get("scale", 1.0))}
            else:
                errors.append("tilt: must be an object")

    if command == "equiv":
        sec = need("equiv")
        if isinstance(sec, dict):
            _check_keys(sec, _EQUIV_KEYS, "equiv", errors)
            eta = sec.get("eta")
            if not isinstance(eta, (int, float)) or eta < 0:
                errors.append("equiv.eta: expected a number >= 0")
                eta = 0.0
            effective["equiv"] = {"eta": float(eta)}
        elif sec is not None:
            errors.append("equiv: must be an object")

    if command == "lptail":
        sec = need("lptail")
        if isinstance(sec, dict):
            _check_keys(sec, _LPTAIL_KEYS, "lptail", errors)
            p = _positive_number(sec.get("p", record_p), "lptail.p", errors)
            if alpha > 0.5 and 1.0 / p >= alpha - 0.5:
                errors.append(
                    f"lptail.p = {p} with alpha = {alpha} violates the "
                    "integrability requirement 1/p < alpha - 1/2")
            entry = {}
            if "levels" in sec:
                entry["levels"] = [float(v) for v in sec["levels"]]
            else:
                entry["level_factors"] = [float(v) for v in
                                          sec.get("level_factors", [2.0, 4.0, 8.0])]
            entry["p"] = p
            effective["lptail"] = entry
        elif sec is not None:
            errors.append("lptail: must be an object")

    if command == "action":
        sec = need("action")
        if isinstance(sec, dict):
            sec = dict(sec)
            _check_keys(sec, _ACTION_KEYS, "action", errors)
            flavor = sec.get("flavor", "small-noise")
            if flavor not in ("small-noise", "small-time"):
                errors.append(f"action.flavor: unknown flavor {flavor!r}")
            obs = _parse_observable(sec.get("observable", {}), "action.observable", errors)
            target = sec.get("target")
            if isinstance(target, dict):
                _check_keys(target, _TARGET_KEYS, "action.target", errors)
                tkind = target.get("kind", "exceed")
                if tkind not in ("exceed", "ball"):
                    errors.append(f"action.target.kind: unknown kind {tkind!r}")
                teta = target.get("eta")
                if not isinstance(teta, (int, float)):
                    errors.append("action.target.eta: expected a number")
                    teta = 0.0
                target_out = {"kind": tkind, "eta": float(teta),
                              "radius": float(target.get("radius", 0.0))}
            else:
                errors.append("action.target: section is required")
                target_out = {"kind": "exceed", "eta": 0.0, "radius": 0.0}
            penalties = sec.get("penalties", [1e1, 1e2, 1e3, 1e4])
            effective["action"] = {
                "flavor": flavor, "observable": obs, "target": target_out,
                "penalties": [float(x) for x in penalties],
                "n_cells": sec.get("n_cells"),
                "grad_tol": float(sec.get("grad_tol", 1e-8)),
                "max_iterations": int(sec.get("max_iterations", 500)),
            }

    if command == "skeleton":
        sec = need("control")
        if isinstance(sec, dict):
            _check_keys(sec, _CONTROL_KEYS, "control", errors)
            ckind = sec.get("kind", "zero")
            if ckind not in ("zero", "constant"):
                errors.append(f"control.kind: expected 'zero' or 'constant', got {ckind!r}")
                ckind = "zero"
            entry = {"kind": ckind, "n_cells": int(sec.get("n_cells", 16))}
            if ckind == "constant":
                vals = sec.get("values")
                if not isinstance(vals, list) or not vals:
                    errors.append("control.values: expected a nonempty list")
                    vals = [0.0]
                entry["values"] = [float(v) for v in vals]
            effective["control"] = entry
        elif sec is not None:
            errors.append("control: must be an object")

    if command == "delayed":
        sec = need("delayed")
        if isinstance(sec, dict):
            _check_keys(sec, _DELAYED_KEYS, "delayed", errors)
            seq = sec.get("delta_sequence")
            if not isinstance(seq, list) or not seq:
                errors.append("delayed.delta_sequence: expected a nonempty list")
                seq = [0.1]
            effective["delayed"] = {"delta_sequence": [float(v) for v in seq]}
        elif sec is not None:
            errors.append("delayed: must be an object")

    if command == "simulate":
        eps = doc.get("eps")
        if eps is not None and (not isinstance(eps, (int, float)) or eps < 0):
            errors.append("eps: expected a number >= 0")
            eps = None
        effective["eps"] = None if eps is None else float(eps)
        flavor = doc.get("event", {}).get("flavor", "small-noise") \
            if isinstance(doc.get("event"), dict) else "small-noise"
        effective["flavor"] = flavor

    if errors:
        raise ConfigError(errors)

    return RunConfig(run_id=run_id, command=command, master_seed=master_seed,
                     out_dir=out_dir, workers=workers, snapshot_stride=stride,
                     raw=effective, warnings=tuple(warnings))


def config_hash(effective: dict) -> str:
    blob = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def _result_row(cfg: RunConfig, flavor, epsilon, m_or_eta, method, n_samples,
                p_hat, ci_lo, ci_hi, eps_log_p):
    return {
        "run_id": cfg.run_id, "flavor": flavor, "epsilon": epsilon,
        "M_or_eta": m_or_eta, "method": method, "n_samples": n_samples,
        "p_hat": p_hat, "ci_lo": ci_lo, "ci_hi": ci_hi, "eps_log_p": eps_log_p,
        "seed": cfg.master_seed, "wallclock_s": 0.0,
    }


def _write_manifest(cfg: RunConfig, out: Path, extra: dict | None = None) -> None:
    manifest = {
        "run_id": cfg.run_id,
        "command": cfg.command,
        "master_seed": cfg.master_seed,
        "config_hash": config_hash(cfg.raw),
        "effective_config": cfg.raw,
        "package_version": __version__,
        "warnings": list(cfg.warnings),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _validation_report(cfg: RunConfig) -> dict:
    d = cfg.raw["dynamics"]
    model = cfg.noise_model()
    report = validate_hypotheses(model, d["alpha"], d["record_p"], d["record_delta"])
    return {
        "subcritical": report.subcritical,
        "integrability_ok": report.integrability_ok,
        "smoothing_order": report.smoothing_order,
        "delta_exceeds_gap": report.delta_exceeds_gap,
        "delta_small_time_ok": report.delta_small_time_ok,
        "profile_bound_ok": report.profile_bound_ok,
        "sum_sq_peak": report.sum_sq_peak,
        "probes": report.probes,
        "warnings": list(cfg.warnings),
    }


def _build_tilt(cfg: RunConfig, event, dyn, model, theta0):
    problem = ActionProblem(
        theta0=theta0, model=model, cfg=dyn,
        observable=cfg.observable(event["observable"]),
        target=TargetSpec("exceed" if event["direction"] == ">=" else "ball",
                          event["threshold"]),
        flavor="small-time" if event["flavor"] == "diffusion-only" else event["flavor"],
    )
    estimate = minimize_action(problem)
    return estimate.control


def run_experiment(cfg: RunConfig) -> int:
    """Dispatch one command; writes tables, snapshots, and a manifest.

    Returns a process exit status; solver blow-ups and configuration
    problems produce ``error.json`` plus a nonzero status instead of a
    traceback.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.monotonic()
    try:
        _dispatch(cfg, out)
    except (BlowUpError, ConfigurationError, FormatError) as exc:
        record = exc.record() if isinstance(exc, BlowUpError) else {
            "error": type(exc).__name__, "message": str(exc)}
        (out / "error.json").write_text(
            json.dumps(record, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"# wallclock {time.monotonic() - t_start:.3f} s", file=sys.stderr)
    return 0


def _dispatch(cfg: RunConfig, out: Path) -> None:
    dyn = cfg.dynamics()
    model = cfg.noise_model()
    theta0 = cfg.initial_state()
    grid = theta0.grid
    d = cfg.raw["dynamics"]

    if cfg.command == "validate":
        report = _validation_report(cfg)
        (out / "validation.json").write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        _write_manifest(cfg, out)
        return

    if cfg.command == "simulate":
        eps = cfg.raw.get("eps")
        if eps is None or eps == 0.0:
            tr = solve_deterministic(theta0, dyn)
        else:
            path = NoisePath.generate(cfg.master_seed, model.m, dyn.dt, dyn.n_steps)
            sim = {"small-noise": simulate_small_noise,
                   "small-time": simulate_small_time,
                   "diffusion-only": simulate_diffusion_only}[cfg.raw["flavor"]]
            tr = sim(theta0, eps, model, dyn, path)
        write_trajectory(tr, out / "trajectory.csv")
        for t, snap in zip(tr.snap_times, tr.snapshots):
            save_snapshot(snap, out / f"snapshot_{t:012.6f}.sqgf",
                          alpha=d["alpha"], kappa=d["kappa"])
        _write_manifest(cfg, out)
        return

    if cfg.command == "skeleton":
        spec = cfg.raw["control"]
        n_cells = spec["n_cells"]
        if spec["kind"] == "zero":
            v = Control.zeros(model.m, n_cells, dyn.t_final)
        else:
            vals = np.tile(np.asarray(spec["values"])[:, None], (1, n_cells))
            if vals.shape[0] != model.m:
                raise ConfigurationError(
                    f"control has {vals.shape[0]} directions, model has {model.m}")
            v = Control(np.linspace(0.0, dyn.t_final, n_cells + 1), vals)
        tr = solve_skeleton(theta0, v, model, dyn)
        write_trajectory(tr, out / "trajectory.csv")
        _write_manifest(cfg, out)
        return

    if cfg.command == "delayed":
        seq = cfg.raw["delayed"]["delta_sequence"]
        reference = solve_deterministic(theta0, dyn)
        ref_states = np.array([s.coeffs for s in reference.snapshots])
        rows = []
        last = None
        for delta in seq:
            tr = solve_delayed_mollified(theta0, delta, cfg=dyn)
            states = np.array([s.coeffs for s in tr.snapshots])
            dist = float(np.max(np.linalg.norm(states - ref_states, axis=1)))
            rows.append([fmt17(delta), fmt17(dist)])
            last = tr
        _write_csv(out / "convergence.csv", CONVERGENCE_HEADER, rows)
        write_trajectory(last, out / "trajectory.csv")
        _write_manifest(cfg, out)
        return

    if cfg.command == "action":
        sec = cfg.raw["action"]
        problem = ActionProblem(
            theta0=theta0, model=model, cfg=dyn,
            observable=cfg.observable(sec["observable"]),
            target=TargetSpec(sec["target"]["kind"], sec["target"]["eta"],
                              sec["target"]["radius"]),
            flavor=sec["flavor"],
            n_cells=sec["n_cells"],
            penalties=tuple(sec["penalties"]),
            grad_tol=sec["grad_tol"],
            max_iterations=sec["max_iterations"],
        )
        est = minimize_action(problem)
        payload = {
            "i_value": est.i_value,
            "observable_value": est.observable_value,
            "residual": est.residual,
            "converged": est.converged,
            "trace": [list(t) for t in est.trace],
        }
        (out / "action.json").write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        ctrl_rows = [[fmt17(t)] + [fmt17(v) for v in est.control.values[:, i]]
                     for i, t in enumerate(est.control.times[:-1])]
        _write_csv(out / "control.csv",
                   ("t",) + tuple(f"v{j}" for j in range(model.m)), ctrl_rows)
        _write_manifest(cfg, out, {"i_value": est.i_value})
        return

    if cfg.command == "mc":
        from .montecarlo import RareEventSpec

        event = cfg.raw["event"]
        method = cfg.raw["method"]
        tilt = None
        tilt_scale = 1.0
        if method == "tilted":
            tilt = _build_tilt(cfg, event, dyn, model, theta0)
            tilt_scale = cfg.raw["tilt"]["scale"]
        spec = RareEventSpec(
            theta0=theta0, model=model, cfg=dyn,
            observable=cfg.observable(event["observable"]),
            threshold=event["threshold"], flavor=event["flavor"],
            direction=event["direction"], at=event["at"],
            tilt=tilt, tilt_scale=tilt_scale,
        )
        rows = []
        for eps in cfg.raw["eps_grid"]:
            est = estimate_probability(spec, eps, cfg.raw["n_samples"], cfg.master_seed,
                                       method, cfg.raw["batch_size"], cfg.workers)
            rows.append(_result_row(cfg, event["flavor"], eps, event["threshold"],
                                    method, est.n_samples, est.p_hat, est.ci_lo,
                                    est.ci_hi, est.eps_log_p))
        write_table(rows, out / "results.csv")
        _write_manifest(cfg, out)
        return

    if cfg.command == "equiv":
        eta = cfg.raw["equiv"]["eta"]
        report = exponential_equivalence(
            theta0, cfg.raw["eps_grid"], eta, cfg.raw["n_samples"], cfg.master_seed,
            dyn, model, cfg.raw["batch_size"], cfg.workers)
        rows = [_result_row(cfg, "equiv", r.eps, eta, "coupled", report.n_samples,
                            r.q_hat, r.ci_lo, r.ci_hi, r.eps_log_q)
                for r in report.rows]
        write_table(rows, out / "results.csv")
        _write_manifest(cfg, out, {
            "strictly_decreasing_within_ci": report.strictly_decreasing_within_ci()})
        return

    if cfg.command == "lptail":
        sec = cfg.raw["lptail"]
        p = sec["p"]
        if "levels" in sec:
            levels = sec["levels"]
        else:
            from .spectral import lp_norm, to_physical

            base = lp_norm(to_physical(theta0), p) ** p
            levels = [f * base for f in sec["level_factors"]]
        table = lp_tail_study(theta0, cfg.raw["eps_grid"], levels, p,
                              cfg.raw["n_samples"], cfg.master_seed, dyn, model,
                              cfg.raw["batch_size"])
        rows = [_result_row(cfg, "lptail", c.eps, c.level, "naive", table.n_samples,
                            c.p_hat, c.ci_lo, c.ci_hi, c.eps_log_p)
                for c in table.cells]
        write_table(rows, out / "results.csv")
        _write_manifest(cfg, out, {"monotone_in_level": table.monotone_in_level()})
        return

    raise ConfigurationError(f"unhandled command {cfg.command!r}")
