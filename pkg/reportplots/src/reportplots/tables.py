"""Readers for the upstream file contracts.

This package never computes physics: it consumes the CSV tables and the
run manifest produced by the simulation package and renders them.  Header
lines are matched exactly; a mismatch is an error that spells out both
sides.
"""

from __future__ import annotations

import json
from pathlib import Path

RESULTS_HEADER = ("run_id", "flavor", "epsilon", "M_or_eta", "method", "n_samples",
                  "p_hat", "ci_lo", "ci_hi", "eps_log_p", "seed", "wallclock_s")
TRAJECTORY_HEADER = ("t", "l2", "h_alpha", "h_delta", "h_delta_alpha",
                     "h_minus_half", "lp")
CONVERGENCE_HEADER = ("delta_n", "sup_l2_distance")

_NUMERIC_RESULTS = ("epsilon", "M_or_eta", "n_samples", "p_hat", "ci_lo", "ci_hi",
                    "eps_log_p", "wallclock_s")


class TableError(ValueError):
    """Missing file, wrong header, or an empty table."""


def _read_csv(path, header):
    path = Path(path)
    if not path.exists():
        raise TableError(f"{path}: no such table")
    lines = path.read_text(encoding="utf-8").splitlines()
    expected = ",".join(header)
    if not lines or lines[0] != expected:
        found = lines[0] if lines else "<empty file>"
        raise TableError(
            f"{path}: header mismatch\n  expected: {expected}\n  found:    {found}")
    if len(lines) < 2:
        raise TableError(f"{path}: table has a header but no rows")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise TableError(f"{path}:{i}: expected {len(header)} fields, got {len(parts)}")
        rows.append(dict(zip(header, parts)))
    return rows


def load_results(path) -> list[dict]:
    """Rows of a results table with numeric fields parsed (inf-aware)."""
    rows = _read_csv(path, RESULTS_HEADER)
    for row in rows:
        for key in _NUMERIC_RESULTS:
            row[key] = float(row[key])
    return rows


def load_trajectory(path) -> dict:
    rows = _read_csv(path, TRAJECTORY_HEADER)
    return {key: [float(r[key]) for r in rows] for key in TRAJECTORY_HEADER}


def load_convergence(path) -> dict:
    rows = _read_csv(path, CONVERGENCE_HEADER)
    return {key: [float(r[key]) for r in rows] for key in CONVERGENCE_HEADER}


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise TableError(f"{path}: no manifest in run directory")
    return json.loads(path.read_text(encoding="utf-8"))
