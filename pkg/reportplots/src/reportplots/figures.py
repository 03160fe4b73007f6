"""Deterministic figure rendering.

Every plotted series is exactly a column of the input table; this module
never recomputes, fits, or smooths anything.  Output bytes depend only on
the input files (Agg backend, fixed style, no timestamps or version
strings embedded in the image).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .tables import (  # noqa: E402
    TableError,
    load_convergence,
    load_results,
    load_trajectory,
)

KINDS = ("scaling", "equivalence", "convergence", "trajectory")

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 5.0,
}

_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: input tables, figure kind, output path, caption."""

    inputs: tuple
    kind: str
    output: str
    caption: str = ""
    i_ref: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TableError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise TableError("figure spec needs at least one input table")

    @classmethod
    def from_file(cls, path) -> "FigureSpec":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {"inputs", "kind", "output", "caption", "i_ref"}
        unknown = set(doc) - known
        if unknown:
            raise TableError(f"{path}: unknown spec keys {sorted(unknown)}")
        return cls(inputs=tuple(doc["inputs"]), kind=doc["kind"],
                   output=doc["output"], caption=doc.get("caption", ""),
                   i_ref=doc.get("i_ref"))


def _save(fig, output):
    path = Path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Strip the software text chunk so bytes depend on inputs alone.
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def _group_rows(rows, key):
    groups = {}
    for row in rows:
        groups.setdefault(row[key], []).append(row)
    return groups


def _scaling_axes(ax, rows, i_ref):
    for color, (level, group) in zip(_SERIES_COLORS, sorted(_group_rows(rows, "M_or_eta").items())):
        xs = [r["epsilon"] for r in group]
        ys = [r["eps_log_p"] for r in group]
        label = f"level {level:g}" if len(_group_rows(rows, 'M_or_eta')) > 1 else "eps log p"
        ax.plot(xs, ys, "o-", color=color, label=label)
    if i_ref is not None:
        ax.axhline(-i_ref, color="black", linestyle="--", linewidth=1.0,
                   label="- reference rate")
    ax.set_xlabel("eps")
    ax.set_ylabel("eps log p")
    ax.legend(loc="best")


def render(spec: FigureSpec):
    """Draw one figure; returns (output path, matplotlib figure).

    The figure object is returned so tests can compare plotted arrays with
    table columns element for element.
    """
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if spec.kind == "scaling":
            rows = [r for path in spec.inputs for r in load_results(path)]
            plotted = [r for r in rows if r["eps_log_p"] > float("-inf")]
            if not plotted:
                raise TableError("scaling figure: every row is a zero-hit sentinel")
            _scaling_axes(ax, plotted, spec.i_ref)
        elif spec.kind == "equivalence":
            rows = [r for path in spec.inputs for r in load_results(path)]
            xs = [r["epsilon"] for r in rows]
            ys = [r["p_hat"] for r in rows]
            lo = [r["p_hat"] - r["ci_lo"] for r in rows]
            hi = [r["ci_hi"] - r["p_hat"] for r in rows]
            ax.errorbar(xs, ys, yerr=[lo, hi], fmt="o", color=_SERIES_COLORS[0],
                        capsize=3.0, label="gap probability")
            ax.set_xlabel("eps")
            ax.set_ylabel("q")
            ax.legend(loc="best")
        elif spec.kind == "convergence":
            cols = load_convergence(spec.inputs[0])
            ax.loglog(cols["delta_n"], cols["sup_l2_distance"], "o-",
                      color=_SERIES_COLORS[0])
            ax.set_xlabel("delta_n")
            ax.set_ylabel("sup-t L2 distance")
        elif spec.kind == "trajectory":
            cols = load_trajectory(spec.inputs[0])
            for color, name in zip(_SERIES_COLORS,
                                   ("l2", "h_alpha", "h_delta", "h_minus_half", "lp")):
                ax.plot(cols["t"], cols[name], color=color, label=name)
            ax.set_xlabel("t")
            ax.set_ylabel("norm")
            ax.legend(loc="best")
        if spec.caption:
            fig.suptitle(spec.caption, fontsize=10)
        fig.tight_layout()
        path = _save(fig, spec.output)
    return path, fig
