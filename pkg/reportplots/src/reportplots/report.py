"""One-page HTML run report: embedded figures plus the run's identity
(config hash, seed, command).  Output bytes are a pure function of the run
directory contents; partial runs get their missing sections flagged
rather than failing."""

from __future__ import annotations

import base64
import html
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .figures import FigureSpec, _STYLE, _SERIES_COLORS, _scaling_axes  # noqa: E402
from .tables import (  # noqa: E402
    TableError,
    load_convergence,
    load_manifest,
    load_results,
    load_trajectory,
)

_PAGE = """<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>run report: {run_id}</title>
<style>
 body {{ font-family: sans-serif; max-width: 60em; margin: 2em auto; }}
 figure {{ margin: 1.5em 0; }} figcaption {{ color: #555; font-size: 0.9em; }}
 .missing {{ color: #a33; }} code {{ background: #f4f4f4; padding: 0 0.2em; }}
 table {{ border-collapse: collapse; }} td, th {{ padding: 0.2em 0.8em; border: 1px solid #ccc; }}
</style></head><body>
<h1>Run report: {run_id}</h1>
<table>
 <tr><th>command</th><td><code>{command}</code></td></tr>
 <tr><th>master seed</th><td><code>{seed}</code></td></tr>
 <tr><th>config hash</th><td><code>{config_hash}</code></td></tr>
 <tr><th>package</th><td><code>{version}</code></td></tr>
</table>
{sections}
</body></html>
"""


def _fig_to_data_uri(fig) -> str:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def _section(title, fig, caption) -> str:
    uri = _fig_to_data_uri(fig)
    return (f"<h2>{html.escape(title)}</h2><figure><img src=\"{uri}\" "
            f"alt=\"{html.escape(title)}\"/><figcaption>{html.escape(caption)}"
            f"</figcaption></figure>")


def _missing(title, reason) -> str:
    return (f"<h2>{html.escape(title)}</h2><p class=\"missing\">absent: "
            f"{html.escape(reason)}</p>")


def build_report(run_dir) -> str:
    """Assemble the report HTML for one run directory."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    sections = []

    results_path = run_dir / "results.csv"
    if results_path.exists():
        with plt.rc_context(_STYLE):
            rows = load_results(results_path)
            flavor = rows[0]["flavor"]
            if flavor == "equiv":
                fig, ax = plt.subplots()
                xs = [r["epsilon"] for r in rows]
                ys = [r["p_hat"] for r in rows]
                lo = [r["p_hat"] - r["ci_lo"] for r in rows]
                hi = [r["ci_hi"] - r["p_hat"] for r in rows]
                ax.errorbar(xs, ys, yerr=[lo, hi], fmt="o", capsize=3.0,
                            color=_SERIES_COLORS[0])
                ax.set_xlabel("eps")
                ax.set_ylabel("gap probability")
                fig.tight_layout()
                sections.append(_section("Coupled-gap probabilities", fig,
                                         "one point per eps with a 95% interval"))
            else:
                plotted = [r for r in rows if r["eps_log_p"] > float("-inf")]
                if plotted:
                    fig, ax = plt.subplots()
                    _scaling_axes(ax, plotted, None)
                    fig.tight_layout()
                    sections.append(_section("Probability scaling", fig,
                                             "eps log p per eps, straight from the table"))
                else:
                    sections.append(_missing("Probability scaling",
                                             "every row is a zero-hit sentinel"))
    else:
        sections.append(_missing("Probability scaling", "no results.csv in the run"))

    conv_path = run_dir / "convergence.csv"
    if conv_path.exists():
        with plt.rc_context(_STYLE):
            cols = load_convergence(conv_path)
            fig, ax = plt.subplots()
            ax.loglog(cols["delta_n"], cols["sup_l2_distance"], "o-",
                      color=_SERIES_COLORS[0])
            ax.set_xlabel("delta_n")
            ax.set_ylabel("sup-t L2 distance")
            fig.tight_layout()
        sections.append(_section("Delayed-scheme convergence", fig,
                                 "distance to the reference solver per delay width"))

    traj_path = run_dir / "trajectory.csv"
    if traj_path.exists():
        with plt.rc_context(_STYLE):
            cols = load_trajectory(traj_path)
            fig, ax = plt.subplots()
            for color, name in zip(_SERIES_COLORS,
                                   ("l2", "h_alpha", "h_delta", "h_minus_half", "lp")):
                ax.plot(cols["t"], cols[name], color=color, label=name)
            ax.set_xlabel("t")
            ax.set_ylabel("norm")
            ax.legend(loc="best")
            fig.tight_layout()
        sections.append(_section("Trajectory norms", fig, "norm series along the run"))
    else:
        sections.append(_missing("Trajectory norms", "no trajectory.csv in the run"))

    return _PAGE.format(
        run_id=html.escape(str(manifest.get("run_id", "?"))),
        command=html.escape(str(manifest.get("command", "?"))),
        seed=html.escape(str(manifest.get("master_seed", "?"))),
        config_hash=html.escape(str(manifest.get("config_hash", "?"))),
        version=html.escape(str(manifest.get("package_version", "?"))),
        sections="\n".join(sections),
    )


def write_report(run_dir, output=None) -> Path:
    run_dir = Path(run_dir)
    output = Path(output) if output else run_dir / "report.html"
    output.write_text(build_report(run_dir), encoding="utf-8")
    return output
