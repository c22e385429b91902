'''Report figures: risk-coverage curve and routing action breakdown.

Figures are written next to the delimited outputs; the CSV/JSON files stay
the source of truth.
'''

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .router import ACTIONS, PREDICT  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "svg.hashsalt": "reliroute",
}

ACTION_COLORS = {
    "PREDICT": "#2b8cbe",
    "ABSTAIN": "#fdae6b",
    "REACQUIRE": "#a1d99b",
    "REFER": "#de2d26",
}


def figsize(scale=1.0, ratio=0.62):
    width = 4.5 * scale
    return width, width * ratio


def plot_risk_coverage(ax, curve, operating_point=None, baseline=None):
    cov = [c for c, _ in curve]
    risk = [r for _, r in curve]
    ax.step(cov, risk, where="post", color="0.2", lw=1.2, label="uncertainty ranking")
    if baseline is not None:
        ax.axhline(baseline, color="tab:red", ls="--", lw=1, label="no rejection")
    if operating_point is not None:
        ax.plot(*operating_point, marker="*", ms=12, color="tab:orange", ls="none", label="router")
    ax.set_xlim(0, 1.02)
    ax.set_xlabel("coverage")
    ax.set_ylabel("selective risk")
    ax.legend(frameon=False, loc="lower right")
    return ax


def plot_actions(ax, summary):
    fractions = [summary["fractions"][a] for a in ACTIONS]
    bars = ax.bar(ACTIONS, fractions, color=[ACTION_COLORS[a] for a in ACTIONS])
    cond = summary.get("conditional") or {}
    metric = summary.get("metric")
    for bar, a in zip(bars, ACTIONS):
        if cond.get(a) is not None:
            ax.annotate(f"{metric} {cond[a]:.3f}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=7)
    ax.set_ylabel("fraction of samples")
    ax.set_ylim(0, 1.1)
    return ax


def render_figures(result, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    routing = result.report.get("routing", {})
    with plt.rc_context(REPORT_RC):
        if result.curve:
            fig, ax = plt.subplots(figsize=figsize())
            op = None
            if routing.get("selective_risk") is not None and routing.get("metric") == "accuracy":
                op = (routing["fractions"][PREDICT], routing["selective_risk"])
            baseline = 1 - routing["overall"] if routing.get("metric") == "accuracy" else None
            plot_risk_coverage(ax, result.curve, op, baseline)
            paths["risk_coverage_png"] = outdir / "risk_coverage.png"
            fig.savefig(paths["risk_coverage_png"])
            plt.close(fig)
        fig, ax = plt.subplots(figsize=figsize())
        plot_actions(ax, routing)
        paths["actions_png"] = outdir / "actions.png"
        fig.savefig(paths["actions_png"])
        plt.close(fig)
    return paths
