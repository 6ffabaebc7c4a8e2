"""Figure rendering for experiment reports.

Lives with the command-line layer: experiments emit delimited text, and
the report path turns those tables into PNG files next to them.  The
Agg backend is forced and metadata is stripped so identical inputs
render identical bytes.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

__all__ = [
    "render_inviscid",
    "render_contraction",
    "render_equivalence",
    "render_mc_scaling",
]

_SAVE = {"dpi": 110, "metadata": {"Software": None}}


def _fitted_line(ax, xs, exponent, ys):
    xs = np.asarray(xs, dtype=float)
    anchor = ys[-1] / xs[-1] ** exponent
    grid = np.linspace(xs.min(), xs.max(), 64)
    ax.plot(grid, anchor * grid**exponent, "k--", lw=1,
            label=f"slope {exponent:.3f}")


def render_inviscid(out_dir, result):
    """Error-vs-viscosity and error-vs-time panels on log axes."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    ax = axes[0]
    ax.loglog(result["nus"], result["err_l2"], "o-", label="L2 error")
    ax.loglog(result["nus"], result["err_c0"], "s-", label="sup error")
    if np.isfinite(result["nu_exponent"]):
        _fitted_line(ax, result["nus"], result["nu_exponent"],
                     result["err_l2"])
    ax.set_xlabel("viscosity")
    ax.set_ylabel("relative error at final time")
    ax.legend(fontsize=8)
    ax.set_title("inviscid limit: viscosity rate")

    ax = axes[1]
    ax.loglog(result["t_values"], result["t_err_l2"], "o-", label="L2 error")
    if np.isfinite(result["t_exponent"]):
        _fitted_line(ax, result["t_values"], result["t_exponent"],
                     result["t_err_l2"])
    ax.set_xlabel("time")
    ax.set_ylabel("relative error")
    ax.legend(fontsize=8)
    ax.set_title("inviscid limit: time rate")
    fig.tight_layout()
    path = os.path.join(out_dir, "inviscid.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_contraction(out_dir, results):
    """Residual decay per horizon on a log axis."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for t_final, data in sorted(
        (k, v) for k, v in results.items() if isinstance(k, float)
    ):
        res = data["residuals"]
        ax.semilogy(range(1, len(res) + 1), res, "o-",
                    label=f"T = {t_final:g}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative C0 residual")
    ax.legend(fontsize=8)
    ax.set_title("fixed-point contraction")
    fig.tight_layout()
    path = os.path.join(out_dir, "contraction.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_equivalence(out_dir, result):
    """Pairwise differences against the sampling-error yardstick."""
    pairs = list(result["pairs"].items())
    labels = [name.replace("_", " ") for name, _ in pairs]
    values = [v["l2"] for _, v in pairs]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.bar(range(len(pairs)), values, color="#4878a8")
    ax.axhline(3.0 * result["mc_sigma"], color="k", ls="--", lw=1,
               label="3 x MC standard error")
    ax.set_xticks(range(len(pairs)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("relative L2 difference")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("solver equivalence")
    fig.tight_layout()
    path = os.path.join(out_dir, "equivalence.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_mc_scaling(out_dir, result):
    """Replicate spread against ensemble size with the fitted slope."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(result["sample_grid"], result["sigma_l2"], "o-",
              label="replicate spread")
    _fitted_line(ax, result["sample_grid"], result["exponent"],
                 result["sigma_l2"])
    ax.set_xlabel("sample paths")
    ax.set_ylabel("relative L2 spread")
    ax.legend(fontsize=8)
    ax.set_title("Monte-Carlo scaling")
    fig.tight_layout()
    path = os.path.join(out_dir, "mc_scaling.png")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path
