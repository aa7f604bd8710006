"""Figure rendering for report payloads.

Each renderer takes the same dict payload that the JSON/CSV writers consume
and saves one PNG next to the delimited output. Uses the Agg backend so the
CLI works headless.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _matrix_panel(ax, mat, title, fmt="{:.2f}"):
    mat = np.asarray(mat, dtype=float)
    im = ax.imshow(mat, cmap="viridis")
    for (r, c), val in np.ndenumerate(mat):
        ax.text(c, r, fmt.format(val), ha="center", va="center", color="white", fontsize=8)
    ax.set_xticks(range(mat.shape[1]))
    ax.set_yticks(range(mat.shape[0]))
    ax.set_title(title, fontsize=9)
    return im


def render_fit_figure(payload: dict, out_dir) -> Path:
    """Coefficient estimates with normal 95% intervals plus the Psi estimates."""
    coefs = payload["model"]["coefficients"]
    variants = list(payload["model"]["psi"])
    fig, axes = plt.subplots(1, 1 + len(variants), figsize=(4 + 3 * len(variants), 3.2))
    axes = np.atleast_1d(axes)

    ax = axes[0]
    if coefs:
        idx = [r["index"] for r in coefs]
        est = np.array([r["coefficient"] for r in coefs])
        half = 1.96 * np.array([r["std_error"] for r in coefs])
        ax.errorbar(idx, est, yerr=half, fmt="o", capsize=3)
        ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_xticks(idx)
    ax.set_xlabel("coefficient")
    ax.set_title("GLS coefficients (95% CI)", fontsize=9)

    for ax, name in zip(axes[1:], variants):
        _matrix_panel(ax, payload["model"]["psi"][name]["projected"], f"projected Psi ({name})")

    fig.tight_layout()
    path = Path(out_dir) / "fit.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_predict_figure(payload: dict, out_dir) -> Path:
    """Per-component scatter of predictions against direct estimates."""
    k = payload["meta"]["k"]
    per_area = payload["per_area"]
    y = np.array([a["y"] for a in per_area])
    theta = np.array([a["theta_hat"] for a in per_area])
    shrink = np.array([np.diag(a["shrinkage"]) for a in per_area])

    fig, axes = plt.subplots(1, k, figsize=(3.8 * k, 3.2), squeeze=False)
    for j in range(k):
        ax = axes[0, j]
        sc = ax.scatter(y[:, j], theta[:, j], c=shrink[:, j], cmap="plasma", s=18)
        lims = [min(y[:, j].min(), theta[:, j].min()), max(y[:, j].max(), theta[:, j].max())]
        ax.plot(lims, lims, color="grey", lw=0.8)
        ax.set_xlabel(f"direct estimate, component {j + 1}")
        ax.set_ylabel(f"prediction, component {j + 1}")
        fig.colorbar(sc, ax=ax, label="diag shrinkage")
    fig.suptitle(f"EBLUP ({payload['meta']['psi_variant']})", fontsize=10)
    fig.tight_layout()
    path = Path(out_dir) / "predict.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_simulate_figure(payload: dict, out_dir) -> Path:
    """Trace MSEM by predictor, PRIAL by group, and estimator bias if present."""
    groups = [g["group"] for g in payload["per_group"]]
    predictors = sorted(payload["per_group"][0]["msem"].keys())
    have_bias = "relative_bias_percent" in payload["per_group"][0]

    ncols = 3 if have_bias else 2
    fig, axes = plt.subplots(1, ncols, figsize=(4.0 * ncols, 3.4))

    ax = axes[0]
    width = 0.8 / len(predictors)
    xs = np.arange(len(groups))
    for p, name in enumerate(predictors):
        traces = [100.0 * np.trace(np.array(g["msem"][name])) for g in payload["per_group"]]
        ax.bar(xs + p * width, traces, width=width, label=name)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(groups)
    ax.set_ylabel("trace MSEM x100")
    ax.legend(fontsize=7)
    ax.set_title("simulated risk by group", fontsize=9)

    ax = axes[1]
    ax.plot(groups, [g["prial_vs_direct"] for g in payload["per_group"]], "o-", label="vs direct")
    ax.plot(
        groups,
        [g["prial_vs_univariate"] for g in payload["per_group"]],
        "s-",
        label="vs univariate",
    )
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_ylabel("PRIAL (%)")
    ax.legend(fontsize=7)
    ax.set_title("improvement in average loss", fontsize=9)

    if have_bias:
        ax = axes[2]
        k = payload["meta"]["k"]
        for j in range(k):
            vals = [g["relative_bias_percent"][j][j] for g in payload["per_group"]]
            vals = [np.nan if v is None else v for v in vals]
            ax.plot(groups, vals, "o-", label=f"diag {j + 1}")
        ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_ylabel("relative bias (%)")
        ax.legend(fontsize=7)
        ax.set_title("MSEM estimator bias (diagonals)", fontsize=9)

    fig.tight_layout()
    path = Path(out_dir) / "simulate.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
