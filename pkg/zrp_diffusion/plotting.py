"""PNG figures of stored ensembles and comparison reports."""
import logging
from pathlib import Path
from typing import Any, Dict, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from .io import EnsembleTable  # noqa: E402

logger = logging.getLogger(__name__)


def plot_paths(ensemble: EnsembleTable, out: Union[str, Path], max_paths: int = 20) -> None:
    """One panel per coordinate, a line per replica"""
    n_rep, _, p = ensemble.points.shape
    shown = min(n_rep, max_paths)
    fig, axes = plt.subplots(p, 1, figsize=(10, 2.5 * p), sharex=True, squeeze=False)
    for i in range(p):
        ax = axes[i, 0]
        for k in range(shown):
            ax.plot(ensemble.sample_times, ensemble.points[k, :, i], lw=0.8, alpha=0.6)
        ax.set_ylabel(f"x_{i + 1}")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("time")
    label = ensemble.kind if ensemble.N is None else f"{ensemble.kind}, N={ensemble.N}"
    fig.suptitle(f"{shown} of {n_rep} paths ({label})")
    plt.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    logger.info("wrote path plot to %s", out)


def plot_report(report: Dict[str, Any], out: Union[str, Path]) -> None:
    """Max-coordinate W1 against N at each checkpoint, with bootstrap intervals"""
    frame = pd.DataFrame([
        {"N": e["n"], "checkpoint": f"t={e['time']:g}", "w1_max": e["w1_max"],
         "low": e["w1_max_ci"][0], "high": e["w1_max_ci"][1]}
        for e in report["distances"]
    ])
    fig, ax = plt.subplots(figsize=(10, 6))
    sns.lineplot(data=frame, x="N", y="w1_max", hue="checkpoint", marker="o", ax=ax)
    for _, group in frame.groupby("checkpoint"):
        ax.fill_between(group["N"], group["low"], group["high"], alpha=0.2)
    ax.axhline(report["threshold"], color="grey", ls="--", lw=1)
    ax.set_xscale("log")
    ax.set_ylabel("max-coordinate W1")
    plt.title("ZRP vs diffusion marginals")
    plt.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    logger.info("wrote report plot to %s", out)
