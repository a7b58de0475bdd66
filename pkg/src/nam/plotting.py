"""Figures for evaluation reports (written to files, never shown)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluator import EvalReport  # noqa: E402


def plot_generation(report: EvalReport, path: "str | Path") -> Path:
    rows = report.ordered()
    names = [r.model for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    axes[0].bar(x, [r.legal for r in rows], color="tab:green")
    axes[0].set_title(f"Legal trees (of {report.batch})")
    axes[1].bar(x, [r.violations for r in rows], color="tab:red")
    axes[1].set_title("Constraint violations")
    for ax in axes:
        ax.set_xticks(x, names, rotation=25, ha="right", fontsize=8)
    fig.suptitle(f"Generated trees, constraint {report.constraint}")
    fig.tight_layout()
    return _save(fig, path)


def plot_nll(report: EvalReport, path: "str | Path") -> Path:
    rows = report.ordered()
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 3.8))
    ax.bar(x - 0.2, [r.nll_train for r in rows], 0.4, label="train")
    ax.bar(x + 0.2, [r.nll_test for r in rows], 0.4, label="test")
    ax.set_xticks(x, [r.model for r in rows], rotation=25, ha="right", fontsize=8)
    ax.set_ylabel("nats per prediction")
    ax.set_title(f"Average NLL, constraint {report.constraint}")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_history(histories: dict[str, list[dict]], path: "str | Path") -> Path:
    """Training curves: per-epoch cross-entropy and sampled legal rate."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    for name, hist in histories.items():
        ep = [h["epoch"] for h in hist]
        axes[0].plot(ep, [h["train_xe"] for h in hist], marker="o", label=name)
        axes[1].plot(ep, [h["legal_rate"] for h in hist], marker="o", label=name)
    axes[0].set_title("training cross-entropy")
    axes[1].set_title("legal rate of early-stopping samples")
    for ax in axes:
        ax.set_xlabel("epoch")
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=110, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path
