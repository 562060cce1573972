"""Figure rendering for evaluation and training reports.

Everything here draws to files through the Agg backend so the CLI works on
headless machines. Inputs are plain sequences; nothing in this module
depends on the tracker or evaluation types.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be set first


def plot_eao_curve(
    points: list[tuple[int, float]],
    path: Path | str,
    eao: float | None = None,
) -> Path:
    """Render expected overlap against run length.

    ``points`` are the (N, phi(N)) pairs over the averaging interval. When
    ``eao`` is given it is drawn as a horizontal reference line.
    """
    path = Path(path)
    ns = [n for n, _ in points]
    phis = [p for _, p in points]
    fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=120)
    ax.plot(ns, phis, lw=1.5, color="tab:blue", label="phi(N)")
    if eao is not None:
        ax.axhline(eao, color="tab:red", lw=1.0, ls="--", label=f"EAO = {eao:.4f}")
    ax.set_xlabel("run length N (frames)")
    ax.set_ylabel("expected overlap")
    ax.set_ylim(bottom=0.0)
    ax.grid(alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_train_history(rows, path: Path | str) -> Path:
    """Render per-step loss components from a training run.

    ``rows`` is any sequence of records with ``step``, ``area``, ``angle``,
    ``arc`` and ``total`` attributes, e.g. ``TrainHistory.rows``.
    """
    path = Path(path)
    rows = list(rows)
    steps = [r.step for r in rows]
    fig, ax = plt.subplots(figsize=(7.0, 4.0), dpi=120)
    for field, color in (("area", "tab:green"), ("angle", "tab:orange"), ("arc", "tab:purple")):
        ax.plot(steps, [getattr(r, field) for r in rows], lw=0.8, alpha=0.7,
                color=color, label=field)
    ax.plot(steps, [r.total for r in rows], lw=1.5, color="tab:blue", label="total")
    ax.set_xlabel("scored step")
    ax.set_ylabel("loss")
    ax.set_ylim(bottom=0.0)
    ax.grid(alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
