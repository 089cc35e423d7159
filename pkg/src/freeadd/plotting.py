"""PNG figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_lsv(stats, law, law_name, path, title=""):
    """Histogram of the rescaled statistic with the target density, plus CDFs."""
    stats = np.sort(np.asarray(stats))
    r = np.linspace(0, max(3.0, float(stats[-1])), 400)
    h = 1e-4
    dens = (law(r + h) - law(np.maximum(r - h, 0))) / (r + h - np.maximum(r - h, 0))
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax0.hist(stats, bins=60, range=(0, r[-1]), density=True, alpha=0.6, label="samples")
    ax0.plot(r, dens, "k-", lw=1.2, label=law_name)
    ax0.set_xlabel("r")
    ax0.set_ylabel("density")
    ax0.legend()
    ax1.step(stats, np.arange(1, stats.size + 1) / stats.size, where="post", label="empirical")
    ax1.plot(r, law(r), "k--", lw=1.0, label=law_name)
    ax1.set_xlabel("r")
    ax1.set_ylabel("CDF")
    ax1.legend()
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_density(grid, values, path, flags=None, reference=None):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(grid, values, lw=1.2, label="solver")
    if reference is not None:
        ax.plot(grid, reference, "k--", lw=0.8, label="reference")
    if flags is not None and np.any(flags):
        ax.plot(np.asarray(grid)[flags], np.zeros(int(np.sum(flags))), "rx", label="unconverged")
    ax.set_xlabel("E")
    ax.set_ylabel("rho")
    ax.legend()
    _save(fig, path)


def plot_trajectory(t, lam, path, n_show=10):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for k in range(min(n_show, lam.shape[1])):
        ax.plot(t, lam[:, k], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("singular values")
    _save(fig, path)
