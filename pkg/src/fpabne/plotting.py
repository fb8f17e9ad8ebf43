"""Matplotlib figures for the CLI reports.  Files only, no windows."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .allocation import envelope_value, win_probs  # noqa: E402
from .model import AuctionInstance, MonotoneStrategy, marginals_of  # noqa: E402


def _save(fig, path: str | os.PathLike) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def interim_regret_curve(i: int, profile: Sequence[MonotoneStrategy], instance: AuctionInstance,
                         values: np.ndarray) -> np.ndarray:
    """Regret of player ``i`` at each value, using the bid its strategy picks there."""
    marg = marginals_of(profile, instance.distributions)
    g = win_probs(i, marg, instance.rule)
    bids = instance.bids
    used = np.array([profile[i].bid_index(v) for v in values])
    return envelope_value(values, g, bids) - g[used] * (values - bids[used])


def plot_profile(profile: Sequence[MonotoneStrategy], instance: AuctionInstance, path) -> str:
    """Bid as a function of value for every player, with the diagonal."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    bids = instance.bids
    for i, s in enumerate(profile):
        edges = np.concatenate(([0.0], s.tau, [1.0]))
        xs, ys = [], []
        for j in range(len(bids)):
            if edges[j + 1] > edges[j]:
                xs += [edges[j], edges[j + 1]]
                ys += [bids[j], bids[j]]
        ax.plot(xs, ys, lw=1.6, label=f"player {i}")
    ax.plot([0, 1], [0, 1], color="0.6", ls=":", lw=1)
    ax.set_xlabel("value")
    ax.set_ylabel("bid")
    ax.set_xlim(0, 1)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_regret(profile: Sequence[MonotoneStrategy], instance: AuctionInstance, path,
                points: int = 801) -> str:
    """Interim regret against value for every player."""
    values = np.linspace(0.0, 1.0, points)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for i in range(instance.n):
        ax.plot(values, interim_regret_curve(i, profile, instance, values), lw=1.2, label=f"player {i}")
    ax.set_xlabel("value")
    ax.set_ylabel("interim regret")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_marginals(profile: Sequence[MonotoneStrategy], instance: AuctionInstance, path) -> str:
    """Bid distribution of every player as grouped bars."""
    p = marginals_of(profile, instance.distributions).p
    n, width = p.shape
    fig, ax = plt.subplots(figsize=(5.5, 4))
    step = 0.8 / n
    x = np.arange(width)
    for i in range(n):
        ax.bar(x - 0.4 + step * (i + 0.5), p[i], width=step, label=f"player {i}")
    ax.set_xticks(x)
    ax.set_xticklabels([f"{b:.3g}" for b in instance.bids], rotation=45, fontsize=7)
    ax.set_xlabel("bid")
    ax.set_ylabel("probability")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_trajectory(regrets: Sequence[float], path) -> str:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(np.arange(len(regrets)), regrets, marker="o", ms=3)
    ax.set_xlabel("round")
    ax.set_ylabel("max sup regret")
    return _save(fig, path)


def plot_assignment(x: Sequence[float], targets: Sequence[float], kappa: float, path) -> str:
    """Decoded node values next to the values their gates ask for."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(targets, dtype=float)
    nodes = np.arange(len(x))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.errorbar(nodes, t, yerr=kappa, fmt="none", ecolor="0.6", capsize=3, label="gate target ± kappa")
    ax.plot(nodes, x, "o", label="decoded")
    ax.set_xlabel("node")
    ax.set_ylabel("value")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=8)
    return _save(fig, path)
