"""Figure rendering for the CLI report paths.

All functions write PNG files next to the delimited output and return the
list of paths written. Matplotlib runs on the Agg backend so the CLI works
headless.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def trajectory_figures(traj, model, out_dir, prefix="simulate"):
    """Joint trajectories, phase portrait and (when present) torques/outputs."""
    paths = []
    t, X = traj.t, traj.x
    N = model.N

    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(N):
        ax.plot(t, X[:, i], label=f"q{i}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("joint angle [rad]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("joint trajectories")
    paths.append(_finish(fig, os.path.join(out_dir, f"{prefix}_joints.png")))

    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.plot(X[:, 0], X[:, N], lw=0.9)
    ax.set_xlabel("q0 [rad]")
    ax.set_ylabel("qd0 [rad/s]")
    ax.set_title("phase portrait (stance angle)")
    paths.append(_finish(fig, os.path.join(out_dir, f"{prefix}_limit_cycle.png")))

    if traj.u is not None and len(traj.u):
        fig, ax = plt.subplots(figsize=(7, 4))
        U = np.asarray(traj.u)
        for i in range(U.shape[1]):
            ax.plot(t[:len(U)], U[:, i], label=f"u{i}")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("torque [N m]")
        ax.legend(loc="best", fontsize=8)
        ax.set_title("actuator torques")
        paths.append(_finish(fig, os.path.join(out_dir, f"{prefix}_torques.png")))

    if traj.y is not None and len(traj.y):
        fig, ax = plt.subplots(figsize=(7, 4))
        Y = np.atleast_2d(np.asarray(traj.y))
        if Y.shape[0] != len(t):
            Y = Y.T
        for i in range(Y.shape[1]):
            ax.plot(t[:len(Y)], Y[:, i], label=f"y{i}")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("output")
        ax.legend(loc="best", fontsize=8)
        ax.set_title("virtual constraint outputs")
        paths.append(_finish(fig, os.path.join(out_dir, f"{prefix}_outputs.png")))
    return paths


def zero_dynamics_figure(table, out_dir, prefix="zero-dynamics"):
    """kappa1, kappa2 and V_zero against the phasing variable."""
    th = np.asarray(table["theta"])
    fig, axes = plt.subplots(3, 1, figsize=(6.5, 7), sharex=True)
    axes[0].plot(th, table["kappa1"])
    axes[0].set_ylabel("kappa1")
    axes[1].plot(th, table["kappa2"])
    axes[1].set_ylabel("kappa2")
    axes[2].plot(th, table["v_zero"])
    axes[2].set_ylabel("V_zero")
    axes[2].set_xlabel("theta [rad]")
    axes[0].set_title("zero dynamics coefficients")
    return [_finish(fig, os.path.join(out_dir, f"{prefix}_profile.png"))]


def contraction_figure(errors, labels, out_dir, prefix="event-control"):
    """Per-step error norms on a log scale for one or more policies."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for err, label in zip(errors, labels):
        ax.semilogy(np.arange(1, len(err) + 1), err, "o-", label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("|x_k - x*|")
    ax.legend(loc="best")
    ax.set_title("step-to-step contraction")
    return [_finish(fig, os.path.join(out_dir, f"{prefix}_contraction.png"))]


def design_figure(log, out_dir, prefix="gait-design"):
    """Best objective value against evaluation count."""
    log = np.asarray(log, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    best = np.minimum.accumulate(log[:, 1])
    ax.plot(log[:, 0], best)
    ax.set_xlabel("evaluation")
    ax.set_ylabel("best objective")
    ax.set_yscale("log")
    ax.set_title("gait search progress")
    return [_finish(fig, os.path.join(out_dir, f"{prefix}_progress.png"))]
