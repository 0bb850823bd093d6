"""Delimited output and batch figure rendering for the command-line tools.

Every CSV starts with ``# key=value`` provenance lines (config hash, grid
sizes) so a table can be traced back to the run that produced it.  Figures
are rendered headless and written next to the tables; numeric output is
deterministic for a fixed run spec, figures are best-effort artifacts.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .controls import DiscreteControl
from .forward import StateTrajectory
from .optimizer import RunRecord

__all__ = [
    "config_hash",
    "write_csv",
    "write_json",
    "trajectory_columns",
    "interface_columns",
    "render_state_figure",
    "render_interface_figure",
    "render_convergence_figure",
    "render_controls_figure",
    "render_grad_check_figure",
    "render_norms_figure",
    "render_measurements_figure",
]


def config_hash(payload: dict) -> str:
    """sha256 over the canonical JSON form of a run-spec payload."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, columns: dict, metadata: dict | None = None) -> Path:
    """Write named columns as CSV with leading ``# key=value`` comment lines."""
    path = Path(path)
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[name])) for name in names]
    length = len(arrays[0])
    if any(len(arr) != length for arr in arrays):
        raise ValueError("csv columns must have equal length")
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"# {key}={_fmt(value)}")
    lines.append(",".join(names))
    for row in range(length):
        lines.append(",".join(_fmt(arr[row]) for arr in arrays))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def trajectory_columns(traj: StateTrajectory) -> dict:
    """Long-form nodal table: level, time, node index, position, value."""
    tg, sg = traj.time_grid, traj.spatial_grid
    ks, ts, idx, xs, us = [], [], [], [], []
    for k in range(tg.n + 1):
        m = int(sg.boundary_index[k])
        count = m + 1
        ks.append(np.full(count, k))
        ts.append(np.full(count, tg.nodes[k]))
        idx.append(np.arange(count))
        xs.append(sg.nodes[:count])
        us.append(traj.u[k, :count])
    return {
        "k": np.concatenate(ks),
        "t": np.concatenate(ts),
        "i": np.concatenate(idx),
        "x": np.concatenate(xs),
        "u": np.concatenate(us),
    }


def interface_columns(traj: StateTrajectory, mu_avg: np.ndarray | None = None) -> dict:
    tg = traj.time_grid
    cols = {
        "k": np.arange(tg.n + 1),
        "t": tg.nodes,
        "s": traj.boundary,
        "u_interface": traj.boundary_values(),
    }
    if mu_avg is not None:
        cols["mu_avg"] = mu_avg
    return cols


# -- figures ---------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def _masked_state(traj: StateTrajectory) -> np.ndarray:
    sg = traj.spatial_grid
    grid = np.array(traj.u, dtype=float)
    for k in range(traj.time_grid.n + 1):
        grid[k, int(sg.boundary_index[k]) + 1 :] = np.nan
    return grid


def render_state_figure(path, traj: StateTrajectory) -> Path:
    plt = _pyplot()
    tg, sg = traj.time_grid, traj.spatial_grid
    grid = _masked_state(traj)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    mesh = ax.pcolormesh(sg.nodes, tg.nodes, grid, shading="nearest")
    ax.plot(traj.boundary, tg.nodes, color="white", lw=1.5, label="free boundary")
    fig.colorbar(mesh, ax=ax, label="temperature")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title("state on the moving domain")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_interface_figure(path, traj: StateTrajectory,
                            mu_avg: np.ndarray | None = None) -> Path:
    plt = _pyplot()
    tg = traj.time_grid
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.6, 3.6))
    ax0.plot(tg.nodes, traj.boundary, marker=".", lw=1.0)
    ax0.set_xlabel("t")
    ax0.set_ylabel("s(t)")
    ax0.set_title("free boundary")
    ax1.plot(tg.nodes, traj.boundary_values(), marker=".", lw=1.0,
             label="computed trace")
    if mu_avg is not None:
        ax1.step(tg.nodes[1:], mu_avg[1:], where="pre", ls="--",
                 label="measured (slab avg)")
        ax1.legend()
    ax1.set_xlabel("t")
    ax1.set_ylabel("u(s(t), t)")
    ax1.set_title("interface temperature")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_convergence_figure(path, record: RunRecord) -> Path:
    plt = _pyplot()
    costs = [it.cost.total for it in record.iterates]
    viols = [it.violation for it in record.iterates]
    stages = [it.stage for it in record.iterates]
    steps = np.arange(1, len(costs) + 1)
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.6, 3.6))
    if costs:
        ax0.semilogy(steps, np.maximum(costs, 1e-300), marker=".")
        for boundary in np.flatnonzero(np.diff(stages)) + 1:
            ax0.axvline(steps[boundary] - 0.5, color="gray", ls=":", lw=0.8)
        ax1.semilogy(steps, np.maximum(viols, 1e-300), marker=".")
    ax0.set_xlabel("accepted iterate")
    ax0.set_ylabel("penalized cost")
    ax0.set_title("descent history")
    ax1.set_xlabel("accepted iterate")
    ax1.set_ylabel("cap violation measure")
    ax1.set_title("constraint violation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_controls_figure(path, control: DiscreteControl,
                           reference: DiscreteControl | None = None,
                           reference_label: str = "initial") -> Path:
    plt = _pyplot()
    tg, sg = control.time_grid, control.spatial_grid
    fig, axes = plt.subplots(1, 3, figsize=(11.5, 3.4))
    axes[0].plot(tg.nodes, control.s, marker=".", label="result")
    axes[1].plot(tg.nodes, control.g, marker=".", label="result")
    if reference is not None:
        axes[0].plot(reference.time_grid.nodes, reference.s, ls="--",
                     label=reference_label)
        axes[1].plot(reference.time_grid.nodes, reference.g, ls="--",
                     label=reference_label)
        axes[0].legend()
        axes[1].legend()
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("s")
    axes[0].set_title("free boundary samples")
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("g")
    axes[1].set_title("boundary flux samples")
    mesh = axes[2].pcolormesh(
        sg.nodes, tg.nodes[: control.f.shape[0] + 1], control.f, shading="flat"
    )
    fig.colorbar(mesh, ax=axes[2], label="f")
    axes[2].set_xlabel("x")
    axes[2].set_ylabel("t")
    axes[2].set_title("source density cells")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_grad_check_figure(path, analytic, fd) -> Path:
    plt = _pyplot()
    analytic = np.asarray(analytic, dtype=float)
    fd = np.asarray(fd, dtype=float)
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    lo = min(analytic.min(), fd.min())
    hi = max(analytic.max(), fd.max())
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], color="gray", lw=0.8)
    ax.plot(analytic, fd, "o", ms=5)
    ax.set_xlabel("adjoint pairing")
    ax.set_ylabel("central difference")
    ax.set_title("gradient consistency")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_norms_figure(path, names, values, bound: float | None = None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    pos = np.arange(len(names))
    ax.bar(pos, values)
    if bound is not None:
        ax.axhline(bound, color="red", ls="--", lw=1.0, label="admissible bound")
        ax.legend()
    ax.set_xticks(pos, names, rotation=20, ha="right")
    ax.set_ylabel("norm")
    ax.set_title("control block norms")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_measurements_figure(path, w_breaks, w_values, mu_breaks, mu_values,
                               s_star: float) -> Path:
    plt = _pyplot()
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8.6, 3.6))
    ax0.stairs(w_values, w_breaks)
    ax0.axvline(s_star, color="red", ls="--", lw=1.0, label="final boundary")
    ax0.set_xlabel("x")
    ax0.set_ylabel("w")
    ax0.set_title("final temperature")
    ax0.legend()
    ax1.stairs(mu_values, mu_breaks)
    ax1.set_xlabel("t")
    ax1.set_ylabel("mu")
    ax1.set_title("interface temperature")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
