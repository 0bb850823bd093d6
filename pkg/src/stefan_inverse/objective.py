"""Cost functional: measurement misfits plus the quadratic cap penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import ContinuousControl, DiscreteControl
from .forward import StateTrajectory
from .problem import (
    ProblemData,
    cell_average_space,
    steklov_time_average,
    _GL_NODES,
    _GL_WEIGHTS,
)

__all__ = ["CostBreakdown", "subplus", "cost_discrete", "cost_continuous"]


def subplus(x):
    """Positive part, elementwise."""
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class CostBreakdown:
    final_misfit: float
    boundary_misfit: float
    final_boundary_misfit: float
    penalty: float
    penalty_weight: float
    constraint_violation: float

    @property
    def total(self) -> float:
        return (
            self.final_misfit
            + self.boundary_misfit
            + self.final_boundary_misfit
            + self.penalty
        )

    def to_dict(self) -> dict:
        return {
            "final_misfit": self.final_misfit,
            "boundary_misfit": self.boundary_misfit,
            "final_boundary_misfit": self.final_boundary_misfit,
            "penalty": self.penalty,
            "penalty_weight": self.penalty_weight,
            "constraint_violation": self.constraint_violation,
            "total": self.total,
        }


def interface_temperature_averages(data: ProblemData, tgrid) -> np.ndarray:
    """Steklov averages of the measured interface temperature, index k = 1..n."""
    out = np.zeros(tgrid.n + 1)
    for k in range(1, tgrid.n + 1):
        out[k] = steklov_time_average(lambda t: data.mu(0.0, t), k, tgrid)
    return out


def cost_discrete(
    traj: StateTrajectory,
    control: DiscreteControl,
    data: ProblemData,
    penalty_weight: float,
    mu_avg: np.ndarray | None = None,
) -> CostBreakdown:
    """Discrete cost of a trajectory.

    Final misfit integrates over the cells active at the last level against
    cell averages of the measured final temperature; the interface misfit uses
    Steklov averages of the measured curve; the penalty integrates the squared
    positive excess over active cells only.
    """
    tg, sg = traj.time_grid, traj.spatial_grid
    n, tau = tg.n, tg.tau
    h = sg.steps
    bidx = sg.boundary_index
    u = traj.u

    m_final = int(bidx[n])
    w_cells = cell_average_space(data.w, sg, data.t_final, m_final)
    final_misfit = data.beta0 * float(
        np.sum(h[:m_final] * (u[n, :m_final] - w_cells) ** 2)
    )

    if mu_avg is None:
        mu_avg = interface_temperature_averages(data, tg)
    trace = u[np.arange(1, n + 1), bidx[1:]]
    boundary_misfit = data.beta1 * float(np.sum(tau * (trace - mu_avg[1:]) ** 2))

    final_boundary = data.beta2 * float((control.s[n] - data.s_star) ** 2)

    violation = 0.0
    for k in range(1, n + 1):
        m = int(bidx[k])
        excess = subplus(u[k, :m] - data.u_star)
        violation += tau * float(np.sum(h[:m] * excess**2))

    return CostBreakdown(
        final_misfit=final_misfit,
        boundary_misfit=boundary_misfit,
        final_boundary_misfit=final_boundary,
        penalty=float(penalty_weight) * violation,
        penalty_weight=float(penalty_weight),
        constraint_violation=violation,
    )


def _panel_points(lo: float, hi: float, panels: int):
    edges = np.linspace(lo, hi, panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    pts = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return pts, wts


def cost_continuous(
    u_eval,
    control: ContinuousControl,
    data: ProblemData,
    penalty_weight: float,
    panels: int = 32,
) -> CostBreakdown:
    """Cost of a continuous state under a continuous control.

    ``u_eval(x, t)`` must accept array x at scalar t.  Integrals use composite
    4-point panels: ``panels`` of them in time and per spatial line.
    """
    t_final = data.t_final
    s_T = float(control.s(t_final))

    xq, xw = _panel_points(0.0, s_T, panels)
    wf = np.asarray(data.w(xq, t_final), dtype=float)
    uf = np.asarray(u_eval(xq, t_final), dtype=float)
    final_misfit = data.beta0 * float(np.sum(xw * (uf - wf) ** 2))

    tq, tw = _panel_points(0.0, t_final, panels)
    trace_sq = np.empty(len(tq))
    for j, t in enumerate(tq):
        sx = float(control.s(t))
        u_b = float(np.asarray(u_eval(np.array([sx]), t))[0])
        trace_sq[j] = (u_b - float(data.mu(0.0, t))) ** 2
    boundary_misfit = data.beta1 * float(np.sum(tw * trace_sq))

    final_boundary = data.beta2 * float((s_T - data.s_star) ** 2)

    violation = 0.0
    for j, t in enumerate(tq):
        sx = float(control.s(t))
        xs, ws = _panel_points(0.0, sx, panels)
        excess = subplus(np.asarray(u_eval(xs, t), dtype=float) - data.u_star)
        violation += tw[j] * float(np.sum(ws * excess**2))

    return CostBreakdown(
        final_misfit=final_misfit,
        boundary_misfit=boundary_misfit,
        final_boundary_misfit=final_boundary,
        penalty=float(penalty_weight) * violation,
        penalty_weight=float(penalty_weight),
        constraint_violation=violation,
    )
