"""Projected gradient descent with penalty continuation.

Each stage fixes the state-cap penalty weight, runs an Armijo backtracking
line search on the projected iterates, then multiplies the weight and warm
starts the next stage from the current control.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import (
    ControlDirection,
    adjoint_solve,
    assemble_gradient,
    discrete_cost_gradient,
    pairing,
)
from .controls import DiscreteControl, project_control, rebuild_control
from .forward import SingularStepError, StateTrajectory, forward_solve
from .objective import CostBreakdown, cost_discrete, interface_temperature_averages
from .problem import ProblemData

__all__ = [
    "SolverConfig",
    "IterateRecord",
    "StageRecord",
    "RunRecord",
    "violation_measure",
    "minimize",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    outer_iters: int = 3
    inner_iters: int = 30
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    grad_tol: float = 1e-8
    violation_tol: float = 1e-8
    feasible_set: str = "plain"
    step_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    alpha_min: float = 1e-12
    normalize_blocks: bool = True
    gradient: str = "discrete"

    def __post_init__(self):
        if self.penalty_init <= 0 or self.penalty_growth < 1:
            raise ValueError("penalty schedule must grow from a positive weight")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.feasible_set not in ("plain", "compatible"):
            raise ValueError(f"unknown feasible set {self.feasible_set!r}")
        if self.gradient not in ("discrete", "adjoint"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")

    def to_dict(self) -> dict:
        return {
            "penalty_init": self.penalty_init,
            "penalty_growth": self.penalty_growth,
            "outer_iters": self.outer_iters,
            "inner_iters": self.inner_iters,
            "armijo_c1": self.armijo_c1,
            "backtrack": self.backtrack,
            "step0": self.step0,
            "grad_tol": self.grad_tol,
            "violation_tol": self.violation_tol,
            "feasible_set": self.feasible_set,
            "step_scale": list(self.step_scale),
            "alpha_min": self.alpha_min,
            "normalize_blocks": self.normalize_blocks,
            "gradient": self.gradient,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SolverConfig":
        kwargs = dict(payload)
        if "step_scale" in kwargs:
            kwargs["step_scale"] = tuple(kwargs["step_scale"])
        return cls(**kwargs)


@dataclass(frozen=True)
class IterateRecord:
    stage: int
    iteration: int
    cost: CostBreakdown
    grad_norm_sq: float
    step_size: float
    violation: float

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "iteration": self.iteration,
            "cost": self.cost.to_dict(),
            "grad_norm_sq": self.grad_norm_sq,
            "step_size": self.step_size,
            "violation": self.violation,
        }


@dataclass(frozen=True)
class StageRecord:
    stage: int
    penalty_weight: float
    iterations: int
    initial_cost: float
    final_cost: float
    final_violation: float
    stopped_on: str

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "penalty_weight": self.penalty_weight,
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "final_violation": self.final_violation,
            "stopped_on": self.stopped_on,
        }


@dataclass
class RunRecord:
    iterates: list[IterateRecord] = field(default_factory=list)
    stages: list[StageRecord] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterates": [it.to_dict() for it in self.iterates],
            "stages": [st.to_dict() for st in self.stages],
            "converged": self.converged,
            "wall_time": self.wall_time,
        }


def violation_measure(traj: StateTrajectory, data: ProblemData) -> float:
    """Space-time measure of cap excess: sum tau h_i (u - cap)_+^2 on cells."""
    tg, sg = traj.time_grid, traj.spatial_grid
    total = 0.0
    for k in range(1, tg.n + 1):
        m = int(sg.boundary_index[k])
        excess = np.maximum(traj.u[k, : m + 1] - data.u_star, 0.0)
        cell = 0.5 * (excess[:-1] ** 2 + excess[1:] ** 2)
        total += float(np.sum(cell * sg.steps[:m]))
    return tg.tau * total


_BLOCK_ORDER = ("g", "f", "s")


def _block_direction(grad, block: str, cfg: SolverConfig) -> ControlDirection | None:
    """Negative gradient restricted to one block, optionally unit-normalized."""
    tau = grad.time_grid.tau
    scale = dict(zip(("s", "g", "f"), cfg.step_scale))[block]
    ds = np.zeros_like(grad.d_s)
    dg = np.zeros_like(grad.d_g)
    df = np.zeros_like(grad.d_f)
    if block == "s":
        ds = -grad.d_s.copy()
        ds[0] = ds[1] = 0.0
        norm = np.sqrt(tau * np.sum(ds**2))
    elif block == "g":
        dg = -grad.d_g.copy()
        norm = np.sqrt(tau * np.sum(dg**2))
    else:
        df = -grad.d_f.copy()
        norm = np.sqrt(tau * np.sum(df**2 * grad.steps[None, :]))
    if norm == 0.0:
        return None
    if cfg.normalize_blocks:
        ds, dg, df = ds / norm, dg / norm, df / norm
    return ControlDirection(ds=scale * ds, dg=scale * dg, df=scale * df)


def _try_step(
    control: DiscreteControl,
    direction: ControlDirection,
    alpha: float,
    data: ProblemData,
    cfg: SolverConfig,
):
    """Projected trial iterate and its forward solve; None when infeasible."""
    s = np.clip(control.s + alpha * direction.ds, data.s_lower, data.ell)
    g = control.g + alpha * direction.dg
    f = control.f + alpha * direction.df
    s[0] = s[1] = data.s0
    try:
        trial = rebuild_control(s, g, f, control.spatial_grid, control.time_grid, data)
        trial = project_control(trial, data, feasible_set=cfg.feasible_set)
        traj = forward_solve(trial, data)
    except SingularStepError as err:
        logger.debug("singular solve during line search at level %d", err.level)
        return None
    except ValueError as err:
        logger.debug("infeasible trial during line search: %s", err)
        return None
    return trial, traj


def _line_search(
    current, direction, slope, cost, step_seed, data, weight, mu_avg, cfg
):
    """Armijo backtracking with one quadratic-interpolation refinement.

    Backtracks from the warm-started seed until the Armijo inequality
    holds, then fits a parabola through the accepted point and jumps to
    its vertex when that lowers the cost further (exact for step sizes on
    the cost's quadratic-in-(g, f) sections).
    """

    def evaluate(alpha):
        trial = _try_step(current, direction, alpha, data, cfg)
        if trial is None:
            return None
        trial_control, trial_traj = trial
        trial_cost = cost_discrete(
            trial_traj, trial_control, data, weight, mu_avg=mu_avg
        )
        return trial_control, trial_traj, trial_cost

    alpha = step_seed
    accepted = None
    while alpha >= cfg.alpha_min:
        outcome = evaluate(alpha)
        if outcome is not None:
            if outcome[2].total <= cost.total + cfg.armijo_c1 * alpha * slope:
                accepted = outcome
                break
        alpha *= cfg.backtrack
    if accepted is None:
        return alpha, None

    curvature = 2.0 * (accepted[2].total - cost.total - alpha * slope) / alpha**2
    if curvature > 0.0:
        vertex = -slope / curvature
        if vertex > 0 and abs(vertex / alpha - 1.0) > 1e-3:
            outcome = evaluate(vertex)
            if (outcome is not None
                    and outcome[2].total < accepted[2].total
                    and outcome[2].total
                    <= cost.total + cfg.armijo_c1 * vertex * slope):
                return vertex, outcome
    return alpha, accepted


def minimize(
    control: DiscreteControl,
    data: ProblemData,
    config: SolverConfig | None = None,
) -> tuple[DiscreteControl, RunRecord]:
    """Run the penalty-continuation descent from the given initial control."""
    cfg = config or SolverConfig()
    t_start = time.perf_counter()
    record = RunRecord()

    current = project_control(control, data, feasible_set=cfg.feasible_set)
    mu_avg = interface_temperature_averages(data, current.time_grid)
    traj = forward_solve(current, data)

    weight = cfg.penalty_init
    step_seed = {block: cfg.step0 for block in _BLOCK_ORDER}
    for stage in range(cfg.outer_iters):
        cost = cost_discrete(traj, current, data, weight, mu_avg=mu_avg)
        stage_initial = cost.total
        stopped_on = "iteration budget"
        iteration = 0

        for iteration in range(1, cfg.inner_iters + 1):
            if cfg.gradient == "discrete":
                grad = discrete_cost_gradient(
                    current, data, weight, traj=traj, mu_avg=mu_avg
                )
            else:
                adj = adjoint_solve(traj, current, data, weight, mu_avg=mu_avg)
                grad = assemble_gradient(
                    traj, adj, current, data, weight, mu_avg=mu_avg
                )
            gsq = grad.norm_sq()
            if gsq <= cfg.grad_tol:
                stopped_on = "gradient tolerance"
                iteration -= 1
                break

            moved_alpha = 0.0
            for block in _BLOCK_ORDER:
                direction = _block_direction(grad, block, cfg)
                if direction is None:
                    continue
                slope = pairing(grad, direction)
                if slope >= 0:
                    continue
                alpha, accepted = _line_search(
                    current, direction, slope, cost, step_seed[block],
                    data, weight, mu_avg, cfg,
                )
                if accepted is None:
                    continue
                step_seed[block] = alpha / cfg.backtrack
                moved_alpha = max(moved_alpha, alpha)
                current, traj, cost = accepted
            if moved_alpha == 0.0:
                stopped_on = "line search failure"
                iteration -= 1
                break

            record.iterates.append(
                IterateRecord(
                    stage=stage,
                    iteration=iteration,
                    cost=cost,
                    grad_norm_sq=gsq,
                    step_size=moved_alpha,
                    violation=cost.constraint_violation,
                )
            )

        record.stages.append(
            StageRecord(
                stage=stage,
                penalty_weight=weight,
                iterations=iteration,
                initial_cost=stage_initial,
                final_cost=cost.total,
                final_violation=cost.constraint_violation,
                stopped_on=stopped_on,
            )
        )
        logger.info(
            "stage %d (weight %.3g): cost %.6g -> %.6g, violation %.3g, %s",
            stage, weight, stage_initial, cost.total,
            cost.constraint_violation, stopped_on,
        )

        if cost.constraint_violation <= cfg.violation_tol:
            record.converged = True
            break
        weight *= cfg.penalty_growth

    record.wall_time = time.perf_counter() - t_start
    return current, record
