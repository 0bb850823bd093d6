"""Implicit moving-grid scheme for the one-phase problem on [0, s(t)].

Each time step solves one tridiagonal system on the nodes active at that
level (0..m_k).  Row 0 encodes the flux condition at x = 0, interior rows the
conservative three-point stencil with Steklov-averaged coefficients, and the
last row the interface flux balance.  Solved rows are extended to the full
strip [0, ell] by linear interpolation composed with iterated reflection
about the boundary, so trajectories always carry (n+1) x (N+1) values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .controls import DiscreteControl, interpolate_control
from .grids import SpatialGrid, TimeGrid, reflect_array
from .problem import (
    ProblemData,
    steklov_cell_table,
    steklov_flux_trace_average,
    steklov_time_average,
    steklov_trace_average,
)

__all__ = [
    "SingularStepError",
    "TridiagonalSystem",
    "StepTables",
    "StateTrajectory",
    "StateInterpolant",
    "EnergyReport",
    "solve_step",
    "build_step_tables",
    "assemble_step",
    "forward_solve",
    "extend_row",
    "energy_diagnostics",
    "weak_identity_residual",
]

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
_PIVOT_REL = 1e-14


class SingularStepError(RuntimeError):
    """Elimination broke down (zero/near-zero pivot or unstable residual)."""

    def __init__(self, level: int, message: str):
        super().__init__(f"time level {level}: {message}")
        self.level = level


@dataclass(frozen=True, eq=False)
class TridiagonalSystem:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray
    level: int

    def __post_init__(self):
        m = len(self.diag)
        if len(self.lower) != m - 1 or len(self.upper) != m - 1 or len(self.rhs) != m:
            raise ValueError("inconsistent tridiagonal band lengths")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y

    def dense(self) -> np.ndarray:
        m = len(self.diag)
        a = np.zeros((m, m))
        np.fill_diagonal(a, self.diag)
        a[np.arange(1, m), np.arange(m - 1)] = self.lower
        a[np.arange(m - 1), np.arange(1, m)] = self.upper
        return a


def solve_step(system: TridiagonalSystem) -> np.ndarray:
    """Thomas elimination with pivot guard and residual verification."""
    d = system.diag.astype(float).copy()
    r = system.rhs.astype(float).copy()
    lo = system.lower
    up = system.upper
    m = len(d)
    scale = max(
        float(np.max(np.abs(system.diag))),
        float(np.max(np.abs(lo))) if m > 1 else 0.0,
        float(np.max(np.abs(up))) if m > 1 else 0.0,
    )
    tiny = _PIVOT_REL * max(1.0, scale)
    for i in range(1, m):
        piv = d[i - 1]
        if abs(piv) <= tiny:
            raise SingularStepError(system.level, f"near-zero pivot at row {i - 1}")
        w = lo[i - 1] / piv
        d[i] -= w * up[i - 1]
        r[i] -= w * r[i - 1]
    if abs(d[-1]) <= tiny:
        raise SingularStepError(system.level, f"near-zero pivot at row {m - 1}")
    x = np.empty(m)
    x[-1] = r[-1] / d[-1]
    for i in range(m - 2, -1, -1):
        x[i] = (r[i] - up[i] * x[i + 1]) / d[i]
    resid = float(np.max(np.abs(system.matvec(x) - system.rhs)))
    limit = RESIDUAL_TOL * (1.0 + float(np.max(np.abs(system.rhs))))
    if resid > limit:
        raise SingularStepError(
            system.level, f"elimination residual {resid:.3e} exceeds {limit:.3e}"
        )
    return x


@dataclass(frozen=True, eq=False)
class StepTables:
    """Per-solve caches: Steklov coefficient averages and interface traces."""

    a: np.ndarray          # (n, N) cell averages of the diffusion field
    b: np.ndarray
    c: np.ndarray
    g_bar: np.ndarray      # (n+1,), slab averages of the flux interpolant, index k
    chi_trace: np.ndarray  # (n+1,), slab averages of chi along the boundary curve
    flux_trace: np.ndarray # (n+1,), slab averages of gamma * s'


def build_step_tables(control: DiscreteControl, data: ProblemData) -> StepTables:
    tg, sg = control.time_grid, control.spatial_grid
    n = tg.n
    cc = interpolate_control(control)
    a = steklov_cell_table(data.a, sg, tg)
    b = steklov_cell_table(data.b, sg, tg)
    c = steklov_cell_table(data.c, sg, tg)
    # slab average of the piecewise-linear flux = endpoint mean
    g_bar = np.zeros(n + 1)
    g_bar[1:] = 0.5 * (control.g[:-1] + control.g[1:])
    chi_trace = np.zeros(n + 1)
    flux_trace = np.zeros(n + 1)
    for k in range(1, n + 1):
        chi_trace[k] = steklov_trace_average(data.chi, cc.s, k, tg, data.ell)
        flux_trace[k] = steklov_flux_trace_average(
            data.gamma, cc.s, cc.s_prime, k, tg, data.ell
        )
    return StepTables(a=a, b=b, c=c, g_bar=g_bar, chi_trace=chi_trace,
                      flux_trace=flux_trace)


def assemble_step(
    k: int,
    prev_row: np.ndarray,
    control: DiscreteControl,
    data: ProblemData,
    tables: StepTables | None = None,
) -> TridiagonalSystem:
    """Tridiagonal system for the level-k row (k = 1..n), m_k + 1 unknowns."""
    tg, sg = control.time_grid, control.spatial_grid
    if not 1 <= k <= tg.n:
        raise ValueError(f"time level {k} outside 1..{tg.n}")
    if tables is None:
        tables = build_step_tables(control, data)
    m = int(sg.boundary_index[k])
    if len(prev_row) < m + 1:
        raise ValueError(f"previous row shorter than the {m + 1} active nodes")
    tau = tg.tau
    h = sg.steps
    arow, brow, crow = tables.a[k - 1], tables.b[k - 1], tables.c[k - 1]
    frow = control.f[k - 1]

    lower = np.empty(m)
    diag = np.empty(m + 1)
    upper = np.empty(m)
    rhs = np.empty(m + 1)

    h0 = h[0]
    ab0 = arow[0] + h0 * brow[0]
    hh_tau = h0 * h0 / tau
    diag[0] = ab0 - h0 * h0 * crow[0] + hh_tau
    upper[0] = -ab0
    rhs[0] = hh_tau * prev_row[0] - h0 * h0 * frow[0] - h0 * tables.g_bar[k]

    if m > 1:
        i = np.arange(1, m)
        left = arow[i - 1] * h[i]
        right = arow[i] * h[i - 1]
        cross = brow[i] * h[i] * h[i - 1]
        vol = h[i] * h[i] * h[i - 1]
        vol_tau = vol / tau
        lower[:-1] = -left
        diag[1:m] = left + right + cross - crow[i] * vol + vol_tau
        upper[1:] = -(right + cross)
        rhs[1:m] = -vol * frow[i] + vol_tau * prev_row[1:m]

    am = arow[m - 1]
    lower[m - 1] = -am
    diag[m] = am
    rhs[m] = -h[m - 1] * (tables.flux_trace[k] - tables.chi_trace[k])

    return TridiagonalSystem(lower=lower, diag=diag, upper=upper, rhs=rhs, level=k)


def extend_row(active: np.ndarray, k_boundary: float, sgrid: SpatialGrid) -> np.ndarray:
    """Extend an active row to all N+1 nodes by reflection about the boundary."""
    m = len(active) - 1
    full = np.empty(len(sgrid.nodes))
    full[: m + 1] = active
    if m + 1 < len(sgrid.nodes):
        pulled = reflect_array(sgrid.nodes[m + 1 :], k_boundary)
        full[m + 1 :] = np.interp(pulled, sgrid.nodes[: m + 1], active)
    return full


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    u: np.ndarray                 # (n+1, N+1) nodal values, rows extended
    time_grid: TimeGrid
    spatial_grid: SpatialGrid
    boundary: np.ndarray          # the boundary samples the grid was built from
    step_residuals: np.ndarray    # (n+1,), elimination residuals per level

    @property
    def boundary_index(self) -> np.ndarray:
        return self.spatial_grid.boundary_index

    def boundary_values(self) -> np.ndarray:
        """u at the moving boundary node, per time level."""
        return self.u[np.arange(len(self.u)), self.boundary_index]

    def interpolants(self) -> "StateInterpolant":
        return StateInterpolant(self)


def forward_solve(
    control: DiscreteControl,
    data: ProblemData,
    tables: StepTables | None = None,
) -> StateTrajectory:
    """March the implicit scheme over all time levels."""
    tg, sg = control.time_grid, control.spatial_grid
    x = sg.nodes
    if tables is None:
        tables = build_step_tables(control, data)

    n = tg.n
    u = np.empty((n + 1, len(x)))
    residuals = np.zeros(n + 1)

    m0_level = int(sg.boundary_index[0])
    init = np.asarray(data.phi(x[: m0_level + 1], 0.0), dtype=float)
    u[0] = extend_row(init, control.s[0], sg)

    for k in range(1, n + 1):
        system = assemble_step(k, u[k - 1], control, data, tables=tables)
        sol = solve_step(system)
        residuals[k] = float(np.max(np.abs(system.matvec(sol) - system.rhs)))
        u[k] = extend_row(sol, control.s[k], sg)

    return StateTrajectory(
        u=u,
        time_grid=tg,
        spatial_grid=sg,
        boundary=control.s.copy(),
        step_residuals=residuals,
    )


@dataclass(frozen=True, eq=False)
class StateInterpolant:
    """Evaluators for the three standard interpolants of a trajectory.

    ``at_level`` is piecewise linear on the active nodes composed with the
    reflection pullback beyond the boundary.  ``step_constant`` freezes the
    level within each time slab, ``time_linear`` interpolates linearly between
    slab endpoints (and extends constantly past t_final), ``cell_constant``
    returns the raw nodal value of the containing cell.
    """

    traj: StateTrajectory

    def _check_x(self, x: np.ndarray):
        ell = self.traj.spatial_grid.ell
        if np.any(x < -1e-12) or np.any(x > ell * (1.0 + 1e-12)):
            raise ValueError(f"x outside [0, {ell}]")

    def at_level(self, x, k: int):
        traj = self.traj
        if not 0 <= k <= traj.time_grid.n:
            raise ValueError(f"time level {k} outside 0..{traj.time_grid.n}")
        x = np.asarray(x, dtype=float)
        scalar = x.shape == ()
        x = np.atleast_1d(np.clip(x, 0.0, traj.spatial_grid.ell))
        self._check_x(x)
        m = int(traj.boundary_index[k])
        nodes = traj.spatial_grid.nodes
        pulled = reflect_array(x, traj.boundary[k])
        vals = np.interp(pulled, nodes[: m + 1], traj.u[k, : m + 1])
        return vals[0] if scalar else vals

    def _slab(self, t: float) -> int:
        tg = self.traj.time_grid
        if t < -1e-12:
            raise ValueError(f"t={t} is negative")
        if t > tg.t_final * (1.0 + 1e-12):
            raise ValueError(f"t={t} beyond t_final={tg.t_final}")
        k = int(np.searchsorted(tg.nodes, min(max(t, 0.0), tg.t_final), side="left"))
        return min(max(k, 0), tg.n)

    def step_constant(self, x, t: float):
        return self.at_level(x, self._slab(t))

    def time_linear(self, x, t: float):
        tg = self.traj.time_grid
        if t < -1e-12:
            raise ValueError(f"t={t} is negative")
        if t >= tg.t_final:
            return self.at_level(x, tg.n)
        k = max(self._slab(t), 1)
        w = (t - tg.nodes[k - 1]) / tg.tau
        lo = self.at_level(x, k - 1)
        hi = self.at_level(x, k)
        return lo + (hi - lo) * w

    def cell_constant(self, x, t: float):
        traj = self.traj
        k = max(self._slab(t), 1)
        x = np.asarray(x, dtype=float)
        scalar = x.shape == ()
        x = np.atleast_1d(x)
        self._check_x(x)
        nodes = traj.spatial_grid.nodes
        i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
        vals = traj.u[k, i]
        return vals[0] if scalar else vals


# -- energy diagnostics ----------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    """Two-sided stability diagnostics (solution energy vs data energy)."""

    l2_lhs: float
    l2_rhs: float
    l2_ratio: float
    h1_lhs: float
    h1_rhs: float
    h1_ratio: float

    def to_dict(self) -> dict:
        return {
            "l2_lhs": self.l2_lhs,
            "l2_rhs": self.l2_rhs,
            "l2_ratio": self.l2_ratio,
            "h1_lhs": self.h1_lhs,
            "h1_rhs": self.h1_rhs,
            "h1_ratio": self.h1_ratio,
        }


def _squared_l2_of_curve(fn, tgrid: TimeGrid) -> float:
    total = 0.0
    for k in range(1, tgrid.n + 1):
        t0, t1 = tgrid.nodes[k - 1], tgrid.nodes[k]
        total += (t1 - t0) * steklov_time_average(lambda t: np.asarray(fn(t)) ** 2, k, tgrid)
    return total


def _quarter_norm_sq(fn, tgrid: TimeGrid, per_slab: int = 4) -> float:
    """Squared L2 plus squared order-1/4 fractional seminorm of a time curve."""
    from .controls import gagliardo_seminorm

    num = per_slab * tgrid.n
    dt = tgrid.t_final / num
    t = (np.arange(num) + 0.5) * dt
    vals = np.asarray(fn(t), dtype=float)
    l2_sq = float(np.sum(vals**2) * dt)
    semi = gagliardo_seminorm(vals, 0.25, spacing=dt)
    return l2_sq + semi**2


def energy_diagnostics(
    traj: StateTrajectory, control: DiscreteControl, data: ProblemData
) -> EnergyReport:
    tg, sg = traj.time_grid, traj.spatial_grid
    n, tau = tg.n, tg.tau
    h = sg.steps
    u = traj.u
    cc = interpolate_control(control)

    # solution side, zeroth order: peak weighted mass + dissipation sum
    mass = np.max(np.sum(u[:, :-1] ** 2 * h[None, :], axis=1))
    ux = (u[:, 1:] - u[:, :-1]) / h[None, :]
    dissip = tau * np.sum(ux[1:] ** 2 * h[None, :])
    l2_lhs = float(mass + dissip)

    # data side, zeroth order
    m_init = int(sg.boundary_index[0])
    phi_cells = np.asarray(
        [0.5 * (data.phi(sg.nodes[i], 0.0) + data.phi(sg.nodes[i + 1], 0.0))
         for i in range(m_init)]
    )
    phi_sq = float(np.sum(phi_cells**2 * h[:m_init]))
    g_sq = _squared_l2_of_curve(cc.g, tg)
    f_sq = tau * float(np.sum(control.f**2 * h[None, :]))
    gam_sq = _squared_l2_of_curve(
        lambda t: np.asarray(data.gamma(np.clip(cc.s(t), 0.0, sg.ell), t))
        * np.asarray(cc.s_prime(t)),
        tg,
    )
    chi_sq = _squared_l2_of_curve(
        lambda t: np.asarray(data.chi(np.clip(cc.s(t), 0.0, sg.ell), t)), tg
    )
    growth = 0.0
    bidx = sg.boundary_index
    for k in range(1, n):
        if control.s[k + 1] > control.s[k]:
            m_now, m_next = int(bidx[k]), int(bidx[k + 1])
            growth += float(np.sum(h[m_now:m_next] * u[k, m_now:m_next] ** 2))
    l2_rhs = float(phi_sq + g_sq + f_sq + gam_sq + chi_sq + growth)

    # solution side, first order, on the constant-beyond-boundary extension
    ext = u.copy()
    for k in range(n + 1):
        m = int(bidx[k])
        ext[k, m + 1 :] = ext[k, m]
    ex = (ext[:, 1:] - ext[:, :-1]) / h[None, :]
    grad_peak = np.max(np.sum(ex**2 * h[None, :], axis=1))
    et = (ext[1:] - ext[:-1]) / tau
    time_sq = tau * np.sum(et[:, :-1] ** 2 * h[None, :])
    ext_mixed = (ex[1:] - ex[:-1]) / tau
    mixed_sq = tau**2 * np.sum(ext_mixed**2 * h[None, :])
    h1_lhs = float(grad_peak + time_sq + mixed_sq)

    phi_h1 = phi_sq + float(
        np.sum(
            np.asarray(
                [data.phi.dx(0.5 * (sg.nodes[i] + sg.nodes[i + 1]), 0.0)
                 for i in range(m_init)]
            )
            ** 2
            * h[:m_init]
        )
    )
    g_quarter = _quarter_norm_sq(cc.g, tg)
    gam_quarter = _quarter_norm_sq(
        lambda t: np.asarray(data.gamma(np.clip(cc.s(t), 0.0, sg.ell), t))
        * np.asarray(cc.s_prime(t)),
        tg,
    )
    chi_quarter = _quarter_norm_sq(
        lambda t: np.asarray(data.chi(np.clip(cc.s(t), 0.0, sg.ell), t)), tg
    )
    h1_rhs = float(phi_sq + phi_h1 + g_quarter + gam_quarter + chi_quarter + f_sq)

    return EnergyReport(
        l2_lhs=l2_lhs,
        l2_rhs=l2_rhs,
        l2_ratio=l2_lhs / l2_rhs if l2_rhs > 0 else math.inf,
        h1_lhs=h1_lhs,
        h1_rhs=h1_rhs,
        h1_ratio=h1_lhs / h1_rhs if h1_rhs > 0 else math.inf,
    )


def weak_identity_residual(
    traj: StateTrajectory,
    control: DiscreteControl,
    data: ProblemData,
    k: int,
    eta: np.ndarray,
    tables: StepTables | None = None,
) -> float:
    """Summation-by-parts residual of level k contracted with a test vector.

    Vanishes (to roundoff) at the solved state; this is the identity the
    step systems are derived from, recomputed independently of the assembly.
    """
    tg, sg = traj.time_grid, traj.spatial_grid
    if tables is None:
        tables = build_step_tables(control, data)
    m = int(sg.boundary_index[k])
    eta = np.asarray(eta, dtype=float)
    if len(eta) != m + 1:
        raise ValueError(f"test vector needs {m + 1} entries, got {len(eta)}")
    h = sg.steps[:m]
    tau = tg.tau
    unow = traj.u[k, : m + 1]
    uprev = traj.u[k - 1, : m + 1]
    ux = (unow[1:] - unow[:-1]) / h
    ex = (eta[1:] - eta[:-1]) / h
    ut = (unow - uprev) / tau
    arow, brow, crow = tables.a[k - 1, :m], tables.b[k - 1, :m], tables.c[k - 1, :m]
    frow = control.f[k - 1, :m]
    cells = np.sum(
        h
        * (
            arow * ux * ex
            - brow * ux * eta[:-1]
            - crow * unow[:-1] * eta[:-1]
            + frow * eta[:-1]
            + ut[:-1] * eta[:-1]
        )
    )
    boundary = (tables.flux_trace[k] - tables.chi_trace[k]) * eta[m]
    left = tables.g_bar[k] * eta[0]
    return float(cells + boundary + left)
