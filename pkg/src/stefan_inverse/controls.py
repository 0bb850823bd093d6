"""Control vectors: free boundary s, boundary flux g, distributed source f.

A discrete control holds nodal samples s_k, g_k (k = 0..n) and cellwise source
values f[k-1, i] (time step k = 1..n, cell i on the boundary-driven spatial
grid).  The admissible set pins s_0 = s_1 = s0, keeps s_k >= s_lower and caps
the three block norms at norm_bound; the compatible variant additionally pins
g_0 to the initial flux a(0,0) * phi'(0).

The continuous counterpart is a triple of callables.  ``interpolate_control``
produces it from samples: a C^1 piecewise-quadratic boundary curve (which runs
through the step midpoints, not the samples), a piecewise-linear flux, and a
piecewise-constant source.  ``sample_control`` maps back (pointwise boundary
and flux samples, exact cell averages for the source); it inverts
``interpolate_control`` on the flux and source blocks.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .grids import SpatialGrid, TimeGrid, build_spatial_grid, build_time_grid
from .problem import ProblemData, _GL_NODES, _GL_WEIGHTS

__all__ = [
    "DiscreteControl",
    "ContinuousControl",
    "boundary_h2_norm",
    "flux_h1_norm",
    "source_l2_norm",
    "control_norm",
    "interpolate_control",
    "sample_control",
    "discretize_control",
    "project_control",
    "remap_cell_values",
    "rebuild_control",
    "gagliardo_seminorm",
    "control_to_dict",
    "control_from_dict",
    "load_control",
    "save_control",
    "initial_flux_value",
    "interface_compatibility_residual",
]

logger = logging.getLogger(__name__)

# Rescaled iterates target norm_bound * (1 - _INTERIOR); a re-projection is
# then a bit-exact no-op.
_INTERIOR = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteControl:
    s: np.ndarray
    g: np.ndarray
    f: np.ndarray
    time_grid: TimeGrid
    spatial_grid: SpatialGrid

    def __post_init__(self):
        n = self.time_grid.n
        if self.s.shape != (n + 1,) or self.g.shape != (n + 1,):
            raise ValueError(
                f"boundary/flux blocks need shape ({n + 1},), got "
                f"{self.s.shape} and {self.g.shape}"
            )
        if self.f.shape != (n, self.spatial_grid.num_cells):
            raise ValueError(
                f"source block needs shape ({n}, {self.spatial_grid.num_cells}), "
                f"got {self.f.shape}"
            )
        if self.s[1] != self.s[0]:
            raise ValueError("the first two boundary samples must coincide")

    @property
    def n(self) -> int:
        return self.time_grid.n


@dataclass(frozen=True, eq=False)
class ContinuousControl:
    s: Callable
    g: Callable
    f: Callable
    s_prime: Callable | None = None


# -- discrete norms --------------------------------------------------------


def _h1_features(v: np.ndarray, tau: float) -> np.ndarray:
    root = math.sqrt(tau)
    return np.concatenate([root * v[:-1], (v[1:] - v[:-1]) / root])


def _h2_features(v: np.ndarray, tau: float) -> np.ndarray:
    return np.concatenate(
        [_h1_features(v, tau), (v[2:] - 2.0 * v[1:-1] + v[:-2]) / tau ** 1.5]
    )


def boundary_h2_norm(s, tau: float) -> float:
    """Discrete second-order norm of the boundary samples.

    Squared value: sum_{k<n} tau s_k^2 + sum_{k>=1} tau (first difference
    quotient)^2 + sum_{0<k<n} tau (second difference quotient)^2.
    """
    s = np.asarray(s, dtype=float)
    if len(s) < 3:
        raise ValueError("boundary norm needs at least three samples")
    return float(np.linalg.norm(_h2_features(s, float(tau))))


def flux_h1_norm(g, tau: float) -> float:
    """Discrete first-order norm: the zeroth-order sum skips the last sample."""
    g = np.asarray(g, dtype=float)
    if len(g) < 2:
        raise ValueError("flux norm needs at least two samples")
    return float(np.linalg.norm(_h1_features(g, float(tau))))


def source_l2_norm(f, tau: float, steps) -> float:
    """Cell-measure weighted l2 norm: sqrt(sum_k sum_i tau h_i f_ki^2)."""
    f = np.asarray(f, dtype=float)
    steps = np.asarray(steps, dtype=float)
    if f.ndim != 2 or f.shape[1] != len(steps):
        raise ValueError(f"source shape {f.shape} does not match {len(steps)} cells")
    return math.sqrt(float(tau) * float(np.sum(f * f * steps[None, :])))


def control_norm(control: DiscreteControl) -> float:
    """Max of the three block norms (the metric the norm budget caps)."""
    tau = control.time_grid.tau
    return max(
        boundary_h2_norm(control.s, tau),
        flux_h1_norm(control.g, tau),
        source_l2_norm(control.f, tau, control.spatial_grid.steps),
    )


# -- interpolation map (samples -> functions) ------------------------------


def interpolate_control(control: DiscreteControl) -> ContinuousControl:
    tg = control.time_grid
    tau, tnodes, n = tg.tau, tg.nodes, tg.n
    s, g, f = control.s, control.g, control.f
    xnodes = control.spatial_grid.nodes

    def s_fn(t):
        t = np.asarray(t, dtype=float)
        scalar = t.shape == ()
        t = np.atleast_1d(t)
        k = np.clip(np.searchsorted(tnodes, t, side="right"), 1, n)
        dt = t - tnodes[k - 1]
        km2 = np.maximum(k - 2, 0)
        d1 = (s[k - 1] - s[km2]) / tau
        d2 = (s[k] - 2.0 * s[k - 1] + s[km2]) / tau**2
        val = s[k - 1] + (dt - 0.5 * tau) * d1 + 0.5 * dt**2 * d2
        val = np.where(k == 1, s[0], val)
        return val[0] if scalar else val

    def s_prime(t):
        t = np.asarray(t, dtype=float)
        scalar = t.shape == ()
        t = np.atleast_1d(t)
        k = np.clip(np.searchsorted(tnodes, t, side="right"), 1, n)
        dt = t - tnodes[k - 1]
        km2 = np.maximum(k - 2, 0)
        d1 = (s[k - 1] - s[km2]) / tau
        d2 = (s[k] - 2.0 * s[k - 1] + s[km2]) / tau**2
        val = np.where(k == 1, 0.0, d1 + dt * d2)
        return val[0] if scalar else val

    def g_fn(t):
        return np.interp(t, tnodes, g)

    def f_fn(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x, t = np.broadcast_arrays(x, t)
        scalar = x.shape == ()
        x = np.atleast_1d(x)
        t = np.atleast_1d(t)
        i = np.clip(np.searchsorted(xnodes, x, side="right") - 1, 0, f.shape[1] - 1)
        k = np.clip(np.searchsorted(tnodes, t, side="left"), 1, n)
        val = f[k - 1, i]
        return val[0] if scalar else val

    return ContinuousControl(s=s_fn, g=g_fn, f=f_fn, s_prime=s_prime)


# -- sampling map (functions -> samples) -----------------------------------


def sample_control(
    v: ContinuousControl, tgrid: TimeGrid, sgrid: SpatialGrid
) -> DiscreteControl:
    """Sample a continuous control on given grids.

    The boundary is sampled at the time nodes with the second sample pinned to
    the first; the flux is sampled at the nodes; the source is averaged over
    every space-time cell with the 4-point panel rule (exact for the images of
    ``interpolate_control``).
    """
    tnodes = tgrid.nodes
    s = np.asarray(v.s(tnodes), dtype=float).copy()
    s[1] = s[0]
    g = np.asarray(v.g(tnodes), dtype=float).copy()

    xm = 0.5 * (sgrid.nodes[:-1] + sgrid.nodes[1:])
    xh = 0.5 * sgrid.steps
    tm = 0.5 * (tnodes[:-1] + tnodes[1:])
    th = 0.5 * tgrid.tau
    xq = xm[None, :, None, None] + xh[None, :, None, None] * _GL_NODES[None, None, :, None]
    tq = tm[:, None, None, None] + th * _GL_NODES[None, None, None, :]
    shape = (tgrid.n, sgrid.num_cells, 4, 4)
    vals = v.f(np.broadcast_to(xq, shape), np.broadcast_to(tq, shape))
    f = 0.25 * np.einsum("kipq,p,q->ki", vals, _GL_WEIGHTS, _GL_WEIGHTS)

    return DiscreteControl(s=s, g=g, f=f, time_grid=tgrid, spatial_grid=sgrid)


def discretize_control(
    v: ContinuousControl,
    data: ProblemData,
    n: int,
    m0: int,
    coupling_const: float = 2.0,
) -> DiscreteControl:
    """Build grids from the sampled boundary, then sample the control on them."""
    tgrid = build_time_grid(data.t_final, n)
    s = np.asarray(v.s(tgrid.nodes), dtype=float).copy()
    s[1] = s[0]
    sgrid = build_spatial_grid(
        s, m0, data.ell, data.s_lower, tau=tgrid.tau, coupling_const=coupling_const
    )
    return sample_control(v, tgrid, sgrid)


# -- exact re-averaging between grids --------------------------------------


def remap_cell_values(values: np.ndarray, old_edges, new_edges) -> np.ndarray:
    """Re-average piecewise-constant rows from one cell partition to another.

    Exact interval-overlap averaging via the cumulative integral; both edge
    vectors must span the same interval.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    old_edges = np.asarray(old_edges, dtype=float)
    new_edges = np.asarray(new_edges, dtype=float)
    widths = np.diff(old_edges)
    cum = np.concatenate(
        [np.zeros((values.shape[0], 1)), np.cumsum(values * widths[None, :], axis=1)],
        axis=1,
    )
    out = np.empty((values.shape[0], len(new_edges) - 1))
    for r in range(values.shape[0]):
        totals = np.interp(new_edges, old_edges, cum[r])
        out[r] = np.diff(totals) / np.diff(new_edges)
    return out


def rebuild_control(
    s: np.ndarray,
    g: np.ndarray,
    f_old: np.ndarray,
    old_grid: SpatialGrid,
    tgrid: TimeGrid,
    data: ProblemData,
    coupling_const: float = 2.0,
) -> DiscreteControl:
    """Assemble a control from raw arrays, regridding the source if s moved."""
    sgrid = build_spatial_grid(
        s, old_grid.m0, data.ell, data.s_lower, tau=tgrid.tau,
        coupling_const=coupling_const,
    )
    if len(sgrid.nodes) == len(old_grid.nodes) and np.array_equal(
        sgrid.nodes, old_grid.nodes
    ):
        f_new = np.asarray(f_old, dtype=float)
        sgrid = old_grid
    else:
        f_new = remap_cell_values(f_old, old_grid.nodes, sgrid.nodes)
    return DiscreteControl(
        s=np.asarray(s, dtype=float),
        g=np.asarray(g, dtype=float),
        f=f_new,
        time_grid=tgrid,
        spatial_grid=sgrid,
    )


# -- feasibility projection ------------------------------------------------


def initial_flux_value(data: ProblemData) -> float:
    """Flux pinned at t = 0 in the compatible control set: a(0,0) * phi'(0)."""
    return float(data.a(0.0, 0.0)) * float(data.phi.dx(0.0, 0.0))


def interface_compatibility_residual(data: ProblemData) -> float:
    """chi(s0,0) - phi'(s0) a(s0,0) at rest; nonzero values are reported only."""
    s0 = data.s0
    return float(
        data.chi(s0, 0.0) - data.phi.dx(s0, 0.0) * data.a(s0, 0.0)
    )


def _shrink_factor(anchor_feat: np.ndarray, delta_feat: np.ndarray, bound: float) -> float:
    """Largest lam in [0, 1] with ||anchor + lam * delta|| <= bound."""
    aa = float(anchor_feat @ anchor_feat)
    if aa > bound * bound:
        raise ValueError(
            "projection anchor exceeds the norm budget; increase norm_bound"
        )
    cc = float(delta_feat @ delta_feat)
    if cc == 0.0:
        return 1.0
    bb = 2.0 * float(anchor_feat @ delta_feat)
    disc = bb * bb - 4.0 * cc * (aa - bound * bound)
    lam = (-bb + math.sqrt(max(disc, 0.0))) / (2.0 * cc)
    return min(1.0, max(lam, 0.0))


def project_control(
    control: DiscreteControl,
    data: ProblemData,
    feasible_set: str = "plain",
) -> DiscreteControl:
    """Project onto the admissible set; feasible inputs are returned unchanged.

    Clamps the boundary to its floor, re-pins the head samples (and the initial
    flux in the compatible set), then rescales each block radially about its
    anchor until the block norm fits the budget.  Interface compatibility of
    the problem data is reported, never repaired.
    """
    if feasible_set not in ("plain", "compatible"):
        raise ValueError(f"unknown feasible set {feasible_set!r}")
    tg = control.time_grid
    tau = tg.tau
    bound = data.norm_bound
    target = bound * (1.0 - _INTERIOR)

    s = control.s.copy()
    changed = False
    if np.any(s < data.s_lower):
        s = np.maximum(s, data.s_lower)
        changed = True
    if s[0] != data.s0 or s[1] != data.s0:
        s[0] = s[1] = data.s0
        changed = True

    g = control.g.copy()
    if feasible_set == "compatible":
        pin = initial_flux_value(data)
        if g[0] != pin:
            g[0] = pin
            changed = True
        resid = interface_compatibility_residual(data)
        if abs(resid) > 1e-10 * (1.0 + abs(float(data.chi(data.s0, 0.0)))):
            logger.warning(
                "interface flux balance violated at t=0 (residual %.3e); "
                "data left as given", resid,
            )

    if boundary_h2_norm(s, tau) > bound:
        anchor_s = np.full_like(s, data.s0)
        lam_s = _shrink_factor(
            _h2_features(anchor_s, tau), _h2_features(s - anchor_s, tau), bound
        )
        s = anchor_s + (lam_s * target / bound) * (s - anchor_s)
        changed = True

    if flux_h1_norm(g, tau) > bound:
        anchor_g = np.full_like(g, g[0])
        lam_g = _shrink_factor(
            _h1_features(anchor_g, tau), _h1_features(g - anchor_g, tau), bound
        )
        g = anchor_g + (lam_g * target / bound) * (g - anchor_g)
        changed = True

    if not changed:
        f_norm = source_l2_norm(control.f, tau, control.spatial_grid.steps)
        if f_norm <= bound:
            return control
    updated = rebuild_control(
        s, g, control.f, control.spatial_grid, tg, data
    ) if changed else control
    f_norm = source_l2_norm(updated.f, tau, updated.spatial_grid.steps)
    if f_norm > bound:
        f = updated.f * (target / f_norm)
        updated = DiscreteControl(
            s=updated.s, g=updated.g, f=f,
            time_grid=tg, spatial_grid=updated.spatial_grid,
        )
    return updated


# -- fractional smoothness diagnostic --------------------------------------


def gagliardo_seminorm(samples, order: float, spacing: float | None = None) -> float:
    """Discrete double-sum fractional seminorm of uniformly spaced samples.

    Midpoint-rule discretization of the squared difference quotient integral
    for exponent ``order`` in (0, 1); pairs closer than one cell are excluded.
    Default spacing treats the samples as midpoints of cells tiling [0, 1].
    """
    u = np.asarray(samples, dtype=float)
    if u.ndim != 1 or len(u) < 2:
        raise ValueError("need at least two samples")
    if not 0.0 < order < 1.0:
        raise ValueError(f"order must lie in (0, 1), got {order}")
    dx = 1.0 / len(u) if spacing is None else float(spacing)
    idx = np.arange(len(u))
    sep = np.abs(idx[:, None] - idx[None, :]) * dx
    diff = u[:, None] - u[None, :]
    mask = np.abs(idx[:, None] - idx[None, :]) >= 1
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(mask, diff**2 / sep ** (1.0 + 2.0 * order), 0.0)
    return math.sqrt(float(integrand.sum()) * dx * dx)


# -- serialization ---------------------------------------------------------


def control_to_dict(control: DiscreteControl, s_lower: float) -> dict:
    return {
        "kind": "discrete",
        "t_final": control.time_grid.t_final,
        "n": control.time_grid.n,
        "m0": control.spatial_grid.m0,
        "ell": control.spatial_grid.ell,
        "s_lower": float(s_lower),
        "s": control.s.tolist(),
        "g": control.g.tolist(),
        "f": control.f.tolist(),
    }


def control_from_dict(spec: dict) -> DiscreteControl:
    if spec.get("kind", "discrete") != "discrete":
        raise ValueError(f"not a discrete control spec: kind={spec.get('kind')!r}")
    tgrid = build_time_grid(spec["t_final"], spec["n"])
    s = np.asarray(spec["s"], dtype=float)
    sgrid = build_spatial_grid(s, spec["m0"], spec["ell"], spec["s_lower"])
    return DiscreteControl(
        s=s,
        g=np.asarray(spec["g"], dtype=float),
        f=np.asarray(spec["f"], dtype=float),
        time_grid=tgrid,
        spatial_grid=sgrid,
    )


def save_control(control: DiscreteControl, s_lower: float, path, extra: dict | None = None) -> None:
    payload = control_to_dict(control, s_lower)
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_control(path) -> DiscreteControl:
    with Path(path).open() as fh:
        return control_from_dict(json.load(fh))
