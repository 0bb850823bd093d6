"""Problem data bundle and Steklov averaging on the grids.

Field conventions: ``a`` (diffusion), ``b`` (convection), ``c`` (reaction),
``gamma`` (latent-heat factor in the interface flux balance) and ``chi``
(interface flux source) are fields of (x, t).  ``phi`` is the initial
temperature (evaluated at t = 0), ``w`` the measured final temperature
(evaluated at t = t_final) and ``mu`` the measured interface temperature
(evaluated at x = 0, a time-only curve).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .fields import Field
from .grids import SpatialGrid, TimeGrid

__all__ = [
    "ProblemData",
    "steklov_time_average",
    "steklov_cell_average",
    "steklov_cell_table",
    "steklov_trace_average",
    "steklov_flux_trace_average",
    "cell_average_space",
    "load_problem",
    "save_problem",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True, eq=False)
class ProblemData:
    a: Field
    b: Field
    c: Field
    phi: Field
    gamma: Field
    chi: Field
    mu: Field
    w: Field
    t_final: float
    ell: float
    s0: float
    s_lower: float
    s_star: float
    u_star: float
    beta0: float
    beta1: float
    beta2: float
    norm_bound: float
    a_floor: float

    def __post_init__(self):
        if self.t_final <= 0.0:
            raise ValueError(f"t_final must be positive, got {self.t_final}")
        if self.a_floor <= 0.0:
            raise ValueError(f"a_floor must be positive, got {self.a_floor}")
        if not (0.0 < self.s_lower <= self.s0 <= self.ell):
            raise ValueError(
                f"need 0 < s_lower <= s0 <= ell, got "
                f"({self.s_lower}, {self.s0}, {self.ell})"
            )
        if not (self.s_lower <= self.s_star <= self.ell):
            raise ValueError(f"s_star {self.s_star} outside [s_lower, ell]")
        betas = (self.beta0, self.beta1, self.beta2)
        if any(be < 0.0 for be in betas):
            raise ValueError(f"cost weights must be nonnegative, got {betas}")
        if sum(betas) <= 0.0:
            raise ValueError("at least one cost weight must be positive")
        if self.norm_bound <= 0.0:
            raise ValueError(f"norm_bound must be positive, got {self.norm_bound}")

    @property
    def beta(self) -> tuple[float, float, float]:
        return (self.beta0, self.beta1, self.beta2)

    def with_measurements(self, w: Field, mu: Field, s_star: float) -> "ProblemData":
        return replace(self, w=w, mu=mu, s_star=float(s_star))

    def ellipticity_margin(self, sgrid: SpatialGrid, tgrid: TimeGrid) -> float:
        """min a over all grid nodes minus the declared floor (>= 0 when sound)."""
        xx, tt = np.meshgrid(sgrid.nodes, tgrid.nodes, indexing="ij")
        return float(np.min(self.a(xx, tt)) - self.a_floor)


# -- Steklov averages ------------------------------------------------------


def _mean_on_interval(fn, lo: float, hi: float):
    tq = 0.5 * (lo + hi) + 0.5 * (hi - lo) * _GL_NODES
    return 0.5 * float(np.dot(_GL_WEIGHTS, fn(tq)))


def steklov_time_average(fn, k: int, tgrid: TimeGrid) -> float:
    """Average of fn(t) over the k-th time slab (t_{k-1}, t_k], k = 1..n."""
    if not 1 <= k <= tgrid.n:
        raise ValueError(f"slab index {k} outside 1..{tgrid.n}")
    return _mean_on_interval(fn, tgrid.nodes[k - 1], tgrid.nodes[k])


def steklov_cell_average(
    field: Field, i: int, k: int, sgrid: SpatialGrid, tgrid: TimeGrid
) -> float:
    """Average of a field over cell [x_i, x_{i+1}] x slab k."""
    if not 0 <= i < sgrid.num_cells:
        raise ValueError(f"cell index {i} outside 0..{sgrid.num_cells - 1}")
    if not 1 <= k <= tgrid.n:
        raise ValueError(f"slab index {k} outside 1..{tgrid.n}")
    x0, x1 = sgrid.nodes[i], sgrid.nodes[i + 1]
    t0, t1 = tgrid.nodes[k - 1], tgrid.nodes[k]
    xq = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * _GL_NODES
    tq = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * _GL_NODES
    vals = field(xq[:, None], tq[None, :])
    return 0.25 * float(_GL_WEIGHTS @ vals @ _GL_WEIGHTS)


def steklov_cell_table(field: Field, sgrid: SpatialGrid, tgrid: TimeGrid) -> np.ndarray:
    """All cell/slab averages at once; shape (n, num_cells), row k-1 = slab k."""
    xm = 0.5 * (sgrid.nodes[:-1] + sgrid.nodes[1:])
    xh = 0.5 * sgrid.steps
    tm = 0.5 * (tgrid.nodes[:-1] + tgrid.nodes[1:])
    th = 0.5 * tgrid.tau
    # quadrature points: (slab, cell, qx, qt)
    xq = xm[None, :, None, None] + xh[None, :, None, None] * _GL_NODES[None, None, :, None]
    tq = tm[:, None, None, None] + th * _GL_NODES[None, None, None, :]
    vals = field(np.broadcast_to(xq, (tgrid.n, sgrid.num_cells, 4, 4)),
                 np.broadcast_to(tq, (tgrid.n, sgrid.num_cells, 4, 4)))
    return 0.25 * np.einsum("kipq,p,q->ki", vals, _GL_WEIGHTS, _GL_WEIGHTS)


def steklov_trace_average(
    field: Field, s_fn, k: int, tgrid: TimeGrid, ell: float
) -> float:
    """Average of field(s(t), t) over slab k; the trace is clamped to [0, ell]."""
    if not 1 <= k <= tgrid.n:
        raise ValueError(f"slab index {k} outside 1..{tgrid.n}")
    t0, t1 = tgrid.nodes[k - 1], tgrid.nodes[k]
    tq = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * _GL_NODES
    xq = np.clip(np.asarray(s_fn(tq), dtype=float), 0.0, ell)
    return 0.5 * float(np.dot(_GL_WEIGHTS, field(xq, tq)))


def steklov_flux_trace_average(
    gamma: Field, s_fn, ds_fn, k: int, tgrid: TimeGrid, ell: float
) -> float:
    """Average of gamma(s(t), t) * s'(t) over slab k."""
    if not 1 <= k <= tgrid.n:
        raise ValueError(f"slab index {k} outside 1..{tgrid.n}")
    t0, t1 = tgrid.nodes[k - 1], tgrid.nodes[k]
    tq = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * _GL_NODES
    xq = np.clip(np.asarray(s_fn(tq), dtype=float), 0.0, ell)
    vals = gamma(xq, tq) * np.asarray(ds_fn(tq), dtype=float)
    return 0.5 * float(np.dot(_GL_WEIGHTS, vals))


def cell_average_space(field: Field, sgrid: SpatialGrid, t: float, count: int) -> np.ndarray:
    """Averages of field(., t) over the first ``count`` cells."""
    if not 0 <= count <= sgrid.num_cells:
        raise ValueError(f"cell count {count} outside 0..{sgrid.num_cells}")
    xm = 0.5 * (sgrid.nodes[:count] + sgrid.nodes[1 : count + 1])
    xh = 0.5 * sgrid.steps[:count]
    xq = xm[:, None] + xh[:, None] * _GL_NODES[None, :]
    vals = field(xq, t)
    return 0.5 * vals @ _GL_WEIGHTS


# -- serialization ---------------------------------------------------------

_FIELD_NAMES = ("a", "b", "c", "phi", "gamma", "chi", "mu", "w")
_SCALAR_NAMES = (
    "t_final",
    "ell",
    "s0",
    "s_lower",
    "s_star",
    "u_star",
    "norm_bound",
    "a_floor",
)


def problem_from_dict(spec: dict, base_dir: Path | None = None) -> ProblemData:
    try:
        fields = {
            name: Field.from_dict(spec["fields"][name], base_dir=base_dir)
            for name in _FIELD_NAMES
        }
        beta = spec["beta"]
        scalars = {name: float(spec[name]) for name in _SCALAR_NAMES}
    except KeyError as exc:
        raise ValueError(f"problem config missing entry {exc}") from exc
    if len(beta) != 3:
        raise ValueError(f"beta must have three entries, got {beta}")
    return ProblemData(
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        beta2=float(beta[2]),
        **fields,
        **scalars,
    )


def problem_to_dict(data: ProblemData) -> dict:
    return {
        **{name: getattr(data, name) for name in _SCALAR_NAMES},
        "beta": [data.beta0, data.beta1, data.beta2],
        "fields": {name: getattr(data, name).to_dict() for name in _FIELD_NAMES},
    }


def load_problem(path) -> ProblemData:
    path = Path(path)
    with path.open() as fh:
        spec = json.load(fh)
    return problem_from_dict(spec, base_dir=path.parent)


def save_problem(data: ProblemData, path, extra: dict | None = None) -> None:
    payload = problem_to_dict(data)
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
