"""Time grid and the boundary-driven spatial grid of the moving-domain scheme.

The spatial grid is induced by the sampled free boundary: a uniform base grid
covers [0, min_k s_k]; every strictly larger boundary level appends a uniformly
subdivided band that ends exactly at that level; the remainder up to the fixed
domain cap ``ell`` is covered by a coarser uniform tail.  Boundary values are
stored as nodes bit-exactly and placed nodes are never moved afterwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridCouplingError",
    "TimeGrid",
    "SpatialGrid",
    "build_time_grid",
    "build_spatial_grid",
    "reflect_index",
    "reflection_count",
]

logger = logging.getLogger(__name__)

# Boundary samples closer than TIE_REL * ell are treated as the same level.
TIE_REL = 1e-12


class GridCouplingError(ValueError):
    """Largest spatial step exceeds coupling_const * sqrt(tau)."""


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Uniform partition of [0, t_final] into n steps."""

    n: int
    t_final: float
    tau: float
    nodes: np.ndarray


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Nonuniform partition of [0, ell] whose nodes contain every boundary sample.

    Attributes
    ----------
    nodes:
        Node coordinates x_0 = 0 < ... < x_N = ell (or the top boundary level
        when it already reaches ell).
    steps:
        Cell widths h_i = x_{i+1} - x_i, length N.
    boundary_index:
        For each time level k, the node index m_k with x_{m_k} equal to the
        boundary sample s_k (bit-exact for distinct levels).
    sorted_counts:
        Node index of each sorted boundary level, nondecreasing.
    order:
        Permutation sorting the boundary samples ascending (stable).
    """

    nodes: np.ndarray
    steps: np.ndarray
    base_step: float
    tail_step: float
    m0: int
    ell: float
    order: np.ndarray
    sorted_counts: np.ndarray
    boundary_index: np.ndarray

    @property
    def num_cells(self) -> int:
        return len(self.steps)

    @property
    def max_step(self) -> float:
        return float(self.steps.max())


def build_time_grid(t_final: float, n: int) -> TimeGrid:
    """Uniform time grid with t_0 = 0 and t_n = t_final exactly."""
    t_final = float(t_final)
    n = int(n)
    if t_final <= 0.0:
        raise ValueError(f"t_final must be positive, got {t_final}")
    if n < 1:
        raise ValueError(f"need at least one time step, got n={n}")
    nodes = np.linspace(0.0, t_final, n + 1)
    return TimeGrid(n=n, t_final=t_final, tau=t_final / n, nodes=nodes)


def build_spatial_grid(
    samples,
    m0: int,
    ell: float,
    s_lower: float,
    tau: float | None = None,
    coupling_const: float = 2.0,
) -> SpatialGrid:
    """Build the spatial grid induced by boundary samples s_0, ..., s_n.

    Parameters
    ----------
    samples:
        Boundary positions per time level.  Each must lie in [s_lower, ell].
    m0:
        Cell count of the uniform base grid on [0, min samples].
    ell:
        Right end of the fixed computational strip.
    s_lower:
        Positive floor for the boundary; violations raise ValueError.
    tau:
        Optional time step; when given, the coupling Delta <= coupling_const *
        sqrt(tau) is enforced and GridCouplingError raised on failure.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 1 or len(s) < 2:
        raise ValueError("samples must be a 1-d array with at least two entries")
    m0 = int(m0)
    if m0 < 1:
        raise ValueError(f"m0 must be >= 1, got {m0}")
    ell = float(ell)
    s_lower = float(s_lower)
    if s_lower <= 0.0:
        raise ValueError(f"s_lower must be positive, got {s_lower}")
    bad = np.nonzero(s < s_lower)[0]
    if bad.size:
        raise ValueError(
            f"boundary samples below the floor {s_lower} at levels {bad.tolist()}"
        )
    tol = TIE_REL * ell
    if s.max() > ell + tol:
        raise ValueError(f"boundary sample {s.max()} exceeds the domain cap {ell}")

    order = np.argsort(s, kind="stable")
    sv = s[order]

    h = sv[0] / m0
    nodes = list(np.linspace(0.0, sv[0], m0 + 1))
    counts = [m0]
    for k in range(1, len(sv)):
        if sv[k] - sv[k - 1] <= tol:
            counts.append(counts[-1])
            continue
        top = nodes[-1]
        gap = sv[k] - top
        nsub = max(1, math.ceil(gap / h - 1e-12))
        nodes.extend(np.linspace(top, sv[k], nsub + 1)[1:])
        counts.append(counts[-1] + nsub)

    top = nodes[-1]
    tail_gap = ell - top
    if tail_gap > tol:
        nsub = max(1, math.ceil(tail_gap / h - 1e-12))
        tail_step = tail_gap / nsub
        nodes.extend(np.linspace(top, ell, nsub + 1)[1:])
    else:
        tail_step = 0.0

    x = np.asarray(nodes)
    steps = np.diff(x)
    if np.any(steps <= 0.0):
        raise ValueError("grid construction produced a nonincreasing node sequence")
    if tau is not None:
        limit = coupling_const * math.sqrt(tau)
        if steps.max() > limit:
            raise GridCouplingError(
                f"max spatial step {steps.max():.3e} exceeds "
                f"{coupling_const} * sqrt(tau) = {limit:.3e}; refine m0 or coarsen tau"
            )

    sorted_counts = np.asarray(counts, dtype=int)
    inverse = np.empty(len(s), dtype=int)
    inverse[order] = np.arange(len(s))
    boundary_index = sorted_counts[inverse]

    return SpatialGrid(
        nodes=x,
        steps=steps,
        base_step=h,
        tail_step=tail_step,
        m0=m0,
        ell=float(x[-1]),
        order=order,
        sorted_counts=sorted_counts,
        boundary_index=boundary_index,
    )


def _fold(x: float, boundary: float) -> tuple[float, int]:
    """Iterate x -> 2^m * boundary - x until x lies in [0, boundary]."""
    folds = 0
    while x > boundary:
        m = max(1, math.ceil(math.log2(x / boundary)))
        if 2.0 ** (m - 1) * boundary > x:
            m -= 1
        x = 2.0**m * boundary - x
        folds += 1
    return x, folds


def reflect_index(x: float, boundary: float) -> float:
    """Preimage of x in [0, boundary] under iterated doubling reflections.

    Points beyond the free boundary are pulled back by reflecting about the
    doubling points 2^m * boundary, innermost applicable power first.
    """
    x = float(x)
    boundary = float(boundary)
    if boundary <= 0.0:
        raise ValueError(f"boundary must be positive, got {boundary}")
    if x < 0.0:
        raise ValueError(f"x must be nonnegative, got {x}")
    value, _ = _fold(x, boundary)
    return value


def reflection_count(x: float, boundary: float) -> int:
    """Number of reflections reflect_index performs for this pair."""
    x = float(x)
    boundary = float(boundary)
    if boundary <= 0.0:
        raise ValueError(f"boundary must be positive, got {boundary}")
    if x < 0.0:
        raise ValueError(f"x must be nonnegative, got {x}")
    _, folds = _fold(x, boundary)
    return folds


def reflect_array(x: np.ndarray, boundary: float) -> np.ndarray:
    """Vectorized reflect_index for a batch of coordinates."""
    y = np.array(x, dtype=float, copy=True)
    if np.any(y < 0.0):
        raise ValueError("coordinates must be nonnegative")
    mask = y > boundary
    while mask.any():
        m = np.ceil(np.log2(y[mask] / boundary))
        np.maximum(m, 1.0, out=m)
        m = np.where(np.exp2(m - 1.0) * boundary > y[mask], m - 1.0, m)
        np.maximum(m, 1.0, out=m)
        y[mask] = np.exp2(m) * boundary - y[mask]
        mask = y > boundary
    return y
