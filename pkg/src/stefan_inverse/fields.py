"""Scalar coefficient/data fields on the space-time strip.

A field is evaluated as value(x, t).  Four kinds are supported:

* ``constant`` -- fixed value.
* ``polynomial`` -- sum_ij coeffs[i][j] * x**i * t**j (exact derivative).
* ``table`` -- bilinear interpolation on a rectangular grid; derivatives come
  from centered differences of the table (one-sided at the edges).  Axes of
  length one collapse the interpolation along that direction, which is how
  x-only or t-only measurements are stored.
* ``step`` -- piecewise constant in one coordinate (right-continuous on the
  breakpoints).  This is the export format for grid-sampled measurements; its
  reported x-derivative is zero.

Programmatic use may also wrap plain callables (not serializable).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = ["Field", "load_table_csv"]

# Relative slack when checking table extents.
_EDGE_TOL = 1e-9
# Central-difference step for callable fields without an explicit derivative.
_FD_STEP = 1e-6


def _as_pair(x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.broadcast_arrays(x, t)


@dataclass(frozen=True, eq=False)
class Field:
    kind: str
    value: float = 0.0
    coeffs: np.ndarray | None = None
    x_axis: np.ndarray | None = None
    t_axis: np.ndarray | None = None
    table: np.ndarray | None = None
    breaks: np.ndarray | None = None
    step_values: np.ndarray | None = None
    axis: str = "x"
    fn: Callable | None = None
    fn_dx: Callable | None = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def constant(cls, value: float) -> "Field":
        return cls(kind="constant", value=float(value))

    @classmethod
    def polynomial(cls, coeffs) -> "Field":
        c = np.atleast_2d(np.asarray(coeffs, dtype=float))
        return cls(kind="polynomial", coeffs=c)

    @classmethod
    def table2d(cls, x_axis, t_axis, values) -> "Field":
        x_axis = np.asarray(x_axis, dtype=float)
        t_axis = np.asarray(t_axis, dtype=float)
        values = np.asarray(values, dtype=float)
        if x_axis.ndim != 1 or t_axis.ndim != 1:
            raise ValueError("table axes must be 1-d")
        if values.shape != (len(x_axis), len(t_axis)):
            raise ValueError(
                f"table shape {values.shape} does not match axes "
                f"({len(x_axis)}, {len(t_axis)})"
            )
        for ax in (x_axis, t_axis):
            if len(ax) > 1 and np.any(np.diff(ax) <= 0.0):
                raise ValueError("table axes must be strictly increasing")
        return cls(kind="table", x_axis=x_axis, t_axis=t_axis, table=values)

    @classmethod
    def step(cls, breaks, values, axis: str = "x") -> "Field":
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float)
        if axis not in ("x", "t"):
            raise ValueError(f"step axis must be 'x' or 't', got {axis!r}")
        if len(breaks) != len(values) + 1:
            raise ValueError("step field needs len(breaks) == len(values) + 1")
        if np.any(np.diff(breaks) <= 0.0):
            raise ValueError("step breaks must be strictly increasing")
        return cls(kind="step", breaks=breaks, step_values=values, axis=axis)

    @classmethod
    def from_callable(cls, fn: Callable, fn_dx: Callable | None = None) -> "Field":
        return cls(kind="callable", fn=fn, fn_dx=fn_dx)

    # -- evaluation --------------------------------------------------------

    def __call__(self, x, t):
        x, t = _as_pair(x, t)
        if self.kind == "constant":
            return np.full(x.shape, self.value) if x.shape else self.value
        if self.kind == "polynomial":
            return npoly.polyval2d(x, t, self.coeffs)
        if self.kind == "table":
            return _bilinear(self.x_axis, self.t_axis, self.table, x, t)
        if self.kind == "step":
            q = x if self.axis == "x" else t
            idx = np.clip(
                np.searchsorted(self.breaks, q, side="right") - 1,
                0,
                len(self.step_values) - 1,
            )
            return self.step_values[idx]
        if self.kind == "callable":
            return self.fn(x, t)
        raise ValueError(f"unknown field kind {self.kind!r}")

    def dx(self, x, t):
        """Partial derivative in x (exact for polynomials, tabulated otherwise)."""
        x, t = _as_pair(x, t)
        if self.kind in ("constant", "step"):
            return np.zeros(x.shape) if x.shape else 0.0
        if self.kind == "polynomial":
            if self.coeffs.shape[0] == 1:
                return np.zeros(x.shape) if x.shape else 0.0
            return npoly.polyval2d(x, t, npoly.polyder(self.coeffs, axis=0))
        if self.kind == "table":
            return _bilinear(self.x_axis, self.t_axis, self._table_dx, x, t)
        if self.kind == "callable":
            if self.fn_dx is not None:
                return self.fn_dx(x, t)
            step = _FD_STEP * (1.0 + np.abs(x))
            return (self.fn(x + step, t) - self.fn(x - step, t)) / (2.0 * step)
        raise ValueError(f"unknown field kind {self.kind!r}")

    @cached_property
    def _table_dx(self) -> np.ndarray:
        d = np.zeros_like(self.table)
        ax = self.x_axis
        if len(ax) == 1:
            return d
        d[1:-1] = (self.table[2:] - self.table[:-2]) / (ax[2:] - ax[:-2])[:, None]
        d[0] = (self.table[1] - self.table[0]) / (ax[1] - ax[0])
        d[-1] = (self.table[-1] - self.table[-2]) / (ax[-1] - ax[-2])
        return d

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "polynomial":
            return {"kind": "polynomial", "coeffs": self.coeffs.tolist()}
        if self.kind == "table":
            return {
                "kind": "table",
                "x": self.x_axis.tolist(),
                "t": self.t_axis.tolist(),
                "values": self.table.tolist(),
            }
        if self.kind == "step":
            return {
                "kind": "step",
                "axis": self.axis,
                "breaks": self.breaks.tolist(),
                "values": self.step_values.tolist(),
            }
        raise ValueError(f"field kind {self.kind!r} is not serializable")

    @classmethod
    def from_dict(cls, spec: dict, base_dir: Path | None = None) -> "Field":
        kind = spec.get("kind")
        if kind == "constant":
            return cls.constant(spec["value"])
        if kind == "polynomial":
            return cls.polynomial(spec["coeffs"])
        if kind == "table":
            if "path" in spec:
                root = Path(base_dir) if base_dir is not None else Path(".")
                x_axis, t_axis, values = load_table_csv(root / spec["path"])
            else:
                x_axis = spec["x"]
                t_axis = spec["t"]
                values = spec["values"]
            return cls.table2d(x_axis, t_axis, values)
        if kind == "step":
            return cls.step(spec["breaks"], spec["values"], axis=spec.get("axis", "x"))
        raise ValueError(f"unknown field kind {kind!r} in config")


def _axis_weights(axis: np.ndarray, q: np.ndarray):
    lo, hi = axis[0], axis[-1]
    span = max(hi - lo, 1.0)
    if np.any(q < lo - _EDGE_TOL * span) or np.any(q > hi + _EDGE_TOL * span):
        raise ValueError(
            f"query outside tabulated range [{lo}, {hi}]"
        )
    if len(axis) == 1:
        zeros = np.zeros(q.shape, dtype=int)
        return zeros, zeros, np.zeros(q.shape)
    idx = np.clip(np.searchsorted(axis, q, side="right") - 1, 0, len(axis) - 2)
    w = (q - axis[idx]) / (axis[idx + 1] - axis[idx])
    return idx, idx + 1, np.clip(w, 0.0, 1.0)


def _bilinear(x_axis, t_axis, table, x, t):
    scalar = x.shape == ()
    x = np.atleast_1d(x)
    t = np.atleast_1d(t)
    i0, i1, wx = _axis_weights(x_axis, x)
    j0, j1, wt = _axis_weights(t_axis, t)
    v = (
        table[i0, j0] * (1.0 - wx) * (1.0 - wt)
        + table[i1, j0] * wx * (1.0 - wt)
        + table[i0, j1] * (1.0 - wx) * wt
        + table[i1, j1] * wx * wt
    )
    return v[0] if scalar else v


def load_table_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a tabulated field from CSV.

    Two layouts are accepted: long form with header ``x,t,value`` (rows must
    fill a complete rectangular grid), or rectangular form whose first row is
    the t axis (corner cell ignored) and first column the x axis.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise ValueError(f"empty table file {path}")
    header = [c.strip().lower() for c in rows[0]]
    if header[:3] == ["x", "t", "value"]:
        data = np.array([[float(c) for c in row[:3]] for row in rows[1:]])
        x_axis = np.unique(data[:, 0])
        t_axis = np.unique(data[:, 1])
        if len(data) != len(x_axis) * len(t_axis):
            raise ValueError(f"long-form table {path} is not a complete grid")
        values = np.full((len(x_axis), len(t_axis)), np.nan)
        xi = np.searchsorted(x_axis, data[:, 0])
        ti = np.searchsorted(t_axis, data[:, 1])
        values[xi, ti] = data[:, 2]
        if np.isnan(values).any():
            raise ValueError(f"long-form table {path} has duplicate points")
        return x_axis, t_axis, values
    t_axis = np.array([float(c) for c in rows[0][1:]])
    x_axis = np.array([float(row[0]) for row in rows[1:]])
    values = np.array([[float(c) for c in row[1:]] for row in rows[1:]])
    if values.shape != (len(x_axis), len(t_axis)):
        raise ValueError(f"rectangular table {path} is ragged")
    return x_axis, t_axis, values
