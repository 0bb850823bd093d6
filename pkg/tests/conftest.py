"""Shared fixtures: a generic benchmark configuration and a manufactured case.

The benchmark problem exercises variable coefficients, a moving boundary and
an active temperature cap.  The manufactured case builds a polynomial state
whose source term is the exact equation residual, so the scheme's nodal error
and the cost functional gap can be measured against closed forms.
"""

from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
import sympy as sp

from stefan_inverse import Field, ProblemData
from stefan_inverse.controls import ContinuousControl, discretize_control

X, T = sp.symbols("x t")


def make_problem(u_star: float = 0.9) -> ProblemData:
    return ProblemData(
        a=Field.polynomial([[1.0], [0.25]]),
        b=Field.constant(0.2),
        c=Field.constant(-0.3),
        phi=Field.polynomial([[1.0], [0.0], [-0.25]]),
        gamma=Field.polynomial([[1.0], [0.1]]),
        chi=Field.polynomial([[0.1], [0.05]]),
        mu=Field.polynomial([[0.8, -0.1]]),
        w=Field.polynomial([[1.0], [-0.3]]),
        t_final=1.0,
        ell=2.0,
        s0=1.0,
        s_lower=0.5,
        s_star=1.3,
        u_star=u_star,
        beta0=1.0,
        beta1=1.0,
        beta2=1.0,
        norm_bound=100.0,
        a_floor=0.5,
    )


def make_control(data: ProblemData, n: int, m0: int):
    """Smooth benchmark control: flat boundary start, affine flux, bilinear source."""
    t1 = data.t_final / n
    v = ContinuousControl(
        s=lambda q: 1.0
        + 0.25 * np.maximum(q - t1, 0.0) ** 2
        + 0.1 * np.maximum(q - t1, 0.0),
        g=lambda q: 0.3 - 0.2 * q,
        f=Field.polynomial([[0.5, 0.3], [-1.0, 0.0]]),
    )
    return discretize_control(v, data, n, m0)


@pytest.fixture(scope="session")
def bench_data():
    return make_problem()


@pytest.fixture(scope="session")
def bench_data_nocap():
    return make_problem(u_star=10.0)


def _poly2d(expr) -> np.ndarray:
    p = sp.Poly(sp.expand(expr), X, T)
    coeffs = np.zeros((p.degree(X) + 1, p.degree(T) + 1))
    for (i, j), c in p.terms():
        coeffs[i, j] = float(c)
    return coeffs


@pytest.fixture(scope="session")
def manufactured():
    """Polynomial exact state with source from the equation residual.

    Two measurement sets share the state: ``data_exact`` uses the state's own
    traces (zero misfit at the truth), ``data_offset`` shifts them by O(1)
    amounts and carries the exactly integrated continuous cost of the truth.
    """
    u = 1 + sp.Rational(1, 2) * T - sp.Rational(1, 4) * X**2 + sp.Rational(1, 10) * X * T
    s = 1 + sp.Rational(1, 5) * T**2
    a = 1 + sp.Rational(1, 4) * X
    b = sp.Rational(1, 5)
    c = -sp.Rational(3, 10)
    gamma = 1 + sp.Rational(1, 10) * X

    f = sp.expand(sp.diff(a * sp.diff(u, X), X) + b * sp.diff(u, X) + c * u - sp.diff(u, T))
    g = sp.expand((a * sp.diff(u, X)).subs(X, 0))
    chi = sp.expand(a * sp.diff(u, X) + gamma * sp.diff(s, T))

    base = dict(
        a=Field.polynomial(_poly2d(a)),
        b=Field.constant(0.2),
        c=Field.constant(-0.3),
        phi=Field.polynomial(_poly2d(u.subs(T, 0))),
        gamma=Field.polynomial(_poly2d(gamma)),
        chi=Field.polynomial(_poly2d(chi)),
        t_final=1.0,
        ell=1.5,
        s0=1.0,
        s_lower=0.5,
        u_star=5.0,
        beta0=1.0,
        beta1=1.0,
        beta2=1.0,
        norm_bound=100.0,
        a_floor=0.5,
    )
    s_final = float(s.subs(T, 1))
    data_exact = ProblemData(
        mu=Field.polynomial(_poly2d(u.subs(X, s))),
        w=Field.polynomial(_poly2d(u.subs(T, 1))),
        s_star=s_final,
        **base,
    )

    w_off = sp.expand(u.subs(T, 1) + sp.Rational(1, 2) + sp.Rational(3, 10) * X)
    mu_off = sp.expand(u.subs(X, s) - sp.Rational(2, 5) - sp.Rational(1, 5) * T)
    s_star_off = 1.4
    data_offset = ProblemData(
        mu=Field.polynomial(_poly2d(mu_off)),
        w=Field.polynomial(_poly2d(w_off)),
        s_star=s_star_off,
        **base,
    )
    cost_offset = (
        float(sp.integrate((u.subs(T, 1) - w_off) ** 2, (X, 0, s.subs(T, 1))))
        + float(sp.integrate((u.subs(X, s) - mu_off) ** 2, (T, 0, 1)))
        + (s_final - s_star_off) ** 2
    )

    u_fn = sp.lambdify((X, T), u, "numpy")
    s_fn = sp.lambdify(T, s, "numpy")
    g_fn = sp.lambdify(T, g, "numpy")

    def control(data: ProblemData, n: int, m0: int):
        v = ContinuousControl(
            s=lambda q: np.asarray(s_fn(q), dtype=float),
            g=lambda q: np.asarray(g_fn(q), dtype=float),
            f=Field.polynomial(_poly2d(f)),
        )
        return discretize_control(v, data, n, m0)

    return SimpleNamespace(
        data_exact=data_exact,
        data_offset=data_offset,
        cost_offset=cost_offset,
        u=lambda x, t: np.asarray(u_fn(x, t), dtype=float),
        s=lambda t: np.asarray(s_fn(t), dtype=float),
        g=lambda t: np.asarray(g_fn(t), dtype=float),
        f_field=Field.polynomial(_poly2d(f)),
        s_final=s_final,
        control=control,
    )


def nodal_error(traj, exact, time_nodes):
    """Max over active nodes of |u - exact| across all time levels."""
    sg = traj.spatial_grid
    worst = 0.0
    for k in range(len(time_nodes)):
        m = int(sg.boundary_index[k])
        vals = exact(sg.nodes[: m + 1], time_nodes[k])
        worst = max(worst, float(np.max(np.abs(traj.u[k, : m + 1] - vals))))
    return worst


@pytest.fixture(scope="session")
def bench_setup(bench_data):
    """Benchmark problem, control and solved trajectory at n = m0 = 12."""
    from stefan_inverse.forward import forward_solve

    control = make_control(bench_data, 12, 12)
    traj = forward_solve(control, bench_data)
    return SimpleNamespace(data=bench_data, control=control, traj=traj)


def replace_measurements(data: ProblemData, **kw) -> ProblemData:
    return replace(data, **kw)
