"""Problem container, Steklov averaging, and config serialization."""

import json

import numpy as np
import pytest
from scipy.integrate import dblquad

from stefan_inverse.fields import Field
from stefan_inverse.grids import build_spatial_grid, build_time_grid
from stefan_inverse.problem import (
    ProblemData,
    cell_average_space,
    load_problem,
    problem_from_dict,
    problem_to_dict,
    save_problem,
    steklov_cell_average,
    steklov_cell_table,
    steklov_flux_trace_average,
    steklov_time_average,
    steklov_trace_average,
)
from conftest import make_problem


@pytest.fixture(scope="module")
def grids():
    tg = build_time_grid(1.0, 5)
    sg = build_spatial_grid(np.full(6, 1.0), m0=4, ell=1.5, s_lower=0.5)
    return tg, sg


def test_time_average_quadratic_closed_form(grids):
    # mean of t^2 over (t_{k-1}, t_k] is (t_k^3 - t_{k-1}^3) / (3 tau)
    tg, _ = grids
    for k in range(1, tg.n + 1):
        t0, t1 = tg.nodes[k - 1], tg.nodes[k]
        want = (t1**3 - t0**3) / (3.0 * tg.tau)
        got = steklov_time_average(lambda t: t**2, k, tg)
        assert got == pytest.approx(want, rel=1e-14)


def test_time_average_rejects_bad_slab(grids):
    tg, _ = grids
    with pytest.raises(ValueError):
        steklov_time_average(lambda t: t, 0, tg)
    with pytest.raises(ValueError):
        steklov_time_average(lambda t: t, tg.n + 1, tg)


def test_time_average_degree_seven_exact(grids):
    # the 4-point panel integrates polynomials up to degree 7 exactly
    tg, _ = grids
    k = 2
    t0, t1 = tg.nodes[k - 1], tg.nodes[k]
    want = (t1**8 - t0**8) / (8.0 * tg.tau)
    got = steklov_time_average(lambda t: t**7, k, tg)
    assert got == pytest.approx(want, rel=1e-13)


def test_time_average_step_break_on_slab_edge_exact(grids):
    # measured step data always break on slab edges, where the rule is exact
    tg, _ = grids
    field = Field.step(tg.nodes, 1.0 + np.arange(tg.n), axis="t")
    for k in (1, 3, 5):
        got = steklov_time_average(lambda t: field(0.0, t), k, tg)
        assert got == pytest.approx(float(k), rel=1e-14)


def test_cell_average_vs_dblquad(grids):
    tg, sg = grids
    field = Field.from_callable(lambda x, t: np.exp(-x) * np.cos(2.0 * t))
    i, k = 2, 4
    x0, x1 = sg.nodes[i], sg.nodes[i + 1]
    t0, t1 = tg.nodes[k - 1], tg.nodes[k]
    want, _ = dblquad(
        lambda t, x: np.exp(-x) * np.cos(2.0 * t), x0, x1, t0, t1, epsabs=1e-12
    )
    want /= (x1 - x0) * (t1 - t0)
    got = steklov_cell_average(field, i, k, sg, tg)
    assert got == pytest.approx(want, rel=1e-9)


def test_cell_table_matches_single_cells(grids):
    tg, sg = grids
    field = Field.polynomial([[0.4, -0.2], [1.0, 0.0], [0.0, 0.7]])
    table = steklov_cell_table(field, sg, tg)
    assert table.shape == (tg.n, sg.num_cells)
    for k in (1, tg.n):
        for i in (0, sg.num_cells - 1):
            assert table[k - 1, i] == pytest.approx(
                steklov_cell_average(field, i, k, sg, tg), rel=1e-13
            )


def test_trace_average_polynomial_exact(grids):
    # field x*t along the line s(t)=t: mean of t^2 over the slab
    tg, _ = grids
    field = Field.polynomial([[0.0, 0.0], [0.0, 1.0]])
    for k in (1, 4):
        t0, t1 = tg.nodes[k - 1], tg.nodes[k]
        want = (t1**3 - t0**3) / (3.0 * tg.tau)
        got = steklov_trace_average(field, lambda t: t, k, tg, ell=2.0)
        assert got == pytest.approx(want, rel=1e-13)


def test_flux_trace_average_exact(grids):
    # gamma = 1 + x along s(t) = t^2, s' = 2t: integrand 2t + 2t^3
    tg, _ = grids
    gamma = Field.polynomial([[1.0], [1.0]])
    k = 3
    t0, t1 = tg.nodes[k - 1], tg.nodes[k]
    want = (t1**2 - t0**2 + 0.5 * (t1**4 - t0**4)) / tg.tau
    got = steklov_flux_trace_average(
        gamma, lambda t: t**2, lambda t: 2.0 * t, k, tg, ell=2.0
    )
    assert got == pytest.approx(want, rel=1e-13)


def test_cell_average_space_linear_exact(grids):
    tg, sg = grids
    field = Field.polynomial([[1.0], [2.0]])  # 1 + 2x
    got = cell_average_space(field, sg, 0.0, 3)
    mids = 0.5 * (sg.nodes[:3] + sg.nodes[1:4])
    np.testing.assert_allclose(got, 1.0 + 2.0 * mids, rtol=1e-14)


def test_problem_validation():
    with pytest.raises(ValueError):
        make_problem().__class__(**{**problem_kwargs(), "s0": 3.0})  # above ell
    with pytest.raises(ValueError):
        make_problem().__class__(**{**problem_kwargs(), "t_final": 0.0})


def problem_kwargs():
    d = make_problem()
    return {
        name: getattr(d, name)
        for name in (
            "a", "b", "c", "phi", "gamma", "chi", "mu", "w",
            "t_final", "ell", "s0", "s_lower", "s_star", "u_star",
            "beta0", "beta1", "beta2", "norm_bound", "a_floor",
        )
    }


def test_problem_dict_round_trip():
    data = make_problem()
    clone = problem_from_dict(problem_to_dict(data))
    xs = np.linspace(0.0, 1.5, 7)
    for name in ("a", "b", "c", "phi", "gamma", "chi", "mu", "w"):
        np.testing.assert_array_equal(
            getattr(clone, name)(xs, 0.3), getattr(data, name)(xs, 0.3)
        )
    assert clone.s_star == data.s_star
    assert clone.beta1 == data.beta1


def test_problem_json_round_trip(tmp_path):
    data = make_problem()
    path = tmp_path / "problem.json"
    save_problem(data, path)
    clone = load_problem(path)
    assert clone.norm_bound == data.norm_bound
    assert json.loads(path.read_text())["ell"] == 2.0


def test_problem_from_dict_reports_missing_key():
    spec = problem_to_dict(make_problem())
    del spec["fields"]["mu"]
    with pytest.raises((KeyError, ValueError)):
        problem_from_dict(spec)


def test_with_measurements_replaces_only_data():
    data = make_problem()
    w = Field.constant(0.7)
    mu = Field.constant(0.2)
    updated = data.with_measurements(w=w, mu=mu, s_star=1.1)
    assert updated.w is w and updated.mu is mu and updated.s_star == 1.1
    assert updated.a is data.a and updated.t_final == data.t_final
