"""Coefficient fields: evaluation, x-derivatives, serialization, CSV tables."""

import numpy as np
import pytest
import sympy as sp

from stefan_inverse.fields import Field, load_table_csv


def test_constant_broadcasts():
    f = Field.constant(2.5)
    assert f(0.3, 0.1) == 2.5
    np.testing.assert_array_equal(f(np.zeros(4), 0.0), np.full(4, 2.5))
    assert f.dx(0.3, 0.1) == 0.0


def test_polynomial_matches_sympy():
    x, t = sp.symbols("x t")
    expr = 1 + 2 * x - 3 * x**2 * t + 0.5 * t**2
    # coeffs[i][j] multiplies x^i t^j
    f = Field.polynomial([[1.0, 0.0, 0.5], [2.0, 0.0, 0.0], [0.0, -3.0, 0.0]])
    fn = sp.lambdify((x, t), expr)
    dfn = sp.lambdify((x, t), sp.diff(expr, x))
    rng = np.random.default_rng(0)
    xs, ts = rng.uniform(0, 2, 20), rng.uniform(0, 1, 20)
    np.testing.assert_allclose(f(xs, ts), fn(xs, ts), rtol=1e-14)
    np.testing.assert_allclose(f.dx(xs, ts), dfn(xs, ts), rtol=1e-13)


def test_table_bilinear_exact():
    # bilinear functions are reproduced exactly by bilinear interpolation
    xa = np.array([0.0, 0.4, 1.0, 1.7])
    ta = np.array([0.0, 0.5, 1.0])
    bil = lambda x, t: 2.0 + 0.3 * x - 0.7 * t + 0.9 * x * t
    f = Field.table2d(xa, ta, bil(xa[:, None], ta[None, :]))
    rng = np.random.default_rng(1)
    xs = rng.uniform(0.0, 1.7, 30)
    ts = rng.uniform(0.0, 1.0, 30)
    np.testing.assert_allclose(f(xs, ts), bil(xs, ts), rtol=1e-13)


def test_table_rejects_outside_axes():
    f = Field.table2d([0.0, 1.0], [0.0, 1.0], [[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        f(2.0, 0.0)
    with pytest.raises(ValueError):
        f(-1.0, 0.5)


def test_step_field_right_continuous():
    f = Field.step([0.0, 1.0, 2.0], [10.0, 20.0], axis="x")
    assert f(0.5, 0.0) == 10.0
    assert f(1.0, 0.0) == 20.0  # right-continuous at the break
    assert f(2.5, 0.0) == 20.0  # clamped beyond the last break
    assert f.dx(0.5, 0.0) == 0.0


def test_step_field_time_axis():
    f = Field.step([0.0, 0.5, 1.0], [1.0, -1.0], axis="t")
    assert f(0.0, 0.25) == 1.0
    assert f(0.0, 0.75) == -1.0


def test_step_field_validates():
    with pytest.raises(ValueError):
        Field.step([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Field.step([0.0, 1.0, 0.5], [1.0, 2.0])
    with pytest.raises(ValueError):
        Field.step([0.0, 1.0, 2.0], [1.0, 2.0], axis="z")


def test_callable_field_fd_derivative():
    f = Field.from_callable(lambda x, t: np.sin(x) * (1 + t))
    assert f.dx(0.3, 1.0) == pytest.approx(2.0 * np.cos(0.3), rel=1e-6)


@pytest.mark.parametrize(
    "field",
    [
        Field.constant(3.0),
        Field.polynomial([[1.0, -2.0], [0.5, 0.0]]),
        Field.table2d([0.0, 1.0], [0.0, 2.0], [[1.0, 2.0], [3.0, 4.0]]),
        Field.step([0.0, 0.3, 0.9], [5.0, -5.0], axis="t"),
    ],
)
def test_dict_round_trip(field):
    clone = Field.from_dict(field.to_dict())
    rng = np.random.default_rng(2)
    xs, ts = rng.uniform(0, 0.9, 10), rng.uniform(0, 0.9, 10)
    np.testing.assert_array_equal(clone(xs, ts), field(xs, ts))


def test_callable_not_serializable():
    with pytest.raises(ValueError):
        Field.from_callable(lambda x, t: x).to_dict()


def test_load_table_csv_long_form(tmp_path):
    p = tmp_path / "tab.csv"
    p.write_text("x,t,value\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n")
    xa, ta, vals = load_table_csv(p)
    np.testing.assert_array_equal(xa, [0.0, 1.0])
    np.testing.assert_array_equal(ta, [0.0, 1.0])
    np.testing.assert_array_equal(vals, [[1.0, 2.0], [3.0, 4.0]])


def test_load_table_csv_rectangular(tmp_path):
    p = tmp_path / "tab.csv"
    p.write_text(",0.0,1.0\n0.0,1,2\n1.0,3,4\n")
    xa, ta, vals = load_table_csv(p)
    np.testing.assert_array_equal(xa, [0.0, 1.0])
    np.testing.assert_array_equal(vals, [[1.0, 2.0], [3.0, 4.0]])


def test_load_table_csv_incomplete_grid(tmp_path):
    p = tmp_path / "tab.csv"
    p.write_text("x,t,value\n0,0,1\n0,1,2\n1,0,3\n")
    with pytest.raises(ValueError):
        load_table_csv(p)


def test_field_from_dict_table_path(tmp_path):
    p = tmp_path / "tab.csv"
    p.write_text("x,t,value\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n")
    f = Field.from_dict({"kind": "table", "path": "tab.csv"}, base_dir=tmp_path)
    assert f(1.0, 1.0) == pytest.approx(4.0)
