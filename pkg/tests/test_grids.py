"""Grid construction, boundary-node bookkeeping, and the reflection fold."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefan_inverse.grids import (
    GridCouplingError,
    build_spatial_grid,
    build_time_grid,
    reflect_array,
    reflect_index,
    reflection_count,
)


# -- time grid -------------------------------------------------------------


def test_time_grid_quarters():
    tg = build_time_grid(1.0, 4)
    np.testing.assert_allclose(tg.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert tg.tau == 0.25


def test_time_grid_two_steps():
    tg = build_time_grid(2.0, 2)
    assert tg.tau == 1.0
    np.testing.assert_array_equal(tg.nodes, [0.0, 1.0, 2.0])


def test_time_grid_rejects_bad_args():
    with pytest.raises(ValueError):
        build_time_grid(0.0, 4)
    with pytest.raises(ValueError):
        build_time_grid(1.0, 0)


def test_time_grid_endpoint_exact():
    tg = build_time_grid(0.7, 13)
    assert tg.nodes[0] == 0.0
    assert tg.nodes[-1] == 0.7


# -- spatial grid ----------------------------------------------------------


def test_spatial_grid_single_level():
    sg = build_spatial_grid([1.0, 1.0, 1.0], m0=2, ell=1.0, s_lower=0.1)
    np.testing.assert_array_equal(sg.nodes, [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(sg.boundary_index, [2, 2, 2])


def test_spatial_grid_worked_example():
    # distinct levels 1.0 < 1.1 < 1.2; one band node each; tail padded to 1.5
    sg = build_spatial_grid([1.0, 1.0, 1.2, 1.1], m0=4, ell=1.5, s_lower=0.1)
    np.testing.assert_allclose(
        sg.nodes, [0.0, 0.25, 0.5, 0.75, 1.0, 1.1, 1.2, 1.35, 1.5]
    )
    np.testing.assert_array_equal(sg.boundary_index, [4, 4, 6, 5])
    assert sg.base_step == 0.25


def test_spatial_grid_floor_violation():
    with pytest.raises(ValueError):
        build_spatial_grid([1.0, 1.0, 0.05], m0=4, ell=1.5, s_lower=0.1)


def test_spatial_grid_coupling_violation():
    # base step 0.5 exceeds 2 sqrt(tau) when tau is small enough
    with pytest.raises(GridCouplingError):
        build_spatial_grid([1.0, 1.0, 1.0], m0=2, ell=1.5, s_lower=0.1, tau=0.01)


def test_spatial_grid_boundary_nodes_bit_exact():
    s = [1.0, 1.0, 1.0 + 1e-3, 1.0 + 2.7e-3, 1.0 + 1.9e-3]
    sg = build_spatial_grid(s, m0=8, ell=2.0, s_lower=0.1)
    for k, sk in enumerate(s):
        assert sg.nodes[sg.boundary_index[k]] == sk


def test_spatial_grid_near_tie_collapses():
    # samples equal within 1e-12 * ell share one node
    s = [1.0, 1.0, 1.0 + 1e-14]
    sg = build_spatial_grid(s, m0=2, ell=1.0, s_lower=0.1)
    assert sg.boundary_index[2] == sg.boundary_index[0]


@given(
    st.lists(st.floats(0.6, 1.4), min_size=1, max_size=8),
    st.integers(2, 10),
)
@settings(max_examples=60, deadline=None)
def test_spatial_grid_properties(tail, m0):
    s = np.concatenate([[1.0, 1.0], tail])
    sg = build_spatial_grid(s, m0=m0, ell=2.0, s_lower=0.5)
    assert np.all(np.diff(sg.nodes) > 0.0)
    assert sg.nodes[0] == 0.0
    assert sg.nodes[-1] == 2.0
    np.testing.assert_allclose(np.sum(sg.steps), 2.0, rtol=1e-12)
    for k, sk in enumerate(s):
        assert sg.nodes[sg.boundary_index[k]] == sk
    # new-band steps never exceed the base step (ties aside)
    assert sg.max_step <= max(sg.base_step, sg.tail_step) + 1e-15


def test_refinement_halves_max_step():
    rng = np.random.default_rng(11)
    for _ in range(5):
        tail = rng.uniform(0.7, 1.3, size=6)
        s = np.concatenate([[1.0, 1.0], tail])
        coarse = build_spatial_grid(s, m0=4, ell=2.0, s_lower=0.5)
        s2 = np.concatenate([[1.0, 1.0], np.repeat(tail, 2)])
        fine = build_spatial_grid(s2, m0=8, ell=2.0, s_lower=0.5)
        assert fine.max_step <= 0.5 * coarse.max_step + 1e-12


# -- reflection fold -------------------------------------------------------


def brute_fold(x: float, s: float) -> float:
    # even 2s-periodic extension: fold into [0, 2s] then mirror the top half
    r = math.fmod(x, 2.0 * s)
    return 2.0 * s - r if r > s else r


def test_reflect_identity_inside():
    assert reflect_index(0.7, 1.0) == 0.7


def test_reflect_single():
    assert reflect_index(1.3, 1.0) == pytest.approx(0.7, abs=1e-15)


def test_reflect_double():
    # 4 - 2.5 = 1.5, then 2 - 1.5 = 0.5
    assert reflect_index(2.5, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_reflect_rejects_bad_args():
    with pytest.raises(ValueError):
        reflect_index(-0.1, 1.0)
    with pytest.raises(ValueError):
        reflect_index(0.5, 0.0)


@given(st.floats(0.0, 2.0), st.floats(0.05, 2.0))
@settings(max_examples=200, deadline=None)
def test_reflect_matches_periodic_fold(x, s):
    got = reflect_index(x, s)
    assert 0.0 <= got <= s
    assert got == pytest.approx(brute_fold(x, s), abs=1e-9)
    if x <= s:
        assert got == x


def test_reflect_array_matches_scalar():
    rng = np.random.default_rng(3)
    xs = rng.uniform(0.0, 2.0, size=64)
    s = 0.37
    batch = reflect_array(xs, s)
    singles = np.array([reflect_index(x, s) for x in xs])
    np.testing.assert_allclose(batch, singles, atol=1e-12)


def test_reflection_count_bound():
    ell, delta = 2.0, 0.05
    bound = 1 + math.ceil(math.log2(ell / delta))
    rng = np.random.default_rng(5)
    for _ in range(2000):
        x = rng.uniform(0.0, ell)
        s = rng.uniform(delta, ell)
        assert reflection_count(x, s) <= bound
