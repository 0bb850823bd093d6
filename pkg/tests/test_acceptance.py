"""Acceptance gate: one test per numbered behavior criterion.

Each test checks its criterion at the stated tolerance and prints a single
verdict line; the ``-v`` listing doubles as the per-criterion summary.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from conftest import make_control, make_problem, nodal_error
from stefan_inverse import (
    ContinuousControl,
    Field,
    ProblemData,
    cost_discrete,
    discretize_control,
    forward_solve,
    interpolate_control,
)
from stefan_inverse.adjoint import (
    ControlDirection,
    adjoint_solve,
    assemble_adjoint_step,
    assemble_gradient,
    fd_gradient_pairings,
    pairing,
)
from stefan_inverse.forward import (
    assemble_step,
    build_step_tables,
    energy_diagnostics,
    solve_step,
)
from stefan_inverse.grids import reflection_count
from stefan_inverse.objective import interface_temperature_averages, subplus
from stefan_inverse.optimizer import SolverConfig, minimize, violation_measure


def verdict(number, label, detail):
    print(f"criterion {number:02d} ({label}): PASS -- {detail}")


def test_criterion_01_constant_state_exact_on_moving_grid():
    t0 = time.perf_counter()
    base = ProblemData(
        a=Field.constant(1.0), b=Field.constant(0.0), c=Field.constant(0.0),
        phi=Field.constant(1.0), gamma=Field.polynomial([[1.0], [0.2]]),
        chi=Field.constant(0.0), mu=Field.constant(1.0), w=Field.constant(1.0),
        t_final=1.0, ell=2.0, s0=1.0, s_lower=0.5, s_star=1.3, u_star=10.0,
        beta0=1.0, beta1=1.0, beta2=1.0, norm_bound=100.0, a_floor=0.5,
    )
    n = m0 = 32
    kink = 4.0 / n
    moving = ContinuousControl(
        s=lambda t: 1.0 + 0.3 * np.maximum(np.asarray(t, dtype=float) - kink, 0.0),
        g=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        f=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
        s_prime=lambda t: 0.3 * (np.asarray(t, dtype=float) > kink),
    )
    control = discretize_control(moving, base, n, m0)
    assert control.s[-1] > control.s[0]  # the boundary really moves

    # latent-heat flux balancing the boundary motion keeps u constant
    cc = interpolate_control(control)
    chi = Field.from_callable(
        lambda x, t: np.asarray(base.gamma(x, t)) * np.asarray(cc.s_prime(t)),
        fn_dx=lambda x, t: np.asarray(base.gamma.dx(x, t)) * np.asarray(cc.s_prime(t)),
    )
    data = dataclasses.replace(base, chi=chi)
    traj = forward_solve(control, data)
    err = 0.0
    for k in range(n + 1):
        m = int(control.spatial_grid.boundary_index[k])
        err = max(err, float(np.max(np.abs(traj.u[k, : m + 1] - 1.0))))
    elapsed = time.perf_counter() - t0
    assert err <= 1e-12
    assert elapsed < 1.0
    verdict(1, "constant state exact on moving grid",
            f"max deviation {err:.3e}, {elapsed:.3f}s")


def test_criterion_02_every_step_matches_dense_elimination():
    rng = np.random.default_rng(42)
    worst = 0.0
    kept = 0
    for _ in range(40):
        n = int(rng.integers(3, 7))
        m0 = int(rng.integers(2, 5))
        data = ProblemData(
            a=Field.polynomial([[0.6 + 0.8 * rng.random()], [0.3 * rng.random()]]),
            b=Field.constant(float(rng.uniform(-0.5, 0.5))),
            c=Field.constant(float(rng.uniform(-0.5, 0.5))),
            phi=Field.polynomial([[1.0], [float(rng.uniform(-0.3, 0.3))]]),
            gamma=Field.polynomial([[1.0], [0.1 * rng.random()]]),
            chi=Field.constant(float(rng.uniform(-0.2, 0.2))),
            mu=Field.constant(0.8), w=Field.constant(1.0),
            t_final=1.0, ell=2.0, s0=1.0, s_lower=0.4, s_star=1.2, u_star=10.0,
            beta0=1.0, beta1=1.0, beta2=1.0, norm_bound=1e3, a_floor=0.3,
        )
        slope = rng.uniform(0.0, 0.5)
        v = ContinuousControl(
            s=lambda t, sl=slope: 1.0 + 0.5 * sl * np.asarray(t, dtype=float) ** 2,
            g=lambda t: 0.2 - 0.1 * np.asarray(t, dtype=float),
            f=lambda x, t: 0.3 + 0.0 * np.asarray(x, dtype=float),
            s_prime=lambda t, sl=slope: sl * np.asarray(t, dtype=float),
        )
        control = discretize_control(v, data, n, m0)
        tables = build_step_tables(control, data)
        traj = forward_solve(control, data, tables=tables)
        mu_avg = interface_temperature_averages(data, control.time_grid)
        cc = interpolate_control(control)
        s_vals = np.asarray(cc.s(control.time_grid.nodes), dtype=float)
        slab_slope = np.zeros(n + 1)
        slab_slope[1:] = np.diff(s_vals) / control.time_grid.tau
        adj = adjoint_solve(traj, control, data, 1.0, tables=tables)

        for k in range(1, n + 1):
            m = int(control.spatial_grid.boundary_index[k])
            if not 2 <= m <= 7:  # keep systems with 3 to 8 unknowns
                continue
            kept += 1
            forward_sys = assemble_step(k, traj.u[k - 1], control, data,
                                        tables=tables)
            backward_sys = assemble_adjoint_step(
                k, adj.psi[k], traj, control, data, 1.0, tables, mu_avg,
                slab_slope,
            )
            for system in (forward_sys, backward_sys):
                ours = solve_step(system)
                dense = np.linalg.solve(system.dense(), system.rhs)
                scale = max(1.0, float(np.max(np.abs(dense))))
                worst = max(worst, float(np.max(np.abs(ours - dense))) / scale)
    assert kept > 100
    assert worst <= 1e-12
    verdict(2, "steps match dense elimination",
            f"{kept} systems, worst relative gap {worst:.3e}")


def test_criterion_03_manufactured_solution_convergence(manufactured):
    t0 = time.perf_counter()
    errors = []
    for n, m0 in ((8, 8), (32, 16), (128, 32)):
        control = manufactured.control(manufactured.data_exact, n, m0)
        traj = forward_solve(control, manufactured.data_exact)
        errors.append(nodal_error(traj, manufactured.u, control.time_grid.nodes))
    elapsed = time.perf_counter() - t0
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    assert all(r >= 1.8 for r in ratios)
    assert elapsed < 30.0
    verdict(3, "manufactured-solution convergence",
            "errors " + "/".join(f"{e:.3e}" for e in errors)
            + ", factors " + "/".join(f"{r:.2f}" for r in ratios)
            + f", {elapsed:.2f}s")


def _pairing_gaps(data, n):
    control = make_control(data, n, n)
    t = control.time_grid.nodes
    nodes = control.spatial_grid.nodes
    xc = 0.5 * (nodes[:-1] + nodes[1:])
    tc = 0.5 * (t[:-1] + t[1:])
    ds = t**2 * (1.5 - t)
    ds[0] = ds[1] = 0.0
    dg = np.cos(2.0 * t)
    df = np.sin(xc[None, :] + tc[:, None])
    zero_t = np.zeros(n + 1)
    zero_f = np.zeros_like(control.f)
    directions = [
        ControlDirection(ds=ds, dg=zero_t.copy(), df=zero_f.copy()),
        ControlDirection(ds=zero_t.copy(), dg=dg, df=zero_f.copy()),
        ControlDirection(ds=zero_t.copy(), dg=zero_t.copy(), df=df),
    ]
    traj = forward_solve(control, data)
    adj = adjoint_solve(traj, control, data, 1.0)
    grad = assemble_gradient(traj, adj, control, data, 1.0)
    fd = fd_gradient_pairings(control, data, 1.0, directions, eps=1e-5)
    analytic = np.array([pairing(grad, d) for d in directions])
    return np.abs(analytic - fd) / np.abs(fd)


def test_criterion_04_adjoint_pairing_tracks_fd(bench_data_nocap):
    rel16 = _pairing_gaps(bench_data_nocap, 16)
    rel32 = _pairing_gaps(bench_data_nocap, 32)
    assert np.all(rel16 <= 5e-2)
    factors = rel16 / rel32
    assert np.all(factors >= 1.5)
    verdict(4, "adjoint pairing consistency",
            "n=16 gaps " + "/".join(f"{r:.2%}" for r in rel16)
            + ", refinement factors " + "/".join(f"{f:.2f}" for f in factors))


def test_criterion_05_discrete_cost_approaches_continuous(manufactured):
    t0 = time.perf_counter()
    gaps = []
    for n in (8, 16, 32, 64):
        control = manufactured.control(manufactured.data_offset, n, n)
        traj = forward_solve(control, manufactured.data_offset)
        value = cost_discrete(traj, control, manufactured.data_offset, 0.0).total
        gaps.append(abs(value - manufactured.cost_offset))
    elapsed = time.perf_counter() - t0
    # decreasing with 10 percent slack per refinement
    assert all(b < 1.1 * a for a, b in zip(gaps, gaps[1:]))
    assert elapsed < 60.0
    verdict(5, "discrete cost approaches continuous",
            "gaps " + "/".join(f"{g:.3e}" for g in gaps) + f", {elapsed:.2f}s")


def test_criterion_06_flux_recovery_from_consistent_data(bench_data_nocap):
    from stefan_inverse.cli import synthesize_measurements

    t0 = time.perf_counter()
    n = m0 = 32
    truth = make_control(bench_data_nocap, n, m0)
    seeded, _ = synthesize_measurements(truth, bench_data_nocap)
    start = dataclasses.replace(truth, g=1.2 * truth.g)
    initial_cost = cost_discrete(
        forward_solve(start, seeded), start, seeded, 1.0
    ).total
    best, run = minimize(
        start, seeded, SolverConfig(outer_iters=3, inner_iters=30)
    )
    elapsed = time.perf_counter() - t0
    final_cost = run.stages[-1].final_cost
    drop = initial_cost / final_cost
    rel_g = float(np.linalg.norm(best.g - truth.g) / np.linalg.norm(truth.g))
    assert drop >= 1e3
    assert rel_g <= 5e-2
    assert elapsed < 300.0
    verdict(6, "flux recovery from consistent data",
            f"cost drop {drop:.3g}x, flux error {rel_g:.2%}, {elapsed:.1f}s")


def test_criterion_07_penalty_growth_drives_violation_down(bench_data_nocap):
    from stefan_inverse.cli import synthesize_measurements

    n = m0 = 32
    truth = make_control(bench_data_nocap, n, m0)
    reference = forward_solve(truth, bench_data_nocap)
    sg = reference.spatial_grid
    peak = max(
        float(np.max(reference.u[k, : int(sg.boundary_index[k]) + 1]))
        for k in range(1, n + 1)
    )
    seeded, _ = synthesize_measurements(truth, bench_data_nocap)
    capped = dataclasses.replace(seeded, u_star=0.93 * peak)
    start = dataclasses.replace(truth, g=truth.g - 1.0)
    initial = violation_measure(forward_solve(start, capped), capped)
    assert initial > 0.0

    cfg = SolverConfig(penalty_init=1.0, penalty_growth=10.0, outer_iters=3,
                       inner_iters=40, violation_tol=0.0)
    _, run = minimize(start, capped, cfg)
    weights = [stage.penalty_weight for stage in run.stages]
    finals = [stage.final_violation for stage in run.stages]
    assert weights == [1.0, 10.0, 100.0]
    assert all(b <= a for a, b in zip(finals, finals[1:]))
    assert finals[-1] <= 1e-4 * initial
    verdict(7, "penalty growth drives violation down",
            "stage violations " + "/".join(f"{v:.3e}" for v in finals)
            + f", start {initial:.3e}")


def test_criterion_08_energy_identity_bounded(bench_data_nocap):
    bound = 10.0  # recorded stability constant for this benchmark family
    ratios = []
    for n in (8, 16, 32, 64):
        control = make_control(bench_data_nocap, n, n)
        report = energy_diagnostics(
            forward_solve(control, bench_data_nocap), control, bench_data_nocap
        )
        ratios.append(report.l2_ratio)
        assert report.l2_ratio <= bound
        assert report.h1_ratio <= bound
    verdict(8, "energy identity bounded",
            "l2 ratios " + "/".join(f"{r:.3f}" for r in ratios)
            + f" <= {bound}")


def test_criterion_09_positive_part_is_a_contraction():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        size = int(rng.integers(1, 40))
        scale = 10.0 ** rng.uniform(-3, 3)
        u = scale * rng.standard_normal(size)
        v = scale * rng.standard_normal(size)
        lhs = float(np.linalg.norm(subplus(u) - subplus(v)))
        rhs = float(np.linalg.norm(u - v))
        assert lhs <= rhs
    verdict(9, "positive part is a contraction", "1000 random pairs, no slack")


def test_criterion_10_reflection_count_within_bound():
    ell = 2.0
    delta = 0.05
    limit = 1 + math.ceil(math.log2(ell / delta))
    rng = np.random.default_rng(7)
    worst = 0
    for _ in range(10_000):
        boundary = float(rng.uniform(delta, ell))
        x = float(rng.uniform(0.0, ell))
        count = reflection_count(x, boundary)
        worst = max(worst, count)
        assert count <= limit
    verdict(10, "reflection count within bound",
            f"worst {worst} <= {limit} over 10000 pairs")
