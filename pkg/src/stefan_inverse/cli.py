"""Command-line drivers: forward runs, inversion, checks, synthetic data.

Commands write delimited tables plus JSON summaries into the output
directory and, unless ``--no-plots`` is given, render diagnostic figures
next to them.  All CSV and JSON artifacts are byte-identical for a fixed
run spec and seed; wall-clock timings go to a separate plain-text file.

Exit codes: 0 success, 2 usage or file errors, 3 inversion finished without
meeting the violation tolerance, 4 singular linear solve.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adjoint import (
    ControlDirection,
    adjoint_solve,
    assemble_gradient,
    fd_gradient_pairings,
    pairing,
)
from .controls import (
    ContinuousControl,
    DiscreteControl,
    boundary_h2_norm,
    control_from_dict,
    control_norm,
    discretize_control,
    flux_h1_norm,
    save_control,
    source_l2_norm,
)
from .fields import Field
from .forward import SingularStepError, forward_solve, energy_diagnostics
from .objective import cost_discrete, interface_temperature_averages
from .optimizer import SolverConfig, minimize
from .problem import ProblemData, load_problem, save_problem
from . import reporting

__all__ = ["RunSpec", "CLIError", "main", "entry", "synthesize_measurements"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_SINGULAR = 4

_DEFAULT_N = 32

logger = logging.getLogger(__name__)


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunSpec:
    command: str
    problem: str | None = None
    control: str | None = None
    out: str = "."
    n: int | None = None
    m0: int | None = None
    seed: int = 0
    noise: float = 0.0
    stages: int | None = None
    inner_iters: int | None = None
    penalty_init: float | None = None
    penalty_growth: float | None = None
    step0: float | None = None
    grad_tol: float | None = None
    violation_tol: float | None = None
    feasible_set: str | None = None
    penalty_weight: float = 1.0
    eps: float = 1e-5
    component: str = "all"
    directions: int = 3
    no_plots: bool = False

    def payload(self) -> dict:
        # hash only what shapes the results: where they land and whether
        # figures render must not change the recorded configuration
        skip = {"out", "no_plots"}
        return {
            key: value
            for key, value in self.__dict__.items()
            if value is not None and key not in skip
        }

    def hash(self) -> str:
        return reporting.config_hash(self.payload())


def _require(path: str | None, flag: str) -> Path:
    if path is None:
        raise CLIError(f"missing required flag {flag}")
    p = Path(path)
    if not p.exists():
        raise CLIError(f"file not found: {p}")
    return p


def _outdir(spec: RunSpec) -> Path:
    out = Path(spec.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output directory not writable: {out} ({exc})") from exc
    return out


def _load_problem(spec: RunSpec) -> ProblemData:
    path = _require(spec.problem, "--problem")
    try:
        return load_problem(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CLIError(f"bad problem config {path}: {exc}") from exc


def _time_only(field: Field):
    return lambda t: np.asarray(field(np.zeros_like(np.asarray(t, dtype=float)), t))


def _load_control(spec: RunSpec, data: ProblemData) -> DiscreteControl:
    """Load a tabulated control, or discretize a closed-form one.

    Closed-form specs carry field descriptions for s, g (time curves) and
    f (a space-time field) and are sampled at the requested grid sizes.
    """
    path = _require(spec.control, "--control")
    try:
        with path.open() as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CLIError(f"bad control config {path}: {exc}") from exc

    kind = payload.get("kind", "discrete")
    try:
        if kind == "discrete":
            control = control_from_dict(payload)
            if spec.n is not None and control.time_grid.n != spec.n:
                raise CLIError(
                    f"control tabulated at n={control.time_grid.n} "
                    f"but --n {spec.n} was requested"
                )
            if spec.m0 is not None and control.spatial_grid.m0 != spec.m0:
                raise CLIError(
                    f"control tabulated at m0={control.spatial_grid.m0} "
                    f"but --m0 {spec.m0} was requested"
                )
            return control
        if kind == "continuous":
            s_field = Field.from_dict(payload["s"], base_dir=path.parent)
            g_field = Field.from_dict(payload["g"], base_dir=path.parent)
            f_field = Field.from_dict(payload["f"], base_dir=path.parent)
            v = ContinuousControl(
                s=_time_only(s_field), g=_time_only(g_field), f=f_field
            )
            n = spec.n if spec.n is not None else _DEFAULT_N
            m0 = spec.m0 if spec.m0 is not None else n
            return discretize_control(v, data, n, m0)
    except CLIError:
        raise
    except (KeyError, ValueError) as exc:
        raise CLIError(f"bad control config {path}: {exc}") from exc
    raise CLIError(f"unknown control kind {kind!r} in {path}")


def _provenance(spec: RunSpec, control: DiscreteControl) -> dict:
    return {
        "command": spec.command,
        "config_hash": spec.hash(),
        "n": control.time_grid.n,
        "m0": control.spatial_grid.m0,
        "seed": spec.seed,
    }


def _write_timing(outdir: Path, seconds: float) -> None:
    (outdir / "timing.txt").write_text(f"wall_seconds={seconds:.6f}\n")


# -- forward ---------------------------------------------------------------


def cmd_forward(spec: RunSpec) -> int:
    t0 = time.perf_counter()
    out = _outdir(spec)
    data = _load_problem(spec)
    control = _load_control(spec, data)

    try:
        traj = forward_solve(control, data)
    except SingularStepError as exc:
        raise CLIError(
            f"singular tridiagonal solve at time level {exc.level}", EXIT_SINGULAR
        ) from exc

    mu_avg = interface_temperature_averages(data, control.time_grid)
    cost = cost_discrete(traj, control, data, spec.penalty_weight, mu_avg=mu_avg)
    energy = energy_diagnostics(traj, control, data)
    meta = _provenance(spec, control)

    reporting.write_csv(out / "trajectory.csv",
                        reporting.trajectory_columns(traj), meta)
    reporting.write_csv(out / "interface.csv",
                        reporting.interface_columns(traj, mu_avg), meta)
    reporting.write_json(out / "summary.json", {
        **meta,
        "cost": cost.to_dict(),
        "energy": energy.to_dict(),
        "max_step_residual": float(np.max(traj.step_residuals)),
    })
    if not spec.no_plots:
        reporting.render_state_figure(out / "state.png", traj)
        reporting.render_interface_figure(out / "interface.png", traj, mu_avg)
    _write_timing(out, time.perf_counter() - t0)
    return EXIT_OK


# -- synth -----------------------------------------------------------------


def synthesize_measurements(
    control: DiscreteControl,
    data: ProblemData,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[ProblemData, dict]:
    """Run the forward model and tabulate its measurements as step data.

    The final temperature is exported per final-level cell and the interface
    temperature per time slab, so the discrete misfit of the generating
    control against the exported data vanishes identically.  Optional noise
    is additive Gaussian with deviation ``noise`` times the clean-sample RMS,
    truncated at four deviations.
    """
    traj = forward_solve(control, data)
    tg, sg = control.time_grid, control.spatial_grid
    n = tg.n
    m_final = int(sg.boundary_index[n])

    w_breaks = sg.nodes[: m_final + 1].copy()
    w_values = traj.u[n, :m_final].copy()
    mu_breaks = tg.nodes.copy()
    mu_values = traj.boundary_values()[1:].copy()
    s_star = float(control.s[n])

    sigmas = {"w": 0.0, "mu": 0.0}
    if noise > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        for name, values in (("w", w_values), ("mu", mu_values)):
            sigma = noise * float(np.sqrt(np.mean(values**2)))
            sigmas[name] = sigma
            if sigma > 0.0:
                bump = rng.normal(0.0, sigma, size=values.shape)
                values += np.clip(bump, -4.0 * sigma, 4.0 * sigma)

    w_field = Field.step(w_breaks, w_values, axis="x")
    mu_field = Field.step(mu_breaks, mu_values, axis="t")
    synth_data = data.with_measurements(w_field, mu_field, s_star)
    meta = {
        "noise_level": noise,
        "noise_model": "additive gaussian, sigma = level * clean RMS, "
                       "truncated at 4 sigma",
        "sigma_w": sigmas["w"],
        "sigma_mu": sigmas["mu"],
        "s_star": s_star,
    }
    return synth_data, meta


def cmd_synth(spec: RunSpec) -> int:
    t0 = time.perf_counter()
    out = _outdir(spec)
    data = _load_problem(spec)
    control = _load_control(spec, data)

    rng = np.random.default_rng(spec.seed)
    try:
        synth_data, meta = synthesize_measurements(
            control, data, noise=spec.noise, rng=rng
        )
    except SingularStepError as exc:
        raise CLIError(
            f"singular tridiagonal solve at time level {exc.level}", EXIT_SINGULAR
        ) from exc

    prov = _provenance(spec, control)
    save_problem(synth_data, out / "problem_with_data.json",
                 extra={"synthetic": {**meta, **prov}})
    save_control(control, synth_data.s_lower, out / "truth_control.json",
                 extra={"config_hash": spec.hash()})

    w_field, mu_field = synth_data.w, synth_data.mu
    rows = {
        "component": (["w"] * len(w_field.step_values)
                      + ["mu"] * len(mu_field.step_values) + ["s_star"]),
        "index": (list(range(len(w_field.step_values)))
                  + list(range(1, len(mu_field.step_values) + 1)) + [0]),
        "lo": (list(w_field.breaks[:-1]) + list(mu_field.breaks[:-1]) + [0.0]),
        "hi": (list(w_field.breaks[1:]) + list(mu_field.breaks[1:]) + [0.0]),
        "value": (list(w_field.step_values) + list(mu_field.step_values)
                  + [meta["s_star"]]),
    }
    reporting.write_csv(out / "measurements.csv", rows, prov)
    reporting.write_json(out / "summary.json", {**prov, **meta})
    if not spec.no_plots:
        reporting.render_measurements_figure(
            out / "measurements.png",
            w_field.breaks, w_field.step_values,
            mu_field.breaks, mu_field.step_values,
            meta["s_star"],
        )
    _write_timing(out, time.perf_counter() - t0)
    return EXIT_OK


# -- invert ----------------------------------------------------------------


def _solver_config(spec: RunSpec) -> SolverConfig:
    base = SolverConfig()
    kwargs = base.to_dict()
    if spec.stages is not None:
        kwargs["outer_iters"] = spec.stages
    for name in ("inner_iters", "penalty_init", "penalty_growth", "step0",
                 "grad_tol", "violation_tol", "feasible_set"):
        value = getattr(spec, name)
        if value is not None:
            kwargs[name] = value
    return SolverConfig.from_dict(kwargs)


def cmd_invert(spec: RunSpec) -> int:
    t0 = time.perf_counter()
    out = _outdir(spec)
    data = _load_problem(spec)
    initial = _load_control(spec, data)
    cfg = _solver_config(spec)

    norm = control_norm(initial)
    if norm > data.norm_bound:
        logger.warning(
            "initial control norm %.6g exceeds admissible bound %.6g; projecting",
            norm, data.norm_bound,
        )

    try:
        result, record = minimize(initial, data, cfg)
    except SingularStepError as exc:
        raise CLIError(
            f"singular tridiagonal solve at time level {exc.level}", EXIT_SINGULAR
        ) from exc

    prov = _provenance(spec, result)
    save_control(result, data.s_lower, out / "control.json",
                 extra={"config_hash": spec.hash()})

    log_lines = [json.dumps(it.to_dict(), sort_keys=True)
                 for it in record.iterates]
    (out / "run_log.jsonl").write_text(
        "\n".join(log_lines) + ("\n" if log_lines else "")
    )

    record_payload = record.to_dict()
    record_payload.pop("wall_time")
    record_payload.pop("iterates")
    reporting.write_json(out / "summary.json", {
        **prov,
        "solver": cfg.to_dict(),
        "converged": record.converged,
        "final_cost": record.stages[-1].final_cost if record.stages else None,
        "final_breakdown": (record.iterates[-1].cost.to_dict()
                            if record.iterates else None),
        "record": record_payload,
    })
    if not spec.no_plots:
        reporting.render_convergence_figure(out / "convergence.png", record)
        reporting.render_controls_figure(out / "controls.png", result,
                                         reference=initial)
    _write_timing(out, time.perf_counter() - t0)
    return EXIT_OK if record.converged else EXIT_NOT_CONVERGED


# -- grad-check ------------------------------------------------------------


def _smooth_curve(q: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    modes = np.stack([np.ones_like(q), q, q * q, np.sin(np.pi * q), np.cos(np.pi * q)])
    return coeffs @ modes


def _block_directions(
    control: DiscreteControl, component: str, count: int, rng: np.random.Generator
) -> list[tuple[str, ControlDirection]]:
    """Random smooth perturbations, one block at a time.

    Directions are random combinations of low-order smooth modes rather than
    white noise: the analytic pairing converges to the finite-difference slope
    only along perturbations that are samples of smooth functions, so rough
    directions would drown the comparison in discretization noise.
    """
    tg, sg = control.time_grid, control.spatial_grid
    q = tg.nodes / tg.t_final
    xc = 0.5 * (sg.nodes[:-1] + sg.nodes[1:]) / sg.ell
    qc = 0.5 * (q[:-1] + q[1:])
    shape_s = control.s.shape
    shape_f = control.f.shape
    out = []
    for name in ("s", "g", "f"):
        if component not in ("all", name):
            continue
        for _ in range(count):
            ds = np.zeros(shape_s)
            dg = np.zeros(shape_s)
            df = np.zeros(shape_f)
            if name == "s":
                # factor q^2 keeps the curve and its first step flat at t=0
                ds = q * q * _smooth_curve(q, rng.normal(size=5))
                ds[0] = ds[1] = 0.0
            elif name == "g":
                dg = _smooth_curve(q, rng.normal(size=5))
            else:
                cx = _smooth_curve(xc, rng.normal(size=5))
                ct = _smooth_curve(qc, rng.normal(size=5))
                df = ct[:, None] * cx[None, :]
            out.append((name, ControlDirection(ds=ds, dg=dg, df=df)))
    return out


def cmd_grad_check(spec: RunSpec) -> int:
    t0 = time.perf_counter()
    out = _outdir(spec)
    data = _load_problem(spec)
    control = _load_control(spec, data)
    if spec.component not in ("all", "s", "g", "f"):
        raise CLIError(f"unknown component {spec.component!r} (use all, s, g, f)")

    rng = np.random.default_rng(spec.seed)
    tagged = _block_directions(control, spec.component, spec.directions, rng)
    directions = [d for _, d in tagged]

    try:
        traj = forward_solve(control, data)
        adj = adjoint_solve(traj, control, data, spec.penalty_weight)
        grad = assemble_gradient(traj, adj, control, data, spec.penalty_weight)
        analytic = np.array([pairing(grad, d) for d in directions])
        fd = fd_gradient_pairings(
            control, data, spec.penalty_weight, directions, eps=spec.eps
        )
    except SingularStepError as exc:
        raise CLIError(
            f"singular tridiagonal solve at time level {exc.level}", EXIT_SINGULAR
        ) from exc

    scale = np.maximum(np.abs(fd), 1e-12)
    rel_err = np.abs(analytic - fd) / scale
    prov = _provenance(spec, control)
    reporting.write_csv(out / "grad_check.csv", {
        "component": [name for name, _ in tagged],
        "index": np.arange(len(tagged)),
        "analytic": analytic,
        "fd": fd,
        "rel_err": rel_err,
    }, prov)
    reporting.write_json(out / "summary.json", {
        **prov,
        "eps": spec.eps,
        "penalty_weight": spec.penalty_weight,
        "max_rel_err": float(np.max(rel_err)) if len(rel_err) else 0.0,
    })
    if not spec.no_plots:
        reporting.render_grad_check_figure(out / "grad_check.png", analytic, fd)
    _write_timing(out, time.perf_counter() - t0)
    return EXIT_OK


# -- norms -----------------------------------------------------------------


def cmd_norms(spec: RunSpec) -> int:
    t0 = time.perf_counter()
    out = _outdir(spec)
    path = _require(spec.control, "--control")
    with path.open() as fh:
        payload = json.load(fh)
    if payload.get("kind", "discrete") == "discrete":
        control = control_from_dict(payload)
        bound = None
        if spec.problem is not None:
            bound = _load_problem(spec).norm_bound
    else:
        data = _load_problem(spec)
        control = _load_control(spec, data)
        bound = data.norm_bound

    tau = control.time_grid.tau
    values = {
        "boundary_h2": boundary_h2_norm(control.s, tau),
        "flux_h1": flux_h1_norm(control.g, tau),
        "source_l2": source_l2_norm(control.f, tau, control.spatial_grid.steps),
    }
    values["control"] = control_norm(control)

    prov = _provenance(spec, control)
    names = list(values)
    reporting.write_csv(out / "norms.csv", {
        "name": names,
        "value": [values[k] for k in names],
    }, prov)
    summary = {**prov, "norms": values}
    if bound is not None:
        summary["norm_bound"] = bound
        summary["admissible"] = bool(values["control"] <= bound)
    reporting.write_json(out / "summary.json", summary)
    if not spec.no_plots:
        reporting.render_norms_figure(
            out / "norms.png", names, [values[k] for k in names], bound
        )
    _write_timing(out, time.perf_counter() - t0)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


_COMMANDS = {
    "forward": cmd_forward,
    "invert": cmd_invert,
    "grad-check": cmd_grad_check,
    "norms": cmd_norms,
    "synth": cmd_synth,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stefan-inverse",
        description="Inverse free-boundary heat solver: simulate, synthesize "
                    "measurements, and recover boundary controls.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, control_required=True):
        p.add_argument("--problem", help="problem data JSON")
        if control_required:
            p.add_argument("--control", required=True, help="control JSON "
                           "(tabulated or closed-form)")
        else:
            p.add_argument("--control", help="control JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--n", type=int, help="time levels (closed-form controls)")
        p.add_argument("--m0", type=int, help="base spatial cells (default: n)")
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("forward", help="run the forward model")
    common(p)
    p.add_argument("--penalty-weight", type=float, default=1.0,
                   help="cap-penalty weight used in the reported cost")

    p = sub.add_parser("synth", help="generate measurement data from a control")
    common(p)
    p.add_argument("--noise", type=float, default=0.0,
                   help="relative noise level on w and mu samples")

    p = sub.add_parser("invert", help="recover controls from measurements")
    common(p)
    p.add_argument("--stages", type=int, help="penalty continuation stages")
    p.add_argument("--inner-iters", type=int, dest="inner_iters",
                   help="descent iterations per stage")
    p.add_argument("--penalty-init", type=float, dest="penalty_init")
    p.add_argument("--penalty-growth", type=float, dest="penalty_growth")
    p.add_argument("--step0", type=float, help="initial line-search step")
    p.add_argument("--grad-tol", type=float, dest="grad_tol")
    p.add_argument("--violation-tol", type=float, dest="violation_tol")
    p.add_argument("--feasible-set", dest="feasible_set",
                   choices=["plain", "compatible"])

    p = sub.add_parser("grad-check", help="compare adjoint and FD gradients")
    common(p)
    p.add_argument("--penalty-weight", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-5,
                   help="central-difference step")
    p.add_argument("--component", default="all", choices=["all", "s", "g", "f"],
                   help="restrict the check to one control block")
    p.add_argument("--directions", type=int, default=3,
                   help="random directions per block")

    p = sub.add_parser("norms", help="report control-block norms")
    common(p)
    return parser


def _spec_from_args(args: argparse.Namespace) -> RunSpec:
    known = {f for f in RunSpec.__dataclass_fields__}
    kwargs = {k: v for k, v in vars(args).items() if k in known}
    return RunSpec(**kwargs)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    spec = _spec_from_args(args)
    try:
        return _COMMANDS[spec.command](spec)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
