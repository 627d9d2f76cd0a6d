"""Command-line harness.

    gramstab mu-check | gramian | simulate --mode M | cost | scan-lambda
             [--config PATH] [--out DIR] [--seed INT] [--format csv|json] ...

Exit codes: 0 success, 2 condition failure, 3 tolerance failure,
64 usage error, 65 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bilinear_sim import (
    NonlinearRunConfig,
    bilinear_extra_columns,
    check_feedback_forms,
    random_gap,
    simulate_bilinear,
    summarize_run,
)
from .control_cost import SteeringProblem, cost_scaling_experiment, default_target, min_energy_control
from .errors import ConditioningError, GramstabError, PositivityError
from .feedback_loop import certify_decay, costate_oracle, simulate_linear, trajectory_table
from .finite_time import (
    build_schedule,
    exp_mp,
    finite_time_trajectory_table,
    simulate_finite_time,
    stage_bound_audit,
)
from .gramian import build_gramian, gramian_sidecar, lambda_scaling_scan, lyapunov_residual, reduced_labels
from .reporting import write_json, write_table
from .spectral_core import basis_vector, build_coupling, coupling_table, h3_norm, mu_condition_check, parse_dipole

EXIT_OK, EXIT_CONDITION, EXIT_TOLERANCE, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3, 64, 65

MODES = ("linear", "oracle", "bilinear", "finite-time")


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    mu: str = "builtin:xsq"
    N: int = 8
    lam: float = 2.0
    lambda_hat: float = 1.0
    T: float = 2.0
    dt: float = 1e-3
    integrator: str = "rk4"
    y0: list = field(default_factory=lambda: [[2, 1, 1.0], [1, 2, 0.3]])
    epsilon: float = 1e-3
    sample_every: int = 10
    n_stages: int = 5
    lambda_cap: float = 1e4
    gamma: float = 1.0
    ft_mode: str = "oracle"
    Ns: list = field(default_factory=lambda: [2, 4, 8])
    Ts: list = field(default_factory=lambda: [0.5, 0.2, 0.1, 0.05])
    export_control: bool = False
    lambdas: list = field(default_factory=lambda: [1.0, 4.0, 16.0, 64.0])
    threshold: float = 0.5
    seed: int = 0
    output_dir: str = "."
    format: str = "csv"
    # set by the harness, part of the provenance hash
    command: str = ""

    # JSON keys that differ from attribute names
    ALIASES = {"lambda": "lam", "mu_id": "mu", "out": "output_dir"}

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in dataclasses.fields(cls)} - {"command"}
        kwargs = {}
        for key, value in data.items():
            name = cls.ALIASES.get(key, key)
            if name not in known:
                raise UsageError(f"unknown config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def resolved(self):
        """Mapping used for hashing (output location excluded so it does not change results)."""
        out = dataclasses.asdict(self)
        out.pop("output_dir")
        return out


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise UsageError(f"{name} must be a positive number, got {value!r}")


def validate(cfg, command, mode=None):
    """Reject configs that would violate an operation's preconditions."""
    if cfg.format not in ("csv", "json"):
        raise UsageError(f"format must be csv or json, got {cfg.format!r}")
    try:
        parse_dipole(cfg.mu)
    except GramstabError as exc:
        raise UsageError(str(exc)) from None
    if not isinstance(cfg.N, int) or cfg.N < 1:
        raise UsageError(f"N must be a positive integer, got {cfg.N!r}")
    if not isinstance(cfg.seed, int):
        raise UsageError(f"seed must be an integer, got {cfg.seed!r}")
    if cfg.N < 2:
        raise UsageError("N must be at least 2")
    if command == "gramian":
        _positive("lambda", cfg.lam)
    if command == "scan-lambda":
        if not cfg.lambdas:
            raise UsageError("lambdas must be non-empty")
        for lam in cfg.lambdas:
            _positive("lambdas entry", lam)
    if command == "mu-check" and not isinstance(cfg.threshold, (int, float)):
        raise UsageError("threshold must be a number")
    if command == "cost":
        if not cfg.Ns or not cfg.Ts:
            raise UsageError("Ns and Ts must be non-empty")
        for T in cfg.Ts:
            _positive("Ts entry", T)
        for n in cfg.Ns:
            if not isinstance(n, int) or n < 2:
                raise UsageError(f"Ns entries must be integers >= 2, got {n!r}")
    if command == "simulate":
        if mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        _positive("lambda", cfg.lam)
        _positive("T", cfg.T)
        if mode in ("linear", "oracle", "bilinear"):
            _positive("dt", cfg.dt)
            if cfg.dt > cfg.T:
                raise UsageError(f"dt={cfg.dt} exceeds T={cfg.T}")
        if mode == "linear" and cfg.integrator not in ("rk4", "expm"):
            raise UsageError(f"integrator must be rk4 or expm, got {cfg.integrator!r}")
        if mode in ("linear", "oracle", "finite-time"):
            _initial_state(cfg)
        if mode == "bilinear":
            _positive("epsilon", cfg.epsilon)
            if not 0 < cfg.lambda_hat < cfg.lam:
                raise UsageError("need 0 < lambda_hat < lambda")
            try:
                NonlinearRunConfig(cfg.epsilon, cfg.lam, cfg.lambda_hat, cfg.T, cfg.N)
            except GramstabError as exc:
                raise UsageError(str(exc)) from None
            if not isinstance(cfg.sample_every, int) or cfg.sample_every < 1:
                raise UsageError("sample_every must be a positive integer")
        if mode == "finite-time":
            if cfg.ft_mode not in ("oracle", "rk4"):
                raise UsageError(f"ft_mode must be oracle or rk4, got {cfg.ft_mode!r}")
            _positive("lambda_cap", cfg.lambda_cap)
            _positive("gamma", cfg.gamma)
            try:
                build_schedule(cfg.T, cfg.n_stages, lambda_cap=cfg.lambda_cap, gamma=cfg.gamma)
            except GramstabError as exc:
                raise UsageError(str(exc)) from None


def _initial_state(cfg):
    """Interleaved y0 from ``[[i, k, value], ...]`` terms."""
    y = np.zeros(2 * cfg.N)
    try:
        for i, k, value in cfg.y0:
            if i not in (1, 2) or not 1 <= k <= cfg.N:
                raise UsageError(f"bad y0 term {[i, k, value]}")
            if i == 1 and k == 1:
                raise UsageError("y0 must not have a Phi^1_1 component")
            y += float(value) * basis_vector(cfg.N, i, k)
    except (TypeError, ValueError):
        raise UsageError(f"y0 must be a list of [i, k, value] terms, got {cfg.y0!r}") from None
    return y


# ---------------------------------------------------------------------------


def _stem(cfg, name):
    return os.path.join(cfg.output_dir, name)


def cmd_mu_check(cfg):
    coupling = build_coupling(parse_dipole(cfg.mu), cfg.N)
    rep = mu_condition_check(coupling)
    header = ["k", "b_k", "k3_abs_b_k"]
    rows = [[int(r[0]), r[1], r[2]] for r in rep.table]
    write_table(_stem(cfg, "mu_check"), header, rows, cfg.resolved(), cfg.format)
    passed = rep.min_value > cfg.threshold
    write_json(
        _stem(cfg, "mu_check_summary.json"),
        {
            "mu_id": cfg.mu,
            "N": cfg.N,
            "min_k3_abs_b": rep.min_value,
            "argmin_k": rep.argmin,
            "b_1": rep.b1,
            "threshold": cfg.threshold,
            "passed": passed,
        },
        cfg.resolved(),
    )
    return EXIT_OK if passed else EXIT_CONDITION


def cmd_gramian(cfg):
    coupling = build_coupling(parse_dipole(cfg.mu), cfg.N)
    header, rows = coupling_table(coupling)
    write_table(_stem(cfg, "coupling"), header, rows, cfg.resolved(), cfg.format)
    Q = build_gramian(coupling, cfg.lam)
    labels = [f"{i}_{k}" for i, k in reduced_labels(cfg.N)]
    rows = [[lab, *Q.mat[r]] for r, lab in enumerate(labels)]
    write_table(_stem(cfg, "gramian"), ["label", *labels], rows, cfg.resolved(), cfg.format)
    resid = lyapunov_residual(Q, coupling, relative=True)
    summary = {**gramian_sidecar(Q), "cond": Q.cond, "lyapunov_residual_rel": resid}
    write_json(_stem(cfg, "gramian_summary.json"), summary, cfg.resolved())
    return EXIT_OK if resid <= 1e-9 else EXIT_TOLERANCE


def _simulate_linear_modes(cfg, mode, coupling):
    Q = build_gramian(coupling, cfg.lam)
    y0 = _initial_state(cfg)
    if mode == "oracle":
        traj = costate_oracle(y0, Q, coupling, cfg.T, cfg.dt)
    else:
        traj = simulate_linear(y0, Q, coupling, cfg.T, cfg.dt, integrator=cfg.integrator)
    cert = certify_decay(traj, Q)
    payload = {**cert.to_dict(Q.lam, cfg.N), "mode": mode}
    if mode == "oracle":
        ok = cert.max_relative_violation <= 1e-10
    elif cfg.integrator == "expm":
        ref = costate_oracle(y0, Q, coupling, None, None, times=traj.times)
        err = float(np.max(h3_norm(traj.states - ref.states)) / h3_norm(y0))
        payload.update(integrator="expm", oracle_sup_error=err)
        ok = err <= 1e-9
    else:
        payload["integrator"] = "rk4"
        ok = cert.max_identity_violation <= 1e-5
    header, rows = trajectory_table(traj, Q)
    return header, rows, payload, ok


def _simulate_bilinear(cfg, coupling):
    Q = build_gramian(coupling, cfg.lam)
    run_cfg = NonlinearRunConfig(cfg.epsilon, cfg.lam, cfg.lambda_hat, cfg.T, cfg.N)
    z0 = random_gap(cfg.N, cfg.epsilon, np.random.default_rng(cfg.seed))
    traj = simulate_bilinear(None, run_cfg, Q, coupling, sample_every=cfg.sample_every, gap=z0)
    summ = summarize_run(traj, cfg.lambda_hat)
    check_feedback_forms(Q, coupling, traj)
    header, rows = trajectory_table(traj, Q, extra=bilinear_extra_columns(traj))
    payload = {
        "mode": "bilinear",
        "lambda": cfg.lam,
        "lambda_hat": cfg.lambda_hat,
        "N": cfg.N,
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "dt": traj.meta["dt"],
        "fitted_rate": summ.rate,
        "target_rate": 2.0 * cfg.lambda_hat,
        "prefactor_C": summ.prefactor,
        "max_l2_drift": summ.max_l2_drift,
        "control_l2": summ.control_l2,
    }
    ok = summ.max_l2_drift <= 1e-8 and summ.rate >= 2.0 * cfg.lambda_hat
    return header, rows, payload, ok


def _simulate_finite_time(cfg, coupling):
    sched = build_schedule(cfg.T, cfg.n_stages, lambda_cap=cfg.lambda_cap, gamma=cfg.gamma)
    run = simulate_finite_time(_initial_state(cfg), sched, coupling, mode=cfg.ft_mode)
    audit = stage_bound_audit(run)
    st_header, st_rows = audit.table()
    write_table(_stem(cfg, "stages"), st_header, st_rows, cfg.resolved(), cfg.format)
    knots = run.knot_log_norms
    tol = 1e-10 if cfg.ft_mode == "oracle" else 1e-5
    viol = [st.identity_violation if cfg.ft_mode == "oracle" else st.identity_violation_abs for st in run.stages]
    decreasing = bool(np.all(np.diff(knots) < 0))
    ratio_log = float(knots[-1] - knots[0])
    payload = {
        "mode": "finite-time",
        "stage_mode": cfg.ft_mode,
        "N": cfg.N,
        "T": cfg.T,
        "knots": list(sched.t),
        "lambdas": list(sched.lam),
        "s": list(sched.s),
        "gamma": sched.gamma,
        "gamma_check": list(sched.gamma_check),
        "gamma_warning": sched.gamma_warning,
        "symbolic_gamma_ok": sched.symbolic_ok,
        "knot_norms": [exp_mp(v) for v in knots],
        "final_over_initial": exp_mp(ratio_log),
        "ln_final_over_initial": ratio_log,
        "norms_strictly_decreasing": decreasing,
        "stage_identity_violation": viol,
        "fitted_C": audit.C,
    }
    ok = decreasing and ratio_log <= math.log(1e-6) and max(viol) <= tol
    header, rows = finite_time_trajectory_table(run)
    return header, rows, payload, ok


def cmd_simulate(cfg, mode):
    coupling = build_coupling(parse_dipole(cfg.mu), cfg.N)
    if mode in ("linear", "oracle"):
        header, rows, payload, ok = _simulate_linear_modes(cfg, mode, coupling)
    elif mode == "bilinear":
        header, rows, payload, ok = _simulate_bilinear(cfg, coupling)
    else:
        header, rows, payload, ok = _simulate_finite_time(cfg, coupling)
    write_table(_stem(cfg, "trajectory"), header, rows, cfg.resolved(), cfg.format)
    write_json(_stem(cfg, "certificate.json"), {**payload, "passed": ok}, cfg.resolved())
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_cost(cfg):
    coupling = build_coupling(parse_dipole(cfg.mu), max(cfg.Ns))
    res = cost_scaling_experiment(coupling, cfg.Ns, cfg.Ts)
    header, rows = res.table()
    write_table(_stem(cfg, "cost_scaling"), header, rows, cfg.resolved(), cfg.format)
    write_json(
        _stem(cfg, "cost_summary.json"),
        {
            "mu_id": cfg.mu,
            "slopes_ln_cost_vs_inv_T": {str(n): v for n, v in res.slopes.items()},
            "lower_bound_C": res.lower_bound_C,
            "lower_bound_N": res.lower_bound_N,
            "cells": [
                {"N": c.N, "T": c.T, "status": c.status, "ln_cost": c.ln_cost, "ln_l1": c.ln_l1}
                for c in res.cells
            ],
        },
        cfg.resolved(),
    )
    if cfg.export_control:
        for c in res.cells:
            if c.status != "ok":
                continue
            ctl = min_energy_control(SteeringProblem(c.T, c.N, coupling, default_target(c.N)))
            h, r = ctl.table()
            write_table(_stem(cfg, f"control_N{c.N}_T{c.T:g}"), h, r, cfg.resolved(), cfg.format)
    if all(c.status != "ok" for c in res.cells):
        return EXIT_CONDITION if all(c.status == "ConditioningError" for c in res.cells) else EXIT_RUNTIME
    return EXIT_OK


def cmd_scan_lambda(cfg):
    coupling = build_coupling(parse_dipole(cfg.mu), cfg.N)
    lambdas = sorted(float(v) for v in cfg.lambdas)
    scan = lambda_scaling_scan(coupling, lambdas)
    header = ["lambda", "sigma_min", "sigma_max", "ln_sigma_min"]
    write_table(_stem(cfg, "lambda_scan"), header, scan.rows(), cfg.resolved(), cfg.format)
    positive = bool(np.all(scan.sigma_min > 0))
    decreasing = bool(np.all(np.diff(scan.sigma_min) < 0))
    write_json(
        _stem(cfg, "lambda_scan_summary.json"),
        {
            "N": cfg.N,
            "mu_id": cfg.mu,
            "fitted_C_sqrt": scan.c_bound,
            "slope_vs_sqrt_lambda": scan.slope_sqrt,
            "slope_vs_ln_lambda": scan.slope_log,
            "sigma_min_positive": positive,
            "sigma_min_decreasing": decreasing,
        },
        cfg.resolved(),
    )
    if not positive:
        return EXIT_CONDITION
    return EXIT_OK if decreasing else EXIT_TOLERANCE


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--mu", help="dipole id: builtin:xsq or poly:[c0, c1, ...]")
    common.add_argument("--N", type=int, help="number of modes")
    common.add_argument("--lambda", dest="lam", type=float, help="decay gain")

    parser = _Parser(prog="gramstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gramstab {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("mu-check", parents=[common], help="tabulate k^3 |b_k|")
    p.add_argument("--threshold", type=float)

    sub.add_parser("gramian", parents=[common], help="build Q(lambda) and check the Lyapunov identity")

    p = sub.add_parser("simulate", parents=[common], help="run a closed-loop simulation")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--integrator", choices=("rk4", "expm"))
    p.add_argument("--y0", type=json.loads, help='JSON list of [i, k, value] terms')
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda-hat", dest="lambda_hat", type=float)
    p.add_argument("--sample-every", dest="sample_every", type=int)
    p.add_argument("--stages", dest="n_stages", type=int)
    p.add_argument("--lambda-cap", dest="lambda_cap", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--ft-mode", dest="ft_mode", choices=("oracle", "rk4"))

    p = sub.add_parser("cost", parents=[common], help="minimal-energy cost versus horizon")
    p.add_argument("--Ns", type=_int_list)
    p.add_argument("--Ts", type=_float_list)
    p.add_argument("--export-control", dest="export_control", action="store_const", const=True)

    p = sub.add_parser("scan-lambda", parents=[common], help="sigma_min of Q(lambda) over a gain grid")
    p.add_argument("--lambdas", type=_float_list)
    return parser


def load_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    try:
        cfg = ExperimentConfig.from_mapping(data)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    skip = {"config", "command", "mode"}
    for key, value in vars(args).items():
        if key not in skip and value is not None:
            setattr(cfg, key, value)
    # 2 and 2.0 must hash the same
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.type == "float" and isinstance(value, int) and not isinstance(value, bool):
            setattr(cfg, f.name, float(value))
    return cfg


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
        cfg = load_config(args)
        mode = getattr(args, "mode", None)
        cfg.command = f"{args.command} {mode}" if mode else args.command
        validate(cfg, args.command, mode)
    except UsageError as exc:
        print(f"gramstab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "mu-check":
            return cmd_mu_check(cfg)
        if args.command == "gramian":
            return cmd_gramian(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, mode)
        if args.command == "cost":
            return cmd_cost(cfg)
        return cmd_scan_lambda(cfg)
    except (PositivityError, ConditioningError) as exc:
        print(f"gramstab: condition failure: {exc}", file=sys.stderr)
        return EXIT_CONDITION
    except GramstabError as exc:
        print(f"gramstab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"gramstab: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
