"""Command line front end.

Verbs: simulate, analyze, zero-dynamics, gait-design, event-control.
Exit codes: 0 on success, 1 on configuration problems (bad files, bad
flags), 2 on domain failures (infeasible gait, divergence, no touchdown).
Reports are a JSON summary (stdout and file), CSV time series, and PNG
figures rendered next to the CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile

import numpy as np

from . import plots
from .control import (FeedbackGains, load_controller, save_controller)
from .errors import ConfigError, DimensionError, DomainError, HzdError
from .gaitopt import GaitObjective, optimize
from .model import load_model
from .poincare import (event_based_step, event_gain_design, fixed_point_solve,
                       integrate_step, poincare_map, stability_spectrum, walk)
from .zerodyn import ZeroDyn1D, fixed_point_zeta, kappa12

DEFAULT_OUT_ENV = "HZDGAIT_OUT"


# -- small plumbing ----------------------------------------------------------

def _out_dir(args):
    out = args.out_dir or os.environ.get(DEFAULT_OUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _emit(args, summary, path):
    _atomic_write(path, json.dumps(summary, indent=2) + "\n")
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        for key, val in summary.items():
            print(f"{key}: {val}")
    return 0


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def _load_model_arg(spec):
    if spec is None:
        raise ConfigError("--model is required")
    return load_model(spec)


def _packaged_gait(name):
    path = os.path.join(os.path.dirname(__file__), "gaits", f"{name}.json")
    if not os.path.exists(path):
        raise ConfigError(
            f"no packaged gait for model '{name}'; pass --controller / "
            "--seed-controller explicitly")
    return path


def _load_controller_arg(args, model):
    if getattr(args, "controller", None):
        return load_controller(args.controller)
    return load_controller(_packaged_gait(model.name))


def _zero_seed(model, vc, zd1d=None):
    """Pre-impact fixed point of the gait from its hybrid zero dynamics."""
    zd = zd1d if zd1d is not None else ZeroDyn1D(vc, model)
    fp = fixed_point_zeta(zd)
    if not fp["exists"]:
        raise DomainError("gait has no periodic zero-dynamics solution")
    kk = kappa12(vc, model, vc.theta_minus)
    sigma = np.sqrt(2.0 * fp["zeta_star"])
    qd = kk["J"][:, 0] * sigma / kk["M"]
    return np.concatenate([kk["q"], qd]), fp


def _write_trajectory_csv(path, traj, model):
    N = model.N
    cols = ["t"] + [f"q{i}" for i in range(N)] + [f"qd{i}" for i in range(N)]
    have_u = traj.u is not None and len(traj.u)
    have_y = traj.y is not None and len(traj.y)
    if have_u:
        cols += [f"u{i}" for i in range(np.asarray(traj.u).shape[1])]
    if have_y:
        cols += [f"y{i}" for i in range(np.atleast_2d(traj.y).shape[1] if
                                        np.asarray(traj.y).ndim > 1 else 1)]
    if traj.theta is not None:
        cols.append("theta")
    if traj.sigma is not None:
        cols.append("sigma")
    rows = []
    for i, t in enumerate(traj.t):
        row = [t] + list(traj.x[i])
        if have_u:
            row += list(np.atleast_1d(traj.u[i]))
        if have_y:
            row += list(np.atleast_1d(traj.y[i]))
        if traj.theta is not None:
            row.append(traj.theta[i])
        if traj.sigma is not None:
            row.append(traj.sigma[i])
        rows.append(row)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        writer.writerows(rows)
    os.replace(tmp, path)
    return path


# -- verbs -------------------------------------------------------------------

def cmd_simulate(args):
    model = _load_model_arg(args.model)
    controller = None
    if args.controller or args.state is None:
        vc, gains = _load_controller_arg(args, model)
        if args.eps is not None:
            gains = FeedbackGains(kp=gains.kp, kd=gains.kd, eps=args.eps)
        controller = (vc, gains)
    if args.state is not None:
        x0 = np.asarray(json.loads(args.state), dtype=float)
        if x0.size != 2 * model.N:
            raise ConfigError(f"state must have {2 * model.N} entries")
        traj = integrate_step(model, controller, x0, h=args.step,
                              t_max=args.t_max, u_max=args.u_max)
        for _ in range(args.steps - 1):
            _, more = poincare_map(model, controller, traj.x_end,
                                   with_trajectory=True, h=args.step,
                                   t_max=args.t_max, u_max=args.u_max)
            traj = traj.concat(more)
    else:
        x0, _ = _zero_seed(model, controller[0])
        _, traj = walk(model, controller, x0, args.steps, h=args.step,
                       t_max=args.t_max, u_max=args.u_max)
    out = _out_dir(args)
    csv_path = _write_trajectory_csv(os.path.join(out, "simulate.csv"),
                                     traj, model)
    figures = plots.trajectory_figures(traj, model, out)
    summary = _jsonable({
        "verb": "simulate", "model": model.name, "steps": args.steps,
        "duration": float(traj.t[-1]), "impacts": len(traj.impact_times),
        "saturated": traj.saturated, "final_state": traj.x_end,
        "csv": csv_path, "figures": figures,
    })
    return _emit(args, summary, os.path.join(out, "simulate_summary.json"))


def cmd_analyze(args):
    model = _load_model_arg(args.model)
    vc, gains = _load_controller_arg(args, model)
    gains = FeedbackGains(kp=gains.kp, kd=gains.kd, eps=args.eps)
    controller = (vc, gains)
    x_seed, fp = _zero_seed(model, vc)
    x_star = fixed_point_solve(model, controller, x_seed, tol=args.tol,
                               h=args.step)
    analysis = stability_spectrum(model, controller, x_star, eps=args.eps,
                                  h=args.step)
    verdict_spec = analysis.spectral_radius < 1.0
    verdict_slope = (analysis.delta_zero_sq is not None
                     and analysis.delta_zero_sq < 1.0)
    verdicts = {"spectrum": verdict_spec, "slope": verdict_slope}
    sim_errs = None
    if args.sim_steps > 0:
        x0 = x_star.copy()
        x0[model.N:] *= 1.0 + args.perturb
        chart = analysis.chart
        x = x0
        sim_errs = []
        for _ in range(args.sim_steps):
            x = poincare_map(model, controller, x, record=False,
                             h=args.step)
            sim_errs.append(float(np.linalg.norm(
                chart.to_chart(x) - chart.to_chart(x_star))))
        verdicts["simulation"] = sim_errs[-1] < sim_errs[0]
    stable = all(verdicts.values())
    _, traj = poincare_map(model, controller, x_star, with_trajectory=True,
                           h=args.step)
    out = _out_dir(args)
    csv_path = _write_trajectory_csv(os.path.join(out, "analyze_cycle.csv"),
                                     traj, model)
    figures = plots.trajectory_figures(traj, model, out, prefix="analyze")
    summary = _jsonable({
        "verb": "analyze", "model": model.name,
        "fixed_point": x_star,
        "eigenvalues": [abs(e) for e in analysis.eigenvalues],
        "spectral_radius": analysis.spectral_radius,
        "delta_zero_sq": analysis.delta_zero_sq,
        "zeta_star": fp["zeta_star"],
        "verdicts": verdicts,
        "verdict": "stable" if stable else "unstable",
        "perturbation_errors": sim_errs,
        "csv": csv_path, "figures": figures,
    })
    return _emit(args, summary, os.path.join(out, "analyze_summary.json"))


def cmd_zero_dynamics(args):
    model = _load_model_arg(args.model)
    vc, _ = _load_controller_arg(args, model)
    zd = ZeroDyn1D(vc, model)
    fp = fixed_point_zeta(zd)
    thetas = np.linspace(vc.theta_plus, vc.theta_minus, args.grid)
    table = {"theta": thetas,
             "kappa1": np.array([zd.kappa1(t) for t in thetas]),
             "kappa2": np.array([zd.kappa2(t) for t in thetas]),
             "v_zero": np.array([zd.v_zero(t) for t in thetas])}
    out = _out_dir(args)
    csv_path = os.path.join(out, "zero_dynamics.csv")
    fd, tmp = tempfile.mkstemp(dir=out, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "kappa1", "kappa2", "V_zero"])
        for i in range(args.grid):
            writer.writerow([table["theta"][i], table["kappa1"][i],
                             table["kappa2"][i], table["v_zero"][i]])
    os.replace(tmp, csv_path)
    figures = plots.zero_dynamics_figure(table, out)
    summary = _jsonable({
        "verb": "zero-dynamics", "model": model.name,
        "delta_zero": zd.delta_zero,
        "delta_zero_sq": zd.delta_zero ** 2,
        "zeta_star": fp["zeta_star"] if fp["exists"] else None,
        "exists": fp["exists"], "stable": fp["stable"],
        "v_minus": fp["v_minus"], "v_max": fp["v_max"],
        "csv": csv_path, "figures": figures,
    })
    return _emit(args, summary, os.path.join(out, "zero_dynamics_summary.json"))


def cmd_gait_design(args):
    model = _load_model_arg(args.model)
    if args.seed_controller:
        vc_seed, gains = load_controller(args.seed_controller)
    else:
        vc_seed, gains = load_controller(_packaged_gait(model.name))
    alpha0 = vc_seed.alpha.copy()
    if args.degree is not None and args.degree != vc_seed.degree:
        from .control import bernstein_matrix
        svals = np.linspace(0.0, 1.0, 25 * (args.degree + 1))
        samples = np.stack([vc_seed.hd(s)[0] for s in svals])
        Bmat = bernstein_matrix(args.degree, svals)
        alpha0, *_ = np.linalg.lstsq(Bmat, samples, rcond=None)
        alpha0 = alpha0.T
    objective = GaitObjective(target_speed=args.target_speed,
                              u_max=args.u_max)
    sol = optimize(model, alpha0, objective, vc_template=vc_seed,
                   budget=args.budget, seed=args.seed)
    out = _out_dir(args)
    ctrl_path = args.out or os.path.join(out, "designed_controller.json")
    save_controller(ctrl_path, sol.vc, gains)
    figures = plots.design_figure(sol.evaluations, out)
    report = _jsonable({
        "verb": "gait-design", "model": model.name,
        "cost": sol.cost, "feasible": sol.feasible,
        "margins": sol.report["margins"], "speed": sol.report["speed"],
        "period": sol.period, "zeta_star": sol.zeta_star,
        "delta_zero_sq": sol.delta_zero_sq,
        "evaluations": sol.report["evaluations"],
        "controller": ctrl_path, "figures": figures,
    })
    return _emit(args, report, os.path.join(out, "gait_design_report.json"))


def cmd_event_control(args):
    model = _load_model_arg(args.model)
    vc, gains = _load_controller_arg(args, model)
    if args.eps is not None:
        gains = FeedbackGains(kp=gains.kp, kd=gains.kd, eps=args.eps)
    alpha0 = vc.alpha.copy()
    mid = alpha0.shape[1] // 2

    def make_controller(beta):
        b = float(np.atleast_1d(beta)[0])
        a = alpha0.copy()
        a[:, mid - 1] += b
        a[:, mid] += b
        return (vc.replace(alpha=a), gains)

    x_star, fp = _zero_seed(model, vc)
    policy = event_gain_design(model, make_controller, x_star,
                               factor=args.factor, deadbeat=args.deadbeat,
                               h=args.step)
    x0 = x_star.copy()
    x0[model.N:] *= 1.0 + args.perturb
    chart = policy.chart

    def run(with_policy):
        errs, x = [], x0.copy()
        for _ in range(args.steps):
            if with_policy:
                x, _ = event_based_step(x, policy, model=model,
                                        h=args.step)
            else:
                x = poincare_map(model, make_controller(0.0), x,
                                 record=False, h=args.step)
            errs.append(float(np.linalg.norm(
                chart.to_chart(x) - chart.to_chart(x_star))))
        return errs

    errs_open = run(False)
    errs_closed = run(True)

    def rate(errs):
        if len(errs) < 3 or errs[1] <= 0:
            return None
        return float((errs[-1] / errs[1]) ** (1.0 / (len(errs) - 2)))

    out = _out_dir(args)
    csv_path = os.path.join(out, "event_control.csv")
    fd, tmp = tempfile.mkstemp(dir=out, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "error_open_loop", "error_event_control"])
        for i, (a, b) in enumerate(zip(errs_open, errs_closed), start=1):
            writer.writerow([i, a, b])
    os.replace(tmp, csv_path)
    figures = plots.contraction_figure(
        [errs_open, errs_closed], ["open loop", "event control"], out)
    summary = _jsonable({
        "verb": "event-control", "model": model.name,
        "open_loop_radius": float(np.max(np.abs(policy.open_loop_eigs))),
        "designed_radius": float(np.max(np.abs(policy.closed_loop_eigs))),
        "measured_open_rate": rate(errs_open),
        "measured_closed_rate": rate(errs_closed),
        "gain": policy.K, "csv": csv_path, "figures": figures,
    })
    return _emit(args, summary, os.path.join(out, "event_control_summary.json"))


# -- parser ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="hzdgait",
        description="Hybrid zero dynamics gait analysis and design for "
                    "planar point-foot bipeds.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--model", required=True,
                       help="preset name (compass, threelink, fivelink) or "
                            "model JSON path")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${DEFAULT_OUT_ENV} or .)")
        p.add_argument("--json", action="store_true",
                       help="machine-readable summary on stdout")

    p = sub.add_parser("simulate", help="integrate the hybrid dynamics")
    common(p)
    p.add_argument("--controller", default=None, help="controller JSON path")
    p.add_argument("--state", default=None,
                   help="initial state as a JSON list (passive if no "
                        "controller is given)")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--t-max", type=float, default=5.0)
    p.add_argument("--step", type=float, default=1e-4, help="RK4 step")
    p.add_argument("--u-max", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="fixed point and stability report")
    common(p)
    p.add_argument("--controller", default=None)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--perturb", type=float, default=0.01)
    p.add_argument("--sim-steps", type=int, default=0,
                   help="perturbation-simulation steps (0 skips)")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--step", type=float, default=1e-4, help="RK4 step")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("zero-dynamics", help="restricted dynamics tables")
    common(p)
    p.add_argument("--controller", default=None)
    p.add_argument("--grid", type=int, default=201)
    p.set_defaults(func=cmd_zero_dynamics)

    p = sub.add_parser("gait-design", help="optimize a periodic gait")
    common(p)
    p.add_argument("--target-speed", type=float, default=None)
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--out", default=None, help="controller JSON output path")
    p.add_argument("--seed-controller", default=None,
                   help="controller JSON seeding the search")
    p.add_argument("--u-max", type=float, default=200.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gait_design)

    p = sub.add_parser("event-control", help="once-per-step stabilization")
    common(p)
    p.add_argument("--controller", default=None)
    p.add_argument("--perturb", type=float, default=0.02)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--factor", type=float, default=0.5)
    p.add_argument("--deadbeat", action="store_true")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--step", type=float, default=1e-4, help="RK4 step")
    p.set_defaults(func=cmd_event_control)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DimensionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except HzdError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
