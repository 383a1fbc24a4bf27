"""Periodic gait design by derivative-free search over Bezier coefficients.

The search space is the interior of the constraint table: the touchdown
column is pinned (it fixes the landing posture), and the first two columns
are re-derived by ``enforce_invariance`` at every evaluation, so each
iterate is hybrid-invariant by construction. The cost is evaluated on the
zero-dynamics orbit through the gait's own fixed point, which makes an
objective evaluation a couple of spline integrals instead of a full-order
simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .control import VirtualConstraint, bezier_eval, u_star
from .errors import ConfigError, DomainError, HzdError, InfeasibleError, MonotonicityError
from .zerodyn import (ZeroDyn1D, ZeroDynReduced, _kappa12, enforce_invariance,
                      fixed_point_zeta, hybrid_invariance_residual)

INFEASIBLE_COST = 1e12
ORBIT_GRID = 201
RATIO_CAP = 1e3
LATE_GUARD = 0.6


@dataclass
class GaitObjective:
    """Cost plus feasibility constraints for the gait search.

    ``target_speed`` is the desired average walking speed in m/s; ``None``
    drops the speed-band constraint. Torque bound ``u_max`` of ``None``
    means unbounded actuation. Penalties are exterior quadratics, exactly
    zero on the feasible set.
    """

    target_speed: float | None = None
    speed_band: float = 0.10
    mu: float = 0.6
    clearance_min: float = 0.03
    u_max: float | None = None
    penalty_weight: float = 1e3
    n_grid: int = ORBIT_GRID


@dataclass
class GaitSolution:
    alpha: np.ndarray
    vc: VirtualConstraint
    x_star: np.ndarray
    period: float
    zeta_star: float
    delta_zero_sq: float
    cost: float
    report: dict
    evaluations: list = field(default_factory=list)

    @property
    def feasible(self):
        return all(m >= 0.0 for m in self.report["margins"].values())


def ground_reaction(model, state, u=None):
    """Stance-pivot reaction force from the floating-base residual.

    ``state`` is (q, qd) or a length-2N vector; the pinned acceleration is
    produced by the model itself (with torque ``u``, zero if omitted). The
    returned dict carries the tangential and normal components of the force
    the ground exerts on the stance leg.
    """
    if isinstance(state, (tuple, list)):
        q, qd = state
    else:
        state = np.asarray(state, dtype=float)
        q, qd = state[:model.N], state[model.N:]
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = model.accel(q, qd, u if u is not None else np.zeros(model.k))
    # base rows of the extended (floating-base) equations with p_base pinned
    w = model._w
    cross = np.vstack([-w * np.cos(q), -w * np.sin(q)])
    crossdot = np.vstack([w * np.sin(q) * qd, -w * np.cos(q) * qd])
    F = cross @ qdd + crossdot @ qd
    return {"F_T": float(F[0]), "F_N": float(F[1] + model.total_mass * model.g)}


def _orbit_samples(model, vc, zd1d, zeta_star, n_grid):
    """States, torques and timing along the zero-dynamics orbit."""
    thetas = np.linspace(vc.theta_plus, vc.theta_minus, n_grid)
    red = ZeroDynReduced(vc, model)
    qs, qds, us, dt_dth = [], [], [], []
    for th in thetas:
        zeta = zeta_star - zd1d.v_zero(th)
        if zeta <= 0.0:
            raise DomainError(
                f"orbit leaves D_zero at theta={th:.4f} (zeta={zeta:.3e})")
        kk = _kappa12(red, th)
        sigma = np.sqrt(2.0 * zeta)
        M = np.atleast_2d(kk["M"])[0, 0]
        q = kk["q"]
        qd = np.atleast_2d(kk["J"].T).T[:, 0] * sigma / M
        thd = kk["kappa1"] * sigma
        if thd <= 0.0:
            raise DomainError(f"phasing variable stalls at theta={th:.4f}")
        qs.append(q)
        qds.append(qd)
        us.append(u_star(vc, model, q, qd))
        dt_dth.append(1.0 / thd)
    return {"theta": thetas, "q": np.asarray(qs), "qd": np.asarray(qds),
            "u": np.asarray(us), "dt_dth": np.asarray(dt_dth)}


def cost(model, vc, zd1d=None, n_grid=ORBIT_GRID, with_samples=False):
    """J = (1/step_length) * integral of |u*|^2 dt on the periodic orbit."""
    if zd1d is None:
        zd1d = ZeroDyn1D(vc, model)
    fp = fixed_point_zeta(zd1d)
    if not fp["exists"]:
        raise InfeasibleError("no periodic zero-dynamics solution for this gait")
    orb = _orbit_samples(model, vc, zd1d, fp["zeta_star"], n_grid)
    q_minus = orb["q"][-1]
    step_length = abs(model.swing_foot(q_minus, np.zeros(model.N))["p2x"])
    if step_length < 1e-6:
        raise DomainError(f"degenerate step length {step_length:.3e} m")
    integrand = np.einsum("ij,ij->i", orb["u"], orb["u"]) * orb["dt_dth"]
    J = float(np.trapezoid(integrand, orb["theta"])) / step_length
    if with_samples:
        T = float(np.trapezoid(orb["dt_dth"], orb["theta"]))
        return J, {"samples": orb, "fixed_point": fp, "step_length": step_length,
                   "period": T, "zd1d": zd1d}
    return J


def _swing_clearance(model, red, s):
    vc = red.manifold.vc
    th = vc.theta_plus + s * vc.delta_theta
    return model.swing_height(_kappa12(red, th)["q"])


def _late_clearance(model, red, n=25):
    """Smallest swing-foot height inside the armed window, endpoint excluded."""
    worst = np.inf
    for s in np.linspace(LATE_GUARD, 1.0, n + 1)[:-1]:
        worst = min(worst, _swing_clearance(model, red, s))
    return worst


def evaluate_gait(model, vc, objective):
    """Cost, margins and orbit data for one hybrid-invariant constraint."""
    J, data = cost(model, vc, n_grid=objective.n_grid, with_samples=True)
    orb = data["samples"]
    fp = data["fixed_point"]
    red = ZeroDynReduced(vc, model)
    margins = {}
    fn_min, ratio_worst = np.inf, 0.0
    for q, qd, u in zip(orb["q"], orb["qd"], orb["u"]):
        gr = ground_reaction(model, (q, qd), u)
        fn_min = min(fn_min, gr["F_N"])
        # the friction cone only makes sense under positive normal force;
        # non-positive F_N is already charged to the normal_force margin
        if gr["F_N"] > 1e-9:
            ratio = abs(gr["F_T"]) / gr["F_N"]
            ratio_worst = max(ratio_worst, min(ratio, RATIO_CAP))
    margins["normal_force"] = fn_min
    margins["friction"] = objective.mu - ratio_worst
    margins["clearance"] = _swing_clearance(model, red, 0.5) - objective.clearance_min
    margins["late_clearance"] = _late_clearance(model, red)
    if objective.u_max is not None:
        margins["torque"] = objective.u_max - float(np.abs(orb["u"]).max())
    speed = data["step_length"] / data["period"]
    if objective.target_speed is not None:
        band = objective.speed_band * objective.target_speed
        margins["speed"] = band - abs(speed - objective.target_speed)
    margins["stability"] = 1.0 - fp["delta_zero_sq"]
    inv = hybrid_invariance_residual(vc, model)
    margins["periodicity"] = 1e-8 - max(abs(inv["y_plus"]), abs(inv["yd_plus"]))
    # characteristic scale per constraint so one unit of violation hurts
    # comparably regardless of physical dimension
    scales = {"normal_force": 10.0, "friction": 0.05, "clearance": 0.005,
              "late_clearance": 0.001, "torque": 10.0, "speed": 0.05,
              "stability": 0.05, "periodicity": 1e-6}
    penalty = objective.penalty_weight * sum(
        (min(0.0, m) / scales[name]) ** 2 for name, m in margins.items())
    return {"cost": J, "penalty": penalty, "margins": margins,
            "speed": speed, "data": data}


def _existence_deficit(model, alpha0, interior, vc_template):
    """Graded infeasibility measure so the search can walk toward D_zero.

    Zero exactly when a stable periodic solution exists with the whole
    swing inside the domain; otherwise it reflects how far the pumping /
    stability conditions are from holding.
    """
    try:
        alpha = _assemble(alpha0, interior)
        vc = vc_template.replace(alpha=alpha)
        vc = vc.replace(alpha=enforce_invariance(vc, model))
        fp = fixed_point_zeta(ZeroDyn1D(vc, model))
    except HzdError:
        return 1e3 + float(np.linalg.norm(interior))
    d2 = fp["delta_zero_sq"]
    deficit = max(0.0, d2 - 1.0 + 1e-6)
    if d2 < 1.0:
        zeta_candidate = -fp["v_minus"] / (1.0 - d2)
        deficit += max(0.0, fp["v_minus"])
        deficit += max(0.0, fp["v_max"] - d2 * zeta_candidate)
    return deficit


def _assemble(alpha0, interior):
    """Interior columns into the table; columns 0, 1 and the last stay put."""
    alpha = np.asarray(alpha0, dtype=float).copy()
    k, ncol = alpha.shape
    n_int = ncol - 3
    alpha[:, 2:ncol - 1] = np.asarray(interior, dtype=float).reshape(k, n_int)
    return alpha


def optimize(model, alpha0, objective, vc_template=None, budget=2000,
             seed=0, verbose=False):
    """Nelder-Mead over the interior Bezier columns with exterior penalties.

    ``alpha0`` seeds the table; ``vc_template`` carries the phasing data
    (qc_idx, c0, theta range). Restarts from the incumbent with a fresh
    simplex whenever a run collapses before the budget is spent.
    """
    alpha0 = np.atleast_2d(np.asarray(alpha0, dtype=float))
    if vc_template is None:
        raise ConfigError("a template VirtualConstraint is required")
    if alpha0.shape[1] < 4:
        raise ConfigError("gait search needs Bezier degree >= 3")
    log = []
    evals = [0]
    best = {"p": None, "total": np.inf, "res": None}

    def build(interior):
        alpha = _assemble(alpha0, interior)
        vc = vc_template.replace(alpha=alpha)
        return vc.replace(alpha=enforce_invariance(vc, model))

    def objective_fn(p):
        evals[0] += 1
        try:
            vc = build(p)
            res = evaluate_gait(model, vc, objective)
            total = res["cost"] + res["penalty"]
        except HzdError as exc:
            total = INFEASIBLE_COST + _existence_deficit(model, alpha0, p,
                                                         vc_template)
            res = {"error": str(exc)}
        log.append((evals[0], total))
        if total < best["total"]:
            best.update(p=np.asarray(p, dtype=float).copy(), total=total, res=res)
        if verbose and evals[0] % 50 == 0:
            print(f"  eval {evals[0]}: best {best['total']:.4f}")
        return total

    p0 = alpha0[:, 2:alpha0.shape[1] - 1].ravel()
    rng = np.random.default_rng(seed)
    while evals[0] < budget:
        start = best["p"] if best["p"] is not None else p0
        if best["p"] is not None:
            start = start + rng.normal(scale=0.02, size=start.size)
        out = minimize(objective_fn, start, method="Nelder-Mead",
                       options={"maxfev": budget - evals[0],
                                "xatol": 1e-6, "fatol": 1e-8})
        res = best["res"] or {}
        converged_feasible = out.success and "margins" in res \
            and all(m >= 0.0 for m in res["margins"].values())
        if converged_feasible or evals[0] >= budget:
            break
    if best["p"] is None or "margins" not in (best["res"] or {}):
        raise InfeasibleError(
            f"no feasible gait within the budget of {budget} evaluations")
    vc = build(best["p"])
    res = best["res"]
    data = res["data"]
    orb = data["samples"]
    x_star = np.concatenate([orb["q"][-1], orb["qd"][-1]])
    sol = GaitSolution(
        alpha=vc.alpha.copy(), vc=vc, x_star=x_star,
        period=data["period"], zeta_star=data["fixed_point"]["zeta_star"],
        delta_zero_sq=data["fixed_point"]["delta_zero_sq"],
        cost=res["cost"],
        report={"margins": res["margins"], "speed": res["speed"],
                "penalty": res["penalty"], "evaluations": evals[0]},
        evaluations=log)
    if not sol.feasible:
        raise InfeasibleError(
            "search exhausted its budget without a feasible gait; worst "
            "margin " + min(res["margins"], key=res["margins"].get))
    return sol


def constraint_from_trajectory(model, trajectory, split, theta, degree=5,
                               fit_tol=1e-6):
    """Least-squares Bezier fit of a recorded orbit as a virtual constraint.

    ``theta`` is the phasing covector c0; the phase must be strictly
    monotone along the trajectory. The returned constraint reproduces the
    sampled q_c to the fit tolerance and has an invertible decoupling
    matrix at every sample.
    """
    from .control import bernstein_matrix, decoupling_matrix

    if hasattr(trajectory, "x"):
        X = np.asarray(trajectory.x, dtype=float)
    else:
        X = np.asarray(trajectory, dtype=float)
    Q = X[:, :model.N]
    c0 = np.asarray(theta, dtype=float)
    th = Q @ c0
    d = np.diff(th)
    if not (np.all(d > 0.0) or np.all(d < 0.0)):
        raise MonotonicityError("phasing variable is not strictly monotone")
    theta_plus, theta_minus = float(th[0]), float(th[-1])
    s = (th - theta_plus) / (theta_minus - theta_plus)
    Bmat = bernstein_matrix(degree, s)
    qc = Q[:, list(split.qc_idx)]
    alpha, *_ = np.linalg.lstsq(Bmat, qc, rcond=None)
    alpha = alpha.T                      # k x (degree+1)
    resid = float(np.abs(Bmat @ alpha.T - qc).max())
    if resid > fit_tol:
        raise DomainError(
            f"Bezier fit residual {resid:.3e} exceeds tolerance {fit_tol:.1e}")
    vc = VirtualConstraint(qc_idx=tuple(split.qc_idx), c0=c0, alpha=alpha,
                           theta_plus=theta_plus, theta_minus=theta_minus)
    for q in Q[:: max(1, len(Q) // 20)]:
        decoupling_matrix(vc, model, q)  # raises when singular
    return vc
