"""Event-driven hybrid integration and Poincare-map analysis.

The Poincare section is the switching surface S (swing foot touching down).
One application of the map is: impact reset, then swing-phase integration
under the chosen feedback until the next touchdown. Fixed points are periodic
walking gaits; eigenvalues of the section Jacobian decide their stability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (ConfigError, ConvergenceError, DivergenceError,
                     DomainError, FamilyInvalidityError,
                     NonTerminatingStepError, SurfaceError)
from . import impact as _impact
from . import zerodyn as _zerodyn
from .control import FeedbackGains, closed_loop_torque

RK4_STEP = 1e-4          # default fixed integration step (s)
T_MAX = 5.0              # default per-step horizon (s)
EVENT_TOL = 1e-12        # bisection tolerance on the event time (s)
STATE_LIMIT = 1e3        # norm blow-up threshold
S_GUARD = 0.6            # phase fraction before touchdown detection arms
FD_SCALE = 1e-6          # Jacobian finite-difference scale
EPS_SWEEP = (0.2, 0.1, 0.05)


def _unpack_controller(controller):
    """Accept a VirtualConstraint, a (vc, gains) pair, or None (passive)."""
    if controller is None:
        return None, None
    if isinstance(controller, tuple):
        vc, gains = controller
        return vc, gains if gains is not None else FeedbackGains()
    return controller, FeedbackGains()


@dataclass
class HybridTrajectory:
    """Recorded samples of one or more swing arcs with impact bookkeeping."""

    t: np.ndarray
    x: np.ndarray                 # rows (q, qd)
    u: np.ndarray | None = None
    y: np.ndarray | None = None
    theta: np.ndarray | None = None
    sigma: np.ndarray | None = None
    impact_times: list = field(default_factory=list)
    impact_info: list = field(default_factory=list)
    saturated: bool = False
    T: float = 0.0                # duration of the final arc

    @property
    def x_end(self):
        return self.x[-1].copy()

    def concat(self, other):
        t_off = self.t[-1] if self.t.size else 0.0
        def join(a, b):
            if a is None or b is None:
                return None
            return np.concatenate([a, b])
        return HybridTrajectory(
            t=np.concatenate([self.t, other.t + t_off]),
            x=np.concatenate([self.x, other.x]),
            u=join(self.u, other.u), y=join(self.y, other.y),
            theta=join(self.theta, other.theta),
            sigma=join(self.sigma, other.sigma),
            impact_times=self.impact_times + [ti + t_off for ti in other.impact_times],
            impact_info=self.impact_info + other.impact_info,
            saturated=self.saturated or other.saturated,
            T=other.T,
        )


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_step(model, controller, x0, h=RK4_STEP, t_max=T_MAX,
                   u_max=None, record=True, s_guard=S_GUARD):
    """Integrate one swing arc until touchdown, localized to 1e-12 s.

    The touchdown event is a descending zero of the swing-foot height. With a
    virtual-constraint controller the detector arms once the normalized phase
    exceeds ``s_guard`` (skipping the trivial post-impact zero and any
    mid-swing scuffing of straight-legged models); in passive mode it arms
    once the foot has cleared the ground by 1e-6 m.
    """
    vc, gains = _unpack_controller(controller)
    N = model.N
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * N,):
        raise ConfigError(f"state must have length {2 * N}")

    sat_flag = [False]

    def control(q, qd):
        if vc is None:
            return None
        u, _, clipped = closed_loop_torque(vc, model, q, qd, gains, u_max)
        sat_flag[0] = sat_flag[0] or clipped
        return u

    if vc is None:
        def f(x):
            q, qd = x[:N], x[N:]
            return np.concatenate([qd, model.accel(q, qd)])
    else:
        def f(x):
            q, qd = x[:N], x[N:]
            _, qdd, clipped = closed_loop_torque(vc, model, q, qd, gains, u_max)
            sat_flag[0] = sat_flag[0] or clipped
            return np.concatenate([qd, qdd])

    def armed(x):
        q = x[:N]
        if vc is not None:
            return vc.s(q) >= s_guard
        return model.swing_height(q) > 1e-6

    ts, xs = [0.0], [x0]
    us, ys = [], []
    if vc is not None and record:
        q, qd = x0[:N], x0[N:]
        us.append(control(q, qd))
        ys.append(vc.h(q))

    x, t = x0, 0.0
    was_armed = armed(x0)
    event_t, event_x = None, None
    while t < t_max:
        x_new = _rk4_step(f, x, h)
        t_new = t + h
        if not np.all(np.isfinite(x_new)) or np.linalg.norm(x_new) > STATE_LIMIT:
            raise DivergenceError(f"state norm blow-up at t={t_new:.4f}")
        now_armed = was_armed or armed(x_new)
        h_old = model.swing_height(x[:N])
        h_new = model.swing_height(x_new[:N])
        if was_armed and h_old > 0.0 and h_new <= 0.0:
            # bisect the step for the crossing time
            a, b = 0.0, h
            while b - a > EVENT_TOL:
                mid = 0.5 * (a + b)
                if model.swing_height(_rk4_step(f, x, mid)[:N]) > 0.0:
                    a = mid
                else:
                    b = mid
            dt = 0.5 * (a + b)
            event_x = _rk4_step(f, x, dt)
            event_t = t + dt
            hdot = model.swing_height_rate(event_x[:N], event_x[N:])
            if hdot < 0.0:
                ts.append(event_t)
                xs.append(event_x)
                if vc is not None and record:
                    us.append(control(event_x[:N], event_x[N:]))
                    ys.append(vc.h(event_x[:N]))
                break
            event_t, event_x = None, None
        x, t, was_armed = x_new, t_new, now_armed
        if record:
            ts.append(t)
            xs.append(x)
            if vc is not None:
                us.append(control(x[:N], x[N:]))
                ys.append(vc.h(x[:N]))
    else:
        raise NonTerminatingStepError(
            f"no touchdown within t_max={t_max:.2f} s")
    if event_x is None:
        raise NonTerminatingStepError(
            f"no touchdown within t_max={t_max:.2f} s")

    xs = np.asarray(xs)
    traj = HybridTrajectory(t=np.asarray(ts), x=xs, T=event_t,
                            saturated=sat_flag[0])
    if vc is not None and record:
        traj.u = np.asarray(us)
        traj.y = np.asarray(ys)
        traj.theta = np.array([vc.theta(row[:N]) for row in xs])
        traj.sigma = np.array([
            (model.B_perp @ model.inertia(row[:N]) @ row[N:]).item()
            if model.N - model.k == 1 else np.nan for row in xs])
    return traj


def poincare_map(model, controller, x, with_trajectory=False, **kw):
    """One return: impact from x in S, swing to the next touchdown."""
    N = model.N
    x = np.asarray(x, dtype=float)
    q_plus, qd_plus, info = _impact.apply_impact(
        model, x[:N], x[N:], check_surface=False, with_info=True)
    traj = integrate_step(model, controller,
                          np.concatenate([q_plus, qd_plus]), **kw)
    traj.impact_times = [0.0]
    traj.impact_info = [info]
    if with_trajectory:
        return traj.x_end, traj
    return traj.x_end


def walk(model, controller, x0, n_steps, **kw):
    """Chain n_steps returns starting from a pre-impact state on S."""
    total = None
    x = np.asarray(x0, dtype=float)
    states = [x.copy()]
    for _ in range(n_steps):
        x, traj = poincare_map(model, controller, x, with_trajectory=True, **kw)
        states.append(x.copy())
        total = traj if total is None else total.concat(traj)
    return np.asarray(states), total


# -- section chart -----------------------------------------------------------

class SectionChart:
    """Codimension-1 chart of S dropping one configuration coordinate.

    The dropped coordinate is the one with the largest swing-height gradient
    at the reference point; it is recovered by a scalar Newton solve of
    p2z(q) = 0.
    """

    def __init__(self, model, q_ref):
        self.model = model
        self.N = model.N
        grad = np.abs(self._dh(np.asarray(q_ref, dtype=float)))
        self.drop = int(np.argmax(grad))
        if grad[self.drop] < 1e-8:
            raise DomainError("ill-conditioned section chart (flat height gradient)")
        self.q_ref = np.asarray(q_ref, dtype=float).copy()
        self.keep = [i for i in range(self.N) if i != self.drop]

    def _dh(self, q):
        return -self.model._rho_swing * np.sin(q)

    def to_chart(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[:self.N][self.keep], x[self.N:]])

    def from_chart(self, c):
        c = np.asarray(c, dtype=float)
        q = np.empty(self.N)
        q[self.keep] = c[:self.N - 1]
        q[self.drop] = self.q_ref[self.drop]
        for _ in range(80):
            r = self.model.swing_height(q)
            d = self._dh(q)[self.drop]
            if abs(d) < 1e-10:
                raise DomainError("chart recovery lost the height gradient")
            step = r / d
            q[self.drop] -= step
            if abs(step) < 1e-14:
                break
        else:
            raise ConvergenceError("chart recovery Newton did not converge")
        return np.concatenate([q, c[self.N - 1:]])


@dataclass
class PoincareAnalysis:
    x_star: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius: float
    delta_zero_sq: float | None
    eps: float | None
    chart: object = None


def _chart_map(model, controller, chart, c, **kw):
    return chart.to_chart(poincare_map(model, controller, chart.from_chart(c), **kw))


def fixed_point_solve(model, controller, x_guess, tol=1e-8, max_iter=50, **kw):
    """Damped Newton for P(x) = x on the section chart.

    Falls back to plain return-map iteration for steps where the Newton
    model fails to reduce the residual.
    """
    x_guess = np.asarray(x_guess, dtype=float)
    chart = SectionChart(model, x_guess[:model.N])
    c = chart.to_chart(x_guess)
    n = c.size

    def res(c):
        return _chart_map(model, controller, chart, c, record=False, **kw) - c

    r = res(c)
    for it in range(max_iter):
        nr = np.linalg.norm(r)
        if nr <= tol:
            return chart.from_chart(c)
        hfd = FD_SCALE * max(1.0, np.linalg.norm(c))
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = hfd
            J[:, j] = (res(c + e) - res(c - e)) / (2.0 * hfd)
        try:
            dc = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dc = None
        stepped = False
        if dc is not None:
            lam = 1.0
            for _ in range(6):
                c_try = c + lam * dc
                try:
                    r_try = res(c_try)
                except DomainError:
                    lam *= 0.5
                    continue
                if np.linalg.norm(r_try) < nr:
                    c, r, stepped = c_try, r_try, True
                    break
                lam *= 0.5
        if not stepped:
            # contraction fallback: one plain iteration of the return map
            c_try = c + r
            r_try = res(c_try)
            if np.linalg.norm(r_try) >= nr:
                raise ConvergenceError(
                    f"fixed point stalled at residual {nr:.3e}")
            c, r = c_try, r_try
    raise ConvergenceError(
        f"fixed point not converged after {max_iter} iterations "
        f"(residual {np.linalg.norm(r):.3e})")


def stability_spectrum(model, controller, x_star, eps=None, delta_zero_sq=None,
                       h_fd=None, **kw):
    """Central-difference Jacobian of P on the chart, with its spectrum."""
    x_star = np.asarray(x_star, dtype=float)
    vc, gains = _unpack_controller(controller)
    if eps is not None:
        gains = FeedbackGains(kp=gains.kp, kd=gains.kd, eps=eps)
        controller = (vc, gains)
    chart = SectionChart(model, x_star[:model.N])
    c0 = chart.to_chart(x_star)
    n = c0.size
    if h_fd is None:
        h_fd = FD_SCALE * max(1.0, np.linalg.norm(c0))
    kw.setdefault("record", False)
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h_fd
        fp = _chart_map(model, controller, chart, c0 + e, **kw)
        fm = _chart_map(model, controller, chart, c0 - e, **kw)
        J[:, j] = (fp - fm) / (2.0 * h_fd)
    eig = np.linalg.eigvals(J)
    if (delta_zero_sq is None and vc is not None and hasattr(vc, "alpha")
            and model.N - model.k == 1):
        try:
            delta_zero_sq = _zerodyn.delta_zero(vc, model, route="impact")["delta_zero"]**2
        except DomainError:
            delta_zero_sq = None
    return PoincareAnalysis(
        x_star=x_star, jacobian=J, eigenvalues=eig,
        spectral_radius=float(np.max(np.abs(eig))),
        delta_zero_sq=delta_zero_sq,
        eps=gains.eps if gains is not None else None,
        chart=chart)


def eps_sweep(model, vc, gains, x_star, eps_values=EPS_SWEEP, **kw):
    """Theorem check utility: spectra for a sweep of time-scale separations."""
    out = {}
    for eps in eps_values:
        out[eps] = stability_spectrum(model, (vc, gains), x_star, eps=eps, **kw)
    return out


# -- restricted map, numerically ---------------------------------------------

def restricted_poincare_numeric(model, vc, zeta_minus, rtol=1e-10, atol=1e-12):
    """Integrate the reduced hybrid zero dynamics through one step.

    Starts from the pre-impact boundary of S cap Z with kinetic measure
    zeta_minus, applies the impact, integrates the one-dimensional zero
    dynamics until theta reaches theta-, and returns the new zeta.
    """
    red = _zerodyn.ZeroDynReduced(vc, model)
    if red.manifold.nf != 1:
        raise ConfigError("restricted map requires one degree of underactuation")
    zd_dir = _zerodyn.delta_zero(vc, model, route="impact")
    theta_minus = zd_dir["theta_minus"]
    q_minus = zd_dir["q_minus"]
    kk = _zerodyn._kappa12(red, theta_minus)
    qd_dir = kk["J"][:, 0]
    sgn = np.sign(_zerodyn._kappa12(red, 0.5 * (vc.theta_plus + theta_minus))["kappa1"])
    sigma_minus = sgn * np.sqrt(2.0 * zeta_minus)
    scale = sigma_minus / (model.B_perp @ model.inertia(q_minus) @ qd_dir).item()
    q_plus, qd_plus = _impact.apply_impact(model, q_minus, scale * qd_dir,
                                           check_surface=False)
    qf_idx = list(vc.qf_idx(model.N))[0]
    z0 = np.array([q_plus[qf_idx], qd_plus[qf_idx]])

    def rhs(t, z):
        return _zerodyn.zero_rhs(red, model, z, "velocity")

    def crossing(t, z):
        q, _ = red.manifold.lift(z[:1], z[1:])
        return vc.theta(q) - theta_minus

    crossing.terminal = True
    crossing.direction = np.sign(theta_minus - vc.theta_plus)

    def stall(t, z):
        _, qd = red.manifold.lift(z[:1], z[1:])
        return float(vc.c0 @ qd)

    stall.terminal = True
    stall.direction = -crossing.direction

    sol = solve_ivp(rhs, [0.0, 30.0], z0, rtol=rtol, atol=atol,
                    events=[crossing, stall], dense_output=False)
    if sol.t_events[0].size == 0:
        if sol.t_events[1].size:
            z_stall = sol.y_events[1][0]
            q, qd = red.manifold.lift(z_stall[:1], z_stall[1:])
            sigma = (model.B_perp @ model.inertia(q) @ qd).item()
            raise DomainError(
                "insufficient momentum: thetad reached zero at "
                f"theta={vc.theta(q):.4f} with zeta={0.5 * sigma**2:.6f}")
        raise NonTerminatingStepError("theta never reached theta-")
    z_end = sol.y_events[0][0]
    q, qd = red.manifold.lift(z_end[:1], z_end[1:])
    sigma = (model.B_perp @ model.inertia(q) @ qd).item()
    return 0.5 * sigma**2


# -- sensitivity families ----------------------------------------------------

class OrbitFamilyConstraint:
    """Constraint family vanishing on a stored periodic orbit.

    h(q, xi) = q_c - qc*(theta) + H(xi) (q_f - qf*(theta)) with starred
    quantities cubic-spline fits over the orbit and H linear in xi through a
    fixed basis. Every member zeroes on the orbit, so the fixed point of the
    Poincare map is independent of xi while its Jacobian is not.
    """

    def __init__(self, vc, theta_samples, q_samples, xi, basis):
        self.base = vc
        self.qc_idx = vc.qc_idx
        self.c0 = vc.c0
        order = np.argsort(theta_samples)
        th = np.asarray(theta_samples, dtype=float)[order]
        qs = np.asarray(q_samples, dtype=float)[order]
        th, keep = np.unique(th, return_index=True)
        qs = qs[keep]
        self.k = vc.k
        qf = list(vc.qf_idx(vc.N))
        qc = list(vc.qc_idx)
        self._qc_fit = CubicSpline(th, qs[:, qc], axis=0)
        self._qf_fit = CubicSpline(th, qs[:, qf], axis=0)
        self._qf = qf
        self._qc = qc
        self.xi = np.asarray(xi, dtype=float)
        self.basis = [np.asarray(b, dtype=float) for b in basis]
        if any(b.shape != (self.k, len(qf)) for b in self.basis):
            raise ConfigError("mixing basis matrices must be k x (N-k)")
        self.H = sum(x * b for x, b in zip(self.xi, self.basis)) \
            if len(self.basis) else np.zeros((self.k, len(qf)))

    def theta(self, q):
        return float(self.c0 @ q)

    def s(self, q):
        return (self.theta(q) - self.base.theta_plus) / self.base.delta_theta

    def h(self, q):
        th = self.theta(q)
        return (q[self._qc] - self._qc_fit(th)
                + self.H @ (q[self._qf] - self._qf_fit(th)))

    def dh_dq(self, q):
        th = self.theta(q)
        J = np.zeros((self.k, q.size))
        J[np.arange(self.k), self._qc] = 1.0
        J[:, self._qf] += self.H
        slope = self._qc_fit(th, 1) + self.H @ self._qf_fit(th, 1)
        return J - np.outer(slope, self.c0)

    def quad(self, q, qd):
        th = self.theta(q)
        thd = float(self.c0 @ qd)
        curv = self._qc_fit(th, 2) + self.H @ self._qf_fit(th, 2)
        return -curv * thd**2

    def output(self, q, qd):
        return self.h(q), self.dh_dq(q) @ qd

    def with_xi(self, xi):
        fam = object.__new__(OrbitFamilyConstraint)
        fam.__dict__.update(self.__dict__)
        fam.xi = np.asarray(xi, dtype=float)
        fam.H = sum(x * b for x, b in zip(fam.xi, fam.basis)) \
            if len(fam.basis) else fam.H * 0.0
        return fam


@dataclass
class SensitivityFamily:
    """A family of output mixings around a verified periodic orbit."""

    model: object
    constraint: OrbitFamilyConstraint
    gains: FeedbackGains
    x_star: np.ndarray

    def member(self, xi):
        return (self.constraint.with_xi(xi), self.gains)

    def orbit_residual(self, xi, n_samples=20):
        """Max family output along the stored orbit (invariance check)."""
        member = self.constraint.with_xi(xi)
        fit = member._qc_fit
        ths = np.linspace(fit.x[0], fit.x[-1], n_samples)
        worst = 0.0
        for th in ths:
            q = np.zeros(member.c0.size)
            q[member._qc] = member._qc_fit(th)
            q[member._qf] = member._qf_fit(th)
            worst = max(worst, float(np.abs(member.h(q)).max()))
        return worst


def family_from_orbit(model, vc, gains, x_star, basis=None, **kw):
    """Build a SensitivityFamily from the orbit through a fixed point."""
    _, traj = poincare_map(model, (vc, gains), x_star, with_trajectory=True, **kw)
    N = model.N
    fam_vc = OrbitFamilyConstraint(
        vc, traj.theta, traj.x[:, :N],
        xi=np.zeros(1 if basis is None else len(basis)),
        basis=basis if basis is not None else
        [np.ones((vc.k, N - vc.k))])
    return SensitivityFamily(model=model, constraint=fam_vc, gains=gains,
                             x_star=np.asarray(x_star, dtype=float))


def sensitivity_search(family, x_star=None, delta=0.02, trust=0.2,
                       fp_tol=1e-8, **kw):
    """First-order spectral-radius minimization over the mixing parameters."""
    model = family.model
    x_star = family.x_star if x_star is None else np.asarray(x_star, dtype=float)
    p = family.constraint.xi.size

    def DP(xi):
        member = family.member(xi)
        x_ret = poincare_map(model, member, x_star, record=False, **kw)
        if np.linalg.norm(x_ret - x_star) > fp_tol * max(1.0, np.linalg.norm(x_star)) * 10:
            raise FamilyInvalidityError(
                f"fixed point drifts with xi={xi}: "
                f"residual {np.linalg.norm(x_ret - x_star):.3e}")
        return stability_spectrum(model, member, x_star, record=False, **kw).jacobian

    A0 = DP(np.zeros(p))
    A = []
    for i in range(p):
        e = np.zeros(p)
        e[i] = delta
        A.append((DP(e) - DP(-e)) / (2.0 * delta))

    def predicted_radius(xi):
        Jp = A0 + sum(x * Ai for x, Ai in zip(xi, A))
        return float(np.max(np.abs(np.linalg.eigvals(Jp))))

    xi = np.zeros(p)
    best = predicted_radius(xi)
    step = trust / 4.0
    for _ in range(60):
        improved = False
        for i in range(p):
            for sign in (+1.0, -1.0):
                cand = xi.copy()
                cand[i] = np.clip(cand[i] + sign * step, -trust, trust)
                r = predicted_radius(cand)
                if r < best - 1e-12:
                    xi, best, improved = cand, r, True
        if not improved:
            step *= 0.5
            if step < trust / 256.0:
                break
    true_radius = float(np.max(np.abs(np.linalg.eigvals(DP(xi)))))
    return {"A0": A0, "A": A, "xi_best": xi,
            "predicted_radius": best, "spectral_radius": true_radius}


# -- event-based control -----------------------------------------------------

@dataclass
class EventBasedPolicy:
    """Once-per-step parameter update beta_k = beta* + K (x_k - x*)."""

    make_controller: object       # beta -> controller
    beta_star: np.ndarray
    K: np.ndarray
    x_star: np.ndarray
    chart: object
    open_loop_eigs: np.ndarray = None
    closed_loop_eigs: np.ndarray = None

    def beta(self, x):
        dc = self.chart.to_chart(np.asarray(x, dtype=float)) \
            - self.chart.to_chart(self.x_star)
        return self.beta_star + self.K @ dc


def event_gain_design(model, make_controller, x_star, beta_star=None,
                      factor=0.5, deadbeat=False, b_threshold=1e-8, **kw):
    """Design the once-per-step gain from finite-difference linearization.

    The dominant open-loop mode lambda is moved to ``factor`` times itself
    (or to zero with ``deadbeat``) through the rank-one gain
    K = kappa w^T built on the mode's left eigenvector w.
    """
    x_star = np.asarray(x_star, dtype=float)
    if beta_star is None:
        beta_star = np.zeros(1)
    beta_star = np.atleast_1d(np.asarray(beta_star, dtype=float))
    if beta_star.size != 1:
        raise ConfigError("one event-control parameter is supported")
    chart = SectionChart(model, x_star[:model.N])
    c_star = chart.to_chart(x_star)
    n = c_star.size

    def cmap(c, beta):
        return chart.to_chart(poincare_map(
            model, make_controller(beta), chart.from_chart(c),
            record=False, **kw))

    h_fd = FD_SCALE * max(1.0, np.linalg.norm(c_star))
    A = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h_fd
        A[:, j] = (cmap(c_star + e, beta_star) - cmap(c_star - e, beta_star)) \
            / (2.0 * h_fd)
    h_b = 1e-4
    b = (cmap(c_star, beta_star + h_b) - cmap(c_star, beta_star - h_b)) / (2.0 * h_b)
    if np.linalg.norm(b) < b_threshold:
        raise DomainError("uncontrollable linearization: dP/dbeta is negligible")

    eigvals, vl = np.linalg.eig(A.T)
    dom = int(np.argmax(np.abs(eigvals)))
    lam = eigvals[dom]
    w = vl[:, dom]
    wb = w @ b
    if abs(wb) < b_threshold:
        raise DomainError("uncontrollable dominant mode: w^T dP/dbeta = 0")
    lam_cl = 0.0 if deadbeat else factor * lam
    kappa = (lam_cl - lam) / wb
    K = np.real_if_close(np.outer(np.atleast_1d(kappa), w))
    if np.iscomplexobj(K):
        K = K.real
    A_cl = A + np.outer(b, K[0])
    return EventBasedPolicy(
        make_controller=make_controller, beta_star=beta_star, K=K,
        x_star=x_star, chart=chart,
        open_loop_eigs=eigvals,
        closed_loop_eigs=np.linalg.eigvals(A_cl))


def event_based_step(x_k, policy, model=None, **kw):
    """Apply the policy for one step; returns (x_{k+1}, beta_k)."""
    beta = policy.beta(x_k)
    if model is None:
        return beta
    kw.setdefault("record", False)
    x_next = poincare_map(model, policy.make_controller(beta), x_k, **kw)
    return x_next, beta
