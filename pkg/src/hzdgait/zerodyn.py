"""Swing-phase zero dynamics and the hybrid zero dynamics apparatus.

The zero dynamics manifold Z collects states with y = 0 and yd = 0. States on
Z are parameterized by the free coordinates (q_f, qd_f); the internal dynamics
there come from the B-perp projection of the full model. For one degree of
underactuation everything collapses to the scalar pair (theta, sigma) with

    thetad = kappa1(theta) sigma,      sigmad = kappa2(theta),

which yields the pseudo-potential V_zero, the momentum transfer ratio
delta_zero, and the affine restricted Poincare map rho.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (ConfigError, ConvergenceError, DomainError,
                     MonotonicityError, QuadratureError, SurfaceError)
from . import impact as _impact
from .control import bezier_eval, bernstein_matrix

GRID_POINTS = 401        # theta grid for the 1-DOF tables
QUAD_TOL = 1e-10         # adaptive Simpson absolute tolerance
S_GUARD = 0.6            # accept touchdown roots only past this phase fraction


# -- lifting reduced states onto Z -------------------------------------------

class ZeroManifold:
    """Lift map from free coordinates onto the zero dynamics manifold."""

    def __init__(self, vc, model):
        if vc.N != model.N:
            raise ConfigError("constraint and model dimensions differ")
        self.vc = vc
        self.model = model
        self.qc = list(vc.qc_idx)
        self.qf = list(vc.qf_idx(model.N))
        self.nf = len(self.qf)
        self._c0c = vc.c0[self.qc]
        self._c0f = vc.c0[self.qf]
        self._c0c_zero = not np.any(self._c0c)

    def phase_of_qf(self, q_f):
        """Normalized phase s solving theta(q) = c0_c . h_d(s) + c0_f . q_f."""
        q_f = np.atleast_1d(q_f)
        target = float(self._c0f @ q_f)
        if self._c0c_zero:
            return (target - self.vc.theta_plus) / self.vc.delta_theta
        s = (target - self.vc.theta_plus) / self.vc.delta_theta
        for _ in range(60):
            val, d1, _ = self.vc.hd(s)
            g = self.vc.theta_plus + s * self.vc.delta_theta \
                - self._c0c @ val - target
            dg = self.vc.delta_theta - self._c0c @ d1
            if abs(dg) < 1e-12:
                raise MonotonicityError("phasing variable loses rank during lift")
            step = g / dg
            s -= step
            if abs(step) < 1e-14:
                return s
        raise ConvergenceError("phase lift Newton did not converge")

    def config(self, q_f, s=None):
        q_f = np.atleast_1d(np.asarray(q_f, dtype=float))
        if s is None:
            s = self.phase_of_qf(q_f)
        val, _, _ = self.vc.hd(s)
        q = np.empty(self.model.N)
        q[self.qc] = val
        q[self.qf] = q_f
        return q, s

    def jacobian(self, q_f, s=None):
        """Full-coordinate Jacobian J_c = dq/dq_f on Z, and the phase data."""
        q_f = np.atleast_1d(np.asarray(q_f, dtype=float))
        if s is None:
            s = self.phase_of_qf(q_f)
        val, d1, d2 = self.vc.hd(np.clip(s, -0.2, 1.2))
        d1 = np.atleast_1d(d1)
        d2 = np.atleast_1d(d2)
        mu = self.vc.delta_theta - self._c0c @ d1
        if abs(mu) < 1e-12:
            raise MonotonicityError("phasing variable loses rank during lift")
        ds_dqf = self._c0f / mu
        J = np.zeros((self.model.N, self.nf))
        J[self.qc, :] = np.outer(d1, ds_dqf)
        J[self.qf, :] = np.eye(self.nf)
        return J, {"s": s, "d1": d1, "d2": d2, "mu": mu, "ds_dqf": ds_dqf}

    def quad(self, q_f, qd_f, data=None):
        """Velocity-quadratic part H_c of qdd on Z (qdd = J_c qddf + H_c)."""
        if data is None:
            _, data = self.jacobian(q_f)
        sdot = float(data["ds_dqf"] @ np.atleast_1d(qd_f))
        sdd = float(self._c0c @ data["d2"]) * sdot**2 / data["mu"] \
            if not self._c0c_zero else 0.0
        H = np.zeros(self.model.N)
        H[self.qc] = data["d2"] * sdot**2 + data["d1"] * sdd
        return H

    def lift(self, q_f, qd_f):
        """Full state (q, qd) on Z from reduced coordinates."""
        q, s = self.config(q_f)
        J, data = self.jacobian(q_f, s)
        qd = J @ np.atleast_1d(np.asarray(qd_f, dtype=float))
        return q, qd

    def residual(self, q, qd):
        """Membership residual (‖y‖, ‖yd‖) of a full state."""
        y, yd = self.vc.output(q, qd)
        return float(np.linalg.norm(y)), float(np.linalg.norm(yd))


# -- reduced model, any degree of underactuation -----------------------------

class ZeroDynReduced:
    """B-perp projected internal dynamics on Z in reduced coordinates.

    Velocity form: z = (q_f, qd_f) with M qddf = -H_zero.
    Momentum form: z = (q_f, sigma_f) with sigma_f = M qd_f and
    sigmad_f computed exactly from the analytic time derivative of D.
    """

    def __init__(self, vc, model):
        self.manifold = ZeroManifold(vc, model)
        self.vc = vc
        self.model = model

    def terms(self, q_f, qd_f):
        mf = self.manifold
        q, s = mf.config(q_f)
        J, data = mf.jacobian(q_f, s)
        qd = J @ np.atleast_1d(qd_f)
        D = self.model.inertia(q)
        M = self.model.B_perp @ D @ J
        H_zero = self.model.B_perp @ (self.model.bias(q, qd)
                                      + D @ mf.quad(q_f, qd_f, data))
        return {"M": M, "H_zero": H_zero, "q": q, "qd": qd, "J": J, "s": s}

    def qddf(self, q_f, qd_f):
        t = self.terms(q_f, qd_f)
        M = np.atleast_2d(t["M"])
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > 1e12:
            raise DomainError(f"singular reduced inertia M, cond {cond:.3e}")
        return np.linalg.solve(M, -np.atleast_1d(t["H_zero"]))

    def sigma(self, q_f, qd_f):
        t = self.terms(q_f, qd_f)
        return np.atleast_2d(t["M"]) @ np.atleast_1d(qd_f)

    def qdf_of_sigma(self, q_f, sigma_f):
        t = self.terms(q_f, np.zeros(self.manifold.nf))
        return np.linalg.solve(np.atleast_2d(t["M"]), np.atleast_1d(sigma_f))

    def sigmadot(self, q_f, qd_f):
        """Exact momentum rate: B_perp (Ddot qd - C qd - G) on Z."""
        mf = self.manifold
        q, qd = mf.lift(q_f, qd_f)
        dD = self.model.d_inertia_dq(q)
        Ddot = np.einsum("jkm,m->jk", dD, qd)
        return self.model.B_perp @ (Ddot @ qd - self.model.bias(q, qd))


def zero_rhs(vc, model, z, form="velocity"):
    """Right-hand side of the reduced zero dynamics for either state form."""
    red = vc if isinstance(vc, ZeroDynReduced) else ZeroDynReduced(vc, model)
    nf = red.manifold.nf
    z = np.asarray(z, dtype=float)
    if z.shape != (2 * nf,):
        raise ConfigError(f"reduced state must have length {2 * nf}")
    q_f, w = z[:nf], z[nf:]
    if form == "velocity":
        return np.concatenate([w, red.qddf(q_f, w)])
    if form == "momentum":
        qd_f = red.qdf_of_sigma(q_f, w)
        return np.concatenate([qd_f, red.sigmadot(q_f, qd_f)])
    raise ConfigError(f"unknown state form {form!r}")


# -- one degree of underactuation --------------------------------------------

def kappa12(vc, model, theta):
    """Scalar coefficients of thetad = kappa1 sigma, sigmad = kappa2."""
    red = ZeroDynReduced(vc, model)
    return _kappa12(red, theta)


def _qf_of_theta(mf, theta):
    """Invert theta = c0_c . h_d(s) + c0_f q_f with s = (theta-theta+)/dtheta."""
    vc = mf.vc
    s = vc.s_of_theta(theta)
    val, _, _ = vc.hd(np.clip(s, -0.2, 1.2))
    c0f = mf._c0f[0]
    if abs(c0f) < 1e-12:
        raise MonotonicityError("phasing variable has no free-coordinate support")
    return np.array([(theta - mf._c0c @ np.atleast_1d(val)) / c0f]), s


def _kappa12(red, theta):
    mf = red.manifold
    if mf.nf != 1:
        raise ConfigError("closed forms require one degree of underactuation")
    q_f, s = _qf_of_theta(mf, theta)
    q, _ = mf.config(q_f, s)
    J, data = mf.jacobian(q_f, s)
    M = (red.model.B_perp @ red.model.inertia(q) @ J).item()
    if abs(M) < 1e-12:
        raise MonotonicityError("reduced inertia scalar vanished")
    k1 = float(red.vc.c0 @ J[:, 0]) / M
    if k1 == 0.0:
        raise MonotonicityError("phasing variable loses rank (kappa1 = 0)")
    k2 = (red.model.B_perp @ (-red.model.gravity(q))).item()
    return {"kappa1": k1, "kappa2": k2, "q": q, "J": J, "M": M, "s": s}


def _adaptive_simpson(f, a, b, tol=QUAD_TOL, depth=50):
    def simpson(a, b, fa, fm, fb):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(a, m, fa, flm, fm)
        right = simpson(m, b, fm, frm, fb)
        if depth <= 0:
            raise QuadratureError("adaptive Simpson recursion limit reached")
        if abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2.0, depth - 1))

    if a == b:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, depth)


@dataclass
class ZeroDyn1D:
    """Cached 1-DOF zero dynamics tables over theta in [theta+, theta-]."""

    vc: object
    model: object

    def __post_init__(self):
        red = ZeroDynReduced(self.vc, self.model)
        self.reduced = red
        self.theta_plus = float(self.vc.theta_plus)
        self.theta_minus = float(self.vc.theta_minus)
        grid = np.linspace(self.theta_plus, self.theta_minus, GRID_POINTS)
        k1 = np.empty(GRID_POINTS)
        k2 = np.empty(GRID_POINTS)
        for i, th in enumerate(grid):
            kk = _kappa12(red, th)
            k1[i], k2[i] = kk["kappa1"], kk["kappa2"]
        if np.any(k1 == 0.0) or np.any(np.sign(k1) != np.sign(k1[0])):
            raise MonotonicityError("kappa1 changes sign on [theta+, theta-]")
        self.theta_grid = grid
        self.kappa1_table = k1
        self.kappa2_table = k2
        sgn = 1.0 if grid[-1] >= grid[0] else -1.0
        self._k1 = CubicSpline(sgn * grid, k1)
        self._k2 = CubicSpline(sgn * grid, k2)
        self._sgn = sgn

        ratio = lambda th: -self.kappa2(th) / self.kappa1(th)
        V = np.empty(GRID_POINTS)
        V[0] = 0.0
        for i in range(1, GRID_POINTS):
            V[i] = V[i - 1] + _adaptive_simpson(ratio, grid[i - 1], grid[i])
        self.v_table = V
        self._V = CubicSpline(sgn * grid, V)
        self.v_max = float(V.max())
        self.delta_zero = delta_zero(self.vc, self.model)["delta_zero"]

    def kappa1(self, theta):
        return float(self._k1(self._sgn * theta))

    def kappa2(self, theta):
        return float(self._k2(self._sgn * theta))

    def v_zero(self, theta):
        return v_zero(self, theta)

    @property
    def v_minus(self):
        return float(self.v_table[-1])

    def domain_contains(self, zeta):
        """D_zero membership: enough energy to reach theta- after impact."""
        return self.delta_zero**2 * zeta - self.v_max > 0.0

    def pseudo_energy(self, theta, sigma):
        return 0.5 * sigma**2 + self.v_zero(theta)


def v_zero(zd1d, theta):
    """Pseudo-potential -int_{theta+}^{theta} kappa2/kappa1.

    Evaluates the cached cumulative table (adaptive Simpson between grid
    nodes at construction time) through its cubic interpolant.
    """
    lo, hi = sorted((zd1d.theta_plus, zd1d.theta_minus))
    if not (lo - 1e-9 <= theta <= hi + 1e-9):
        raise DomainError(f"theta {theta:.4f} outside [{lo:.4f}, {hi:.4f}]")
    if theta == zd1d.theta_plus:
        return 0.0
    return float(zd1d._V(zd1d._sgn * theta))


def delta_zero(vc, model, route="both"):
    """Momentum transfer ratio sigma+/sigma- across impact restricted to Z.

    ``route`` selects the evaluation: "impact" pushes a unit-momentum
    touchdown state through the full impact map; "formula" uses
    1 + m d (dz/dtheta) kappa1(theta-) with d the inter-feet distance and
    z the COM height on Z; "both" returns both plus their difference.
    """
    red = ZeroDynReduced(vc, model)
    td = find_touchdown(vc, model)
    theta_m = td["theta"]
    kk = _kappa12(red, theta_m)
    q_minus, J = kk["q"], kk["J"]
    qd_minus = J[:, 0]
    sigma_minus = (model.B_perp @ model.inertia(q_minus) @ qd_minus).item()

    out = {"theta_minus": theta_m, "q_minus": q_minus}
    if route in ("impact", "both"):
        q_plus, qd_plus = _impact.apply_impact(model, q_minus, qd_minus,
                                               check_surface=False)
        sigma_plus = (model.B_perp @ model.inertia(q_plus) @ qd_plus).item()
        out["impact"] = sigma_plus / sigma_minus
    if route in ("formula", "both"):
        p2x = model.swing_foot(q_minus, np.zeros(model.N))["p2x"]
        dz_dq = model.com_height_jacobian(q_minus)
        thetad = float(vc.c0 @ qd_minus)
        dz_dtheta = float(dz_dq @ qd_minus) / thetad
        out["formula"] = 1.0 + model.total_mass * (-p2x) * dz_dtheta \
            * kk["kappa1"]
        out["zdot_com_sign"] = float(np.sign(dz_dq @ qd_minus
                                             * np.sign(sigma_minus * kk["kappa1"])))
    if route == "impact":
        out["delta_zero"] = out["impact"]
    elif route == "formula":
        out["delta_zero"] = out["formula"]
    else:
        out["delta_zero"] = out["impact"]
        out["difference"] = abs(out["impact"] - out["formula"])
    return out


def restricted_poincare_closed(zd1d, zeta_minus):
    """Affine restricted map rho(zeta) = delta^2 zeta - V_zero(theta-)."""
    if not zd1d.domain_contains(zeta_minus):
        raise DomainError(
            "zeta outside D_zero: insufficient momentum to complete the swing")
    return zd1d.delta_zero**2 * zeta_minus - zd1d.v_minus


def fixed_point_zeta(zd1d):
    """Fixed point of rho with the existence/stability conditions."""
    d2 = zd1d.delta_zero**2
    if abs(d2 - 1.0) < 1e-12:
        raise DomainError("delta_zero^2 = 1: restricted map has no fixed point")
    zeta_star = -zd1d.v_minus / (1.0 - d2)
    exists = (0.0 < d2 < 1.0) and (d2 / (1.0 - d2) * zd1d.v_minus
                                   + zd1d.v_max < 0.0)
    return {"zeta_star": zeta_star, "exists": bool(exists),
            "stable": bool(exists), "delta_zero_sq": d2,
            "v_minus": zd1d.v_minus, "v_max": zd1d.v_max}


# -- hybrid invariance -------------------------------------------------------

def find_touchdown(vc, model, s_guard=S_GUARD, s_max=1.2):
    """Locate S cap Z: the phase where the swing foot reaches the ground.

    Scans the guarded tail of the phase interval for sign changes of the
    swing height along Z and bisects the first descending crossing to
    1e-12, matching the guarded event detector of the time-domain
    integrator. The guard skips the post-impact boundary and any mid-swing
    scuffing configuration of straight-legged models.
    """
    mf = ZeroManifold(vc, model)
    if mf.nf != 1:
        raise ConfigError("touchdown search requires one degree of underactuation")

    def height(s):
        theta = vc.theta_plus + s * vc.delta_theta
        q_f, _ = _qf_of_theta(mf, theta)
        q, _ = mf.config(q_f, s)
        return model.swing_height(q), q

    ss = np.linspace(s_guard, s_max, 241)
    hh = np.array([height(s)[0] for s in ss])
    crossings = [i for i in range(len(ss) - 1)
                 if hh[i] > 0.0 and hh[i + 1] <= 0.0]
    if not crossings:
        raise SurfaceError("no touchdown: swing foot never reaches the ground")
    a, b = ss[crossings[0]], ss[crossings[0] + 1]
    for _ in range(200):
        m = 0.5 * (a + b)
        if b - a < 1e-14:
            break
        if height(m)[0] > 0.0:
            a = m
        else:
            b = m
    s_td = 0.5 * (a + b)
    theta = vc.theta_plus + s_td * vc.delta_theta
    q = height(s_td)[1]
    return {"s": s_td, "theta": theta, "q": q}


def hybrid_invariance_residual(vc, model, sigma_minus=1.0):
    """Post-impact output residuals quantifying Delta(S cap Z) subset Z."""
    red = ZeroDynReduced(vc, model)
    td = find_touchdown(vc, model)
    kk = _kappa12(red, td["theta"])
    q_minus, J = kk["q"], kk["J"]
    qd_dir = J[:, 0]
    scale = sigma_minus / (model.B_perp @ model.inertia(q_minus) @ qd_dir).item()
    qd_minus = scale * qd_dir
    q_plus, qd_plus = _impact.apply_impact(model, q_minus, qd_minus,
                                           check_surface=False)
    y, yd = vc.output(q_plus, qd_plus)
    return {"y_plus": float(np.linalg.norm(y)),
            "yd_plus": float(np.linalg.norm(yd)),
            "q_plus": q_plus, "qd_plus": qd_plus,
            "q_minus": q_minus, "qd_minus": qd_minus,
            "theta_minus": td["theta"]}


def enforce_invariance(vc, model, alpha_interior=None):
    """Solve the first two Bezier columns for hybrid invariance.

    The pre-impact boundary state on Z depends only on the last two columns,
    so one linear solve per output row renders y+ = 0 and yd+ = 0 exactly.
    Interior columns (2..M) pass through unchanged unless supplied.
    """
    if vc.degree < 3:
        raise ConfigError("invariance enforcement needs Bezier degree >= 3")
    if np.any(vc.c0[list(vc.qc_idx)] != 0.0):
        raise ConfigError("phasing variable must be supported on free coordinates")
    alpha = vc.alpha.copy()
    if alpha_interior is not None:
        alpha_interior = np.atleast_2d(np.asarray(alpha_interior, dtype=float))
        if alpha_interior.shape != (vc.k, vc.degree - 1):
            raise ConfigError("interior block must be k x (degree - 1)")
        alpha[:, 2:] = alpha_interior
        vc = vc.replace(alpha=alpha)

    res = hybrid_invariance_residual(vc, model)
    q_plus, qd_plus = res["q_plus"], res["qd_plus"]
    qc = list(vc.qc_idx)
    s_plus = vc.s(q_plus)
    sd_plus = float(vc.c0 @ qd_plus) / vc.delta_theta
    if abs(sd_plus) < 1e-12:
        raise MonotonicityError("post-impact phase rate vanished")

    M = vc.degree
    b = bernstein_matrix(M, [s_plus])[0]           # value basis, columns 0..M
    db = M * bernstein_matrix(M - 1, [s_plus])[0]  # difference basis, 0..M-1
    # bez(s+) = sum_j alpha_j b_j, bez'(s+) = sum_j (alpha_{j+1}-alpha_j) db_j
    A = np.array([[b[0], b[1]],
                  [-db[0], db[0] - db[1]]])
    if abs(np.linalg.det(A)) < 1e-14:
        raise DomainError("rank-deficient invariance boundary system")
    for r in range(vc.k):
        row = alpha[r]
        val_tail = row[2:] @ b[2:]
        # derivative terms not involving alpha0/alpha1
        der_tail = row[2] * db[1] + np.diff(row[2:]) @ db[2:]
        rhs = np.array([q_plus[qc[r]] - val_tail,
                        qd_plus[qc[r]] / sd_plus - der_tail])
        alpha[r, 0], alpha[r, 1] = np.linalg.solve(A, rhs)
    return alpha


def make_invariant(vc, model, alpha_interior=None):
    """Convenience wrapper returning a constraint with enforced invariance."""
    return vc.replace(alpha=enforce_invariance(vc, model, alpha_interior))
