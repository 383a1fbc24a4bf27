"""Virtual constraints and the feedback laws that enforce them.

A virtual constraint is an output y = q_c - h_d(theta(q)) with theta a linear
functional of the configuration (the gait phasing variable) and h_d a row-wise
Bezier polynomial in the normalized phase s = (theta - theta_plus) /
(theta_minus - theta_plus). Three torque computations are provided:

* ``u_star``       -- the unique torque keeping ydd = 0 (stay on the manifold),
* ``io_linearizing_u`` -- u_star plus output feedback producing
                      ydd + (Kd/eps) yd + (Kp/eps^2) y = 0,
* ``efficient_u``  -- same closed loop, computed through the B-perp / B-pinv
                      split so that only an (N-k) x (N-k) system is solved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, SingularDecouplingError

S_BAND = (-0.2, 1.2)        # admissible normalized-phase band
COND_LIMIT = 1e10           # decoupling-matrix conditioning limit


# -- Bezier evaluation -------------------------------------------------------

def bezier_eval(coeffs, s):
    """Bernstein-basis value and first two phase derivatives at s.

    ``coeffs`` is (M+1,) or (k, M+1); evaluation is by de Casteljau, the
    derivatives by degree reduction. s must lie in the extrapolation band.
    """
    if not (S_BAND[0] <= s <= S_BAND[1]):
        raise DomainError(f"normalized phase s={s:.4f} outside band {S_BAND}")
    a = np.atleast_2d(np.asarray(coeffs, dtype=float))
    M = a.shape[1] - 1
    if M < 1:
        return a[..., 0].squeeze(), np.zeros(a.shape[0]).squeeze(), np.zeros(a.shape[0]).squeeze()

    def casteljau(pts):
        pts = pts.copy()
        for r in range(pts.shape[1] - 1):
            pts = (1.0 - s) * pts[:, :-1] + s * pts[:, 1:]
        return pts[:, 0]

    val = casteljau(a)
    d1 = M * casteljau(np.diff(a, axis=1))
    if M >= 2:
        d2 = M * (M - 1) * casteljau(np.diff(a, n=2, axis=1))
    else:
        d2 = np.zeros(a.shape[0])
    if np.asarray(coeffs).ndim == 1:
        return float(val[0]), float(d1[0]), float(d2[0])
    return val, d1, d2


def bernstein_matrix(degree, s_values):
    """Design matrix of Bernstein basis values, rows over s, columns 0..degree."""
    from scipy.special import comb
    s = np.asarray(s_values, dtype=float)[:, None]
    i = np.arange(degree + 1)[None, :]
    return comb(degree, i) * s**i * (1.0 - s)**(degree - i)


# -- constraint data ---------------------------------------------------------

@dataclass
class VirtualConstraint:
    """Regulated/free split, phasing functional and Bezier desired evolution.

    ``qc_idx`` selects the k regulated coordinates, ``c0`` defines
    theta(q) = c0 . q, and ``alpha`` is the k x (M+1) Bezier coefficient
    matrix of the desired evolution h_d over the normalized phase.
    """

    qc_idx: tuple
    c0: np.ndarray
    alpha: np.ndarray
    theta_plus: float
    theta_minus: float

    def __post_init__(self):
        self.qc_idx = tuple(int(i) for i in self.qc_idx)
        self.c0 = np.asarray(self.c0, dtype=float)
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        if self.theta_minus == self.theta_plus:
            raise ConfigError("theta bounds must differ")
        if not np.all(np.isfinite(self.alpha)):
            raise ConfigError("non-finite Bezier coefficients")
        if self.alpha.shape[0] != len(self.qc_idx):
            raise ConfigError("alpha must have one row per regulated coordinate")

    @property
    def k(self):
        return len(self.qc_idx)

    @property
    def degree(self):
        return self.alpha.shape[1] - 1

    @property
    def N(self):
        return self.c0.size

    def qf_idx(self, N=None):
        N = self.N if N is None else N
        return tuple(i for i in range(N) if i not in self.qc_idx)

    @property
    def delta_theta(self):
        return self.theta_minus - self.theta_plus

    # phasing
    def theta(self, q):
        return float(self.c0 @ q)

    def s_of_theta(self, theta):
        return (theta - self.theta_plus) / self.delta_theta

    def s(self, q):
        return self.s_of_theta(self.theta(q))

    def hd(self, s):
        """Desired evolution and its first two s-derivatives."""
        return bezier_eval(self.alpha, s)

    # output
    def h(self, q):
        val, _, _ = self.hd(self.s(q))
        return q[list(self.qc_idx)] - val

    def dh_dq(self, q):
        _, d1, _ = self.hd(self.s(q))
        J = np.zeros((self.k, q.size))
        J[np.arange(self.k), list(self.qc_idx)] = 1.0
        return J - np.outer(d1 / self.delta_theta, self.c0)

    def quad(self, q, qd):
        """d/dq (dh/dq qd) qd — the velocity-quadratic part of ydd."""
        _, _, d2 = self.hd(self.s(q))
        sdot = (self.c0 @ qd) / self.delta_theta
        return -d2 * sdot**2

    def output(self, q, qd):
        return self.h(q), self.dh_dq(q) @ qd

    def monotone_rate(self, qd):
        """thetadot for a given velocity; sign must not change along a gait."""
        return float(self.c0 @ qd)

    def replace(self, **kw):
        data = {"qc_idx": self.qc_idx, "c0": self.c0, "alpha": self.alpha,
                "theta_plus": self.theta_plus, "theta_minus": self.theta_minus}
        data.update(kw)
        return VirtualConstraint(**data)

    # serialization
    def to_dict(self, gains=None):
        doc = {
            "q_c_idx": list(self.qc_idx),
            "theta": self.c0.tolist(),
            "bezier": {"degree": self.degree, "coeffs": self.alpha.tolist()},
            "theta_plus": self.theta_plus,
            "theta_minus": self.theta_minus,
        }
        if gains is not None:
            doc["gains"] = {"kp": gains.kp_scalar, "kd": gains.kd_scalar,
                            "eps": gains.eps}
        return doc


@dataclass
class FeedbackGains:
    """Output-feedback gains; kp/kd may be scalars (times identity) or k x k."""

    kp: object = 1.0
    kd: object = 2.0
    eps: float = 0.1

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        for name in ("kp", "kd"):
            val = getattr(self, name)
            arr = np.atleast_2d(np.asarray(val, dtype=float))
            if arr.shape == (1, 1):
                if arr[0, 0] <= 0:
                    raise ConfigError(f"{name} must be positive definite")
            else:
                if not np.all(np.linalg.eigvalsh(0.5 * (arr + arr.T)) > 0):
                    raise ConfigError(f"{name} must be positive definite")

    def _mat(self, val, k):
        arr = np.asarray(val, dtype=float)
        return arr * np.eye(k) if arr.ndim == 0 else np.atleast_2d(arr)

    def kp_mat(self, k):
        return self._mat(self.kp, k)

    def kd_mat(self, k):
        return self._mat(self.kd, k)

    @property
    def kp_scalar(self):
        arr = np.asarray(self.kp, dtype=float)
        return float(arr) if arr.ndim == 0 else arr.tolist()

    @property
    def kd_scalar(self):
        arr = np.asarray(self.kd, dtype=float)
        return float(arr) if arr.ndim == 0 else arr.tolist()


def load_controller(source):
    """Load (VirtualConstraint, FeedbackGains) from a dict or JSON file."""
    if isinstance(source, str):
        try:
            with open(source) as fh:
                source = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read controller file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"controller file is not valid JSON: {exc}") from exc
    try:
        vc = VirtualConstraint(
            qc_idx=source["q_c_idx"], c0=source["theta"],
            alpha=source["bezier"]["coeffs"],
            theta_plus=source["theta_plus"], theta_minus=source["theta_minus"],
        )
        if vc.degree != source["bezier"]["degree"]:
            raise ConfigError("bezier degree inconsistent with coefficient count")
        gd = source.get("gains", {})
        gains = FeedbackGains(kp=gd.get("kp", 1.0), kd=gd.get("kd", 2.0),
                              eps=gd.get("eps", 0.1))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"controller schema violation at {exc!r}") from exc
    return vc, gains


def save_controller(path, vc, gains=None):
    with open(path, "w") as fh:
        json.dump(vc.to_dict(gains), fh, indent=2)


# -- torque computations -----------------------------------------------------

def decoupling_matrix(vc, model, q, qd=None, with_cond=False):
    """A = (dh/dq) D^-1 B; raises when numerically singular."""
    dh = vc.dh_dq(q)
    A = dh @ np.linalg.solve(model.inertia(q), model.B)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularDecouplingError(
            f"decoupling matrix condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    return (A, cond) if with_cond else A


def u_star(vc, model, q, qd):
    """Torque producing ydd = 0 at this state."""
    A = decoupling_matrix(vc, model, q, qd)
    dh = vc.dh_dq(q)
    H = model.bias(q, qd)
    rhs = dh @ np.linalg.solve(model.inertia(q), H) - vc.quad(q, qd)
    return np.linalg.solve(A, rhs)


def io_linearizing_u(vc, model, q, qd, gains):
    """Input-output linearizing feedback around the virtual constraint."""
    A = decoupling_matrix(vc, model, q, qd)
    y, yd = vc.output(q, qd)
    fb = gains.kp_mat(vc.k) @ y / gains.eps**2 + gains.kd_mat(vc.k) @ yd / gains.eps
    return u_star(vc, model, q, qd) - np.linalg.solve(A, fb)


def efficient_u(vc, model, q, qd, gains=None, details=False):
    """Closed-loop torque via the B-perp / B-pinv split.

    Equals ``io_linearizing_u`` wherever both are defined (and ``u_star`` on
    the zero dynamics manifold when gains is None), but only an
    (N-k) x (N-k) linear system is solved. Requires the phasing variable to
    be a functional of the free coordinates alone.
    """
    qc = list(vc.qc_idx)
    qf = list(vc.qf_idx(model.N))
    if np.any(vc.c0[qc] != 0.0):
        raise ConfigError("efficient form needs theta supported on the free coordinates")

    s = vc.s(q)
    val, d1, d2 = vc.hd(s)
    wf = vc.c0[qf] / vc.delta_theta          # ds/dq_f
    dhd = np.outer(d1, wf)                   # k x (N-k)
    sdot = wf @ qd[qf]
    quad_hd = d2 * sdot**2                   # k-vector

    y = q[qc] - val
    yd = qd[qc] - d1 * sdot
    if gains is None:
        gamma = np.zeros(vc.k)
    else:
        gamma = -(gains.kp_mat(vc.k) @ y / gains.eps**2
                  + gains.kd_mat(vc.k) @ yd / gains.eps)

    D = model.inertia(q)
    H = model.bias(q, qd)
    Ec = np.zeros((model.N, vc.k)); Ec[qc, np.arange(vc.k)] = 1.0
    Ef = np.zeros((model.N, model.N - vc.k)); Ef[qf, np.arange(model.N - vc.k)] = 1.0
    Jr = Ec @ dhd + Ef
    Omega = D @ (Ec @ (quad_hd + gamma)) + H

    Bp, Bpi = model.B_perp, model.B_pinv
    Mblock = Bp @ D @ Jr                      # (N-k) x (N-k), the only solve
    try:
        v = -np.linalg.solve(Mblock, Bp @ Omega)
    except np.linalg.LinAlgError as exc:
        raise SingularDecouplingError("singular reduced inertia block") from exc
    u = Bpi @ D @ Jr @ v + Bpi @ Omega
    if details:
        return u, {"solved_block_shape": Mblock.shape}
    return u


def closed_loop_torque(vc, model, q, qd, gains=None, u_max=None):
    """Torque and acceleration of the IO-linearizing loop, one inertia factor.

    Produces the same torque as ``io_linearizing_u`` (or ``u_star`` when
    gains is None) but shares the Cholesky factorization of D across the
    internal solves, which matters inside the integrator hot loop. Returns
    (u, qdd, clipped) with saturation applied to both.
    """
    from scipy.linalg import cho_factor, cho_solve
    D = model.inertia(q)
    H = model.bias(q, qd)
    dh = vc.dh_dq(q)
    cf = cho_factor(D)
    DinvB = cho_solve(cf, model.B)
    DinvH = cho_solve(cf, H)
    A = dh @ DinvB
    rhs = dh @ DinvH - vc.quad(q, qd)
    if gains is not None:
        y, yd = vc.output(q, qd)
        rhs = rhs - (gains.kp_mat(vc.k) @ y / gains.eps**2
                     + gains.kd_mat(vc.k) @ yd / gains.eps)
    u = np.linalg.solve(A, rhs)
    u, clipped = saturate(u, u_max)
    return u, DinvB @ u - DinvH, clipped


def saturate(u, u_max):
    """Clamp torques symmetrically; flags when the clamp was active."""
    if u_max is None:
        return u, False
    clipped = np.clip(u, -u_max, u_max)
    return clipped, bool(np.any(clipped != u))
