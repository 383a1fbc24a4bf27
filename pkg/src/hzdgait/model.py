"""Rigid planar chain dynamics for point-foot bipeds.

Conventions
-----------
* Generalized coordinates are absolute link angles, counterclockwise positive,
  measured from the upward vertical. The stance pivot sits at the world origin,
  x pointing right, z pointing up.
* Each link i attaches at a point on its parent (the parent's distal end) and
  extends by ``sign_i * l_i`` along the direction ``(-sin q_i, cos q_i)``. The
  sign lets leg links be measured "foot to hip" on both legs so that the impact
  relabeling is a pure index permutation.
* The torque distribution matrix B is constant; internal joint torques produce
  columns of the form e_a - e_b, so the columns sum to zero and the total
  angular momentum about the pivot is unactuated.

The inertia matrix of such a chain has the closed form
``D_jk = I_j delta_jk + A_jk cos(q_j - q_k)`` with a constant coefficient
matrix A, which gives cheap exact expressions for the Coriolis matrix,
gravity vector and the partial derivatives of D.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError


@dataclass
class FullState:
    """Pinned-phase state (q; qdot) in absolute angles."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise DimensionError("q and qd must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise DimensionError("non-finite state entries")

    @property
    def x(self):
        return np.concatenate([self.q, self.qd])

    @classmethod
    def from_x(cls, x):
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])


@dataclass
class DynamicsTerms:
    """Inertia matrix, Coriolis product, gravity vector and dD/dq."""

    D: np.ndarray       # N x N
    Cqdot: np.ndarray   # N
    G: np.ndarray       # N
    dDdq: np.ndarray    # N x N x N, dDdq[j, k, m] = d D_jk / d q_m
    C: np.ndarray       # N x N Christoffel matrix, Cqdot = C @ qd


class RobotModel:
    """N-link planar pinned chain with constant torque distribution.

    Parameters per link: mass ``m`` (kg), length ``l`` (m), center-of-mass
    offset ``c`` from the proximal joint (m), rotational inertia ``I`` about
    the link COM (kg m^2). ``parents[i]`` is the index of the link whose
    distal end link i attaches to (-1 for the pivot); ``signs[i]`` is +1 when
    the link extends along its direction vector and -1 when it extends
    opposite (used for the swing-side leg links).
    """

    def __init__(self, m, l, c, I, B, g=9.81, parents=None, signs=None,
                 relabel=None, swing_link=None, name="custom"):
        self.m = np.asarray(m, dtype=float)
        self.l = np.asarray(l, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.I = np.asarray(I, dtype=float)
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.g = float(g)
        self.name = name

        N = self.m.size
        if not (self.l.size == self.c.size == self.I.size == N):
            raise ConfigError("per-link parameter arrays must share one length")
        if N < 2:
            raise ConfigError("need at least two links")
        if np.any(self.m <= 0) or np.any(self.l <= 0):
            raise ConfigError("masses and lengths must be strictly positive")
        if np.any(self.c < 0) or np.any(self.c > self.l):
            raise ConfigError("COM offsets must satisfy 0 <= c <= l")
        if np.any(self.I < 0):
            raise ConfigError("rotational inertias must be non-negative")

        self.N = N
        self.parents = list(range(-1, N - 1)) if parents is None else list(parents)
        self.signs = np.ones(N) if signs is None else np.asarray(signs, dtype=float)
        if len(self.parents) != N or self.signs.size != N:
            raise ConfigError("parents/signs length mismatch")
        for i, p in enumerate(self.parents):
            if p >= i or p < -1:
                raise ConfigError("parents must reference earlier links (or -1)")
        if not np.all(np.abs(self.signs) == 1.0):
            raise ConfigError("signs must be +1 or -1")

        if self.B.shape[0] != N:
            raise ConfigError("B must have N rows")
        self.k = self.B.shape[1]
        if not (1 <= self.k < N):
            raise ConfigError("need 1 <= k < N actuators (underactuated)")
        if np.linalg.matrix_rank(self.B) != self.k:
            raise ConfigError("B must have full column rank")
        self.dof_unactuated = N - self.k
        if self.dof_unactuated not in (1, 2):
            raise ConfigError("degree of underactuation must be 1 or 2")

        self.swing_link = N - 1 if swing_link is None else int(swing_link)

        if relabel is None:
            relabel = np.eye(N)[::-1]  # leg-swap default: reverse link order
        self.R = np.asarray(relabel, dtype=float)
        if self.R.shape != (N, N) or not np.allclose(self.R @ self.R, np.eye(N)):
            raise ConfigError("relabeling matrix must be an N x N involution")

        self._precompute()

    # -- constant structure --------------------------------------------------

    def _precompute(self):
        N = self.N
        # ancestor chains (path from pivot to each link)
        chains = []
        for i in range(N):
            path, j = [], i
            while j >= 0:
                path.append(j)
                j = self.parents[j]
            chains.append(path[::-1])
        self._chains = chains

        # radial coefficient of angle j in the COM position of link i
        r = np.zeros((N, N))
        for i in range(N):
            for j in chains[i][:-1]:
                r[i, j] = self.signs[j] * self.l[j]
            r[i, i] = self.signs[i] * self.c[i]
        self._r_com = r

        self._A = r.T @ np.diag(self.m) @ r     # D = A o cos(dq) + diag(I)
        self._w = self.m @ r                    # gravity / COM weights
        self.total_mass = float(self.m.sum())

        # coefficient vector of the swing leg end position
        rho = np.zeros(N)
        for j in chains[self.swing_link]:
            rho[j] = self.signs[j] * self.l[j]
        self._rho_swing = rho

        # annihilator of B^T (rows span left null space of B) and pseudoinverse
        q_full, _ = np.linalg.qr(self.B, mode="complete")
        self.B_perp = q_full[:, self.k:].T.copy()
        if self.N - self.k == 1:
            # scale the single annihilator row so that, for internal torque
            # distributions (zero column sums of B), it is exactly the all-ones
            # row and B_perp D qd is the angular momentum about the pivot
            mean = self.B_perp.mean()
            if abs(mean) > 1e-12:
                self.B_perp = self.B_perp / mean
        self.B_pinv = np.linalg.pinv(self.B)

    def point_coefficients(self, link, dist):
        """Radial coefficient vector of a point ``dist`` along ``link``."""
        rho = np.zeros(self.N)
        for j in self._chains[link][:-1]:
            rho[j] = self.signs[j] * self.l[j]
        rho[link] = self.signs[link] * dist
        return rho

    # -- dynamics ------------------------------------------------------------

    def _check(self, q, qd=None):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.N,):
            raise DimensionError(f"expected {self.N} coordinates, got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise DimensionError("non-finite configuration")
        if qd is None:
            return q
        qd = np.asarray(qd, dtype=float)
        if qd.shape != (self.N,) or not np.all(np.isfinite(qd)):
            raise DimensionError("bad velocity vector")
        return q, qd

    def inertia(self, q):
        q = self._check(q)
        dq = q[:, None] - q[None, :]
        return self._A * np.cos(dq) + np.diag(self.I)

    def christoffel(self, q, qd):
        """Coriolis matrix from the Christoffel symbols of D."""
        dq = q[:, None] - q[None, :]
        return (self._A * np.sin(dq)) * qd[None, :]

    def gravity(self, q):
        q = self._check(q)
        return -self.g * self._w * np.sin(q)

    def d_inertia_dq(self, q):
        """dDdq[j, k, m] = dD_jk/dq_m, from the cosine-difference structure."""
        q = self._check(q)
        N = self.N
        dq = q[:, None] - q[None, :]
        S = -self._A * np.sin(dq)
        dD = np.zeros((N, N, N))
        idx = np.arange(N)
        dD[idx, :, idx] += S          # m == j contribution
        dD[:, idx, idx] -= S          # m == k contribution
        return dD

    def dynamics_terms(self, state, qd=None):
        """Inertia, Coriolis product, gravity and dD/dq at a state."""
        if qd is None:
            q, qd = state.q, state.qd
        else:
            q = state
        q, qd = self._check(q, qd)
        C = self.christoffel(q, qd)
        return DynamicsTerms(
            D=self.inertia(q),
            Cqdot=C @ qd,
            G=self.gravity(q),
            dDdq=self.d_inertia_dq(q),
            C=C,
        )

    def bias(self, q, qd):
        """H(q, qd) = C(q, qd) qd + G(q)."""
        dq = q[:, None] - q[None, :]
        return (self._A * np.sin(dq)) @ (qd * qd) + self.gravity(q)

    def accel(self, q, qd, u=None):
        """Forward dynamics qdd = D^-1 (B u - H)."""
        rhs = -self.bias(q, qd)
        if u is not None:
            rhs = rhs + self.B @ u
        return np.linalg.solve(self.inertia(q), rhs)

    def dlagrangian_dq(self, q, qd):
        """Partial of the Lagrangian with respect to q (for the momentum form)."""
        dq = q[:, None] - q[None, :]
        S = -self._A * np.sin(dq)
        return qd * (S @ qd) - self.gravity(q)

    def energy(self, state, qd=None):
        """Kinetic, potential and total energy."""
        if qd is None:
            q, qd = state.q, state.qd
        else:
            q = state
        q, qd = self._check(q, qd)
        ke = 0.5 * qd @ self.inertia(q) @ qd
        pe = self.g * self._w @ np.cos(q)
        return {"kinetic": ke, "potential": pe, "total": ke + pe}

    # -- kinematics ----------------------------------------------------------

    def _point(self, rho, q, qd=None):
        px = -rho @ np.sin(q)
        pz = rho @ np.cos(q)
        if qd is None:
            return px, pz
        vx = -(rho * np.cos(q)) @ qd
        vz = -(rho * np.sin(q)) @ qd
        return px, pz, vx, vz

    def _point_jacobian(self, rho, q):
        return np.vstack([-rho * np.cos(q), -rho * np.sin(q)])

    def swing_foot(self, state, qd=None):
        """Swing leg end position and velocity."""
        if qd is None:
            q, qd = state.q, state.qd
        else:
            q = state
        q, qd = self._check(q, qd)
        px, pz, vx, vz = self._point(self._rho_swing, q, qd)
        return {"p2x": px, "p2z": pz, "v2x": vx, "v2z": vz}

    def swing_height(self, q):
        return self._rho_swing @ np.cos(q)

    def swing_height_rate(self, q, qd):
        return -(self._rho_swing * np.sin(q)) @ qd

    def swing_jacobian(self, q):
        return self._point_jacobian(self._rho_swing, q)

    def com_height_jacobian(self, q):
        """d z_com / d q."""
        return -self._w * np.sin(q) / self.total_mass

    def center_of_mass(self, state, qd=None):
        if qd is None:
            q, qd = state.q, state.qd
        else:
            q = state
        q, qd = self._check(q, qd)
        w = self._w / self.total_mass
        return {
            "x_com": -w @ np.sin(q),
            "z_com": w @ np.cos(q),
            "zdot_com": -(w * np.sin(q)) @ qd,
            "total_mass": self.total_mass,
        }

    # -- floating-base extension (impact solver support) ---------------------

    def floating_base_terms(self, q_e, qd_e=None):
        """Extended inertia matrix and swing-foot contact Jacobian.

        Extended coordinates append the Cartesian position of the stance
        pivot: q_e = (q; p_x; p_z). De is independent of the base position.
        """
        q_e = np.asarray(q_e, dtype=float)
        if q_e.shape != (self.N + 2,):
            raise DimensionError("extended coordinates must have N + 2 entries")
        q = q_e[:self.N]
        D = self.inertia(q)
        cross = np.vstack([-self._w * np.cos(q), -self._w * np.sin(q)])
        De = np.block([[D, cross.T], [cross, self.total_mass * np.eye(2)]])
        E2 = np.hstack([self.swing_jacobian(q), np.eye(2)])
        return {"De": De, "E2": E2}

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "links": [
                {"m": float(self.m[i]), "l": float(self.l[i]),
                 "c": float(self.c[i]), "I": float(self.I[i]),
                 "parent": self.parents[i], "sign": int(self.signs[i])}
                for i in range(self.N)
            ],
            "B": self.B.tolist(),
            "g": self.g,
            "R": self.R.astype(int).tolist(),
            "swing_link": self.swing_link,
            "name": self.name,
        }


def load_model(source):
    """Build a RobotModel from a dict, JSON file path, or preset name."""
    if isinstance(source, RobotModel):
        return source
    if isinstance(source, str) and source in PRESETS:
        return PRESETS[source]()
    if isinstance(source, str):
        try:
            with open(source) as fh:
                source = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read model file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(source, dict):
        raise ConfigError("model source must be a dict, file path or preset name")
    try:
        links = source["links"]
        m = [lk["m"] for lk in links]
        l = [lk["l"] for lk in links]
        c = [lk["c"] for lk in links]
        inertia = [lk["I"] for lk in links]
        parents = [lk.get("parent", i - 1) for i, lk in enumerate(links)]
        signs = [lk.get("sign", 1) for lk in links]
        return RobotModel(
            m, l, c, inertia, source["B"], g=source.get("g", 9.81),
            parents=parents, signs=signs, relabel=source.get("R"),
            swing_link=source.get("swing_link"), name=source.get("name", "custom"),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model schema violation at {exc!r}") from exc


# -- presets ----------------------------------------------------------------
# Numeric parameters below are artifact defaults, chosen to give well
# conditioned test problems; they are not tied to any particular robot.

def compass(g=9.81):
    """Two identical straight legs joined at an actuated hip."""
    return RobotModel(
        m=[5.0, 5.0], l=[1.0, 1.0], c=[0.5, 0.5], I=[0.10, 0.10],
        B=[[-1.0], [1.0]], g=g,
        parents=[-1, 0], signs=[1, -1], swing_link=1,
        relabel=[[0, 1], [1, 0]], name="compass",
    )


def threelink(g=9.81):
    """Two legs plus a torso at the hip; both hip joints actuated."""
    return RobotModel(
        m=[5.0, 5.0, 10.0], l=[1.0, 1.0, 0.8], c=[0.5, 0.5, 0.4],
        I=[0.10, 0.10, 0.60],
        B=[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], g=g,
        parents=[-1, 0, 0], signs=[1, -1, 1], swing_link=1,
        relabel=[[0, 1, 0], [1, 0, 0], [0, 0, 1]], name="threelink",
    )


def fivelink(g=9.81):
    """Torso, thighs and shanks with actuated hips and knees (RABBIT-like)."""
    e = np.eye(5)
    B = np.column_stack([e[0] - e[1],   # stance knee
                         e[1] - e[2],   # stance hip
                         e[3] - e[2],   # swing hip
                         e[4] - e[3]])  # swing knee
    R = np.zeros((5, 5))
    for a, b in [(0, 4), (1, 3), (2, 2), (3, 1), (4, 0)]:
        R[a, b] = 1.0
    return RobotModel(
        m=[3.2, 6.8, 12.0, 6.8, 3.2],
        l=[0.40, 0.40, 0.625, 0.40, 0.40],
        c=[0.20, 0.20, 0.20, 0.20, 0.20],
        I=[0.05, 0.25, 1.33, 0.25, 0.05],
        B=B, g=g,
        parents=[-1, 0, 1, 1, 3], signs=[1, 1, 1, -1, -1], swing_link=4,
        relabel=R, name="fivelink",
    )


PRESETS = {"compass": compass, "threelink": threelink, "fivelink": fivelink}


# -- functional wrappers matching the operation-style API --------------------

def dynamics_terms(model, state):
    return model.dynamics_terms(state)


def energy(model, state):
    return model.energy(state)


def swing_foot(model, state):
    return model.swing_foot(state)


def center_of_mass(model, state):
    return model.center_of_mass(state)


def floating_base_terms(model, q_e, qd_e=None):
    return model.floating_base_terms(q_e, qd_e)
