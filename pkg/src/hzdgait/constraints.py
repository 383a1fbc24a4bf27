"""Physical holonomic-constraint reduction (the un-actuated analogue of
virtual constraints), used throughout the test suite as an independent oracle
for the zero-dynamics machinery.

Constraints are given in the separated form q_c = h_d(q_f); the generic
implicit form h(q) = 0 appears only in the Lagrange-multiplier evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass
class CoordinateSplit:
    """Disjoint index sets selecting constrained and free coordinates."""

    qc_idx: tuple
    qf_idx: tuple

    def __post_init__(self):
        self.qc_idx = tuple(int(i) for i in self.qc_idx)
        self.qf_idx = tuple(int(i) for i in self.qf_idx)
        if set(self.qc_idx) & set(self.qf_idx):
            raise ConfigError("index sets must be disjoint")
        n = len(self.qc_idx) + len(self.qf_idx)
        if set(self.qc_idx) | set(self.qf_idx) != set(range(n)):
            raise ConfigError("index sets must cover 0..N-1")
        self.N = n

    def combine(self, q_c, q_f):
        q = np.empty(self.N)
        q[list(self.qc_idx)] = q_c
        q[list(self.qf_idx)] = q_f
        return q

    def split(self, q):
        q = np.asarray(q, dtype=float)
        return q[list(self.qc_idx)], q[list(self.qf_idx)]


class ConstraintMap:
    """Separated constraint q_c = h_d(q_f) with analytic derivatives.

    Subclasses provide value / jac / quad, where ``quad(q_f, qd_f)`` is the
    contraction d/dq_f (jac qd_f) qd_f appearing in the acceleration
    constraint.
    """

    def value(self, q_f):
        raise NotImplementedError

    def jac(self, q_f):
        raise NotImplementedError

    def quad(self, q_f, qd_f):
        raise NotImplementedError


class ConstantMap(ConstraintMap):
    """Locked coordinates: q_c fixed at given values."""

    def __init__(self, values):
        self.values = np.atleast_1d(np.asarray(values, dtype=float))

    def value(self, q_f):
        return self.values.copy()

    def jac(self, q_f):
        return np.zeros((self.values.size, np.atleast_1d(q_f).size))

    def quad(self, q_f, qd_f):
        return np.zeros(self.values.size)


class LinearMap(ConstraintMap):
    """q_c = A q_f + b."""

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)

    def value(self, q_f):
        return self.A @ np.atleast_1d(q_f) + self.b

    def jac(self, q_f):
        return self.A.copy()

    def quad(self, q_f, qd_f):
        return np.zeros(self.A.shape[0])


class CallableMap(ConstraintMap):
    """Wraps callables returning value, jacobian and second-derivative tensor."""

    def __init__(self, value, jac, hess):
        self._value, self._jac, self._hess = value, jac, hess

    def value(self, q_f):
        return np.atleast_1d(self._value(np.atleast_1d(q_f)))

    def jac(self, q_f):
        return np.atleast_2d(self._jac(np.atleast_1d(q_f)))

    def quad(self, q_f, qd_f):
        H = np.asarray(self._hess(np.atleast_1d(q_f)))  # (k, nf, nf)
        qd_f = np.atleast_1d(qd_f)
        return np.einsum("kij,i,j->k", H, qd_f, qd_f)


def constraint_jacobian(split, hd, q_f):
    """J_c = dF_c/dq_f stacked in full coordinates."""
    q_f = np.atleast_1d(np.asarray(q_f, dtype=float))
    nf = q_f.size
    J = np.zeros((split.N, nf))
    J[list(split.qc_idx), :] = hd.jac(q_f)
    J[list(split.qf_idx), :] = np.eye(nf)
    return J


def constraint_quad(split, hd, q_f, qd_f):
    """H_c: velocity-quadratic remainder of the acceleration constraint."""
    H = np.zeros(split.N)
    H[list(split.qc_idx)] = hd.quad(q_f, qd_f)
    return H


def embed(split, hd, q_f, qd_f):
    """Lift reduced coordinates to a full state on the constraint surface."""
    q_f = np.atleast_1d(np.asarray(q_f, dtype=float))
    qd_f = np.atleast_1d(np.asarray(qd_f, dtype=float))
    q = split.combine(hd.value(q_f), q_f)
    qd = constraint_jacobian(split, hd, q_f) @ qd_f
    return q, qd


def reduced_dynamics(model, split, hd, q_f, qd_f):
    """Reduced inertia and bias of the constrained mechanism.

    D~ = J_c^T D J_c and H~ = J_c^T (H + D H_c) on the constraint surface.
    """
    q, qd = embed(split, hd, q_f, qd_f)
    J = constraint_jacobian(split, hd, q_f)
    D = model.inertia(q)
    Dt = J.T @ D @ J
    cond = np.linalg.cond(Dt)
    if not np.isfinite(cond) or cond > 1e12:
        raise DomainError(f"singular reduced inertia, condition number {cond:.3e}")
    Ht = J.T @ (model.bias(q, qd) + D @ constraint_quad(split, hd, q_f, qd_f))
    return {"D": Dt, "H": Ht}


def reduced_accel(model, split, hd, q_f, qd_f):
    red = reduced_dynamics(model, split, hd, q_f, qd_f)
    return np.linalg.solve(red["D"], -red["H"])


def lagrange_multiplier(model, h, q, qd):
    """Multiplier lambda* for a generic regular constraint h(q) = 0.

    ``h`` must provide dh(q) (k x N) and quad(q, qd); the formula is
    lambda* = Lambda^-1 [ dh D^-1 (C qd + G) - quad ] with
    Lambda = dh D^-1 dh^T.
    """
    dh = np.atleast_2d(h.dh(q))
    k = dh.shape[0]
    if np.linalg.matrix_rank(dh, tol=1e-10) < k:
        raise DomainError("constraint Jacobian rank deficient (regularity violated)")
    D = model.inertia(q)
    DinvdhT = np.linalg.solve(D, dh.T)
    Lam = dh @ DinvdhT
    rhs = dh @ np.linalg.solve(D, model.bias(q, qd)) - h.quad(q, qd)
    return np.linalg.solve(Lam, rhs)


@dataclass
class ImplicitConstraint:
    """Generic h(q) = 0 wrapper for the multiplier evaluator."""

    h: object
    dh: object
    quad: object

    def __post_init__(self):
        hf, dhf, qf = self.h, self.dh, self.quad
        self.h = lambda q: np.atleast_1d(hf(q))
        self.dh = lambda q: np.atleast_2d(dhf(q))
        self.quad = lambda q, qd: np.atleast_1d(qf(q, qd))


def separated_as_implicit(split, hd):
    """Express q_c - h_d(q_f) = 0 in the generic implicit form."""
    def h(q):
        q_c, q_f = split.split(q)
        return q_c - hd.value(q_f)

    def dh(q):
        _, q_f = split.split(q)
        J = np.zeros((len(split.qc_idx), split.N))
        J[np.arange(len(split.qc_idx)), list(split.qc_idx)] = 1.0
        J[:, list(split.qf_idx)] -= hd.jac(q_f)
        return J

    def quad(q, qd):
        _, q_f = split.split(q)
        _, qd_f = split.split(qd)
        return -hd.quad(q_f, qd_f)

    return ImplicitConstraint(h, dh, quad)


def constrained_accel(model, split, hd, q, qd):
    """Full-coordinate acceleration of the multiplier-augmented model."""
    con = separated_as_implicit(split, hd)
    lam = lagrange_multiplier(model, con, q, qd)
    D = model.inertia(q)
    return np.linalg.solve(D, con.dh(q).T @ lam - model.bias(q, qd)), lam
