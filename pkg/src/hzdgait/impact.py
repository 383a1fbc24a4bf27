"""Rigid perfectly inelastic impact map with coordinate relabeling.

The velocity reset comes from the standard floating-base contact KKT system:
the extended momentum is preserved except for an impulsive force at the new
contact point, whose post-impact velocity is zero. Configuration is continuous
up to the leg-swap relabeling q+ = R q-.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImpactDegeneracyError, SurfaceError

TOL_S = 1e-10  # surface membership tolerance (m)


@dataclass
class ImpactInfo:
    """Diagnostics from one impact solve."""

    impulse: np.ndarray          # contact impulse (Fx, Fz) at the landing foot
    liftoff_vz: float            # post-impact vertical velocity of the old stance foot
    liftoff_ok: bool             # non-negative vertical separation velocity
    impulse_normal_ok: bool      # non-negative normal impulse


def surface_residual(model, q, qd, tol=TOL_S):
    """Height and height-rate of the swing foot, plus S membership."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    height = model.swing_height(q)
    hdot = model.swing_height_rate(q, qd)
    return {"height": height, "hdot": hdot,
            "in_S": bool(abs(height) <= tol and hdot < 0.0)}


def velocity_reset_matrix(model, q):
    """Matrix P with qd_pinned_after = P @ qd_pinned_before (before relabeling).

    Solves the momentum-balance KKT system
        [De, -E2^T; E2, 0] [qde+; F] = [De qde-; 0]
    for every unit pre-impact joint velocity at once, then projects onto the
    pinned coordinates about the new stance point.
    """
    N = model.N
    terms = model.floating_base_terms(np.concatenate([q, [0.0, 0.0]]))
    De, E2 = terms["De"], terms["E2"]
    K = np.block([[De, -E2.T], [E2, np.zeros((2, 2))]])
    rhs = np.vstack([De[:, :N], np.zeros((2, N))])  # qde- = (qd; 0, 0)
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise ImpactDegeneracyError("singular contact KKT system") from exc
    return sol[:N, :], sol[N + 2:, :]  # velocity map, impulse map


def apply_impact(model, q_minus, qd_minus, check_surface=True, with_info=False):
    """Map a pre-impact state on S to the post-impact state.

    Returns (q_plus, qd_plus) in relabeled coordinates, plus an ImpactInfo
    when ``with_info`` is set. A failed lift-off check is reported in the
    diagnostics, not raised.
    """
    q_minus = np.asarray(q_minus, dtype=float)
    qd_minus = np.asarray(qd_minus, dtype=float)
    if check_surface:
        res = surface_residual(model, q_minus, qd_minus)
        if not res["in_S"]:
            raise SurfaceError(
                f"state not on switching surface: height={res['height']:.3e}, "
                f"hdot={res['hdot']:.3e}")

    P, F = velocity_reset_matrix(model, q_minus)
    qd_pinned = P @ qd_minus
    impulse = F @ qd_minus

    q_plus = model.R @ q_minus
    qd_plus = model.R @ qd_pinned
    if not with_info:
        return q_plus, qd_plus

    # old stance foot = new swing foot; its vertical velocity after relabeling
    liftoff_vz = model.swing_height_rate(q_plus, qd_plus)
    info = ImpactInfo(
        impulse=impulse,
        liftoff_vz=liftoff_vz,
        liftoff_ok=bool(liftoff_vz >= -1e-10),
        impulse_normal_ok=bool(impulse[1] >= -1e-10),
    )
    return q_plus, qd_plus, info


def delta_qdot(model, q_minus):
    """Full linear velocity map of the impact: qd+ = delta_qdot(q-) @ qd-."""
    P, _ = velocity_reset_matrix(model, np.asarray(q_minus, dtype=float))
    return model.R @ P


def angular_momentum_about(model, q, qd, point):
    """Angular momentum of all links about an arbitrary planar point.

    Independent summation over link momenta; used to validate the impact
    solver against conservation about the new contact point.
    """
    px0, pz0 = point
    total = 0.0
    for i in range(model.N):
        rho = model._r_com[i]
        x, z, vx, vz = model._point(rho, q, qd)
        total += model.I[i] * qd[i] + model.m[i] * ((x - px0) * vz - (z - pz0) * vx)
    return total
