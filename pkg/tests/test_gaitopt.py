"""Gait evaluation and the design search: reaction-force oracle, cost
structure and trajectory fitting."""

import numpy as np
import pytest

from hzdgait.control import VirtualConstraint
from hzdgait.constraints import CoordinateSplit
from hzdgait.errors import ConfigError, MonotonicityError
from hzdgait.gaitopt import (GaitObjective, constraint_from_trajectory, cost,
                             evaluate_gait, ground_reaction, optimize)
from hzdgait.zerodyn import ZeroDyn1D, fixed_point_zeta, kappa12


def test_ground_reaction_newton_euler_oracle(fivelink_model, rng):
    """F_ground = d/dt (m v_com) + m g e_z by central differences on the flow."""
    model = fivelink_model
    for _ in range(5):
        q = 0.4 * rng.standard_normal(model.N)
        qd = rng.standard_normal(model.N)
        u = rng.standard_normal(model.k)

        def com_velocity(q, qd):
            w = model._w
            return np.array([-(w * np.cos(q)) @ qd, -(w * np.sin(q)) @ qd])

        h = 1e-6

        def flow(q, qd, h):
            # midpoint step along the actuated dynamics
            qdd = model.accel(q, qd, u)
            qm, qdm = q + 0.5 * h * qd, qd + 0.5 * h * qdd
            return q + h * qdm, qd + h * model.accel(qm, qdm, u)

        qp, qdp = flow(q, qd, h)
        qm, qdm = flow(q, qd, -h)
        dp = (com_velocity(qp, qdp) - com_velocity(qm, qdm)) / (2 * h)
        gr = ground_reaction(model, (q, qd), u)
        assert abs(gr["F_T"] - dp[0]) < 1e-4 * max(1.0, abs(dp[0]))
        assert abs(gr["F_N"] - (dp[1] + model.total_mass * model.g)) \
            < 1e-4 * max(1.0, abs(gr["F_N"]))


def test_ground_reaction_static_support(fivelink_model):
    """Hanging straight up at rest: the ground carries exactly the weight."""
    model = fivelink_model
    q = np.zeros(model.N)
    gr = ground_reaction(model, (q, np.zeros(model.N)))
    assert abs(gr["F_T"]) < 1e-9
    assert abs(gr["F_N"] - model.total_mass * model.g) < 1e-9


def test_cost_positive_and_consistent(fivelink_gait, fivelink_model):
    vc, _ = fivelink_gait
    J, data = cost(fivelink_model, vc, with_samples=True)
    assert J > 0.0
    assert data["period"] > 0.1
    assert data["step_length"] > 0.1
    assert data["fixed_point"]["exists"]
    # denser grid changes the quadrature only slightly
    J2 = cost(fivelink_model, vc, n_grid=401)
    assert abs(J2 - J) < 5e-3 * J


def test_evaluate_gait_report(fivelink_gait, fivelink_model):
    vc, _ = fivelink_gait
    res = evaluate_gait(fivelink_model, vc, GaitObjective(u_max=300.0))
    margins = res["margins"]
    for key in ("normal_force", "friction", "clearance", "late_clearance",
                "torque", "stability", "periodicity"):
        assert key in margins
    assert margins["stability"] > 0.0
    assert margins["periodicity"] >= 0.0
    assert res["speed"] > 0.0
    # the penalty is exactly zero iff every margin is non-negative
    if all(m >= 0.0 for m in margins.values()):
        assert res["penalty"] == 0.0
    else:
        assert res["penalty"] > 0.0


def test_speed_band_margin(fivelink_gait, fivelink_model):
    vc, _ = fivelink_gait
    res = evaluate_gait(fivelink_model, vc, GaitObjective())
    v = res["speed"]
    hit = evaluate_gait(fivelink_model, vc,
                        GaitObjective(target_speed=v))["margins"]["speed"]
    missed = evaluate_gait(fivelink_model, vc,
                           GaitObjective(target_speed=3 * v))["margins"]["speed"]
    assert hit > 0.0 > missed


def test_constraint_from_trajectory_round_trip(fivelink_gait, fivelink_model):
    """A recorded zero-dynamics orbit is refit to a near-zero output."""
    vc, _ = fivelink_gait
    model = fivelink_model
    zd = ZeroDyn1D(vc, model)
    fp = fixed_point_zeta(zd)
    thetas = np.linspace(vc.theta_plus, vc.theta_minus, 120)
    rows = []
    for th in thetas:
        kk = kappa12(vc, model, th)
        sigma = np.sqrt(2.0 * (fp["zeta_star"] - zd.v_zero(th)))
        qd = kk["J"][:, 0] * sigma / kk["M"]
        rows.append(np.concatenate([kk["q"], qd]))
    X = np.asarray(rows)
    split = CoordinateSplit(qc_idx=vc.qc_idx, qf_idx=vc.qf_idx(model.N))
    fit = constraint_from_trajectory(model, X, split, vc.c0,
                                     degree=vc.degree, fit_tol=1e-8)
    assert abs(fit.theta_plus - vc.theta_plus) < 1e-12
    assert abs(fit.theta_minus - vc.theta_minus) < 1e-12
    for q in X[::17, :model.N]:
        assert np.abs(fit.h(q)).max() < 1e-7


def test_constraint_fit_rejects_nonmonotone(fivelink_model, fivelink_gait):
    vc, _ = fivelink_gait
    X = np.zeros((10, 10))
    X[:, 0] = np.sin(np.linspace(0.0, 3.0, 10))  # theta doubles back
    split = CoordinateSplit(qc_idx=vc.qc_idx, qf_idx=vc.qf_idx(5))
    with pytest.raises(MonotonicityError):
        constraint_from_trajectory(fivelink_model, X, split, vc.c0)


def test_optimize_argument_validation(compass_model):
    with pytest.raises(ConfigError):
        optimize(compass_model, np.zeros((1, 6)), GaitObjective())
    vc = VirtualConstraint(qc_idx=(1,), c0=[1.0, 0.0], alpha=np.zeros((1, 3)),
                           theta_plus=-0.15, theta_minus=0.15)
    with pytest.raises(ConfigError):
        optimize(compass_model, np.zeros((1, 3)), GaitObjective(),
                 vc_template=vc)
