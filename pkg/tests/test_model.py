"""Dynamics building blocks checked against finite differences and
first-principles summations over the links."""

import numpy as np
import pytest

from hzdgait.errors import ConfigError, DimensionError
from hzdgait.model import FullState, RobotModel, compass, fivelink, load_model

FD = 1e-6


def _random_state(model, rng, scale=0.6):
    q = scale * rng.standard_normal(model.N)
    qd = rng.standard_normal(model.N)
    return q, qd


def _link_points(model, q, qd):
    """COM positions/velocities of every link by direct summation."""
    pts = []
    for i in range(model.N):
        rho = model._r_com[i]
        pts.append(model._point(rho, q, qd))
    return pts


def test_inertia_matches_link_summation(fivelink_model, rng):
    """KE from D equals the sum of translational plus rotational link KE."""
    model = fivelink_model
    for _ in range(5):
        q, qd = _random_state(model, rng)
        ke = 0.5 * qd @ model.inertia(q) @ qd
        ke_sum = 0.0
        for i, (_, _, vx, vz) in enumerate(_link_points(model, q, qd)):
            ke_sum += 0.5 * model.m[i] * (vx**2 + vz**2) \
                + 0.5 * model.I[i] * qd[i]**2
        assert abs(ke - ke_sum) < 1e-12 * max(1.0, abs(ke))


def test_inertia_symmetric_positive_definite(fivelink_model, rng):
    q, _ = _random_state(fivelink_model, rng)
    D = fivelink_model.inertia(q)
    assert np.allclose(D, D.T)
    assert np.all(np.linalg.eigvalsh(D) > 0.0)


def test_gravity_is_potential_gradient(fivelink_model, rng):
    model = fivelink_model
    q, _ = _random_state(model, rng)
    G = model.gravity(q)
    for j in range(model.N):
        e = np.zeros(model.N)
        e[j] = FD
        pe_p = model.energy(q + e, np.zeros(model.N))["potential"]
        pe_m = model.energy(q - e, np.zeros(model.N))["potential"]
        assert abs(G[j] - (pe_p - pe_m) / (2 * FD)) < 1e-7


def test_d_inertia_dq_finite_difference(fivelink_model, rng):
    model = fivelink_model
    q, _ = _random_state(model, rng)
    dD = model.d_inertia_dq(q)
    for m in range(model.N):
        e = np.zeros(model.N)
        e[m] = FD
        num = (model.inertia(q + e) - model.inertia(q - e)) / (2 * FD)
        assert np.abs(dD[:, :, m] - num).max() < 1e-8


def test_coriolis_skew_symmetry(fivelink_model, rng):
    """Ddot - 2C must be skew symmetric (passivity property)."""
    model = fivelink_model
    q, qd = _random_state(model, rng)
    C = model.christoffel(q, qd)
    Ddot = np.einsum("jkm,m->jk", model.d_inertia_dq(q), qd)
    S = Ddot - 2.0 * C
    assert np.abs(S + S.T).max() < 1e-12


def test_bias_consistent_with_terms(fivelink_model, rng):
    model = fivelink_model
    q, qd = _random_state(model, rng)
    t = model.dynamics_terms(q, qd)
    assert np.allclose(model.bias(q, qd), t.Cqdot + t.G)
    assert np.allclose(t.Cqdot, t.C @ qd)


def test_accel_solves_equations_of_motion(fivelink_model, rng):
    model = fivelink_model
    q, qd = _random_state(model, rng)
    u = rng.standard_normal(model.k)
    qdd = model.accel(q, qd, u)
    resid = model.inertia(q) @ qdd + model.bias(q, qd) - model.B @ u
    assert np.abs(resid).max() < 1e-10


def test_energy_rate_equals_actuator_power(fivelink_model, rng):
    """dE/dt = qd^T B u along the flow (passive means conserved)."""
    model = fivelink_model
    q, qd = _random_state(model, rng, scale=0.3)
    u = rng.standard_normal(model.k)
    h = 1e-6

    def step(q, qd, h):
        # one midpoint step, accurate enough for the central difference
        qdd = model.accel(q, qd, u)
        qm, qdm = q + 0.5 * h * qd, qd + 0.5 * h * qdd
        qddm = model.accel(qm, qdm, u)
        return q + h * qdm, qd + h * qddm

    qp, qdp = step(q, qd, h)
    qm, qdm = step(q, qd, -h)
    dE = (model.energy(qp, qdp)["total"] - model.energy(qm, qdm)["total"]) / (2 * h)
    power = qd @ model.B @ u
    assert abs(dE - power) < 1e-5 * max(1.0, abs(power))


def test_swing_jacobian_finite_difference(fivelink_model, rng):
    model = fivelink_model
    q, qd = _random_state(model, rng)
    J = model.swing_jacobian(q)
    for j in range(model.N):
        e = np.zeros(model.N)
        e[j] = FD
        fp = model.swing_foot(q + e, np.zeros(model.N))
        fm = model.swing_foot(q - e, np.zeros(model.N))
        assert abs(J[0, j] - (fp["p2x"] - fm["p2x"]) / (2 * FD)) < 1e-8
        assert abs(J[1, j] - (fp["p2z"] - fm["p2z"]) / (2 * FD)) < 1e-8
    # velocity consistency
    sf = model.swing_foot(q, qd)
    v = J @ qd
    assert abs(sf["v2x"] - v[0]) < 1e-12
    assert abs(sf["v2z"] - v[1]) < 1e-12
    assert abs(model.swing_height(q) - sf["p2z"]) < 1e-14
    assert abs(model.swing_height_rate(q, qd) - sf["v2z"]) < 1e-14


def test_com_height_jacobian_finite_difference(fivelink_model, rng):
    model = fivelink_model
    q, _ = _random_state(model, rng)
    Jz = model.com_height_jacobian(q)
    for j in range(model.N):
        e = np.zeros(model.N)
        e[j] = FD
        zp = model.center_of_mass(q + e, np.zeros(model.N))["z_com"]
        zm = model.center_of_mass(q - e, np.zeros(model.N))["z_com"]
        assert abs(Jz[j] - (zp - zm) / (2 * FD)) < 1e-8


def test_b_perp_annihilates_b(compass_model, threelink_model, fivelink_model):
    for model in (compass_model, threelink_model, fivelink_model):
        assert np.abs(model.B_perp @ model.B).max() < 1e-12
        assert np.allclose(model.B_pinv @ model.B, np.eye(model.k))


def test_b_perp_momentum_form(fivelink_model, rng):
    """With internal torques, B_perp D qd is the pivot angular momentum."""
    from hzdgait.impact import angular_momentum_about
    model = fivelink_model
    q, qd = _random_state(model, rng)
    sigma = (model.B_perp @ model.inertia(q) @ qd).item()
    L = angular_momentum_about(model, q, qd, (0.0, 0.0))
    assert abs(sigma - L) < 1e-10 * max(1.0, abs(L))


def test_relabel_is_involution(compass_model, fivelink_model):
    for model in (compass_model, fivelink_model):
        assert np.allclose(model.R @ model.R, np.eye(model.N))


def test_full_state_round_trip():
    st = FullState([0.1, -0.2], [0.3, 0.4])
    assert np.allclose(FullState.from_x(st.x).q, st.q)
    with pytest.raises(DimensionError):
        FullState([0.1], [0.2, 0.3])


def test_load_model_round_trip(fivelink_model):
    again = load_model(fivelink_model.to_dict())
    q = np.array([0.1, 0.2, -0.1, -0.3, 0.05])
    assert np.allclose(again.inertia(q), fivelink_model.inertia(q))
    assert load_model("compass").name == "compass"
    assert load_model(fivelink_model) is fivelink_model


def test_load_model_rejects_garbage(tmp_path):
    with pytest.raises(ConfigError):
        load_model(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("not json at all")
    with pytest.raises(ConfigError):
        load_model(str(bad))
    with pytest.raises(ConfigError):
        load_model({"links": []})
    with pytest.raises(ConfigError):
        load_model(42)


def test_constructor_validation():
    with pytest.raises(ConfigError):
        RobotModel(m=[1.0], l=[1.0], c=[0.5], I=[0.1], B=[[1.0]])
    with pytest.raises(ConfigError):  # fully actuated is rejected
        RobotModel(m=[1, 1], l=[1, 1], c=[0.5, 0.5], I=[0.1, 0.1],
                   B=np.eye(2))
    with pytest.raises(ConfigError):  # COM offset outside the link
        RobotModel(m=[1, 1], l=[1, 1], c=[0.5, 1.5], I=[0.1, 0.1],
                   B=[[-1.0], [1.0]])


def test_dimension_checks(compass_model):
    with pytest.raises(DimensionError):
        compass_model.inertia(np.zeros(3))
    with pytest.raises(DimensionError):
        compass_model.energy(np.zeros(2), np.array([np.nan, 0.0]))
