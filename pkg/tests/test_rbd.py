from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcts import rbd, sim

import oracles
from conftest import Q_STAR, planar_dict


def rand_state(model, rng, scale=1.0):
    q = rng.uniform(-1.2, 1.2, model.n) * scale
    qd = rng.uniform(-1.0, 1.0, model.n) * scale
    return q, qd


# ---------------------------------------------------------------------------
# forward kinematics


def test_fk_single_link_identity(planar1):
    pose = rbd.forward_kinematics(planar1, np.zeros(1), planar1.tool_frame)
    np.testing.assert_allclose(pose.position, [1.0, 0.0, 0.0], atol=1e-12)


def test_fk_two_link_quarter_turn(planar2):
    pose = rbd.forward_kinematics(planar2, np.array([np.pi / 2, 0.0]), planar2.tool_frame)
    np.testing.assert_allclose(pose.position, [0.0, 2.0, 0.0], atol=1e-12)


def test_fk_bundled_vs_chained_oracle(iiwa, iiwa_dict):
    p_oracle, R_oracle = oracles.fk_chain(iiwa_dict, Q_STAR)
    pose = rbd.forward_kinematics(iiwa, Q_STAR, iiwa.tool_frame)
    np.testing.assert_allclose(pose.position, p_oracle, atol=1e-12)
    np.testing.assert_allclose(pose.rotation, R_oracle, atol=1e-12)


def test_fk_link_frames_vs_oracle(iiwa, iiwa_dict):
    rng = np.random.default_rng(3)
    q = rng.uniform(-1.5, 1.5, 7)
    for frame in (0, 3, 6):
        p_oracle, R_oracle = oracles.fk_chain(iiwa_dict, q, frame=frame)
        pose = rbd.forward_kinematics(iiwa, q, frame)
        np.testing.assert_allclose(pose.position, p_oracle, atol=1e-12)
        np.testing.assert_allclose(pose.rotation, R_oracle, atol=1e-12)


def test_fk_rejects_bad_frame(iiwa):
    with pytest.raises(ValueError, match="frame"):
        rbd.forward_kinematics(iiwa, np.zeros(7), 9)
    with pytest.raises(ValueError):
        rbd.forward_kinematics(iiwa, np.zeros(5), 0)


def test_framepose_rejects_non_rotation():
    with pytest.raises(ValueError, match="orthonormal"):
        rbd.FramePose(np.zeros(3), np.eye(3) * 1.001)


# ---------------------------------------------------------------------------
# jacobians


def test_jacobian_single_link(planar1):
    J = rbd.jacobian(planar1, np.zeros(1), planar1.tool_frame)
    np.testing.assert_allclose(J[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(J[3:, 0], [0.0, 0.0, 1.0], atol=1e-12)


def test_jacobian_two_link_stretched_x_row(planar2):
    J = rbd.jacobian(planar2, np.zeros(2), planar2.tool_frame)
    np.testing.assert_allclose(J[0], 0.0, atol=1e-12)


def test_jacobian_matches_finite_differences(iiwa):
    rng = np.random.default_rng(7)
    for _ in range(5):
        q, _ = rand_state(iiwa, rng)
        J = rbd.jacobian(iiwa, q, iiwa.tool_frame)
        Jfd = oracles.jacobian_fd(
            lambda qq: (lambda pose: (pose.position, pose.rotation))(
                rbd.forward_kinematics(iiwa, qq, iiwa.tool_frame)), q)
        assert np.abs(J - Jfd).max() < 1e-5


def test_jacobian_point_offset(iiwa):
    q = Q_STAR
    point = np.array([0.0, 0.0, 0.1])
    J = rbd.jacobian(iiwa, q, iiwa.tool_frame, point=point)
    T = rbd.link_transforms(iiwa, q)[iiwa.tool_frame]

    def fk(qq):
        Tq = rbd.link_transforms(iiwa, qq)[iiwa.tool_frame]
        return Tq[:3, :3] @ point + Tq[:3, 3], Tq[:3, :3]

    Jfd = oracles.jacobian_fd(fk, q)
    assert np.abs(J - Jfd).max() < 1e-5


def test_jacobian_dot_qd_zero_velocity(iiwa):
    out = rbd.jacobian_dot_qd(iiwa, Q_STAR, np.zeros(7), iiwa.tool_frame)
    np.testing.assert_allclose(out, 0.0, atol=1e-14)


def test_jacobian_dot_qd_centripetal(planar1):
    omega = 2.0
    out = rbd.jacobian_dot_qd(planar1, np.zeros(1), np.array([omega]), planar1.tool_frame)
    np.testing.assert_allclose(out[:3], [-omega**2, 0.0, 0.0], atol=1e-12)


def test_jacobian_dot_qd_matches_finite_differences(iiwa):
    rng = np.random.default_rng(11)
    for _ in range(5):
        q, qd = rand_state(iiwa, rng)
        out = rbd.jacobian_dot_qd(iiwa, q, qd, iiwa.tool_frame)
        h = 1e-7
        Jp = rbd.jacobian(iiwa, q + qd * h, iiwa.tool_frame)
        Jm = rbd.jacobian(iiwa, q - qd * h, iiwa.tool_frame)
        fd = (Jp - Jm) / (2 * h) @ qd
        assert np.abs(out - fd).max() < 1e-4


# ---------------------------------------------------------------------------
# dynamics


def test_mass_matrix_point_mass(planar1):
    M = rbd.mass_matrix(planar1, np.zeros(1))
    np.testing.assert_allclose(M, [[1.0]], atol=1e-9)


def test_mass_matrix_two_link_analytic(planar2):
    q = np.array([0.3, 0.0])
    M = rbd.mass_matrix(planar2, q)
    np.testing.assert_allclose(M, [[5.0, 2.0], [2.0, 1.0]], atol=1e-8)
    q = np.array([0.4, 1.1])
    np.testing.assert_allclose(rbd.mass_matrix(planar2, q), oracles.twolink_mass(q),
                               atol=1e-8)


def test_mass_matrix_equals_rnea_columns(iiwa_dict):
    grav_free = dict(iiwa_dict, gravity=[0.0, 0.0, 0.0])
    model = rbd.model_from_dict(grav_free)
    rng = np.random.default_rng(2)
    q = rng.uniform(-1.5, 1.5, 7)
    M = rbd.mass_matrix(model, q)
    zero = np.zeros(7)
    for j in range(7):
        e = np.zeros(7)
        e[j] = 1.0
        np.testing.assert_allclose(M[:, j],
                                   rbd.inverse_dynamics(model, q, zero, e), atol=1e-9)


def test_bias_forces_zero_velocity(iiwa):
    np.testing.assert_allclose(rbd.bias_forces(iiwa, Q_STAR, np.zeros(7)), 0.0,
                               atol=1e-12)


def test_gravity_forces_zero_gravity(iiwa_dict):
    model = rbd.model_from_dict(dict(iiwa_dict, gravity=[0.0, 0.0, 0.0]))
    np.testing.assert_allclose(rbd.gravity_forces(model, Q_STAR), 0.0, atol=1e-12)


def test_pendulum_gravity_torque(pendulum):
    np.testing.assert_allclose(rbd.gravity_forces(pendulum, np.zeros(1)), [9.81],
                               atol=1e-10)
    q = np.array([0.6])
    np.testing.assert_allclose(rbd.gravity_forces(pendulum, q),
                               [9.81 * np.cos(0.6)], atol=1e-10)


def test_inverse_dynamics_static_is_gravity(iiwa):
    zero = np.zeros(7)
    np.testing.assert_allclose(rbd.inverse_dynamics(iiwa, Q_STAR, zero, zero),
                               rbd.gravity_forces(iiwa, Q_STAR), atol=1e-10)


def test_inverse_dynamics_identity(iiwa):
    rng = np.random.default_rng(5)
    for _ in range(10):
        q, qd = rand_state(iiwa, rng)
        qdd = rng.uniform(-2, 2, 7)
        tau = rbd.inverse_dynamics(iiwa, q, qd, qdd)
        rebuilt = (rbd.mass_matrix(iiwa, q) @ qdd + rbd.bias_forces(iiwa, q, qd)
                   + rbd.gravity_forces(iiwa, q))
        assert np.abs(tau - rebuilt).max() < 1e-9


def test_inverse_dynamics_two_link_lagrangian(planar2):
    rng = np.random.default_rng(6)
    for _ in range(10):
        q = rng.uniform(-1, 1, 2)
        qd = rng.uniform(-1, 1, 2)
        qdd = rng.uniform(-1, 1, 2)
        ours = rbd.inverse_dynamics(planar2, q, qd, qdd)
        assert np.abs(ours - oracles.twolink_inverse_dynamics(q, qd, qdd)).max() < 1e-8


# ---------------------------------------------------------------------------
# task dynamics


def test_task_dynamics_square_full_rank(iiwa):
    rng = np.random.default_rng(9)
    q = rng.uniform(-1, 1, 7)
    J = rng.normal(size=(7, 7))
    bundle = rbd.task_dynamics(iiwa, q, J, epsilon=0.0)
    np.testing.assert_allclose(bundle.Jbar, np.linalg.inv(J), atol=1e-8)
    np.testing.assert_allclose(bundle.N, 0.0, atol=1e-8)


def test_task_dynamics_right_inverse(iiwa):
    rng = np.random.default_rng(10)
    q = rng.uniform(-1, 1, 7)
    J = rng.normal(size=(3, 7))
    bundle = rbd.task_dynamics(iiwa, q, J, epsilon=0.0)
    np.testing.assert_allclose(J @ bundle.Jbar, np.eye(3), atol=1e-8)


def test_task_dynamics_rank_deficient_bounded(iiwa):
    rng = np.random.default_rng(12)
    q = rng.uniform(-1, 1, 7)
    row = rng.normal(size=(1, 7))
    J = np.vstack([row, row])          # duplicate rows: rank 1
    eps = 1e-6
    bundle = rbd.task_dynamics(iiwa, q, J, epsilon=eps)
    assert np.all(np.isfinite(bundle.Lambda))
    assert np.abs(bundle.Lambda).max() <= 1.0 / eps + 1e-6


def test_task_dynamics_projector_properties(iiwa):
    rng = np.random.default_rng(13)
    for _ in range(5):
        q = rng.uniform(-1.5, 1.5, 7)
        J = rbd.jacobian(iiwa, q, iiwa.tool_frame)[:3]
        bundle = rbd.task_dynamics(iiwa, q, J, epsilon=0.0)
        # idempotent
        assert np.abs(bundle.N @ bundle.N - bundle.N).max() < 1e-8
        # null-space torques produce zero task acceleration
        M = rbd.mass_matrix(iiwa, q)
        for _ in range(5):
            tau = rng.normal(size=7) * 30
            acc = J @ np.linalg.solve(M, bundle.N @ tau)
            assert np.linalg.norm(acc) < 1e-8 * max(np.linalg.norm(tau), 1.0)


def test_task_dynamics_rejects_bad_inputs(iiwa):
    with pytest.raises(ValueError):
        rbd.task_dynamics(iiwa, np.zeros(7), np.zeros((8, 7)))
    with pytest.raises(ValueError):
        rbd.task_dynamics(iiwa, np.zeros(7), np.full((2, 7), np.nan))


# ---------------------------------------------------------------------------
# invariants


def test_mass_matrix_spd_random_draws(iiwa):
    rng = np.random.default_rng(42)
    for _ in range(300):
        q = rng.uniform(iiwa.q_min, iiwa.q_max)
        M = rbd.mass_matrix(iiwa, q)
        assert np.abs(M - M.T).max() < 1e-10
        np.linalg.cholesky(M)


def test_passivity_short(iiwa_dict):
    """Free motion with zero gravity conserves kinetic energy (smoke length)."""
    model = rbd.model_from_dict(dict(iiwa_dict, gravity=[0.0, 0.0, 0.0]))
    rng = np.random.default_rng(21)
    state = rbd.JointState(rng.uniform(-1, 1, 7), rng.uniform(-0.5, 0.5, 7))
    zero = np.zeros(7)
    e0 = 0.5 * state.qd @ rbd.mass_matrix(model, state.q) @ state.qd
    for _ in range(2000):
        state = sim.rk4_step(model, state, zero, None, 1e-4)
    e1 = 0.5 * state.qd @ rbd.mass_matrix(model, state.q) @ state.qd
    assert abs(e1 - e0) / e0 < 1e-3


@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
@settings(max_examples=25, deadline=None)
def test_planar_fk_jacobian_consistency(q1, q2):
    model = rbd.model_from_dict(planar_dict(2))
    q = np.array([q1, q2])
    J = rbd.jacobian(model, q, model.tool_frame)

    def fk(qq):
        pose = rbd.forward_kinematics(model, qq, model.tool_frame)
        return pose.position, pose.rotation

    assert np.abs(J - oracles.jacobian_fd(fk, q)).max() < 1e-5


# ---------------------------------------------------------------------------
# model loading


def test_loader_rejects_bad_limits(iiwa_dict):
    bad = {**iiwa_dict, "joints": [dict(j) for j in iiwa_dict["joints"]]}
    bad["joints"][2] = dict(bad["joints"][2], q_min=2.0, q_max=-2.0)
    with pytest.raises(rbd.ModelError, match=r"joints\[2\].*q_min"):
        rbd.model_from_dict(bad, source="m")


def test_loader_rejects_bad_inertia(iiwa_dict):
    bad = {**iiwa_dict, "joints": [dict(j) for j in iiwa_dict["joints"]]}
    link = dict(bad["joints"][0]["link"], inertia=[-1.0, 1.0, 1.0, 0, 0, 0])
    bad["joints"][0] = dict(bad["joints"][0], link=link)
    with pytest.raises(rbd.ModelError, match=r"joints\[0\].link.inertia"):
        rbd.model_from_dict(bad, source="m")


def test_loader_rejects_non_unit_axis(iiwa_dict):
    bad = {**iiwa_dict, "joints": [dict(j) for j in iiwa_dict["joints"]]}
    bad["joints"][1] = dict(bad["joints"][1], axis=[0, 0, 2])
    with pytest.raises(rbd.ModelError, match="unit"):
        rbd.model_from_dict(bad, source="m")


def test_loader_reports_missing_field(iiwa_dict):
    bad = {**iiwa_dict, "joints": [dict(j) for j in iiwa_dict["joints"]]}
    del bad["joints"][4]["axis"]
    with pytest.raises(rbd.ModelError, match=r"joints\[4\].*axis"):
        rbd.model_from_dict(bad, source="m")


def test_model_is_immutable(iiwa):
    with pytest.raises(ValueError):
        iiwa.masses[0] = 5.0
