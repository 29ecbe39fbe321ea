import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowplan.kinematics import ArmModel, Ccb, ball_jacobian, ball_positions, make_arm

angles = st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3)


def two_link_tip():
    return ArmModel((1.0, 1.0), (Ccb(1, 1.0, 0.05),))


def fk_oracle(arm, q):
    """Chain product of unit complex numbers."""
    x, y, th = arm.base_pose
    origin = complex(x, y)
    rot = np.exp(1j * th)
    joints = [origin]
    for length, qi in zip(arm.link_lengths, q):
        rot = rot * np.exp(1j * qi)
        joints.append(joints[-1] + length * rot)
    out = []
    for b in arm.balls:
        a, c = joints[b.link_index], joints[b.link_index + 1]
        p = a + b.offset_fraction * (c - a)
        out.append((p.real, p.imag))
    return np.array(out)


def fd_jacobian(arm, q, i, h=1e-7):
    J = np.zeros((2, arm.dof))
    for j in range(arm.dof):
        e = np.zeros(arm.dof)
        e[j] = h
        J[:, j] = (ball_positions(arm, q + e)[i] - ball_positions(arm, q - e)[i]) / (2 * h)
    return J


def test_straight_arm_tip():
    np.testing.assert_allclose(ball_positions(two_link_tip(), [0.0, 0.0])[0], [2.0, 0.0], atol=1e-15)


def test_rotated_arm_tip():
    np.testing.assert_allclose(ball_positions(two_link_tip(), [np.pi / 2, 0.0])[0], [0.0, 2.0], atol=1e-12)


def test_fk_matches_complex_oracle():
    rng = np.random.default_rng(3)
    arm = make_arm([0.7, 0.5, 0.3], fractions=(0.5, 1.0), radius=0.05, base_pose=(0.2, -0.1, 0.4))
    assert arm.n_balls == 6
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        np.testing.assert_allclose(ball_positions(arm, q), fk_oracle(arm, q), atol=1e-12)


def test_tip_jacobian_at_zero():
    J = ball_jacobian(two_link_tip(), [0.0, 0.0], 0)
    np.testing.assert_allclose(J, [[0.0, 0.0], [2.0, 1.0]], atol=1e-12)
    np.testing.assert_allclose(J, fd_jacobian(two_link_tip(), np.zeros(2), 0), atol=1e-7)


def test_non_actuating_columns_are_zero():
    arm = make_arm([0.5, 0.4, 0.3], fractions=(0.5,))
    J = ball_jacobian(arm, [0.3, -0.2, 1.0], 0)
    assert np.all(J[:, 1:] == 0.0)


@settings(max_examples=40, deadline=None)
@given(angles)
def test_jacobian_matches_fd(q):
    arm = make_arm([0.5, 0.4, 0.3], fractions=(0.25, 0.5, 1.0))
    q = np.array(q)
    for i in range(arm.n_balls):
        assert np.max(np.abs(ball_jacobian(arm, q, i) - fd_jacobian(arm, q, i))) < 1e-6


@settings(max_examples=40, deadline=None)
@given(angles, st.floats(-np.pi, np.pi))
def test_base_rotation_equivariance(q, alpha):
    base = make_arm([0.5, 0.4, 0.3], base_pose=(0.3, -0.2, 0.0))
    turned = make_arm([0.5, 0.4, 0.3], base_pose=(0.3, -0.2, alpha))
    c, s = np.cos(alpha), np.sin(alpha)
    R = np.array([[c, -s], [s, c]])
    origin = np.array([0.3, -0.2])
    expect = (ball_positions(base, q) - origin) @ R.T + origin
    np.testing.assert_allclose(ball_positions(turned, q), expect, atol=1e-12)


def test_ball_order_is_base_to_tip():
    arm = make_arm([0.5, 0.4], fractions=(0.0, 0.5, 1.0))
    keys = [(b.link_index, b.offset_fraction) for b in arm.balls]
    assert keys == sorted(keys)
    d = np.linalg.norm(ball_positions(arm, [0.0, 0.0]), axis=1)
    assert np.all(np.diff(d) >= 0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        ball_positions(two_link_tip(), [0.0, 0.0, 0.0])


def test_bad_ball_index():
    with pytest.raises((ValueError, IndexError)):
        ball_jacobian(two_link_tip(), [0.0, 0.0], 5)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(link_lengths=(), balls=(Ccb(0, 0.5, 0.1),)),
        dict(link_lengths=(1.0, -1.0), balls=(Ccb(0, 0.5, 0.1),)),
        dict(link_lengths=(1.0,), balls=(Ccb(2, 0.5, 0.1),)),
    ],
)
def test_invalid_arm(kwargs):
    with pytest.raises(ValueError):
        ArmModel(**kwargs)


def test_invalid_ccb():
    with pytest.raises(ValueError):
        Ccb(0, 1.5, 0.1)
    with pytest.raises(ValueError):
        Ccb(0, 0.5, 0.0)
