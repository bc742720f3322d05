import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspfield.geometry import WristPose, rot2
from graspfield.hand import HandModel, N_JOINTS, forward_kinematics


@pytest.fixture
def hand():
    return HandModel()


def test_zero_joints_extend_straight(hand):
    fk = forward_kinematics(hand, WristPose(0, 0, 0), np.zeros(N_JOINTS))
    for f in range(3):
        attach = hand.attach[f]
        tip = fk.fingertips[f]
        # straight along +x from the attachment
        assert tip[1] == pytest.approx(attach[1], abs=1e-12)
        assert tip[0] - attach[0] == pytest.approx(hand.link_len[f].sum(), abs=1e-12)


def test_translation_equivariance(hand):
    q = np.array([0.3, 0.7, 1.1, 0.2, 0.5, 0.9])
    fk0 = forward_kinematics(hand, WristPose(0, 0, 0.4), q)
    fk1 = forward_kinematics(hand, WristPose(1.0, 0.0, 0.4), q)
    assert np.allclose(fk1.segments, fk0.segments + np.array([1.0, 0.0]), atol=1e-12)
    assert np.allclose(fk1.palm, fk0.palm + np.array([1.0, 0.0]), atol=1e-12)


def test_single_joint_right_angle(hand):
    # finger 0 (curl side +1, toward -y): proximal at pi/2 points straight down
    q = np.zeros(N_JOINTS)
    q[0] = math.pi / 2
    fk = forward_kinematics(hand, WristPose(0, 0, 0), q)
    p = hand.attach[0]
    j1_expected = p + hand.link_len[0, 0] * np.array([math.cos(-math.pi / 2),
                                                      math.sin(-math.pi / 2)])
    assert np.allclose(fk.segments[0, 0, 1], j1_expected, atol=1e-12)
    # distal continues in the same direction (q1 = 0)
    tip_expected = j1_expected + hand.link_len[0, 1] * np.array([0.0, -1.0])
    assert np.allclose(fk.fingertips[0], tip_expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_rigid_motion_equivariance(dtheta, dx, dy):
    hand = HandModel()
    q = np.array([0.2, 0.4, 0.6, 0.8, 1.0, 1.2])
    base = WristPose(0.1, 0.2, 0.3)
    fk0 = forward_kinematics(hand, base, q)
    R = rot2(dtheta)
    moved = WristPose(*(R @ base.position + [dx, dy]), base.theta + dtheta)
    fk1 = forward_kinematics(hand, moved, q)
    expect = fk0.segments @ R.T + np.array([dx, dy])
    assert np.allclose(fk1.segments, expect, atol=1e-9)


def test_limits_enforced(hand):
    q = np.zeros(N_JOINTS)
    q[2] = 2.5
    with pytest.raises(ValueError, match="limits"):
        forward_kinematics(hand, WristPose(0, 0, 0), q)


def test_joint_normalization_bijection(hand):
    rng = np.random.default_rng(1)
    q = rng.uniform(hand.lo, hand.hi)
    n = hand.normalize_joints(q)
    assert np.all(n >= -1) and np.all(n <= 1)
    assert np.allclose(hand.denormalize_joints(n), q, atol=1e-12)
    assert np.allclose(hand.normalize_joints(hand.lo), -1)
    assert np.allclose(hand.normalize_joints(hand.hi), 1)
