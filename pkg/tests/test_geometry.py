import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossemb import geometry
from crossemb.errors import DegenerateRotation6D
from crossemb.geometry import Pose


# --- independent oracles -------------------------------------------------

def gram_schmidt_oracle(a, b):
    """Straight-line Gram-Schmidt on the two stacked columns."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c1 = a / np.sqrt(a @ a)
    b2 = b - (b @ c1) * c1
    c2 = b2 / np.sqrt(b2 @ b2)
    c3 = np.array(
        [
            c1[1] * c2[2] - c1[2] * c2[1],
            c1[2] * c2[0] - c1[0] * c2[2],
            c1[0] * c2[1] - c1[1] * c2[0],
        ]
    )
    return np.stack([c1, c2, c3], axis=1)


def random_rotation_oracle(rng):
    """Uniform random rotation from a normalized Gaussian quaternion,
    converted by the textbook formula (independent of the library path)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.array([np.cos(angle / 2), *(np.sin(angle / 2) * axis)])


# --- 6D codec ------------------------------------------------------------

def test_decode_identity():
    R = geometry.decode_rot6d(np.array([1, 0, 0, 0, 1, 0], dtype=float))
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)


def test_decode_scale_invariance():
    R = geometry.decode_rot6d(np.array([2, 0, 0, 0, 3, 0], dtype=float))
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)


def test_decode_oblique_matches_gram_schmidt_oracle():
    r = np.array([1, 1, 0, 0, 1, 0], dtype=float)
    expected = gram_schmidt_oracle(r[:3], r[3:])
    np.testing.assert_allclose(geometry.decode_rot6d(r), expected, atol=1e-12)
    # frozen oracle output for this input
    s = np.sqrt(0.5)
    np.testing.assert_allclose(
        expected,
        np.array([[s, -s, 0.0], [s, s, 0.0], [0.0, 0.0, 1.0]]),
        atol=1e-12,
    )


def test_encode_identity_and_90z():
    np.testing.assert_allclose(
        geometry.encode_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0], atol=1e-12
    )
    Rz = geometry.rotation_about_axis(np.array([0.0, 0, 1]), np.pi / 2)
    np.testing.assert_allclose(geometry.encode_rot6d(Rz), [0, 1, 0, -1, 0, 0], atol=1e-12)


def test_roundtrip_random_rotations():
    rng = np.random.default_rng(7)
    for _ in range(500):
        R = random_rotation_oracle(rng)
        R2 = geometry.decode_rot6d(geometry.encode_rot6d(R))
        assert np.max(np.abs(R2 - R)) <= 1e-9
        assert abs(np.linalg.det(R2) - 1.0) <= 1e-9
        assert np.max(np.abs(R2.T @ R2 - np.eye(3))) <= 1e-9


def test_decode_rejects_degenerate():
    with pytest.raises(DegenerateRotation6D):
        geometry.decode_rot6d(np.array([0, 0, 0, 0, 1, 0], dtype=float))
    with pytest.raises(DegenerateRotation6D):
        geometry.decode_rot6d(np.array([1, 0, 0, 2, 0, 0], dtype=float))
    with pytest.raises(DegenerateRotation6D):
        geometry.decode_rot6d(np.array([1, 0, 0, np.nan, 1, 0]))


def test_projection_idempotence():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = rng.normal(size=6)
        try:
            R1 = geometry.decode_rot6d(r)
        except DegenerateRotation6D:
            continue
        R2 = geometry.decode_rot6d(geometry.encode_rot6d(R1))
        np.testing.assert_allclose(R1, R2, atol=1e-9)


# --- quaternions ---------------------------------------------------------

def test_quat_matrix_identity_and_180x():
    np.testing.assert_allclose(
        geometry.quat_to_matrix(np.array([1.0, 0, 0, 0])), np.eye(3), atol=1e-12
    )
    R = geometry.quat_to_matrix(np.array([0.0, 1.0, 0, 0]))
    np.testing.assert_allclose(R, np.diag([1.0, -1.0, -1.0]), atol=1e-12)
    q = geometry.quat_from_matrix(np.diag([1.0, -1.0, -1.0]))
    np.testing.assert_allclose(q, [0, 1, 0, 0], atol=1e-9)


def test_quat_matrix_roundtrip_many():
    rng = np.random.default_rng(11)
    for _ in range(2000):
        R = random_rotation_oracle(rng)
        R2 = geometry.quat_to_matrix(geometry.quat_from_matrix(R))
        assert np.max(np.abs(R2 - R)) <= 1e-9


def test_quat_canonical_sign():
    q = geometry.quat_normalize(np.array([-1.0, 0.2, 0.3, -0.1]))
    assert q[0] >= 0


# --- slerp ---------------------------------------------------------------

def test_slerp_endpoints():
    rng = np.random.default_rng(5)
    for _ in range(20):
        q0 = geometry.quat_normalize(rng.normal(size=4))
        q1 = geometry.quat_normalize(rng.normal(size=4))
        np.testing.assert_allclose(geometry.slerp(q0, q1, 0.0), q0, atol=1e-9)
        np.testing.assert_allclose(geometry.slerp(q0, q1, 1.0), q1, atol=1e-9)


def test_slerp_half_angle_about_z():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = axis_angle_quat([0, 0, 1], np.pi / 2)
    mid = geometry.slerp(q0, q1, 0.5)
    np.testing.assert_allclose(mid, axis_angle_quat([0, 0, 1], np.pi / 4), atol=1e-12)


def test_slerp_axis_angle_linearity():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = axis_angle_quat([1, 0, 0], np.deg2rad(170.0))
    out = geometry.slerp(q0, q1, 0.25)
    np.testing.assert_allclose(out, axis_angle_quat([1, 0, 0], np.deg2rad(42.5)), atol=1e-12)


def test_slerp_angle_linear_and_unit_norm():
    rng = np.random.default_rng(17)
    for _ in range(200):
        q0 = geometry.quat_normalize(rng.normal(size=4))
        q1 = geometry.quat_normalize(rng.normal(size=4))
        full = geometry.quat_rotation_angle(q0, q1)
        t = rng.random()
        qt = geometry.slerp(q0, q1, t)
        assert abs(np.linalg.norm(qt) - 1.0) <= 1e-9
        if full > 1e-4:
            assert abs(geometry.quat_rotation_angle(q0, qt) - t * full) <= 1e-7


def test_slerp_shortest_path():
    rng = np.random.default_rng(23)
    for _ in range(100):
        q0 = geometry.quat_normalize(rng.normal(size=4))
        q1 = geometry.quat_normalize(rng.normal(size=4))
        assert geometry.quat_rotation_angle(q0, geometry.slerp(q0, q1, 1.0)) <= np.pi + 1e-9


def test_slerp_tiny_arc_falls_back_to_lerp():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = axis_angle_quat([0, 0, 1], 1e-8)
    out = geometry.slerp(q0, q1, 0.5)
    assert abs(np.linalg.norm(out) - 1.0) <= 1e-12


# --- poses ---------------------------------------------------------------

def test_pose_compose_inverse_identity():
    rng = np.random.default_rng(29)
    for _ in range(50):
        p = Pose(random_rotation_oracle(rng), rng.normal(size=3))
        ident = p.compose(p.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, 0, atol=1e-9)


def test_pose_compose_associative():
    rng = np.random.default_rng(31)
    ps = [Pose(random_rotation_oracle(rng), rng.normal(size=3)) for _ in range(3)]
    left = ps[0].compose(ps[1]).compose(ps[2])
    right = ps[0].compose(ps[1].compose(ps[2]))
    np.testing.assert_allclose(left.rotation, right.rotation, atol=1e-12)
    np.testing.assert_allclose(left.translation, right.translation, atol=1e-12)


def test_interpolate_pose_endpoints_and_midpoint():
    p0 = Pose(np.eye(3), np.zeros(3))
    p1 = Pose(np.eye(3), np.array([1.0, 0, 0]))
    at0 = geometry.interpolate_pose(p0, p1, 0.0)
    np.testing.assert_allclose(at0.translation, p0.translation, atol=1e-12)
    mid = geometry.interpolate_pose(p0, p1, 0.5)
    np.testing.assert_allclose(mid.translation, [0.5, 0, 0], atol=1e-12)


def test_interpolate_pose_matches_per_component_oracle():
    rng = np.random.default_rng(37)
    p0 = Pose(random_rotation_oracle(rng), rng.normal(size=3))
    p1 = Pose(random_rotation_oracle(rng), rng.normal(size=3))
    t = 0.75
    out = geometry.interpolate_pose(p0, p1, t)
    # oracle: translation lerp + quaternion slerp, assembled independently
    expect_t = (1 - t) * p0.translation + t * p1.translation
    q = geometry.slerp(
        geometry.quat_from_matrix(p0.rotation), geometry.quat_from_matrix(p1.rotation), t
    )
    np.testing.assert_allclose(out.translation, expect_t, atol=1e-12)
    np.testing.assert_allclose(out.rotation, geometry.quat_to_matrix(q), atol=1e-12)


def test_rotation_log_small_and_pi():
    w = geometry.rotation_log(geometry.rotation_about_axis(np.array([0.0, 0, 1]), 0.3))
    np.testing.assert_allclose(w, [0, 0, 0.3], atol=1e-12)
    w = geometry.rotation_log(geometry.rotation_about_axis(np.array([1.0, 0, 0]), np.pi))
    np.testing.assert_allclose(np.abs(w), [np.pi, 0, 0], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_decode_always_orthonormal_or_degenerate(values):
    r = np.array(values)
    try:
        R = geometry.decode_rot6d(r)
    except DegenerateRotation6D:
        return
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-9
    assert abs(np.linalg.det(R) - 1.0) <= 1e-9
    assert not np.any(np.isnan(R))
