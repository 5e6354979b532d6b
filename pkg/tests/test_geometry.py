import numpy as np
import pytest

from nfpose.errors import AngleNearPi
from nfpose.geometry import (
    AbsolutePose,
    CameraIntrinsics,
    CameraMotion,
    ImagePoint,
    Trajectory,
    euler_xyz_to_rotation,
    integrate_motions,
    interaction_matrices,
    normalized_to_pixel,
    pixel_to_normalized,
    relative_motion,
    rotation_to_euler_xyz,
    skew,
    so3_exp,
    so3_log,
    unskew,
    validate_rotation,
)


def random_rotation(rng):
    w = rng.normal(size=3)
    return so3_exp(w / max(np.linalg.norm(w), 1e-12) * rng.uniform(0.0, 3.0))


def test_skew_layout():
    M = skew(np.array([1.0, 2.0, 3.0]))
    expected = np.array([[0, -3, 2], [3, 0, -1], [-2, 1, 0]], dtype=float)
    assert np.array_equal(M, expected)


def test_skew_unskew_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.normal(size=3)
        assert np.allclose(unskew(skew(w)), w, atol=0)


def test_skew_is_cross_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(skew(a) @ b, np.cross(a, b), atol=1e-15)


def test_exp_identity_at_zero():
    assert np.allclose(so3_exp(np.zeros(3)), np.eye(3), atol=0)


def test_exp_log_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        w = rng.normal(size=3)
        w = w / np.linalg.norm(w) * rng.uniform(1e-10, 3.0)
        R = so3_exp(w)
        validate_rotation(R)
        assert np.allclose(so3_log(R), w, atol=1e-9)


def test_exp_small_angle_series():
    w = np.array([1e-10, -2e-10, 5e-11])
    R = so3_exp(w)
    assert np.allclose(R, np.eye(3) + skew(w), atol=1e-18)
    assert np.allclose(so3_log(R), w, atol=1e-18, rtol=0)


def test_log_rejects_angle_near_pi():
    R = so3_exp(np.array([np.pi - 1e-9, 0.0, 0.0]))
    with pytest.raises(AngleNearPi):
        so3_log(R)


def test_validate_rotation_rejects_non_orthonormal():
    with pytest.raises(Exception):
        validate_rotation(np.eye(3) + 1e-6)


def test_interaction_matrices_at_origin():
    A, B = interaction_matrices(ImagePoint(0.0, 0.0))
    assert np.array_equal(A, np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))
    assert np.array_equal(B, np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]))


def test_interaction_matrices_at_one_one():
    A, B = interaction_matrices(ImagePoint(1.0, 1.0))
    assert np.array_equal(A, np.array([[-1.0, 0.0, 1.0], [0.0, -1.0, 1.0]]))
    assert np.array_equal(B, np.array([[1.0, -2.0, 1.0], [2.0, -1.0, -1.0]]))


def test_image_point_rejects_out_of_fov():
    with pytest.raises(Exception):
        ImagePoint(1.6, 0.0)
    with pytest.raises(Exception):
        ImagePoint(0.0, np.nan)


def test_camera_motion_requires_finite():
    with pytest.raises(Exception):
        CameraMotion(V=[np.inf, 0, 0], Omega=[0, 0, 0])


def test_pixel_normalized_round_trip():
    K = CameraIntrinsics(fx=520.9, fy=521.0, cx=325.1, cy=249.7)
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = rng.uniform(-1.0, 1.0, size=2)
        u, v = normalized_to_pixel(ImagePoint(p[0], p[1]), K)
        q = pixel_to_normalized(u, v, K)
        assert abs(q.x - p[0]) < 1e-12 and abs(q.y - p[1]) < 1e-12


def test_euler_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(50):
        angles = rng.uniform(-1.2, 1.2, size=3)
        R = euler_xyz_to_rotation(*angles)
        validate_rotation(R)
        back = rotation_to_euler_xyz(R)
        assert np.allclose(back, angles, atol=1e-10)


def test_trajectory_requires_increasing_timestamps():
    p0 = AbsolutePose(rotation=np.eye(3), translation=np.zeros(3), timestamp=0.0)
    p1 = AbsolutePose(rotation=np.eye(3), translation=np.ones(3), timestamp=0.0)
    with pytest.raises(Exception):
        Trajectory(poses=[p0, p1])


def test_pose_matrix_blocks():
    R = so3_exp(np.array([0.1, -0.2, 0.3]))
    t = np.array([1.0, 2.0, 3.0])
    M = AbsolutePose(rotation=R, translation=t, timestamp=0.0).matrix()
    assert np.array_equal(M[:3, :3], R)
    assert np.array_equal(M[:3, 3], t)
    assert np.array_equal(M[3], np.array([0.0, 0.0, 0.0, 1.0]))


def test_relative_motion_of_integrated_motions():
    # integrate then difference: must reproduce the per-frame (V, Omega)
    rng = np.random.default_rng(5)
    for _ in range(20):
        motions = [
            CameraMotion(V=rng.normal(size=3), Omega=rng.normal(size=3) * 0.2)
            for _ in range(4)
        ]
        dt = rng.uniform(0.05, 2.0)
        traj = integrate_motions(motions, dt=dt)
        assert len(traj) == 5
        for k, m in enumerate(motions):
            rec = relative_motion(traj.poses[k], traj.poses[k + 1])
            assert np.allclose(rec.V, m.V, atol=1e-9)
            assert np.allclose(rec.Omega, m.Omega, atol=1e-9)


def test_relative_motion_identity_for_static_pair():
    p0 = AbsolutePose(rotation=np.eye(3), translation=np.zeros(3), timestamp=0.0)
    p1 = AbsolutePose(rotation=np.eye(3), translation=np.zeros(3), timestamp=1.0)
    m = relative_motion(p0, p1)
    assert np.array_equal(m.V, np.zeros(3))
    assert np.array_equal(m.Omega, np.zeros(3))


def test_relative_motion_scales_with_dt():
    R = so3_exp(np.array([0.0, 0.2, 0.0]))
    p0 = AbsolutePose(rotation=np.eye(3), translation=np.zeros(3), timestamp=0.0)
    p1 = AbsolutePose(rotation=R, translation=np.array([1.0, 0.0, 0.0]), timestamp=2.0)
    m = relative_motion(p0, p1)
    assert np.allclose(m.V, [0.5, 0.0, 0.0], atol=1e-12)
    assert np.allclose(m.Omega, [0.0, 0.1, 0.0], atol=1e-12)


def test_integrate_motions_start_pose():
    R0 = so3_exp(np.array([0.3, 0.1, -0.2]))
    start = AbsolutePose(rotation=R0, translation=np.array([5.0, 6.0, 7.0]), timestamp=10.0)
    traj = integrate_motions([CameraMotion(V=[1, 0, 0], Omega=[0, 0, 0])], dt=0.5, start=start)
    assert traj.poses[0].timestamp == 10.0
    assert np.allclose(traj.poses[1].translation, [5.5, 6.0, 7.0], atol=1e-12)
    assert np.allclose(traj.poses[1].rotation, R0, atol=1e-12)
