import json
import logging
import math

import numpy as np
import pytest

from nfpose.cheirality import rho
from nfpose.datasets import (
    ScenarioConfig,
    generate_scenario,
    load_scenario_config,
    parse_kitti_poses,
    parse_tum_trajectory,
    save_scenario_config,
    serialize_kitti_poses,
    serialize_tum_trajectory,
)
from nfpose.errors import (
    InvalidConfig,
    MalformedLine,
    NonRotationMatrix,
    NonUnitQuaternion,
)
from nfpose.flowfield import motion_coefficients
from nfpose.geometry import CameraMotion, euler_xyz_to_rotation, relative_motion


# ---------------------------------------------------------------------------
# scenario config


def test_config_validation():
    with pytest.raises(InvalidConfig):
        ScenarioConfig(sample_count=5)
    with pytest.raises(InvalidConfig):
        ScenarioConfig(depth_range=(0.0, 10.0))
    with pytest.raises(InvalidConfig):
        ScenarioConfig(depth_range=(10.0, 1.0))
    with pytest.raises(InvalidConfig):
        ScenarioConfig(noise_pct=-1.0)
    with pytest.raises(InvalidConfig):
        ScenarioConfig(gradient_mode="banded")
    with pytest.raises(InvalidConfig):
        ScenarioConfig(dt=0.0)
    with pytest.raises(InvalidConfig):
        ScenarioConfig(
            frame_count=2,
            motion=[CameraMotion(V=[0, 0, 1], Omega=[0, 0, 0])],
        )


def test_config_json_roundtrip(tmp_path):
    cfg = ScenarioConfig(
        seed=11,
        sample_count=64,
        depth_range=(2.0, 9.0),
        motion=[
            CameraMotion(V=[0.1, 0.0, 1.0], Omega=[0.01, 0.0, 0.0]),
            CameraMotion(V=[0.0, 0.2, 0.9], Omega=[0.0, -0.02, 0.0]),
        ],
        frame_count=2,
        noise_pct=3.5,
        gradient_mode="axis-biased",
        gradient_axis_ratio=4.0,
        gradient_axis_angle=0.7,
        fov=0.5,
        dt=0.25,
    )
    path = tmp_path / "cfg.json"
    save_scenario_config(cfg, str(path))
    back = load_scenario_config(str(path))
    assert back.seed == cfg.seed
    assert back.sample_count == cfg.sample_count
    assert back.depth_range == cfg.depth_range
    assert back.noise_pct == cfg.noise_pct
    assert back.gradient_mode == cfg.gradient_mode
    assert back.dt == cfg.dt
    for m0, m1 in zip(cfg.motions(), back.motions()):
        assert np.allclose(m0.V, m1.V, atol=0)
        assert np.allclose(m0.Omega, m1.Omega, atol=0)


def test_config_rejects_unknown_field(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 1, "samples": 10}), encoding="utf-8")
    with pytest.raises(InvalidConfig):
        load_scenario_config(str(path))


def test_config_rejects_malformed_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(InvalidConfig):
        load_scenario_config(str(path))
    with pytest.raises(InvalidConfig):
        load_scenario_config(str(tmp_path / "missing.json"))


# ---------------------------------------------------------------------------
# timestamp + quaternion trajectory format


def test_tum_identity_line():
    traj = parse_tum_trajectory("0.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n")
    assert len(traj) == 2
    p = traj.poses[0]
    assert p.timestamp == 0.0
    assert np.allclose(p.rotation, np.eye(3), atol=0)
    assert np.allclose(p.translation, np.zeros(3), atol=0)


def test_tum_translation_line():
    traj = parse_tum_trajectory("0.0 1 2 3 0 0 0 1")
    p = traj.poses[0]
    assert np.allclose(p.translation, [1.0, 2.0, 3.0], atol=0)
    assert np.allclose(p.rotation, np.eye(3), atol=0)


def test_tum_known_quaternion():
    # qz = qw = 1/sqrt(2) is a 90 degree z-rotation
    s = 1.0 / math.sqrt(2.0)
    traj = parse_tum_trajectory(f"0.5 0 0 0 0 0 {s:.17g} {s:.17g}")
    want = euler_xyz_to_rotation(0.0, 0.0, math.pi / 2.0)
    assert np.allclose(traj.poses[0].rotation, want, atol=1e-12)


def test_tum_comments_and_sorting():
    text = "# a comment\n2.0 1 0 0 0 0 0 1\n\n1.0 0 0 0 0 0 0 1  # trailing\n"
    traj = parse_tum_trajectory(text)
    assert [p.timestamp for p in traj.poses] == [1.0, 2.0]


def test_tum_malformed_line_number():
    with pytest.raises(MalformedLine) as exc:
        parse_tum_trajectory("0.0 0 0 0 0 0 0 1\n1.0 0 0 0\n")
    assert exc.value.line_no == 2
    with pytest.raises(MalformedLine):
        parse_tum_trajectory("0.0 0 0 zero 0 0 0 1")
    with pytest.raises(MalformedLine):
        parse_tum_trajectory("# only comments\n")


def test_tum_non_unit_quaternion():
    with pytest.raises(NonUnitQuaternion) as exc:
        parse_tum_trajectory("0.0 0 0 0 0 0 0 2")
    assert exc.value.line_no == 1
    # within the 1e-3 tolerance the quaternion is renormalized silently
    traj = parse_tum_trajectory("0.0 0 0 0 0 0 0 1.0005")
    assert np.allclose(traj.poses[0].rotation, np.eye(3), atol=1e-12)


def test_tum_serialize_roundtrip():
    rng = np.random.default_rng(0)
    poses_text = []
    for k in range(10):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        t = rng.normal(size=3)
        poses_text.append(
            f"{float(k)} {t[0]} {t[1]} {t[2]} {q[0]} {q[1]} {q[2]} {q[3]}"
        )
    traj = parse_tum_trajectory("\n".join(poses_text))
    text = serialize_tum_trajectory(traj)
    assert text.startswith("#")
    back = parse_tum_trajectory(text)
    for p, q in zip(traj.poses, back.poses):
        assert abs(p.timestamp - q.timestamp) < 1e-12
        assert np.allclose(p.translation, q.translation, atol=1e-12)
        assert np.allclose(p.rotation, q.rotation, atol=1e-12)


def test_tum_serialized_qw_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        traj = parse_tum_trajectory(f"0.0 0 0 0 {q[0]} {q[1]} {q[2]} {q[3]}")
        line = serialize_tum_trajectory(traj).splitlines()[1]
        assert float(line.split()[-1]) >= 0.0


# ---------------------------------------------------------------------------
# row-major 3x4 pose format


def test_kitti_identity_line():
    traj = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n")
    p = traj.poses[0]
    assert np.allclose(p.rotation, np.eye(3), atol=0)
    assert np.allclose(p.translation, np.zeros(3), atol=0)
    assert p.timestamp == 0.0


def test_kitti_translation_and_timestamps():
    text = "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 5\n"
    traj = parse_kitti_poses(text, frame_dt=0.1)
    assert np.allclose(traj.poses[1].translation, [0.0, 0.0, 5.0], atol=0)
    assert abs(traj.poses[1].timestamp - 0.1) < 1e-15


def test_kitti_serialize_roundtrip():
    rng = np.random.default_rng(2)
    lines = []
    for _ in range(8):
        R = euler_xyz_to_rotation(*rng.uniform(-1, 1, size=3))
        T = rng.normal(size=3)
        M = np.hstack([R, T.reshape(3, 1)])
        lines.append(" ".join(format(v, ".17g") for v in M.reshape(-1)))
    traj = parse_kitti_poses("\n".join(lines))
    back = parse_kitti_poses(serialize_kitti_poses(traj))
    for p, q in zip(traj.poses, back.poses):
        assert np.allclose(p.rotation, q.rotation, atol=1e-12)
        assert np.allclose(p.translation, q.translation, atol=1e-12)


def test_kitti_rejects_non_rotation():
    # determinant -1 block (a reflection) must be rejected
    with pytest.raises(NonRotationMatrix) as exc:
        parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 -1 0")
    assert exc.value.line_no == 1
    with pytest.raises(MalformedLine):
        parse_kitti_poses("1 0 0 0 0 1\n")


def test_kitti_reorthonormalizes_drifted_rotation(caplog):
    R = euler_xyz_to_rotation(0.2, -0.1, 0.4)
    drifted = R + 1e-4 * np.ones((3, 3))
    M = np.hstack([drifted, np.zeros((3, 1))])
    line = " ".join(format(v, ".17g") for v in M.reshape(-1))
    with caplog.at_level(logging.WARNING, logger="nfpose.datasets"):
        traj = parse_kitti_poses(line)
    assert any("re-orthonormal" in rec.message for rec in caplog.records)
    got = traj.poses[0].rotation
    assert np.linalg.norm(got.T @ got - np.eye(3)) < 1e-12
    assert np.linalg.norm(got - R) < 1e-3


# ---------------------------------------------------------------------------
# synthetic scenarios


def test_scenario_deterministic():
    cfg = ScenarioConfig(seed=3, sample_count=50, noise_pct=2.0)
    fa, ta, da = generate_scenario(cfg)
    fb, tb, db = generate_scenario(cfg)
    pa, ga, na, wa = fa[0].arrays()
    pb, gb, nb, wb = fb[0].arrays()
    assert np.array_equal(pa, pb)
    assert np.array_equal(ga, gb)
    assert np.array_equal(na, nb)
    assert np.array_equal(da[0].Z, db[0].Z)
    assert np.array_equal(ta.translations(), tb.translations())


def test_scenario_exact_model_when_noiseless():
    motion = CameraMotion(V=[0.2, -0.1, 1.0], Omega=[0.02, 0.01, -0.03])
    cfg = ScenarioConfig(seed=4, sample_count=100, motion=motion)
    fields, _, depths = generate_scenario(cfg)
    pts, g, n, _ = fields[0].arrays()
    a, b = motion_coefficients(pts, g)
    model = (a @ motion.V) / depths[0].Z + b @ motion.Omega
    assert np.allclose(n, model, atol=1e-14)


def test_scenario_cheirality_holds_at_truth():
    motion = CameraMotion(V=[0.1, 0.3, 0.9], Omega=[0.01, -0.02, 0.03])
    cfg = ScenarioConfig(seed=5, sample_count=200, motion=motion)
    fields, _, _ = generate_scenario(cfg)
    for s in fields[0].samples:
        assert rho(s, motion) >= 0.0


def test_scenario_axis_biased_gradients():
    cfg = ScenarioConfig(
        seed=6,
        sample_count=2000,
        gradient_mode="axis-biased",
        gradient_axis_ratio=10.0,
        gradient_axis_angle=0.0,
    )
    fields, _, _ = generate_scenario(cfg)
    _, g, _, _ = fields[0].arrays()
    # fold both signs onto [0, pi/2] distance from the x axis
    ang = np.abs(np.arctan2(g[:, 1], g[:, 0]))
    ang = np.minimum(ang, np.pi - ang)
    frac = float(np.mean(ang <= np.pi / 12.0 + 1e-12))
    # odds 10:1 puts 10/11 of samples in the axis lobe plus uniform spillover
    assert frac >= 0.85


def test_scenario_trajectory_matches_motions():
    motions = [
        CameraMotion(V=[0.1, 0.0, 1.0], Omega=[0.02, 0.0, 0.01]),
        CameraMotion(V=[0.0, -0.2, 0.8], Omega=[0.0, 0.03, 0.0]),
        CameraMotion(V=[0.3, 0.1, 0.5], Omega=[-0.01, 0.0, 0.02]),
    ]
    cfg = ScenarioConfig(seed=7, sample_count=30, motion=motions, frame_count=3, dt=0.5)
    fields, traj, _ = generate_scenario(cfg)
    assert len(fields) == 3
    assert len(traj) == 4
    for k, m in enumerate(motions):
        rel = relative_motion(traj.poses[k], traj.poses[k + 1])
        assert np.allclose(rel.V, m.V, atol=1e-9)
        assert np.allclose(rel.Omega, m.Omega, atol=1e-9)


def test_scenario_noise_respects_bound():
    motion = CameraMotion(V=[0.0, 0.0, 1.0], Omega=[0.0, 0.0, 0.0])
    base = ScenarioConfig(seed=8, sample_count=100, motion=motion)
    noisy = ScenarioConfig(seed=8, sample_count=100, motion=motion, noise_pct=10.0)
    f0, _, _ = generate_scenario(base)
    f1, _, _ = generate_scenario(noisy)
    _, _, n0, _ = f0[0].arrays()
    _, _, n1, _ = f1[0].arrays()
    bound = 0.10 * float(np.mean(np.abs(n0)))
    assert np.all(np.abs(n1 - n0) <= bound + 1e-15)
    assert np.any(n1 != n0)
