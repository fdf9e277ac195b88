import math

import numpy as np
import pytest

from evcalib.core import random_rotation, rotz
from evcalib.heading import CameraIntrinsics
from evcalib.synth import (
    Shape,
    SimConfig,
    command_speed,
    corrupt_and_offset,
    generate_event_scene,
    generate_velocity_profile,
    heading_angle,
    make_point_cloud,
    profile_velocity,
    simulate,
)

INTR = CameraIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=240.0, width=640, height=480)


# ---------------------------------------------------------------------------
# command profiles


def test_arc_initial_direction_is_tangent():
    cfg = SimConfig(shape=Shape.ARC, radius=10.0, rate=0.1)
    v = profile_velocity(cfg, np.array([0.0]))[0]
    assert np.allclose(v / np.linalg.norm(v), [0.0, 1.0, 0.0], atol=1e-12)


def test_arc_speed_is_radius_times_rate():
    cfg = SimConfig(shape=Shape.ARC, radius=10.0, rate=0.1)
    assert command_speed(cfg) == pytest.approx(1.0)


def test_polyline_midsegment_direction_constant():
    cfg = SimConfig(shape=Shape.POLYLINE, turn=math.pi / 2, segment=5.0, speed=0.5)
    # segment period 10 s: queries inside the second segment share one angle
    angles = heading_angle(cfg, np.array([11.0, 14.0, 19.0]))
    assert np.allclose(angles, math.pi / 2)


def test_polyline_heading_steps_by_turn():
    cfg = SimConfig(shape=Shape.POLYLINE, turn=math.radians(60.0), segment=5.0, speed=0.5)
    angles = heading_angle(cfg, np.array([5.0, 15.0, 25.0]))
    assert np.allclose(np.diff(angles), math.radians(60.0))


def test_finger_fan_has_distinct_outbound_headings():
    cfg = SimConfig(shape=Shape.FINGER, fingers=3, finger_length=5.0, speed=0.5)
    t_leg = cfg.finger_length / cfg.speed
    outbound_angles = heading_angle(cfg, np.arange(3) * 2 * t_leg + 0.5 * t_leg)
    assert len(np.unique(np.round(outbound_angles, 9))) == 3
    assert np.allclose(np.diff(outbound_angles), cfg.finger_spread)


def test_finger_return_leg_reverses():
    cfg = SimConfig(shape=Shape.FINGER, fingers=2, finger_length=5.0, speed=0.5)
    t_leg = cfg.finger_length / cfg.speed
    out = heading_angle(cfg, np.array([0.5 * t_leg]))[0]
    back = heading_angle(cfg, np.array([1.5 * t_leg]))[0]
    assert back - out == pytest.approx(math.pi)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(shape=Shape.ARC, rate=0.0)
    with pytest.raises(ValueError):
        SimConfig(shape=Shape.POLYLINE, segment=-1.0)
    with pytest.raises(ValueError):
        SimConfig(shape=Shape.FINGER, fingers=0)
    with pytest.raises(ValueError):
        SimConfig(pose_dt=0.0)


def test_camera_clock_defaults_incommensurate():
    cfg = SimConfig(dt=0.01)
    assert cfg.dt_e == pytest.approx(0.0131)


# ---------------------------------------------------------------------------
# corruption


def test_zero_noise_zero_offset_is_exact_rotation():
    r_gt = random_rotation(np.random.default_rng(4))
    cfg = SimConfig(shape=Shape.POLYLINE, duration=20.0, r_gt=r_gt)
    ds = simulate(cfg)
    expected = profile_velocity(cfg, ds.v_e_noisy.t)
    expected /= np.linalg.norm(expected, axis=1)[:, None]
    assert np.allclose(ds.v_e_noisy.directions, expected @ r_gt.m, atol=1e-12)
    assert np.all(np.isnan(ds.v_e_noisy.speeds))
    assert np.allclose(ds.v_o_noisy.speeds, 0.5, atol=1e-12)


def test_reported_camera_times_lag_by_offset():
    cfg = SimConfig(shape=Shape.POLYLINE, duration=10.0, t_offset=0.2)
    ds = simulate(cfg)
    n = len(ds.v_e_noisy)
    assert np.allclose(ds.v_e_noisy.t, np.arange(n) * cfg.dt_e - 0.2)


def test_noise_seeds_are_reproducible():
    cfg = SimConfig(duration=5.0, sigma_o=0.02, sigma_e=0.05, seed=42)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.v_o_noisy.directions, b.v_o_noisy.directions)
    assert np.array_equal(a.v_e_noisy.directions, b.v_e_noisy.directions)


def test_drift_variance_matches_random_walk():
    # dead reckoning of iid velocity noise: E|p_err|^2 = 2 N (sigma dt)^2
    sigma, dt, duration = 0.02, 0.01, 60.0
    sq = []
    for seed in range(40):
        cfg = SimConfig(
            shape=Shape.ARC, radius=10.0, rate=0.05, duration=duration,
            sigma_o=sigma, seed=seed,
        )
        ds = simulate(cfg)
        true_end = np.sum(
            profile_velocity(cfg, ds.v_o_noisy.t[:-1]) * dt, axis=0
        )
        sq.append(np.sum((ds.traj_o[-1].position - true_end) ** 2))
    n_steps = int(duration / dt)
    expected = 2 * n_steps * (sigma * dt) ** 2
    assert expected * 0.5 < np.mean(sq) < expected * 2.0


def test_drift_grows_with_duration():
    def terminal_drift(duration):
        out = []
        for seed in range(15):
            cfg = SimConfig(
                shape=Shape.ARC, radius=10.0, rate=0.05, duration=duration,
                sigma_o=0.02, seed=seed,
            )
            ds = simulate(cfg)
            true_end = np.sum(profile_velocity(cfg, ds.v_o_noisy.t[:-1]) * cfg.dt, axis=0)
            out.append(np.linalg.norm(ds.traj_o[-1].position - true_end))
        return np.mean(out)

    assert terminal_drift(60.0) > terminal_drift(15.0)


def test_injected_offset_shifts_corner_times():
    # independent check: the heading step of the polyline is a time landmark
    # visible in both streams, displaced by exactly the injected offset
    r_gt = random_rotation(np.random.default_rng(9))
    cfg = SimConfig(
        shape=Shape.POLYLINE, turn=math.pi / 2, segment=5.0, speed=0.5,
        duration=20.0, t_offset=0.2, r_gt=r_gt,
    )
    ds = simulate(cfg)

    def first_step(t, dirs):
        jump = np.linalg.norm(np.diff(dirs, axis=0), axis=1)
        return float(t[1 + int(np.argmax(jump > 0.5))])

    corner_body = first_step(ds.v_o_noisy.t, ds.v_o_noisy.directions)
    corner_cam = first_step(ds.v_e_noisy.t, ds.v_e_noisy.directions)
    assert corner_body - corner_cam == pytest.approx(0.2, abs=cfg.dt_e + cfg.dt)


def test_pose_orientations_track_commanded_heading():
    cfg = SimConfig(shape=Shape.ARC, radius=10.0, rate=0.1, duration=10.0, pose_dt=0.5)
    ds = simulate(cfg)
    for pose in ds.traj_o[:5]:
        psi = heading_angle(cfg, np.array([pose.t]))[0]
        assert np.allclose(pose.rotation.m, rotz(psi), atol=1e-12)


def test_pose_subsampling_interval():
    cfg = SimConfig(duration=10.0, pose_dt=0.5)
    ds = simulate(cfg)
    gaps = np.diff([p.t for p in ds.traj_o])
    assert np.allclose(gaps, 0.5, atol=1e-9)
    assert len(ds.traj_e) == len(ds.v_e_noisy)


def test_trajectories_start_at_origin():
    ds = simulate(SimConfig(duration=5.0, pose_dt=None))
    assert np.allclose(ds.traj_o[0].position, 0.0)
    assert np.allclose(ds.traj_e[0].position, 0.0)


def test_camera_trajectory_times_are_reported_times():
    cfg = SimConfig(duration=5.0, t_offset=0.15)
    ds = simulate(cfg)
    assert ds.traj_e[0].t == pytest.approx(-0.15)


# ---------------------------------------------------------------------------
# event scene


def test_event_scene_stationary_camera_is_empty():
    points = make_point_cloud(INTR, n_points=50, seed=1)
    stream = generate_event_scene([1.0, 0.0, 0.0], 0.0, points, INTR, duration=0.5)
    assert len(stream) == 0


def test_event_scene_single_point_traces_horizontal_path():
    point = np.array([[0.5, 0.0, 3.0]])
    stream = generate_event_scene([1.0, 0.0, 0.0], 0.5, point, INTR, duration=1.0)
    assert len(stream) > 5
    assert len(np.unique(stream.y)) == 1
    assert np.all(np.diff(stream.t) >= 0)
    # camera moves +x, so the projection sweeps toward smaller u
    assert stream.x[0] > stream.x[-1]


def test_event_scene_is_deterministic():
    points = make_point_cloud(INTR, n_points=60, seed=3)
    a = generate_event_scene([1, 0, 0], 0.2, points, INTR, 0.4, seed=5)
    b = generate_event_scene([1, 0, 0], 0.2, points, INTR, 0.4, seed=5)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x)


def test_event_scene_salt_adds_events():
    points = np.array([[0.0, 0.0, 3.0]])
    quiet = generate_event_scene([1, 0, 0], 0.01, points, INTR, 1.0, seed=2)
    salted = generate_event_scene([1, 0, 0], 0.01, points, INTR, 1.0, salt_rate=200.0, seed=2)
    assert len(salted) > len(quiet) + 100


def test_event_scene_rejects_points_behind_camera():
    points = np.array([[0.0, 0.0, 0.3]])
    with pytest.raises(ValueError):
        generate_event_scene([0.0, 0.0, 1.0], 1.0, points, INTR, duration=1.0)


def test_point_cloud_projects_inside_margins():
    points = make_point_cloud(INTR, n_points=200, seed=7, margin_px=40.0)
    px = INTR.project(points)
    assert px[:, 0].min() >= 39.0 and px[:, 0].max() <= INTR.width - 39.0
    assert px[:, 1].min() >= 39.0 and px[:, 1].max() <= INTR.height - 39.0
    assert points[:, 2].min() >= 2.0 and points[:, 2].max() <= 5.0
