import math

import numpy as np
import pytest

from evcalib.core import (
    Event,
    EventStream,
    Frame,
    Rotation3,
    TrajectoryPose,
    VelocitySample,
    VelocitySeries,
    interpolate_direction,
    interpolate_directions,
    project_rotation,
    random_rotation,
    rotation_about,
    rotation_error_deg,
    rotz,
    unit_vector,
    yaw_pitch_roll_deg,
)


def test_unit_vector_normalizes():
    v = unit_vector([3.0, 0.0, 4.0])
    assert np.allclose(v, [0.6, 0.0, 0.8])


def test_unit_vector_rejects_near_zero():
    with pytest.raises(ValueError):
        unit_vector([1e-15, 0.0, 0.0])


def test_rotz_quarter_turn():
    assert np.allclose(rotz(math.pi / 2) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_rotation_about_z_matches_rotz():
    angle = 0.7
    assert np.allclose(rotation_about([0, 0, 1], angle), rotz(angle), atol=1e-15)


def test_rotation3_validates_orthonormality():
    with pytest.raises(ValueError):
        Rotation3(np.eye(3) * 1.1)


def test_rotation3_rejects_reflection():
    m = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Rotation3(m)


def test_rotation3_compose_inverse():
    rng = np.random.default_rng(3)
    a, b = random_rotation(rng), random_rotation(rng)
    ab = a.compose(b)
    assert np.allclose(ab.m, a.m @ b.m)
    assert np.allclose(a.compose(a.inverse()).m, np.eye(3), atol=1e-12)


def test_rotation3_apply_single_and_stack():
    r = Rotation3.about_z(math.pi / 2)
    assert np.allclose(r.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)
    stack = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    out = r.apply(stack)
    assert np.allclose(out, [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]], atol=1e-15)


def test_angle_to_symmetric():
    rng = np.random.default_rng(5)
    a, b = random_rotation(rng), random_rotation(rng)
    assert a.angle_to(b) == pytest.approx(b.angle_to(a), abs=1e-12)


@pytest.mark.parametrize(
    "r_est,expected",
    [
        (Rotation3.identity(), 0.0),
        (Rotation3.about_z(math.pi / 2), 90.0),
        (Rotation3.from_axis_angle([1, 0, 0], math.pi), 180.0),
    ],
)
def test_rotation_error_deg_reference_cases(r_est, expected):
    assert rotation_error_deg(Rotation3.identity(), r_est) == pytest.approx(expected, abs=1e-9)


def test_rotation_error_deg_accepts_raw_matrices():
    assert rotation_error_deg(np.eye(3), rotz(math.pi / 2)) == pytest.approx(90.0, abs=1e-9)


def test_rotation_error_deg_clamps_roundoff():
    r = random_rotation(np.random.default_rng(11))
    assert rotation_error_deg(r, r) == 0.0


def test_random_rotation_is_proper():
    rng = np.random.default_rng(0)
    for _ in range(20):
        r = random_rotation(rng).m
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_project_rotation_recovers_perturbed():
    r = random_rotation(np.random.default_rng(7))
    noisy = r.m + 1e-6 * np.random.default_rng(8).standard_normal((3, 3))
    assert project_rotation(noisy).angle_to(r) < 1e-5


def test_project_rotation_handles_reflection_input():
    m = np.diag([1.0, 1.0, -1.0])
    r = project_rotation(m)
    assert np.linalg.det(r.m) == pytest.approx(1.0, abs=1e-12)


def test_yaw_pitch_roll_pure_yaw():
    yaw, pitch, roll = yaw_pitch_roll_deg(Rotation3.about_z(math.radians(30.0)))
    assert yaw == pytest.approx(30.0, abs=1e-9)
    assert pitch == pytest.approx(0.0, abs=1e-9)
    assert roll == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# event stream


def test_event_stream_validates_lengths():
    with pytest.raises(ValueError):
        EventStream(10, 10, [0.0, 1.0], [1], [1], [True])


def test_event_stream_rejects_decreasing_time():
    with pytest.raises(ValueError):
        EventStream(10, 10, [1.0, 0.5], [1, 2], [1, 2], [True, False])


def test_event_stream_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        EventStream(10, 10, [0.0], [10], [0], [True])
    with pytest.raises(ValueError):
        EventStream(10, 10, [0.0], [0], [-1], [True])


def test_event_stream_from_events_roundtrip():
    events = [Event(0.0, 1, 2, True), Event(0.5, 3, 4, False)]
    stream = EventStream.from_events(10, 10, events)
    assert len(stream) == 2
    assert list(stream.events) == events


def test_event_stream_buffers_are_readonly():
    stream = EventStream(10, 10, [0.0], [1], [1], [True])
    with pytest.raises(ValueError):
        stream.t[0] = 5.0


# ---------------------------------------------------------------------------
# velocity series


def _planar_series(ts, angles, frame=Frame.BODY, speeds=None):
    dirs = np.stack([np.cos(angles), np.sin(angles), np.zeros(len(ts))], axis=1)
    sp = np.ones(len(ts)) if speeds is None else np.asarray(speeds, dtype=float)
    return VelocitySeries(np.asarray(ts, dtype=float), dirs, sp, frame)


def test_velocity_series_requires_strictly_increasing():
    with pytest.raises(ValueError):
        _planar_series([0.0, 0.0], np.zeros(2))


def test_velocity_series_requires_unit_directions():
    with pytest.raises(ValueError):
        VelocitySeries([0.0], [[2.0, 0.0, 0.0]], [1.0], Frame.BODY)


def test_velocity_series_allows_nan_speeds():
    s = VelocitySeries([0.0], [[1.0, 0.0, 0.0]], [np.nan], Frame.CAMERA)
    assert math.isnan(s.speeds[0])


def test_velocity_series_from_samples_none_speed():
    samples = [VelocitySample(0.0, [1.0, 0.0, 0.0], None), VelocitySample(1.0, [0.0, 1.0, 0.0], 2.0)]
    s = VelocitySeries.from_samples(samples, Frame.CAMERA)
    assert math.isnan(s.speeds[0]) and s.speeds[1] == 2.0
    back = list(s.samples)
    assert back[0].speed is None and back[1].speed == 2.0


def test_velocity_series_subset_and_shifted():
    s = _planar_series([0.0, 1.0, 2.0], np.array([0.0, 0.1, 0.2]))
    sub = s.subset(np.array([True, False, True]))
    assert len(sub) == 2 and sub.t[1] == 2.0
    moved = s.shifted(0.5)
    assert np.allclose(moved.t, s.t + 0.5)
    assert np.array_equal(moved.directions, s.directions)


def test_trajectory_pose_matrix_blocks():
    pose = TrajectoryPose(1.0, Rotation3.about_z(0.3), [1.0, 2.0, 3.0])
    m = pose.matrix()
    assert np.allclose(m[:3, :3], rotz(0.3))
    assert np.allclose(m[:3, 3], [1.0, 2.0, 3.0])
    assert np.allclose(m[3], [0.0, 0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# interpolation


def test_interpolate_constant_series():
    s = VelocitySeries([0.0, 1.0], [[1, 0, 0], [1, 0, 0]], [1.0, 1.0], Frame.BODY)
    d = interpolate_direction(s, 0.5)
    assert np.allclose(d, [1.0, 0.0, 0.0])


def test_interpolate_blend_renormalizes():
    s = VelocitySeries([0.0, 1.0], [[1, 0, 0], [0, 1, 0]], [1.0, 1.0], Frame.BODY)
    d = interpolate_direction(s, 0.5, max_gap=2.0)
    assert np.allclose(d, [1 / math.sqrt(2), 1 / math.sqrt(2), 0.0], atol=1e-12)


def test_interpolate_out_of_range_is_invalid():
    s = VelocitySeries([0.0, 1.0], [[1, 0, 0], [0, 1, 0]], [1.0, 1.0], Frame.BODY)
    assert interpolate_direction(s, 1.5) is None
    assert interpolate_direction(s, -0.5) is None


def test_interpolate_respects_max_gap():
    s = VelocitySeries([0.0, 1.0], [[1, 0, 0], [0, 1, 0]], [1.0, 1.0], Frame.BODY)
    assert interpolate_direction(s, 0.5, max_gap=0.5) is None
    assert interpolate_direction(s, 0.5, max_gap=1.0) is not None


def test_interpolate_exact_sample_hit_ignores_gap():
    s = VelocitySeries([0.0, 1.0], [[1, 0, 0], [0, 1, 0]], [1.0, 1.0], Frame.BODY)
    d = interpolate_direction(s, 1.0, max_gap=0.1)
    assert np.allclose(d, [0.0, 1.0, 0.0])


def test_interpolate_antipodal_blend_is_invalid():
    s = VelocitySeries([0.0, 1.0], [[1, 0, 0], [-1, 0, 0]], [1.0, 1.0], Frame.BODY)
    assert interpolate_direction(s, 0.5, max_gap=2.0) is None


def test_interpolate_many_mixed_queries():
    s = _planar_series([0.0, 0.1, 0.2, 0.3], np.array([0.0, 0.2, 0.4, 0.6]))
    q = np.array([-1.0, 0.05, 0.2, 0.25, 9.0])
    dirs, valid = interpolate_directions(s, q, max_gap=0.2)
    assert valid.tolist() == [False, True, True, True, False]
    assert np.all(np.isnan(dirs[~valid]))
    norms = np.linalg.norm(dirs[valid], axis=1)
    assert np.allclose(norms, 1.0, atol=1e-12)


def test_interpolate_empty_series():
    s = VelocitySeries(np.empty(0), np.empty((0, 3)), np.empty(0), Frame.BODY)
    dirs, valid = interpolate_directions(s, np.array([0.0]))
    assert not valid[0]
