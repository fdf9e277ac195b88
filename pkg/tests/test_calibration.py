import math

import numpy as np
import pytest

from evcalib.calibration import (
    CalibrationConfig,
    _procrustes_rotation,
    associate_at_lag,
    calibrate,
    canonical_coefficients,
    covariances_at_lag,
    find_temporal_offset,
    handeye_baseline,
    rotation_cca_closed_form,
    rotation_irls,
    trace_correlation,
)
from evcalib.core import (
    EvCalibError,
    Frame,
    Rotation3,
    TrajectoryPose,
    VelocitySeries,
    random_rotation,
    rotation_error_deg,
)
from evcalib.kinematics import filter_usable
from evcalib.synth import SimConfig, Shape, simulate


def _planar_series(ts, angles, frame=Frame.BODY):
    ts = np.asarray(ts, dtype=float)
    angles = np.asarray(angles, dtype=float)
    dirs = np.stack([np.cos(angles), np.sin(angles), np.zeros(len(ts))], axis=1)
    return VelocitySeries(ts, dirs, np.ones(len(ts)), frame)


def _wobble_series(ts, seed=0, frame=Frame.BODY):
    """Full-rank direction set: random walk on the sphere."""
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, 0.3, size=(len(ts), 3))
    raw = np.cumsum(steps, axis=0) + [1.0, 0.0, 0.0]
    dirs = raw / np.linalg.norm(raw, axis=1)[:, None]
    return VelocitySeries(np.asarray(ts, dtype=float), dirs, np.ones(len(ts)), frame)


def _rotated(series, rotation, frame=Frame.CAMERA):
    return VelocitySeries(
        series.t, series.directions @ rotation.m, series.speeds, frame
    )


# ---------------------------------------------------------------------------
# covariances


def test_cross_covariance_of_exact_rotation():
    t = np.arange(300) * 0.01
    v_o = _planar_series(t, 0.8 * t)
    r = random_rotation(np.random.default_rng(1))
    v_e = VelocitySeries(t, v_o.directions @ r.m.T, v_o.speeds, Frame.CAMERA)
    c = covariances_at_lag(v_o, v_e, 0.0)
    assert np.allclose(c.cross, c.auto_o @ r.m.T, atol=1e-9)


def test_constant_series_has_zero_covariances():
    t = np.arange(10) * 0.1
    s = _planar_series(t, np.zeros(10))
    c = covariances_at_lag(s, s, 0.0)
    assert np.allclose(c.auto_o, 0.0) and np.allclose(c.cross, 0.0)


def test_planar_auto_covariance_is_rank_two():
    ds = simulate(SimConfig(shape=Shape.ARC, radius=10.0, rate=0.1, duration=20.0, sigma_o=0.02, seed=3))
    c = covariances_at_lag(ds.v_o_noisy, ds.v_o_noisy, 0.0)
    eigs = np.sort(np.linalg.eigvalsh(c.auto_o))
    assert eigs[0] < 1e-6 * eigs[2]


def test_association_drops_unbridgeable_queries():
    v_o = _planar_series([0.0, 0.1, 5.0], [0.0, 0.1, 0.2])
    v_e = _planar_series([0.05, 2.0], [0.0, 0.0], frame=Frame.CAMERA)
    o, e = associate_at_lag(v_o, v_e, 0.0, max_gap=0.2)
    assert len(o) == 1


def test_insufficient_overlap_raises():
    v_o = _planar_series([0.0, 0.1], [0.0, 0.1])
    v_e = _planar_series([10.0, 10.1], [0.0, 0.1], frame=Frame.CAMERA)
    with pytest.raises(EvCalibError, match="insufficient overlap"):
        covariances_at_lag(v_o, v_e, 0.0)


# ---------------------------------------------------------------------------
# trace correlation


def test_trace_correlation_planar_ceiling():
    t = np.arange(500) * 0.01
    s = _planar_series(t, 0.5 * t)
    r = trace_correlation(covariances_at_lag(s, s, 0.0))
    assert r == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-6)


def test_trace_correlation_full_rank_identity():
    t = np.arange(500) * 0.01
    s = _wobble_series(t, seed=2)
    r = trace_correlation(covariances_at_lag(s, s, 0.0))
    assert r == pytest.approx(1.0, abs=1e-6)


def test_trace_correlation_rotation_invariance():
    t = np.arange(400) * 0.01
    v_o = _wobble_series(t, seed=4)
    base = trace_correlation(covariances_at_lag(v_o, v_o, 0.0))
    rng = np.random.default_rng(5)
    for _ in range(50):
        rotated = _rotated(v_o, random_rotation(rng))
        r = trace_correlation(covariances_at_lag(v_o, rotated, 0.0))
        assert abs(r - base) < 1e-9


def test_trace_correlation_independent_noise_is_low():
    rng = np.random.default_rng(6)
    t = np.arange(500) * 0.01
    dirs = rng.standard_normal((500, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    white = VelocitySeries(t, dirs, np.ones(500), Frame.CAMERA)
    r = trace_correlation(covariances_at_lag(_wobble_series(t, seed=7), white, 0.0))
    assert r < 0.2


def test_trace_correlation_zero_ridge_raises_on_singular():
    t = np.arange(100) * 0.01
    s = _planar_series(t, 0.5 * t)
    with pytest.raises(EvCalibError, match="singular"):
        trace_correlation(covariances_at_lag(s, s, 0.0), ridge=0.0)


def test_canonical_coefficients_near_one_for_true_rotation():
    t = np.arange(400) * 0.01
    v_o = _planar_series(t, 0.5 * t)
    r = Rotation3.about_z(0.9)
    v_e = _rotated(v_o, r)  # camera sees e = r^T o, so r maps camera to body
    rho = canonical_coefficients(covariances_at_lag(v_o, v_e, 0.0), r)
    assert rho[0] > 0.99 and rho[1] > 0.99


# ---------------------------------------------------------------------------
# temporal search


def test_temporal_offset_noise_free_polyline():
    # short segments give several corners, so corner-time quantization
    # averages out; the transition filter is part of the shipped pipeline
    ds = simulate(SimConfig(shape=Shape.POLYLINE, segment=5.0, duration=60.0, t_offset=0.2))
    # the short window keeps the corner hole narrower than the association
    # gap, so corner evidence is interpolated across rather than dropped
    t_d, curve = find_temporal_offset(filter_usable(ds.v_o_noisy, window=0.1), ds.v_e_noisy)
    assert abs(t_d - 0.2) <= 0.005
    assert len(curve.lags) == len(curve.values)


def test_temporal_offset_zero_when_aligned():
    ds = simulate(SimConfig(shape=Shape.POLYLINE, segment=5.0, duration=60.0))
    t_d, _ = find_temporal_offset(filter_usable(ds.v_o_noisy, window=0.1), ds.v_e_noisy)
    assert abs(t_d) <= 0.005


def test_temporal_offset_flat_curve_resolves_to_zero():
    t = np.arange(200) * 0.01
    s = _planar_series(t, np.zeros(200))
    t_d, _ = find_temporal_offset(s, s, t_max=0.2)
    assert t_d == 0.0


def test_temporal_offset_validates_grid():
    ds = simulate(SimConfig(duration=5.0))
    with pytest.raises(ValueError):
        find_temporal_offset(ds.v_o_noisy, ds.v_e_noisy, t_max=0.0)
    with pytest.raises(ValueError):
        find_temporal_offset(ds.v_o_noisy, ds.v_e_noisy, t_step=-0.01)


def test_temporal_offset_no_overlap_raises():
    v_o = _planar_series([0.0, 0.01, 0.02], [0.0, 0.1, 0.2])
    v_e = _planar_series([50.0, 50.01, 50.02], [0.0, 0.1, 0.2], frame=Frame.CAMERA)
    with pytest.raises(EvCalibError, match="no valid lag"):
        find_temporal_offset(v_o, v_e, t_max=0.1)


# ---------------------------------------------------------------------------
# rotation solvers


def test_closed_form_recovers_full_rank_rotation():
    t = np.arange(600) * 0.01
    v_o = _wobble_series(t, seed=9)
    r = random_rotation(np.random.default_rng(10))
    v_e = _rotated(v_o, r)
    est = rotation_cca_closed_form(covariances_at_lag(v_o, v_e, 0.0))
    assert est.angle_to(r) < 1e-6


def test_closed_form_identity_well_conditioned():
    t = np.arange(600) * 0.01
    v_o = _wobble_series(t, seed=11)
    est = rotation_cca_closed_form(covariances_at_lag(v_o, v_o, 0.0))
    assert est.angle_to(Rotation3.identity()) < 1e-9


def test_closed_form_planar_returns_proper_rotation():
    # accuracy is deliberately not asserted: the normalization is rank-deficient
    t = np.arange(400) * 0.01
    v_o = _planar_series(t, 0.5 * t)
    v_e = _rotated(v_o, Rotation3.about_z(-0.4))
    est = rotation_cca_closed_form(covariances_at_lag(v_o, v_e, 0.0), ridge=1e-6)
    assert isinstance(est, Rotation3)


def test_irls_identity_on_equal_pairs():
    dirs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    rotation, stats, _ = rotation_irls((dirs, dirs))
    assert rotation.angle_to(Rotation3.identity()) < 1e-12
    assert stats.max < 1e-9


def test_irls_exact_recovery_random_pairs():
    rng = np.random.default_rng(12)
    r = random_rotation(rng)
    e = rng.standard_normal((100, 3))
    e /= np.linalg.norm(e, axis=1)[:, None]
    o = e @ r.m.T
    rotation, _, _ = rotation_irls((o, e))
    assert rotation_error_deg(r, rotation) < 1e-6


def test_irls_first_iteration_is_closed_form():
    rng = np.random.default_rng(13)
    e = rng.standard_normal((50, 3))
    e /= np.linalg.norm(e, axis=1)[:, None]
    o = e @ random_rotation(rng).m.T + rng.normal(0.0, 0.05, (50, 3))
    one_step, _, iters = rotation_irls((o, e), max_iter=1)
    closed = _procrustes_rotation(o, e, np.ones(50))
    assert iters == 1
    assert one_step.angle_to(closed) < 1e-12


def test_irls_beats_unweighted_under_outliers():
    rng = np.random.default_rng(14)
    wins = []
    for _ in range(100):
        r = random_rotation(rng)
        e = rng.standard_normal((200, 3))
        e /= np.linalg.norm(e, axis=1)[:, None]
        o = e @ r.m.T
        # 1 deg inlier noise
        o += rng.normal(0.0, math.radians(1.0), o.shape)
        o /= np.linalg.norm(o, axis=1)[:, None]
        n_out = 20
        bad = rng.standard_normal((n_out, 3))
        o[:n_out] = bad / np.linalg.norm(bad, axis=1)[:, None]
        robust, _, _ = rotation_irls((o, e))
        plain = _procrustes_rotation(o, e, np.ones(len(o)))
        wins.append((rotation_error_deg(r, robust), rotation_error_deg(r, plain)))
    robust_med = np.median([w[0] for w in wins])
    plain_med = np.median([w[1] for w in wins])
    assert robust_med < plain_med


def test_irls_rejects_degenerate_directions():
    dirs = np.tile([1.0, 0.0, 0.0], (10, 1))
    with pytest.raises(EvCalibError, match="degenerate"):
        rotation_irls((dirs, dirs))


def test_irls_validates_inputs():
    a = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(ValueError):
        rotation_irls((a, a[:1]))
    with pytest.raises(ValueError):
        rotation_irls((a, a), delta=0.0)


# ---------------------------------------------------------------------------
# full pipeline


def test_calibrate_recovers_known_offset_and_rotation():
    r_gt = random_rotation(np.random.default_rng(15))
    cfg = SimConfig(shape=Shape.POLYLINE, segment=5.0, duration=60.0, t_offset=0.12, r_gt=r_gt)
    ds = simulate(cfg)
    report = calibrate(filter_usable(ds.v_o_noisy, window=0.1), ds.v_e_noisy)
    assert abs(report.t_d - 0.12) <= 0.005
    assert rotation_error_deg(r_gt, report.r_oe) < 1e-6
    assert report.method == "vc"
    assert report.n_pairs > 100


def test_skip_temporal_degrades_offset_data():
    errs_full, errs_skip = [], []
    for seed in range(10):
        rng = np.random.default_rng((20, seed))
        r_gt = random_rotation(rng)
        cfg = SimConfig(
            shape=Shape.POLYLINE, segment=5.0, duration=90.0, t_offset=0.25, r_gt=r_gt,
            sigma_o=0.02, sigma_e=0.05, seed=seed,
        )
        ds = simulate(cfg)
        # noisy headings push the windowed rate estimate past the clean-log
        # default cap, so pass thresholds sized for this noise level
        v_o = filter_usable(ds.v_o_noisy, steer_rate_max=1.4, window=0.1)
        full = calibrate(v_o, ds.v_e_noisy, CalibrationConfig(max_gap=0.3))
        skip = calibrate(
            v_o, ds.v_e_noisy, CalibrationConfig(max_gap=0.3, skip_temporal=True)
        )
        errs_full.append(rotation_error_deg(r_gt, full.r_oe))
        errs_skip.append(rotation_error_deg(r_gt, skip.r_oe))
        assert skip.t_d == 0.0
        assert skip.method == "vc-wota"
    assert np.median(errs_skip) > np.median(errs_full)


def test_calibrate_empty_series_raises():
    empty = VelocitySeries(np.empty(0), np.empty((0, 3)), np.empty(0), Frame.BODY)
    with pytest.raises(EvCalibError, match="insufficient overlap"):
        calibrate(empty, empty)


# ---------------------------------------------------------------------------
# hand-eye baseline


def _fixture_pose_pairs(n=40, seed=21):
    """Consistent absolute pose streams related by one fixed transform."""
    rng = np.random.default_rng(seed)
    x_rot = random_rotation(rng)
    x_t = rng.normal(0.0, 1.0, 3)
    x = np.eye(4)
    x[:3, :3] = x_rot.m
    x[:3, 3] = x_t
    x_inv = np.linalg.inv(x)
    body, cam = [], []
    for i in range(n):
        a = np.eye(4)
        a[:3, :3] = random_rotation(rng).m
        a[:3, 3] = rng.normal(0.0, 2.0, 3)
        b = x_inv @ a @ x
        body.append(TrajectoryPose(float(i), Rotation3(a[:3, :3]), a[:3, 3]))
        cam.append(TrajectoryPose(float(i), Rotation3(b[:3, :3]), b[:3, 3]))
    return body, cam, x_rot, x_t


def test_handeye_exact_consistent_streams():
    body, cam, x_rot, x_t = _fixture_pose_pairs()
    rotation, translation, stats = handeye_baseline(body, cam)
    assert rotation.angle_to(x_rot) < 1e-6
    assert stats.max < 1e-5
    assert np.allclose(translation, x_t, atol=1e-6)


def test_handeye_pure_translation_raises():
    body = [TrajectoryPose(float(i), Rotation3.identity(), [0.1 * i, 0.0, 0.0]) for i in range(10)]
    cam = [TrajectoryPose(float(i), Rotation3.identity(), [0.0, 0.1 * i, 0.0]) for i in range(10)]
    with pytest.raises(EvCalibError, match="rotational excitation"):
        handeye_baseline(body, cam)


def test_handeye_validates_inputs():
    body, cam, _, _ = _fixture_pose_pairs(n=5)
    with pytest.raises(ValueError):
        handeye_baseline(body, cam[:-1])
    with pytest.raises(ValueError):
        handeye_baseline(body[:2], cam[:2])
