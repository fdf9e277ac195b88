"""Seeded Monte Carlo sweeps comparing calibration methods on simulated trials.

Each trial draws a random temporal offset and extrinsic rotation, simulates
one trajectory family at fixed noise, and scores three estimators: the full
correlation pipeline, its no-temporal-alignment ablation, and the pose-based
hand-eye baseline.  Trials are embarrassingly parallel; every trial's RNG
stream derives from (base seed, trial index) so serial and threaded runs
produce identical numbers.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from evcalib.calibration import CalibrationConfig, calibrate, handeye_baseline
from evcalib.core import (
    EvCalibError,
    TrajectoryPose,
    random_rotation,
    rotation_error_deg,
)
from evcalib.formats import _fmt
from evcalib.kinematics import filter_usable
from evcalib.synth import Shape, SimConfig, simulate

log = logging.getLogger(__name__)

METHODS = ("vc", "vc-wota", "handeye")
OFFSET_RANGE = 0.3  # injected offsets drawn uniform in [-0.3, 0.3] s
DEFAULT_SIGMA_O = 0.02  # body velocity noise, m/s per axis
DEFAULT_SIGMA_E = 0.05  # camera velocity noise before normalization, m/s per axis
DEFAULT_TRIALS = 100
SUMMARY_HEADER = "group,method,p25,p50,p75"

# Sweep-wide knobs.  The transition filter's window sets the hole it cuts
# around each polyline corner, and interpolation bridges that hole, so the
# window radius is also the blur radius of the correlation-vs-lag peak the
# temporal search climbs: 0.1 s halves the blur of the 0.2 s default.  The
# rate cap must then sit well above the windowed-rate noise on cruise data
# (sigma ~0.4 rad/s at sigma_o = 0.02, speed 0.5, window 0.1) yet far below
# a corner spike (>= 8 rad/s for a 30 deg turn), and must admit the fastest
# arc group (0.1 rad/s commanded).  The association gap must still bridge
# the corner hole, otherwise corner-adjacent evidence never reaches the
# temporal search.
SWEEP_RATE_WINDOW = 0.1
SWEEP_STEER_RATE_MAX = 1.4
SWEEP_MAX_GAP = 0.3
POSE_SPACING = 0.5  # hand-eye consumes poses at this interval, s


@dataclass(frozen=True)
class GroupSpec:
    """One sweep group: a name plus the trial-independent simulator config."""

    name: str
    base: SimConfig


@dataclass(frozen=True)
class TrialResult:
    group: str
    method: str
    trial: int
    rotation_error_deg: float
    t_d_error_s: float  # nan when the method does not estimate an offset


def arc_groups(heading_span: float = 2.0) -> list[GroupSpec]:
    # Duration scales inversely with turn rate so every arc sweeps the same
    # total heading.  Past ~pi the direction history starts repeating itself
    # and lag recovery loses its signal; much below ~1 rad the heading barely
    # moves and rotation recovery degrades instead.
    out = []
    for radius in (5.0, 10.0, 20.0):
        for rate in (0.05, 0.1):
            cfg = SimConfig(
                shape=Shape.ARC,
                radius=radius,
                rate=rate,
                duration=heading_span / rate,
                pose_dt=POSE_SPACING,
            )
            out.append(GroupSpec(f"arc_r{radius:g}_w{rate:g}", cfg))
    return out


def polyline_groups(duration: float = 90.0) -> list[GroupSpec]:
    out = []
    for turn_deg in (30.0, 60.0, 90.0):
        for segment in (5.0, 10.0):
            cfg = SimConfig(
                shape=Shape.POLYLINE,
                turn=math.radians(turn_deg),
                segment=segment,
                duration=duration,
                pose_dt=POSE_SPACING,
            )
            out.append(GroupSpec(f"poly_a{turn_deg:g}_s{segment:g}", cfg))
    return out


def finger_groups(counts=(2, 3, 4, 5), duration: float = 60.0) -> list[GroupSpec]:
    return [
        GroupSpec(
            f"finger_{n}",
            SimConfig(shape=Shape.FINGER, fingers=n, duration=duration, pose_dt=POSE_SPACING),
        )
        for n in counts
    ]


def sweep_groups() -> list[GroupSpec]:
    """The shipped comparison experiment: six arc and six polyline groups."""
    return arc_groups() + polyline_groups()


def sweep_calibration_config() -> CalibrationConfig:
    return CalibrationConfig(max_gap=SWEEP_MAX_GAP)


def _associate_poses(
    traj_body: list[TrajectoryPose], traj_cam: list[TrajectoryPose]
) -> tuple[list[TrajectoryPose], list[TrajectoryPose]]:
    """Pair each body pose with the nearest camera pose by reported time.

    Camera indices are kept strictly increasing so no camera pose is
    consumed twice (a reused pose would fabricate a zero relative motion).
    """
    t_cam = np.array([p.t for p in traj_cam])
    body, cam = [], []
    last = -1
    for pose in traj_body:
        i = int(np.searchsorted(t_cam, pose.t))
        if i > 0 and (i == len(t_cam) or abs(t_cam[i - 1] - pose.t) <= abs(t_cam[i] - pose.t)):
            i -= 1
        if i > last:
            body.append(pose)
            cam.append(traj_cam[i])
            last = i
    return body, cam


def run_trial(
    spec: GroupSpec,
    trial: int,
    *,
    base_seed: int = 0,
    sigma_o: float = DEFAULT_SIGMA_O,
    sigma_e: float = DEFAULT_SIGMA_E,
    methods: tuple[str, ...] = METHODS,
    calib: CalibrationConfig | None = None,
    t_offset: float | None = None,
) -> list[TrialResult]:
    """Simulate one trial and score the requested methods on it.

    ``t_offset`` pins the injected offset; by default it is drawn uniform in
    [-OFFSET_RANGE, OFFSET_RANGE].  A method failing with a solver error is
    recorded with infinite rotation error rather than aborting the sweep.
    """
    rng = np.random.default_rng((base_seed, trial))
    drawn = float(rng.uniform(-OFFSET_RANGE, OFFSET_RANGE))
    if t_offset is None:
        t_offset = drawn
    r_gt = random_rotation(rng)
    noise_seed = int(rng.integers(0, 2**63))
    cfg = replace(
        spec.base, sigma_o=sigma_o, sigma_e=sigma_e, t_offset=t_offset, r_gt=r_gt, seed=noise_seed
    )
    ds = simulate(cfg)
    v_o = filter_usable(
        ds.v_o_noisy, steer_rate_max=SWEEP_STEER_RATE_MAX, window=SWEEP_RATE_WINDOW
    )
    cal = calib if calib is not None else sweep_calibration_config()

    results = []
    for method in methods:
        rot_err, t_err = math.inf, math.nan
        try:
            if method == "handeye":
                body, cam = _associate_poses(ds.traj_o, ds.traj_e)
                rotation, _, _ = handeye_baseline(body, cam)
                rot_err = rotation_error_deg(r_gt, rotation)
            elif method in ("vc", "vc-wota"):
                report = calibrate(v_o, ds.v_e_noisy, replace(cal, skip_temporal=method == "vc-wota"))
                rot_err = rotation_error_deg(r_gt, report.r_oe)
                t_err = report.t_d - t_offset
            else:
                raise ValueError(f"unknown method '{method}'")
        except EvCalibError as exc:
            log.debug("trial %s/%d method %s failed: %s", spec.name, trial, method, exc)
        results.append(TrialResult(spec.name, method, trial, float(rot_err), float(t_err)))
    return results


def worker_count(requested: int | None = None) -> int:
    """Thread count: the request or CPU count, capped by EVCALIB_THREADS."""
    n = requested if requested and requested > 0 else (os.cpu_count() or 1)
    env = os.environ.get("EVCALIB_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            log.warning("ignoring non-integer EVCALIB_THREADS=%r", env)
    return max(1, n)


def run_sweep(
    groups: list[GroupSpec],
    n_trials: int = DEFAULT_TRIALS,
    *,
    base_seed: int = 0,
    sigma_o: float = DEFAULT_SIGMA_O,
    sigma_e: float = DEFAULT_SIGMA_E,
    methods: tuple[str, ...] = METHODS,
    calib: CalibrationConfig | None = None,
    max_workers: int | None = None,
) -> list[TrialResult]:
    jobs = [(group, trial) for group in groups for trial in range(n_trials)]

    def one(job):
        group, trial = job
        return run_trial(
            group,
            trial,
            base_seed=base_seed,
            sigma_o=sigma_o,
            sigma_e=sigma_e,
            methods=methods,
            calib=calib,
        )

    workers = worker_count(max_workers)
    if workers == 1:
        chunks = [one(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(one, jobs))
    return [r for chunk in chunks for r in chunk]


def aggregate(results: list[TrialResult]) -> list[tuple[str, str, float, float, float]]:
    """Per-(group, method) rotation-error quartiles, in first-seen order."""
    order: list[tuple[str, str]] = []
    buckets: dict[tuple[str, str], list[float]] = {}
    for r in results:
        key = (r.group, r.method)
        if key not in buckets:
            order.append(key)
            buckets[key] = []
        buckets[key].append(r.rotation_error_deg)
    rows = []
    for group, method in order:
        errs = np.array(buckets[(group, method)])
        p25, p50, p75 = (float(np.percentile(errs, q)) for q in (25, 50, 75))
        rows.append((group, method, p25, p50, p75))
    return rows


def write_summary(path, rows: list[tuple[str, str, float, float, float]]) -> None:
    lines = [SUMMARY_HEADER]
    lines.extend(f"{g},{m},{_fmt(a)},{_fmt(b)},{_fmt(c)}" for g, m, a, b, c in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
