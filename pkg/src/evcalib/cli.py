"""Command-line front end: simulate, headings, calibrate, eval.

Configuration precedence is flags > config file > built-in defaults; the
config file is flat ``key=value`` text whose keys are RunConfig field names.
Exit codes: 0 success, 1 runtime/solver failure, 2 usage or parse error.
All outputs are byte-identical across reruns with the same seed and inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from evcalib import batch as batch_mod
from evcalib import formats, plots
from evcalib.calibration import (
    DEFAULT_IRLS_DELTA,
    DEFAULT_RIDGE,
    DEFAULT_T_MAX,
    DEFAULT_T_STEP,
    CalibrationConfig,
    CalibrationReport,
    CorrelationCurve,
    calibrate,
    handeye_baseline,
)
from evcalib.core import (
    DEFAULT_MAX_GAP_S,
    EvCalibError,
    Frame,
    Rotation3,
    TrajectoryPose,
    VelocitySeries,
    random_rotation,
    rotation_about,
    rotation_error_deg,
    rotz,
    unit_vector,
    yaw_pitch_roll_deg,
)
from evcalib.formats import FormatError
from evcalib.heading import CameraIntrinsics, HeadingConfig, estimate_heading_details
from evcalib.kinematics import (
    DEFAULT_RATE_WINDOW,
    DEFAULT_STEER_RATE_MAX,
    DEFAULT_V_MIN,
    body_velocity_series,
    filter_usable,
)
from evcalib.representation import SurfaceConfig
from evcalib.synth import (
    Shape,
    SimConfig,
    command_speed,
    generate_event_scene,
    make_point_cloud,
    simulate,
)

TRACE_HEADER = "lag_s,r"
DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=320.0, fy=320.0, cx=320.0, cy=240.0, dist=np.zeros(4), width=640, height=480
)


@dataclass
class RunConfig:
    """Every tunable knob reachable from the command line or a config file."""

    tau: float = 0.030
    k: int = 7
    decrement: int = 1
    theta_ts: float = 0.1
    theta_tos: int | None = None
    pair_spacing: float = 0.030
    max_corners: int = 300
    match_ratio: float = 0.8
    ransac_iterations: int = 200
    epipolar_tol: float = 4e-3
    min_inlier_ratio: float = 0.3
    t_max: float = DEFAULT_T_MAX
    t_step: float = DEFAULT_T_STEP
    ridge: float = DEFAULT_RIDGE
    irls_delta: float = DEFAULT_IRLS_DELTA
    max_gap: float = DEFAULT_MAX_GAP_S
    v_min: float = DEFAULT_V_MIN
    steer_rate_max: float = DEFAULT_STEER_RATE_MAX
    rate_window: float = DEFAULT_RATE_WINDOW
    seed: int = 0

    def heading_config(self) -> HeadingConfig:
        surface = SurfaceConfig(
            tau=self.tau,
            k=self.k,
            decrement=self.decrement,
            theta_ts=self.theta_ts,
            theta_tos=self.theta_tos,
        )
        return HeadingConfig(
            surface=surface,
            pair_spacing=self.pair_spacing,
            max_corners=self.max_corners,
            match_ratio=self.match_ratio,
            ransac_iterations=self.ransac_iterations,
            epipolar_tol=self.epipolar_tol,
            min_inlier_ratio=self.min_inlier_ratio,
            seed=self.seed,
        )

    def calibration_config(self, skip_temporal: bool = False) -> CalibrationConfig:
        return CalibrationConfig(
            t_max=self.t_max,
            t_step=self.t_step,
            ridge=self.ridge,
            skip_temporal=skip_temporal,
            max_gap=self.max_gap,
            irls_delta=self.irls_delta,
        )


def _coerce(value: str, target_type) -> object:
    if target_type == "int | None":
        return None if value.lower() in ("none", "") else int(value)
    if target_type == "int":
        return int(value)
    if target_type == "float":
        return float(value)
    raise FormatError(f"unsupported config type {target_type}")


def load_run_config(config_path: str | None, flag_values: dict) -> RunConfig:
    rc = RunConfig()
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if config_path:
        for key, raw in formats.read_config_file(config_path).items():
            if key not in fields:
                raise FormatError(f"unknown config key '{key}'")
            try:
                setattr(rc, key, _coerce(raw, fields[key].type))
            except ValueError:
                raise FormatError(f"bad value for config key '{key}': {raw!r}") from None
    for key, value in flag_values.items():
        if key in fields and value is not None:
            setattr(rc, key, value)
    return rc


def _add_config_flags(p: argparse.ArgumentParser, names: list[str]) -> None:
    p.add_argument("--config", help="flat key=value config file")
    typed = {f.name: f for f in dataclasses.fields(RunConfig)}
    for name in names:
        f = typed[name]
        arg_type = int if f.type == "int" else float
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=arg_type, default=None)


def _flag_values(args: argparse.Namespace) -> dict:
    return {f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)}


# ---------------------------------------------------------------------------
# simulate


def _rotation_from_args(args, seed: int) -> Rotation3:
    if args.random_rotation:
        return random_rotation(np.random.default_rng((seed, 0xC0FFEE)))
    yaw, pitch, roll = (math.radians(v) for v in (args.yaw_deg, args.pitch_deg, args.roll_deg))
    m = rotz(yaw) @ rotation_about(np.array([0.0, 1.0, 0.0]), pitch)
    m = m @ rotation_about(np.array([1.0, 0.0, 0.0]), roll)
    return Rotation3(m)


def cmd_simulate(args) -> int:
    rc = load_run_config(args.config, _flag_values(args))
    seed = rc.seed if args.seed is None else args.seed
    r_gt = _rotation_from_args(args, seed)
    cfg = SimConfig(
        shape=Shape(args.shape),
        radius=args.radius_m,
        rate=args.rate,
        turn=math.radians(args.turn_deg),
        segment=args.segment_m,
        fingers=args.fingers,
        finger_length=args.finger_length_m,
        finger_spread=math.radians(args.finger_spread_deg),
        speed=args.speed,
        dt=args.dt,
        duration=args.duration,
        sigma_o=args.noise,
        sigma_e=args.noise,
        t_offset=args.t_offset,
        r_gt=r_gt,
        seed=seed,
    )
    ds = simulate(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    v_o = ds.v_o_noisy
    steer = np.arctan2(v_o.directions[:, 1], v_o.directions[:, 0])
    formats.write_odometry(
        out / "odom.csv", v_o.t, np.tile(steer[:, None], (1, 4)), np.tile(v_o.speeds[:, None], (1, 4))
    )
    n_e = len(ds.v_e_noisy)
    formats.write_headings(
        out / "headings.csv", ds.v_e_noisy, inliers=np.zeros(n_e), inlier_ratio=np.ones(n_e)
    )
    formats.write_ground_truth(out / "ground_truth.json", ds.t_offset, ds.r_gt)
    plots.plot_trajectories(ds.traj_o, ds.traj_e, out / "trajectory.png")

    if args.events_duration > 0:
        intr = DEFAULT_INTRINSICS
        direction = ds.r_gt.m.T @ ds.v_o_true.directions[0]
        points = make_point_cloud(intr, seed=seed)
        stream = generate_event_scene(
            direction, command_speed(cfg), points, intr, args.events_duration, seed=seed
        )
        formats.write_events(out / "events.csv", stream)
        formats.write_intrinsics(out / "intrinsics.txt", intr)

    print(f"shape={cfg.shape.value} duration={cfg.duration:g}s t_offset={ds.t_offset:g}s")
    print(f"odometry samples={len(v_o)} heading samples={n_e}")
    print(f"wrote {out / 'odom.csv'}, {out / 'headings.csv'}, {out / 'ground_truth.json'}")
    return 0


# ---------------------------------------------------------------------------
# headings


def cmd_headings(args) -> int:
    rc = load_run_config(args.config, _flag_values(args))
    intr = formats.read_intrinsics(args.intrinsics)
    stream = formats.read_events(args.events, intr.width, intr.height)
    details = estimate_heading_details(stream, intr, config=rc.heading_config())
    if not details:
        raise EvCalibError("no heading pairs")
    series = VelocitySeries(
        np.array([e.t_mid for e in details]),
        np.array([e.direction for e in details]),
        np.full(len(details), np.nan),
        Frame.CAMERA,
    )
    formats.write_headings(
        args.out,
        series,
        inliers=[e.inlier_count for e in details],
        inlier_ratio=[e.inlier_ratio for e in details],
    )
    ratios = np.array([e.inlier_ratio for e in details])
    print(f"pairs={len(details)} mean_inlier_ratio={ratios.mean():.3f}")
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# calibrate


def _pose_subsample(times: np.ndarray, spacing: float) -> list[int]:
    """Greedy index pick so consecutive picked times are >= spacing apart."""
    picked: list[int] = []
    next_t = -math.inf
    for i, t in enumerate(times):
        if t >= next_t:
            picked.append(i)
            next_t = t + spacing - 1e-9
    return picked


def _body_trajectory(v_o: VelocitySeries, spacing: float) -> list[TrajectoryPose]:
    vel = v_o.directions * v_o.speeds[:, None]
    steps = np.diff(v_o.t)
    pos = np.concatenate([np.zeros((1, 3)), np.cumsum(vel[:-1] * steps[:, None], axis=0)])
    yaw = np.arctan2(v_o.directions[:, 1], v_o.directions[:, 0])
    return [
        TrajectoryPose(float(v_o.t[i]), Rotation3(rotz(yaw[i])), pos[i])
        for i in _pose_subsample(v_o.t, spacing)
    ]


def _camera_trajectory(
    v_e: VelocitySeries, speeds: np.ndarray, spacing: float
) -> list[TrajectoryPose]:
    """Dead-reckoned camera poses from headings plus transferred speeds.

    Headings are scale-free, so each direction is scaled by the odometry
    speed at its (uncompensated) timestamp.  Orientations rotate about the
    estimated motion-plane normal by the in-plane angle of each heading;
    the normal's sign ambiguity cancels because flipping it also flips the
    measured angles.
    """
    dirs = v_e.directions
    scatter = dirs.T @ dirs
    w, vecs = np.linalg.eigh(scatter)
    normal = vecs[:, 0]
    u = dirs[0] - (dirs[0] @ normal) * normal
    u = unit_vector(u)
    v = np.cross(normal, u)
    phi = np.arctan2(dirs @ v, dirs @ u)

    vel = dirs * speeds[:, None]
    steps = np.diff(v_e.t)
    pos = np.concatenate([np.zeros((1, 3)), np.cumsum(vel[:-1] * steps[:, None], axis=0)])
    return [
        TrajectoryPose(float(v_e.t[i]), Rotation3(rotation_about(normal, phi[i])), pos[i])
        for i in _pose_subsample(v_e.t, spacing)
    ]


def _run_handeye(v_o: VelocitySeries, v_e: VelocitySeries) -> CalibrationReport:
    speeds, valid = interpolate_speeds(v_o, v_e.t)
    v_e_used = v_e.subset(valid)
    traj_body = _body_trajectory(v_o, batch_mod.POSE_SPACING)
    traj_cam = _camera_trajectory(v_e_used, speeds[valid], batch_mod.POSE_SPACING)
    body, cam = batch_mod._associate_poses(traj_body, traj_cam)
    rotation, _, residuals = handeye_baseline(body, cam)
    return CalibrationReport(
        t_d=0.0,
        r_oe=rotation,
        curve=CorrelationCurve(np.empty(0), np.empty(0)),
        n_pairs=max(0, len(body) - 1),
        irls_iterations=0,
        residuals=residuals,
        method="handeye",
    )


def interpolate_speeds(v_o: VelocitySeries, t_query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear odometry-speed interpolation; out-of-range queries are invalid."""
    valid = (t_query >= v_o.t[0]) & (t_query <= v_o.t[-1])
    speeds = np.interp(t_query, v_o.t, v_o.speeds)
    return speeds, valid


def _print_report(report: CalibrationReport) -> None:
    ypr = yaw_pitch_roll_deg(report.r_oe)
    print(f"method={report.method} t_d={report.t_d:.6f}s n_pairs={report.n_pairs}")
    print("R_oe:")
    for row in report.r_oe.m:
        print("  [" + "  ".join(f"{v: .9f}" for v in row) + "]")
    print(f"yaw/pitch/roll deg: {ypr[0]:.4f} {ypr[1]:.4f} {ypr[2]:.4f}")
    print(
        "residual_deg p50/p90/max: "
        f"{report.residuals.p50:.4f} {report.residuals.p90:.4f} {report.residuals.max:.4f}"
    )


def cmd_calibrate(args) -> int:
    rc = load_run_config(args.config, _flag_values(args))
    t, steer, speed = formats.read_odometry(args.odom)
    if len(t) == 0:
        raise EvCalibError("insufficient overlap")
    series = body_velocity_series(t, steer, speed)
    v_o = filter_usable(
        series, v_min=rc.v_min, steer_rate_max=rc.steer_rate_max, window=rc.rate_window
    )
    v_e = formats.read_headings(args.headings)

    if args.baseline == "handeye":
        report = _run_handeye(v_o, v_e)
    else:
        report = calibrate(v_o, v_e, rc.calibration_config(skip_temporal=args.no_temporal))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_report(out / "report.json", report)
    rows = np.stack([report.curve.lags, report.curve.values], axis=1).reshape(-1, 2)
    formats._write_table(out / "trace_curve.csv", TRACE_HEADER, rows)
    plots.plot_trace_curve(report, out / "trace_curve.png")
    _print_report(report)
    print(f"wrote {out / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _eval_single(args) -> int:
    report = formats.read_report(args.report)
    t_offset, r_gt = formats.read_ground_truth(args.truth)
    rot_err = rotation_error_deg(r_gt, report.r_oe)
    t_err_ms = (report.t_d - t_offset) * 1000.0
    print(f"rotation_error_deg={rot_err:.6f}")
    print(f"temporal_error_ms={t_err_ms:.3f}")
    if args.out:
        formats._dump_json(
            args.out, {"rotation_error_deg": rot_err, "temporal_error_ms": t_err_ms}
        )
    return 0


def _eval_batch(args) -> int:
    root = Path(args.batch)
    if not root.is_dir():
        raise FileNotFoundError(str(root))
    results: list[batch_mod.TrialResult] = []
    for group_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for trial_index, trial_dir in enumerate(sorted(p for p in group_dir.iterdir() if p.is_dir())):
            truth_path = trial_dir / "ground_truth.json"
            if not truth_path.exists():
                continue
            t_offset, r_gt = formats.read_ground_truth(truth_path)
            for report_path in sorted(trial_dir.glob("report*.json")):
                report = formats.read_report(report_path)
                results.append(
                    batch_mod.TrialResult(
                        group_dir.name,
                        report.method,
                        trial_index,
                        rotation_error_deg(r_gt, report.r_oe),
                        report.t_d - t_offset,
                    )
                )
    if not results:
        raise FormatError("no trial directories with ground_truth.json and report*.json found")
    return _emit_summary(args, batch_mod.aggregate(results))


def _eval_sweep(args) -> int:
    if args.sweep == "fig5":
        groups, methods = batch_mod.sweep_groups(), batch_mod.METHODS
    else:
        groups, methods = batch_mod.finger_groups(), ("vc",)
    results = batch_mod.run_sweep(
        groups,
        n_trials=args.trials,
        base_seed=args.seed if args.seed is not None else 0,
        methods=methods,
        max_workers=args.workers,
    )
    return _emit_summary(args, batch_mod.aggregate(results))


def _emit_summary(args, rows) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    batch_mod.write_summary(out, rows)
    plots.plot_batch(rows, out.with_suffix(".png"))
    print(batch_mod.SUMMARY_HEADER)
    for g, m, p25, p50, p75 in rows:
        print(f"{g},{m},{p25:.6f},{p50:.6f},{p75:.6f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    modes = [bool(args.report), bool(args.batch), bool(args.sweep)]
    if sum(modes) != 1:
        raise FormatError("pass exactly one of --report, --batch, --sweep")
    if args.report:
        if not args.truth:
            raise FormatError("--report requires --truth")
        return _eval_single(args)
    if not args.out:
        raise FormatError("--batch/--sweep require --out")
    if args.batch:
        return _eval_batch(args)
    return _eval_sweep(args)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evcalib",
        description="Spatio-temporal calibration between an event camera and wheel odometry.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    p.add_argument("--shape", choices=[s.value for s in Shape], default="polyline")
    p.add_argument("--radius-m", type=float, default=10.0)
    p.add_argument("--rate", type=float, default=0.05, help="arc angular rate, rad/s")
    p.add_argument("--turn-deg", type=float, default=60.0)
    p.add_argument("--segment-m", type=float, default=10.0)
    p.add_argument("--fingers", type=int, default=3)
    p.add_argument("--finger-length-m", type=float, default=5.0)
    p.add_argument("--finger-spread-deg", type=float, default=30.0)
    p.add_argument("--speed", type=float, default=0.5)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--noise", type=float, default=0.0, help="velocity noise sigma, m/s")
    p.add_argument("--t-offset", type=float, default=0.0)
    p.add_argument("--yaw-deg", type=float, default=0.0)
    p.add_argument("--pitch-deg", type=float, default=0.0)
    p.add_argument("--roll-deg", type=float, default=0.0)
    p.add_argument("--random-rotation", action="store_true")
    p.add_argument("--events-duration", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_config_flags(p, ["seed"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("headings", help="estimate camera headings from events")
    p.add_argument("--events", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(
        p,
        [
            "tau",
            "k",
            "decrement",
            "theta_ts",
            "theta_tos",
            "pair_spacing",
            "max_corners",
            "match_ratio",
            "ransac_iterations",
            "epipolar_tol",
            "min_inlier_ratio",
            "seed",
        ],
    )
    p.set_defaults(func=cmd_headings)

    p = sub.add_parser("calibrate", help="solve temporal offset and extrinsic rotation")
    p.add_argument("--odom", required=True)
    p.add_argument("--headings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-temporal", action="store_true", help="skip the offset search")
    p.add_argument("--baseline", choices=["handeye"], default=None)
    _add_config_flags(
        p,
        [
            "t_max",
            "t_step",
            "ridge",
            "irls_delta",
            "max_gap",
            "v_min",
            "steer_rate_max",
            "rate_window",
            "seed",
        ],
    )
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="score reports against ground truth")
    p.add_argument("--report", help="single report.json to score")
    p.add_argument("--truth", help="ground_truth.json for --report")
    p.add_argument("--batch", help="root of group/trial directories to aggregate")
    p.add_argument("--sweep", choices=["fig5", "fingers"], help="run the shipped experiment")
    p.add_argument("--trials", type=int, default=batch_mod.DEFAULT_TRIALS)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="summary CSV (batch/sweep) or eval JSON (single)")
    _add_config_flags(p, ["seed"])
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 2
    except EvCalibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
