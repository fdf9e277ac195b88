"""Synthetic planar trajectories with paired noisy velocity observations.

An omni-directional platform translating without yaw is simulated on one of
three command profiles: a constant-rate arc, a polyline with instantaneous
corner turns, and a finger fan of out-and-back straight legs.  Both sensors
observe the same true velocity: the body side directly, the camera side
through the ground-truth extrinsic rotation.  Each side gets independent
Gaussian velocity noise, is sampled on its own clock, and the camera clock
runs behind the body clock by a configurable offset.  Positions integrate
the noisy velocities (dead reckoning), so the two trajectories drift apart
over time; pose orientations follow the commanded heading so that pose-
based baselines have rotational excitation to work with.

``generate_event_scene`` additionally renders an ideal pure-translation
event stream by tracking pixel-boundary crossings of a projected point
cloud, for exercising the visual front end without a real sensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from evcalib.core import (
    EventStream,
    Frame,
    Rotation3,
    TrajectoryPose,
    VelocitySeries,
    _readonly,
    rotz,
)
from evcalib.heading import CameraIntrinsics


class Shape(Enum):
    ARC = "arc"
    POLYLINE = "polyline"
    FINGER = "finger"


@dataclass(frozen=True)
class SimConfig:
    shape: Shape = Shape.POLYLINE
    radius: float = 10.0  # arc radius, m
    rate: float = 0.05  # arc angular rate of the travel direction, rad/s
    turn: float = math.pi / 3  # polyline corner angle, rad
    segment: float = 10.0  # polyline segment length, m
    fingers: int = 3
    finger_length: float = 5.0  # m, one-way
    finger_spread: float = math.pi / 6  # angle between adjacent fingers, rad
    speed: float = 0.5  # commanded speed for polyline/finger, m/s
    dt: float = 0.01  # body-side sample period, s
    dt_e: float | None = None  # camera-side sample period; None -> 1.31 * dt
    duration: float = 60.0
    sigma_o: float = 0.0  # body velocity noise, m/s (planar)
    sigma_e: float = 0.0  # camera velocity noise, m/s (3-D)
    t_offset: float = 0.0  # camera clock lag behind the body clock, s
    r_gt: Rotation3 = field(default_factory=Rotation3.identity)
    seed: int = 0
    pose_dt: float | None = None  # body pose subsampling interval; None -> every sample

    def __post_init__(self):
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")
        if self.pose_dt is not None and self.pose_dt <= 0:
            raise ValueError("pose_dt must be positive")
        if self.shape is Shape.ARC and (self.radius <= 0 or self.rate == 0.0):
            raise ValueError("arc needs positive radius and nonzero rate")
        if self.shape is Shape.POLYLINE and (self.segment <= 0 or self.speed <= 0):
            raise ValueError("polyline needs positive segment and speed")
        if self.shape is Shape.FINGER and (self.fingers < 1 or self.finger_length <= 0 or self.speed <= 0):
            raise ValueError("finger needs at least one finger and positive length/speed")
        if self.dt_e is None:
            # camera clock deliberately incommensurate with the body clock
            object.__setattr__(self, "dt_e", 1.31 * self.dt)


@dataclass(frozen=True, eq=False)
class SimDataset:
    """One simulated trial: truth, noisy observations, and drifting poses."""

    config: SimConfig
    v_o_true: VelocitySeries
    v_o_noisy: VelocitySeries
    v_e_noisy: VelocitySeries
    traj_o: list[TrajectoryPose]
    traj_e: list[TrajectoryPose]
    t_offset: float
    r_gt: Rotation3


# ---------------------------------------------------------------------------
# command profiles


def command_speed(cfg: SimConfig) -> float:
    """Commanded speed: arcs move at radius * |rate|, others as configured."""
    if cfg.shape is Shape.ARC:
        return cfg.radius * abs(cfg.rate)
    return cfg.speed


def heading_angle(cfg: SimConfig, t: np.ndarray) -> np.ndarray:
    """Planar travel-direction angle at times ``t`` for the command profile."""
    t = np.asarray(t, dtype=np.float64)
    if cfg.shape is Shape.ARC:
        return math.pi / 2 + cfg.rate * t
    if cfg.shape is Shape.POLYLINE:
        t_seg = cfg.segment / cfg.speed
        return np.floor(t / t_seg) * cfg.turn
    # finger fan: out-and-back legs, stepping the fan angle between fingers
    t_leg = cfg.finger_length / cfg.speed
    leg = np.floor(t / t_leg).astype(np.int64)
    finger = (leg // 2) % cfg.fingers
    outbound = leg % 2 == 0
    return finger * cfg.finger_spread + np.where(outbound, 0.0, math.pi)


def profile_velocity(cfg: SimConfig, t: np.ndarray) -> np.ndarray:
    """True body-frame velocity vectors (N, 3) at times ``t``."""
    psi = heading_angle(cfg, t)
    v = command_speed(cfg)
    return np.stack([v * np.cos(psi), v * np.sin(psi), np.zeros_like(psi)], axis=1)


def generate_velocity_profile(cfg: SimConfig) -> VelocitySeries:
    """Noise-free body velocity series on the body-side clock.

    Samples sit at half-phase (k + 1/2) dt so command changes whose times
    are multiples of dt fall mid-interval: a sample exactly on a corner
    would register the direction step half a sample early or late, biasing
    lag recovery by dt/2 at every corner of a grid-aligned polyline.
    """
    n = int(math.floor(cfg.duration / cfg.dt))
    t = (np.arange(n) + 0.5) * cfg.dt
    vel = profile_velocity(cfg, t)
    speed = np.linalg.norm(vel, axis=1)
    return VelocitySeries(t, vel / speed[:, None], speed, Frame.BODY)


# ---------------------------------------------------------------------------
# corruption


def _dead_reckon(vel: np.ndarray, dt_steps: np.ndarray) -> np.ndarray:
    """Positions p_i = p_{i-1} + v_{i-1} dt, starting at the origin."""
    steps = vel[:-1] * dt_steps[:, None]
    return np.concatenate([np.zeros((1, 3)), np.cumsum(steps, axis=0)])


def _pose_indices(n: int, dt: float, pose_dt: float | None) -> range:
    # Half-stride phase keeps subsampled poses away from segment corners,
    # which otherwise coincide with pose times and flip between neighbours.
    stride = 1 if pose_dt is None else max(1, round(pose_dt / dt))
    return range(stride // 2, n, stride)


def corrupt_and_offset(v_true: VelocitySeries, cfg: SimConfig) -> SimDataset:
    """Observe one true profile through both sensors.

    Body side: planar Gaussian noise on the velocity vectors at the body
    clock.  Camera side: the true velocity rotated by r_gt^T plus 3-D
    Gaussian noise, sampled on the camera clock and reported with
    timestamps lagging by ``t_offset`` (so recovering the offset means
    sampling the body series at reported time + t_offset).  Both sides are
    dead-reckoned into drifting trajectories; body pose orientations track
    the commanded heading, camera pose orientations track the yaw implied
    by the camera's own noisy bearing.
    """
    rng = np.random.default_rng(cfg.seed)
    r_e = cfg.r_gt.m.T  # camera <- body

    t_o = v_true.t
    vel_o = v_true.directions * v_true.speeds[:, None]
    noise_o = np.zeros_like(vel_o)
    noise_o[:, :2] = rng.normal(0.0, cfg.sigma_o, size=(len(t_o), 2)) if cfg.sigma_o > 0 else 0.0
    vel_o_noisy = vel_o + noise_o
    speed_o = np.linalg.norm(vel_o_noisy, axis=1)
    v_o_noisy = VelocitySeries(t_o, vel_o_noisy / speed_o[:, None], speed_o, Frame.BODY)

    n_e = int(math.floor(cfg.duration / cfg.dt_e)) + 1
    t_e_true = np.arange(n_e) * cfg.dt_e
    vel_e = profile_velocity(cfg, t_e_true) @ r_e.T
    if cfg.sigma_e > 0:
        vel_e = vel_e + rng.normal(0.0, cfg.sigma_e, size=vel_e.shape)
    speed_e = np.linalg.norm(vel_e, axis=1)
    t_e_reported = t_e_true - cfg.t_offset
    v_e_noisy = VelocitySeries(
        t_e_reported, vel_e / speed_e[:, None], np.full(n_e, np.nan), Frame.CAMERA
    )

    # Positions drift through dead reckoning of the noisy velocities; pose
    # orientations track the commanded yaw so relative motions always carry
    # rotational excitation.
    psi_o = heading_angle(cfg, t_o)
    pos_o = _dead_reckon(vel_o_noisy, np.diff(t_o))
    keep_o = _pose_indices(len(t_o), cfg.dt, cfg.pose_dt)
    traj_o = [TrajectoryPose(float(t_o[i]), Rotation3(rotz(psi_o[i])), pos_o[i]) for i in keep_o]

    # Camera positions dead-reckon the noisy bearings at unit speed: the
    # camera side observes direction only (its series carries no speeds), so
    # its integrated trajectory has no metric scale.  Orientations carry the
    # same bearing noise: each pose's yaw is the travel direction the noisy
    # bearing implies, not the commanded one.  Poses stay at full rate so
    # nearest-time pairing against the subsampled body poses is never off by
    # more than half a camera step.
    bearings = vel_e / speed_e[:, None]
    planar = bearings @ r_e
    psi_e = np.arctan2(planar[:, 1], planar[:, 0])
    pos_e = _dead_reckon(bearings, np.diff(t_e_true))
    traj_e = [
        TrajectoryPose(float(t_e_reported[i]), Rotation3(r_e @ rotz(psi_e[i]) @ r_e.T), pos_e[i])
        for i in range(n_e)
    ]

    return SimDataset(cfg, v_true, v_o_noisy, v_e_noisy, traj_o, traj_e, cfg.t_offset, cfg.r_gt)


def simulate(cfg: SimConfig) -> SimDataset:
    """Generate and corrupt one trial in a single call."""
    return corrupt_and_offset(generate_velocity_profile(cfg), cfg)


# ---------------------------------------------------------------------------
# event scene


def make_point_cloud(
    intrinsics: CameraIntrinsics,
    n_points: int = 500,
    depth_range: tuple[float, float] = (2.0, 5.0),
    seed: int = 0,
    margin_px: float = 40.0,
) -> np.ndarray:
    """Random static points covering the field of view at varied depths."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(margin_px, intrinsics.width - margin_px, n_points)
    v = rng.uniform(margin_px, intrinsics.height - margin_px, n_points)
    z = rng.uniform(*depth_range, n_points)
    x = (u - intrinsics.cx) / intrinsics.fx * z
    y = (v - intrinsics.cy) / intrinsics.fy * z
    return np.stack([x, y, z], axis=1)


def generate_event_scene(
    direction,
    speed: float,
    points: np.ndarray,
    intrinsics: CameraIntrinsics,
    duration: float,
    *,
    boundary_step_px: float = 1.0,
    jitter_sigma: float = 0.0,
    salt_rate: float = 0.0,
    seed: int = 0,
) -> EventStream:
    """Ideal events from a camera translating through a static point cloud.

    Each point's projection is tracked in fine time steps; an event fires
    whenever the projection crosses a pixel-boundary multiple of
    ``boundary_step_px`` in either image axis, timestamped by linear
    interpolation of the crossing instant and signed by the crossing
    direction.  Optional timestamp jitter and uniform salt events model
    sensor imperfections; with both at zero the stream is a pure function
    of the geometry.
    """
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    direction = direction / np.linalg.norm(direction)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if duration <= 0:
        raise ValueError("duration must be positive")

    def pixels_at(t: float) -> np.ndarray:
        rel = points - direction * speed * t
        if np.any(rel[:, 2] <= 0.1):
            raise ValueError("points must stay in front of the camera")
        return intrinsics.project(rel)

    # fine substep so no projection moves more than ~0.4 px per step
    probe = np.linspace(0.0, duration, 5)
    px_speed = 1e-6
    for t0, t1 in zip(probe[:-1], probe[1:]):
        d = np.abs(pixels_at(t1) - pixels_at(t0)).max() / (t1 - t0)
        px_speed = max(px_speed, float(d))
    dt_sub = float(np.clip(0.4 * boundary_step_px / px_speed, 1e-5, 5e-3))
    n_steps = int(math.ceil(duration / dt_sub))

    ts, xs, ys, ps = [], [], [], []
    prev = pixels_at(0.0) / boundary_step_px
    for step in range(n_steps):
        t0 = step * dt_sub
        t1 = min((step + 1) * dt_sub, duration)
        cur = pixels_at(t1) / boundary_step_px
        for axis in (0, 1):
            a0, a1 = prev[:, axis], cur[:, axis]
            moved = np.flatnonzero(np.floor(a0) != np.floor(a1))
            for i in moved:
                lo, hi = (a0[i], a1[i]) if a1[i] > a0[i] else (a1[i], a0[i])
                rising = a1[i] > a0[i]
                first = math.floor(lo) + 1
                for m in range(first, math.floor(hi) + 1):
                    frac = (m - a0[i]) / (a1[i] - a0[i])
                    t_c = t0 + frac * (t1 - t0)
                    u = prev[i, 0] + frac * (cur[i, 0] - prev[i, 0])
                    v = prev[i, 1] + frac * (cur[i, 1] - prev[i, 1])
                    if axis == 0:
                        px, py = (m if rising else m - 1), math.floor(v)
                    else:
                        px, py = math.floor(u), (m if rising else m - 1)
                    px, py = int(px * boundary_step_px), int(py * boundary_step_px)
                    if 0 <= px < intrinsics.width and 0 <= py < intrinsics.height:
                        ts.append(t_c)
                        xs.append(px)
                        ys.append(py)
                        ps.append(rising)
        prev = cur

    t_arr = np.array(ts)
    x_arr = np.array(xs, dtype=np.int32)
    y_arr = np.array(ys, dtype=np.int32)
    p_arr = np.array(ps, dtype=bool)

    rng = np.random.default_rng(seed)
    if jitter_sigma > 0 and len(t_arr):
        t_arr = np.clip(t_arr + rng.normal(0.0, jitter_sigma, len(t_arr)), 0.0, duration)
    if salt_rate > 0:
        n_salt = rng.poisson(salt_rate * duration)
        t_arr = np.concatenate([t_arr, rng.uniform(0.0, duration, n_salt)])
        x_arr = np.concatenate([x_arr, rng.integers(0, intrinsics.width, n_salt, dtype=np.int32)])
        y_arr = np.concatenate([y_arr, rng.integers(0, intrinsics.height, n_salt, dtype=np.int32)])
        p_arr = np.concatenate([p_arr, rng.random(n_salt) < 0.5])

    order = np.argsort(t_arr, kind="stable")
    return EventStream(
        intrinsics.width, intrinsics.height, t_arr[order], x_arr[order], y_arr[order], p_arr[order]
    )
