"""Body-frame velocity from all-wheel-steering odometry.

During pure translation every wheel shares one steering angle and one
speed, so the body velocity is simply the mean speed pointed along the
circular-mean steering angle, with zero vertical component.  Logs where the
wheels disagree describe turning or slipping and are dropped before
calibration, as are stationary stretches and steering transitions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from evcalib.core import EvCalibError, Frame, VelocitySample, VelocitySeries, _readonly

log = logging.getLogger(__name__)

DEFAULT_V_MIN = 0.05
DEFAULT_STEER_RATE_MAX = 0.1
DEFAULT_RATE_WINDOW = 0.2
DEFAULT_STEER_AGREEMENT_DEG = 2.0


@dataclass(frozen=True, eq=False)
class WheelState:
    """One odometry record: four steering angles (rad) and wheel speeds (m/s),
    ordered front-left, front-right, rear-left, rear-right."""

    t: float
    steer: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        for name in ("steer", "speed"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(4).copy()
            object.__setattr__(self, name, _readonly(v))


def _circular_mean(angles: np.ndarray) -> float:
    s, c = np.sin(angles).mean(), np.cos(angles).mean()
    if math.hypot(s, c) < 1e-9:
        raise EvCalibError("inconsistent steering")
    return math.atan2(s, c)


def _max_pairwise_angle(angles: np.ndarray) -> float:
    """Largest pairwise circular difference within one record, radians."""
    a = angles[:, None] - angles[None, :]
    return float(np.abs(np.arctan2(np.sin(a), np.cos(a))).max())


def body_velocity(w: WheelState) -> VelocitySample:
    """Planar body velocity sample for one wheel state.

    The direction is (cos, sin, 0) of the circular-mean steering angle,
    flipped when the mean wheel speed is negative; the stored speed is the
    absolute mean speed.  Raises for diametrically opposed steering, where
    the circular mean is undefined.
    """
    theta = _circular_mean(w.steer)
    v = float(w.speed.mean())
    direction = np.array([math.cos(theta), math.sin(theta), 0.0])
    if v < 0:
        direction = -direction
    return VelocitySample(w.t, direction, abs(v))


def body_velocity_series(
    t: np.ndarray,
    steer: np.ndarray,
    speed: np.ndarray,
    *,
    steer_agreement_deg: float = DEFAULT_STEER_AGREEMENT_DEG,
) -> VelocitySeries:
    """Body velocity series from odometry arrays (t (N,), steer/speed (N, 4)).

    Records whose steering angles disagree beyond ``steer_agreement_deg``
    are not pure translation and are dropped (logged at debug level), as are
    records with an undefined circular mean.
    """
    t = np.asarray(t, dtype=np.float64).ravel()
    steer = np.asarray(steer, dtype=np.float64).reshape(len(t), 4)
    speed = np.asarray(speed, dtype=np.float64).reshape(len(t), 4)

    # circular mean of the four steering angles, vectorized
    s, c = np.sin(steer).mean(axis=1), np.cos(steer).mean(axis=1)
    resultant = np.hypot(s, c)
    theta = np.arctan2(s, c)

    # largest pairwise circular disagreement per record
    diff = steer[:, :, None] - steer[:, None, :]
    spread = np.abs(np.arctan2(np.sin(diff), np.cos(diff))).max(axis=(1, 2))

    keep = (resultant >= 1e-9) & (spread <= math.radians(steer_agreement_deg))
    dropped = int(len(t) - keep.sum())
    if dropped:
        log.debug("dropped %d odometry records (not pure translation)", dropped)

    v = speed.mean(axis=1)
    sign = np.where(v < 0, -1.0, 1.0)
    dirs = np.stack([np.cos(theta) * sign, np.sin(theta) * sign, np.zeros_like(theta)], axis=1)
    return VelocitySeries(t[keep], dirs[keep], np.abs(v)[keep], Frame.BODY)


def filter_usable(
    series: VelocitySeries,
    v_min: float = DEFAULT_V_MIN,
    steer_rate_max: float = DEFAULT_STEER_RATE_MAX,
    window: float = DEFAULT_RATE_WINDOW,
) -> VelocitySeries:
    """Drop stationary samples and steering transitions.

    Samples slower than ``v_min`` go first.  The heading-angle rate is then
    estimated by a windowed linear fit of the unwrapped planar heading (the
    window also covers the neighborhood of a transition, so samples adjacent
    to a step change drop too), and samples whose rate magnitude exceeds
    ``steer_rate_max`` are removed.
    """
    if len(series) < 3:
        return series
    t = series.t
    phi = np.unwrap(np.arctan2(series.directions[:, 1], series.directions[:, 0]))

    dt = float(np.median(np.diff(t)))
    half_span = max(1, int(round(window / max(dt, 1e-9) / 2)))
    size = 2 * half_span + 1

    def win_mean(x):
        return uniform_filter1d(x, size=size, mode="nearest")

    # ordinary least squares slope of phi against t inside each window
    mt, mp = win_mean(t), win_mean(phi)
    cov = win_mean(t * phi) - mt * mp
    var = win_mean(t * t) - mt * mt
    rate = np.where(var > 1e-12, cov / np.maximum(var, 1e-12), 0.0)

    keep = (series.speeds >= v_min) & (np.abs(rate) <= steer_rate_max)
    return series.subset(keep)
