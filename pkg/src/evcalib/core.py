"""Shared geometry types, velocity time series, and rotation metrics.

Directions are unit 3-vectors stored as plain ndarrays; series types
validate unit norm and strictly increasing timestamps on construction and
freeze their buffers, so downstream code may share them across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

UNIT_TOL = 1e-9
DEFAULT_MAX_GAP_S = 0.2


class EvCalibError(RuntimeError):
    """A solver or pipeline stage could not produce a result."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def unit_vector(v, tol: float = 1e-12) -> np.ndarray:
    """Return v normalized to unit length; reject near-zero input."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = float(np.linalg.norm(v))
    if n < tol:
        raise ValueError("cannot normalize a near-zero vector")
    return v / n


# ---------------------------------------------------------------------------
# rotations


def rotz(angle: float) -> np.ndarray:
    """Rotation matrix about +z by ``angle`` radians."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues formula for a rotation of ``angle`` radians about ``axis``."""
    u = unit_vector(axis)
    k = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


@dataclass(frozen=True, eq=False)
class Rotation3:
    """Proper rotation in SO(3), validated on construction."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(3, 3).copy()
        if not np.allclose(m @ m.T, np.eye(3), atol=1e-9):
            raise ValueError("matrix is not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise ValueError("matrix determinant is not +1")
        object.__setattr__(self, "m", _readonly(m))

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def about_z(cls, angle: float) -> "Rotation3":
        return cls(rotz(angle))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation3":
        return cls(rotation_about(axis, angle))

    def inverse(self) -> "Rotation3":
        return Rotation3(self.m.T)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.m @ other.m)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate one vector (3,) or a stack of row vectors (N, 3)."""
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1:
            return self.m @ v
        return v @ self.m.T

    def angle_to(self, other: "Rotation3") -> float:
        """Geodesic distance in radians."""
        tr = float(np.trace(self.m.T @ other.m))
        return math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0)))


def random_rotation(rng: np.random.Generator) -> Rotation3:
    """Uniform random rotation (normalized Gaussian quaternion)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    m = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Rotation3(m)


def project_rotation(m: np.ndarray) -> Rotation3:
    """Nearest proper rotation to an arbitrary 3x3 matrix (Frobenius)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64).reshape(3, 3))
    d = np.sign(np.linalg.det(u @ vt))
    return Rotation3(u @ np.diag([1.0, 1.0, d]) @ vt)


def yaw_pitch_roll_deg(rotation: Rotation3) -> tuple[float, float, float]:
    """ZYX Euler angles of a rotation, in degrees."""
    m = rotation.m
    yaw = math.atan2(m[1, 0], m[0, 0])
    pitch = math.asin(min(1.0, max(-1.0, -m[2, 0])))
    roll = math.atan2(m[2, 1], m[2, 2])
    return tuple(math.degrees(a) for a in (yaw, pitch, roll))


def rotation_error_deg(r_gt, r_est) -> float:
    """Geodesic angle between two rotations, in degrees.

    Accepts ``Rotation3`` or raw 3x3 arrays; the arccos argument is clamped
    so that round-off near zero error cannot produce NaN.
    """
    a = r_gt.m if isinstance(r_gt, Rotation3) else np.asarray(r_gt, dtype=np.float64)
    b = r_est.m if isinstance(r_est, Rotation3) else np.asarray(r_est, dtype=np.float64)
    tr = float(np.trace(a.T @ b))
    return math.degrees(math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0))))


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    polarity: bool


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered event arrays for one sensor of size width x height."""

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).ravel().copy()
        x = np.asarray(self.x, dtype=np.int32).ravel().copy()
        y = np.asarray(self.y, dtype=np.int32).ravel().copy()
        p = np.asarray(self.polarity, dtype=bool).ravel().copy()
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValueError("event arrays must share one length")
        if len(t) > 1 and np.any(np.diff(t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if len(x) and (x.min() < 0 or x.max() >= self.width):
            raise ValueError("event x outside sensor width")
        if len(y) and (y.min() < 0 or y.max() >= self.height):
            raise ValueError("event y outside sensor height")
        for name, arr in (("t", t), ("x", x), ("y", y), ("polarity", p)):
            object.__setattr__(self, name, _readonly(arr))

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventStream":
        return cls(
            width,
            height,
            np.array([e.t for e in events], dtype=np.float64),
            np.array([e.x for e in events], dtype=np.int32),
            np.array([e.y for e in events], dtype=np.int32),
            np.array([e.polarity for e in events], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def events(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), bool(self.polarity[i]))


# ---------------------------------------------------------------------------
# velocity series


class Frame(Enum):
    BODY = "body"
    CAMERA = "camera"


@dataclass(frozen=True)
class VelocitySample:
    """One velocity-direction estimate; ``speed`` is None when scale-free."""

    t: float
    direction: np.ndarray
    speed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "direction", _readonly(unit_vector(self.direction)))


@dataclass(frozen=True, eq=False)
class VelocitySeries:
    """Unit direction samples over strictly increasing timestamps.

    ``speeds`` holds NaN where no metric speed is known (camera headings).
    """

    t: np.ndarray
    directions: np.ndarray
    speeds: np.ndarray
    frame: Frame

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).ravel().copy()
        d = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3).copy()
        s = np.asarray(self.speeds, dtype=np.float64).ravel().copy()
        if not (len(t) == len(d) == len(s)):
            raise ValueError("series arrays must share one length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if len(d):
            norms = np.linalg.norm(d, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("directions must be unit length")
            d /= norms[:, None]
        for name, arr in (("t", t), ("directions", d), ("speeds", s)):
            object.__setattr__(self, name, _readonly(arr))

    @classmethod
    def from_samples(cls, samples: Sequence[VelocitySample], frame: Frame) -> "VelocitySeries":
        return cls(
            np.array([s.t for s in samples], dtype=np.float64),
            np.array([s.direction for s in samples], dtype=np.float64).reshape(-1, 3),
            np.array([np.nan if s.speed is None else s.speed for s in samples]),
            frame,
        )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> Iterator[VelocitySample]:
        for i in range(len(self.t)):
            sp = float(self.speeds[i])
            yield VelocitySample(float(self.t[i]), self.directions[i], None if math.isnan(sp) else sp)

    def subset(self, mask: np.ndarray) -> "VelocitySeries":
        return VelocitySeries(self.t[mask], self.directions[mask], self.speeds[mask], self.frame)

    def shifted(self, dt: float) -> "VelocitySeries":
        return VelocitySeries(self.t + dt, self.directions, self.speeds, self.frame)


@dataclass(frozen=True, eq=False)
class TrajectoryPose:
    """Timestamped pose: rotation world<-sensor and position in world."""

    t: float
    rotation: Rotation3
    position: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3).copy()
        object.__setattr__(self, "position", _readonly(p))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.position
        return m


# ---------------------------------------------------------------------------
# interpolation


def interpolate_directions(
    series: VelocitySeries,
    t_query: np.ndarray,
    max_gap: float = DEFAULT_MAX_GAP_S,
) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate unit directions at many query times.

    Linear blend of the two bracketing samples, renormalized.  A query is
    invalid when it falls outside the series, the bracketing samples are more
    than ``max_gap`` seconds apart, or the blend is degenerate (antipodal
    neighbors).  Returns ``(dirs (M, 3), valid (M,))``; invalid rows are NaN.
    """
    q = np.asarray(t_query, dtype=np.float64).ravel()
    out = np.full((len(q), 3), np.nan)
    valid = np.zeros(len(q), dtype=bool)
    t = series.t
    if len(t) == 0 or len(q) == 0:
        return out, valid

    inside = (q >= t[0]) & (q <= t[-1])
    if not np.any(inside):
        return out, valid
    qi = q[inside]
    hi = np.searchsorted(t, qi, side="left")
    exact = t[np.minimum(hi, len(t) - 1)] == qi

    res = np.empty((len(qi), 3))
    ok = np.ones(len(qi), dtype=bool)
    res[exact] = series.directions[hi[exact]]

    lo = hi - 1
    blend = ~exact
    if np.any(blend):
        lo_b, hi_b = lo[blend], hi[blend]
        gap = t[hi_b] - t[lo_b]
        w = (qi[blend] - t[lo_b]) / gap
        v = (1.0 - w)[:, None] * series.directions[lo_b] + w[:, None] * series.directions[hi_b]
        n = np.linalg.norm(v, axis=1)
        good = (gap <= max_gap) & (n > 1e-9)
        v[good] /= n[good, None]
        res[blend] = v
        ok[blend] = good

    idx = np.flatnonzero(inside)
    out[idx[ok]] = res[ok]
    valid[idx[ok]] = True
    return out, valid


def interpolate_direction(
    series: VelocitySeries,
    t_query: float,
    max_gap: float = DEFAULT_MAX_GAP_S,
) -> np.ndarray | None:
    """Unit direction at one query time, or None when not interpolable."""
    dirs, valid = interpolate_directions(series, np.array([t_query]), max_gap)
    if not valid[0]:
        return None
    return dirs[0]
