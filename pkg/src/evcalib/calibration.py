"""Spatio-temporal calibration from paired velocity-direction series.

The temporal offset between the two sensors is recovered by scanning a lag
grid and scoring each candidate with a trace correlation of the paired
direction sets.  That statistic is invariant to invertible linear maps of
either set - in particular to the unknown extrinsic rotation - so temporal
alignment decouples cleanly from the rotation estimate.  Once aligned, the
rotation taking camera directions to body directions is fit by an
iteratively reweighted orthogonal-Procrustes solve whose weights damp
outlier pairs; a closed-form solution from canonical correlation analysis
is kept for reference but is fragile when the motion is planar, because the
direction covariances are then rank-deficient.

All covariance inverses are ridge-regularized: planar motion concentrates
the direction sets on a great circle, so the third eigenvalue of every
auto-covariance is zero up to noise.  The ridge is specified relative to
the mean eigenvalue of the matrix it regularizes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from evcalib.core import (
    DEFAULT_MAX_GAP_S,
    EvCalibError,
    Rotation3,
    TrajectoryPose,
    VelocitySeries,
    _readonly,
    interpolate_directions,
    project_rotation,
    rotation_error_deg,
)

log = logging.getLogger(__name__)

DEFAULT_T_MAX = 0.5
DEFAULT_T_STEP = 0.005
DEFAULT_RIDGE = 1e-8
DEFAULT_IRLS_DELTA = 1e-4
DEFAULT_IRLS_TOL = 1e-9
DEFAULT_IRLS_MAX_ITER = 50
_TIE_TOL = 1e-12  # treat curve values this close as tied (flat curves)


@dataclass(frozen=True)
class CalibrationConfig:
    t_max: float = DEFAULT_T_MAX
    t_step: float = DEFAULT_T_STEP
    ridge: float = DEFAULT_RIDGE
    refine_peak: bool = True
    skip_temporal: bool = False
    max_gap: float = DEFAULT_MAX_GAP_S
    irls_delta: float = DEFAULT_IRLS_DELTA
    irls_tol: float = DEFAULT_IRLS_TOL
    irls_max_iter: int = DEFAULT_IRLS_MAX_ITER


@dataclass(frozen=True, eq=False)
class CovarianceTriple:
    """Auto- and cross-covariances of one lag-paired direction set."""

    auto_o: np.ndarray
    auto_e: np.ndarray
    cross: np.ndarray
    lag: float
    n: int

    def __post_init__(self):
        for name in ("auto_o", "auto_e", "cross"):
            m = np.asarray(getattr(self, name), dtype=np.float64).reshape(3, 3).copy()
            object.__setattr__(self, name, _readonly(m))


@dataclass(frozen=True, eq=False)
class CorrelationCurve:
    """Trace correlation sampled over the candidate lag grid."""

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        l = np.asarray(self.lags, dtype=np.float64).ravel().copy()
        v = np.asarray(self.values, dtype=np.float64).ravel().copy()
        if len(l) != len(v):
            raise ValueError("lag and value arrays must share one length")
        object.__setattr__(self, "lags", _readonly(l))
        object.__setattr__(self, "values", _readonly(v))


@dataclass(frozen=True)
class ResidualStats:
    """Percentiles of per-pair angular residuals, degrees."""

    p50: float
    p90: float
    max: float

    @classmethod
    def from_residuals(cls, residual_deg: np.ndarray) -> "ResidualStats":
        r = np.asarray(residual_deg, dtype=np.float64)
        return cls(float(np.percentile(r, 50)), float(np.percentile(r, 90)), float(r.max()))


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    t_d: float
    r_oe: Rotation3
    curve: CorrelationCurve
    n_pairs: int
    irls_iterations: int
    residuals: ResidualStats
    method: str = "vc"


# ---------------------------------------------------------------------------
# association and covariances


def associate_at_lag(
    v_o: VelocitySeries,
    v_e: VelocitySeries,
    t_d: float,
    max_gap: float = DEFAULT_MAX_GAP_S,
) -> tuple[np.ndarray, np.ndarray]:
    """Pair each camera sample at t with the body direction at t + t_d.

    Returns matched row stacks (O (N, 3), E (N, 3)); camera samples whose
    shifted time cannot be interpolated are dropped.
    """
    dirs, valid = interpolate_directions(v_o, v_e.t + t_d, max_gap)
    return dirs[valid], v_e.directions[valid]


def covariances_at_lag(
    v_o: VelocitySeries,
    v_e: VelocitySeries,
    t_d: float,
    max_gap: float = DEFAULT_MAX_GAP_S,
) -> CovarianceTriple:
    """Sample covariances of the direction pairs associated at lag ``t_d``.

    All three matrices are computed over the same index set with means
    subtracted and 1/(N-1) normalization.  The auto-covariances use the
    aligned sets directly (zero internal lag), which keeps the trace
    correlation exactly invariant to linear maps of either side.
    """
    o, e = associate_at_lag(v_o, v_e, t_d, max_gap)
    n = len(o)
    if n < 3:
        raise EvCalibError("insufficient overlap")
    oc = o - o.mean(axis=0)
    ec = e - e.mean(axis=0)
    norm = 1.0 / (n - 1)
    return CovarianceTriple(norm * oc.T @ oc, norm * ec.T @ ec, norm * oc.T @ ec, t_d, n)


def _regularized(a: np.ndarray, ridge: float) -> np.ndarray:
    """Add a ridge scaled by the mean eigenvalue (absolute fallback when 0)."""
    if ridge == 0.0:
        return a
    scale = float(np.trace(a)) / 3.0
    return a + (ridge * scale if scale > 0 else ridge) * np.eye(3)


def trace_correlation(c: CovarianceTriple, ridge: float = DEFAULT_RIDGE) -> float:
    """Correlation statistic sqrt(Tr(Ao^-1 C Ae^-1 C^T) / 3), clamped to [0, 1].

    Equals the root mean square of the three canonical correlation
    coefficients between the paired sets, so it is invariant to invertible
    linear transforms of either set.  Planar motion caps it at sqrt(2/3)
    because the third canonical direction carries no variance.  With
    ``ridge`` zero a singular auto-covariance raises instead of inverting.
    """
    ao = _regularized(c.auto_o, ridge)
    ae = _regularized(c.auto_e, ridge)
    if ridge == 0.0:
        for m in (ao, ae):
            if np.linalg.matrix_rank(m, tol=1e-12) < 3:
                raise EvCalibError("singular covariance")
    try:
        left = np.linalg.solve(ao, c.cross)
        right = np.linalg.solve(ae, c.cross.T)
    except np.linalg.LinAlgError as exc:
        raise EvCalibError("singular covariance") from exc
    r2 = float(np.trace(left @ right)) / 3.0
    return math.sqrt(min(1.0, max(0.0, r2)))


def canonical_coefficients(c: CovarianceTriple, r_oe: Rotation3, ridge: float = DEFAULT_RIDGE) -> np.ndarray:
    """Per-axis correlation coefficients induced by a candidate rotation.

    Axis i correlates the body-set component along e_i with the camera-set
    component along the i-th column of R_oe^T; for the true rotation on
    noise-free data each planar coefficient approaches 1.  Denominators use
    the same ridge regularization as the trace correlation.
    """
    ao = _regularized(c.auto_o, ridge)
    ae = _regularized(c.auto_e, ridge)
    rho = np.empty(3)
    for i in range(3):
        s = np.zeros(3)
        s[i] = 1.0
        r = r_oe.m.T[:, i]
        num = float(s @ c.cross @ r)
        den = math.sqrt(float(s @ ao @ s) * float(r @ ae @ r))
        rho[i] = num / den if den > 0 else 0.0
    return rho


# ---------------------------------------------------------------------------
# temporal search


def find_temporal_offset(
    v_o: VelocitySeries,
    v_e: VelocitySeries,
    t_max: float = DEFAULT_T_MAX,
    t_step: float = DEFAULT_T_STEP,
    ridge: float = DEFAULT_RIDGE,
    *,
    max_gap: float = DEFAULT_MAX_GAP_S,
    refine: bool = True,
) -> tuple[float, CorrelationCurve]:
    """Scan lags in [-t_max, t_max] and return the best one with its curve.

    Lags that leave fewer than three associated pairs are skipped.  Exact
    score ties break toward the smaller |lag|, so featureless (flat) curves
    resolve to zero offset rather than an arbitrary grid point.  When
    ``refine`` is set and the peak is interior, a parabola through the peak
    and its neighbors gives a sub-step estimate.
    """
    if t_max <= 0 or t_step <= 0:
        raise ValueError("t_max and t_step must be positive")
    n_steps = int(round(t_max / t_step))
    lags = np.arange(-n_steps, n_steps + 1) * t_step
    values = np.full(len(lags), np.nan)
    for i, lag in enumerate(lags):
        try:
            values[i] = trace_correlation(covariances_at_lag(v_o, v_e, lag, max_gap), ridge)
        except EvCalibError:
            continue
    valid = np.isfinite(values)
    if not np.any(valid):
        raise EvCalibError("no valid lag")

    best_value = np.nanmax(values)
    tied = valid & (values >= best_value - _TIE_TOL)
    candidates = np.flatnonzero(tied)
    best = candidates[np.lexsort((lags[candidates], np.abs(lags[candidates])))[0]]

    t_d = float(lags[best])
    if refine and 0 < best < len(lags) - 1 and valid[best - 1] and valid[best + 1]:
        y0, y1, y2 = values[best - 1], values[best], values[best + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom < -_TIE_TOL:  # strictly concave peak
            shift = 0.5 * (y0 - y2) / denom
            t_d += float(np.clip(shift, -1.0, 1.0)) * t_step
    return t_d, CorrelationCurve(lags[valid], values[valid])


# ---------------------------------------------------------------------------
# rotation solvers


def rotation_cca_closed_form(c: CovarianceTriple, ridge: float = DEFAULT_RIDGE) -> Rotation3:
    """Closed-form rotation from the whitened cross-covariance SVD.

    With U S V^T = svd((Ae + ridge I)^-1 C^T), the camera-to-body rotation
    is (U diag(1, 1, det(U V^T)) V^T)^T; the determinant factor forces a
    proper rotation.  Sound when both covariances are well-conditioned, but
    under planar motion the rank-deficient normalization makes the result
    numerically unstable - prefer the reweighted solver below.
    """
    ae = _regularized(c.auto_e, ridge)
    try:
        m = np.linalg.solve(ae, c.cross.T)
    except np.linalg.LinAlgError as exc:
        raise EvCalibError("singular covariance") from exc
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    r_oe_t = u @ np.diag([1.0, 1.0, d]) @ vt
    return Rotation3(r_oe_t.T)


def _rank_deficient(dirs: np.ndarray, tol_deg: float = 0.5) -> bool:
    """True when all directions are parallel within ``tol_deg`` (sign-blind)."""
    scatter = dirs.T @ dirs
    w, v = np.linalg.eigh(scatter)
    axis = v[:, -1]
    return bool(np.all(np.abs(dirs @ axis) > math.cos(math.radians(tol_deg))))


def _procrustes_rotation(o: np.ndarray, e: np.ndarray, weights: np.ndarray) -> Rotation3:
    """Weighted orthogonal Procrustes: rotation R minimizing sum w |o - R e|^2."""
    h = (o * weights[:, None]).T @ e
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    return Rotation3(u @ np.diag([1.0, 1.0, d]) @ vt)


def rotation_irls(
    pairs: tuple[np.ndarray, np.ndarray],
    delta: float = DEFAULT_IRLS_DELTA,
    max_iter: int = DEFAULT_IRLS_MAX_ITER,
    tol: float = DEFAULT_IRLS_TOL,
) -> tuple[Rotation3, ResidualStats, int]:
    """Robust camera-to-body rotation by iteratively reweighted alignment.

    Starts from unit weights (one iteration therefore reproduces the
    unweighted closed-form alignment exactly), then reweights each pair by
    the inverse of its current residual norm, floored at ``delta`` - an L1
    influence that suppresses mismatched pairs.  Stops when the rotation
    update falls below ``tol`` radians or after ``max_iter`` iterations.

    Returns the rotation, angular-residual percentiles in degrees, and the
    number of iterations used.
    """
    o, e = (np.asarray(a, dtype=np.float64).reshape(-1, 3) for a in pairs)
    if len(o) != len(e):
        raise ValueError("pair stacks must share one length")
    if len(o) < 2 or _rank_deficient(o) or _rank_deficient(e):
        raise EvCalibError("degenerate directions")
    if delta <= 0:
        raise ValueError("delta must be positive")

    weights = np.ones(len(o))
    rotation = _procrustes_rotation(o, e, weights)
    iterations = 1
    for _ in range(1, max_iter):
        residual = np.linalg.norm(o - e @ rotation.m.T, axis=1)
        weights = 1.0 / np.maximum(delta, residual)
        updated = _procrustes_rotation(o, e, weights)
        step = rotation.angle_to(updated)
        rotation = updated
        iterations += 1
        if step < tol:
            break

    cosines = np.clip(np.einsum("ij,ij->i", o, e @ rotation.m.T), -1.0, 1.0)
    residual_deg = np.degrees(np.arccos(cosines))
    return rotation, ResidualStats.from_residuals(residual_deg), iterations


# ---------------------------------------------------------------------------
# full calibration


def calibrate(
    v_o: VelocitySeries,
    v_e: VelocitySeries,
    config: CalibrationConfig | None = None,
) -> CalibrationReport:
    """Temporal offset plus camera-to-body rotation from two direction series.

    With ``skip_temporal`` the offset is pinned at zero (the correlation
    curve then holds the single zero-lag score) - the ablation variant.
    """
    cfg = config or CalibrationConfig()
    if len(v_o) < 3 or len(v_e) < 3:
        raise EvCalibError("insufficient overlap")
    if cfg.skip_temporal:
        t_d = 0.0
        try:
            r0 = trace_correlation(covariances_at_lag(v_o, v_e, 0.0, cfg.max_gap), cfg.ridge)
            curve = CorrelationCurve(np.array([0.0]), np.array([r0]))
        except EvCalibError:
            curve = CorrelationCurve(np.empty(0), np.empty(0))
        method = "vc-wota"
    else:
        t_d, curve = find_temporal_offset(
            v_o, v_e, cfg.t_max, cfg.t_step, cfg.ridge, max_gap=cfg.max_gap, refine=cfg.refine_peak
        )
        method = "vc"

    o, e = associate_at_lag(v_o, v_e, t_d, cfg.max_gap)
    if len(o) < 3:
        raise EvCalibError("insufficient overlap")
    rotation, residuals, iterations = rotation_irls(
        (o, e), cfg.irls_delta, cfg.irls_max_iter, cfg.irls_tol
    )
    return CalibrationReport(t_d, rotation, curve, len(o), iterations, residuals, method)


# ---------------------------------------------------------------------------
# hand-eye baseline


def _relative_motions(poses: list[TrajectoryPose]) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive relative motions as rotation (M,3,3) and translation (M,3)."""
    rs, ts = [], []
    for a, b in zip(poses[:-1], poses[1:]):
        ra = a.rotation.m
        rs.append(ra.T @ b.rotation.m)
        ts.append(ra.T @ (b.position - a.position))
    return np.array(rs), np.array(ts)


def _log_so3(r: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of one rotation matrix."""
    angle = math.acos(min(1.0, max(-1.0, (np.trace(r) - 1.0) / 2.0)))
    if angle < 1e-12:
        return np.zeros(3)
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    n = np.linalg.norm(axis)
    if n < 1e-12:
        # angle near pi: take the dominant eigenvector of (R + I)
        w, v = np.linalg.eigh((r + np.eye(3)) / 2.0)
        return v[:, -1] * angle
    return axis / n * angle


def handeye_baseline(
    traj_body: list[TrajectoryPose],
    traj_cam: list[TrajectoryPose],
) -> tuple[Rotation3, np.ndarray, ResidualStats]:
    """Classical hand-eye extrinsic estimate, for comparison.

    Forms relative-pose pairs (A_i, B_i) from consecutive poses of the two
    time-associated streams and minimizes sum |A_i X - X B_i|_F^2 over
    X = (R, t) by damped Gauss-Newton on a 6-parameter local step,
    initialized from closed-form alignment of the relative-rotation axes.
    Relative pairs need no shared world frame, but dead-reckoning noise
    and any uncompensated time offset skew every pair, and motion about a
    single fixed axis leaves the about-axis component of R unobservable
    (the initialization then decides it).

    Returns (rotation camera-to-body, translation, rotation-residual stats
    in degrees).
    """
    if len(traj_body) != len(traj_cam):
        raise ValueError("pose lists must have equal length")
    if len(traj_body) < 3:
        raise ValueError("need at least three poses")

    rel_a, ta = _relative_motions(traj_body)
    rel_b, tb = _relative_motions(traj_cam)
    alpha = np.array([_log_so3(r) for r in rel_a])
    beta = np.array([_log_so3(r) for r in rel_b])
    angles = np.linalg.norm(alpha, axis=1)
    if np.all(angles < math.radians(0.5)):
        raise EvCalibError("insufficient rotational excitation")

    # closed-form init: rotation aligning the relative-rotation axes
    informative = angles > math.radians(0.1)
    h = alpha[informative].T @ beta[informative]
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    r0 = u @ np.diag([1.0, 1.0, d]) @ vt

    def residuals(params):
        omega, trans = params[:3], params[3:]
        r = r0 @ _expm_so3(omega)
        rot_part = (rel_a @ r - r @ rel_b).reshape(len(rel_a), 9)
        t_part = (np.einsum("nij,j->ni", rel_a, trans) + ta) - (tb @ r.T + trans)
        # tiny ridge pins translation components the motion cannot observe
        # (planar trajectories constrain nothing along the rotation axes)
        return np.concatenate([rot_part.ravel(), t_part.ravel(), 1e-6 * trans])

    # rotationally symmetric paths leave a shallow valley in the in-plane
    # angle; tight tolerances make the solve run it to the actual optimum
    sol = scipy.optimize.least_squares(
        residuals, np.zeros(6), method="lm", ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=2000
    )
    rotation = project_rotation(r0 @ _expm_so3(sol.x[:3]))
    translation = sol.x[3:].copy()

    rot_resid = np.array(
        [
            rotation_error_deg(rel_a[i] @ rotation.m, rotation.m @ rel_b[i])
            for i in range(len(rel_a))
        ]
    )
    return rotation, translation, ResidualStats.from_residuals(rot_resid)


def _expm_so3(omega: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(omega))
    if angle < 1e-12:
        return np.eye(3)
    k = omega / angle
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)
