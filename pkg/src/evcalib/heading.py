"""Camera linear-velocity direction estimation from event surfaces.

The front end renders combined surfaces at a fixed pair spacing, detects
Harris corners, matches 256-bit binary patch descriptors between the two
renders, and fits a pure-translation epipolar model.  Because the camera is
assumed not to rotate between the two renders, the essential matrix reduces
to the skew form [t]x and each correspondence constrains t to be orthogonal
to x1 cross x2; two non-degenerate correspondences determine t up to sign,
and the sign is fixed by requiring triangulated points in front of both
views.  The output is a unit direction per render pair - no metric scale.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import cv2
import numpy as np

from evcalib.core import EvCalibError, EventStream, Frame, VelocitySeries, _readonly
from evcalib.representation import SurfaceConfig, SurfaceMap, SurfaceRenderer

log = logging.getLogger(__name__)

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1)


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Pinhole model with radial-tangential distortion (k1, k2, p1, p2)."""

    fx: float
    fy: float
    cx: float
    cy: float
    dist: np.ndarray = field(default_factory=lambda: np.zeros(4))
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        d = np.asarray(self.dist, dtype=np.float64).reshape(4).copy()
        object.__setattr__(self, "dist", _readonly(d))

    def distort(self, xy: np.ndarray) -> np.ndarray:
        """Apply the distortion model to normalized coordinates (N, 2)."""
        k1, k2, p1, p2 = self.dist
        x, y = xy[:, 0], xy[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        return np.stack([xd, yd], axis=1)

    def normalize(self, px: np.ndarray) -> np.ndarray:
        """Undistorted normalized image coordinates for pixels (N, 2).

        Inverts the distortion by fixed-point iteration; exact for zero
        distortion, and accurate to well below a hundredth of a pixel for
        the mild coefficients this sensor class exhibits.
        """
        px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
        xd = (px[:, 0] - self.cx) / self.fx
        yd = (px[:, 1] - self.cy) / self.fy
        if not np.any(self.dist):
            return np.stack([xd, yd], axis=1)
        x, y = xd.copy(), yd.copy()
        k1, k2, p1, p2 = self.dist
        for _ in range(10):
            r2 = x * x + y * y
            radial = 1.0 + k1 * r2 + k2 * r2 * r2
            dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            x = (xd - dx) / radial
            y = (yd - dy) / radial
        return np.stack([x, y], axis=1)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (N, 3) to distorted pixels (N, 2)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        z = points[:, 2]
        if np.any(z <= 0):
            raise ValueError("points must lie in front of the camera")
        xy = points[:, :2] / z[:, None]
        xyd = self.distort(xy)
        return np.stack([xyd[:, 0] * self.fx + self.cx, xyd[:, 1] * self.fy + self.cy], axis=1)


@dataclass(frozen=True, eq=False)
class Correspondence:
    """One matched pair in undistorted normalized coordinates."""

    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        for name in ("p1", "p2"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(2).copy()
            object.__setattr__(self, name, _readonly(v))


@dataclass(frozen=True, eq=False)
class HeadingEstimate:
    """Unit translation direction for one render pair, with inlier stats."""

    t_mid: float
    direction: np.ndarray
    inlier_count: int
    inlier_ratio: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3).copy()
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("direction must be unit length")
        object.__setattr__(self, "direction", _readonly(d / n))


@dataclass(frozen=True)
class HeadingConfig:
    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    pair_spacing: float = 0.030
    warmup: float | None = None  # None -> one pair spacing
    max_corners: int = 300
    nms_radius: int = 5
    harris_block: int = 3
    harris_ksize: int = 3
    harris_k: float = 0.04
    harris_rel_threshold: float = 0.01
    patch: int = 31
    descriptor_bits: int = 256
    descriptor_seed: int = 20210503  # fixed: descriptors must agree across runs
    blur_sigma: float = 2.0
    match_ratio: float = 0.8
    ransac_iterations: int = 200
    epipolar_tol: float = 4e-3
    min_inlier_ratio: float = 0.3
    seed: int = 0


# ---------------------------------------------------------------------------
# detection


def detect_corners(
    surface: SurfaceMap,
    max_corners: int = 300,
    *,
    nms_radius: int = 5,
    block: int = 3,
    ksize: int = 3,
    k: float = 0.04,
    rel_threshold: float = 0.01,
) -> np.ndarray:
    """Harris corners on a rendered surface.

    Returns an array (n, 3) of rows (x, y, score) sorted by descending
    score, at most ``max_corners`` long, with non-maximum suppression of
    radius ``nms_radius``.  Empty array when no score clears the relative
    threshold.
    """
    if max_corners <= 0:
        raise ValueError("max_corners must be positive")
    img = surface.values.astype(np.float32)
    resp = cv2.cornerHarris(img, block, ksize, k)
    peak = float(resp.max())
    if peak <= 0:
        return np.empty((0, 3))
    # suppress non-maxima within the radius, then threshold
    size = 2 * nms_radius + 1
    maxed = cv2.dilate(resp, np.ones((size, size), dtype=np.uint8))
    keep = (resp >= maxed) & (resp > rel_threshold * peak)
    ys, xs = np.nonzero(keep)
    if len(xs) == 0:
        return np.empty((0, 3))
    scores = resp[ys, xs]
    order = np.argsort(-scores, kind="stable")
    px = xs[order].astype(np.float64)
    py = ys[order].astype(np.float64)
    _refine_subpixel(resp, xs[order], ys[order], px, py)
    # plateau responses tie across adjacent pixels, so several NMS survivors
    # collapse onto one refined apex; keep only the best-scored of each
    # cluster or the duplicates poison the matcher's ratio test
    pts = np.stack([px, py], axis=1)
    kept: list[int] = []
    for i in range(len(pts)):
        if kept:
            d2 = ((pts[kept] - pts[i]) ** 2).sum(axis=1)
            if float(d2.min()) < 2.25:
                continue
        kept.append(i)
        if len(kept) == max_corners:
            break
    sel = np.asarray(kept, dtype=np.int64)
    return np.stack([px[sel], py[sel], scores[order][sel]], axis=1)


def _refine_subpixel(resp: np.ndarray, xs: np.ndarray, ys: np.ndarray, px: np.ndarray, py: np.ndarray) -> None:
    """Shift integer peaks by the apex of a local quadratic fit, in place.

    Integer-only corners quantize the match displacement field to whole
    pixels, which erases sub-pixel flow components; the 3x3 paraboloid apex
    restores them.  Offsets are clamped to half a pixel and dropped where
    the local Hessian is not a proper peak.
    """
    h, w = resp.shape
    inner = (xs > 0) & (xs < w - 1) & (ys > 0) & (ys < h - 1)
    if not np.any(inner):
        return
    x, y = xs[inner], ys[inner]
    gx = 0.5 * (resp[y, x + 1] - resp[y, x - 1])
    gy = 0.5 * (resp[y + 1, x] - resp[y - 1, x])
    hxx = resp[y, x + 1] - 2.0 * resp[y, x] + resp[y, x - 1]
    hyy = resp[y + 1, x] - 2.0 * resp[y, x] + resp[y - 1, x]
    hxy = 0.25 * (
        resp[y + 1, x + 1] - resp[y + 1, x - 1] - resp[y - 1, x + 1] + resp[y - 1, x - 1]
    )
    det = hxx * hyy - hxy * hxy
    peak = (det > 0) & (hxx < 0)
    det = np.where(peak, det, 1.0)
    dx = np.where(peak, -(hyy * gx - hxy * gy) / det, 0.0)
    dy = np.where(peak, -(hxx * gy - hxy * gx) / det, 0.0)
    px[inner] += np.clip(dx, -0.5, 0.5)
    py[inner] += np.clip(dy, -0.5, 0.5)


@functools.lru_cache(maxsize=8)
def _brief_pattern(bits: int, patch: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed sampling pattern: ``bits`` point pairs inside a patch."""
    rng = np.random.default_rng(seed)
    half = patch // 2
    sigma = patch / 5.0
    pts = np.clip(np.round(rng.normal(0.0, sigma, size=(bits, 4))), -half, half).astype(np.int64)
    return pts[:, :2].copy(), pts[:, 2:].copy()


def compute_descriptors(
    surface: SurfaceMap,
    corners: np.ndarray,
    *,
    patch: int = 31,
    bits: int = 256,
    seed: int = 20210503,
    blur_sigma: float = 2.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Binary descriptors for corners that fit inside the image border.

    Each bit compares the smoothed surface at two fixed offsets around the
    corner.  Returns ``(packed (m, bits/8) uint8, kept-row indices (m,))``.
    """
    if bits % 8:
        raise ValueError("descriptor length must be a multiple of 8")
    half = patch // 2
    h, w = surface.values.shape
    xs = np.rint(corners[:, 0]).astype(np.int64)
    ys = np.rint(corners[:, 1]).astype(np.int64)
    keep = (xs >= half) & (xs < w - half) & (ys >= half) & (ys < h - half)
    idx = np.flatnonzero(keep)
    if len(idx) == 0:
        return np.empty((0, bits // 8), dtype=np.uint8), idx
    img = cv2.GaussianBlur(surface.values.astype(np.float32), (0, 0), blur_sigma)
    a, b = _brief_pattern(bits, patch, seed)
    cx, cy = xs[idx][:, None], ys[idx][:, None]
    va = img[cy + a[:, 1], cx + a[:, 0]]
    vb = img[cy + b[:, 1], cx + b[:, 0]]
    return np.packbits(va < vb, axis=1), idx


def _hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between packed descriptor rows."""
    x = np.bitwise_xor(a[:, None, :], b[None, :, :])
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(x).sum(axis=2, dtype=np.int32)
    return _POPCOUNT[x].sum(axis=2)


def match_features(
    surf_a: SurfaceMap,
    surf_b: SurfaceMap,
    corners_a: np.ndarray,
    corners_b: np.ndarray,
    intrinsics: CameraIntrinsics,
    *,
    config: HeadingConfig | None = None,
) -> list[Correspondence]:
    """Mutual nearest-neighbor descriptor matches as normalized pairs.

    A candidate survives only if it is the best match in both directions and
    its distance beats the second best by the ratio test.  Raises when fewer
    than two matches survive, since no translation model is solvable then.
    """
    cfg = config or HeadingConfig()
    desc_kw = dict(patch=cfg.patch, bits=cfg.descriptor_bits, seed=cfg.descriptor_seed, blur_sigma=cfg.blur_sigma)
    da, ia = compute_descriptors(surf_a, corners_a, **desc_kw)
    db, ib = compute_descriptors(surf_b, corners_b, **desc_kw)
    if len(ia) == 0 or len(ib) == 0:
        raise EvCalibError("insufficient matches")

    dist = _hamming(da, db)
    best_ab = np.argmin(dist, axis=1)
    best_ba = np.argmin(dist, axis=0)
    rows = np.arange(len(ia))
    mutual = best_ba[best_ab] == rows

    pairs: list[tuple[int, int]] = []
    for i in np.flatnonzero(mutual):
        j = best_ab[i]
        d_best = dist[i, j]
        row = dist[i].copy()
        row[j] = np.iinfo(row.dtype).max if row.dtype.kind in "iu" else np.inf
        d_second = row.min() if len(row) > 1 else np.inf
        if d_best < cfg.match_ratio * d_second:
            pairs.append((int(ia[i]), int(ib[j])))
    if len(pairs) < 2:
        raise EvCalibError("insufficient matches")

    pa = intrinsics.normalize(corners_a[[p[0] for p in pairs], :2])
    pb = intrinsics.normalize(corners_b[[p[1] for p in pairs], :2])
    return [Correspondence(pa[i], pb[i]) for i in range(len(pairs))]


# ---------------------------------------------------------------------------
# translation-only RANSAC


def _homogeneous_pairs(matches: list[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (x, y, 1) rays for both sides of every correspondence."""
    x1 = np.array([[m.p1[0], m.p1[1], 1.0] for m in matches])
    x2 = np.array([[m.p2[0], m.p2[1], 1.0] for m in matches])
    return x1, x2


def _cheirality_sign(x1: np.ndarray, x2: np.ndarray, t: np.ndarray, inliers: np.ndarray) -> float:
    """Sign of t that puts triangulated inliers in front of both views.

    Midpoint triangulation with camera 1 at the origin and camera 2 at t:
    solve the 2x2 normal equations for the two ray depths per correspondence
    and vote.  Pairs with near-parallel rays carry no sign information and
    are skipped; the Gram determinant equals |r1 x r2|^2 so the skip gate is
    the same parallelism test in squared form.
    """
    r1, r2 = x1[inliers], x2[inliers]
    a11 = (r1 * r1).sum(axis=1)
    a22 = (r2 * r2).sum(axis=1)
    a12 = (r1 * r2).sum(axis=1)
    det = a11 * a22 - a12 * a12
    keep = det > 1e-20
    if not np.any(keep):
        return 1.0
    safe = np.where(keep, det, 1.0)
    b1, b2 = r1 @ t, r2 @ t
    lam1 = ((a22 * b1 - a12 * b2) / safe)[keep]
    lam2 = ((a12 * b1 - a11 * b2) / safe)[keep]
    votes = float(np.sum((lam1 > 0) & (lam2 > 0))) - float(np.sum((lam1 < 0) & (lam2 < 0)))
    if votes != 0.0:
        return 1.0 if votes > 0 else -1.0
    return 1.0 if float(lam1.sum() + lam2.sum()) >= 0 else -1.0


def solve_translation_ransac(
    matches: list[Correspondence],
    iterations: int = 200,
    epipolar_tol: float = 4e-3,
    seed: int = 0,
    *,
    t_mid: float = 0.0,
    min_inlier_ratio: float = 0.3,
) -> HeadingEstimate:
    """Fit a unit translation direction to correspondences by 2-point RANSAC.

    Minimal model: t proportional to (x1 cross x2) x (x1' cross x2') from two
    correspondences, the epipolar constraint of E = [t]x under zero rotation.
    The per-pair residual is the constraint value scaled by its gradient with
    respect to the four measured coordinates, so ``epipolar_tol`` is in
    normalized-coordinate units regardless of how small the pair's image
    motion is.  The best model is refit by SVD over its inliers, the inlier
    set recounted against the refit, and the sign fixed by cheirality.
    """
    if len(matches) < 2:
        raise EvCalibError("insufficient matches")
    x1, x2 = _homogeneous_pairs(matches)
    n = np.cross(x1, x2)
    informative = np.linalg.norm(n, axis=1) > 1e-12
    if not np.any(informative):
        raise EvCalibError("heading unresolved")

    def residuals(t: np.ndarray) -> np.ndarray:
        g1 = np.cross(x2, t)[:, :2]
        g2 = np.cross(t, x1)[:, :2]
        denom = np.sqrt((g1 * g1).sum(axis=1) + (g2 * g2).sum(axis=1))
        r = np.abs(n @ t) / np.maximum(denom, 1e-12)
        # zero-motion pairs satisfy any translation; they count as inliers
        r[~informative] = 0.0
        return r

    rng = np.random.default_rng(seed)
    best_count = -1
    best_inliers = None
    for _ in range(iterations):
        i, j = rng.choice(len(matches), size=2, replace=False)
        t_cand = np.cross(n[i], n[j])
        norm = np.linalg.norm(t_cand)
        if norm < 1e-12:
            continue  # degenerate sample: parallel epipolar normals
        inliers = residuals(t_cand / norm) < epipolar_tol
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers

    # least-squares refinement: smallest right singular vector of the
    # inlier constraint rows, then recount so stray pairs from the noisy
    # minimal model cannot hold a seat in the final consensus
    t = None
    inliers = best_inliers
    for _ in range(2):
        rows = n[inliers & informative]
        if len(rows) == 0:
            raise EvCalibError("heading unresolved")
        _, _, vt = np.linalg.svd(rows)
        t = vt[-1] / np.linalg.norm(vt[-1])
        inliers = residuals(t) < epipolar_tol

    count = int(inliers.sum())
    ratio = count / len(matches)
    if ratio < min_inlier_ratio:
        raise EvCalibError("heading unresolved")
    t = t * _cheirality_sign(matches, t, inliers)
    return HeadingEstimate(t_mid, t, count, ratio)


# ---------------------------------------------------------------------------
# streaming front end


def estimate_heading_details(
    stream: EventStream,
    intrinsics: CameraIntrinsics,
    pair_spacing: float | None = None,
    config: HeadingConfig | None = None,
) -> list[HeadingEstimate]:
    """Per-pair heading estimates over a whole event stream.

    Slides a window of one pair spacing: renders combined surfaces at t and
    t + spacing, runs detect/match/solve, and emits the direction stamped at
    the window midpoint.  Render pairs that fail (too few corners or matches,
    unresolved heading) are logged and skipped.  The surface, corners, and
    descriptors of the trailing render are reused as the leading render of
    the next pair, so each step costs one new render.
    """
    cfg = config or HeadingConfig()
    spacing = cfg.pair_spacing if pair_spacing is None else float(pair_spacing)
    if spacing <= 0:
        raise ValueError("pair_spacing must be positive")
    if len(stream) == 0:
        return []

    warmup = spacing if cfg.warmup is None else cfg.warmup
    renderer = SurfaceRenderer(stream, cfg.surface)
    t0 = float(stream.t[0]) + warmup
    t_end = float(stream.t[-1])

    detect_kw = dict(
        nms_radius=cfg.nms_radius,
        block=cfg.harris_block,
        ksize=cfg.harris_ksize,
        k=cfg.harris_k,
        rel_threshold=cfg.harris_rel_threshold,
    )

    def rendered(t):
        surf = renderer.combined_at(t)
        corners = detect_corners(surf, cfg.max_corners, **detect_kw)
        return surf, corners

    estimates: list[HeadingEstimate] = []
    prev_t = t0
    prev = rendered(prev_t)
    pair_index = 0
    while prev_t + spacing <= t_end + 1e-12:
        cur_t = prev_t + spacing
        cur = rendered(cur_t)
        t_mid = prev_t + spacing / 2.0
        try:
            if len(prev[1]) == 0 or len(cur[1]) == 0:
                raise EvCalibError("insufficient matches")
            matches = match_features(prev[0], cur[0], prev[1], cur[1], intrinsics, config=cfg)
            est = solve_translation_ransac(
                matches,
                iterations=cfg.ransac_iterations,
                epipolar_tol=cfg.epipolar_tol,
                seed=int(np.random.SeedSequence((cfg.seed, pair_index)).generate_state(1)[0]),
                t_mid=t_mid,
                min_inlier_ratio=cfg.min_inlier_ratio,
            )
            estimates.append(est)
        except EvCalibError as exc:
            log.debug("render pair at t=%.4f skipped: %s", t_mid, exc)
        prev_t, prev = cur_t, cur
        pair_index += 1
    return estimates


def estimate_headings(
    stream: EventStream,
    intrinsics: CameraIntrinsics,
    pair_spacing: float | None = None,
    config: HeadingConfig | None = None,
) -> VelocitySeries:
    """Camera-frame heading series over a whole event stream.

    Thin wrapper over ``estimate_heading_details`` that keeps only the
    timestamped directions; speeds are NaN because epipolar geometry fixes
    translation only up to scale.
    """
    estimates = estimate_heading_details(stream, intrinsics, pair_spacing, config)
    times = np.array([e.t_mid for e in estimates])
    dirs = np.array([e.direction for e in estimates]).reshape(-1, 3)
    return VelocitySeries(times, dirs, np.full(len(times), np.nan), Frame.CAMERA)
