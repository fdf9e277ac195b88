"""On-disk formats: delimited event/odometry/heading tables and JSON reports.

All text artifacts are UTF-8 with LF newlines and a mandatory header row.
Floats are written with shortest round-trip formatting so that rerunning a
command with the same inputs reproduces files byte for byte.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from evcalib.core import EventStream, Frame, Rotation3, VelocitySeries
from evcalib.calibration import CalibrationReport, CorrelationCurve, ResidualStats
from evcalib.heading import CameraIntrinsics

EVENTS_HEADER = "t,x,y,p"
ODOM_HEADER = "t,steer_fl,steer_fr,steer_rl,steer_rr,speed_fl,speed_fr,speed_rl,speed_rr"
HEADINGS_HEADER = "t_mid,dx,dy,dz,inliers,inlier_ratio"
INTRINSICS_KEYS = ("fx", "fy", "cx", "cy", "k1", "k2", "p1", "p2", "width", "height")


class FormatError(ValueError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _read_table(path, header: str) -> np.ndarray:
    """Read a comma-delimited numeric table, validating the header row."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        first = f.readline().strip()
        if first != header:
            raise FormatError(f"expected header '{header}', got '{first}'", line=1)
        try:
            with warnings.catch_warnings():
                # a header-only file is a legal empty table
                warnings.simplefilter("ignore", UserWarning)
                data = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError:
            pass
        else:
            if data.size and data.shape[1] != header.count(",") + 1:
                raise FormatError("wrong column count")
            return data
    # slow path only to pinpoint the offending line
    n_cols = header.count(",") + 1
    with path.open("r", encoding="utf-8") as f:
        f.readline()
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n_cols:
                raise FormatError(f"expected {n_cols} columns, got {len(parts)}", line=lineno)
            try:
                [float(p) for p in parts]
            except ValueError:
                raise FormatError("non-numeric field", line=lineno) from None
    raise FormatError("unreadable table")


def _write_table(path, header: str, rows: np.ndarray) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in np.atleast_2d(rows))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# events


def read_events(path, width: int, height: int) -> EventStream:
    data = _read_table(path, EVENTS_HEADER)
    if data.size == 0:
        return EventStream(width, height, np.empty(0), np.empty(0, np.int32), np.empty(0, np.int32), np.empty(0, bool))
    return EventStream(width, height, data[:, 0], data[:, 1].astype(np.int32), data[:, 2].astype(np.int32), data[:, 3] > 0.5)


def write_events(path, stream: EventStream) -> None:
    rows = np.stack(
        [stream.t, stream.x.astype(float), stream.y.astype(float), stream.polarity.astype(float)],
        axis=1,
    )
    _write_table(path, EVENTS_HEADER, rows)


# ---------------------------------------------------------------------------
# odometry


def read_odometry(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Odometry log as (t (N,), steer (N, 4), speed (N, 4))."""
    data = _read_table(path, ODOM_HEADER)
    if data.size == 0:
        return np.empty(0), np.empty((0, 4)), np.empty((0, 4))
    return data[:, 0], data[:, 1:5], data[:, 5:9]


def write_odometry(path, t: np.ndarray, steer: np.ndarray, speed: np.ndarray) -> None:
    rows = np.concatenate([np.asarray(t).reshape(-1, 1), steer, speed], axis=1)
    _write_table(path, ODOM_HEADER, rows)


# ---------------------------------------------------------------------------
# headings


def read_headings(path) -> VelocitySeries:
    data = _read_table(path, HEADINGS_HEADER)
    if data.size == 0:
        return VelocitySeries(np.empty(0), np.empty((0, 3)), np.empty(0), Frame.CAMERA)
    dirs = data[:, 1:4]
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms < 1e-9):
        raise FormatError("zero-length heading direction")
    return VelocitySeries(data[:, 0], dirs / norms[:, None], np.full(len(data), np.nan), Frame.CAMERA)


def write_headings(path, series: VelocitySeries, inliers=None, inlier_ratio=None) -> None:
    n = len(series)
    inl = np.zeros(n) if inliers is None else np.asarray(inliers, dtype=float)
    ratio = np.ones(n) if inlier_ratio is None else np.asarray(inlier_ratio, dtype=float)
    rows = np.concatenate(
        [series.t.reshape(-1, 1), series.directions, inl.reshape(-1, 1), ratio.reshape(-1, 1)],
        axis=1,
    )
    _write_table(path, HEADINGS_HEADER, rows)


# ---------------------------------------------------------------------------
# intrinsics


def read_intrinsics(path) -> CameraIntrinsics:
    """Flat key-value text: one 'name value' pair per line."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in INTRINSICS_KEYS:
            raise FormatError(f"expected '<key> <value>' with key in {INTRINSICS_KEYS}", line=lineno)
        try:
            values[parts[0]] = float(parts[1])
        except ValueError:
            raise FormatError("non-numeric value", line=lineno) from None
    missing = [k for k in INTRINSICS_KEYS if k not in values]
    if missing:
        raise FormatError(f"missing keys: {', '.join(missing)}")
    return CameraIntrinsics(
        fx=values["fx"],
        fy=values["fy"],
        cx=values["cx"],
        cy=values["cy"],
        dist=np.array([values["k1"], values["k2"], values["p1"], values["p2"]]),
        width=int(values["width"]),
        height=int(values["height"]),
    )


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    values = {
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "k1": intr.dist[0],
        "k2": intr.dist[1],
        "p1": intr.dist[2],
        "p2": intr.dist[3],
        "width": intr.width,
        "height": intr.height,
    }
    lines = [f"{k} {_fmt(values[k])}" for k in INTRINSICS_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# JSON documents


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def write_report(path, report: CalibrationReport) -> None:
    _dump_json(
        path,
        {
            "method": report.method,
            "t_d_s": report.t_d,
            "R_oe": [float(v) for v in report.r_oe.m.ravel()],
            "trace_curve": {
                "lag_s": [float(v) for v in report.curve.lags],
                "r": [float(v) for v in report.curve.values],
            },
            "n_pairs": report.n_pairs,
            "irls_iterations": report.irls_iterations,
            "residual_deg": {
                "p50": report.residuals.p50,
                "p90": report.residuals.p90,
                "max": report.residuals.max,
            },
        },
    )


def read_report(path) -> CalibrationReport:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        rotation = Rotation3(np.array(doc["R_oe"], dtype=float).reshape(3, 3))
    except ValueError as exc:
        raise FormatError("invalid rotation") from exc
    curve = CorrelationCurve(
        np.array(doc.get("trace_curve", {}).get("lag_s", []), dtype=float),
        np.array(doc.get("trace_curve", {}).get("r", []), dtype=float),
    )
    res = doc.get("residual_deg", {})
    stats = ResidualStats(
        float(res.get("p50", np.nan)), float(res.get("p90", np.nan)), float(res.get("max", np.nan))
    )
    return CalibrationReport(
        t_d=float(doc["t_d_s"]),
        r_oe=rotation,
        curve=curve,
        n_pairs=int(doc.get("n_pairs", 0)),
        irls_iterations=int(doc.get("irls_iterations", 0)),
        residuals=stats,
        method=str(doc.get("method", "vc")),
    )


def write_ground_truth(path, t_offset: float, r_oe: Rotation3) -> None:
    _dump_json(path, {"t_offset_s": t_offset, "R_oe": [float(v) for v in r_oe.m.ravel()]})


def read_ground_truth(path) -> tuple[float, Rotation3]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        rotation = Rotation3(np.array(doc["R_oe"], dtype=float).reshape(3, 3))
    except ValueError as exc:
        raise FormatError("invalid rotation") from exc
    return float(doc["t_offset_s"]), rotation


# ---------------------------------------------------------------------------
# config files


def read_config_file(path) -> dict[str, str]:
    """Flat 'key=value' text; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("expected 'key=value'", line=lineno)
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
