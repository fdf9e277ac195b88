"""Event-surface rendering: exponential time surfaces and recency rankings.

Two complementary maps are maintained per stream.  The time surface (TS)
decays exponentially from each pixel's last firing time, so its level codes
"how recently" a pixel fired.  The thresholded ordinal surface (TOS) holds a
bounded recency rank: a firing pixel jumps to 255 and every neighbor inside
a (2k+1)^2 window steps down by a fixed decrement, clamped at zero.  Masking
the TOS by both thresholds keeps only pixels that are fresh on both scales,
which is what the corner front end consumes.

Polarity is ignored by default; a config flag switches to per-polarity
surfaces for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from evcalib.core import Event, EventStream, _readonly


@dataclass(frozen=True)
class SurfaceConfig:
    """Rendering parameters shared by the TS/TOS/combined maps."""

    tau: float = 0.030
    k: int = 7
    decrement: int = 1
    theta_ts: float = 0.1
    theta_tos: int | None = None  # None -> 255 - 2k
    per_polarity: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k < 0:
            raise ValueError("window half-width k must be non-negative")
        if self.decrement < 0:
            raise ValueError("decrement must be non-negative")
        if self.theta_tos is None:
            object.__setattr__(self, "theta_tos", 255 - 2 * self.k)


@dataclass(frozen=True, eq=False)
class SurfaceMap:
    """Immutable rendered surface with values in [0, 1], shape (height, width)."""

    width: int
    height: int
    values: np.ndarray
    render_time: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).copy()
        if v.shape != (self.height, self.width):
            raise ValueError("values shape must be (height, width)")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("surface values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(v))


@dataclass(frozen=True, eq=False)
class TosState:
    """Recency-rank grid in [0, 255] plus its update parameters."""

    width: int
    height: int
    values: np.ndarray
    k: int = 7
    decrement: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int16).copy()
        if v.shape != (self.height, self.width):
            raise ValueError("values shape must be (height, width)")
        if v.size and (v.min() < 0 or v.max() > 255):
            raise ValueError("TOS values must lie in [0, 255]")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def zero(cls, width: int, height: int, k: int = 7, decrement: int = 1) -> "TosState":
        return cls(width, height, np.zeros((height, width), dtype=np.int16), k, decrement)


def _tos_apply(values: np.ndarray, x: int, y: int, k: int, decrement: int) -> None:
    """In-place TOS update for one event at (x, y)."""
    h, w = values.shape
    x0, x1 = max(0, x - k), min(w, x + k + 1)
    y0, y1 = max(0, y - k), min(h, y + k + 1)
    win = values[y0:y1, x0:x1]
    np.subtract(win, decrement, out=win)
    np.maximum(win, 0, out=win)
    values[y, x] = 255


def update_tos(state: TosState, e: Event) -> TosState:
    """Apply one event to a TOS, returning the successor state.

    The (2k+1)^2 neighborhood around the event steps down by the decrement
    (clamped at zero), then the firing pixel itself is set to 255.
    """
    if not (0 <= e.x < state.width and 0 <= e.y < state.height):
        raise ValueError("event coordinates outside the grid")
    values = state.values.copy()
    _tos_apply(values, e.x, e.y, state.k, state.decrement)
    return replace(state, values=values)


def render_ts(stream: EventStream, t_render: float, tau: float = 0.030) -> SurfaceMap:
    """Exponential time surface exp(-(t_render - t_last)/tau) at ``t_render``.

    Pixels that never fired render as 0.  Events after ``t_render`` are
    ignored, so the surface is causal.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = int(np.searchsorted(stream.t, t_render, side="right"))
    last = np.full((stream.height, stream.width), -np.inf)
    # later events overwrite earlier ones: fancy assignment applies in order
    last[stream.y[:n], stream.x[:n]] = stream.t[:n]
    values = np.zeros_like(last)
    fired = np.isfinite(last)
    values[fired] = np.exp(-(t_render - last[fired]) / tau)
    np.clip(values, 0.0, 1.0, out=values)
    return SurfaceMap(stream.width, stream.height, values, t_render)


def render_combined(
    ts: SurfaceMap,
    tos: TosState,
    theta_ts: float = 0.1,
    theta_tos: int = 241,
) -> SurfaceMap:
    """Mask the TOS by joint freshness: tos/255 where both thresholds pass.

    A pixel survives only when its TS value exceeds ``theta_ts`` and its TOS
    value is at least ``theta_tos``; everything else renders 0.  Both inputs
    must describe the same grid and the caller is responsible for rendering
    them at the same instant.
    """
    if (ts.width, ts.height) != (tos.width, tos.height):
        raise ValueError("TS and TOS dimensions differ")
    keep = (ts.values > theta_ts) & (tos.values >= theta_tos)
    values = np.where(keep, tos.values / 255.0, 0.0)
    return SurfaceMap(ts.width, ts.height, values, ts.render_time)


class SurfaceRenderer:
    """Streaming renderer that folds events in time order.

    Keeps a last-firing-time map (for the TS) and a mutable TOS buffer, so
    rendering at increasing times costs one pass over the stream in total.
    Snapshots are immutable; rendering never rewinds.
    """

    def __init__(self, stream: EventStream, config: SurfaceConfig | None = None):
        self.stream = stream
        self.config = config or SurfaceConfig()
        self._cursor = 0
        n_banks = 2 if self.config.per_polarity else 1
        shape = (stream.height, stream.width)
        self._last = [np.full(shape, -np.inf) for _ in range(n_banks)]
        # int32, and deliberately unclamped between snapshots: with pure
        # subtractions a single clamp at read time equals per-step clamping,
        # and a firing pixel resyncs to 255 regardless of its deficit
        self._tos = [np.zeros(shape, dtype=np.int32) for _ in range(n_banks)]

    def _bank(self, polarity: bool) -> int:
        return int(polarity) if self.config.per_polarity else 0

    def advance_to(self, t: float) -> None:
        """Consume events with timestamp <= t."""
        s, cfg = self.stream, self.config
        start, end = self._cursor, int(np.searchsorted(s.t, t, side="right"))
        if end == start:
            return
        k, dec = cfg.k, cfg.decrement
        xa, ya, ta = s.x[start:end], s.y[start:end], s.t[start:end]
        if cfg.per_polarity:
            bank_of = s.polarity[start:end].astype(np.int64)
        else:
            bank_of = np.zeros(end - start, dtype=np.int64)
        banks = self._tos
        for x, y, b in zip(xa.tolist(), ya.tolist(), bank_of.tolist()):
            v = banks[b]
            v[(y - k if y > k else 0) : y + k + 1, (x - k if x > k else 0) : x + k + 1] -= dec
            v[y, x] = 255
        for b in range(len(self._last)):
            sel = bank_of == b if cfg.per_polarity else slice(None)
            # fancy assignment applies in order, so later events win
            self._last[b][ya[sel], xa[sel]] = ta[sel]
        self._cursor = end

    def ts_at(self, t: float, polarity: bool = False) -> SurfaceMap:
        self.advance_to(t)
        last = self._last[self._bank(polarity)]
        values = np.zeros_like(last)
        fired = np.isfinite(last)
        values[fired] = np.exp(-(t - last[fired]) / self.config.tau)
        np.clip(values, 0.0, 1.0, out=values)
        return SurfaceMap(self.stream.width, self.stream.height, values, t)

    def tos_at(self, t: float, polarity: bool = False) -> TosState:
        self.advance_to(t)
        cfg = self.config
        return TosState(
            self.stream.width,
            self.stream.height,
            np.clip(self._tos[self._bank(polarity)], 0, 255),
            cfg.k,
            cfg.decrement,
        )

    def combined_at(self, t: float, polarity: bool = False) -> SurfaceMap:
        ts = self.ts_at(t, polarity)
        tos = self.tos_at(t, polarity)
        return render_combined(ts, tos, self.config.theta_ts, self.config.theta_tos)


def write_pgm(surface: SurfaceMap | TosState, path) -> None:
    """Write a surface as binary 8-bit PGM (P5) for visual debugging."""
    if isinstance(surface, TosState):
        data = surface.values.astype(np.uint8)
    else:
        data = np.round(surface.values * 255.0).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())
