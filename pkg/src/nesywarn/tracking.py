"""Alpha-beta object tracks, weaving detection and time-to-collision."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ALPHA = 0.5
BETA = 0.1
CONFIRM_HITS = 3
MAX_MISSES = 5
HISTORY_LEN = 256

WEAVE_WINDOW = 6.0
WEAVE_REVERSALS = 3
WEAVE_AMPLITUDE = 0.5
WEAVE_SMOOTH = 5
WEAVE_DEADBAND = 0.15  # m/s; derivative must clear this to count a new sign

MAX_LATERAL_SIGMA = 0.3  # m; noisier lateral readings are not recorded

TTC_MISS_DISTANCE = 2.5
TTC_MIN_CLOSING = 0.1

TENTATIVE, CONFIRMED, DEAD = "tentative", "confirmed", "dead"


@dataclass
class Track:
    id: int
    position: tuple
    velocity: tuple = (0.0, 0.0)
    last_update: float = 0.0
    hits: int = 1
    misses: int = 0
    status: str = TENTATIVE
    lateral_history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LEN))
    cls: Optional[str] = None
    range: float = float("nan")
    weaving_range: Optional[float] = None
    weaving: bool = False

    def predict(self, dt: float) -> tuple:
        return (self.position[0] + self.velocity[0] * dt, self.position[1] + self.velocity[1] * dt)

    def record_lateral(self, t: float, lateral: float):
        if self.lateral_history and t <= self.lateral_history[-1][0]:
            raise ValueError("lateral history timestamps must increase")
        self.lateral_history.append((t, lateral))


@dataclass(frozen=True)
class WeavingVerdict:
    weaving: bool
    reversals: int
    amplitude: float
    detected_range: float = float("nan")


def associate(predicted: list, measurements: list, gate: float) -> tuple:
    """Greedy nearest-neighbour pairing of predicted track positions and measurements.

    Returns ``(pairs, unmatched_tracks, unmatched_measurements)`` where pairs
    are ``(track_index, measurement_index)`` in the order they were chosen.
    """
    cand = []
    for i, p in enumerate(predicted):
        for j, m in enumerate(measurements):
            d = math.dist(p, m)
            if d <= gate:
                cand.append((d, i, j))
    cand.sort()
    used_t, used_m, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_t or j in used_m:
            continue
        pairs.append((i, j))
        used_t.add(i)
        used_m.add(j)
    return (pairs,
            [i for i in range(len(predicted)) if i not in used_t],
            [j for j in range(len(measurements)) if j not in used_m])


def update_track(track: Track, z: tuple, dt: float, t: Optional[float] = None,
                 lateral: Optional[float] = None, alpha: float = ALPHA, beta: float = BETA) -> Track:
    """Alpha-beta correction with a position measurement ``z`` taken ``dt`` after the last update."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    px, py = track.predict(dt)
    rx, ry = z[0] - px, z[1] - py
    track.position = (px + alpha * rx, py + alpha * ry)
    track.velocity = (track.velocity[0] + beta / dt * rx, track.velocity[1] + beta / dt * ry)
    track.last_update = track.last_update + dt if t is None else t
    track.hits += 1
    track.misses = 0
    if track.status == TENTATIVE and track.hits >= CONFIRM_HITS:
        track.status = CONFIRMED
    if lateral is not None:
        track.record_lateral(track.last_update, lateral)
    return track


def _moving_average(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) < n:
        return x[:0]
    return np.convolve(x, np.ones(n) / n, mode="valid")


def detect_weaving(track: Track, window: float = WEAVE_WINDOW, min_reversals: int = WEAVE_REVERSALS,
                   min_amplitude: float = WEAVE_AMPLITUDE, smooth: int = WEAVE_SMOOTH,
                   deadband: float = WEAVE_DEADBAND) -> WeavingVerdict:
    """Look for sustained lateral oscillation in the last ``window`` seconds.

    Lateral offsets and their finite-difference derivative are both smoothed
    with a ``smooth``-sample moving average. A reversal is a change of the
    derivative's sign once it clears ``deadband``; the amplitude is the
    peak-to-peak of the smoothed offsets.
    """
    hist = track.lateral_history
    if len(hist) < 2:
        return WeavingVerdict(False, 0, 0.0)
    t_end = hist[-1][0]
    ts = np.array([t for t, _ in hist])
    if t_end - ts[0] < window * (1 - 1e-6) - _median_dt(ts) / 2:
        return WeavingVerdict(False, 0, 0.0)
    sel = ts >= t_end - window - 1e-9
    ts = ts[sel]
    ys = np.array([y for _, y in hist])[sel]
    y_s = _moving_average(ys, smooth)
    t_s = _moving_average(ts, smooth)
    if len(y_s) < 2:
        return WeavingVerdict(False, 0, 0.0)
    dy = _moving_average(np.diff(y_s) / np.diff(t_s), smooth)
    reversals, sign = 0, 0
    for d in dy:
        if abs(d) < deadband:
            continue
        s = 1 if d > 0 else -1
        if sign and s != sign:
            reversals += 1
        sign = s
    amplitude = float(np.ptp(y_s))
    weaving = reversals >= min_reversals and amplitude >= min_amplitude
    rng = float("nan")
    if weaving:
        rng = track.weaving_range if track.weaving_range is not None else track.range
    return WeavingVerdict(weaving, reversals, amplitude, rng)


def _median_dt(ts: np.ndarray) -> float:
    return float(np.median(np.diff(ts))) if len(ts) > 1 else 0.0


def closest_approach(ego: Track, other: Track) -> tuple:
    """``(range, closing_speed, miss_distance)`` under constant relative velocity."""
    px, py = other.position[0] - ego.position[0], other.position[1] - ego.position[1]
    wx, wy = other.velocity[0] - ego.velocity[0], other.velocity[1] - ego.velocity[1]
    rng = math.hypot(px, py)
    if rng == 0:
        return 0.0, 0.0, 0.0
    closing = -(px * wx + py * wy) / rng
    speed = math.hypot(wx, wy)
    miss = abs(px * wy - py * wx) / speed if speed > 0 else rng
    return rng, closing, miss


def time_to_collision(ego: Track, other: Track, miss_threshold: float = TTC_MISS_DISTANCE,
                      min_closing: float = TTC_MIN_CLOSING) -> Optional[float]:
    """Range over closing speed when the tracks are on a near-collision course, else None."""
    if ego.status != CONFIRMED or other.status != CONFIRMED:
        return None
    rng, closing, miss = closest_approach(ego, other)
    if closing <= min_closing or miss >= miss_threshold:
        return None
    return rng / closing


class LaneMap:
    """Lane centerlines used to measure a track's lateral offset."""

    def __init__(self, lanes=()):
        self.lanes = tuple(lanes)

    def nearest_lane(self, p):
        if not self.lanes:
            return None
        return min(self.lanes, key=lambda ln: abs(ln.signed_offset(p[0], p[1])))

    def offset(self, lane, p) -> float:
        return 0.0 if lane is None else lane.signed_offset(p[0], p[1])


class Tracker:
    """Owns the track store for one run: association, birth, confirmation and death."""

    def __init__(self, gate: float = 10.0, lane_map: Optional[LaneMap] = None, lateral_sigma=None):
        self.gate = gate
        self.lane_map = lane_map
        # lateral_sigma(position, lane) -> expected lateral noise; when it exceeds
        # MAX_LATERAL_SIGMA the history restarts so weaving is judged on resolvable data only
        self.lateral_sigma = lateral_sigma
        self.tracks: list = []
        self._next_id = 1
        self._lanes: dict = {}

    def live(self) -> list:
        return [tr for tr in self.tracks if tr.status != DEAD]

    def confirmed(self) -> list:
        return [tr for tr in self.tracks if tr.status == CONFIRMED]

    def update(self, t: float, positions: list, gate: Optional[float] = None) -> list:
        """Fold one scan of world-frame positions into the store; returns the live tracks."""
        gate = self.gate if gate is None else gate
        live = self.live()
        predicted = [tr.predict(t - tr.last_update) for tr in live]
        pairs, lost, fresh = associate(predicted, positions, gate)
        for i, j in pairs:
            tr = live[i]
            update_track(tr, positions[j], t - tr.last_update, t)
            lat = self._lateral(tr, positions[j])
            if lat is not None:
                tr.record_lateral(t, lat)
        for i in lost:
            tr = live[i]
            tr.misses += 1
            if tr.misses >= MAX_MISSES:
                tr.status = DEAD
        for j in fresh:
            tr = Track(self._next_id, tuple(positions[j]), last_update=t)
            self._next_id += 1
            lat = self._lateral(tr, positions[j])
            if lat is not None:
                tr.record_lateral(t, lat)
            self.tracks.append(tr)
        self.tracks = [tr for tr in self.tracks if tr.status != DEAD]
        return self.tracks

    def _lateral(self, track: Track, z) -> Optional[float]:
        if self.lane_map is None:
            return None
        # the lane is fixed at track birth so a lane change reads as lateral motion
        if track.id not in self._lanes:
            self._lanes[track.id] = self.lane_map.nearest_lane(z)
        lane = self._lanes[track.id]
        if self.lateral_sigma is not None and self.lateral_sigma(z, lane) > MAX_LATERAL_SIGMA:
            track.lateral_history.clear()
            return None
        return self.lane_map.offset(lane, track.position)
