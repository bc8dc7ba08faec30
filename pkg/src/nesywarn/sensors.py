"""Parametric range sensors, camera detectors and a semantic-grid renderer.

Range sensors (radar, LIDAR, depth camera) add Gaussian relative range noise
whose standard deviation is interpolated from a table of mean absolute
percentage errors. Camera detectors are behavioral stand-ins for neural
detectors: a hard range gate, a fixed confidence and box jitter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .world import WorldState, ground_truth, normalize_angle

MAPE_TO_SIGMA = math.sqrt(math.pi / 2.0) / 100.0

BACKGROUND, ROAD, VEHICLE, PEDESTRIAN, TRAFFIC_LIGHT, TRAFFIC_SIGN = range(6)
CLASS_NAMES = ("background", "road", "vehicle", "pedestrian", "traffic_light", "traffic_sign")
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

# footprint (length, width) and extrusion height per class, meters
ENTITY_HEIGHT = {"vehicle": 1.5, "pedestrian": 1.8, "traffic_light": 4.5, "traffic_sign": 2.5}
STATIC_FOOTPRINT = {"traffic_light": (0.4, 0.4), "traffic_sign": (0.1, 0.6)}


@dataclass(frozen=True)
class SensorModel:
    kind: str
    max_range: float
    fov_deg: float
    error_table: tuple  # ((range_m, mape_percent), ...)
    fine_noise_factor: float = 0.5
    fine_window_deg: float = 10.0

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        ranges = [r for r, _ in self.error_table]
        if any(b <= a for a, b in zip(ranges, ranges[1:])):
            raise ValueError("error_table ranges must be strictly increasing")
        if any(m < 0 for _, m in self.error_table):
            raise ValueError("error_table MAPE values must be non-negative")
        if not 0 < self.fine_noise_factor <= 1:
            raise ValueError("fine_noise_factor must lie in (0, 1]")

    def mape(self, r: float) -> float:
        """Interpolated MAPE (percent) at range ``r``, clamped beyond the anchors."""
        rs, ms = zip(*self.error_table)
        return float(np.interp(r, rs, ms))

    def sigma(self, r: float) -> float:
        """Standard deviation of the relative range error at range ``r``."""
        return self.mape(r) * MAPE_TO_SIGMA


@dataclass(frozen=True)
class DetectorProfile:
    name: str
    r_max: float
    confidence: float
    iou_target: float
    jitter_frac: float

    def __post_init__(self):
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        if not 0 < self.confidence <= 1:
            raise ValueError("confidence must lie in (0, 1]")
        if self.jitter_frac < 0:
            raise ValueError("jitter_frac must be non-negative")


@dataclass(frozen=True)
class CameraModel:
    width: int = 480
    height: int = 270
    hfov_deg: float = 90.0
    mount_height: float = 1.5
    mount_yaw: float = 0.0
    max_depth: float = 400.0

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)


class FineWindow(NamedTuple):
    center_bearing: float
    window_deg: float


@dataclass(frozen=True)
class RangeMeasurement:
    target_id: str
    measured_range: float
    bearing: float
    radial_speed: float
    t: float
    fine: bool = False


@dataclass(frozen=True)
class Detection:
    cls: str
    box: tuple
    confidence: float
    t: float
    target_id: str


@dataclass
class SemanticGrid:
    cls: np.ndarray        # (H, W) uint8 class ids
    depth: np.ndarray      # (H, W) meters, inf where nothing was hit
    instance: np.ndarray   # (H, W) index into ``ids`` or -1
    ids: list
    classes: list
    boxes: list            # unoccluded projected box per instance, cell units
    t: float = 0.0
    observer: str = ""

    @property
    def width(self) -> int:
        return self.cls.shape[1]

    @property
    def height(self) -> int:
        return self.cls.shape[0]

    def visible_cells(self) -> dict:
        counts = np.bincount(self.instance[self.instance >= 0].ravel(), minlength=len(self.ids))
        return {iid: int(counts[k]) for k, iid in enumerate(self.ids)}

    def projected_cells(self) -> dict:
        return {iid: (b[2] - b[0]) * (b[3] - b[1]) for iid, b in zip(self.ids, self.boxes)}

    def visibility(self) -> dict:
        """Visible fraction of each instance's unoccluded projection."""
        vis = self.visible_cells()
        proj = self.projected_cells()
        return {iid: vis[iid] / proj[iid] if proj[iid] else 0.0 for iid in self.ids}


# --------------------------------------------------------------------------
# built-in profiles

RADAR = SensorModel("radar", 321.0, 45.0, ((100.0, 4.7), (200.0, 6.1), (300.0, 8.3)))
LIDAR = SensorModel("lidar", 300.0, 45.0, ((100.0, 5.2), (200.0, 7.7), (300.0, 10.3)))
DEPTH = SensorModel("depth", 300.0, 90.0, ((100.0, 5.8), (200.0, 8.2), (300.0, 11.3)))
SENSORS = {m.kind: m for m in (RADAR, LIDAR, DEPTH)}

# jitter values come from calibrate_jitter(iou_target) with the defaults below
JITTER_IOU_031 = 0.397
JITTER_IOU_065 = 0.1426

DETECTORS = {p.name: p for p in (
    DetectorProfile("yolov4_pretrained", 60.32, 0.94, 0.31, JITTER_IOU_031),
    DetectorProfile("centernet", 51.73, 0.45, 0.31, JITTER_IOU_031),
    DetectorProfile("efficientdet", 45.38, 0.39, 0.31, JITTER_IOU_031),
    DetectorProfile("yolov4_retrained", 88.0, 0.94, 0.65, JITTER_IOU_065),
    DetectorProfile("yolov4_cropped", 135.0, 0.94, 0.65, JITTER_IOU_065),
)}


def load_profiles(path=None) -> tuple:
    """Return ``(detectors, sensors)`` dicts, overlaying a JSON profiles document on the defaults."""
    detectors, sensors = dict(DETECTORS), dict(SENSORS)
    if path is None:
        return detectors, sensors
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for name, d in doc.get("detectors", {}).items():
        detectors[name] = DetectorProfile(name=name, **d)
    for name, s in doc.get("sensors", {}).items():
        s = dict(s)
        s["error_table"] = tuple(tuple(row) for row in s["error_table"])
        sensors[name] = SensorModel(kind=s.pop("kind", name), **s)
    return detectors, sensors


def profiles_document() -> dict:
    """The built-in profiles as a JSON-serializable document."""
    return {
        "detectors": {n: {"r_max": p.r_max, "confidence": p.confidence, "iou_target": p.iou_target,
                          "jitter_frac": p.jitter_frac} for n, p in DETECTORS.items()},
        "sensors": {n: {"max_range": m.max_range, "fov_deg": m.fov_deg,
                        "error_table": [list(row) for row in m.error_table],
                        "fine_noise_factor": m.fine_noise_factor,
                        "fine_window_deg": m.fine_window_deg} for n, m in SENSORS.items()},
    }


# --------------------------------------------------------------------------
# range sensors

def range_scan(state: WorldState, observer: str, model: SensorModel, rng: np.random.Generator,
               fine: Optional[FineWindow] = None, mount_yaw: float = 0.0) -> list:
    """One coarse scan, or a fine scan when ``fine`` gives a window.

    Bearings are reported relative to the observer's heading; the sensor
    boresight points ``mount_yaw`` radians off that heading.
    """
    obs = state.vehicle(observer)
    half_fov = math.radians(model.fov_deg) / 2.0
    if fine is not None:
        half_win = math.radians(fine.window_deg) / 2.0
        off = abs(normalize_angle(fine.center_bearing - mount_yaw))
        if off + half_win > half_fov + 1e-9:
            raise ValueError("fine window extends outside the coarse field of view")
    out = []
    for tgt in ground_truth(state, observer):
        if tgt.range > model.max_range:
            continue
        if abs(normalize_angle(tgt.bearing - mount_yaw)) > half_fov:
            continue
        if fine is not None and abs(normalize_angle(tgt.bearing - fine.center_bearing)) > half_win:
            continue
        sigma = model.sigma(tgt.range)
        if fine is not None:
            sigma *= model.fine_noise_factor
        eps = rng.normal(0.0, sigma) if sigma > 0 else 0.0
        out.append(RangeMeasurement(tgt.id, max(0.0, tgt.range * (1.0 + eps)), tgt.bearing,
                                    -tgt.closing_speed, state.t, fine is not None))
    return out


def select_fine_window(prev: list, cur: list, threshold: float, window_deg: float = 10.0,
                       bearing_tol: float = math.radians(1.0)) -> Optional[FineWindow]:
    """Center a fine window on the return whose range changes fastest.

    Returns are matched across scans by nearest bearing. ``None`` when no
    matched return changes faster than ``threshold`` m/s.
    """
    best = None
    for m in cur:
        cands = [p for p in prev if abs(normalize_angle(p.bearing - m.bearing)) <= bearing_tol]
        if not cands:
            continue
        p = min(cands, key=lambda p: abs(normalize_angle(p.bearing - m.bearing)))
        dt = m.t - p.t
        if dt <= 0:
            continue
        rate = abs(m.measured_range - p.measured_range) / dt
        if rate > threshold and (best is None or rate > best[0]):
            best = (rate, m.bearing)
    return None if best is None else FineWindow(best[1], window_deg)


# --------------------------------------------------------------------------
# semantic grid

def _entities(state: WorldState, observer: str):
    for v in state.vehicles:
        if v.id != observer:
            yield v.id, v.cls, v.pose.x, v.pose.y, v.pose.heading, v.length, v.width
    for lt in state.lights:
        ln, wd = STATIC_FOOTPRINT["traffic_light"]
        yield lt.id, "traffic_light", lt.position.x, lt.position.y, lt.position.heading, ln, wd
    for sg in state.signs:
        ln, wd = STATIC_FOOTPRINT["traffic_sign"]
        yield sg.id, "traffic_sign", sg.position.x, sg.position.y, sg.position.heading, ln, wd


def _camera_axes(state, observer, camera):
    obs = state.vehicle(observer)
    yaw = obs.pose.heading + camera.mount_yaw
    return obs.pose.x, obs.pose.y, math.cos(yaw), math.sin(yaw)


def project_entity(ox, oy, fx_, fy_, camera: CameraModel, x, y, heading, length, width, height):
    """Cell box ``(u0, v0, u1, v1)`` and nearest depth of an extruded footprint, or None."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    f = camera.focal
    cx, cy = camera.width / 2.0, camera.height / 2.0
    us, vs, ds = [], [], []
    for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        px, py = x + c * dx - s * dy - ox, y + s * dx + c * dy - oy
        d = px * fx_ + py * fy_
        if d <= 0.1:
            return None
        lat = -px * fy_ + py * fx_
        u = cx - f * lat / d
        ds.append(d)
        us.append(u)
        for z in (0.0, height):
            vs.append(cy - f * (z - camera.mount_height) / d)
    u0 = max(0, math.floor(min(us)))
    u1 = min(camera.width, math.ceil(max(us)))
    v0 = max(0, math.floor(min(vs)))
    v1 = min(camera.height, math.ceil(max(vs)))
    if u1 <= u0 or v1 <= v0 or min(ds) > camera.max_depth:
        return None
    return (u0, v0, u1, v1), min(ds)


@lru_cache(maxsize=32)
def _road_mask(ox, oy, fx_, fy_, camera: CameraModel, lanes: tuple) -> np.ndarray:
    H, W = camera.height, camera.width
    f = camera.focal
    cx, cy = W / 2.0, H / 2.0
    mask = np.zeros((H, W), dtype=bool)
    rows = np.arange(H) + 0.5
    below = rows > cy
    if not lanes or not below.any():
        return mask
    v = rows[below]
    d = f * camera.mount_height / (v - cy)
    u = np.arange(W) + 0.5
    D = d[:, None]
    L = (cx - u)[None, :] * D / f
    X = ox + D * fx_ - L * fy_
    Y = oy + D * fy_ + L * fx_
    road = np.zeros(X.shape, dtype=bool)
    for lane in lanes:
        pts = np.asarray(lane.points, dtype=float)
        half = lane.width / 2.0
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            if seg2 == 0:
                continue
            t = np.clip(((X - x0) * dx + (Y - y0) * dy) / seg2, 0.0, 1.0)
            road |= np.hypot(X - (x0 + t * dx), Y - (y0 + t * dy)) <= half
    road &= D <= camera.max_depth
    mask[below] = road
    return mask


def render_semantic_grid(state: WorldState, observer: str, camera: CameraModel = CameraModel(),
                         paint_road: bool = True) -> SemanticGrid:
    """Depth-buffered pinhole rendering of entity footprints into class cells."""
    ox, oy, fx_, fy_ = _camera_axes(state, observer, camera)
    H, W = camera.height, camera.width
    cls = np.zeros((H, W), dtype=np.uint8)
    if paint_road:
        cls[_road_mask(ox, oy, fx_, fy_, camera, tuple(state.lanes))] = ROAD
    depth = np.full((H, W), np.inf)
    instance = np.full((H, W), -1, dtype=np.int32)
    ids, classes, boxes, depths = [], [], [], []
    for eid, ecls, x, y, h, ln, wd in _entities(state, observer):
        proj = project_entity(ox, oy, fx_, fy_, camera, x, y, h, ln, wd, ENTITY_HEIGHT[ecls])
        if proj is None:
            continue
        ids.append(eid)
        classes.append(ecls)
        boxes.append(proj[0])
        depths.append(proj[1])
    # paint far to near so nearer entities overwrite
    for k in sorted(range(len(ids)), key=lambda k: -depths[k]):
        u0, v0, u1, v1 = boxes[k]
        sub = depth[v0:v1, u0:u1]
        closer = depths[k] < sub
        sub[closer] = depths[k]
        cls[v0:v1, u0:u1][closer] = CLASS_IDS[classes[k]]
        instance[v0:v1, u0:u1][closer] = k
    return SemanticGrid(cls, depth, instance, ids, classes, boxes, state.t, observer)


# --------------------------------------------------------------------------
# camera detectors

MIN_BOX = 0.5


def perturb_box(box, jitter: float, rng: np.random.Generator, width: int, height: int) -> tuple:
    """Independent Gaussian offset per edge, scaled by the box size."""
    x0, y0, x1, y1 = (float(b) for b in box)
    if jitter > 0:
        bw, bh = x1 - x0, y1 - y0
        dx0, dy0, dx1, dy1 = rng.normal(0.0, jitter, 4)
        x0, x1 = sorted((x0 + dx0 * bw, x1 + dx1 * bw))
        y0, y1 = sorted((y0 + dy0 * bh, y1 + dy1 * bh))
    x0, x1 = _clip_span(x0, x1, width)
    y0, y1 = _clip_span(y0, y1, height)
    return (x0, y0, x1, y1)


def _clip_span(a, b, limit):
    a, b = min(max(a, 0.0), limit), min(max(b, 0.0), limit)
    if b - a < MIN_BOX:
        mid = min(max((a + b) / 2.0, MIN_BOX / 2.0), limit - MIN_BOX / 2.0)
        a, b = mid - MIN_BOX / 2.0, mid + MIN_BOX / 2.0
    return a, b


def camera_detect(state: WorldState, observer: str, profile: DetectorProfile, grid: SemanticGrid,
                  rng: np.random.Generator) -> list:
    """Detections for every visible target inside the profile's range gate."""
    ranges = {t.id: t.range for t in ground_truth(state, observer, include_static=True)}
    visible = grid.visible_cells()
    out = []
    for eid, ecls, box in zip(grid.ids, grid.classes, grid.boxes):
        if visible[eid] < 1 or ranges[eid] > profile.r_max:
            continue
        b = perturb_box(box, profile.jitter_frac, rng, grid.width, grid.height)
        out.append(Detection(ecls, b, profile.confidence, state.t, eid))
    return out


def detection_bearing(det: Detection, camera: CameraModel = CameraModel()) -> float:
    """Bearing (relative to the observer heading) of a detection's box center."""
    u = 0.5 * (det.box[0] + det.box[2])
    return normalize_angle(camera.mount_yaw + math.atan((camera.width / 2.0 - u) / camera.focal))


def mean_iou_for_jitter(jitter: float, n: int = 20000, seed: int = 0) -> float:
    from .autolabel import iou

    rng = np.random.default_rng(seed)
    ref = (200.0, 100.0, 280.0, 160.0)
    return float(np.mean([iou(ref, perturb_box(ref, jitter, rng, 480, 270)) for _ in range(n)]))


def calibrate_jitter(target_iou: float, n: int = 20000, seed: int = 0, tol: float = 1e-4) -> float:
    """Bisect the jitter fraction whose mean IOU against the true box hits ``target_iou``."""
    lo, hi = 0.0, 3.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mean_iou_for_jitter(mid, n, seed) > target_iou:
            lo = mid
        else:
            hi = mid
    return round(0.5 * (lo + hi), 4)
