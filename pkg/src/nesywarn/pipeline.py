"""End-to-end runs: simulate, sense, track, encode as Narsese, reason and alert."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import sensors as sn
from .autolabel import extract_boxes, filter_labels, iou, write_dataset
from .crash_history import CrashStore, cell_of, query_crash_history
from .nars import Memory
from .narsese import (PRESENT, Atom, Budget, ExtSet, IntSet, Task, TruthValue, inheritance,
                      parse_knowledge)
from .tracking import (CONFIRMED, LaneMap, Track, Tracker, detect_weaving, time_to_collision)
from .world import (Collision, Scenario, Verdict, check_pass_fail, ground_truth, initial_state,
                    load_scenario_file, normalize_angle, step)

CYCLES_PER_STEP = 20
APPROACH_TTC = 5.0
PARKED_SPEED = 0.1
RISK_EMIT = 0.5
FINE_THRESHOLD = 5.0  # m/s range rate that triggers a fine scan
CAMERA_YAWS = (0.0, math.pi / 2, math.pi, -math.pi / 2)
BEARING_MATCH = math.radians(3.0)
CLASS_ATOMS = {"vehicle": "car", "pedestrian": "pedestrian"}
ALERT_KINDS = ("intersection_hazard", "rear_approach", "weaving_vehicle", "pedestrian_ahead", "location_risk")

TRACK_FIELDS = ("t", "id", "x", "y", "vx", "vy", "status", "lateral", "weaving")
MEAS_FIELDS = ("t", "sensor", "head", "target", "true_range", "measured_range", "bearing", "fine")
DET_FIELDS = ("t", "camera", "target", "cls", "x_min", "y_min", "x_max", "y_max",
              "gt_x_min", "gt_y_min", "gt_x_max", "gt_y_max", "confidence", "true_range")
COLLISION_FIELDS = ("t", "a", "b")
WEAVE_FIELDS = ("t", "id", "range")


def _f(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6f}"


@dataclass(frozen=True)
class Alert:
    t: float
    kind: str
    message: str
    ttc: Optional[float] = None
    derivation: tuple = ()
    target: str = ""

    def __post_init__(self):
        if not self.message:
            raise ValueError("alert message must not be empty")
        if not self.derivation:
            raise ValueError("alert needs a derivation trace")

    def to_json(self) -> str:
        return json.dumps({"t": round(self.t, 6), "kind": self.kind, "target": self.target,
                           "message": self.message, "ttc": None if self.ttc is None else round(self.ttc, 6),
                           "derivation": list(self.derivation)}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Alert":
        d = json.loads(line)
        return cls(d["t"], d["kind"], d["message"], d["ttc"], tuple(d["derivation"]), d.get("target", ""))


@dataclass
class RunTrace:
    scenario: str
    seed: int
    detector: str = ""
    sensor: str = ""
    alerts: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    tracks: list = field(default_factory=list)
    measurements: list = field(default_factory=list)
    detections: list = field(default_factory=list)
    weaving: list = field(default_factory=list)
    events: list = field(default_factory=list)
    reasoning: list = field(default_factory=list)
    ego_entry_t: Optional[float] = None
    verdict: Optional[Verdict] = None
    metrics: dict = field(default_factory=dict)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "tracks.csv", TRACK_FIELDS, self.tracks)
        _write_csv(out / "measurements.csv", MEAS_FIELDS, self.measurements)
        _write_csv(out / "detections.csv", DET_FIELDS, self.detections)
        _write_csv(out / "weaving.csv", WEAVE_FIELDS, self.weaving)
        _write_csv(out / "collisions.csv", COLLISION_FIELDS,
                   [(_f(c.t), c.a, c.b) for c in self.collisions])
        (out / "events.nal").write_text("".join(line + "\n" for line in self.events))
        (out / "reasoning.log").write_text("".join(line + "\n" for line in self.reasoning))
        (out / "alerts.jsonl").write_text("".join(a.to_json() + "\n" for a in self.alerts))
        run = {"scenario": self.scenario, "seed": self.seed, "detector": self.detector, "sensor": self.sensor,
               "ego_entry_t": self.ego_entry_t}
        (out / "run.json").write_text(json.dumps(run, sort_keys=True, indent=1) + "\n")
        (out / "metrics.json").write_text(json.dumps(self.metrics, sort_keys=True, indent=1) + "\n")
        (out / "verdict.txt").write_text(f"{self.verdict}\n")
        return out

    @classmethod
    def load(cls, trace_dir) -> "RunTrace":
        d = Path(trace_dir)
        run = json.loads((d / "run.json").read_text())
        tr = cls(run["scenario"], run["seed"], run.get("detector", ""), run.get("sensor", ""),
                 ego_entry_t=run.get("ego_entry_t"))
        tr.tracks = _read_csv(d / "tracks.csv")
        tr.measurements = _read_csv(d / "measurements.csv")
        tr.detections = _read_csv(d / "detections.csv")
        tr.weaving = _read_csv(d / "weaving.csv")
        tr.collisions = [Collision(float(r[0]), r[1], r[2]) for r in _read_csv(d / "collisions.csv")]
        text = (d / "alerts.jsonl").read_text()
        tr.alerts = [Alert.from_json(line) for line in text.splitlines() if line.strip()]
        verdict = (d / "verdict.txt").read_text().strip()
        passed, _, reason = verdict.partition(": ")
        tr.verdict = Verdict(passed == "pass", reason)
        return tr


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _read_csv(path: Path) -> list:
    if not path.exists():
        return []
    rows = list(csv.reader(io.StringIO(path.read_text())))
    return [tuple(r) for r in rows[1:]]


# --------------------------------------------------------------------------
# Narsese encoding

@dataclass
class EgoContext:
    track: Track
    heading: float
    speed: float
    at_intersection: bool = False


def object_term(track: Track):
    return ExtSet([Atom(f"obj{track.id}")])


SELF = ExtSet([Atom("SELF")])
HERE = ExtSet([Atom("HERE")])


def quadrant(bearing: float) -> str:
    b = abs(bearing)
    if b < math.pi / 4:
        return "front"
    if b > 3 * math.pi / 4:
        return "behind"
    return "left" if bearing > 0 else "right"


def track_bearing(ego: EgoContext, track: Track) -> float:
    dx = track.position[0] - ego.track.position[0]
    dy = track.position[1] - ego.track.position[1]
    return normalize_angle(math.atan2(dy, dx) - ego.heading)


def _event(term, t: float, truth: Optional[TruthValue] = None, budget: Optional[Budget] = None) -> Task:
    return Task(term, ".", PRESENT, truth or TruthValue(), t, budget=budget or Budget())


def encode_events(tracks, ego: Optional[EgoContext], prior: float, t: float) -> list:
    """Present-tense judgments describing the confirmed tracks and the ego's situation."""
    out = []
    for tr in sorted((tr for tr in tracks if tr.status == CONFIRMED), key=lambda tr: tr.id):
        obj = object_term(tr)
        if tr.cls in CLASS_ATOMS:
            out.append(_event(inheritance(obj, Atom(CLASS_ATOMS[tr.cls])), t))
        if ego is None:
            continue
        ttc = time_to_collision(ego.track, tr)
        if ttc is not None and ttc < APPROACH_TTC:
            out.append(_event(inheritance(obj, IntSet([Atom("approaching")])), t))
        out.append(_event(inheritance(obj, IntSet([Atom(quadrant(track_bearing(ego, tr)))])), t))
        if tr.weaving:
            out.append(_event(inheritance(obj, IntSet([Atom("weaving")])), t))
    if ego is not None:
        if ego.at_intersection:
            out.append(_event(inheritance(SELF, IntSet([Atom("at_intersection")])), t))
        if ego.speed < PARKED_SPEED:
            out.append(_event(inheritance(SELF, IntSet([Atom("parked")])), t))
    if prior >= RISK_EMIT:
        out.append(_event(inheritance(HERE, IntSet([Atom("high_risk_location")])), t,
                          TruthValue(min(1.0, prior), 0.9), Budget(0.5 + 0.5 * min(1.0, prior), 0.8, 0.5)))
    return out


# --------------------------------------------------------------------------
# runs

@dataclass
class RunConfig:
    scenario: object  # Scenario or path
    knowledge: Optional[str] = None  # path; None uses the shipped knowledge
    profiles: Optional[str] = None
    detector: str = "yolov4_pretrained"
    sensor: str = "radar"
    crash_db: object = None  # CrashStore, path or None
    seed: Optional[int] = None
    out: Optional[str] = None
    cycles: int = CYCLES_PER_STEP
    cameras: bool = True
    reasoning: bool = True


def default_knowledge() -> str:
    return resources.files("nesywarn.data").joinpath("knowledge.nal").read_text()


def _load_knowledge(path) -> str:
    if path is None:
        return default_knowledge()
    return Path(path).read_text(encoding="utf-8")


def _head_yaws(model: sn.SensorModel) -> list:
    n = max(1, math.ceil(360.0 / model.fov_deg - 1e-9))
    return [normalize_angle(math.radians(k * model.fov_deg)) for k in range(n)]


def _fine_window(win: sn.FineWindow, yaw: float, model: sn.SensorModel) -> sn.FineWindow:
    # keep the window inside the head's field of view
    room = math.radians(model.fov_deg - win.window_deg) / 2.0
    off = max(-room, min(room, normalize_angle(win.center_bearing - yaw)))
    return sn.FineWindow(normalize_angle(yaw + off), win.window_deg)


def _in_head(bearing: float, yaw: float, model: sn.SensorModel) -> bool:
    half = math.radians(model.fov_deg) / 2.0
    d = normalize_angle(bearing - yaw)
    return -half <= d < half


def _lane_direction(lane, p) -> float:
    best = None
    for (x0, y0), (x1, y1) in zip(lane.points, lane.points[1:]):
        dx, dy = x1 - x0, y1 - y0
        L2 = dx * dx + dy * dy
        u = 0.0 if L2 == 0 else max(0.0, min(1.0, ((p[0] - x0) * dx + (p[1] - y0) * dy) / L2))
        d = math.hypot(x0 + u * dx - p[0], y0 + u * dy - p[1])
        if best is None or d < best[0]:
            best = (d, math.atan2(dy, dx))
    return best[1]


def lateral_sigma(model: sn.SensorModel, ego_pos, p, lane) -> float:
    """Expected lane-lateral noise of a fine-scan position fix at ``p``.

    Range errors lie along the line of sight, so only their component across
    the lane shows up as lateral motion.
    """
    if lane is None:
        return 0.0
    r = math.dist(ego_pos, p)
    if r == 0:
        return 0.0
    los = math.atan2(p[1] - ego_pos[1], p[0] - ego_pos[0])
    cross = abs(math.sin(los - _lane_direction(lane, p)))
    return model.sigma(r) * model.fine_noise_factor * r * cross


def sense_range(state, ego_id, model, yaws, prev, rng):
    """Coarse scan on every head, refined by a fine scan around the fastest-changing return."""
    out, coarse_by_head = [], []
    for k, yaw in enumerate(yaws):
        coarse = [m for m in sn.range_scan(state, ego_id, model, rng, mount_yaw=yaw)
                  if _in_head(m.bearing, yaw, model)]
        coarse_by_head.append(coarse)
        win = sn.select_fine_window(prev[k] if prev else [], coarse, FINE_THRESHOLD, model.fine_window_deg)
        if win is not None:
            win = _fine_window(win, yaw, model)
            fine = [m for m in sn.range_scan(state, ego_id, model, rng, fine=win, mount_yaw=yaw)
                    if _in_head(m.bearing, yaw, model)]
            half = math.radians(win.window_deg) / 2.0
            kept = [m for m in coarse if abs(normalize_angle(m.bearing - win.center_bearing)) > half]
            coarse = kept + fine
        out.extend((k, m) for m in coarse)
    return out, coarse_by_head


def run_scenario(config: RunConfig) -> RunTrace:
    scenario = config.scenario
    if not isinstance(scenario, Scenario):
        scenario = load_scenario_file(scenario)
    seed = scenario.seed if config.seed is None else config.seed
    detectors, sensors = sn.load_profiles(config.profiles)
    if config.detector not in detectors:
        raise KeyError(f"unknown detector profile {config.detector!r}")
    if config.sensor not in sensors:
        raise KeyError(f"unknown sensor {config.sensor!r}")
    profile, model = detectors[config.detector], sensors[config.sensor]
    knowledge = parse_knowledge(_load_knowledge(config.knowledge))
    store = config.crash_db
    if store is not None and not isinstance(store, CrashStore):
        store = CrashStore.load(store)

    rng = np.random.default_rng(seed)
    memory = Memory(seed=seed)
    executions = []
    memory.register("alert", executions.append)
    for task in knowledge:
        memory.input_task(task)

    trace = RunTrace(scenario.name, seed, config.detector, config.sensor)
    ego_id = scenario.ego.id
    tracker = Tracker(lane_map=LaneMap(scenario.lanes))
    ego_pos = [0.0, 0.0]
    tracker.lateral_sigma = lambda p, lane: lateral_sigma(model, ego_pos, p, lane)
    yaws = _head_yaws(model)
    cams = [sn.CameraModel(mount_yaw=y) for y in CAMERA_YAWS] if config.cameras else []
    prev_scans = None
    alerted = set()
    state = initial_state(scenario)
    n_col = 0

    for k in range(scenario.n_steps + 1):
        if k:
            state = step(state, scenario)
        t = state.t
        ego = state.vehicle(ego_id)
        truth = {g.id: g for g in ground_truth(state, ego_id)}
        ego_pos[:] = (ego.pose.x, ego.pose.y)

        # range sensing and tracking
        meas, prev_scans = sense_range(state, ego_id, model, yaws, prev_scans, rng)
        positions = []
        for head, m in meas:
            a = ego.pose.heading + m.bearing
            positions.append((ego.pose.x + m.measured_range * math.cos(a),
                              ego.pose.y + m.measured_range * math.sin(a)))
            tgt = truth.get(m.target_id)
            trace.measurements.append((_f(t), model.kind, head, m.target_id, _f(tgt.range if tgt else None),
                                       _f(m.measured_range), _f(m.bearing), int(m.fine)))
        gate = 10.0 + 4.0 * model.sigma(model.max_range) * model.max_range
        tracker.update(t, positions, gate)
        ego_track = Track(0, (ego.pose.x, ego.pose.y), ego.velocity(t), t, status=CONFIRMED)
        ctx = EgoContext(ego_track, ego.pose.heading, ego.speed, scenario.in_intersection(ego.pose.x, ego.pose.y))
        if ctx.at_intersection and trace.ego_entry_t is None:
            trace.ego_entry_t = t

        for tr in tracker.tracks:
            tr.range = math.dist(tr.position, ego_track.position)

        # cameras classify tracks by bearing
        for cam in cams:
            grid = sn.render_semantic_grid(state, ego_id, cam, paint_road=False)
            for det in sn.camera_detect(state, ego_id, profile, grid, rng):
                gt = grid.boxes[grid.ids.index(det.target_id)]
                tgt = truth.get(det.target_id)
                trace.detections.append((_f(t), f"{math.degrees(cam.mount_yaw):.0f}", det.target_id, det.cls,
                                         *(_f(v) for v in det.box), *gt, _f(det.confidence),
                                         _f(tgt.range if tgt else None)))
                _classify(tracker, ctx, det, cam)

        for tr in tracker.tracks:
            if tr.status == CONFIRMED:
                v = detect_weaving(tr)
                if v.weaving and not tr.weaving:
                    if tr.weaving_range is None:
                        tr.weaving_range = tr.range
                    trace.weaving.append((_f(t), tr.id, _f(tr.range)))
                tr.weaving = v.weaving
            lat = tr.lateral_history[-1][1] if tr.lateral_history else None
            trace.tracks.append((_f(t), tr.id, _f(tr.position[0]), _f(tr.position[1]), _f(tr.velocity[0]),
                                 _f(tr.velocity[1]), tr.status, _f(lat), int(tr.weaving)))

        # reasoning
        if config.reasoning:
            prior = 0.0
            if store is not None:
                prior = query_crash_history(store, cell_of(ego.pose.x, ego.pose.y), scenario.hour)
            memory.time = t
            for task in encode_events(tracker.tracks, ctx, prior, t):
                trace.events.append(f"{t:.2f} {task}")
                memory.input_task(task)
            for _ in range(config.cycles):
                memory.cycle()
            for ex in executions:
                alert = _alert_from(ex, tracker, ctx, t)
                if alert is not None and (alert.kind, alert.target) not in alerted:
                    alerted.add((alert.kind, alert.target))
                    trace.alerts.append(alert)
            executions.clear()

        trace.collisions.extend(state.collisions[n_col:])
        n_col = len(state.collisions)

    trace.reasoning = list(memory.log)
    trace.verdict = check_pass_fail(trace, scenario)
    trace.metrics = emit_metrics(trace)
    if config.out is not None:
        trace.write(config.out)
    return trace


def _classify(tracker: Tracker, ctx: EgoContext, det, cam):
    b = sn.detection_bearing(det, cam)
    best = None
    for tr in tracker.tracks:
        d = abs(normalize_angle(track_bearing(ctx, tr) - b))
        if d <= BEARING_MATCH and (best is None or d < best[0]):
            best = (d, tr)
    if best is not None:
        best[1].cls = det.cls


def _alert_from(ex, tracker: Tracker, ctx: EgoContext, t: float) -> Optional[Alert]:
    args = ex.args.items if ex.args is not None else ()
    kind = str(args[1]) if len(args) > 1 else "alert"
    target = str(args[2]) if len(args) > 2 else ""
    ttc = None
    if target.startswith("{obj"):
        tid = int(target[4:-1])
        for tr in tracker.tracks:
            if tr.id == tid:
                ttc = time_to_collision(ctx.track, tr)
    msg = f"{kind.replace('_', ' ')}" + (f" from {target}" if target else "")
    if ttc is not None:
        msg += f", time to collision {ttc:.1f} s"
    # times are kept at the precision the trace files store
    return Alert(round(t, 6), kind, msg, None if ttc is None else round(ttc, 6), ex.trace, target)


# --------------------------------------------------------------------------
# metrics

def emit_metrics(trace: RunTrace) -> dict:
    """Summary numbers recomputed from the logged rows of a run."""
    report = {}
    first = {}
    ious = []
    for row in trace.detections:
        t, target, rng = float(row[0]), row[2], row[13]
        if target not in first and rng:
            first[target] = {"t": round(t, 6), "range": float(rng)}
        ious.append(iou(tuple(map(float, row[4:8])), tuple(map(float, row[8:12]))))
    if first:
        report["first_detection"] = {trace.detector or "detector": first}
    if ious:
        report["mean_iou"] = float(np.mean(ious))
        report["detection_frames"] = len(ious)
    buckets: dict = {}
    for row in trace.measurements:
        if not row[4]:
            continue
        r_true, r_meas = float(row[4]), float(row[5])
        if r_true <= 0:
            continue
        key = f"{int(r_true // 100) * 100}-{int(r_true // 100) * 100 + 100}"
        buckets.setdefault(row[1], {}).setdefault(key, []).append(abs(r_meas - r_true) / r_true * 100.0)
    if buckets:
        report["mape_percent"] = {s: {k: float(np.mean(v)) for k, v in sorted(b.items())} for s, b in buckets.items()}
    if trace.alerts:
        ego_hits = sorted(round(c.t, 6) for c in trace.collisions)
        leads = []
        for a in trace.alerts:
            entry = {"t": a.t, "kind": a.kind, "target": a.target}
            later = [c for c in ego_hits if c >= a.t]
            if later:
                entry["lead_s"] = round(later[0] - a.t, 6)
            elif a.ttc is not None:
                entry["lead_s"] = a.ttc
            leads.append(entry)
        report["alerts"] = leads
    if trace.weaving:
        first_weave = {}
        for row in trace.weaving:
            first_weave.setdefault(str(row[1]), float(row[2]))
        report["weaving_detection_range"] = first_weave
    return report


# --------------------------------------------------------------------------
# labelling runs

def label_frames(scenario: Scenario, n_frames: int, camera_yaws=CAMERA_YAWS):
    """Yield ``(grid, boxes)`` for ``n_frames`` views cycling through the run and the camera yaws."""
    states = [initial_state(scenario)]
    for _ in range(scenario.n_steps):
        states.append(step(states[-1], scenario))
    ego_id = scenario.ego.id
    for i in range(n_frames):
        state = states[i % len(states)]
        cam = sn.CameraModel(mount_yaw=camera_yaws[(i // len(states)) % len(camera_yaws)])
        grid = sn.render_semantic_grid(state, ego_id, cam)
        truth = ground_truth(state, ego_id, include_static=True)
        boxes = filter_labels(extract_boxes(grid), truth, grid.visibility())
        yield grid, boxes


def label_run(scenario, n_frames: int, out_dir) -> dict:
    if not isinstance(scenario, Scenario):
        scenario = load_scenario_file(scenario)
    return write_dataset(label_frames(scenario, n_frames), out_dir)
