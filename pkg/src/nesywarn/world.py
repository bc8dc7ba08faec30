"""Fixed-timestep 2D traffic world with scripted vehicles, lights and collisions.

Every vehicle follows a piecewise-linear path made of its start position and
its route waypoints. Progress along the path is kept as arc length so constant
speed motion stays exact to floating point. States are frozen dataclasses;
:func:`step` always returns a new :class:`WorldState`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema

ROLES = ("ego", "responder", "npc")
CLASSES = ("vehicle", "pedestrian")
PHASES = ("green", "yellow", "red")

DEFAULT_TIMESTEP = 0.05
DEFAULT_SIZE = {"vehicle": (4.5, 2.0), "pedestrian": (0.5, 0.5)}
LANE_WIDTH = 3.5


class ScenarioError(ValueError):
    """Raised for malformed or invalid scenario documents.

    ``location`` is either ``"line L, column C"`` for JSON syntax errors or a
    dotted field path such as ``vehicles[1].speed`` for validation errors.
    """

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise ValueError(f"non-finite pose {self.x}, {self.y}, {self.heading}")
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class BrakeEvent:
    t: float
    target_speed: float
    duration: float


@dataclass(frozen=True)
class Weave:
    """Sinusoidal lateral oscillation applied on top of the route path."""

    amplitude: float
    period: float
    start: float = 0.0

    def offset(self, t: float) -> float:
        if t < self.start:
            return 0.0
        return self.amplitude * math.sin(2.0 * math.pi * (t - self.start) / self.period)

    def rate(self, t: float) -> float:
        if t < self.start:
            return 0.0
        w = 2.0 * math.pi / self.period
        return self.amplitude * w * math.cos(w * (t - self.start))


@dataclass(frozen=True)
class Lane:
    id: str
    points: tuple
    width: float = LANE_WIDTH

    def signed_offset(self, x: float, y: float) -> float:
        """Signed perpendicular distance to the centerline, positive to the left."""
        return polyline_offset(self.points, x, y)


@dataclass(frozen=True)
class VehicleState:
    id: str
    role: str
    pose: Pose
    speed: float
    length: float
    width: float
    route: tuple = ()
    brake_events: tuple = ()
    cls: str = "vehicle"
    lane: Optional[str] = None
    weave: Optional[Weave] = None
    # path bookkeeping: the path is the start point followed by the route
    origin: tuple = (0.0, 0.0)
    initial_speed: float = 0.0
    s: float = 0.0
    finished: bool = False
    crashed: bool = False

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"vehicle {self.id}: length and width must be positive")
        if self.speed < 0:
            raise ValueError(f"vehicle {self.id}: negative speed")
        for wp in self.route:
            if not all(math.isfinite(c) for c in wp):
                raise ValueError(f"vehicle {self.id}: non-finite waypoint {wp}")

    @property
    def path(self) -> tuple:
        if not self.route:
            # no route: keep driving along the initial heading
            h = self.pose.heading
            far = 1.0e6
            return (tuple(self.origin), (self.origin[0] + far * math.cos(h), self.origin[1] + far * math.sin(h)))
        return (tuple(self.origin),) + tuple(tuple(p) for p in self.route)

    def corners(self) -> list:
        return rectangle_corners(self.pose.x, self.pose.y, self.pose.heading, self.length, self.width)

    def velocity(self, t: float) -> tuple:
        """World-frame velocity including the weave's lateral rate."""
        if self.crashed or self.finished:
            return (0.0, 0.0)
        h = self.pose.heading
        vx, vy = self.speed * math.cos(h), self.speed * math.sin(h)
        if self.weave is not None:
            r = self.weave.rate(t)
            vx -= r * math.sin(h)
            vy += r * math.cos(h)
        return (vx, vy)


@dataclass(frozen=True)
class TrafficLight:
    id: str
    position: Pose
    cycle: tuple  # (green, yellow, red) durations in seconds
    offset: float = 0.0
    phase: str = "green"

    def __post_init__(self):
        if len(self.cycle) != 3 or any(d <= 0 for d in self.cycle):
            raise ValueError(f"light {self.id}: cycle needs three positive durations")

    def phase_at(self, t: float) -> str:
        total = sum(self.cycle)
        u = math.fmod(t + self.offset, total)
        if u < 0:
            u += total
        acc = 0.0
        for name, d in zip(PHASES, self.cycle):
            acc += d
            if u < acc:
                return name
        return PHASES[-1]


@dataclass(frozen=True)
class Sign:
    id: str
    position: Pose


@dataclass(frozen=True)
class PassFail:
    description: str = ""
    forbid_collision: bool = False
    require_alert: bool = False
    alert_kind: Optional[str] = None
    min_alert_lead_s: Optional[float] = None
    max_alerts: Optional[int] = None
    alert_before_intersection: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration: float
    timestep: float
    lanes: tuple
    intersections: tuple  # (x_min, y_min, x_max, y_max) rectangles
    vehicles: tuple
    lights: tuple
    signs: tuple = ()
    pass_fail: PassFail = PassFail()
    hour: int = 12

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.timestep))

    @property
    def ego(self) -> VehicleState:
        return next(v for v in self.vehicles if v.role == "ego")

    def lane(self, lane_id: str) -> Lane:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(lane_id)

    def in_intersection(self, x: float, y: float) -> bool:
        return any(x0 <= x <= x1 and y0 <= y <= y1 for x0, y0, x1, y1 in self.intersections)


@dataclass(frozen=True)
class Collision:
    t: float
    a: str
    b: str


@dataclass(frozen=True)
class WorldState:
    t: float
    vehicles: tuple
    lights: tuple = ()
    collisions: tuple = ()
    signs: tuple = ()
    lanes: tuple = field(default=(), compare=False)

    def vehicle(self, vid: str) -> VehicleState:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(f"unknown vehicle id {vid!r}")


@dataclass(frozen=True)
class Target:
    id: str
    cls: str
    range: float
    bearing: float
    closing_speed: float
    lateral_offset: float


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reason: str

    def __str__(self):
        return ("pass" if self.passed else "fail") + (f": {self.reason}" if self.reason else "")


# --------------------------------------------------------------------------
# geometry

def rectangle_corners(x, y, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [
        (x + c * dx - s * dy, y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    ]


def _project(corners, ax, ay):
    vals = [px * ax + py * ay for px, py in corners]
    return min(vals), max(vals)


def rectangles_overlap(a: Sequence, b: Sequence) -> bool:
    """Separating-axis test for two convex quadrilaterals given as corner lists."""
    for poly in (a, b):
        for i in range(4):
            x0, y0 = poly[i]
            x1, y1 = poly[(i + 1) % 4]
            ax, ay = y0 - y1, x1 - x0
            amin, amax = _project(a, ax, ay)
            bmin, bmax = _project(b, ax, ay)
            if amax <= bmin or bmax <= amin:
                return False
    return True


def polyline_length(points) -> float:
    return sum(math.dist(points[i], points[i + 1]) for i in range(len(points) - 1))


def point_on_polyline(points, s: float):
    """Position and segment heading at arc length ``s``; clamps to the end."""
    if len(points) == 1:
        return points[0][0], points[0][1], None, True
    remaining = s
    for i in range(len(points) - 1):
        (x0, y0), (x1, y1) = points[i], points[i + 1]
        seg = math.hypot(x1 - x0, y1 - y0)
        if seg == 0.0:
            continue
        if remaining <= seg:
            f = remaining / seg
            return x0 + f * (x1 - x0), y0 + f * (y1 - y0), math.atan2(y1 - y0, x1 - x0), False
        remaining -= seg
    # past the end: hold the final waypoint with the last nonzero segment heading
    heading = None
    for i in range(len(points) - 1, 0, -1):
        (x0, y0), (x1, y1) = points[i - 1], points[i]
        if (x0, y0) != (x1, y1):
            heading = math.atan2(y1 - y0, x1 - x0)
            break
    return points[-1][0], points[-1][1], heading, True


def polyline_offset(points, x: float, y: float) -> float:
    best = None
    for i in range(len(points) - 1):
        (x0, y0), (x1, y1) = points[i], points[i + 1]
        dx, dy = x1 - x0, y1 - y0
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            continue
        u = max(0.0, min(1.0, ((x - x0) * dx + (y - y0) * dy) / seg2))
        px, py = x0 + u * dx, y0 + u * dy
        d = math.hypot(x - px, y - py)
        if best is None or d < best[0]:
            cross = dx * (y - y0) - dy * (x - x0)
            best = (d, math.copysign(d, cross) if d > 0 else 0.0)
    return 0.0 if best is None else best[1]


# --------------------------------------------------------------------------
# kinematics

def speed_at(vehicle: VehicleState, t: float) -> float:
    """Scripted speed profile: linear ramps to each brake event's target speed."""
    v = vehicle.initial_speed
    for ev in vehicle.brake_events:
        if t <= ev.t:
            break
        if ev.duration <= 0 or t >= ev.t + ev.duration:
            v = ev.target_speed
        else:
            v = v + (ev.target_speed - v) * (t - ev.t) / ev.duration
            break
    return max(0.0, v)


def _place(vehicle: VehicleState, s: float, t: float) -> VehicleState:
    x, y, heading, done = point_on_polyline(vehicle.path, s)
    if heading is None:
        heading = vehicle.pose.heading
    if vehicle.weave is not None and not done:
        off = vehicle.weave.offset(t)
        x -= off * math.sin(heading)
        y += off * math.cos(heading)
    return replace(vehicle, pose=Pose(x, y, heading), s=s, finished=done,
                   speed=0.0 if done else speed_at(vehicle, t))


def step(state: WorldState, scenario: Scenario) -> WorldState:
    """Advance the world by one timestep."""
    dt = scenario.timestep
    if state.t + dt > scenario.duration + 1e-9:
        raise ValueError(f"step past scenario end: t={state.t} duration={scenario.duration}")
    t1 = state.t + dt
    moved = []
    for v in state.vehicles:
        if v.crashed or v.finished:
            moved.append(replace(v, speed=0.0))
            continue
        ds = 0.5 * (speed_at(v, state.t) + speed_at(v, t1)) * dt
        moved.append(_place(v, v.s + ds, t1))

    collided = {frozenset((c.a, c.b)) for c in state.collisions}
    new_collisions = []
    corners = [v.corners() for v in moved]
    for i in range(len(moved)):
        for j in range(i + 1, len(moved)):
            a, b = moved[i], moved[j]
            pair = frozenset((a.id, b.id))
            if pair in collided:
                continue
            if math.dist((a.pose.x, a.pose.y), (b.pose.x, b.pose.y)) > 0.5 * (
                    math.hypot(a.length, a.width) + math.hypot(b.length, b.width)):
                continue
            if rectangles_overlap(corners[i], corners[j]):
                lo, hi = sorted((a.id, b.id))
                new_collisions.append(Collision(t1, lo, hi))
                collided.add(pair)
    if new_collisions:
        hit = {c.a for c in new_collisions} | {c.b for c in new_collisions}
        moved = [replace(v, crashed=True, speed=0.0) if v.id in hit else v for v in moved]

    lights = tuple(replace(lt, phase=lt.phase_at(t1)) for lt in state.lights)
    return replace(state, t=t1, vehicles=tuple(moved), lights=lights,
                   collisions=state.collisions + tuple(new_collisions))


def initial_state(scenario: Scenario) -> WorldState:
    vehicles = tuple(_place(v, 0.0, 0.0) for v in scenario.vehicles)
    lights = tuple(replace(lt, phase=lt.phase_at(0.0)) for lt in scenario.lights)
    return WorldState(0.0, vehicles, lights, (), scenario.signs, scenario.lanes)


def simulate(scenario: Scenario) -> Iterable[WorldState]:
    """Yield the initial state and every subsequent state up to the duration."""
    state = initial_state(scenario)
    yield state
    for _ in range(scenario.n_steps):
        state = step(state, scenario)
        yield state


# --------------------------------------------------------------------------
# observation

def _lateral(state: WorldState, v: VehicleState) -> float:
    if not state.lanes:
        return 0.0
    if v.lane is not None:
        for lane in state.lanes:
            if lane.id == v.lane:
                return lane.signed_offset(v.pose.x, v.pose.y)
    return min((lane.signed_offset(v.pose.x, v.pose.y) for lane in state.lanes), key=abs)


def relative(observer: VehicleState, ox_vel, px, py, pvel):
    dx, dy = px - observer.pose.x, py - observer.pose.y
    rng = math.hypot(dx, dy)
    bearing = normalize_angle(math.atan2(dy, dx) - observer.pose.heading) if rng > 0 else 0.0
    wx, wy = pvel[0] - ox_vel[0], pvel[1] - ox_vel[1]
    closing = -(dx * wx + dy * wy) / rng if rng > 0 else 0.0
    return rng, bearing, closing


def ground_truth(state: WorldState, observer: str, include_static: bool = False) -> list:
    """Exact range, bearing, closing speed and lane offset of every other actor."""
    obs = state.vehicle(observer)
    ovel = obs.velocity(state.t)
    out = []
    for v in state.vehicles:
        if v.id == observer:
            continue
        rng, bearing, closing = relative(obs, ovel, v.pose.x, v.pose.y, v.velocity(state.t))
        out.append(Target(v.id, v.cls, rng, bearing, closing, _lateral(state, v)))
    if include_static:
        for ent, cls in [(lt, "traffic_light") for lt in state.lights] + [
                (sg, "traffic_sign") for sg in state.signs]:
            p = ent.position
            rng, bearing, closing = relative(obs, ovel, p.x, p.y, (0.0, 0.0))
            out.append(Target(ent.id, cls, rng, bearing, closing, 0.0))
    return out


# --------------------------------------------------------------------------
# verdicts

def check_pass_fail(trace, scenario: Scenario) -> Verdict:
    """Evaluate a finished run against the scenario's pass/fail criteria.

    ``trace`` needs ``alerts`` (objects with ``t``, ``kind``, ``ttc``) and
    ``collisions``; ``ego_entry_t`` (time the ego entered an intersection) is
    optional.
    """
    crit = scenario.pass_fail
    alerts = sorted(trace.alerts, key=lambda a: a.t)
    relevant = [a for a in alerts if crit.alert_kind is None or a.kind == crit.alert_kind]
    ego = scenario.ego.id
    ego_hits = sorted((c for c in trace.collisions if ego in (c.a, c.b)), key=lambda c: c.t)

    if crit.max_alerts is not None and len(alerts) > crit.max_alerts:
        return Verdict(False, f"{len(alerts)} alerts exceed maximum {crit.max_alerts}")
    if ego_hits:
        t_col = ego_hits[0].t
        if crit.forbid_collision:
            return Verdict(False, f"collision at t={t_col:.2f}s")
        prior = [a for a in relevant if a.t <= t_col]
        if not prior and (crit.require_alert or crit.min_alert_lead_s is not None):
            return Verdict(False, "no alert before collision")
        if prior and crit.min_alert_lead_s is not None:
            lead = t_col - prior[0].t
            if lead < crit.min_alert_lead_s:
                return Verdict(False, f"alert lead {lead:.2f}s below {crit.min_alert_lead_s:.2f}s")
    else:
        if crit.require_alert and not relevant:
            return Verdict(False, "no alert issued")
        if relevant and crit.min_alert_lead_s is not None:
            ttcs = [a.ttc for a in relevant if a.ttc is not None]
            if ttcs and ttcs[0] < crit.min_alert_lead_s:
                return Verdict(False, f"alert lead {ttcs[0]:.2f}s below {crit.min_alert_lead_s:.2f}s")
    if crit.alert_before_intersection:
        entry = getattr(trace, "ego_entry_t", None)
        if entry is not None and (not relevant or relevant[0].t > entry):
            return Verdict(False, "no alert before ego entered the intersection")
    return Verdict(True, "")


# --------------------------------------------------------------------------
# loading

def _schema() -> dict:
    return json.loads(resources.files("nesywarn.data").joinpath("scenario.schema.json").read_text())


def _path_str(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def load_scenario(text: str) -> Scenario:
    """Parse and validate a JSON scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(e.msg, f"line {e.lineno}, column {e.colno}") from None
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as e:
        raise ScenarioError(e.message, _path_str(e.absolute_path)) from None

    if doc["timestep_s"] <= 0:
        raise ScenarioError("timestep must be positive", "timestep_s")
    if doc["duration_s"] < doc["timestep_s"]:
        raise ScenarioError("duration shorter than one timestep", "duration_s")

    lanes = tuple(Lane(ln["id"], tuple(tuple(p) for p in ln["points"]), ln.get("width", LANE_WIDTH))
                  for ln in doc.get("lanes", []))
    lane_ids = {ln.id for ln in lanes}
    vehicles = []
    seen = set()
    for i, v in enumerate(doc["vehicles"]):
        where = f"vehicles[{i}]"
        if v["id"] in seen:
            raise ScenarioError(f"duplicate vehicle id {v['id']!r}", f"{where}.id")
        seen.add(v["id"])
        if v.get("lane") is not None and v["lane"] not in lane_ids:
            raise ScenarioError(f"unknown lane {v['lane']!r}", f"{where}.lane")
        cls = v.get("class", "vehicle")
        length, width = DEFAULT_SIZE[cls]
        pose = v["pose"]
        weave = v.get("weave")
        try:
            vehicles.append(VehicleState(
                id=v["id"], role=v["role"], cls=cls,
                pose=Pose(pose["x"], pose["y"], pose.get("heading", 0.0)),
                speed=v.get("speed", 0.0),
                length=v.get("length", length), width=v.get("width", width),
                route=tuple(tuple(p) for p in v.get("route", [])),
                brake_events=tuple(sorted(
                    (BrakeEvent(b["t"], b["target_speed"], b.get("duration", 0.0))
                     for b in v.get("brake_events", [])), key=lambda b: b.t)),
                lane=v.get("lane"),
                weave=Weave(weave["amplitude"], weave["period"], weave.get("start", 0.0)) if weave else None,
                origin=(pose["x"], pose["y"]),
                initial_speed=v.get("speed", 0.0),
            ))
        except ValueError as e:
            raise ScenarioError(str(e), where) from None
    egos = [v for v in vehicles if v.role == "ego"]
    if len(egos) != 1:
        raise ScenarioError(f"exactly one ego vehicle required, found {len(egos)}", "ego")

    lights = []
    for i, lt in enumerate(doc.get("lights", [])):
        c = lt["cycle"]
        try:
            lights.append(TrafficLight(lt["id"], Pose(lt["x"], lt["y"], lt.get("heading", 0.0)),
                                       (c["green"], c["yellow"], c["red"]), lt.get("offset", 0.0)))
        except ValueError as e:
            raise ScenarioError(str(e), f"lights[{i}]") from None
    signs = tuple(Sign(s["id"], Pose(s["x"], s["y"], s.get("heading", 0.0))) for s in doc.get("signs", []))
    pf = doc.get("pass_fail", {})
    return Scenario(
        name=doc["name"], seed=doc["seed"], duration=doc["duration_s"], timestep=doc["timestep_s"],
        lanes=lanes, intersections=tuple(tuple(r) for r in doc.get("intersections", [])),
        vehicles=tuple(vehicles), lights=tuple(lights), signs=signs,
        pass_fail=PassFail(**pf), hour=doc.get("hour", 12),
    )


def load_scenario_file(path) -> Scenario:
    path = Path(path)
    try:
        return load_scenario(path.read_text(encoding="utf-8"))
    except ScenarioError as e:
        raise ScenarioError(str(e), str(path)) from None


def builtin_scenario(name: str) -> Scenario:
    """Load one of the scenarios shipped under ``nesywarn/data/scenarios``."""
    text = resources.files("nesywarn.data").joinpath("scenarios", f"{name}.json").read_text()
    return load_scenario(text)
