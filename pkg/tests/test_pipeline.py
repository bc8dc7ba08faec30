import filecmp
import math

import pytest

from nesywarn import pipeline as pl
from nesywarn.crash_history import CrashRecord, CrashStore
from nesywarn.tracking import CONFIRMED, Track
from nesywarn.world import builtin_scenario


def ego_ctx(speed=15.0, at_intersection=False):
    return pl.EgoContext(Track(0, (0.0, 0.0), (speed, 0.0), status=CONFIRMED), 0.0, speed, at_intersection)


def npc_track(tid, pos, vel, cls="vehicle", weaving=False):
    return Track(tid, pos, vel, hits=3, status=CONFIRMED, cls=cls, weaving=weaving)


def lines(tasks):
    return [str(t) for t in tasks]


# -- encoding ------------------------------------------------------------------

def test_approaching_car_gives_reference_lines():
    out = lines(pl.encode_events([npc_track(12, (40.0, 0.0), (-10.0, 0.0))], ego_ctx(), 0.0, 1.0))
    assert "<{obj12} --> car>. :|: %1.00;0.90%" in out
    assert "<{obj12} --> [approaching]>. :|: %1.00;0.90%" in out
    assert "<{obj12} --> [front]>. :|: %1.00;0.90%" in out


def test_nothing_to_report():
    assert pl.encode_events([], ego_ctx(), 0.0, 0.0) == []


def test_weaving_track_line():
    tr = npc_track(3, (181.0, 0.0), (-20.0, 0.0), weaving=True)
    assert "<{obj3} --> [weaving]>. :|: %1.00;0.90%" in lines(pl.encode_events([tr], ego_ctx(0.0), 0.0, 0.0))


def test_far_track_not_approaching():
    out = lines(pl.encode_events([npc_track(1, (200.0, 0.0), (-10.0, 0.0))], ego_ctx(), 0.0, 0.0))
    assert not any("approaching" in s for s in out)


def test_tentative_tracks_skipped():
    assert pl.encode_events([Track(1, (10.0, 0.0))], ego_ctx(), 0.0, 0.0) == []


def test_ego_context_lines():
    out = lines(pl.encode_events([], ego_ctx(0.0, True), 0.0, 0.0))
    assert out == ["<{SELF} --> [at_intersection]>. :|: %1.00;0.90%", "<{SELF} --> [parked]>. :|: %1.00;0.90%"]


def test_risk_prior_line():
    (t,) = pl.encode_events([], ego_ctx(), 0.7, 0.0)
    assert str(t.term) == "<{HERE} --> [high_risk_location]>"
    assert t.truth.f == pytest.approx(0.7) and t.budget.priority == pytest.approx(0.85)
    assert pl.encode_events([], ego_ctx(), 0.49, 0.0) == []


@pytest.mark.parametrize("bearing,q", [(0.0, "front"), (math.pi / 2, "left"), (-math.pi / 2, "right"),
                                       (math.pi, "behind"), (-3.0, "behind")])
def test_quadrants(bearing, q):
    assert pl.quadrant(bearing) == q


# -- alerts ------------------------------------------------------------------

def test_alert_needs_message_and_derivation():
    with pytest.raises(ValueError):
        pl.Alert(1.0, "x", "", None, ("a",))
    with pytest.raises(ValueError):
        pl.Alert(1.0, "x", "msg", None, ())


def test_alert_json_round_trip():
    a = pl.Alert(1.25, "weaving_vehicle", "weaving vehicle from {obj1}", 3.5, ("l1", "l2"), "{obj1}")
    assert pl.Alert.from_json(a.to_json()) == a


# -- end to end ------------------------------------------------------------------

@pytest.fixture(scope="module")
def intersection_run():
    return pl.run_scenario(pl.RunConfig(builtin_scenario("intersection"), seed=0))


@pytest.fixture(scope="module")
def shoulder_run():
    return pl.run_scenario(pl.RunConfig(builtin_scenario("shoulder_weaving"), seed=0))


def test_intersection_alert_before_entry(intersection_run):
    tr = intersection_run
    kinds = [a for a in tr.alerts if a.kind == "intersection_hazard"]
    assert kinds and tr.ego_entry_t is not None and kinds[0].t < tr.ego_entry_t
    assert tr.verdict.passed


def test_shoulder_weaving_alert_lead(shoulder_run):
    tr = shoulder_run
    (first_crash, *_) = sorted(c.t for c in tr.collisions)
    weave = [a for a in tr.alerts if a.kind == "weaving_vehicle"]
    assert weave and first_crash - weave[0].t >= 2.5
    assert min(tr.metrics["weaving_detection_range"].values()) >= 170.0
    assert tr.verdict.passed


@pytest.mark.parametrize("which", ["intersection", "shoulder"])
def test_alert_explainability_and_causality(which, intersection_run, shoulder_run):
    tr = intersection_run if which == "intersection" else shoulder_run
    assert tr.alerts
    observed = {}
    for line in tr.events:
        t, _, sentence = line.partition(" ")
        observed.setdefault(sentence, float(t))
    for a in tr.alerts:
        assert a.derivation and "^alert" in a.derivation[-1] and "execute" in a.derivation[-1]
        assert a.kind in a.derivation[-1]
        for line in a.derivation:
            _, rule, sentence, tv, _ = (s.strip() for s in line.split(" | "))
            if rule == "input" and ":|:" in sentence:
                assert observed[f"{sentence} {tv}"] <= a.t + 1e-9
    assert [a.t for a in tr.alerts] == sorted(a.t for a in tr.alerts)


def test_benign_is_silent_over_100_seeds():
    sc = builtin_scenario("benign")
    for seed in range(100):
        tr = pl.run_scenario(pl.RunConfig(sc, seed=seed))
        assert tr.alerts == [] and tr.verdict.passed, seed


def test_crash_prior_yields_location_alert():
    sc = builtin_scenario("benign")
    here = pl.cell_of(sc.ego.pose.x, sc.ego.pose.y)
    store = CrashStore([CrashRecord(here, sc.hour, "angle", 40)])
    tr = pl.run_scenario(pl.RunConfig(sc, seed=0, crash_db=store))
    assert [a.kind for a in tr.alerts] == ["location_risk"]
    assert any("high_risk_location" in e for e in tr.events)


def test_reruns_are_byte_identical(tmp_path):
    sc = builtin_scenario("intersection")
    for seed in range(3):
        a, b = tmp_path / f"a{seed}", tmp_path / f"b{seed}"
        pl.run_scenario(pl.RunConfig(sc, seed=seed, out=str(a)))
        pl.run_scenario(pl.RunConfig(sc, seed=seed, out=str(b)))
        names = sorted(p.name for p in a.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert mismatch == [] and errors == [] and len(match) == 11


def test_trace_load_and_metrics(tmp_path, intersection_run):
    intersection_run.write(tmp_path)
    back = pl.RunTrace.load(tmp_path)
    assert back.alerts == intersection_run.alerts
    assert back.verdict == intersection_run.verdict
    assert pl.emit_metrics(back) == intersection_run.metrics


def test_empty_trace_metrics():
    assert pl.emit_metrics(pl.RunTrace("x", 0)) == {}


def test_retrained_first_detection_range():
    sc = builtin_scenario("head_on")
    tr = pl.run_scenario(pl.RunConfig(sc, seed=0, detector="yolov4_retrained", reasoning=False))
    (first,) = tr.metrics["first_detection"]["yolov4_retrained"].values()
    assert first["range"] == pytest.approx(88.0, abs=18.68 * sc.timestep)


def test_unknown_detector_is_config_error():
    with pytest.raises(KeyError):
        pl.run_scenario(pl.RunConfig(builtin_scenario("minimal"), detector="nope"))
