import json
import sys

import pytest

from nesywarn.world import load_scenario


def scenario_doc(vehicles, **extra):
    doc = {"name": "t", "seed": 0, "duration_s": 10.0, "timestep_s": 0.05, "vehicles": vehicles}
    doc.update(extra)
    return doc


def make_scenario(vehicles, **extra):
    return load_scenario(json.dumps(scenario_doc(vehicles, **extra)))


def ego(x=0.0, y=0.0, heading=0.0, speed=0.0, **kw):
    v = {"id": "ego", "role": "ego", "pose": {"x": x, "y": y, "heading": heading}, "speed": speed}
    v.update(kw)
    return v


def npc(vid, x, y, heading=0.0, speed=0.0, **kw):
    v = {"id": vid, "role": "npc", "pose": {"x": x, "y": y, "heading": heading}, "speed": speed}
    v.update(kw)
    return v


@pytest.fixture
def approach_text():
    from importlib.resources import files

    return files("nesywarn.data").joinpath("approach_alert.nal").read_text()


# -- random Narsese ------------------------------------------------------------------

def random_term(rng, depth=4):
    from nesywarn import narsese as ns

    names = ["a", "b", "car", "obj12", "SELF", "x_1", "crash"]
    if depth == 0 or rng.random() < 0.3:
        k = rng.random()
        if k < 0.7:
            return ns.Atom(rng.choice(names))
        if k < 0.85:
            return ns.Variable(rng.choice("#$"), rng.choice(["1", "2", "x"]))
        return ns.Operation(rng.choice(["alert", "brake"]))
    kind = rng.choice(["ext", "int", "and", "seq", "prod", "neg", "stmt", "stmt"])
    sub = lambda: random_term(rng, depth - 1)
    n = rng.randint(1, 3)
    if kind == "ext":
        return ns.ExtSet([sub() for _ in range(n)])
    if kind == "int":
        return ns.IntSet([sub() for _ in range(n)])
    if kind == "and":
        items = [sub() for _ in range(n + 1)]
        try:
            return ns.Intersection(items)
        except ValueError:  # duplicates collapsed below two components
            return items[0]
    if kind == "seq":
        return ns.Sequence([sub() for _ in range(n + 1)])
    if kind == "prod":
        return ns.Product([sub() for _ in range(n)])
    if kind == "neg":
        return ns.Negation(sub())
    return ns.Statement(sub(), rng.choice(["-->", "=>"]), sub())


def random_task(rng, depth=4):
    from nesywarn import narsese as ns

    term = random_term(rng, depth)
    punct = rng.choice(".!?")
    tense = rng.choice([ns.ETERNAL, ns.PRESENT])
    truth = None
    if punct != "?" and rng.random() < 0.7:
        f = rng.choice([round(rng.random(), 2), rng.random(), 0.0, 1.0])
        c = rng.choice([round(rng.random() * 0.99, 2), rng.random() * 0.999, 0.0, 1e-5])
        truth = ns.TruthValue(f, c)
    return ns.Task(term, punct, tense, truth)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
