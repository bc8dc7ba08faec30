"""Concept memory, forward inference and goal-driven operation execution."""
from __future__ import annotations

import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

from ..narsese import (ETERNAL, GOAL, IMPLICATION, INHERITANCE, JUDGMENT, PRESENT, QUESTION, Budget,
                       Compound, Intersection, Negation, Operation, Product, Sequence, Stamp, Statement,
                       Task, Term, TruthValue, parse_knowledge, term_matches)
from . import truth as tf
from .bag import Bag

CONCEPT_CAPACITY = 256
LINK_CAPACITY = 16
BELIEF_CAPACITY = 8
EVENT_CAPACITY = 128
QUESTION_CAPACITY = 8
DECISION_THRESHOLD = 0.6
TEMPORAL_WINDOW = 1.0
RULE_DISCOUNT = 0.9


@dataclass(frozen=True)
class Derivation:
    conclusion: Task
    rule: str
    parent_stamps: tuple
    trace: str
    parents: tuple = field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class Execution:
    """One executed operation together with the chain of reasoning behind it."""

    operation: Operation
    args: Optional[Product]
    statement: Term
    cycle: int
    time: float
    desire: TruthValue
    expectation: float
    trace: tuple
    event: Task = field(compare=False, repr=False)

    @property
    def name(self) -> str:
        return self.operation.name


def _sentence(term: Term, punctuation: str, tense: str) -> str:
    return f"{term}{punctuation}" + (" :|:" if tense == PRESENT else "")


def _stamp_text(stamp: Stamp) -> str:
    return "{" + ",".join(str(e) for e in stamp.evidence) + "}"


def trace_line(cycle: int, rule: str, task: Task) -> str:
    tv = "-" if task.truth is None else str(task.truth)
    return f"{cycle} | {rule} | {_sentence(task.term, task.punctuation, task.tense)} | {tv} | {_stamp_text(task.stamp)}"


def _derived_budget(a: Task, b: Task) -> Budget:
    return Budget(a.budget.priority * b.budget.priority * RULE_DISCOUNT,
                  min(a.budget.durability, b.budget.durability),
                  min(a.budget.quality, b.budget.quality))


@lru_cache(maxsize=4096)
def _compose(p1: Term, p2: Term) -> Optional[Term]:
    """``(p1 & p2)``, or None when one predicate already contains the other."""
    out = Intersection([p1, p2])
    if out == p1 or out == p2:
        return None
    return out


def procedural_parts(term: Term):
    """Split ``<(C &/ op) => G>`` into ``(C, op, G)``; None for anything else."""
    if not (isinstance(term, Statement) and term.copula == IMPLICATION and isinstance(term.subject, Sequence)):
        return None
    items = term.subject.items
    if len(items) != 2 or not _is_operation(items[1]):
        return None
    return items[0], items[1], term.predicate


def _is_operation(term: Term) -> bool:
    return isinstance(term, Operation) or (
        isinstance(term, Statement) and term.copula == INHERITANCE and isinstance(term.predicate, Operation))


def _split_operation(term: Term):
    if isinstance(term, Operation):
        return term, None
    return term.predicate, term.subject if isinstance(term.subject, Product) else Product([term.subject])


def _in_window(a: Task, b: Task, window: float) -> bool:
    return abs(a.occurrence - b.occurrence) <= window + 1e-9


def _conclusions(task: Task, belief: Task, window: float = TEMPORAL_WINDOW, operations=None) -> list:
    """``(rule, term, truth, tense, occurrence)`` for each applicable rule."""
    if not (task.is_judgment and belief.is_judgment):
        return []
    if task.stamp.overlaps(belief.stamp):
        return []
    a, b = task.term, belief.term
    out = []
    # intersection composition: same subject, both eternal or both recent events
    if (isinstance(a, Statement) and isinstance(b, Statement) and a.copula == INHERITANCE
            and b.copula == INHERITANCE and a.subject == b.subject and a.predicate != b.predicate
            and task.tense == belief.tense and (task.tense == ETERNAL or _in_window(task, belief, window))):
        pred = _compose(a.predicate, b.predicate)
        if pred is not None:
            occ = None if task.tense == ETERNAL else max(task.occurrence, belief.occurrence)
            out.append(("composition", Statement(a.subject, INHERITANCE, pred),
                        tf.intersection(task.truth, belief.truth), task.tense, occ))
    for rule, prem in ((task, belief), (belief, task)):
        r = rule.term
        if not (isinstance(r, Statement) and r.copula == IMPLICATION and rule.tense == ETERNAL):
            continue
        parts = procedural_parts(r)
        if parts is None:
            # deduction / detachment
            s = term_matches(r.subject, prem.term)
            if s is None:
                continue
            concl = r.predicate.substitute(s)
            if concl.has_variables:
                continue
            out.append(("deduction", concl, tf.deduction(rule.truth, prem.truth), prem.tense, prem.occurrence))
        else:
            # sequence satisfaction: the condition happened, so the operation now promises the goal
            cond, op, goal = parts
            if not prem.is_event:
                continue
            s = term_matches(cond, prem.term)
            if s is None:
                continue
            if operations is not None and _split_operation(op)[0].name not in operations:
                continue
            concl = Statement(op.substitute(s), IMPLICATION, goal.substitute(s))
            out.append(("sequence", concl, tf.deduction(rule.truth, prem.truth), PRESENT, prem.occurrence))
    return out


def infer(task: Task, belief: Task, cycle: int = 0, window: float = TEMPORAL_WINDOW,
          operations=None) -> list:
    """Apply composition, deduction and sequence satisfaction to a premise pair."""
    derivations = []
    stamp = task.stamp.merge(belief.stamp, max(task.stamp.creation, belief.stamp.creation))
    budget = _derived_budget(task, belief)
    for rule, term, tv, tense, occ in _conclusions(task, belief, window, operations):
        concl = Task(term, JUDGMENT, tense, tv, occ, stamp, budget)
        derivations.append(Derivation(concl, rule, (task.stamp, belief.stamp),
                                      trace_line(cycle, rule, concl), (task, belief)))
    return derivations


def revise(a: Task, b: Task) -> Task:
    """Pool two judgments of one statement; refuses shared evidence."""
    if a.term != b.term:
        raise ValueError(f"cannot revise different statements {a.term} and {b.term}")
    if a.stamp.overlaps(b.stamp):
        raise ValueError("revision refused: stamps share evidence")
    occ = a.occurrence if a.occurrence is not None else b.occurrence
    return Task(a.term, JUDGMENT, a.tense, tf.revision(a.truth, b.truth), occ,
                a.stamp.merge(b.stamp, max(a.stamp.creation, b.stamp.creation)),
                Budget(max(a.budget.priority, b.budget.priority), max(a.budget.durability, b.budget.durability),
                       max(a.budget.quality, b.budget.quality)))


class Concept:
    def __init__(self, term: Term):
        self.term = term
        self.beliefs: list = []
        self.links = Bag(LINK_CAPACITY)
        self.questions: list = []

    def best(self) -> Optional[Task]:
        return self.beliefs[0] if self.beliefs else None

    def has_evidence(self, evidence: tuple, occurrence) -> bool:
        return any(b.stamp.evidence == evidence and b.occurrence == occurrence for b in self.beliefs)

    def add_belief(self, task: Task) -> Optional[Task]:
        """Insert a judgment; returns the revised belief when revision happened."""
        revised = None
        for k, old in enumerate(self.beliefs):
            if old.occurrence != task.occurrence:
                continue
            if old.stamp.evidence == task.stamp.evidence:
                return None
            if old.stamp.overlaps(task.stamp):
                if task.truth.c <= old.truth.c:
                    return None
                self.beliefs[k] = task
                break
            revised = revise(old, task)
            self.beliefs[k] = revised
            break
        else:
            self.beliefs.append(task)
        self.beliefs.sort(key=lambda t: (-t.truth.c, -(t.occurrence if t.occurrence is not None else float("-inf"))))
        del self.beliefs[BELIEF_CAPACITY:]
        return revised


class Memory:
    """All reasoner state for one run. ``time`` is set by the caller (simulation seconds)."""

    def __init__(self, seed: int = 0, threshold: float = DECISION_THRESHOLD, window: float = TEMPORAL_WINDOW,
                 event_capacity: int = EVENT_CAPACITY, concept_capacity: int = CONCEPT_CAPACITY):
        self.rng = random.Random(seed)
        self.threshold = threshold
        self.window = window
        self.concepts = Bag(concept_capacity)
        self.events: deque = deque(maxlen=event_capacity)
        self.clock = 0
        self.time = 0.0
        self.operations: dict = {}
        self.goals: dict = {}
        self.rules: dict = {}
        self.var_rules: dict = {}
        self.index = defaultdict(dict)
        self.log: list = []
        self.origins: dict = {}
        self.executions: list = []
        self._evidence = 0
        self._event_seq = 0
        self._decided_seq = 0
        self._decide_all = True
        self._last_exec: dict = {}

    # -- input -------------------------------------------------------------

    def register(self, name: str, callback: Optional[Callable] = None):
        self.operations[name.lstrip("^")] = callback

    def new_evidence(self) -> int:
        self._evidence += 1
        return self._evidence

    def input_task(self, task: Task) -> "Memory":
        """Accept an external task: stamp it, route it to its concept and link it."""
        stamp = task.stamp
        if not stamp.evidence:
            stamp = Stamp((self.new_evidence(),), self.time)
        occ = task.occurrence
        if task.tense == PRESENT and occ is None:
            occ = self.time
        task = Task(task.term, task.punctuation, task.tense, task.truth, occ, stamp, task.budget)
        concept = self._concept(task.term, task.budget.priority)
        self.concepts.set_priority(task.term, self.concepts.priority(task.term) + task.budget.priority)
        self._store(task, concept, trace_line(self.clock, "input", task))
        return self

    def load(self, text: str) -> "Memory":
        for task in parse_knowledge(text):
            self.input_task(task)
        return self

    def _concept(self, term: Term, priority: float) -> Concept:
        c = self.concepts.get(term)
        if c is None:
            c = Concept(term)
            self.concepts.put(term, c, priority)
        return c

    def _store(self, task: Task, concept: Concept, line: str, derivation: Optional[Derivation] = None) -> bool:
        key = (task.term, task.stamp.evidence, task.occurrence)
        if task.punctuation == JUDGMENT:
            if concept.has_evidence(task.stamp.evidence, task.occurrence):
                return False
            revised = concept.add_belief(task)
            if concept.best() is None or not any(b is task or b is revised for b in concept.beliefs):
                return False
            self.log.append(line)
            self.origins[key] = derivation
            if revised is not None:
                rd = Derivation(revised, "revision", (task.stamp,), trace_line(self.clock, "revision", revised),
                                (task,))
                self.log.append(rd.trace)
                self.origins[(revised.term, revised.stamp.evidence, revised.occurrence)] = rd
                task = revised
            if task.is_event:
                self._event_seq += 1
                self.events.append((self._event_seq, task))
            elif procedural_parts(task.term) is not None:
                self._add_rule(self.rules, task)
            elif (isinstance(task.term, Statement) and task.term.copula == IMPLICATION
                  and task.term.subject.has_variables):
                self._add_rule(self.var_rules, task)
        elif task.punctuation == GOAL:
            old = self.goals.get(task.term)
            if old is not None and old.stamp.evidence == task.stamp.evidence:
                return False
            self.goals[task.term] = task if old is None or task.truth.c >= old.truth.c else old
            self._decide_all = True
            self.log.append(line)
        else:
            if task in concept.questions:
                return False
            concept.questions.append(task)
            del concept.questions[:-QUESTION_CAPACITY]
            self.log.append(line)
        link_key = (task.term, task.punctuation, task.stamp.evidence, task.occurrence)
        concept.links.put(link_key, task, task.budget.priority)
        for comp in _components(task.term):
            self._concept(comp, task.budget.priority).links.put(link_key, task, task.budget.priority)
            self.index[comp][task.term] = None
        return True

    def _add_rule(self, table: dict, task: Task):
        old = table.get(task.term)
        if old is None or task.truth.c >= old.truth.c:
            table[task.term] = task
        self._decide_all = True

    # -- inference -----------------------------------------------------------

    def _candidates(self, task: Task) -> list:
        terms = {}
        for comp in _components(task.term):
            terms[comp] = None
            terms.update(self.index.get(comp, {}))
        terms.update(self.index.get(task.term, {}))
        terms.pop(task.term, None)
        out = []
        for term in terms:
            c = self.concepts.get(term)
            if c is not None and c.beliefs:
                out.append(c.best())
        if task.is_judgment:
            out.extend(self.var_rules.values())
            out.extend(self.rules.values())
        return out

    def _novel(self, task: Task, belief: Task) -> list:
        evidence = tuple(sorted(set(task.stamp.evidence + belief.stamp.evidence)))
        found = []
        for item in _conclusions(task, belief, self.window, self.operations or None):
            c = self.concepts.get(item[1])
            if c is None or not c.has_evidence(evidence, item[4]):
                found.append(item)
        return found

    def select_belief(self, task: Task) -> Optional[Task]:
        """Highest-confidence belief that yields at least one new conclusion with ``task``."""
        best, best_c, ties = None, -1.0, []
        for b in self._candidates(task):
            if b.truth.c < best_c or not self._novel(task, b):
                continue
            if b.truth.c > best_c:
                best_c, ties = b.truth.c, [b]
            else:
                ties.append(b)
        if ties:
            best = ties[0] if len(ties) == 1 else self.rng.choice(ties)
        return best

    def _derive(self, d: Derivation) -> bool:
        task = d.conclusion
        concept = self.concepts.get(task.term)
        if concept is None:
            concept = self._concept(task.term, task.budget.priority)
        return self._store(task, concept, d.trace, d)

    def cycle(self, rng: Optional[random.Random] = None) -> tuple:
        """One attention step; returns ``(self, outputs)`` with derivations then executions."""
        rng = rng or self.rng
        self.clock += 1
        outputs = []
        concept = self.concepts.sample(rng)
        if concept is not None:
            task = concept.links.sample(rng)
            if task is not None:
                belief = self.select_belief(task)
                if belief is not None:
                    for d in infer(task, belief, self.clock, self.window, self.operations or None):
                        if self._derive(d):
                            outputs.append(d)
                factor = task.budget.durability
                key = (task.term, task.punctuation, task.stamp.evidence, task.occurrence)
                if key in concept.links:
                    concept.links.scale(key, factor)
            else:
                factor = Budget().durability
            if concept.term in self.concepts:
                self.concepts.scale(concept.term, factor)
        outputs.extend(self._decide_pending())
        return self, outputs

    # -- decisions -----------------------------------------------------------

    def _recent_events(self, since: int = 0):
        for seq, ev in self.events:
            if seq > since and 0.0 <= self.time - ev.occurrence <= self.window + 1e-9:
                yield ev

    def _decide_pending(self) -> list:
        since = 0 if self._decide_all else self._decided_seq
        self._decide_all = False
        if since >= self._event_seq:
            return []
        self._decided_seq = self._event_seq
        events = list(self._recent_events(since))
        out = []
        for goal in list(self.goals.values()):
            ex = self._decide(goal, events)
            if ex is not None:
                out.append(ex)
        return out

    def decide(self, goal: Task) -> Optional[Execution]:
        """Try to serve ``goal`` with a procedural rule whose condition was just observed."""
        if not goal.is_goal:
            raise ValueError("decide needs a goal")
        return self._decide(goal, list(self._recent_events()))

    def _decide(self, goal: Task, events: list) -> Optional[Execution]:
        best = None
        for rule in self.rules.values():
            cond, op, consequent = procedural_parts(rule.term)
            s0 = term_matches(consequent, goal.term)
            if s0 is None:
                continue
            for ev in events:
                if not _quick_match(cond, ev.term):
                    continue
                s = term_matches(cond, ev.term, s0)
                if s is None:
                    continue
                statement = op.substitute(s)
                if statement.has_variables:
                    continue
                last = self._last_exec.get(statement)
                if last is not None and self.time - last < self.window:
                    continue
                precond = tf.deduction(rule.truth, ev.truth)
                desire = tf.deduction(precond, goal.truth)
                e = tf.expectation(desire)
                if e <= self.threshold:
                    continue
                rank = (e, ev.occurrence)
                if best is None or rank > best[0]:
                    best = (rank, rule, ev, s, statement, precond, desire, e)
        if best is None:
            return None
        _, rule, ev, s, statement, precond, desire, e = best
        return self._execute(goal, rule, ev, statement, precond, desire, e)

    def _execute(self, goal, rule, ev, statement, precond, desire, e) -> Execution:
        op, args = _split_operation(statement)
        self._last_exec[statement] = self.time
        stamp = rule.stamp.merge(ev.stamp, self.time).merge(goal.stamp, self.time)
        seq_task = Task(Statement(statement, IMPLICATION, goal.term), JUDGMENT, PRESENT, precond, ev.occurrence,
                        rule.stamp.merge(ev.stamp, self.time))
        lines = self.explain(ev) + [trace_line(0, "input", rule), trace_line(0, "input", goal)]
        lines = _dedupe(lines)
        lines.append(trace_line(self.clock, "sequence", seq_task))
        lines.append(f"{self.clock} | decide | {statement}! | {desire} | {_stamp_text(stamp)}")
        lines.append(f"{self.clock} | execute | {statement} | e={e:.3f} | {_stamp_text(stamp)}")
        self.log.extend(lines[-3:])
        ex = Execution(op, args, statement, self.clock, self.time, desire, e, tuple(lines), ev)
        self.executions.append(ex)
        callback = self.operations.get(op.name)
        if callback is not None:
            callback(ex)
        return ex

    def explain(self, task: Task) -> list:
        """Trace lines of every derivation leading to ``task``, premises first."""
        out, seen = [], set()

        def visit(t: Task):
            key = (t.term, t.stamp.evidence, t.occurrence)
            if key in seen:
                return
            seen.add(key)
            d = self.origins.get(key)
            if d is None:
                out.append(trace_line(0, "input", t))
                return
            for p in d.parents:
                visit(p)
            out.append(d.trace)

        visit(task)
        return out


def _dedupe(lines):
    return list(dict.fromkeys(lines))


def _quick_match(pattern: Term, ground: Term) -> bool:
    if type(pattern) is not type(ground):
        return False
    if isinstance(pattern, Statement):
        if pattern.copula != ground.copula:
            return False
        p = pattern.predicate
        return p.has_variables or p == ground.predicate
    return True


def _components(term: Term) -> tuple:
    if isinstance(term, (Statement, Negation)) or isinstance(term, Compound):
        return term.components
    return ()


# functional facade ---------------------------------------------------------

def input_task(memory: Memory, task: Task) -> Memory:
    return memory.input_task(task)


def cycle(memory: Memory, rng: Optional[random.Random] = None) -> tuple:
    return memory.cycle(rng)


def decide(memory: Memory, goal: Task) -> Optional[Execution]:
    return memory.decide(goal)
