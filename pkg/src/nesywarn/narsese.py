"""Parser and formatter for the small Narsese subset used by the warning knowledge.

Supported: atoms, ``#``/``$`` variables, ``^`` operations, ``{}``/``[]`` sets,
intersection ``&``, sequence ``&/``, product ``*`` (prefix or infix form),
negation ``(--, t)``, the copulas ``-->`` and ``=>``, punctuation ``. ! ?``,
the present tense marker ``:|:``, ``%f;c%`` truth values and ``//`` comments.

Terms compare and hash by their canonical text, which is unambiguous, so two
terms are equal exactly when they are structurally equal.
"""
from __future__ import annotations

import re
from decimal import Decimal
from dataclasses import dataclass, field
from typing import Iterator, Optional

JUDGMENT, GOAL, QUESTION = ".", "!", "?"
ETERNAL, PRESENT = "eternal", "present"
INHERITANCE, IMPLICATION = "-->", "=>"

DEFAULT_TRUTH_F, DEFAULT_TRUTH_C = 1.0, 0.9
DEFAULT_BUDGET = (0.8, 0.8, 0.5)

_NAME = re.compile(r"[A-Za-z0-9_]+")


class NarseseError(ValueError):
    """Syntax error with a 1-based column into the offending line."""

    def __init__(self, message: str, column: int, text: str = ""):
        self.column = column
        self.text = text
        super().__init__(f"column {column}: {message}")


# --------------------------------------------------------------------------
# terms

class Term:
    __slots__ = ("_text", "_hash")

    def _finish(self, text: str):
        self._text = text
        self._hash = hash((type(self).__name__, text))

    def __eq__(self, other):
        return type(other) is type(self) and other._text == self._text

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self._text < other._text

    def __str__(self):
        return self._text

    def __repr__(self):
        return f"{type(self).__name__}({self._text!r})"

    @property
    def components(self) -> tuple:
        return ()

    def walk(self) -> Iterator["Term"]:
        yield self
        for c in self.components:
            yield from c.walk()

    @property
    def has_variables(self) -> bool:
        return any(isinstance(t, Variable) for t in self.walk())

    def substitute(self, mapping: dict) -> "Term":
        return self


class Atom(Term):
    __slots__ = ("name",)

    def __init__(self, name: str):
        if not _NAME.fullmatch(name):
            raise ValueError(f"bad atom name {name!r}")
        self.name = name
        self._finish(name)


class Variable(Term):
    __slots__ = ("kind", "name")

    def __init__(self, kind: str, name: str):
        if kind not in "#$" or not _NAME.fullmatch(name):
            raise ValueError(f"bad variable {kind}{name}")
        self.kind = kind
        self.name = name
        self._finish(kind + name)

    def substitute(self, mapping):
        return mapping.get(self, self)


class Operation(Term):
    __slots__ = ("name",)

    def __init__(self, name: str):
        if not _NAME.fullmatch(name):
            raise ValueError(f"bad operation name {name!r}")
        self.name = name
        self._finish("^" + name)


class Compound(Term):
    """Base for terms built from an ordered tuple of components."""

    __slots__ = ("items",)
    ordered = True

    def __init__(self, items):
        items = tuple(items)
        if not self.ordered:
            items = tuple(sorted(set(items)))
        self._check(items)
        self.items = items
        self._finish(self._render())

    def _check(self, items):
        if not items:
            raise ValueError(f"{type(self).__name__} needs at least one component")

    @property
    def components(self):
        return self.items

    def substitute(self, mapping):
        return type(self)(i.substitute(mapping) for i in self.items)


class ExtSet(Compound):
    __slots__ = ()
    ordered = False

    def _render(self):
        return "{" + ",".join(map(str, self.items)) + "}"


class IntSet(Compound):
    __slots__ = ()
    ordered = False

    def _render(self):
        return "[" + ",".join(map(str, self.items)) + "]"


class Intersection(Compound):
    """Extensional intersection; nested intersections are flattened."""

    __slots__ = ()
    ordered = False

    def __init__(self, items):
        flat = []
        for i in items:
            flat.extend(i.items if isinstance(i, Intersection) else (i,))
        super().__init__(flat)

    def _check(self, items):
        if len(items) < 2:
            raise ValueError("intersection needs at least two distinct components")

    def _render(self):
        return "(" + " & ".join(map(str, self.items)) + ")"


class Sequence(Compound):
    __slots__ = ()

    def _check(self, items):
        if len(items) < 2:
            raise ValueError("sequence needs at least two components")

    def _render(self):
        return "(" + " &/ ".join(map(str, self.items)) + ")"


class Product(Compound):
    __slots__ = ()

    def _render(self):
        return "(*," + ",".join(map(str, self.items)) + ")"


class Negation(Term):
    __slots__ = ("term",)

    def __init__(self, term: Term):
        self.term = term
        self._finish(f"(--,{term})")

    @property
    def components(self):
        return (self.term,)

    def substitute(self, mapping):
        return Negation(self.term.substitute(mapping))


class Statement(Term):
    __slots__ = ("subject", "copula", "predicate")

    def __init__(self, subject: Term, copula: str, predicate: Term):
        if copula not in (INHERITANCE, IMPLICATION):
            raise ValueError(f"unknown copula {copula!r}")
        self.subject = subject
        self.copula = copula
        self.predicate = predicate
        self._finish(f"<{subject} {copula} {predicate}>")

    @property
    def components(self):
        return (self.subject, self.predicate)

    def substitute(self, mapping):
        return Statement(self.subject.substitute(mapping), self.copula, self.predicate.substitute(mapping))


def inheritance(subject: Term, predicate: Term) -> Statement:
    return Statement(subject, INHERITANCE, predicate)


# --------------------------------------------------------------------------
# tasks

@dataclass(frozen=True)
class TruthValue:
    f: float = DEFAULT_TRUTH_F
    c: float = DEFAULT_TRUTH_C

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"frequency {self.f} outside [0, 1]")
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"confidence {self.c} outside [0, 1)")

    @property
    def expectation(self) -> float:
        return self.c * (self.f - 0.5) + 0.5

    def __str__(self):
        return f"%{_fmt(self.f)};{_fmt(self.c)}%"


@dataclass(frozen=True)
class Budget:
    priority: float = DEFAULT_BUDGET[0]
    durability: float = DEFAULT_BUDGET[1]
    quality: float = DEFAULT_BUDGET[2]

    def __post_init__(self):
        for name in ("priority", "durability", "quality"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")


@dataclass(frozen=True)
class Stamp:
    evidence: tuple = ()
    creation: float = 0.0

    def __post_init__(self):
        ev = tuple(sorted(set(self.evidence)))
        object.__setattr__(self, "evidence", ev)

    def overlaps(self, other: "Stamp") -> bool:
        return not set(self.evidence).isdisjoint(other.evidence)

    def merge(self, other: "Stamp", creation: float) -> "Stamp":
        return Stamp(self.evidence + other.evidence, creation)


@dataclass(frozen=True)
class Task:
    """A sentence plus bookkeeping; equality covers the sentence only."""

    term: Term
    punctuation: str = JUDGMENT
    tense: str = ETERNAL
    truth: Optional[TruthValue] = None
    occurrence: Optional[float] = field(default=None, compare=False)
    stamp: Stamp = field(default=Stamp(), compare=False)
    budget: Budget = field(default=Budget(), compare=False)

    def __post_init__(self):
        if self.punctuation not in (JUDGMENT, GOAL, QUESTION):
            raise ValueError(f"bad punctuation {self.punctuation!r}")
        if self.punctuation == QUESTION and self.truth is not None:
            raise ValueError("questions carry no truth value")
        if self.punctuation != QUESTION and self.truth is None:
            object.__setattr__(self, "truth", TruthValue())

    @property
    def is_judgment(self) -> bool:
        return self.punctuation == JUDGMENT

    @property
    def is_goal(self) -> bool:
        return self.punctuation == GOAL

    @property
    def is_event(self) -> bool:
        return self.tense == PRESENT

    def __str__(self):
        return format_task(self)


def _fmt(x: float) -> str:
    s = f"{x:.2f}"
    # shortest exact digits, never in exponent form (the parser reads plain decimals)
    return s if float(s) == x else format(Decimal(repr(float(x))), "f")


def format_task(task: Task) -> str:
    out = f"{task.term}{task.punctuation}"
    if task.tense == PRESENT:
        out += " :|:"
    if task.truth is not None:
        out += f" {task.truth}"
    return out


# --------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.depth = 0  # open parentheses around the current position

    def error(self, msg, pos=None):
        raise NarseseError(msg, (self.pos if pos is None else pos) + 1, self.text)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self, s: str) -> bool:
        self.skip()
        return self.text.startswith(s, self.pos)

    def eat(self, s: str) -> bool:
        if self.peek(s):
            self.pos += len(s)
            return True
        return False

    def expect(self, s: str):
        if not self.eat(s):
            found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
            self.error(f"expected {s!r}, found {found!r}")

    def name(self, what: str) -> str:
        m = _NAME.match(self.text, self.pos)
        if not m:
            self.error(f"expected {what}")
        self.pos = m.end()
        return m.group()

    def build(self, fn, *args, pos):
        try:
            return fn(*args)
        except ValueError as e:
            self.error(str(e), pos)

    def term(self) -> Term:
        self.skip()
        start = self.pos
        if self.pos >= len(self.text):
            self.error("unexpected end of input, expected a term")
        c = self.text[self.pos]
        if c == "<":
            self.pos += 1
            subject = self.term()
            copula = self.copula()
            predicate = self.term()
            # a statement's '>' may be left out right before the ')' closing its compound
            if not (self.depth and self.peek(")")):
                self.expect(">")
            return Statement(subject, copula, predicate)
        if c == "(":
            return self.compound()
        if c in "{[":
            close = "}" if c == "{" else "]"
            self.pos += 1
            items = [self.term()]
            while self.eat(","):
                items.append(self.term())
            self.expect(close)
            return self.build(ExtSet if c == "{" else IntSet, items, pos=start)
        if c in "#$":
            self.pos += 1
            return Variable(c, self.name("variable name"))
        if c == "^":
            self.pos += 1
            return Operation(self.name("operation name"))
        if _NAME.match(c):
            return Atom(self.name("atom"))
        self.error(f"unexpected character {c!r}")

    def copula(self) -> str:
        self.skip()
        start = self.pos
        for cop in (INHERITANCE, IMPLICATION):
            if self.eat(cop):
                return cop
        m = re.compile(r"[-=<>|/\\*&~]+").match(self.text, self.pos)
        found = m.group() if m else self.text[self.pos:self.pos + 1] or "end of input"
        self.error(f"unknown copula {found!r}", start)

    _PREFIX_OPS = (("&/", Sequence), ("&", Intersection), ("*", Product))

    def compound(self) -> Term:
        self.depth += 1
        try:
            return self._compound()
        finally:
            self.depth -= 1

    def _compound(self) -> Term:
        start = self.pos
        self.expect("(")
        if self.eat("--"):
            self.expect(",")
            inner = self.term()
            self.expect(")")
            return Negation(inner)
        for sym, cls in self._PREFIX_OPS:
            save = self.pos
            if self.eat(sym) and self.eat(","):
                items = [self.term()]
                while self.eat(","):
                    items.append(self.term())
                self.expect(")")
                return self.build(cls, items, pos=start)
            self.pos = save
        items = [self.term()]
        op = None
        while not self.eat(")"):
            self.skip()
            if self.pos >= len(self.text):
                self.error("unbalanced '(': missing ')'", start)
            here = self.pos
            for sym, cls in self._PREFIX_OPS:
                if self.eat(sym):
                    if op is not None and op[0] != sym:
                        self.error(f"mixed infix operators {op[0]!r} and {sym!r}", here)
                    op = (sym, cls)
                    break
            else:
                self.error(f"expected infix operator or ')', found {self.text[here]!r}", here)
            items.append(self.term())
        if op is None:
            return items[0]
        return self.build(op[1], items, pos=start)

    def number(self) -> float:
        m = re.compile(r"\d+(\.\d*)?|\.\d+").match(self.text, self.pos)
        if not m:
            self.error("expected a number")
        self.pos = m.end()
        return float(m.group())

    def task(self) -> Task:
        term = self.term()
        self.skip()
        if self.pos >= len(self.text) or self.text[self.pos] not in ".!?":
            found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
            self.error(f"expected punctuation '.', '!' or '?', found {found!r}")
        punct = self.text[self.pos]
        self.pos += 1
        tense = PRESENT if self.eat(":|:") else ETERNAL
        truth = None
        if self.eat("%"):
            start = self.pos
            self.skip()
            f = self.number()
            c = DEFAULT_TRUTH_C
            if self.eat(";"):
                self.skip()
                c = self.number()
            self.expect("%")
            if punct == QUESTION:
                self.error("questions take no truth value", start)
            truth = self.build(TruthValue, f, c, pos=start)
        self.skip()
        if self.pos != len(self.text):
            self.error(f"unexpected trailing text {self.text[self.pos:]!r}")
        return Task(term, punct, tense, truth)


def strip_comment(line: str) -> str:
    i = line.find("//")
    return line if i < 0 else line[:i]


def parse_term(text: str) -> Term:
    p = _Parser(text)
    term = p.term()
    p.skip()
    if p.pos != len(text):
        p.error(f"unexpected trailing text {text[p.pos:]!r}")
    return term


def parse_task(text: str) -> Task:
    """Parse one Narsese line into a :class:`Task` (comments stripped)."""
    body = strip_comment(text)
    if not body.strip():
        raise NarseseError("empty input", 1, text)
    p = _Parser(body)
    try:
        return p.task()
    except RecursionError:
        raise NarseseError("term nested too deeply", p.pos + 1, text) from None


def parse_knowledge(text: str) -> list:
    """Parse a knowledge file; errors carry ``line N`` context."""
    tasks = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not strip_comment(line).strip():
            continue
        try:
            tasks.append(parse_task(line))
        except NarseseError as e:
            raise NarseseError(f"line {lineno}: {e}", e.column, line) from None
    return tasks


# --------------------------------------------------------------------------
# matching

def term_matches(pattern: Term, ground: Term, subst: Optional[dict] = None) -> Optional[dict]:
    """Substitution for the variables of ``pattern`` that makes it equal ``ground``."""
    subst = {} if subst is None else subst
    if isinstance(pattern, Variable):
        bound = subst.get(pattern)
        if bound is None:
            out = dict(subst)
            out[pattern] = ground
            return out
        return subst if bound == ground else None
    if type(pattern) is not type(ground):
        return None
    if not pattern.has_variables:
        return subst if pattern == ground else None
    if isinstance(pattern, Statement):
        if pattern.copula != ground.copula:
            return None
        s = term_matches(pattern.subject, ground.subject, subst)
        return None if s is None else term_matches(pattern.predicate, ground.predicate, s)
    if isinstance(pattern, Negation):
        return term_matches(pattern.term, ground.term, subst)
    if isinstance(pattern, Compound):
        if len(pattern.items) != len(ground.items):
            return None
        if pattern.ordered:
            s = subst
            for p, g in zip(pattern.items, ground.items):
                s = term_matches(p, g, s)
                if s is None:
                    return None
            return s
        return _match_unordered(list(pattern.items), list(ground.items), subst)
    return None


def _match_unordered(pats, grounds, subst):
    if not pats:
        return subst
    p = pats[0]
    for k, g in enumerate(grounds):
        s = term_matches(p, g, subst)
        if s is not None:
            s = _match_unordered(pats[1:], grounds[:k] + grounds[k + 1:], s)
            if s is not None:
                return s
    return None
