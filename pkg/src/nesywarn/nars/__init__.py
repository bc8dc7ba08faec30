"""A small non-axiomatic reasoner: truth functions, bags and the inference engine."""
from .bag import Bag
from .engine import (Concept, Derivation, Execution, Memory, cycle, decide, infer, input_task, revise)
from .truth import deduction, expectation, intersection, revision

__all__ = ["Bag", "Concept", "Derivation", "Execution", "Memory", "cycle", "decide", "infer", "input_task",
           "revise", "deduction", "expectation", "intersection", "revision"]
