"""Graph temporal logic: syntax, grounding, monitoring and automata."""

from .automaton import Fragment, Polarity, SpecAutomaton, UnsupportedFormula, classify, to_automaton
from .formula import ParseError, parse
from .grounding import GroundingError, ground, resolve_neighbors
from .monitor import Verdict, satisfies, satisfies_labels

__all__ = [
    "Fragment",
    "GroundingError",
    "ParseError",
    "Polarity",
    "SpecAutomaton",
    "UnsupportedFormula",
    "Verdict",
    "classify",
    "ground",
    "parse",
    "resolve_neighbors",
    "satisfies",
    "satisfies_labels",
    "to_automaton",
]
