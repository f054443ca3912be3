"""Fragment classification and DFA compilation by formula progression.

Grounded formulas are first pushed into negation normal form.  The NNF
vocabulary adds the duals needed to keep negations on literals: ``Or``,
``Release`` (dual of the closed until), ``AlwLe``/``AlwGe`` (duals of the
bounded eventualities), and a negated threshold is again a threshold over
negated items.

Automaton states are progression residuals.  A residual is accepting when
every continuation satisfies it, which is decided on the residual graph:
it is accepting iff every path from it reaches the literal ``true``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np

from .formula import (
    And,
    Atom,
    AtLeast,
    Const,
    Eventually,
    Exists,
    Formula,
    Next,
    NodeAtom,
    Not,
    Until,
)
from .grounding import grounded_atoms

MAX_STATES = 200_000


class UnsupportedFormula(ValueError):
    pass


class Fragment(enum.Enum):
    COSAFE = "co-safe"
    SAFE = "safe"
    UNSUPPORTED = "unsupported"


# --- NNF terms ------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    atom: tuple[str, int]
    positive: bool


@dataclass(frozen=True)
class B:
    value: bool


@dataclass(frozen=True)
class NAnd:
    items: frozenset


@dataclass(frozen=True)
class NOr:
    items: frozenset


@dataclass(frozen=True)
class NNext:
    arg: object


@dataclass(frozen=True)
class NUntil:
    a: object
    b: object


@dataclass(frozen=True)
class NRelease:
    """Dual of :class:`NUntil`: (a | b) now, and either a now or the release continues."""

    a: object
    b: object


@dataclass(frozen=True)
class NEvLe:
    k: int
    arg: object


@dataclass(frozen=True)
class NAlwLe:
    k: int
    arg: object


@dataclass(frozen=True)
class NEvGe:
    k: int
    arg: object


@dataclass(frozen=True)
class NAlwGe:
    k: int
    arg: object


@dataclass(frozen=True)
class NAtLeast:
    n: int
    items: tuple


BT, BF = B(True), B(False)


def _key(x) -> str:
    return repr(x)


def mk_and(items) -> object:
    flat = set()
    for x in items:
        if isinstance(x, NAnd):
            flat |= x.items
        elif x == BF:
            return BF
        elif x != BT:
            flat.add(x)
    for x in flat:
        if isinstance(x, Lit) and Lit(x.atom, not x.positive) in flat:
            return BF
    if not flat:
        return BT
    if len(flat) == 1:
        return next(iter(flat))
    return NAnd(frozenset(flat))


def mk_or(items) -> object:
    flat = set()
    for x in items:
        if isinstance(x, NOr):
            flat |= x.items
        elif x == BT:
            return BT
        elif x != BF:
            flat.add(x)
    for x in flat:
        if isinstance(x, Lit) and Lit(x.atom, not x.positive) in flat:
            return BT
    if not flat:
        return BF
    if len(flat) == 1:
        return next(iter(flat))
    return NOr(frozenset(flat))


def mk_atleast(n: int, items) -> object:
    rest = []
    for x in items:
        if x == BT:
            n -= 1
        elif x != BF:
            rest.append(x)
    if n <= 0:
        return BT
    if n > len(rest):
        return BF
    if n == len(rest):
        return mk_and(rest)
    if n == 1:
        return mk_or(rest)
    return NAtLeast(n, tuple(sorted(rest, key=_key)))


def mk_evle(k, arg):
    return arg if k == 0 or arg in (BT, BF) else NEvLe(k, arg)


def mk_alwle(k, arg):
    return arg if k == 0 or arg in (BT, BF) else NAlwLe(k, arg)


def nnf(f: Formula, positive: bool = True):
    """Negation normal form of a grounded formula."""
    if isinstance(f, Const):
        return B(f.value == positive)
    if isinstance(f, NodeAtom):
        return Lit((f.name, f.node), positive)
    if isinstance(f, (Atom, Exists)):
        raise UnsupportedFormula("formula must be grounded before compilation")
    if isinstance(f, Not):
        return nnf(f.arg, not positive)
    if isinstance(f, Next):
        a = nnf(f.arg, positive)
        return a if a in (BT, BF) else NNext(a)
    if isinstance(f, And):
        parts = [nnf(f.left, positive), nnf(f.right, positive)]
        return mk_and(parts) if positive else mk_or(parts)
    if isinstance(f, Until):
        if positive:
            a, b = nnf(f.left), nnf(f.right)
            if b == BF or a == BF:
                return mk_and([a, b]) if a == BF else BF
            return NUntil(a, b)
        a, b = nnf(f.left, False), nnf(f.right, False)
        if a == BT or b == BT:
            return b if a != BT else BT
        return NRelease(a, b)
    if isinstance(f, Eventually):
        a = nnf(f.arg, positive)
        if f.cmp == "<=":
            return mk_evle(f.k, a) if positive else mk_alwle(f.k, a)
        if a in (BT, BF):
            return a
        return NEvGe(f.k, a) if positive else NAlwGe(f.k, a)
    if isinstance(f, AtLeast):
        if positive:
            return mk_atleast(f.n, [nnf(x) for x in f.items])
        return mk_atleast(len(f.items) - f.n + 1, [nnf(x, False) for x in f.items])
    raise TypeError(f"not a formula: {f!r}")


def negate(t):
    """Negation of an NNF term, again in NNF."""
    if isinstance(t, B):
        return B(not t.value)
    if isinstance(t, Lit):
        return Lit(t.atom, not t.positive)
    if isinstance(t, NAnd):
        return mk_or([negate(x) for x in t.items])
    if isinstance(t, NOr):
        return mk_and([negate(x) for x in t.items])
    if isinstance(t, NNext):
        return NNext(negate(t.arg))
    if isinstance(t, NUntil):
        return NRelease(negate(t.a), negate(t.b))
    if isinstance(t, NRelease):
        return NUntil(negate(t.a), negate(t.b))
    if isinstance(t, NEvLe):
        return NAlwLe(t.k, negate(t.arg))
    if isinstance(t, NAlwLe):
        return NEvLe(t.k, negate(t.arg))
    if isinstance(t, NEvGe):
        return NAlwGe(t.k, negate(t.arg))
    if isinstance(t, NAlwGe):
        return NEvGe(t.k, negate(t.arg))
    if isinstance(t, NAtLeast):
        return mk_atleast(len(t.items) - t.n + 1, [negate(x) for x in t.items])
    raise TypeError(t)


def _has(t, kinds) -> bool:
    if isinstance(t, kinds):
        return True
    if isinstance(t, (NAnd, NOr)):
        return any(_has(x, kinds) for x in t.items)
    if isinstance(t, NAtLeast):
        return any(_has(x, kinds) for x in t.items)
    if isinstance(t, (NNext, NEvLe, NAlwLe, NEvGe, NAlwGe)):
        return _has(t.arg, kinds)
    if isinstance(t, (NUntil, NRelease)):
        return _has(t.a, kinds) or _has(t.b, kinds)
    return False


def classify_nnf(t) -> Fragment:
    if not _has(t, (NRelease, NAlwGe)):
        return Fragment.COSAFE
    if not _has(t, (NUntil, NEvGe)):
        return Fragment.SAFE
    return Fragment.UNSUPPORTED


def _placeholder(f: Formula) -> Formula:
    """Stand-in grounding that keeps the operator structure of an ungrounded formula."""
    if isinstance(f, Atom):
        return NodeAtom(f.name, 0)
    if isinstance(f, Exists):
        return AtLeast(1, (_placeholder(f.body),))
    if isinstance(f, (Not, Next)):
        return type(f)(_placeholder(f.arg))
    if isinstance(f, (And, Until)):
        return type(f)(_placeholder(f.left), _placeholder(f.right))
    if isinstance(f, Eventually):
        return Eventually(f.cmp, f.k, _placeholder(f.arg))
    if isinstance(f, AtLeast):
        return AtLeast(f.n, tuple(_placeholder(x) for x in f.items))
    return f


def classify(formula: Formula) -> Fragment:
    """Syntactic fragment of a formula (bounded formulas count as co-safe).

    The fragment depends only on the operator structure, so ungrounded
    formulas are classified through a stand-in grounding.
    """
    return classify_nnf(nnf(_placeholder(formula)))


# --- progression --------------------------------------------------------------

def progress(t, val: dict):
    """Residual obligation after reading one letter (``val`` maps atom -> bool)."""
    if isinstance(t, B):
        return t
    if isinstance(t, Lit):
        return B(val[t.atom] == t.positive)
    if isinstance(t, NAnd):
        return mk_and([progress(x, val) for x in t.items])
    if isinstance(t, NOr):
        return mk_or([progress(x, val) for x in t.items])
    if isinstance(t, NNext):
        return t.arg
    if isinstance(t, NUntil):
        pa = progress(t.a, val)
        return mk_or([mk_and([pa, progress(t.b, val)]), mk_and([pa, t])])
    if isinstance(t, NRelease):
        pa = progress(t.a, val)
        return mk_and([mk_or([pa, progress(t.b, val)]), mk_or([pa, t])])
    if isinstance(t, NEvLe):
        return mk_or([progress(t.arg, val), mk_evle(t.k - 1, t.arg)])
    if isinstance(t, NAlwLe):
        return mk_and([progress(t.arg, val), mk_alwle(t.k - 1, t.arg)])
    if isinstance(t, NEvGe):
        if t.k > 0:
            return NEvGe(t.k - 1, t.arg)
        return mk_or([progress(t.arg, val), t])
    if isinstance(t, NAlwGe):
        if t.k > 0:
            return NAlwGe(t.k - 1, t.arg)
        return mk_and([progress(t.arg, val), t])
    if isinstance(t, NAtLeast):
        return mk_atleast(t.n, [progress(x, val) for x in t.items])
    raise TypeError(t)


# --- automaton ----------------------------------------------------------------

class Polarity(enum.Enum):
    SATISFACTION = "accepts-satisfaction"
    VIOLATION = "accepts-violation"


@dataclass(frozen=True)
class SpecAutomaton:
    """Deterministic total automaton over letters = bitmasks of ``atoms``.

    Bit ``k`` of a letter is the truth value of ``atoms[k]``.  ``delta`` has
    shape (n_states, 2**len(atoms)).  ``rejecting`` holds states from which
    acceptance is impossible.
    """

    atoms: tuple[tuple[str, int], ...]
    delta: np.ndarray
    initial: int
    accepting: frozenset[int]
    rejecting: frozenset[int]
    polarity: Polarity

    @property
    def n_states(self) -> int:
        return self.delta.shape[0]

    @property
    def n_letters(self) -> int:
        return self.delta.shape[1]

    def run(self, letters) -> int:
        q = self.initial
        for a in letters:
            q = int(self.delta[q, a])
        return q

    def run_batch(self, letters: np.ndarray) -> np.ndarray:
        """Final states for letter arrays of shape (batch, T)."""
        q = np.full(letters.shape[0], self.initial, dtype=np.int64)
        for t in range(letters.shape[1]):
            q = self.delta[q, letters[:, t]]
        return q

    def verdict_codes(self, q: np.ndarray) -> np.ndarray:
        """1 satisfied, 0 violated, -1 undetermined for final states ``q``."""
        acc = np.isin(q, list(self.accepting))
        rej = np.isin(q, list(self.rejecting))
        out = np.full(q.shape, -1, dtype=np.int8)
        if self.polarity is Polarity.SATISFACTION:
            out[acc] = 1
            out[rej] = 0
        else:
            out[acc] = 0
            out[rej] = 1
        return out


def _explore(root, atoms):
    vals = [dict(zip(atoms, bits)) for bits in iproduct((False, True), repeat=len(atoms))]
    # letter index: bit k set iff atoms[k] true; iproduct orders atoms[0] most significant
    letter_of = []
    for bits in iproduct((False, True), repeat=len(atoms)):
        letter_of.append(sum(1 << k for k, b in enumerate(bits) if b))
    index = {root: 0}
    terms = [root]
    succ: list[list[int]] = []
    queue = deque([root])
    while queue:
        t = queue.popleft()
        row = [0] * len(vals)
        for v, letter in zip(vals, letter_of):
            r = progress(t, v)
            if r not in index:
                if len(index) >= MAX_STATES:
                    raise UnsupportedFormula("automaton exceeds the state cap")
                index[r] = len(terms)
                terms.append(r)
                queue.append(r)
            row[letter] = index[r]
        succ.append(row)
    return terms, np.array(succ, dtype=np.int64).reshape(len(terms), max(1, 1 << len(atoms)))


def _valid_states(terms, delta) -> np.ndarray:
    """States from which every path reaches the residual ``true``."""
    valid = np.array([t == BT for t in terms])
    while True:
        new = valid | valid[delta].all(axis=1)
        if (new == valid).all():
            return valid
        valid = new


def _coreach(delta, target) -> np.ndarray:
    """States that can reach ``target`` along some path."""
    n = delta.shape[0]
    pred = [[] for _ in range(n)]
    for q in range(n):
        for r in set(delta[q].tolist()):
            pred[r].append(q)
    seen = target.copy()
    queue = deque(np.flatnonzero(target).tolist())
    while queue:
        r = queue.popleft()
        for q in pred[r]:
            if not seen[q]:
                seen[q] = True
                queue.append(q)
    return seen


def minimize(delta: np.ndarray, classes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coarsest partition refinement (Moore iteration on signatures).

    Returns (new delta, old state -> new state).
    """
    block = np.unique(classes, return_inverse=True)[1]
    while True:
        sig = np.concatenate([block[:, None], block[delta]], axis=1)
        _, new = np.unique(sig, axis=0, return_inverse=True)
        new = new.ravel()
        if new.max() == block.max():
            block = new
            break
        block = new
    nb = int(block.max()) + 1
    rep = np.zeros(nb, dtype=np.int64)
    rep[block] = np.arange(len(block))
    return block[delta[rep]], block


def to_automaton(grounded: Formula) -> SpecAutomaton:
    """Compile a grounded co-safe or safe formula into a minimal DFA."""
    atoms = grounded_atoms(grounded)
    t = nnf(grounded)
    frag = classify_nnf(t)
    if frag is Fragment.UNSUPPORTED:
        raise UnsupportedFormula(f"{grounded} is neither syntactically co-safe nor safe")
    polarity = Polarity.SATISFACTION
    if frag is Fragment.SAFE:
        t = negate(t)
        polarity = Polarity.VIOLATION
    terms, delta = _explore(t, atoms)
    valid = _valid_states(terms, delta)
    live = _coreach(delta, valid)
    classes = np.where(valid, 0, np.where(live, 1, 2))
    # acceptance is absorbing: route all accepting moves to one state
    merged_delta, block = minimize(delta, classes)
    init = int(block[0])
    acc_states = {int(block[q]) for q in np.flatnonzero(valid)}
    rej_states = {int(block[q]) for q in np.flatnonzero(~live)}
    # keep only states reachable from the initial state
    reach = np.zeros(merged_delta.shape[0], bool)
    reach[init] = True
    queue = deque([init])
    while queue:
        q = queue.popleft()
        for r in set(merged_delta[q].tolist()):
            if not reach[r]:
                reach[r] = True
                queue.append(r)
    keep = np.flatnonzero(reach)
    renum = -np.ones(len(reach), dtype=np.int64)
    renum[keep] = np.arange(len(keep))
    final = renum[merged_delta[keep]]
    for q in acc_states:
        if reach[q]:
            final[renum[q]] = renum[q]
    return SpecAutomaton(
        atoms=atoms,
        delta=final,
        initial=int(renum[init]),
        accepting=frozenset(int(renum[q]) for q in acc_states if reach[q]),
        rejecting=frozenset(int(renum[q]) for q in rej_states if reach[q]),
        polarity=polarity,
    )


def letters_from_valuation(automaton: SpecAutomaton, truth: dict) -> int:
    """Letter index for a map (prop, node) -> bool."""
    return sum(1 << k for k, a in enumerate(automaton.atoms) if truth.get(a, False))
