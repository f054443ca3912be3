"""GTL abstract syntax and the ASCII concrete syntax.

Core constructors are :class:`Atom`, :class:`Exists`, :class:`Not`,
:class:`Next`, :class:`And`, :class:`Until` and :class:`Eventually` (the
bounded ``F[<=k]`` / ``F[>=k]`` forms).  Everything else (``|``, ``->``,
``G``, ``F``, ``G[..]``, ``U[..]``) is expanded into the core at parse time.
The surface text of each expanded node is kept in ``origin`` so that
``str()`` prints what the user wrote.

Grammar, loosest binding first::

    until   := implies ( 'U' bound? until )?
    implies := or ( '->' implies )?
    or      := and ( '|' and )*
    and     := unary ( '&' unary )*
    unary   := '!' unary | 'X' unary | 'F' bound? unary | 'G' bound? unary
             | 'E' N ( 'o' pred? )+ unary | atom
    atom    := 'true' | 'false' | IDENT | '(' until ')'
    bound   := '[' ('<=' | '>=') INT ']'
    pred    := '[' ( 'true' | 'false' | 'y' CMP VALUE ) ']'
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass, field
from typing import Any


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class Formula:
    """Base class of all formula nodes."""

    origin: str | None

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True, eq=True)
class Const(Formula):
    value: bool
    origin: str | None = field(default=None, compare=False, repr=False)


TRUE = Const(True)
FALSE = Const(False)


@dataclass(frozen=True)
class Atom(Formula):
    name: str
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class NodeAtom(Formula):
    """Proposition evaluated at a fixed node (grounded form)."""

    name: str
    node: int
    origin: str | None = field(default=None, compare=False, repr=False)


_CMP = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
    "==": operator.eq,
    "!=": operator.ne,
}


@dataclass(frozen=True)
class EdgePred:
    """Predicate over a static edge label; ``op is None`` selects every edge."""

    op: str | None = None
    value: Any = None

    @property
    def needs_label(self) -> bool:
        return self.op in _CMP

    def __call__(self, label) -> bool:
        if self.op is None or self.op == "true":
            return True
        if self.op == "false":
            return False
        try:
            return bool(_CMP[self.op](label, self.value))
        except TypeError:
            return False

    def text(self) -> str:
        if self.op is None:
            return "o"
        if self.op in ("true", "false"):
            return f"o[{self.op}]"
        return f"o[y{self.op}{self.value}]"


@dataclass(frozen=True)
class Exists(Formula):
    """At least ``n`` nodes reached through ``ops`` satisfy ``body``.

    ``ops`` is stored in application order: ``ops[0]`` is applied first
    (it is the operator written closest to the body).
    """

    n: int
    ops: tuple[EdgePred, ...]
    body: Formula
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class AtLeast(Formula):
    """Threshold over concrete grounded copies (grounded form of Exists)."""

    n: int
    items: tuple[Formula, ...]
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Until(Formula):
    """``left`` holds on every step up to and including the step where ``right`` holds."""

    left: Formula
    right: Formula
    origin: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Eventually(Formula):
    """Bounded eventually: ``cmp`` is ``'<='`` (within k steps) or ``'>='`` (after k steps)."""

    cmp: str
    k: int
    arg: Formula
    origin: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.cmp not in ("<=", ">=") or self.k < 0:
            raise ValueError("bad eventually bound")


# --- derived operators --------------------------------------------------------

def lor(a: Formula, b: Formula) -> Formula:
    return Not(And(Not(a), Not(b)))


def implies(a: Formula, b: Formula) -> Formula:
    return Not(And(a, Not(b)))


def eventually(a: Formula) -> Formula:
    return Until(TRUE, a)


def always(a: Formula) -> Formula:
    return Not(Until(TRUE, Not(a)))


def always_bounded(cmp: str, k: int, a: Formula) -> Formula:
    return Not(Eventually(cmp, k, Not(a)))


def next_n(k: int, a: Formula) -> Formula:
    for _ in range(k):
        a = Next(a)
    return a


def until_bounded(cmp: str, k: int, a: Formula, b: Formula) -> Formula:
    if cmp == "<=":
        return And(Until(a, b), Eventually("<=", k, b))
    if k == 0:
        return Until(a, b)
    return And(always_bounded("<=", k - 1, a), next_n(k, Until(a, b)))


def _with_origin(f: Formula, text: str, binary: bool = False) -> Formula:
    if binary and not (text.startswith("(") and text.endswith(")")):
        text = f"({text})"
    object.__setattr__(f, "origin", text)
    return f


# --- tokenizer ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>-?\d+(?:\.\d+)?)|(?P<exists>E\d+)(?![A-Za-z0-9_])|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>->|<=|>=|==|!=|[!&|()\[\]<>]))"
)
RESERVED = {"X", "F", "G", "U", "o", "true", "false"}


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def tokenize(src: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(src):
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        text = m.group(kind)
        toks.append(_Tok(kind, text, m.start(kind)))
        pos = m.end()
    toks.append(_Tok("eof", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.cur.text == text and self.cur.kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> _Tok:
        if self.cur.text != text:
            raise ParseError(f"expected {text!r}, found {self.cur.text or 'end of input'!r}", self.cur.pos)
        return self.take()

    def span(self, start: int) -> str:
        end = self.toks[self.i - 1].pos + len(self.toks[self.i - 1].text)
        return self.src[start:end].strip()

    def parse(self) -> Formula:
        if self.cur.kind == "eof":
            raise ParseError("empty formula", 0)
        f = self.until()
        if self.cur.kind != "eof":
            raise ParseError(f"unexpected token {self.cur.text!r}", self.cur.pos)
        return f

    def bound(self):
        if self.cur.text != "[":
            return None
        self.take()
        cmp = self.take()
        if cmp.text not in ("<=", ">="):
            raise ParseError("bound must use <= or >=", cmp.pos)
        num = self.take()
        if num.kind != "num" or not re.fullmatch(r"\d+", num.text):
            raise ParseError("bound must be a non-negative integer", num.pos)
        self.expect("]")
        return cmp.text, int(num.text)

    def until(self) -> Formula:
        start = self.cur.pos
        left = self.implies()
        if self.cur.text == "U" and self.cur.kind == "ident":
            self.take()
            b = self.bound()
            right = self.until()
            if b is None:
                return Until(left, right)
            return _with_origin(until_bounded(b[0], b[1], left, right), self.span(start), True)
        return left

    def implies(self) -> Formula:
        start = self.cur.pos
        left = self.lor()
        if self.accept("->"):
            right = self.implies()
            return _with_origin(implies(left, right), self.span(start), True)
        return left

    def lor(self) -> Formula:
        start = self.cur.pos
        left = self.land()
        while self.accept("|"):
            right = self.land()
            left = _with_origin(lor(left, right), self.span(start), True)
        return left

    def land(self) -> Formula:
        left = self.unary()
        while self.accept("&"):
            left = And(left, self.unary())
        return left

    def pred(self) -> EdgePred:
        if self.cur.text != "[":
            return EdgePred()
        self.take()
        t = self.take()
        if t.text in ("true", "false"):
            self.expect("]")
            return EdgePred(t.text)
        if t.text != "y":
            raise ParseError("edge predicate must compare the edge label y", t.pos)
        op = self.take()
        if op.text not in _CMP:
            raise ParseError(f"unknown comparison {op.text!r}", op.pos)
        v = self.take()
        if v.kind == "num":
            value: Any = float(v.text) if "." in v.text else int(v.text)
        elif v.kind == "ident":
            value = v.text
        else:
            raise ParseError("edge predicate needs a value", v.pos)
        self.expect("]")
        return EdgePred(op.text, value)

    def unary(self) -> Formula:
        t = self.cur
        start = t.pos
        if t.kind == "op" and t.text == "!":
            self.take()
            return Not(self.unary())
        if t.kind == "ident" and t.text == "X":
            self.take()
            return Next(self.unary())
        if t.kind == "ident" and t.text in ("F", "G"):
            self.take()
            b = self.bound()
            arg = self.unary()
            if t.text == "F":
                if b is None:
                    return _with_origin(eventually(arg), self.span(start))
                return Eventually(b[0], b[1], arg)
            if b is None:
                return _with_origin(always(arg), self.span(start))
            return _with_origin(always_bounded(b[0], b[1], arg), self.span(start))
        if t.kind == "exists":
            self.take()
            n = int(t.text[1:])
            if n < 1:
                raise ParseError("exists threshold must be at least 1", t.pos)
            ops = []
            while self.cur.kind == "ident" and self.cur.text == "o":
                self.take()
                ops.append(self.pred())
            if not ops:
                raise ParseError("exists needs at least one neighbouring operation 'o'", self.cur.pos)
            body = self.unary()
            return Exists(n, tuple(reversed(ops)), body)
        return self.atom()

    def atom(self) -> Formula:
        t = self.take()
        if t.kind == "op" and t.text == "(":
            f = self.until()
            self.expect(")")
            return f
        if t.kind == "ident":
            if t.text == "true":
                return TRUE
            if t.text == "false":
                return FALSE
            if t.text in RESERVED:
                raise ParseError(f"reserved word {t.text!r} used as proposition", t.pos)
            return Atom(t.text)
        if t.kind == "exists":
            raise ParseError("exists must be followed by 'o'", t.pos)
        raise ParseError(f"unexpected token {t.text or 'end of input'!r}", t.pos)


def parse(source: str) -> Formula:
    """Parse ASCII GTL into the core AST."""
    return _Parser(source).parse()


# --- pretty printing ------------------------------------------------------------

def render(f: Formula) -> str:
    if f.origin:
        return f.origin
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, NodeAtom):
        return f"{f.name}@{f.node}"
    if isinstance(f, Not):
        return f"!{_wrap(f.arg)}"
    if isinstance(f, Next):
        return f"X {_wrap(f.arg)}"
    if isinstance(f, And):
        return f"{_wrap(f.left)} & {_wrap(f.right)}"
    if isinstance(f, Until):
        return f"{_wrap(f.left)} U {_wrap(f.right)}"
    if isinstance(f, Eventually):
        return f"F[{f.cmp}{f.k}] {_wrap(f.arg)}"
    if isinstance(f, Exists):
        ops = " ".join(p.text() for p in reversed(f.ops))
        return f"E{f.n} {ops} {_wrap(f.body)}"
    if isinstance(f, AtLeast):
        return f"atleast{f.n}(" + ", ".join(render(x) for x in f.items) + ")"
    raise TypeError(f"not a formula: {f!r}")


def _wrap(f: Formula) -> str:
    s = render(f)
    if not f.origin and isinstance(f, (And, Until)):
        return f"({s})"
    return s


def atoms(f: Formula) -> set:
    """Proposition leaves (Atom names or NodeAtom (name, node) pairs)."""
    out: set = set()

    def walk(g):
        if isinstance(g, Atom):
            out.add(g.name)
        elif isinstance(g, NodeAtom):
            out.add((g.name, g.node))
        elif isinstance(g, (Not, Next, Eventually)):
            walk(g.arg)
        elif isinstance(g, (And, Until)):
            walk(g.left)
            walk(g.right)
        elif isinstance(g, Exists):
            walk(g.body)
        elif isinstance(g, AtLeast):
            for x in g.items:
                walk(x)

    walk(f)
    return out
