"""Linear temporal logic: syntax trees, parsing, grounding and lasso semantics.

Formulas are immutable trees.  Every node caches its hash and its printed
form, which lets the automaton construction use formulas directly as
dictionary keys and sort them canonically.

Concrete syntax (tightest binding first)::

    !f  Gf  Ff  Xf          unary prefix operators
    f U g                   until (right associative)
    f & g                   conjunction
    f | g                   disjunction
    f -> g                  implication (right associative)

Atoms are identifiers, optionally with arguments (``injured(x)``) when used
as templates for :func:`ground`.  ``true`` and ``false`` are constants.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
KEYWORDS = {"G", "F", "X", "U", "true", "false"}

Valuation = frozenset  # set of proposition names true at one step


class LtlError(Exception):
    pass


class LtlSyntaxError(LtlError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownCharacterError(LtlSyntaxError):
    pass


class UnsupportedNegation(LtlError):
    pass


class GroundingError(LtlError):
    pass


# ---------------------------------------------------------------------------
# Syntax tree

class Formula:
    """Base class of all formula nodes."""

    __slots__ = ("_hash", "_text")
    children: tuple = ()

    def _key(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        return type(other) is type(self) and hash(self) == hash(other) and self._key() == other._key()

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._key())
            object.__setattr__(self, "_hash", h)
            return h

    def __setattr__(self, name, value):
        raise AttributeError("formulas are immutable")

    def __str__(self):
        try:
            return self._text
        except AttributeError:
            text = self._render()
            object.__setattr__(self, "_text", text)
            return text

    def __repr__(self):
        return f"<{type(self).__name__} {self}>"

    def _render(self) -> str:
        raise NotImplementedError

    def __lt__(self, other):
        return str(self) < str(other)

    def atoms(self) -> set[str]:
        out: set[str] = set()
        for node in walk(self):
            if isinstance(node, Atom):
                out.add(node.name)
        return out

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(c.depth() for c in self.children)


def _init(obj, **fields):
    for k, v in fields.items():
        object.__setattr__(obj, k, v)


class Atom(Formula):
    __slots__ = ("name", "args")

    def __init__(self, name: str, args: Sequence[str] = ()):
        if not IDENT_RE.match(name):
            raise LtlError(f"invalid proposition name {name!r}")
        _init(self, name=name, args=tuple(args))

    def _key(self):
        return (self.name, self.args)

    def _render(self):
        if self.args:
            return f"{self.name}({','.join(self.args)})"
        return self.name


class _Const(Formula):
    __slots__ = ("value",)

    def __init__(self, value: bool):
        _init(self, value=value)

    def _key(self):
        return (self.value,)

    def _render(self):
        return "true" if self.value else "false"


class _Unary(Formula):
    __slots__ = ("arg",)
    symbol = "?"

    def __init__(self, arg: Formula):
        _init(self, arg=arg)

    @property
    def children(self):
        return (self.arg,)

    def _key(self):
        return (self.arg,)

    def _render(self):
        inner = str(self.arg)
        if isinstance(self.arg, _Binary):
            inner = f"({inner})"
        return f"{self.symbol}{inner}" if self.symbol == "!" else f"{self.symbol} {inner}"


class _Binary(Formula):
    __slots__ = ("left", "right")
    symbol = "?"

    def __init__(self, left: Formula, right: Formula):
        _init(self, left=left, right=right)

    @property
    def children(self):
        return (self.left, self.right)

    def _key(self):
        return (self.left, self.right)

    def _render(self):
        parts = []
        for c in (self.left, self.right):
            s = str(c)
            parts.append(f"({s})" if isinstance(c, _Binary) else s)
        return f"{parts[0]} {self.symbol} {parts[1]}"


class Not(_Unary):
    __slots__ = ()
    symbol = "!"


class Next(_Unary):
    __slots__ = ()
    symbol = "X"


class Finally(_Unary):
    __slots__ = ()
    symbol = "F"


class Globally(_Unary):
    __slots__ = ()
    symbol = "G"


class And(_Binary):
    __slots__ = ()
    symbol = "&"


class Or(_Binary):
    __slots__ = ()
    symbol = "|"


class Implies(_Binary):
    __slots__ = ()
    symbol = "->"


class Until(_Binary):
    __slots__ = ()
    symbol = "U"


TRUE = _Const(True)
FALSE = _Const(False)


def is_const(f: Formula) -> bool:
    return isinstance(f, _Const)


def is_literal(f: Formula) -> bool:
    return isinstance(f, Atom) or (isinstance(f, Not) and isinstance(f.arg, Atom))


def walk(f: Formula):
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children)


def conjunction(parts: Iterable[Formula]) -> Formula:
    parts = list(parts)
    if not parts:
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


# ---------------------------------------------------------------------------
# Atom table and parsing

class AtomTable:
    """Interns proposition names and assigns them bit positions."""

    def __init__(self, names: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self.names: list[str] = []
        for n in names:
            self.intern(n)

    def intern(self, name: str) -> int:
        if name not in self._index:
            if not IDENT_RE.match(name):
                raise LtlError(f"invalid proposition name {name!r}")
            self._index[name] = len(self.names)
            self.names.append(name)
        return self._index[name]

    def __contains__(self, name):
        return name in self._index

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def bits(self, valuation: Iterable[str]) -> int:
        out = 0
        for name in valuation:
            out |= 1 << self._index[name]
        return out

    def valuation(self, bits: int) -> frozenset:
        return frozenset(n for i, n in enumerate(self.names) if bits >> i & 1)


_TOKEN_RE = re.compile(r"\s*(?:(->)|([!&|(),])|([A-Za-z_][A-Za-z0-9_]*))")


def _tokenize(text: str):
    pos = 0
    tokens = []
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise UnknownCharacterError(f"unexpected character {text[pos]!r}", pos)
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    tokens.append(("<end>", n))
    return tokens


class _Parser:
    def __init__(self, text: str, atoms: AtomTable | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.atoms = atoms

    def peek(self):
        return self.tokens[self.i][0]

    def take(self, expected: str | None = None):
        tok, pos = self.tokens[self.i]
        if expected is not None and tok != expected:
            raise LtlSyntaxError(f"expected {expected!r}, found {tok!r}", pos)
        self.i += 1
        return tok

    def parse(self):
        f = self.implication()
        if self.peek() != "<end>":
            tok, pos = self.tokens[self.i]
            raise LtlSyntaxError(f"unexpected token {tok!r}", pos)
        return f

    def implication(self):
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.implication())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.peek() == "|":
            self.take()
            left = Or(left, self.conjunction())
        return left

    def conjunction(self):
        left = self.until()
        while self.peek() == "&":
            self.take()
            left = And(left, self.until())
        return left

    def until(self):
        left = self.unary()
        if self.peek() == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self):
        tok = self.peek()
        ops = {"!": Not, "G": Globally, "F": Finally, "X": Next}
        if tok in ops:
            self.take()
            return ops[tok](self.unary())
        return self.primary()

    def primary(self):
        tok, pos = self.tokens[self.i]
        if tok == "(":
            self.take()
            f = self.implication()
            self.take(")")
            return f
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return FALSE
        if tok in KEYWORDS or not IDENT_RE.match(tok):
            raise LtlSyntaxError(f"unexpected token {tok!r}", pos)
        self.take()
        args: list[str] = []
        if self.peek() == "(":
            self.take()
            while True:
                arg, apos = self.tokens[self.i]
                if not IDENT_RE.match(arg) or arg in KEYWORDS:
                    raise LtlSyntaxError(f"expected argument name, found {arg!r}", apos)
                self.take()
                args.append(arg)
                if self.peek() == ",":
                    self.take()
                    continue
                self.take(")")
                break
        if self.atoms is not None and not args:
            self.atoms.intern(tok)
        return Atom(tok, args)


def parse_ltl(text: str, atoms: AtomTable | None = None) -> Formula:
    """Parse ``text`` into a formula, interning its atoms in ``atoms``."""
    return _Parser(text, atoms).parse()


# ---------------------------------------------------------------------------
# Quantified templates

@dataclass(frozen=True)
class QuantifiedFormula:
    variables: tuple[tuple[str, str], ...]  # (variable, sort)
    body: Formula

    def __str__(self):
        binders = ", ".join(f"{v}:{s}" for v, s in self.variables)
        return f"forall {binders} . {self.body}"


_QUANT_RE = re.compile(r"\s*(?:forall|∀)\s+(.*?)\s*\.\s*(.*)\Z", re.S)


def parse_quantified(text: str) -> QuantifiedFormula | Formula:
    """Parse an optionally quantified formula: ``forall x:human . body``."""
    m = _QUANT_RE.match(text)
    if not m:
        return parse_ltl(text)
    variables = []
    for chunk in m.group(1).split(","):
        var, sep, sort = chunk.partition(":")
        var, sort = var.strip(), sort.strip()
        if not sep or not IDENT_RE.match(var) or not IDENT_RE.match(sort):
            raise LtlSyntaxError(f"bad binder {chunk.strip()!r}", m.start(1))
        variables.append((var, sort))
    return QuantifiedFormula(tuple(variables), parse_ltl(m.group(2)))


def _substitute(f: Formula, binding: Mapping[str, str]) -> Formula:
    if isinstance(f, Atom):
        if not f.args:
            return f
        parts = [binding.get(a, a) for a in f.args]
        return Atom("_".join([f.name] + parts))
    if isinstance(f, _Unary):
        return type(f)(_substitute(f.arg, binding))
    if isinstance(f, _Binary):
        return type(f)(_substitute(f.left, binding), _substitute(f.right, binding))
    return f


def ground(qf: QuantifiedFormula | Formula, domain: Mapping[str, Sequence[str]]) -> Formula:
    """Expand universal quantifiers over finite entity sets.

    Parameterized atoms become flat propositions: ``injured(h1)`` turns
    into ``injured_h1``.  Arguments that are not bound variables are
    treated as constants and mangled the same way (``talk(r)`` ->
    ``talk_r``).  The result is the conjunction over all substitutions,
    in domain order.
    """
    if isinstance(qf, Formula):
        return _substitute(qf, {})
    pools = []
    for var, sort in qf.variables:
        if sort not in domain:
            raise GroundingError(f"unknown sort {sort!r}")
        if not domain[sort]:
            raise GroundingError(f"empty domain for sort {sort!r}")
        pools.append(list(domain[sort]))
    names = [v for v, _ in qf.variables]
    return conjunction(_substitute(qf.body, dict(zip(names, combo)))
                       for combo in itertools.product(*pools))


# ---------------------------------------------------------------------------
# Negation normal form

def _neg(f: Formula, expand_release: bool) -> Formula:
    if f is TRUE or f == TRUE:
        return FALSE
    if f == FALSE:
        return TRUE
    if isinstance(f, Atom):
        return Not(f)
    if isinstance(f, Not):
        return to_nnf(f.arg, expand_release)
    if isinstance(f, And):
        return Or(_neg(f.left, expand_release), _neg(f.right, expand_release))
    if isinstance(f, Or):
        return And(_neg(f.left, expand_release), _neg(f.right, expand_release))
    if isinstance(f, Implies):
        return And(to_nnf(f.left, expand_release), _neg(f.right, expand_release))
    if isinstance(f, Next):
        return Next(_neg(f.arg, expand_release))
    if isinstance(f, Globally):
        return Finally(_neg(f.arg, expand_release))
    if isinstance(f, Finally):
        return Globally(_neg(f.arg, expand_release))
    if isinstance(f, Until):
        if not expand_release:
            raise UnsupportedNegation(f"negated until {f} needs release")
        # !(a U b) == (!b U (!a & !b)) | G !b
        na, nb = _neg(f.left, expand_release), _neg(f.right, expand_release)
        return Or(Until(nb, And(na, nb)), Globally(nb))
    raise LtlError(f"unknown node {f!r}")


def to_nnf(f: Formula, expand_release: bool = True) -> Formula:
    """Push negations onto atoms and eliminate implications.

    The result uses only atoms, negated atoms, constants, ``&``, ``|``,
    ``X``, ``U``, ``G`` and ``F``.  A negated until is rewritten through the
    weak-until identity; with ``expand_release=False`` it is rejected with
    :class:`UnsupportedNegation` instead.
    """
    if isinstance(f, (Atom, _Const)):
        return f
    if isinstance(f, Not):
        return _neg(f.arg, expand_release)
    if isinstance(f, Implies):
        return Or(_neg(f.left, expand_release), to_nnf(f.right, expand_release))
    if isinstance(f, _Unary):
        return type(f)(to_nnf(f.arg, expand_release))
    return type(f)(to_nnf(f.left, expand_release), to_nnf(f.right, expand_release))


def is_nnf(f: Formula) -> bool:
    for node in walk(f):
        if isinstance(node, Implies):
            return False
        if isinstance(node, Not) and not isinstance(node.arg, Atom):
            return False
    return True


# ---------------------------------------------------------------------------
# Lasso semantics

@dataclass(frozen=True)
class Lasso:
    """The ultimately periodic word ``prefix . cycle^omega``."""

    prefix: tuple
    cycle: tuple

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(frozenset(v) for v in self.prefix))
        object.__setattr__(self, "cycle", tuple(frozenset(v) for v in self.cycle))
        if not self.cycle:
            raise ValueError("lasso cycle must be nonempty")

    def __len__(self):
        return len(self.prefix) + len(self.cycle)

    def letter(self, i: int) -> frozenset:
        if i < len(self.prefix):
            return self.prefix[i]
        return self.cycle[(i - len(self.prefix)) % len(self.cycle)]

    def successor(self, i: int) -> int:
        return i + 1 if i + 1 < len(self) else len(self.prefix)


def _lasso_values(f: Formula, w: Lasso, memo: dict) -> list[bool]:
    if f in memo:
        return memo[f]
    n = len(w)
    succ = [w.successor(i) for i in range(n)]
    if isinstance(f, Atom):
        val = [f.name in w.letter(i) for i in range(n)]
    elif isinstance(f, _Const):
        val = [f.value] * n
    elif isinstance(f, Not):
        val = [not x for x in _lasso_values(f.arg, w, memo)]
    elif isinstance(f, Next):
        a = _lasso_values(f.arg, w, memo)
        val = [a[succ[i]] for i in range(n)]
    elif isinstance(f, (And, Or, Implies)):
        a = _lasso_values(f.left, w, memo)
        b = _lasso_values(f.right, w, memo)
        if isinstance(f, And):
            val = [x and y for x, y in zip(a, b)]
        elif isinstance(f, Or):
            val = [x or y for x, y in zip(a, b)]
        else:
            val = [(not x) or y for x, y in zip(a, b)]
    elif isinstance(f, (Until, Finally, Globally)):
        if isinstance(f, Until):
            a = _lasso_values(f.left, w, memo)
            b = _lasso_values(f.right, w, memo)
        elif isinstance(f, Finally):
            a, b = [True] * n, _lasso_values(f.arg, w, memo)
        else:
            a, b = _lasso_values(f.arg, w, memo), [False] * n
        greatest = isinstance(f, Globally)
        val = [greatest] * n
        changed = True
        while changed:
            changed = False
            for i in reversed(range(n)):
                new = b[i] or (a[i] and val[succ[i]])
                if new != val[i]:
                    val[i] = new
                    changed = True
    else:
        raise LtlError(f"unknown node {f!r}")
    memo[f] = val
    return val


def evaluate_on_lasso(f: Formula, w: Lasso) -> bool:
    """Exact truth of ``f`` at position 0 of the word ``w``.

    Each subformula is evaluated on every distinct position of the lasso.
    Until and eventually take least fixpoints, always the greatest one,
    which is what the infinite unrolling demands on a cycle.
    """
    return _lasso_values(f, w, {})[0]


class LassoBatch:
    """Many lassos packed into arrays for vectorised evaluation.

    Position ``j`` of lasso ``l`` carries the letter ``letters[l, j]`` (bits
    over ``atoms``) and steps to ``succ[l, j]``.  Padding positions loop on
    themselves and are never reached from position 0.
    """

    def __init__(self, lassos: Sequence[Lasso], atoms: Sequence[str]):
        self.lassos = list(lassos)
        self.atoms = AtomTable(atoms)
        width = max(len(w) for w in self.lassos)
        L = len(self.lassos)
        self.letters = np.zeros((L, width), dtype=np.int64)
        self.succ = np.tile(np.arange(width), (L, 1))
        self.width = width
        self.max_cycle = max(len(w.cycle) for w in self.lassos)
        self.max_prefix = max(len(w.prefix) for w in self.lassos)
        for li, w in enumerate(self.lassos):
            for j in range(len(w)):
                self.letters[li, j] = self.atoms.bits(w.letter(j))
                self.succ[li, j] = w.successor(j)
        self._rows = np.arange(L)[:, None]

    def __len__(self):
        return len(self.lassos)

    def shift(self, values: np.ndarray) -> np.ndarray:
        return values[self._rows, self.succ]

    def evaluate(self, f: Formula, memo: dict | None = None) -> np.ndarray:
        """Vector of ``evaluate_on_lasso(f, w)`` over the batch."""
        memo = {} if memo is None else memo
        return self._values(f, memo)[:, 0]

    def _values(self, f: Formula, memo: dict) -> np.ndarray:
        if f in memo:
            return memo[f]
        shape = self.letters.shape
        if isinstance(f, Atom):
            val = (self.letters >> self.atoms.index(f.name)) & 1 == 1
        elif isinstance(f, _Const):
            val = np.full(shape, f.value)
        elif isinstance(f, Not):
            val = ~self._values(f.arg, memo)
        elif isinstance(f, Next):
            val = self.shift(self._values(f.arg, memo))
        elif isinstance(f, And):
            val = self._values(f.left, memo) & self._values(f.right, memo)
        elif isinstance(f, Or):
            val = self._values(f.left, memo) | self._values(f.right, memo)
        elif isinstance(f, Implies):
            val = ~self._values(f.left, memo) | self._values(f.right, memo)
        else:
            if isinstance(f, Until):
                a, b = self._values(f.left, memo), self._values(f.right, memo)
            elif isinstance(f, Finally):
                a, b = np.ones(shape, bool), self._values(f.arg, memo)
            else:
                a, b = self._values(f.arg, memo), np.zeros(shape, bool)
            val = np.full(shape, isinstance(f, Globally))
            for _ in range(self.width + 1):
                val = b | (a & self.shift(val))
        memo[f] = val
        return val


def all_lassos(atoms: Sequence[str], max_prefix: int, max_cycle: int) -> list[Lasso]:
    letters = [frozenset(c) for r in range(len(atoms) + 1)
               for c in itertools.combinations(atoms, r)]
    out = []
    for p in range(max_prefix + 1):
        for prefix in itertools.product(letters, repeat=p):
            for c in range(1, max_cycle + 1):
                for cycle in itertools.product(letters, repeat=c):
                    out.append(Lasso(prefix, cycle))
    return out
