"""Deterministic Rabin automata and an LTL-fragment translator.

The translator works by formula progression: a state is (a tuple of)
normalised formulas describing what remains to be satisfied, and reading a
letter rewrites it.  Conjunctions and disjunctions are flattened, sorted and
deduplicated so that the set of reachable progressions is finite.

Supported fragment, after conversion to negation normal form: positive
boolean combinations of

* safety formulas (no ``U``/``F``), accepted while the progression never
  reaches ``false``;
* co-safety formulas (no ``G``), accepted once the progression reaches
  ``true``;
* recurrences ``G c`` with ``c`` co-safety (this covers ``G F p`` and
  ``G (a -> (b U c))``), tracked with a two-round breakpoint construction.

Each disjunct of the boolean combination becomes one Rabin pair.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ltl import (FALSE, TRUE, And, Atom, Finally, Formula, Globally, Lasso, LassoBatch,
                  LtlError, Next, Not, Or, Until, is_const, is_nnf, to_nnf, walk)


class UnsupportedFragment(LtlError):
    def __init__(self, formula: Formula, reason: str = "outside the supported fragment"):
        super().__init__(f"{reason}: {formula}")
        self.formula = formula


class InvalidAutomaton(ValueError):
    pass


@dataclass(eq=False)
class Dra:
    """A complete deterministic Rabin automaton.

    ``delta[q]`` maps letters (bitsets over ``atoms``) to successors;
    letters missing from the map go to ``default[q]``.
    """

    atoms: tuple[str, ...]
    n_states: int
    initial: int
    delta: list[dict[int, int]]
    default: list[int | None]
    pairs: list[tuple[frozenset, frozenset]]
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.atoms = tuple(self.atoms)
        self.pairs = [(frozenset(f), frozenset(i)) for f, i in self.pairs]
        if not self.names:
            self.names = [str(q) for q in range(self.n_states)]
        if not self.pairs:
            raise InvalidAutomaton("at least one Rabin pair is required")
        if not 0 <= self.initial < self.n_states:
            raise InvalidAutomaton("initial state out of range")
        letters = 1 << len(self.atoms)
        sink = None
        for q in range(self.n_states):
            if self.default[q] is None and len(self.delta[q]) < letters:
                if sink is None:
                    sink = self.n_states
                    self.n_states += 1
                    self.delta.append({})
                    self.default.append(sink)
                    self.names.append("sink")
                self.default[q] = sink
        for q in range(self.n_states):
            targets = list(self.delta[q].values()) + [self.default[q]]
            for t in targets:
                if t is not None and not 0 <= t < self.n_states:
                    raise InvalidAutomaton(f"transition target {t} out of range")
        for fin, inf in self.pairs:
            for q in fin | inf:
                if not 0 <= q < self.n_states:
                    raise InvalidAutomaton(f"acceptance state {q} out of range")
        self._table = None

    @property
    def n_letters(self) -> int:
        return 1 << len(self.atoms)

    def step(self, q: int, letter: int) -> int:
        t = self.delta[q].get(letter)
        return self.default[q] if t is None else t

    def letter(self, valuation: Iterable[str]) -> int:
        vs = set(valuation)
        return sum(1 << i for i, a in enumerate(self.atoms) if a in vs)

    def step_valuation(self, q: int, valuation: Iterable[str]) -> int:
        return self.step(q, self.letter(valuation))

    def table(self) -> np.ndarray:
        """Dense ``(n_states, 2**|atoms|)`` transition table."""
        if self._table is None:
            tab = np.empty((self.n_states, self.n_letters), dtype=np.int64)
            for q in range(self.n_states):
                tab[q, :] = self.default[q] if self.default[q] is not None else -1
                for a, t in self.delta[q].items():
                    tab[q, a] = t
            self._table = tab
        return self._table

    def run(self, word: Iterable[Iterable[str]]) -> list[int]:
        """States ``q0, q1, ...`` visited while reading ``word``."""
        q = self.initial
        out = [q]
        for sigma in word:
            q = self.step_valuation(q, sigma)
            out.append(q)
        return out

    def successors(self, q: int) -> set[int]:
        out = set(self.delta[q].values())
        if self.default[q] is not None and len(self.delta[q]) < self.n_letters:
            out.add(self.default[q])
        return out

    def hopeless_states(self) -> set[int]:
        """States from which no accepting run is possible for any word."""
        succ = [self.successors(q) for q in range(self.n_states)]
        good: set[int] = set()
        for fin, inf in self.pairs:
            allowed = [q for q in range(self.n_states) if q not in fin]
            for comp in _sccs(allowed, succ):
                comp_set = set(comp)
                cyclic = len(comp) > 1 or comp[0] in succ[comp[0]]
                if cyclic and comp_set & inf:
                    good |= comp_set
        # backward closure
        pred: list[set[int]] = [set() for _ in range(self.n_states)]
        for q in range(self.n_states):
            for t in succ[q]:
                pred[t].add(q)
        stack = list(good)
        alive = set(good)
        while stack:
            q = stack.pop()
            for p in pred[q]:
                if p not in alive:
                    alive.add(p)
                    stack.append(p)
        return set(range(self.n_states)) - alive


def _sccs(nodes: Sequence[int], succ: list[set[int]]) -> list[list[int]]:
    """Iterative Tarjan restricted to ``nodes``."""
    allowed = set(nodes)
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(sorted(succ[root] & allowed)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(succ[w] & allowed))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
    return out


# ---------------------------------------------------------------------------
# Acceptance on lassos

def _accepts_inf_set(d: Dra, inf_set: set[int]) -> bool:
    return any(not (inf_set & fin) and (inf_set & inf) for fin, inf in d.pairs)


def dra_accepts_lasso(d: Dra, w: Lasso) -> bool:
    """Rabin acceptance of the (ultimately periodic) run of ``d`` on ``w``."""
    q = d.initial
    for sigma in w.prefix:
        q = d.step_valuation(q, sigma)
    letters = [d.letter(s) for s in w.cycle]
    seen: dict[int, int] = {}
    boundary = []
    while q not in seen:
        seen[q] = len(boundary)
        boundary.append(q)
        for a in letters:
            q = d.step(q, a)
    inf_set: set[int] = set()
    for q in boundary[seen[q]:]:
        for a in letters:
            inf_set.add(q)
            q = d.step(q, a)
    return _accepts_inf_set(d, inf_set)


def dra_accepts_batch(d: Dra, batch: LassoBatch) -> np.ndarray:
    """Vectorised :func:`dra_accepts_lasso` over a :class:`LassoBatch`."""
    index = {a: i for i, a in enumerate(batch.atoms)}
    missing = [a for a in d.atoms if a not in index]
    if missing:
        raise ValueError(f"batch lacks atoms {missing}")
    lut = np.zeros(1 << len(batch.atoms), dtype=np.int64)
    for bits in range(len(lut)):
        lut[bits] = sum(1 << i for i, a in enumerate(d.atoms) if bits >> index[a] & 1)
    letters = lut[batch.letters]
    table = d.table()
    L = len(batch)
    rows = np.arange(L)
    q = np.full(L, d.initial)
    pos = np.zeros(L, dtype=np.int64)
    warmup = batch.max_prefix + d.n_states * batch.max_cycle
    for _ in range(warmup):
        q = table[q, letters[rows, pos]]
        pos = batch.succ[rows, pos]
    visited = np.zeros((L, d.n_states), dtype=bool)
    for _ in range(d.n_states * batch.max_cycle):
        visited[rows, q] = True
        q = table[q, letters[rows, pos]]
        pos = batch.succ[rows, pos]
    out = np.zeros(L, dtype=bool)
    for fin, inf in d.pairs:
        fin_mask = np.zeros(d.n_states, bool)
        fin_mask[list(fin)] = True
        inf_mask = np.zeros(d.n_states, bool)
        inf_mask[list(inf)] = True
        out |= ~(visited & fin_mask).any(axis=1) & (visited & inf_mask).any(axis=1)
    return out


# ---------------------------------------------------------------------------
# Progression

def _flatten(cls, parts):
    for p in parts:
        if isinstance(p, cls):
            yield from _flatten(cls, (p.left, p.right))
        else:
            yield p


def _negated(f: Formula) -> Formula:
    return f.arg if isinstance(f, Not) else Not(f)


def mk_and(*parts: Formula) -> Formula:
    items = set()
    for p in _flatten(And, parts):
        if p == FALSE:
            return FALSE
        if p == TRUE:
            continue
        items.add(p)
    for p in items:
        if (isinstance(p, Atom) or isinstance(p, Not)) and _negated(p) in items:
            return FALSE
    if not items:
        return TRUE
    ordered = sorted(items, key=str)
    out = ordered[-1]
    for p in reversed(ordered[:-1]):
        out = And(p, out)
    return out


def mk_or(*parts: Formula) -> Formula:
    items = set()
    for p in _flatten(Or, parts):
        if p == TRUE:
            return TRUE
        if p == FALSE:
            continue
        items.add(p)
    for p in items:
        if (isinstance(p, Atom) or isinstance(p, Not)) and _negated(p) in items:
            return TRUE
    if not items:
        return FALSE
    ordered = sorted(items, key=str)
    out = ordered[-1]
    for p in reversed(ordered[:-1]):
        out = Or(p, out)
    return out


def conjuncts(f: Formula) -> list[Formula]:
    return list(_flatten(And, (f,)))


def _dnf_clauses(f: Formula) -> list[frozenset]:
    if f == TRUE:
        return [frozenset()]
    if f == FALSE:
        return []
    if isinstance(f, And):
        return [a | b for a in _dnf_clauses(f.left) for b in _dnf_clauses(f.right)]
    if isinstance(f, Or):
        return _dnf_clauses(f.left) + _dnf_clauses(f.right)
    return [frozenset([f])]


def normalize(f: Formula) -> Formula:
    """Minimal DNF over temporal subformulas and literals.

    Contradictory clauses and clauses absorbed by smaller ones are
    dropped, so equal Boolean combinations get one canonical form.
    """
    clauses = []
    for c in sorted(set(_dnf_clauses(f)), key=lambda c: (len(c), sorted(map(str, c)))):
        if any((isinstance(x, (Atom, Not))) and _negated(x) in c for x in c):
            continue
        if any(k <= c for k in clauses):
            continue
        clauses.append(c)
    return mk_or(*[mk_and(*c) for c in clauses])


def progress(f: Formula, sigma: frozenset, cache: dict | None = None) -> Formula:
    """The obligation left for the suffix after reading letter ``sigma``."""
    return normalize(_progress(f, sigma, cache))


def _progress(f: Formula, sigma: frozenset, cache: dict | None = None) -> Formula:
    if cache is not None:
        key = (f, sigma)
        hit = cache.get(key)
        if hit is not None:
            return hit
    if is_const(f):
        out = f
    elif isinstance(f, Atom):
        out = TRUE if f.name in sigma else FALSE
    elif isinstance(f, Not):
        out = FALSE if f.arg.name in sigma else TRUE
    elif isinstance(f, And):
        out = mk_and(_progress(f.left, sigma, cache), _progress(f.right, sigma, cache))
    elif isinstance(f, Or):
        out = mk_or(_progress(f.left, sigma, cache), _progress(f.right, sigma, cache))
    elif isinstance(f, Next):
        out = mk_and(f.arg)
    elif isinstance(f, Finally):
        out = mk_or(_progress(f.arg, sigma, cache), f)
    elif isinstance(f, Globally):
        out = mk_and(_progress(f.arg, sigma, cache), f)
    elif isinstance(f, Until):
        out = mk_or(_progress(f.right, sigma, cache),
                    mk_and(_progress(f.left, sigma, cache), f))
    else:
        raise UnsupportedFragment(f, "not in negation normal form")
    if cache is not None:
        cache[key] = out
    return out


def is_safety(f: Formula) -> bool:
    return not any(isinstance(n, (Until, Finally)) for n in walk(f))


def is_cosafety(f: Formula) -> bool:
    return not any(isinstance(n, Globally) for n in walk(f))


def is_recurrence(f: Formula) -> bool:
    return isinstance(f, Globally) and is_cosafety(f.arg)


SINK = ("sink",)


class _Component:
    """One progression automaton inside the translation product."""

    def __init__(self, kind: str, formula: Formula, cache: dict):
        self.kind = kind
        self.formula = formula
        self.cache = cache
        if kind == "recurrence":
            self.body = formula.arg
            self.initial = (TRUE, TRUE)
        else:
            self.initial = normalize(formula)

    def step(self, state, sigma):
        if self.kind != "recurrence":
            return progress(state, sigma, self.cache)
        if state == SINK:
            return SINK
        current, pending = state
        if current == TRUE:
            current, pending = pending, TRUE
        a = progress(current, sigma, self.cache)
        b = mk_and(progress(pending, sigma, self.cache), progress(self.body, sigma, self.cache))
        if a == FALSE or b == FALSE:
            return SINK
        if a != TRUE and b != TRUE:
            seen = set(conjuncts(a))
            b = mk_and(*[c for c in conjuncts(b) if c not in seen])
        return (a, b)

    def bad(self, state) -> bool:
        if self.kind == "safety":
            return state == FALSE
        if self.kind == "recurrence":
            return state == SINK
        return False

    def good(self, state) -> bool:
        if self.kind == "cosafety":
            return state == TRUE
        if self.kind == "recurrence":
            return state != SINK and state[0] == TRUE
        return True

    @staticmethod
    def describe(state) -> str:
        if state == SINK:
            return "sink"
        if isinstance(state, tuple):
            return f"[{state[0]} ; {state[1]}]"
        return str(state)


def _dnf(f: Formula) -> list[list[Formula]]:
    if is_safety(f) or is_cosafety(f) or is_recurrence(f):
        return [[f]]
    if isinstance(f, And):
        return [l + r for l in _dnf(f.left) for r in _dnf(f.right)]
    if isinstance(f, Or):
        return _dnf(f.left) + _dnf(f.right)
    raise UnsupportedFragment(f)


def _classify(f: Formula) -> str:
    if is_safety(f):
        return "safety"
    if is_cosafety(f):
        return "cosafety"
    return "recurrence"


def ltl_to_dra(f: Formula, max_states: int = 100_000) -> Dra:
    """Compile a fragment formula into a complete, reachable-only DRA.

    Raises :class:`UnsupportedFragment` naming the offending subformula when
    ``f`` lies outside the fragment.
    """
    if not is_nnf(f):
        f = to_nnf(f)
    atoms = tuple(sorted(f.atoms()))
    cache: dict = {}
    whole = _classify(f) if (is_safety(f) or is_cosafety(f) or is_recurrence(f)) else None
    if whole is not None:
        comps = [_Component(whole, f, cache)]
        disjuncts = [{whole: 0}]
    else:
        comps = []
        index: dict[tuple[str, Formula], int] = {}
        disjuncts = []
        for leaves in _dnf(f):
            groups: dict[str, list[Formula]] = {}
            for leaf in leaves:
                kind = _classify(leaf)
                groups.setdefault(kind, []).append(leaf.arg if kind == "recurrence" else leaf)
            entry = {}
            for kind, parts in groups.items():
                merged = mk_and(*parts)
                if kind == "recurrence":
                    merged = Globally(merged)
                if merged == FALSE:
                    entry = None
                    break
                if merged == TRUE:
                    continue
                key = (kind, merged)
                if key not in index:
                    index[key] = len(comps)
                    comps.append(_Component(kind, merged, cache))
                entry[kind] = index[key]
            if entry is not None:
                disjuncts.append(entry)
        if not disjuncts:
            comps = [_Component("safety", FALSE, cache)]
            disjuncts = [{"safety": 0}]

    letters = [frozenset(a for i, a in enumerate(atoms) if bits >> i & 1)
               for bits in range(1 << len(atoms))]
    initial = tuple(c.initial for c in comps)
    ids = {initial: 0}
    order = [initial]
    delta: list[dict[int, int]] = []
    i = 0
    while i < len(order):
        state = order[i]
        row = {}
        for bits, sigma in enumerate(letters):
            nxt = tuple(c.step(s, sigma) for c, s in zip(comps, state))
            if nxt not in ids:
                if len(order) >= max_states:
                    raise UnsupportedFragment(f, f"more than {max_states} automaton states")
                ids[nxt] = len(order)
                order.append(nxt)
            row[bits] = ids[nxt]
        delta.append(row)
        i += 1

    pairs = []
    for entry in disjuncts:
        fin, inf = set(), set()
        for q, state in enumerate(order):
            bad = any(comps[k].bad(state[k]) for kind, k in entry.items() if kind != "cosafety")
            good = all(comps[k].good(state[k]) for kind, k in entry.items())
            if bad:
                fin.add(q)
            elif good:
                inf.add(q)
        pairs.append((frozenset(fin), frozenset(inf)))

    names = [" , ".join(_Component.describe(s) for s in state) for state in order]
    delta, pairs, names = _minimize(delta, pairs, names, len(letters))

    # Collapse the explicit letter maps to a default edge where possible.
    defaults: list[int | None] = []
    compact = []
    for row in delta:
        counts: dict[int, int] = {}
        for t in row.values():
            counts[t] = counts.get(t, 0) + 1
        common = max(counts, key=lambda t: (counts[t], -t))
        defaults.append(common)
        compact.append({a: t for a, t in row.items() if t != common})
    return Dra(atoms, len(delta), 0, compact, defaults, pairs, names)


def _on_cycle(delta: list[dict[int, int]], q: int, allowed: set[int]) -> bool:
    """Whether ``q`` can return to itself through states in ``allowed``."""
    stack = [t for t in set(delta[q].values()) if t in allowed]
    seen = set(stack)
    while stack:
        r = stack.pop()
        if r == q:
            return True
        for t in set(delta[r].values()):
            if t in allowed and t not in seen:
                seen.add(t)
                stack.append(t)
    return False


def _minimize(delta, pairs, names, n_letters):
    """Drop redundant Inf marks, then merge bisimilar states.

    An Inf mark on ``q`` only matters for runs that eventually avoid Fin
    and the pair's other Inf states while still passing ``q`` infinitely
    often; if no such cycle exists the mark can go.  The quotient keeps
    state 0 initial and numbers states in breadth-first order.
    """
    n = len(delta)
    pairs = [(set(f), set(i)) for f, i in pairs]
    for fin, inf in pairs:
        for q in sorted(inf):
            allowed = set(range(n)) - fin - (inf - {q})
            if not _on_cycle(delta, q, allowed):
                inf.discard(q)
    block = [tuple((q in f, q in i) for f, i in pairs) for q in range(n)]
    while True:
        sig = [(block[q],) + tuple(block[delta[q][a]] for a in range(n_letters)) for q in range(n)]
        ids: dict = {}
        new = [ids.setdefault(x, len(ids)) for x in sig]
        if len(ids) == len(set(block)):
            block = new
            break
        block = new
    order, index = [block[0]], {block[0]: 0}
    rep = {block[0]: 0}
    i = 0
    while i < len(order):
        q = rep[order[i]]
        for a in range(n_letters):
            b = block[delta[q][a]]
            if b not in index:
                index[b] = len(order)
                order.append(b)
                rep[b] = delta[q][a]
        i += 1
    new_delta = [{a: index[block[delta[rep[b]][a]]] for a in range(n_letters)} for b in order]
    new_pairs = [(frozenset(index[block[q]] for q in f), frozenset(index[block[q]] for q in inf))
                 for f, inf in pairs]
    return new_delta, new_pairs, [names[rep[b]] for b in order]


def fragment_formulas(atoms: Sequence[str], depth: int) -> list[Formula]:
    """All NNF formulas over ``atoms`` with literals at depth 1.

    Conjunction and disjunction are enumerated once per unordered pair.
    """
    levels: list[list[Formula]] = []
    lits = []
    for a in atoms:
        lits += [Atom(a), Not(Atom(a))]
    levels.append(lits)
    seen = set(lits)
    for _ in range(depth - 1):
        below = [g for lvl in levels for g in lvl]
        new = []
        for g in below:
            for op in (Next, Finally, Globally):
                new.append(op(g))
        for g, h in itertools.product(below, repeat=2):
            new.append(Until(g, h))
        for g, h in itertools.combinations_with_replacement(below, 2):
            new.append(And(g, h))
            new.append(Or(g, h))
        fresh = [g for g in new if g not in seen]
        seen.update(fresh)
        levels.append(fresh)
    return [g for lvl in levels for g in lvl]
