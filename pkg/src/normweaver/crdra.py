"""Weighted norms and their conflict-resolution automata.

A conflict-resolution DRA (CRDRA) reads pairs ``(valuation, norm action)``.
``keep`` follows the underlying DRA at no cost; ``susp`` leaves the state
unchanged and costs the norm's weight.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .automata import Dra, ltl_to_dra
from .ltl import Formula, LtlError, ground, parse_quantified, to_nnf


class NormError(ValueError):
    pass


class NormFileError(NormError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NormAction(enum.IntEnum):
    KEEP = 0
    SUSP = 1

    def __str__(self):
        return self.name.lower()


@dataclass
class Norm:
    """An obligation ``formula`` with positive importance ``weight``."""

    name: str
    weight: float
    formula: Formula
    text: str = ""
    automaton: Dra | None = None

    def __post_init__(self):
        self.weight = float(self.weight)
        if not self.weight > 0:
            raise NormError(f"norm {self.name}: weight must be positive, got {self.weight}")

    def compile(self) -> Dra:
        if self.automaton is None:
            self.automaton = ltl_to_dra(to_nnf(self.formula))
        return self.automaton


_LINE_RE = re.compile(r"^\s*([^:]+?)\s*::\s*(.+?)\s*$")


def parse_norms(text: str, domain: Mapping[str, Sequence[str]] | None = None) -> list[Norm]:
    """Read a norm file: ``<weight> :: <formula>`` per line, ``#`` comments.

    Quantified formulas are grounded over ``domain``; a file may extend
    the domain with ``@domain <sort>: <entity> <entity> ...`` lines.
    Norms are named ``N1, N2, ...`` in file order.
    """
    dom = {k: list(v) for k, v in (domain or {}).items()}
    norms = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("@domain"):
            sort, sep, ents = line[len("@domain"):].partition(":")
            if not sep or not sort.strip():
                raise NormFileError("expected '@domain <sort>: <entities>'", no)
            dom[sort.strip()] = ents.split()
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise NormFileError("expected '<weight> :: <formula>'", no)
        try:
            weight = float(m.group(1))
        except ValueError:
            raise NormFileError(f"bad weight {m.group(1)!r}", no) from None
        if not weight > 0:
            raise NormFileError(f"weight must be positive, got {weight}", no)
        try:
            formula = ground(parse_quantified(m.group(2)), dom)
        except LtlError as e:
            raise NormFileError(str(e), no) from e
        norms.append(Norm(f"N{len(norms) + 1}", weight, formula, m.group(2)))
    if not norms:
        raise NormError("no norms given")
    return norms


@dataclass
class Crdra:
    """The keep/susp extension of ``dra`` for a norm of weight ``weight``."""

    dra: Dra
    weight: float
    name: str = ""

    def __post_init__(self):
        self.weight = float(self.weight)

    @property
    def atoms(self) -> tuple[str, ...]:
        return self.dra.atoms

    @property
    def n_states(self) -> int:
        return self.dra.n_states

    @property
    def initial(self) -> int:
        return self.dra.initial

    @property
    def pairs(self):
        return self.dra.pairs

    def step(self, q: int, letter: int, action: NormAction) -> int:
        return q if action == NormAction.SUSP else self.dra.step(q, letter)

    def cost(self, action: NormAction) -> float:
        return self.weight if action == NormAction.SUSP else 0.0

    def step_valuation(self, q: int, valuation: Iterable[str], action: NormAction) -> int:
        return self.step(q, self.dra.letter(valuation), action)


def build_crdra(n: Norm, d: Dra | None = None) -> Crdra:
    return Crdra(d if d is not None else n.compile(), n.weight, n.name)


@dataclass(frozen=True)
class Transition:
    state: int
    valuation: frozenset
    action: NormAction


@dataclass
class CrdraTransitionSeq:
    """A CRDRA transition sequence ``prefix . cycle^omega`` (cycle may be empty)."""

    crdra: Crdra
    prefix: list[Transition]
    cycle: list[Transition] = field(default_factory=list)

    def __post_init__(self):
        seq = self.prefix + self.cycle
        if seq and seq[0].state != self.crdra.initial:
            raise NormError("sequence must start in the initial state")
        for i in range(len(seq) - 1):
            t = seq[i]
            nxt = self.crdra.step_valuation(t.state, t.valuation, t.action)
            if nxt != seq[i + 1].state:
                raise NormError(f"step {i}: expected state {nxt}, found {seq[i + 1].state}")
        if self.cycle:
            t = self.cycle[-1]
            if self.crdra.step_valuation(t.state, t.valuation, t.action) != self.cycle[0].state:
                raise NormError("cycle does not close")

    @classmethod
    def from_letters(cls, c: Crdra, prefix: Sequence[tuple[Iterable[str], NormAction]],
                     cycle: Sequence[tuple[Iterable[str], NormAction]] = ()) -> "CrdraTransitionSeq":
        """Run ``c`` on the letters, unrolling the cycle until the run closes."""
        q = c.initial
        pre: list[Transition] = []
        for val, act in prefix:
            pre.append(Transition(q, frozenset(val), NormAction(act)))
            q = c.step_valuation(q, val, act)
        if not cycle:
            return cls(c, pre, [])
        cyc = [(frozenset(v), NormAction(a)) for v, a in cycle]
        starts: dict[int, int] = {}
        body: list[Transition] = []
        while q not in starts:
            starts[q] = len(body)
            for val, act in cyc:
                body.append(Transition(q, val, act))
                q = c.step_valuation(q, val, act)
        k = starts[q]
        return cls(c, pre + body[:k], body[k:])

    def weights(self) -> tuple[list[float], list[float]]:
        return ([self.crdra.cost(t.action) for t in self.prefix],
                [self.crdra.cost(t.action) for t in self.cycle])

    def is_run(self) -> bool:
        """True iff the sequence projects to a run of the underlying DRA."""
        d = self.crdra.dra
        seq = self.prefix + self.cycle
        for i, t in enumerate(seq):
            nxt = d.step_valuation(t.state, t.valuation)
            expected = seq[i + 1].state if i + 1 < len(seq) else (self.cycle[0].state if self.cycle else None)
            if expected is not None and nxt != expected:
                return False
        return True


def discounted_cost(prefix: Sequence[float], cycle: Sequence[float], gamma: float) -> float:
    """``sum_t gamma^t w_t`` over ``prefix . cycle^omega`` in closed form."""
    if not 0 <= gamma < 1:
        raise NormError(f"discount must lie in [0, 1), got {gamma}")
    total = 0.0
    g = 1.0
    for w in prefix:
        total += g * w
        g *= gamma
    if cycle:
        inner = 0.0
        h = 1.0
        for w in cycle:
            inner += h * w
            h *= gamma
        total += g * inner / (1.0 - h)
    return total


def violation_cost(seq: CrdraTransitionSeq, gamma: float) -> float:
    pre, cyc = seq.weights()
    return discounted_cost(pre, cyc, gamma)
