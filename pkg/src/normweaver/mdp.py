"""Labeled Markov decision processes and their sparse "choice" form.

Algorithms work on :class:`ChoiceMdp`: every available (state, action) pair
is a *choice* row of a CSR matrix over successor states.  Choices are
sorted by state, and successors by state id, so every sweep over the
structure is deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

STOCHASTIC_TOL = 1e-9


class MdpError(ValueError):
    pass


class InvalidPath(MdpError):
    pass


@dataclass
class ChoiceMdp:
    """Sparse MDP: ``P[c, s']`` is the probability of ``s'`` under choice ``c``."""

    n_states: int
    choice_state: np.ndarray
    P: sp.csr_matrix

    def __post_init__(self):
        self.choice_state = np.asarray(self.choice_state, dtype=np.int64)
        if len(self.choice_state) and np.any(np.diff(self.choice_state) < 0):
            raise MdpError("choices must be sorted by state")
        self.P = sp.csr_matrix(self.P)
        self.P.sort_indices()
        self.state_ptr = np.searchsorted(self.choice_state, np.arange(self.n_states + 1))

    @property
    def n_choices(self) -> int:
        return len(self.choice_state)

    def choices_of(self, s: int) -> range:
        return range(self.state_ptr[s], self.state_ptr[s + 1])

    def successors(self, c: int) -> np.ndarray:
        return self.P.indices[self.P.indptr[c]:self.P.indptr[c + 1]]

    def edge_graph(self, choice_mask: np.ndarray | None = None) -> sp.csr_matrix:
        """State adjacency (``s -> s'`` when some allowed choice can move there)."""
        P = self.P if choice_mask is None else self.P[np.flatnonzero(choice_mask)]
        rows = self.choice_state if choice_mask is None else self.choice_state[choice_mask]
        coo = P.tocoo()
        data = np.ones(coo.nnz, dtype=np.int8)
        return sp.csr_matrix((data, (rows[coo.row], coo.col)), shape=(self.n_states, self.n_states))


@dataclass
class LabeledMdp:
    """A finite labeled MDP with sparse transitions.

    ``transitions`` maps ``(state, action)`` to a sorted tuple of
    ``(successor, probability)``; the keys define the available actions.
    """

    n_states: int
    actions: list[str]
    atoms: tuple[str, ...]
    labels: list[frozenset]
    initial: int
    transitions: dict[tuple[int, int], tuple[tuple[int, float], ...]]
    state_names: list[str] = field(default_factory=list)
    state_data: list[Any] | None = None

    def __post_init__(self):
        self.atoms = tuple(self.atoms)
        self.labels = [frozenset(l) for l in self.labels]
        if not self.state_names:
            self.state_names = [f"s{i}" for i in range(self.n_states)]
        self.transitions = {k: tuple(sorted((int(t), float(p)) for t, p in v))
                            for k, v in sorted(self.transitions.items())}

    def available(self, s: int) -> list[int]:
        return self._avail.get(s, [])

    @cached_property
    def _avail(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for s, a in self.transitions:
            out.setdefault(s, []).append(a)
        return out

    def action_id(self, name: str) -> int:
        return self.actions.index(name)

    def successors(self, s: int, a: int) -> tuple[tuple[int, float], ...]:
        try:
            return self.transitions[(s, a)]
        except KeyError:
            raise MdpError(f"action {self.actions[a]!r} unavailable in state {s}") from None

    def label_bits(self, atoms: Sequence[str]) -> np.ndarray:
        """Per-state letter bitsets over ``atoms`` (atoms absent from the MDP are false)."""
        out = np.zeros(self.n_states, dtype=np.int64)
        for i, a in enumerate(atoms):
            mask = np.fromiter((a in l for l in self.labels), dtype=bool, count=self.n_states)
            out[mask] |= 1 << i
        return out

    @cached_property
    def sparse(self) -> ChoiceMdp:
        """The choice form; choice ``c`` is ``choice_action[c]`` in ``choice_state[c]``."""
        keys = list(self.transitions)
        states = np.array([k[0] for k in keys], dtype=np.int64)
        rows, cols, vals = [], [], []
        for c, k in enumerate(keys):
            for t, p in self.transitions[k]:
                rows.append(c)
                cols.append(t)
                vals.append(p)
        P = sp.csr_matrix((vals, (rows, cols)), shape=(len(keys), self.n_states))
        cm = ChoiceMdp(self.n_states, states, P)
        cm.choice_action = np.array([k[1] for k in keys], dtype=np.int64)
        return cm

    def sample(self, s: int, a: int, rng: np.random.Generator) -> int:
        succ = self.successors(s, a)
        u = rng.random()
        acc = 0.0
        for t, p in succ:
            acc += p
            if u < acc:
                return t
        return succ[-1][0]


def validate(m: LabeledMdp) -> list[str]:
    """List every well-formedness violation of ``m``; empty iff well formed."""
    problems = []
    n = m.n_states
    if not 0 <= m.initial < n:
        problems.append(f"dangling initial state {m.initial}")
    if len(m.labels) != n:
        problems.append(f"{len(m.labels)} labels for {n} states")
    atoms = set(m.atoms)
    for s, lab in enumerate(m.labels):
        extra = lab - atoms
        if extra:
            problems.append(f"state {s} labeled with unknown atoms {sorted(extra)}")
    have = set()
    for (s, a), succ in m.transitions.items():
        if not 0 <= s < n:
            problems.append(f"transition from dangling state {s}")
            continue
        if not 0 <= a < len(m.actions):
            problems.append(f"state {s} uses dangling action {a}")
        have.add(s)
        total = 0.0
        for t, p in succ:
            if not 0 <= t < n:
                problems.append(f"state {s} action {a} moves to dangling state {t}")
            if p < 0:
                problems.append(f"state {s} action {a} has negative probability {p}")
            total += p
        if abs(total - 1.0) > STOCHASTIC_TOL:
            problems.append(f"non-stochastic row: state {s} action {a} sums to {total:.12g}")
    for s in range(n):
        if s not in have:
            problems.append(f"state {s} has no available action")
    return problems


@dataclass(frozen=True)
class MdpPath:
    """Alternating path ``s0, a0, s1, a1, ..., s_k``."""

    states: tuple[int, ...]
    actions: tuple[int, ...]

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise InvalidPath("a path has exactly one more state than actions")


def check_path(m: LabeledMdp, p: MdpPath) -> None:
    for i, a in enumerate(p.actions):
        s, t = p.states[i], p.states[i + 1]
        probs = dict(m.transitions.get((s, a), ()))
        if probs.get(t, 0.0) <= 0.0:
            raise InvalidPath(f"step {i}: {s} --{a}--> {t} has probability zero")


def induced_word(m: LabeledMdp, p: MdpPath) -> list[frozenset]:
    check_path(m, p)
    return [m.labels[s] for s in p.states]


class MdpBuilder:
    """Incremental construction by state and action names."""

    def __init__(self, atoms: Iterable[str] = ()):
        self.atoms = list(atoms)
        self.state_index: dict[str, int] = {}
        self.state_names: list[str] = []
        self.labels: list[frozenset] = []
        self.action_index: dict[str, int] = {}
        self.actions: list[str] = []
        self.transitions: dict[tuple[int, int], dict[int, float]] = {}

    def state(self, name: str, labels: Iterable[str] = ()) -> int:
        if name not in self.state_index:
            self.state_index[name] = len(self.state_names)
            self.state_names.append(name)
            self.labels.append(frozenset(labels))
            for a in labels:
                if a not in self.atoms:
                    self.atoms.append(a)
        return self.state_index[name]

    def action(self, name: str) -> int:
        if name not in self.action_index:
            self.action_index[name] = len(self.actions)
            self.actions.append(name)
        return self.action_index[name]

    def add(self, src: str, action: str, dst: str, prob: float) -> None:
        s, a, t = self.state(src), self.action(action), self.state(dst)
        row = self.transitions.setdefault((s, a), {})
        row[t] = row.get(t, 0.0) + prob

    def build(self, initial: str | None = None) -> LabeledMdp:
        init = 0 if initial is None else self.state_index[initial]
        return LabeledMdp(len(self.state_names), self.actions, tuple(self.atoms), self.labels, init,
                          {k: tuple(v.items()) for k, v in self.transitions.items()},
                          list(self.state_names))


# ---------------------------------------------------------------------------
# JSON interchange

def mdp_from_json(doc: dict | str) -> LabeledMdp:
    """Build an MDP from the interchange document.

    ``{"atoms": [...], "states": [...], "labels": [[...], ...],
    "actions": [...], "initial": name, "transitions":
    [{"from": s, "action": a, "to": {s': p, ...}}, ...]}``
    """
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        states = list(doc["states"])
        labels = doc.get("labels") or [[] for _ in states]
        if len(labels) != len(states):
            raise MdpError("labels must parallel states")
        b = MdpBuilder(doc.get("atoms", []))
        for name, lab in zip(states, labels):
            b.state(str(name), lab)
        for a in doc.get("actions", []):
            b.action(a)
        for tr in doc["transitions"]:
            src, act, dst = str(tr["from"]), tr["action"], tr["to"]
            if src not in b.state_index:
                raise MdpError(f"transition from unknown state {src!r}")
            if act not in b.action_index:
                raise MdpError(f"unknown action {act!r}")
            items = dst.items() if isinstance(dst, dict) else dst
            for t, p in items:
                if str(t) not in b.state_index:
                    raise MdpError(f"transition to unknown state {t!r}")
                b.add(src, act, str(t), float(p))
        initial = doc.get("initial")
        return b.build(None if initial is None else str(initial))
    except KeyError as e:
        raise MdpError(f"missing field {e}") from None


def mdp_to_json(m: LabeledMdp) -> dict:
    return {
        "atoms": list(m.atoms),
        "states": list(m.state_names),
        "labels": [sorted(l) for l in m.labels],
        "actions": list(m.actions),
        "initial": m.state_names[m.initial],
        "transitions": [
            {"from": m.state_names[s], "action": m.actions[a],
             "to": {m.state_names[t]: p for t, p in succ}}
            for (s, a), succ in m.transitions.items()
        ],
    }
