"""Maximum-probability satisfaction of one LTL formula on a labeled MDP.

Covers the MDP x DRA product, maximal end components, accepting MECs and
maximal reachability probabilities.  End-component code works on any
:class:`~normweaver.mdp.ChoiceMdp`, which the conflict planner reuses.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .automata import Dra
from .mdp import ChoiceMdp, LabeledMdp, MdpError


class AtomMismatch(MdpError):
    pass


@dataclass(frozen=True, eq=False)
class EndComponent:
    """States (sorted ids) and the allowed choice ids of an end component."""

    states: np.ndarray
    choices: np.ndarray

    def __len__(self):
        return len(self.states)

    def key(self) -> tuple:
        return (tuple(self.states.tolist()), tuple(self.choices.tolist()))

    def state_mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[self.states] = True
        return m

    def choice_mask(self, n_choices: int) -> np.ndarray:
        m = np.zeros(n_choices, dtype=bool)
        m[self.choices] = True
        return m

    def restriction(self, mdp: ChoiceMdp) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {int(s): [] for s in self.states}
        for c in self.choices:
            out[int(mdp.choice_state[c])].append(int(c))
        return out


def _as_choice_mdp(obj) -> ChoiceMdp:
    if isinstance(obj, ChoiceMdp):
        return obj
    return obj.sparse


def _leaving(mdp: ChoiceMdp, cmask: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Choices in ``cmask`` with some successor outside ``inside``."""
    out_mass = mdp.P @ (~inside).astype(np.float64)
    return cmask & (out_mass > 0)


def maximal_end_components(obj, states: np.ndarray | None = None,
                           choices: np.ndarray | None = None) -> list[EndComponent]:
    """All MECs of the sub-MDP given by optional state and choice masks.

    Iterative SCC pruning: repeatedly drop choices that can leave their
    strongly connected component and states left without choices.
    """
    mdp = _as_choice_mdp(obj)
    n = mdp.n_states
    alive = np.ones(n, dtype=bool) if states is None else np.asarray(states, dtype=bool).copy()
    cmask = np.ones(mdp.n_choices, dtype=bool) if choices is None else np.asarray(choices, dtype=bool).copy()
    cmask &= alive[mdp.choice_state]
    coo = mdp.P.tocoo()
    rows, cols = coo.row, coo.col
    while True:
        # shrink to a closed sub-MDP first
        while True:
            cmask &= ~_leaving(mdp, cmask, alive)
            has = np.bincount(mdp.choice_state[cmask], minlength=n) > 0
            if np.array_equal(alive & has, alive):
                break
            alive &= has
        if not alive.any():
            return []
        _, lab = connected_components(mdp.edge_graph(cmask), directed=True, connection="strong")
        lab = np.where(alive, lab, -1)
        split = lab[cols] != lab[mdp.choice_state[rows]]
        bad = np.zeros(mdp.n_choices, dtype=bool)
        bad[rows[split]] = True
        bad &= cmask
        if not bad.any():
            break
        cmask &= ~bad
    comps: dict[int, list[int]] = {}
    for s in np.flatnonzero(alive):
        comps.setdefault(int(lab[s]), []).append(int(s))
    out = []
    choice_ids = np.flatnonzero(cmask)
    owner = lab[mdp.choice_state[choice_ids]]
    for label in sorted(comps, key=lambda k: comps[k][0]):
        out.append(EndComponent(np.array(comps[label], dtype=np.int64), choice_ids[owner == label]))
    return out


def is_end_component(obj, states: Sequence[int], choices: Sequence[int]) -> bool:
    """Check closure and strong connectivity of a candidate component."""
    mdp = _as_choice_mdp(obj)
    states = np.asarray(sorted(set(states)), dtype=np.int64)
    choices = np.asarray(sorted(set(choices)), dtype=np.int64)
    if len(states) == 0:
        return False
    inside = np.zeros(mdp.n_states, dtype=bool)
    inside[states] = True
    cmask = np.zeros(mdp.n_choices, dtype=bool)
    cmask[choices] = True
    if not inside[mdp.choice_state[choices]].all():
        return False
    if _leaving(mdp, cmask, inside).any():
        return False
    has = np.bincount(mdp.choice_state[choices], minlength=mdp.n_states) > 0
    if not has[states].all():
        return False
    g = mdp.edge_graph(cmask)[states][:, states]
    k, _ = connected_components(g, directed=True, connection="strong")
    return k == 1


# A Rabin-like condition over product states: a component is accepting when
# it avoids ``fin`` and meets every mask in ``infs``.
PairMask = tuple[np.ndarray, tuple[np.ndarray, ...]]


def accepting_mecs(obj, mecs: list[EndComponent], pairs: Sequence[PairMask]) -> list[EndComponent]:
    """Accepting end components, maximal for some pair.

    Each MEC is pruned of the pair's Fin states and decomposed again; the
    surviving components that touch every Inf mask are kept.  Duplicates
    arising from different pairs are removed.
    """
    mdp = _as_choice_mdp(obj)
    seen = set()
    out = []
    for mec in mecs:
        smask = mec.state_mask(mdp.n_states)
        cmask = mec.choice_mask(mdp.n_choices)
        for fin, infs in pairs:
            sub_states = smask & ~fin
            if not any((sub_states & inf).any() for inf in infs) and infs:
                continue
            for ec in maximal_end_components(mdp, sub_states, cmask):
                member = ec.state_mask(mdp.n_states)
                if all((member & inf).any() for inf in infs):
                    k = ec.key()
                    if k not in seen:
                        seen.add(k)
                        out.append(ec)
    return out


def can_reach(obj, targets: np.ndarray, choices: np.ndarray | None = None) -> np.ndarray:
    """States with a positive-probability path into ``targets``."""
    mdp = _as_choice_mdp(obj)
    g = mdp.edge_graph(choices).T.tocsr()
    reach = np.asarray(targets, dtype=bool).copy()
    sources = np.flatnonzero(reach)
    if len(sources) == 0:
        return reach
    # one BFS from a virtual root connected to all targets
    n = mdp.n_states
    root = sp.csr_matrix((np.ones(len(sources)), (np.zeros(len(sources), dtype=np.int64), sources + 1)),
                         shape=(1, n + 1))
    big = sp.vstack([root, sp.hstack([sp.csr_matrix((n, 1)), g])]).tocsr()
    order = breadth_first_order(big, 0, directed=True, return_predecessors=False)
    reach[order[order > 0] - 1] = True
    return reach


def reachable_from(obj, start: int, choices: np.ndarray | None = None) -> np.ndarray:
    mdp = _as_choice_mdp(obj)
    order = breadth_first_order(mdp.edge_graph(choices), start, directed=True, return_predecessors=False)
    mask = np.zeros(mdp.n_states, dtype=bool)
    mask[order] = True
    return mask


def _segment_max(q: np.ndarray, mdp: ChoiceMdp, with_choices: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(q, mdp.state_ptr[:-1][with_choices])


@dataclass
class ReachResult:
    values: np.ndarray
    restriction: np.ndarray     # boolean mask over choices (A*)
    good: np.ndarray
    sweeps: int
    residual: float


def max_reach_probability(obj, good: np.ndarray, tol: float = 1e-9,
                          max_sweeps: int = 1_000_000,
                          good_choices: np.ndarray | None = None) -> ReachResult:
    """Maximal probability of reaching ``good`` by Jacobi value iteration.

    ``good`` states are clamped to 1; states with no path to ``good`` are
    fixed at 0.  A* is the argmax set (within ``tol``) where the value is
    positive and ``good_choices`` inside ``good``.
    """
    mdp = _as_choice_mdp(obj)
    good = np.asarray(good, dtype=bool)
    n = mdp.n_states
    reach = can_reach(mdp, good)
    has = np.diff(mdp.state_ptr) > 0
    free = reach & ~good & has
    v = np.where(good, 1.0, 0.0)
    sweeps = 0
    residual = 0.0
    while sweeps < max_sweeps:
        q = mdp.P @ v
        best = np.zeros(n)
        best[has] = _segment_max(q, mdp, has)
        new = np.where(free, best, v)
        residual = float(np.max(np.abs(new - v))) if n else 0.0
        v = new
        sweeps += 1
        if residual < tol:
            break
    q = mdp.P @ v
    best = np.zeros(n)
    best[has] = _segment_max(q, mdp, has)
    owner = mdp.choice_state
    restr = (q >= best[owner] - tol) & (v[owner] > 0) & ~good[owner]
    if good_choices is not None:
        restr |= good_choices & good[owner]
    else:
        restr |= good[owner]
    return ReachResult(v, restr, good, sweeps, residual)


# ---------------------------------------------------------------------------
# Single-automaton product

@dataclass
class ProductMdp:
    """Reachable part of ``M x D`` with dense state ids."""

    mdp: LabeledMdp
    dra: Dra
    env_state: np.ndarray
    dra_state: np.ndarray
    sparse: ChoiceMdp
    initial: int
    stats: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.env_state)

    @property
    def choice_action(self) -> np.ndarray:
        return self.sparse.choice_action

    def pair_masks(self) -> list[PairMask]:
        out = []
        for fin, inf in self.dra.pairs:
            f = np.isin(self.dra_state, sorted(fin))
            i = np.isin(self.dra_state, sorted(inf))
            out.append((f, (i,)))
        return out

    def index(self, s: int, q: int) -> int:
        hit = np.flatnonzero((self.env_state == s) & (self.dra_state == q))
        if len(hit) == 0:
            raise KeyError((s, q))
        return int(hit[0])


def _letters(m: LabeledMdp, d: Dra) -> np.ndarray:
    missing = set(d.atoms) - set(m.atoms)
    if missing:
        raise AtomMismatch(f"automaton atoms not in the MDP: {sorted(missing)}")
    return m.label_bits(d.atoms)


def build_product(m: LabeledMdp, d: Dra) -> ProductMdp:
    t0 = time.perf_counter()
    letters = _letters(m, d)
    index: dict[tuple[int, int], int] = {}
    env, qs = [], []

    def intern(s, q):
        key = (s, q)
        if key not in index:
            index[key] = len(env)
            env.append(s)
            qs.append(q)
            queue.append(key)
        return index[key]

    queue: deque = deque()
    init = intern(m.initial, d.step(d.initial, int(letters[m.initial])))
    rows: list[tuple[int, int, list[tuple[int, float]]]] = []
    while queue:
        s, q = queue.popleft()
        src = index[(s, q)]
        for a in m.available(s):
            succ = [(intern(t, d.step(q, int(letters[t]))), p) for t, p in m.transitions[(s, a)]]
            rows.append((src, a, succ))
    rows.sort(key=lambda r: (r[0], r[1]))
    r_idx, c_idx, vals = [], [], []
    for c, (_, _, succ) in enumerate(rows):
        for t, p in succ:
            r_idx.append(c)
            c_idx.append(t)
            vals.append(p)
    n = len(env)
    P = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(len(rows), n))
    cm = ChoiceMdp(n, np.array([r[0] for r in rows], dtype=np.int64), P)
    cm.choice_action = np.array([r[1] for r in rows], dtype=np.int64)
    stats = {"states": n, "choices": len(rows), "build_seconds": time.perf_counter() - t0}
    return ProductMdp(m, d, np.array(env, dtype=np.int64), np.array(qs, dtype=np.int64), cm, init, stats)


@dataclass
class SatisfactionResult:
    product: ProductMdp
    values: np.ndarray
    restriction: np.ndarray
    amecs: list[EndComponent]
    sweeps: int

    @property
    def initial_probability(self) -> float:
        return float(self.values[self.product.initial])

    def allowed_actions(self, state: int) -> list[int]:
        cm = self.product.sparse
        return [int(cm.choice_action[c]) for c in cm.choices_of(state) if self.restriction[c]]


def max_satisfaction_probability(p: ProductMdp, amecs: list[EndComponent] | None = None,
                                 tol: float = 1e-9, max_sweeps: int = 1_000_000) -> SatisfactionResult:
    if amecs is None:
        amecs = accepting_mecs(p, maximal_end_components(p), p.pair_masks())
    good = np.zeros(p.n_states, dtype=bool)
    good_choices = np.zeros(p.sparse.n_choices, dtype=bool)
    for ec in amecs:
        good[ec.states] = True
        good_choices[ec.choices] = True
    r = max_reach_probability(p, good, tol, max_sweeps, good_choices)
    return SatisfactionResult(p, r.values, r.restriction, amecs, r.sweeps)


def satisfaction_probability(m: LabeledMdp, d: Dra, tol: float = 1e-9) -> SatisfactionResult:
    return max_satisfaction_probability(build_product(m, d), tol=tol)
