"""Online execution with retroactive reinterpretation of norm actions.

The interpreter tracks every automaton tuple consistent with the observed
environment history, together with the cheapest keep/susp history that
reaches it.  At each step the agent commits to the candidate minimizing
accumulated cost plus discounted remaining value.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .crdra import NormAction
from .planner import AmalgamatedPolicy, PlannerError


class ExecutionError(RuntimeError):
    pass


class ImpossibleObservation(ExecutionError):
    pass


@dataclass
class Candidate:
    cost: float
    prev: tuple | None
    nu: int


class HistoryInterpreter:
    """Candidate automaton tuples ``R_t`` and their minimal costs ``C_t``.

    ``candidates`` holds the tuples after reading the label of the current
    state and ``before`` those after the previous state.  Interpretations
    are chosen among ``candidates`` under committed timing and among
    ``before`` under observed timing, matching the product state layout.
    """

    def __init__(self, policy: AmalgamatedPolicy, s0: int):
        self.policy = policy
        self.product = policy.product
        self.mdp = self.product.mdp
        self.crdras = self.product.crdras
        self.gamma = policy.config.gamma
        self.observed = self.product.timing == "observed"
        if s0 != self.mdp.initial:
            raise ExecutionError(f"observed initial state {s0} differs from the planned {self.mdp.initial}")
        self.n = len(self.crdras)
        self.nu_weight = [sum(c.weight for i, c in enumerate(self.crdras) if nu >> i & 1)
                          for nu in range(1 << self.n)]
        self._letters = [self.mdp.label_bits(c.atoms) for c in self.crdras]
        self._ids: dict[tuple, int] = {}
        self.t = 0
        self.state = s0
        self.history: list[dict[tuple, Candidate]] = []
        q0 = tuple(c.initial for c in self.crdras)
        self.before = {q0: Candidate(0.0, None, 0)}
        self.candidates = self._relax(self.before, s0, 1.0)
        self.history.append(self.candidates)

    def advance(self, qs: tuple, nu: int, s: int | None = None) -> tuple:
        """Tuple reached from ``qs`` reading the label of ``s`` under norm actions ``nu``."""
        s = self.state if s is None else s
        return tuple(q if nu >> i & 1 else c.dra.step(q, int(self._letters[i][s]))
                     for i, (c, q) in enumerate(zip(self.crdras, qs)))

    def _relax(self, prev: dict[tuple, Candidate], s: int, disc: float) -> dict[tuple, Candidate]:
        out: dict[tuple, Candidate] = {}
        first = not self.history
        for qs, cand in prev.items():
            for nu in range(1 << self.n):
                nxt = self.advance(qs, nu, s)
                cost = cand.cost + disc * self.nu_weight[nu]
                best = out.get(nxt)
                if best is None or cost < best.cost:
                    out[nxt] = Candidate(cost, None if first else qs, nu)
        return out

    def product_id(self, qs: tuple, s: int | None = None) -> int:
        s = self.state if s is None else s
        key = (s,) + qs
        if key not in self._ids:
            self._ids[key] = self.product.state_id(s, qs)
        return self._ids[key]

    def step(self, action: int, s_next: int) -> None:
        probs = dict(self.mdp.transitions.get((self.state, action), ()))
        if probs.get(s_next, 0.0) <= 0.0:
            raise ImpossibleObservation(
                f"t={self.t}: {self.mdp.state_names[self.state]} --{self.mdp.actions[action]}--> "
                f"{self.mdp.state_names[s_next]} has probability zero")
        self.t += 1
        self.state = s_next
        self.before = self.candidates
        self.candidates = self._relax(self.candidates, s_next, self.gamma ** self.t)
        self.history.append(self.candidates)

    def select(self) -> tuple[tuple, int]:
        """The interpretation minimizing accumulated cost plus discounted Viol*.

        States without an accepting future are skipped.
        """
        exp = self.t if self.observed else self.t + 1
        if self.policy.config.reinterpret_exponent == "t":
            exp -= 1
        disc = self.gamma ** exp
        pool = self.before if self.observed else self.candidates
        best = None
        for qs, cand in pool.items():
            x = self.product_id(qs)
            if self.policy.no_update[x]:
                continue
            score = cand.cost + disc * float(self.policy.values[x])
            key = (score, x)
            if best is None or key < best[0]:
                best = (key, qs, x)
        if best is None:
            raise ExecutionError(f"t={self.t}: every interpretation has lost its accepting future")
        return best[1], best[2]

    def chain(self, qs: tuple, t: int | None = None) -> list[tuple[tuple, int, float]]:
        """``(tuple, nu, C)`` for steps ``0..t`` along the back-pointers ending at ``qs``."""
        t = self.t if t is None else t
        out = []
        for k in range(t, -1, -1):
            cand = self.history[k][qs]
            out.append((qs, cand.nu, cand.cost))
            if cand.prev is None:
                break
            qs = cand.prev
        out.reverse()
        return out


@dataclass
class TraceRow:
    t: int
    state: int
    labels: frozenset
    action: str | None
    norm_actions: tuple[str, ...]      # effective, from the final interpretation
    online_norm_actions: tuple[str, ...]
    step_weight: float
    accumulated: float
    automaton_states: tuple[int, ...]
    product_state: int
    planned: str | None = None


@dataclass
class ExecutionTrace:
    norms: list[str]
    weights: list[float]
    gamma: float
    rows: list[TraceRow] = field(default_factory=list)
    state_names: list[str] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return self.rows[-1].accumulated if self.rows else 0.0

    def suspensions(self) -> dict[str, int]:
        return {n: sum(r.norm_actions[i] == "susp" for r in self.rows) for i, n in enumerate(self.norms)}

    def revisions(self) -> int:
        return sum(r.norm_actions != r.online_norm_actions for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "state", "labels", "action"] + self.norms + ["step_weight", "accumulated"])
        for r in self.rows:
            w.writerow([r.t, self.state_names[r.state] if self.state_names else r.state,
                        " ".join(sorted(r.labels)), r.action or ""] + list(r.norm_actions)
                       + [repr(r.step_weight), repr(r.accumulated)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "norms": self.norms, "weights": self.weights, "gamma": self.gamma,
            "total_cost": self.total_cost, "revisions": self.revisions(),
            "steps": [{
                "t": r.t, "state": r.state,
                "state_name": self.state_names[r.state] if self.state_names else str(r.state),
                "labels": sorted(r.labels), "action": r.action, "planned": r.planned,
                "norm_actions": list(r.norm_actions), "online_norm_actions": list(r.online_norm_actions),
                "step_weight": r.step_weight, "accumulated": r.accumulated,
                "automaton_states": list(r.automaton_states), "product_state": r.product_state,
            } for r in self.rows],
        }


def _nu_names(nu: int, n: int) -> tuple[str, ...]:
    return tuple(str(NormAction.SUSP if nu >> i & 1 else NormAction.KEEP) for i in range(n))


def select_action(h: HistoryInterpreter, rng: np.random.Generator) -> tuple[int, int]:
    """Product choice and environment action for the current interpretation."""
    _, x = h.select()
    c = h.policy.select_choice(x, rng)
    a = int(h.product.choice_env_action[c])
    if a < 0:
        raise PlannerError(f"policy chose a non-environment action at product state {x}")
    return c, a


def run_episode(policy: AmalgamatedPolicy, horizon: int, seed: int | np.random.SeedSequence | None = None,
                rng: np.random.Generator | None = None) -> ExecutionTrace:
    """Act for ``horizon`` steps; norm actions come from the final interpretation."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    m = policy.product.mdp
    h = HistoryInterpreter(policy, m.initial)
    n = h.n
    states = [m.initial]
    actions: list[int] = []
    planned: list[str] = []
    online: list[tuple[str, ...]] = []
    for t in range(horizon):
        qs, x = h.select()
        c = policy.select_choice(x, rng)
        a = int(policy.product.choice_env_action[c])
        if a < 0:
            raise PlannerError(f"policy chose a non-environment action at product state {x}")
        nu_now = int(policy.product.choice_nu[c]) if h.observed else h.candidates[qs].nu
        online.append(_nu_names(nu_now, n))
        planned.append(policy.product.describe_choice(c))
        actions.append(a)
        if t == horizon - 1:
            break
        s_next = m.sample(h.state, a, rng)
        h.step(a, s_next)
        states.append(s_next)
    if h.observed:
        # the last interpretation ends one step back; the chosen norm action completes it
        chain = h.chain(qs, h.t - 1) if h.t > 0 else []
        last_cost = h.before[qs].cost + h.gamma ** h.t * h.nu_weight[nu_now]
        chain.append((h.advance(qs, nu_now), nu_now, last_cost))
        prior = [tuple(c.initial for c in h.crdras)] + [tup for tup, _, _ in chain[:-1]]
    else:
        chain = h.chain(qs)
        prior = [None] * len(chain)
    trace = ExecutionTrace([c.name for c in h.crdras], [c.weight for c in h.crdras], h.gamma,
                           state_names=list(m.state_names))
    for t, (tup, nu, cost) in enumerate(chain):
        x = h.product_id(prior[t] if h.observed else tup, states[t])
        trace.rows.append(TraceRow(
            t, states[t], m.labels[states[t]], m.actions[actions[t]], _nu_names(nu, n), online[t],
            h.nu_weight[nu], cost, tuple(int(q) for q in tup), x, planned[t]))
    return trace


def episode_seeds(seed: int, episodes: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(episodes)


def run_episodes(policy: AmalgamatedPolicy, horizon: int, episodes: int, seed: int,
                 threads: int = 1) -> list[ExecutionTrace]:
    """Independent episodes with per-episode seeds derived from ``seed``."""
    seeds = episode_seeds(seed, episodes)
    if threads <= 1:
        return [run_episode(policy, horizon, s) for s in seeds]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: run_episode(policy, horizon, s), seeds))
