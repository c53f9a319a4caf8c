"""Minimum-violation-cost planning over the conflict product.

The conflict product pairs the environment MDP with one CRDRA per norm and
adds a dummy initial state whose single step decides, per norm, whether to
read the first label.  Any automaton tuple containing a state from which
its norm can never be satisfied is merged into one absorbing ``trap``
state: no accepting component is reachable from there, so its value is
frozen at the maximum cost either way.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .crdra import (Crdra, CrdraTransitionSeq, Norm, NormAction, Transition, build_crdra,
                    violation_cost)
from .mdp import ChoiceMdp, LabeledMdp, MdpError
from .satisfaction import (AtomMismatch, EndComponent, PairMask, accepting_mecs, can_reach,
                           maximal_end_components)

# a state follows its accepting component's policy unless the global
# pass improved on the component value by more than this (relative) margin
AMEC_IMPROVE_TOL = 1e-6

DUMMY_ACTION = -1
TRAP_ACTION = -2
TIMINGS = ("committed", "observed")
_EPS = np.finfo(np.float64).eps


class PlannerError(RuntimeError):
    pass


class SizeGuardExceeded(PlannerError):
    pass


class NoAmecFound(PlannerError):
    pass


@dataclass
class PlannerConfig:
    gamma: float = 0.99
    tol: float = 1e-9
    epsilon: float = 0.01
    meta_refinement: bool = True
    max_sweeps: int = 1_000_000
    size_cap: int = 5_000_000
    # exponent on Viol* when choosing among history interpretations
    reinterpret_exponent: str = "t+1"
    # whether a norm action reads the successor's label or the current one
    norm_timing: str = "committed"

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.reinterpret_exponent not in ("t", "t+1"):
            raise ValueError("reinterpret_exponent must be 't' or 't+1'")
        if self.norm_timing not in TIMINGS:
            raise ValueError(f"norm_timing must be one of {TIMINGS}")

    def to_dict(self) -> dict:
        return asdict(self)


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(starts[i], starts[i] + counts[i])``."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.repeat(starts - np.cumsum(counts) + counts, counts)
    return offs + np.arange(total, dtype=np.int64)


@dataclass
class ConflictProduct:
    """Reachable conflict product with dense ids.

    State 0 is the initial state (the dummy state under committed
    timing); ``trap`` (if present) is the last id.  Choice ``c`` pairs environment action ``choice_env_action[c]``
    with the norm-action bitmask ``choice_nu[c]`` (bit ``i`` set means
    norm ``i`` is suspended).
    """

    mdp: LabeledMdp
    crdras: list[Crdra]
    alive: list[np.ndarray]          # per norm: automaton states kept in tuples
    codes: np.ndarray                # sorted codes of ordinary states
    trap: int | None
    sparse: ChoiceMdp
    choice_env_action: np.ndarray
    choice_nu: np.ndarray
    choice_weight: np.ndarray
    env_state: np.ndarray            # -1 for dummy and trap
    q: np.ndarray                    # (states, norms) automaton states, -1 for dummy and trap
    stats: dict = field(default_factory=dict)
    timing: str = "committed"
    id_of_rank: np.ndarray | None = None     # state id of the i-th sorted code

    initial = 0

    def __post_init__(self):
        if self.id_of_rank is None:
            self.id_of_rank = np.arange(len(self.codes), dtype=np.int64) + 1

    @property
    def dummy(self) -> int | None:
        return 0 if self.timing == "committed" else None

    @property
    def n_states(self) -> int:
        return self.sparse.n_states

    @property
    def n_norms(self) -> int:
        return len(self.crdras)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.crdras])

    @property
    def max_cost(self) -> float:
        return float(self.weights.sum())

    @property
    def tuple_space(self) -> int:
        return int(np.prod([len(a) for a in self.alive]))

    def _strides(self) -> np.ndarray:
        sizes = [len(a) for a in self.alive]
        strides = np.ones(len(sizes), dtype=np.int64)
        for i in range(len(sizes) - 2, -1, -1):
            strides[i] = strides[i + 1] * sizes[i + 1]
        return strides

    def state_id(self, s: int, qs) -> int:
        """Product id of environment state ``s`` with automaton tuple ``qs``."""
        code = s * self.tuple_space
        for i, (qi, st) in enumerate(zip(qs, self._strides())):
            pos = np.searchsorted(self.alive[i], qi)
            if pos >= len(self.alive[i]) or self.alive[i][pos] != qi:
                if self.trap is None:
                    raise KeyError((s, tuple(qs)))
                return self.trap
            code += pos * st
        pos = np.searchsorted(self.codes, code)
        if pos >= len(self.codes) or self.codes[pos] != code:
            raise KeyError((s, tuple(qs)))
        return int(self.id_of_rank[pos])

    def pair_masks(self) -> list[PairMask]:
        """One condition per combination of Rabin pairs across norms."""
        per_norm = []
        for i, c in enumerate(self.crdras):
            col = self.q[:, i]
            per_norm.append([(np.isin(col, sorted(f)), np.isin(col, sorted(inf))) for f, inf in c.pairs])
        out = []
        for combo in itertools.product(*per_norm):
            fin = np.zeros(self.n_states, dtype=bool)
            for f, _ in combo:
                fin |= f
            out.append((fin, tuple(i for _, i in combo)))
        return out

    def ordinary_mask(self) -> np.ndarray:
        m = np.ones(self.n_states, dtype=bool)
        if self.dummy is not None:
            m[self.dummy] = False
        if self.trap is not None:
            m[self.trap] = False
        return m

    def describe_choice(self, c: int) -> str:
        a = int(self.choice_env_action[c])
        name = {DUMMY_ACTION: "start", TRAP_ACTION: "trap"}.get(a) or self.mdp.actions[a]
        nu = int(self.choice_nu[c])
        acts = ",".join("susp" if nu >> i & 1 else "keep" for i in range(self.n_norms))
        return f"{name}[{acts}]"


def _letter_table(m: LabeledMdp, c: Crdra) -> np.ndarray:
    missing = set(c.atoms) - set(m.atoms)
    if missing:
        raise AtomMismatch(f"norm {c.name} uses atoms not in the MDP: {sorted(missing)}")
    return m.label_bits(c.atoms)


def build_conflict_product(m: LabeledMdp, crdras: list[Crdra], size_cap: int = 5_000_000,
                           timing: str = "committed") -> ConflictProduct:
    """Reachable conflict product.

    With ``timing="committed"`` a norm action chosen together with an
    environment action applies to the label of the successor state, and a
    dummy initial state decides about the first label.  With
    ``timing="observed"`` it applies to the label of the current state,
    which is already known; product states then pair an environment state
    with the automaton tuple before reading its label.
    """
    if not crdras:
        raise PlannerError("at least one norm is required")
    if timing not in TIMINGS:
        raise PlannerError(f"unknown norm timing {timing!r}")
    observed = timing == "observed"
    t0 = time.perf_counter()
    n = len(crdras)
    env = m.sparse
    letters = [_letter_table(m, c) for c in crdras]
    alive, keep_next, pos_of = [], [], []
    for c in crdras:
        bad = c.dra.hopeless_states()
        live = np.array(sorted(set(range(c.n_states)) - bad), dtype=np.int64)
        alive.append(live)
        pos = np.full(c.n_states, -1, dtype=np.int64)
        pos[live] = np.arange(len(live))
        pos_of.append(pos)
        tab = c.dra.table()
        keep_next.append(pos[tab[live]] if len(live) else np.zeros((0, tab.shape[1]), dtype=np.int64))
    sizes = np.array([len(a) for a in alive], dtype=np.int64)
    K = int(np.prod(sizes))
    strides = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        strides[i] = strides[i + 1] * sizes[i + 1]
    n_nu = 1 << n
    TRAP_CODE = -1

    def next_codes(k_src, s_read, s_dst, nu):
        """Codes ``(s_dst, tuple)`` after tuples ``k_src`` read the label of ``s_read``."""
        nk = np.zeros(len(k_src), dtype=np.int64)
        dead = np.zeros(len(k_src), dtype=bool)
        for i in range(n):
            qi = (k_src // strides[i]) % sizes[i]
            if nu >> i & 1:
                ni = qi
            else:
                ni = keep_next[i][qi, letters[i][s_read]]
            dead |= ni < 0
            nk += np.where(ni < 0, 0, ni) * strides[i]
        return np.where(dead, TRAP_CODE, s_dst * K + nk)

    def expand(codes):
        """Rows ``(state index, env choice, nu)`` and their successor entries."""
        s = codes // K
        k = codes % K
        ptr = env.state_ptr
        cnt = ptr[s + 1] - ptr[s]
        ch = _ranges(ptr[s], cnt)
        owner = np.repeat(np.arange(len(codes)), cnt)
        ip = env.P.indptr
        rc = ip[ch + 1] - ip[ch]
        ent = _ranges(ip[ch], rc)
        ent_row = np.repeat(np.arange(len(ch)), rc)
        s_dst = env.P.indices[ent]
        prob = env.P.data[ent]
        k_src = k[owner[ent_row]]
        s_read = s[owner[ent_row]] if observed else s_dst
        targets = [next_codes(k_src, s_read, s_dst, nu) for nu in range(n_nu)]
        return owner, ch, ent_row, prob, targets

    s0 = m.initial
    if len(m.available(s0)) == 0:
        raise MdpError("initial state has no actions")
    init_tuple = np.zeros(1, dtype=np.int64)
    init_dead = False
    for i, c in enumerate(crdras):
        p = pos_of[i][c.initial]
        if p < 0:
            init_dead = True
        else:
            init_tuple += p * strides[i]
    if observed:
        roots = [TRAP_CODE if init_dead else int(s0 * K + init_tuple[0])]
    else:
        roots = []
        for nu in range(n_nu):
            if init_dead:
                roots.append(TRAP_CODE)
            else:
                roots.append(int(next_codes(init_tuple, np.array([s0]), np.array([s0]), nu)[0]))

    # breadth-first exploration over codes
    seen = np.unique([t for t in roots if t != TRAP_CODE]).astype(np.int64)
    frontier = seen
    trap_hit = TRAP_CODE in roots
    while len(frontier):
        _, _, _, _, targets = expand(frontier)
        allt = np.concatenate(targets) if targets else np.zeros(0, dtype=np.int64)
        trap_hit |= bool((allt == TRAP_CODE).any())
        allt = np.unique(allt[allt != TRAP_CODE])
        new = allt[~np.isin(allt, seen, assume_unique=True)]
        if len(seen) + len(new) + 2 > size_cap:
            raise SizeGuardExceeded(f"conflict product exceeds {size_cap} states")
        seen = np.union1d(seen, new)
        frontier = new
    codes = seen
    n_ord = len(codes)
    # ids: the initial state is 0, then ordinary states in code order, then the trap
    if observed:
        ranks = np.arange(n_ord, dtype=np.int64)
        if init_dead:
            id_of_rank = ranks
        else:
            r0 = int(np.searchsorted(codes, roots[0]))
            id_of_rank = np.where(ranks < r0, ranks + 1, np.where(ranks == r0, 0, ranks))
        first_free = n_ord
    else:
        id_of_rank = np.arange(n_ord, dtype=np.int64) + 1
        first_free = n_ord + 1
    trap = first_free if trap_hit else None
    n_states = first_free + (1 if trap_hit else 0)

    def to_id(t):
        ids = id_of_rank[np.searchsorted(codes, np.where(t == TRAP_CODE, codes[0] if n_ord else 0, t))] \
            if n_ord else np.zeros(len(t), dtype=np.int64)
        return np.where(t == TRAP_CODE, trap if trap is not None else -1, ids)

    weights = np.array([c.weight for c in crdras], dtype=np.float64)
    nu_weight = np.array([sum(float(weights[i]) for i in range(n) if nu >> i & 1) for nu in range(n_nu)],
                         dtype=np.float64)

    # choice rows, grouped by source state id
    row_parts, col_parts, val_parts = [], [], []
    cstate, cact, cnu = [], [], []
    base = 0
    if not observed:
        for nu in range(n_nu):
            row_parts.append(np.array([nu]))
            col_parts.append(to_id(np.array([roots[nu]])))
            val_parts.append(np.array([1.0]))
        cstate.append(np.zeros(n_nu, dtype=np.int64))
        cact.append(np.full(n_nu, DUMMY_ACTION, dtype=np.int64))
        cnu.append(np.arange(n_nu, dtype=np.int64))
        base = n_nu
    order = np.argsort(id_of_rank, kind="stable")
    owner, ch, ent_row, prob, targets = expand(codes[order])
    n_env_rows = len(ch)
    for nu in range(n_nu):
        row_parts.append(base + ent_row * n_nu + nu)
        col_parts.append(to_id(targets[nu]))
        val_parts.append(prob)
    cstate.append(np.repeat(id_of_rank[order][owner], n_nu))
    cact.append(np.repeat(env.choice_action[ch], n_nu))
    cnu.append(np.tile(np.arange(n_nu, dtype=np.int64), n_env_rows))
    base += n_env_rows * n_nu
    if trap is not None:
        row_parts.append(np.array([base]))
        col_parts.append(np.array([trap]))
        val_parts.append(np.array([1.0]))
        cstate.append(np.array([trap]))
        cact.append(np.array([TRAP_ACTION]))
        cnu.append(np.array([n_nu - 1]))
        base += 1
    rows = np.concatenate(row_parts)
    cols = np.concatenate(col_parts)
    vals = np.concatenate(val_parts)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(base, n_states))
    cm = ChoiceMdp(n_states, np.concatenate(cstate), P)
    choice_nu = np.concatenate(cnu)
    cm.choice_action = np.concatenate(cact)

    env_state = np.full(n_states, -1, dtype=np.int64)
    env_state[id_of_rank] = codes // K
    q = np.full((n_states, n), -1, dtype=np.int64)
    k = codes % K
    for i in range(n):
        q[id_of_rank, i] = alive[i][(k // strides[i]) % sizes[i]]
    stats = {"states": int(n_states), "choices": int(base), "tuple_space": K,
             "env_states": int(m.n_states), "timing": timing,
             "actions": (len(m.actions) + (0 if observed else 1)) * n_nu,
             "build_seconds": time.perf_counter() - t0}
    return ConflictProduct(m, list(crdras), alive, codes, trap, cm, cm.choice_action, choice_nu,
                           nu_weight[choice_nu], env_state, q, stats, timing=timing, id_of_rank=id_of_rank)


# ---------------------------------------------------------------------------
# Value iteration

@dataclass
class ViResult:
    values: np.ndarray
    sweeps: int
    residual: float


def _segments(choice_state: np.ndarray):
    starts = np.flatnonzero(np.r_[True, choice_state[1:] != choice_state[:-1]]) if len(choice_state) else \
        np.zeros(0, dtype=np.int64)
    return starts, choice_state[starts]


def min_cost_vi(mdp: ChoiceMdp, weights: np.ndarray, gamma: float, v0: np.ndarray,
                choice_mask: np.ndarray, tol: float, max_sweeps: int) -> ViResult:
    """Jacobi iteration of ``V(x) = min_c W_c + gamma * sum P V`` over masked choices.

    States without a masked choice keep their ``v0`` value.  The stopping
    residual is ``tol``, raised to a few ulps of the largest value so the
    iteration cannot stall on rounding noise.
    """
    ids = np.flatnonzero(choice_mask)
    P = mdp.P[ids]
    w = weights[ids]
    starts, owners = _segments(mdp.choice_state[ids])
    v = v0.astype(np.float64).copy()
    sweeps = 0
    residual = 0.0
    if len(ids) == 0:
        return ViResult(v, 0, 0.0)
    while sweeps < max_sweeps:
        qv = w + gamma * (P @ v)
        best = np.minimum.reduceat(qv, starts)
        residual = float(np.max(np.abs(best - v[owners])))
        v[owners] = best
        sweeps += 1
        if residual < max(tol, 8 * _EPS * float(np.max(np.abs(best)))):
            break
    return ViResult(v, sweeps, residual)


def q_values(mdp: ChoiceMdp, weights: np.ndarray, gamma: float, v: np.ndarray) -> np.ndarray:
    return weights + gamma * (mdp.P @ v)


def argmin_mask(mdp: ChoiceMdp, qv: np.ndarray, choice_mask: np.ndarray, tol: float) -> np.ndarray:
    """Choices within tolerance of their state's best masked Q-value."""
    best = np.full(mdp.n_states, np.inf)
    np.minimum.at(best, mdp.choice_state[choice_mask], qv[choice_mask])
    b = best[mdp.choice_state]
    return choice_mask & (qv <= b + tol + 1e-12 * np.abs(b))


def evaluate_env_policy(product: ConflictProduct, allowed, gamma: float, tol: float = 1e-12,
                        max_sweeps: int = 1_000_000) -> np.ndarray:
    """Discounted violation cost when environment actions are restricted.

    ``allowed(s)`` returns the action names permitted in environment state
    ``s``; norm actions are still chosen to minimize cost.  Dummy and trap
    choices are always permitted.
    """
    cm = product.sparse
    acts = product.mdp.actions
    env = product.env_state
    mask = product.choice_env_action < 0
    cache: dict[int, set[str]] = {}
    for c in np.flatnonzero(~mask):
        s = int(env[cm.choice_state[c]])
        if s not in cache:
            cache[s] = set(allowed(s))
        mask[c] = acts[product.choice_env_action[c]] in cache[s]
    has = np.zeros(product.n_states, dtype=bool)
    has[cm.choice_state[mask]] = True
    if not has.all():
        x = int(np.flatnonzero(~has)[0])
        raise PlannerError(f"no permitted action in environment state "
                           f"{product.mdp.state_names[env[x]]}")
    return min_cost_vi(cm, product.choice_weight, gamma, np.zeros(product.n_states), mask,
                       tol, max_sweeps).values


def price_action(m: LabeledMdp, crdras: list[Crdra], s: int, action: str, gamma: float,
                 qs=None) -> float:
    """Expected one-step violation cost of ``action`` in ``s``.

    Each norm reads the successor's label from automaton state ``qs[i]``
    (initial by default) and is suspended exactly when keeping it would
    leave no way to satisfy it.
    """
    qs = qs if qs is not None else [c.initial for c in crdras]
    dead = [c.dra.hopeless_states() for c in crdras]
    total = 0.0
    for t, p in m.successors(s, m.action_id(action)):
        for c, q, bad in zip(crdras, qs, dead):
            label = m.labels[t]
            act = NormAction.SUSP if c.dra.step_valuation(q, label) in bad else NormAction.KEEP
            seq = CrdraTransitionSeq(c, [Transition(q, frozenset(label), act)])
            total += p * violation_cost(seq, gamma)
    return total


# ---------------------------------------------------------------------------
# Policy

@dataclass
class AmalgamatedPolicy:
    """Everything the executor needs to act on the conflict product."""

    product: ConflictProduct
    config: PlannerConfig
    values: np.ndarray            # Viol*
    restriction: np.ndarray       # A*, mask over choices
    no_update: np.ndarray         # state mask
    amec_id: np.ndarray           # per state, -1 outside accepting components
    amec_value: np.ndarray        # per-state AMEC value (inf outside)
    amec_choices: np.ndarray      # A_E of the assigned component
    amec_opt: np.ndarray          # A*_E of the assigned component
    meta_choices: np.ndarray      # restriction of the meta component, if any
    in_meta: np.ndarray           # state mask
    amecs: list[EndComponent]
    stats: dict = field(default_factory=dict)

    @property
    def follows_amec(self) -> np.ndarray:
        """States acting by the component policy rather than by A*."""
        margin = AMEC_IMPROVE_TOL * np.maximum(1.0, np.abs(self.values))
        return (self.amec_id >= 0) & (self.values >= self.amec_value - margin)

    @property
    def initial_value(self) -> float:
        return float(self.values[self.product.initial])

    def __post_init__(self):
        self._follows = self.follows_amec

    def choices_at(self, x: int, mask: np.ndarray) -> np.ndarray:
        r = self.product.sparse.choices_of(x)
        ids = np.arange(r.start, r.stop)
        return ids[mask[ids]]

    def select_choice(self, x: int, rng: np.random.Generator) -> int:
        """Draw a product choice at state ``x`` from the amalgamated policy."""
        if self._follows[x]:
            if self.in_meta[x]:
                opts = self.choices_at(x, self.meta_choices)
            elif rng.random() < 1 - self.config.epsilon:
                opts = self.choices_at(x, self.amec_opt)
            else:
                opts = self.choices_at(x, self.amec_choices)
        else:
            opts = self.choices_at(x, self.restriction)
        if len(opts) == 0:
            raise PlannerError(f"empty action restriction at product state {x}")
        return int(opts[rng.integers(len(opts))]) if len(opts) > 1 else int(opts[0])

    def allowed_choices(self, x: int) -> np.ndarray:
        """Choices with positive probability under the amalgamated policy."""
        if self._follows[x]:
            mask = self.meta_choices if self.in_meta[x] else self.amec_choices
            return self.choices_at(x, mask)
        return self.choices_at(x, self.restriction)


def _amec_stage(product: ConflictProduct, cfg: PlannerConfig, stats: dict):
    cm = product.sparse
    n = product.n_states
    ordinary = product.ordinary_mask()
    t0 = time.perf_counter()
    mecs = maximal_end_components(cm, ordinary)
    stats["mecs"] = len(mecs)
    stats["mec_seconds"] = time.perf_counter() - t0
    pairs = product.pair_masks()
    weights = product.choice_weight
    amecs: list[EndComponent] = []
    amec_pair: list[int] = []
    amec_value = np.full(n, np.inf)
    amec_id = np.full(n, -1, dtype=np.int64)
    sweeps = 0
    t0 = time.perf_counter()
    values_by_pair = []
    for j, pair in enumerate(pairs):
        found = accepting_mecs(cm, mecs, [pair])
        if not found:
            values_by_pair.append(None)
            continue
        cmask = np.zeros(cm.n_choices, dtype=bool)
        for ec in found:
            cmask[ec.choices] = True
        r = min_cost_vi(cm, weights, cfg.gamma, np.zeros(n), cmask, cfg.tol, cfg.max_sweeps)
        sweeps += r.sweeps
        values_by_pair.append((found, cmask, r.values))
        for ec in found:
            idx = len(amecs)
            amecs.append(ec)
            amec_pair.append(j)
            better = r.values[ec.states] < amec_value[ec.states]
            amec_value[ec.states[better]] = r.values[ec.states[better]]
            amec_id[ec.states[better]] = idx
    stats["amecs"] = len(amecs)
    stats["amec_sweeps"] = sweeps
    stats["amec_seconds"] = time.perf_counter() - t0
    if not amecs:
        raise NoAmecFound("the conflict product has no accepting end component")

    # per-state restrictions from the component each state was assigned to
    t0 = time.perf_counter()
    amec_choices = np.zeros(cm.n_choices, dtype=bool)
    amec_opt = np.zeros(cm.n_choices, dtype=bool)
    meta_choices = np.zeros(cm.n_choices, dtype=bool)
    in_meta = np.zeros(n, dtype=bool)
    meta_count = 0
    for idx, ec in enumerate(amecs):
        j = amec_pair[idx]
        _, _, vals = values_by_pair[j]
        own = ec.choice_mask(cm.n_choices)
        qv = q_values(cm, weights, cfg.gamma, vals)
        opt = argmin_mask(cm, qv, own, cfg.tol)
        assigned = amec_id[cm.choice_state] == idx
        amec_choices |= own & assigned
        amec_opt |= opt & assigned
        if cfg.meta_refinement:
            sub_states = ec.state_mask(n)
            metas = accepting_mecs(cm, maximal_end_components(cm, sub_states, opt), [pairs[j]])
            for meta in metas:
                meta_count += 1
                mm = meta.state_mask(n) & (amec_id == idx)
                in_meta |= mm
                meta_choices |= meta.choice_mask(cm.n_choices) & mm[cm.choice_state]
    stats["meta_amecs"] = meta_count
    stats["meta_seconds"] = time.perf_counter() - t0
    return amecs, amec_id, amec_value, amec_choices, amec_opt, meta_choices, in_meta


def plan_product(product: ConflictProduct, cfg: PlannerConfig | None = None) -> AmalgamatedPolicy:
    cfg = cfg or PlannerConfig()
    stats = dict(product.stats)
    cm = product.sparse
    n = product.n_states
    (amecs, amec_id, amec_value, amec_choices, amec_opt,
     meta_choices, in_meta) = _amec_stage(product, cfg, stats)

    t0 = time.perf_counter()
    good = amec_id >= 0
    no_update = ~can_reach(cm, good)
    max_cost = product.max_cost / (1 - cfg.gamma)
    v0 = np.where(good, amec_value, max_cost)
    update = ~no_update
    r = min_cost_vi(cm, product.choice_weight, cfg.gamma, v0, update[cm.choice_state],
                    cfg.tol, cfg.max_sweeps)
    qv = q_values(cm, product.choice_weight, cfg.gamma, r.values)
    # A* minimizes over choices that cannot fall into states without an
    # accepting future, wherever such a choice exists
    risky = (cm.P @ no_update.astype(np.float64)) > 0
    movable = update[cm.choice_state]
    safe = movable & ~risky
    has_safe = np.zeros(n, dtype=bool)
    has_safe[cm.choice_state[safe]] = True
    restriction = np.where(has_safe[cm.choice_state], argmin_mask(cm, qv, safe, cfg.tol),
                           argmin_mask(cm, qv, movable, cfg.tol))
    stats.update(global_sweeps=r.sweeps, global_residual=r.residual,
                 global_seconds=time.perf_counter() - t0, no_update=int(no_update.sum()),
                 tol=cfg.tol, max_sweeps=cfg.max_sweeps)
    return AmalgamatedPolicy(product, cfg, r.values, restriction, no_update, amec_id, amec_value,
                             amec_choices, amec_opt, meta_choices, in_meta, amecs, stats)


def plan(m: LabeledMdp, norms: list[Norm], cfg: PlannerConfig | None = None,
         automata: dict | None = None) -> AmalgamatedPolicy:
    """Compile norms, build the conflict product and compute the policy."""
    cfg = cfg or PlannerConfig()
    if not norms:
        raise PlannerError("at least one norm is required")
    t0 = time.perf_counter()
    automata = automata or {}
    crdras = [build_crdra(nm, automata.get(nm.name)) for nm in norms]
    t1 = time.perf_counter()
    product = build_conflict_product(m, crdras, cfg.size_cap, cfg.norm_timing)
    policy = plan_product(product, cfg)
    policy.stats["compile_seconds"] = t1 - t0
    policy.stats["automaton_states"] = [c.n_states for c in crdras]
    policy.stats["wall_seconds"] = time.perf_counter() - t0
    return policy
