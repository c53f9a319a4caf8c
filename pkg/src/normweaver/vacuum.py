"""The two-room vacuum-cleaning domain and its four scenarios.

Rooms are numbered 0 (west) and 1 (east).  The robot starts in room 0,
which also holds the docking station; the human starts in room 1.
"""
from __future__ import annotations

import dataclasses
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, NamedTuple

from .crdra import Norm, parse_norms
from .mdp import LabeledMdp, MdpBuilder
from .planner import PlannerConfig

ATOMS = ("roomsClean", "robotDamaged", "human_h1", "injured_h1", "talking_h1", "talk_r")
HUMANS = ("h1",)

NORM_TEXT = {
    "N1": "1 :: G roomsClean",
    "N2": "200 :: G !robotDamaged",
    "N3": "40000 :: forall x:human . G (human(x) -> !injured(x))",
    "N4": "5 :: forall h:human . G (human(h) -> (!talk(r) U !talking(h)))",
}


class VacuumError(ValueError):
    pass


@dataclass(frozen=True)
class SpecialMess:
    name: str
    room: int
    dirtiness: int
    damaging: bool = False
    harmful: bool = False
    evaporates: bool = False


@dataclass
class VacuumConfig:
    battery_capacity: int = 10
    health_capacity: int = 10
    initial_battery: int | None = None
    human_switch_prob: float = 0.125
    human_mess_prob: float = 0.2
    mess_increment: int = 2
    dirt_cap: int = 4
    messes: tuple[SpecialMess, ...] = ()
    damage: int = 2
    vacuum_battery_cost: int = 2
    move_battery_cost: int = 1
    wait_battery_cost: int = 1
    dock_recharge: int = 3
    talking_persistence: float = 0.8
    talking_restart_prob: float = 0.0
    initially_talking: bool = False
    human_moves_while_talking: bool = True
    warn_available: bool = False
    docker_room: int = 0
    robot_start_room: int = 0
    human_start_room: int = 1

    def __post_init__(self):
        self.messes = tuple(m if isinstance(m, SpecialMess) else SpecialMess(**m) for m in self.messes)
        for name in ("human_switch_prob", "human_mess_prob", "talking_persistence", "talking_restart_prob"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise VacuumError(f"{name} must lie in [0, 1], got {p}")
        if self.battery_capacity < 1 or self.health_capacity < 1:
            raise VacuumError("capacities must be at least 1")
        if self.dirt_cap < self.mess_increment:
            raise VacuumError("dirt cap must be at least the mess increment")
        for r in (self.docker_room, self.robot_start_room, self.human_start_room):
            if r not in (0, 1):
                raise VacuumError(f"room {r} does not exist")
        names = [m.name for m in self.messes]
        if len(set(names)) != len(names):
            raise VacuumError("special mess names must be unique")
        for m in self.messes:
            if m.room not in (0, 1) or m.dirtiness < 0:
                raise VacuumError(f"bad special mess {m}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class VacuumState(NamedTuple):
    robot_room: int
    docked: bool
    battery: int
    health: int
    human_room: int
    dirt: tuple[int, int]
    mess: tuple[int, ...]          # remaining dirtiness per special mess
    warned: tuple[bool, ...]
    talking: bool
    just_damaged: bool = False
    just_injured: bool = False
    just_talked: bool = False

    @property
    def dead(self) -> bool:
        return self.battery == 0 or self.health == 0

    def short(self) -> str:
        flags = "".join(c for c, on in (("D", self.just_damaged), ("I", self.just_injured),
                                        ("T", self.just_talked)) if on)
        return (f"r{self.robot_room}{'d' if self.docked else ''} b{self.battery} h{self.health} "
                f"H{self.human_room}{'t' if self.talking else ''} dirt{list(self.dirt)} "
                f"m{list(self.mess)} w{[int(w) for w in self.warned]}{' ' + flags if flags else ''}")


def initial_state(cfg: VacuumConfig) -> VacuumState:
    battery = cfg.battery_capacity if cfg.initial_battery is None else cfg.initial_battery
    return VacuumState(cfg.robot_start_room, False, battery, cfg.health_capacity, cfg.human_start_room,
                       (0, 0), tuple(m.dirtiness for m in cfg.messes), tuple(False for _ in cfg.messes),
                       cfg.initially_talking)


def action_names(cfg: VacuumConfig) -> list[str]:
    names = ["vacuum"] + [f"vacuum_{m.name}" for m in cfg.messes]
    names += ["east", "west", "dock", "undock", "wait"]
    if cfg.warn_available:
        names += [f"warn_h1_{m.name}" for m in cfg.messes if m.harmful]
    names.append("beDead")
    return names


def available_actions(s: VacuumState, cfg: VacuumConfig) -> list[str]:
    if s.dead:
        return ["beDead"]
    if s.docked:
        return ["undock", "wait"]
    out = []
    if s.dirt[s.robot_room] > 0:
        out.append("vacuum")
    for i, m in enumerate(cfg.messes):
        if m.room == s.robot_room and s.mess[i] > 0:
            out.append(f"vacuum_{m.name}")
    out.append("east" if s.robot_room == 0 else "west")
    if s.robot_room == cfg.docker_room:
        out.append("dock")
    out.append("wait")
    if cfg.warn_available and s.human_room == s.robot_room:
        for i, m in enumerate(cfg.messes):
            if m.harmful and not s.warned[i] and s.mess[i] > 0:
                out.append(f"warn_h1_{m.name}")
    return out


def _robot_effects(s: VacuumState, a: str, cfg: VacuumConfig) -> tuple[dict, set[int]]:
    """Deterministic robot part; returns changed fields and vacuumed mess ids."""
    battery, health = s.battery, s.health
    dirt = list(s.dirt)
    mess = list(s.mess)
    warned = list(s.warned)
    room, docked = s.robot_room, s.docked
    damaged = talked = False
    vacuumed: set[int] = set()
    if a == "beDead":
        pass
    elif a == "vacuum":
        dirt[room] -= 1
        battery -= cfg.vacuum_battery_cost
    elif a.startswith("vacuum_"):
        i = [m.name for m in cfg.messes].index(a[len("vacuum_"):])
        mess[i] -= 1
        vacuumed.add(i)
        battery -= cfg.vacuum_battery_cost
        if cfg.messes[i].damaging:
            health -= cfg.damage
            damaged = True
    elif a in ("east", "west"):
        room = 1 if a == "east" else 0
        battery -= cfg.move_battery_cost
    elif a == "dock":
        docked = True
    elif a == "undock":
        docked = False
    elif a == "wait":
        if docked:
            battery += cfg.dock_recharge
        else:
            battery -= cfg.wait_battery_cost
    elif a.startswith("warn_h1_"):
        i = [m.name for m in cfg.messes].index(a[len("warn_h1_"):])
        warned[i] = True
        talked = True
    else:
        raise VacuumError(f"unknown action {a!r}")
    battery = min(max(battery, 0), cfg.battery_capacity)
    health = max(health, 0)
    return dict(robot_room=room, docked=docked, battery=battery, health=health, dirt=dirt,
                mess=mess, warned=warned, just_damaged=damaged, just_talked=talked), vacuumed


def transition(s: VacuumState, a: str, cfg: VacuumConfig) -> dict[VacuumState, float]:
    """Distribution over successor states of action ``a`` in ``s``."""
    if a not in available_actions(s, cfg):
        raise VacuumError(f"action {a!r} unavailable in {s.short()}")
    fx, vacuumed = _robot_effects(s, a, cfg)
    mess = fx["mess"]
    for i, m in enumerate(cfg.messes):
        if m.evaporates and i not in vacuumed and mess[i] > 0:
            mess[i] -= 1
    can_move = not (s.talking and not cfg.human_moves_while_talking)
    p_move = cfg.human_switch_prob if can_move else 0.0
    if s.talking:
        p_talk = cfg.talking_persistence
    else:
        p_talk = cfg.talking_restart_prob
    out: dict[VacuumState, float] = {}
    for moved, pm in ((True, p_move), (False, 1 - p_move)):
        if pm == 0:
            continue
        human = 1 - s.human_room if moved else s.human_room
        for made, pc in ((True, cfg.human_mess_prob), (False, 1 - cfg.human_mess_prob)):
            if pc == 0:
                continue
            dirt = list(fx["dirt"])
            if made:
                dirt[human] = min(cfg.dirt_cap, dirt[human] + cfg.mess_increment)
            injured = moved and any(m.harmful and mess[i] > 0 and not fx["warned"][i] and m.room == human
                                    for i, m in enumerate(cfg.messes))
            for talking, pt in ((True, p_talk), (False, 1 - p_talk)):
                if pt == 0:
                    continue
                t = VacuumState(fx["robot_room"], fx["docked"], fx["battery"], fx["health"], human,
                                tuple(dirt), tuple(mess), tuple(fx["warned"]), talking,
                                fx["just_damaged"], injured, fx["just_talked"])
                out[t] = out.get(t, 0.0) + pm * pc * pt
    return out


def labeling(s: VacuumState) -> frozenset:
    out = {"human_h1"}
    if not any(s.dirt) and not any(s.mess):
        out.add("roomsClean")
    if s.just_damaged:
        out.add("robotDamaged")
    if s.just_injured:
        out.add("injured_h1")
    if s.talking:
        out.add("talking_h1")
    if s.just_talked:
        out.add("talk_r")
    return frozenset(out)


def build_mdp(cfg: VacuumConfig, max_states: int = 100_000) -> LabeledMdp:
    """Reachable labeled MDP; ``state_data`` holds the :class:`VacuumState` objects."""
    b = MdpBuilder(ATOMS)
    for a in action_names(cfg):
        b.action(a)
    s0 = initial_state(cfg)
    index = {s0: b.state("0", labeling(s0))}
    data = [s0]
    queue = deque([s0])
    while queue:
        s = queue.popleft()
        src = str(index[s])
        for a in available_actions(s, cfg):
            for t, p in transition(s, a, cfg).items():
                if t not in index:
                    if len(index) >= max_states:
                        raise VacuumError(f"more than {max_states} reachable states")
                    index[t] = b.state(str(len(index)), labeling(t))
                    data.append(t)
                    queue.append(t)
                b.add(src, a, str(index[t]), p)
    m = b.build("0")
    m.state_names = [d.short() for d in data]
    m.state_data = data
    return m


# ---------------------------------------------------------------------------
# Scenarios

PUDDLE = SpecialMess("puddle", 0, 3, damaging=True, harmful=False, evaporates=True)
GLASS = SpecialMess("glass", 0, 1, damaging=True, harmful=True, evaporates=False)

SCENARIOS: dict[int, tuple[dict, tuple[str, ...]]] = {
    1: ({}, ("N1",)),
    2: ({"messes": (PUDDLE,)}, ("N1", "N2")),
    3: ({"messes": (GLASS,)}, ("N1", "N2", "N3")),
    4: ({"messes": (GLASS,), "warn_available": True, "battery_capacity": 5, "human_mess_prob": 0.0,
         "initially_talking": True, "human_moves_while_talking": False}, ("N1", "N2", "N3", "N4")),
}


class Scenario(NamedTuple):
    mdp: LabeledMdp
    norms: list[Norm]
    planner: PlannerConfig
    config: VacuumConfig


def scenario_config(sid: int, overrides: dict[str, Any] | None = None) -> VacuumConfig:
    if sid not in SCENARIOS:
        raise VacuumError(f"unknown scenario {sid!r}; choose 1, 2, 3 or 4")
    base, _ = SCENARIOS[sid]
    fields = {f.name for f in dataclasses.fields(VacuumConfig)}
    merged = dict(base)
    for k, v in (overrides or {}).items():
        if k not in fields:
            raise VacuumError(f"unknown vacuum setting {k!r}")
        merged[k] = v
    return VacuumConfig(**merged)


def scenario_norms(sid: int) -> list[Norm]:
    _, names = SCENARIOS[sid]
    norms = parse_norms("\n".join(NORM_TEXT[n] for n in names), {"human": list(HUMANS)})
    for norm, name in zip(norms, names):
        norm.name = name
    return norms


def build_scenario(sid: int, overrides: dict[str, Any] | None = None,
                   planner: PlannerConfig | None = None) -> Scenario:
    cfg = scenario_config(sid, overrides)
    return Scenario(build_mdp(cfg), scenario_norms(sid), planner or PlannerConfig(gamma=0.99, norm_timing="observed"), cfg)


def parse_override(item: str) -> tuple[str, Any]:
    """``KEY=VAL`` with ``VAL`` read as JSON when possible."""
    key, sep, val = item.partition("=")
    if not sep or not key.strip():
        raise VacuumError(f"expected KEY=VAL, got {item!r}")
    try:
        value = json.loads(val)
    except json.JSONDecodeError:
        value = val
    return key.strip(), value


def load_override_file(path: str) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise VacuumError("override file must hold a JSON object")
    return doc
