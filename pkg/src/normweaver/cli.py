"""Command-line front end: plan, run, maxprob and export-hoa.

Each command prints a JSON summary on stdout and a short human-readable
report on stderr.  Exit codes: 0 success, 2 usage, 3 bad input,
4 planning failure, 5 stale plan artifact, 6 execution failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .artifact import ArtifactError, HashMismatch, input_hash, load_policy, save_policy
from .automata import InvalidAutomaton, UnsupportedFragment, ltl_to_dra, mk_and
from .crdra import Norm, NormError, build_crdra, parse_norms
from .executor import ExecutionError, HistoryInterpreter, run_episodes
from .hoa import HoaError, export_hoa, import_hoa
from .ltl import LtlError, to_nnf
from .mdp import LabeledMdp, MdpError, mdp_from_json
from .planner import PlannerConfig, PlannerError, plan
from .satisfaction import satisfaction_probability
from .vacuum import (HUMANS, VacuumError, build_scenario, load_override_file, parse_override,
                     scenario_norms)

EXIT_USAGE, EXIT_INPUT, EXIT_PLAN, EXIT_STALE, EXIT_RUN = 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


@dataclasses.dataclass
class Inputs:
    mdp: LabeledMdp
    norms: list[Norm]
    automata: dict
    config: PlannerConfig
    digest: str


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None


def _load_automata(directory: str | None, norms: list[Norm]) -> tuple[dict, dict]:
    """``<norm name>.hoa`` files from ``directory``, keyed by norm name."""
    if not directory:
        return {}, {}
    if not Path(directory).is_dir():
        raise UsageError(f"automata directory {directory} does not exist")
    autos, texts = {}, {}
    for n in norms:
        f = Path(directory) / f"{n.name}.hoa"
        if f.exists():
            texts[n.name] = f.read_text(encoding="utf-8")
            autos[n.name] = import_hoa(texts[n.name])
    return autos, texts


def _planner_config(args, base: PlannerConfig) -> PlannerConfig:
    changes = {}
    for flag in ("gamma", "epsilon", "tol"):
        if getattr(args, flag, None) is not None:
            changes[flag] = getattr(args, flag)
    if getattr(args, "timing", None):
        changes["norm_timing"] = args.timing
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as e:
        raise UsageError(str(e)) from None


def load_inputs(args) -> Inputs:
    if (args.scenario is None) == (args.mdp is None):
        raise UsageError("give exactly one of --scenario and --mdp")
    parts: dict = {}
    if args.scenario is not None:
        overrides = {}
        if args.override_file:
            overrides.update(load_override_file(args.override_file))
        for item in args.override or []:
            k, v = parse_override(item)
            overrides[k] = v
        sc = build_scenario(args.scenario, overrides)
        m, base = sc.mdp, sc.planner
        norms = parse_norms(_read(args.norms), {"human": list(HUMANS)}) if args.norms else scenario_norms(args.scenario)
        parts.update(scenario=args.scenario, overrides=overrides)
    else:
        if args.override or args.override_file:
            raise UsageError("--override applies to scenarios only")
        if not args.norms:
            raise UsageError("--mdp requires --norms")
        text = _read(args.mdp)
        try:
            m = mdp_from_json(text)
        except json.JSONDecodeError as e:
            raise MdpError(f"{args.mdp}: invalid JSON ({e})") from None
        norms = parse_norms(_read(args.norms))
        base = PlannerConfig()
        parts["mdp"] = text
    if args.norms:
        parts["norms"] = _read(args.norms)
    else:
        parts["norms"] = [(n.name, n.weight, n.text) for n in norms]
    automata, texts = _load_automata(getattr(args, "automata", None), norms)
    cfg = _planner_config(args, base)
    parts.update(automata=texts, config=cfg.to_dict())
    return Inputs(m, norms, automata, cfg, input_hash(parts))


def _threads(episodes: int) -> int:
    raw = os.environ.get("NORMWEAVER_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise UsageError(f"NORMWEAVER_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, episodes))


def _out_dir(args) -> Path | None:
    if not args.out:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def initial_behavior(policy) -> list[str]:
    """Environment actions the policy may take at time 0."""
    h = HistoryInterpreter(policy, policy.product.mdp.initial)
    _, x = h.select()
    acts = {int(policy.product.choice_env_action[c]) for c in policy.allowed_choices(x)}
    return sorted(policy.product.mdp.actions[a] for a in acts if a >= 0)


def cmd_plan(args) -> dict:
    t0 = time.perf_counter()
    inp = load_inputs(args)
    policy = plan(inp.mdp, inp.norms, inp.config, inp.automata)
    st = policy.stats
    summary = {
        "command": "plan",
        "input_hash": inp.digest,
        "env_states": inp.mdp.n_states,
        "product_states": st["states"],
        "product_choices": st["choices"],
        "product_actions": st["actions"],
        "amecs": st["amecs"],
        "meta_amecs": st["meta_amecs"],
        "no_update": st["no_update"],
        "viol_initial": policy.initial_value,
        "initial_behavior": initial_behavior(policy),
        "config": inp.config.to_dict(),
        "wall_seconds": time.perf_counter() - t0,
    }
    out = _out_dir(args)
    if out is not None:
        save_policy(str(out / "plan.npz"), policy, inp.digest)
        summary["artifact"] = str(out / "plan.npz")
        (out / "plan_report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"product: {st['states']} states, {st['choices']} choices, {st['amecs']} accepting components",
          file=sys.stderr)
    print(f"Viol* at the initial state: {policy.initial_value:.6f}  ({summary['wall_seconds']:.2f} s)",
          file=sys.stderr)
    return summary


def _dead_visits(m: LabeledMdp, trace) -> int:
    data = m.state_data
    if not data or not hasattr(data[0], "dead"):
        return 0
    return sum(bool(data[r.state].dead) for r in trace.rows)


def cmd_run(args) -> dict:
    t0 = time.perf_counter()
    if args.horizon < 1 or args.episodes < 1:
        raise UsageError("--horizon and --episodes must be positive")
    inp = load_inputs(args)
    if args.plan:
        crdras = [build_crdra(n, inp.automata.get(n.name)) for n in inp.norms]
        policy = load_policy(args.plan, inp.mdp, crdras, inp.digest)
    else:
        policy = plan(inp.mdp, inp.norms, inp.config, inp.automata)
    threads = _threads(args.episodes)
    traces = run_episodes(policy, args.horizon, args.episodes, args.seed, threads)
    names = [c.name for c in policy.product.crdras]
    costs = [t.total_cost for t in traces]
    susp = {n: sum(t.suspensions()[n] for t in traces) for n in names}
    summary = {
        "command": "run",
        "input_hash": inp.digest,
        "episodes": args.episodes,
        "horizon": args.horizon,
        "seed": args.seed,
        "threads": threads,
        "mean_cost": float(np.mean(costs)),
        "costs": costs,
        "suspensions": susp,
        "dead_state_visits": sum(_dead_visits(inp.mdp, t) for t in traces),
        "revisions": sum(t.revisions() for t in traces),
        "wall_seconds": time.perf_counter() - t0,
    }
    out = _out_dir(args)
    if out is not None:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for i, t in enumerate(traces):
            (tdir / f"episode_{i:04d}.csv").write_text(t.to_csv(), encoding="utf-8")
            (tdir / f"episode_{i:04d}.json").write_text(json.dumps(t.to_json(), indent=1) + "\n",
                                                         encoding="utf-8")
        (out / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"{args.episodes} episode(s) x {args.horizon} steps: mean cost {summary['mean_cost']:.6f}, "
          f"dead-state visits {summary['dead_state_visits']}", file=sys.stderr)
    return summary


def cmd_maxprob(args) -> dict:
    inp = load_inputs(args)
    phi = mk_and(*(n.formula for n in inp.norms))
    d = ltl_to_dra(to_nnf(phi))
    r = satisfaction_probability(inp.mdp, d, tol=inp.config.tol)
    p = r.initial_probability
    print(f"max satisfaction probability: {p:.9f}", file=sys.stderr)
    return {"command": "maxprob", "formula": str(phi), "probability": p, "zero": bool(p <= inp.config.tol),
            "automaton_states": d.n_states, "product_states": r.product.n_states}


def cmd_export_hoa(args) -> dict:
    if args.norms:
        norms = parse_norms(_read(args.norms), {"human": list(HUMANS)})
    elif args.scenario is not None:
        norms = scenario_norms(args.scenario)
    else:
        raise UsageError("export-hoa needs --norms or --scenario")
    out = _out_dir(args) or Path(".")
    files = []
    for n in norms:
        try:
            d = n.compile()
        except UnsupportedFragment as e:
            raise UnsupportedFragment(f"norm {n.name}: {e}") from None
        f = out / f"{n.name}.hoa"
        f.write_text(export_hoa(d, n.name), encoding="utf-8")
        files.append({"norm": n.name, "file": str(f), "states": d.n_states})
        print(f"{n.name}: {d.n_states} states -> {f}", file=sys.stderr)
    return {"command": "export-hoa", "automata": files}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="normweaver",
                                description="Plan and execute under weighted, conflicting LTL norms.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, planner=True):
        src = sp.add_argument_group("inputs")
        src.add_argument("--scenario", type=int, choices=[1, 2, 3, 4], help="built-in vacuum scenario")
        src.add_argument("--mdp", help="MDP interchange file (JSON)")
        src.add_argument("--norms", help="norm file, one '<weight> :: <formula>' per line")
        src.add_argument("--override", action="append", metavar="KEY=VAL",
                         help="scenario setting, VAL read as JSON (repeatable)")
        src.add_argument("--override-file", help="JSON object of scenario settings")
        src.add_argument("--out", help="output directory")
        if planner:
            src.add_argument("--automata", help="directory of <norm>.hoa files to use instead of translation")
            g = sp.add_argument_group("planner")
            g.add_argument("--gamma", type=float)
            g.add_argument("--epsilon", type=float)
            g.add_argument("--tol", type=float)
            g.add_argument("--timing", choices=["committed", "observed"],
                           help="which label a norm action applies to")

    sp = sub.add_parser("plan", help="build the product and compute the policy")
    common(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("run", help="simulate episodes under a policy")
    common(sp)
    sp.add_argument("--plan", help="plan artifact to reuse (checked against the inputs)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--horizon", type=int, default=100)
    sp.add_argument("--episodes", type=int, default=1)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("maxprob", help="maximum probability of satisfying all norms together")
    common(sp)
    sp.set_defaults(func=cmd_maxprob)

    sp = sub.add_parser("export-hoa", help="write one HOA automaton file per norm")
    sp.add_argument("--norms")
    sp.add_argument("--scenario", type=int, choices=[1, 2, 3, 4])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export_hoa)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        summary = args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HashMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STALE
    except (InputError, MdpError, NormError, LtlError, HoaError, VacuumError, ArtifactError,
            InvalidAutomaton) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except PlannerError as e:
        print(f"planning failed: {e}", file=sys.stderr)
        return EXIT_PLAN
    except ExecutionError as e:
        print(f"execution failed: {e}", file=sys.stderr)
        return EXIT_RUN
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
