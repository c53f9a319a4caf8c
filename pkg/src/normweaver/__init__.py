"""Planning and execution for agents under weighted, conflicting LTL norms."""
from .automata import Dra, UnsupportedFragment, ltl_to_dra
from .crdra import Crdra, Norm, NormAction, build_crdra, parse_norms, violation_cost
from .executor import ExecutionTrace, HistoryInterpreter, run_episode, run_episodes
from .hoa import export_hoa, import_hoa
from .ltl import ground, parse_ltl, parse_quantified, to_nnf
from .mdp import LabeledMdp, MdpBuilder, mdp_from_json, mdp_to_json
from .planner import (AmalgamatedPolicy, ConflictProduct, PlannerConfig, build_conflict_product,
                      evaluate_env_policy, plan, plan_product, price_action)
from .satisfaction import (build_product, max_satisfaction_probability, maximal_end_components,
                           satisfaction_probability)

__version__ = "0.1.0"

__all__ = [
    "Dra", "UnsupportedFragment", "ltl_to_dra",
    "Crdra", "Norm", "NormAction", "build_crdra", "parse_norms", "violation_cost",
    "ExecutionTrace", "HistoryInterpreter", "run_episode", "run_episodes",
    "export_hoa", "import_hoa",
    "ground", "parse_ltl", "parse_quantified", "to_nnf",
    "LabeledMdp", "MdpBuilder", "mdp_from_json", "mdp_to_json",
    "AmalgamatedPolicy", "ConflictProduct", "PlannerConfig", "build_conflict_product",
    "evaluate_env_policy", "plan", "plan_product", "price_action",
    "build_product", "max_satisfaction_probability", "maximal_end_components", "satisfaction_probability",
]
