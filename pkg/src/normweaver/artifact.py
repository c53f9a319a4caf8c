"""Saving and reloading planned policies.

A plan artifact is a NumPy ``.npz`` archive holding the policy arrays and a
JSON metadata record (format version, input hash, planner settings, stage
statistics, automata in HOA form).  Loading rebuilds the conflict product
from the inputs and reattaches the stored arrays; no value iteration or
end-component analysis is repeated.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .crdra import Crdra
from .hoa import export_hoa
from .mdp import LabeledMdp
from .planner import AmalgamatedPolicy, PlannerConfig, build_conflict_product
from .satisfaction import EndComponent

FORMAT_VERSION = 1

_ARRAYS = ("values", "restriction", "no_update", "amec_id", "amec_value", "amec_choices",
           "amec_opt", "meta_choices", "in_meta")


class ArtifactError(ValueError):
    pass


class HashMismatch(ArtifactError):
    pass


def input_hash(parts: dict) -> str:
    """SHA-256 of a canonical JSON rendering of ``parts``."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def save_policy(path: str, policy: AmalgamatedPolicy, digest: str) -> None:
    arrays = {name: getattr(policy, name) for name in _ARRAYS}
    ec_states = [ec.states for ec in policy.amecs]
    ec_choices = [ec.choices for ec in policy.amecs]
    arrays["amec_state_ptr"] = np.cumsum([0] + [len(s) for s in ec_states])
    arrays["amec_states"] = np.concatenate(ec_states) if ec_states else np.zeros(0, dtype=np.int64)
    arrays["amec_choice_ptr"] = np.cumsum([0] + [len(c) for c in ec_choices])
    arrays["amec_choice_ids"] = np.concatenate(ec_choices) if ec_choices else np.zeros(0, dtype=np.int64)
    meta = {
        "format_version": FORMAT_VERSION,
        "input_hash": digest,
        "config": policy.config.to_dict(),
        "stats": _json_safe(policy.stats),
        "norms": [{"name": c.name, "weight": c.weight, "hoa": export_hoa(c.dra, c.name)}
                  for c in policy.product.crdras],
        "product_states": policy.product.n_states,
        "product_choices": policy.product.sparse.n_choices,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def read_meta(path: str) -> dict:
    with np.load(path) as z:
        return json.loads(z["meta"].tobytes().decode("utf-8"))


def load_policy(path: str, m: LabeledMdp, crdras: list[Crdra], digest: str | None = None) -> AmalgamatedPolicy:
    """Reattach a stored policy to the product rebuilt from ``m`` and ``crdras``."""
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ArtifactError(f"unsupported artifact version {meta.get('format_version')!r}")
        if digest is not None and meta["input_hash"] != digest:
            raise HashMismatch("plan artifact was built from different inputs; re-run 'plan'")
        arrays = {name: z[name] for name in _ARRAYS}
        sp_, st = z["amec_state_ptr"], z["amec_states"]
        cp, ci = z["amec_choice_ptr"], z["amec_choice_ids"]
    cfg = PlannerConfig(**meta["config"])
    product = build_conflict_product(m, crdras, cfg.size_cap, cfg.norm_timing)
    if product.n_states != meta["product_states"] or product.sparse.n_choices != meta["product_choices"]:
        raise ArtifactError("rebuilt product does not match the stored policy")
    amecs = [EndComponent(st[sp_[i]:sp_[i + 1]], ci[cp[i]:cp[i + 1]]) for i in range(len(sp_) - 1)]
    return AmalgamatedPolicy(product, cfg, amecs=amecs, stats=meta["stats"], **arrays)
