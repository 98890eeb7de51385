"""Truth-to-loss mappings, the weighted constraint cost and adversarial partitions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import LOG_EPS, Graph, Node

MAPPINGS = ("linear", "neglog")


class LossError(Exception):
    pass


class NegativeWeight(LossError):
    pass


class UnknownGroup(LossError):
    pass


class EmptyObjective(LossError):
    pass


def mapping_name(name: str) -> str:
    key = name.strip().lower().replace("-", "").replace("_", "")
    key = {"a": "linear", "b": "neglog", "log": "neglog", "crossentropy": "neglog"}.get(key, key)
    if key not in MAPPINGS:
        raise LossError(f"unknown loss mapping {name!r}; choose from {MAPPINGS}")
    return key


def default_mapping(tnorm: str) -> str:
    return "neglog" if tnorm == "product" else "linear"


def map_loss(truth: Union[float, Node], mapping: str, graph: Optional[Graph] = None):
    """``1 - truth`` (linear) or ``-log truth`` (neglog, log protected at 1e-12)."""
    mapping = mapping_name(mapping)
    if isinstance(truth, Node):
        g = graph or truth.graph
        return 1.0 - truth if mapping == "linear" else -g.log(truth)
    t = float(truth)
    if mapping == "linear":
        return 1.0 - t
    return float(-np.log(max(t, LOG_EPS)))


def raw_neglog(truth: float) -> float:
    """Unprotected ``-log``; ``inf`` at zero truth, reported for diagnostics only."""
    with np.errstate(divide="ignore"):
        return float(-np.log(truth))


def total_cost(losses: Sequence[Tuple[float, Union[float, Node]]], graph: Optional[Graph] = None):
    """Sum of ``weight * loss``; nodes stay nodes so gradients reach every constraint."""
    if not losses:
        return 0.0
    for w, _ in losses:
        if w < 0:
            raise NegativeWeight(f"constraint weight {w} < 0")
    if any(isinstance(l, Node) for _, l in losses):
        g = graph or next(l.graph for _, l in losses if isinstance(l, Node))
        total = None
        for w, l in losses:
            term = g.mul(g.const(w), l if isinstance(l, Node) else g.const(l))
            total = term if total is None else g.add(total, term)
        return total
    return float(sum(w * float(l) for w, l in losses))


@dataclass
class Objective:
    name: str
    groups: Tuple[str, ...]
    trainable: Tuple[str, ...]
    constraints: List[str] = field(default_factory=list)
    lr: Optional[float] = None
    steps: int = 1


def partition(constraints: Iterable, objectives: Sequence[Mapping]) -> List[Objective]:
    """Assign each constraint to every objective that lists its group.

    ``objectives`` entries carry ``name``, ``groups`` and ``trainable`` (plus
    optional ``lr`` and ``steps``).  A constraint whose group no objective
    claims raises :class:`UnknownGroup`; an objective that ends up with no
    constraints raises :class:`EmptyObjective`.
    """
    objs = [
        Objective(o["name"], tuple(o.get("groups", [o["name"]])), tuple(o.get("trainable", ())),
                  lr=o.get("lr"), steps=int(o.get("steps", 1)))
        for o in objectives
    ]
    claimed = {g for o in objs for g in o.groups}
    for c in constraints:
        if c.group not in claimed:
            raise UnknownGroup(f"constraint {c.name} has group {c.group!r}, not used by any objective")
        for o in objs:
            if c.group in o.groups:
                o.constraints.append(c.name)
    for o in objs:
        if not o.constraints:
            raise EmptyObjective(f"objective {o.name} has no constraints")
        if not o.trainable:
            raise EmptyObjective(f"objective {o.name} trains nothing")
    return objs
