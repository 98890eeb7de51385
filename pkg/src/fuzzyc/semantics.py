"""T-norm semantics for connectives and quantifiers, and compilation of typed formulas.

The connective formulas are written once against a tiny backend interface so
the same code serves plain floats/arrays (:data:`NUMPY`) and autodiff graphs
(:class:`GraphOps`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import lang
from .autodiff import Graph, Node
from .models import EqualityBinding, equality_binding

TNORMS = ("goedel", "lukasiewicz", "product")
CONNECTIVES = {"not": 1, "and": 2, "or": 2, "implies": 2, "iff": 2}
PRODUCT_EPS = 1e-7
DOMAIN_TOL = 1e-9

_ALIASES = {"godel": "goedel", "gödel": "goedel", "g": "goedel", "min": "goedel",
            "luk": "lukasiewicz", "łukasiewicz": "lukasiewicz", "l": "lukasiewicz",
            "prod": "product", "p": "product"}


class SemanticsError(Exception):
    pass


class DomainError(SemanticsError):
    pass


class MissingEqualityBinding(SemanticsError):
    pass


def tnorm_name(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in TNORMS:
        raise SemanticsError(f"unknown t-norm {name!r}; choose from {TNORMS}")
    return key


class _NumpyOps:
    minimum = staticmethod(np.minimum)
    maximum = staticmethod(np.maximum)
    abs = staticmethod(np.abs)

    @staticmethod
    def where_le(x, y, a, b):
        return np.where(np.asarray(x) <= np.asarray(y), a, b)

    @staticmethod
    def where_eq(x, y, a, b):
        return np.where(np.asarray(x) == np.asarray(y), a, b)

    @staticmethod
    def prod(x, axis):
        return np.prod(x, axis=axis)

    @staticmethod
    def sum(x, axis):
        return np.sum(x, axis=axis)

    @staticmethod
    def reduce_min(x, axis):
        return np.min(x, axis=axis)

    @staticmethod
    def reduce_max(x, axis):
        return np.max(x, axis=axis)


NUMPY = _NumpyOps()


class GraphOps:
    def __init__(self, graph: Graph):
        self.g = graph

    def minimum(self, a, b):
        return self.g.minimum(a, b)

    def maximum(self, a, b):
        return self.g.maximum(a, b)

    def abs(self, a):
        return self.g.abs(a)

    def where_le(self, x, y, a, b):
        return self.g.where_le(x, y, a, b)

    def where_eq(self, x, y, a, b):
        return self.g.where_eq(x, y, a, b)

    def prod(self, x, axis):
        return self.g.prod(x, axis)

    def sum(self, x, axis):
        return self.g.sum(x, axis)

    def reduce_min(self, x, axis):
        return self.g.reduce_min(x, axis)

    def reduce_max(self, x, axis):
        return self.g.reduce_max(x, axis)


# ---------------------------------------------------------------------------
# connectives


def connective(op: str, args: Sequence, tnorm: str, ops=NUMPY):
    """Apply one connective under ``tnorm``; ``args`` may be floats, arrays or graph nodes."""
    if op == "not":
        (x,) = args
        return 1.0 - x
    x, y = args
    if tnorm == "goedel":
        if op == "and":
            return ops.minimum(x, y)
        if op == "or":
            return ops.maximum(x, y)
        if op == "implies":
            return ops.where_le(x, y, 1.0, y)
        if op == "iff":
            return ops.where_eq(x, y, 1.0, ops.minimum(x, y))
    elif tnorm == "lukasiewicz":
        if op == "and":
            return ops.maximum(0.0, x + y - 1.0)
        if op == "or":
            return ops.minimum(1.0, x + y)
        if op == "implies":
            return ops.minimum(1.0, 1.0 - x + y)
        if op == "iff":
            return 1.0 - ops.abs(x - y)
    elif tnorm == "product":
        if op == "and":
            return x * y
        if op == "or":
            return x + y - x * y
        if op == "implies":
            # the x <= y branch also covers x = y = 0
            return ops.where_le(x, y, 1.0, y / ops.maximum(x, PRODUCT_EPS))
        if op == "iff":
            ratio = ops.minimum(x / ops.maximum(y, PRODUCT_EPS), y / ops.maximum(x, PRODUCT_EPS))
            return ops.where_eq(x, y, 1.0, ratio)
    raise SemanticsError(f"unknown connective {op!r} or t-norm {tnorm!r}")


def _checked_truth(v) -> float:
    v = float(v)
    if v < -DOMAIN_TOL or v > 1.0 + DOMAIN_TOL or not np.isfinite(v):
        raise DomainError(f"truth value {v!r} outside [0, 1]")
    return min(1.0, max(0.0, v))


def eval_connective(op: str, args: Sequence[float], tnorm: str) -> float:
    tnorm = tnorm_name(tnorm)
    if op not in CONNECTIVES:
        raise SemanticsError(f"unknown connective {op!r}")
    if len(args) != CONNECTIVES[op]:
        raise SemanticsError(f"{op} takes {CONNECTIVES[op]} argument(s), got {len(args)}")
    vals = [_checked_truth(a) for a in args]
    return float(connective(op, vals, tnorm))


# ---------------------------------------------------------------------------
# quantifiers


def fold(kind: str, values, tnorm: str, axis=-1, ops=NUMPY):
    """Aggregate truth values along ``axis``: t-norm fold for forall, t-conorm fold for exists."""
    if kind == "forall":
        if tnorm == "product":
            return ops.prod(values, axis)
        if tnorm == "goedel":
            return ops.reduce_min(values, axis)
        n = values.shape[axis]
        return ops.maximum(0.0, ops.sum(values, axis) - (n - 1.0))
    if kind == "exists":
        if tnorm == "product":
            return 1.0 - ops.prod(1.0 - values, axis)
        if tnorm == "goedel":
            return ops.reduce_max(values, axis)
        return ops.minimum(1.0, ops.sum(values, axis))
    raise SemanticsError(f"unknown quantifier {kind!r}")


def eval_quantifier(kind: str, values: Sequence[float], tnorm: str) -> float:
    tnorm = tnorm_name(tnorm)
    if kind not in ("forall", "exists"):
        raise SemanticsError(f"unknown quantifier {kind!r}")
    vals = np.array([_checked_truth(v) for v in values], dtype=np.float64)
    if vals.size == 0:
        return 1.0 if kind == "forall" else 0.0
    return float(fold(kind, vals, tnorm, axis=0))


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class Slot:
    index: int


@dataclass(frozen=True)
class ConnectiveNode:
    op: str
    children: Tuple["TemplateNode", ...]


@dataclass(frozen=True)
class QuantifierNode:
    qid: int
    kind: str
    variable: str
    domain: str
    aggregation: str
    body: "TemplateNode"


TemplateNode = Union[Slot, ConnectiveNode, QuantifierNode]


@dataclass(frozen=True)
class PlanEntry:
    variable: str
    domain: str
    kind: str
    aggregation: str


@dataclass(frozen=True)
class AtomSlot:
    """A grounded atom: the AST atom plus the quantifier ids of the variables it mentions."""

    atom: Union[lang.PredicateAtom, lang.EqualityAtom]
    scope: Tuple[Tuple[str, int], ...]  # variable name -> qid, for the vars in this atom

    def qid(self, name: str) -> int:
        return dict(self.scope)[name]


@dataclass
class CompiledConstraint:
    template: TemplateNode
    plan: Tuple[PlanEntry, ...]
    slots: Tuple[AtomSlot, ...]
    tnorm: str
    weight: float = 1.0
    group: str = "main"
    name: str = "c0"
    equality: Optional[EqualityBinding] = None
    formula: Optional[lang.Formula] = None
    source: str = ""
    options: Dict[str, str] = field(default_factory=dict)

    def summary(self) -> str:
        plan = ", ".join(f"{p.kind} {p.variable}:{p.domain}[{p.aggregation}]" for p in self.plan)
        eq = f", eq={self.equality.name}" if self.equality else ""
        return (f"{self.name} [{self.tnorm}, weight={self.weight:g}, group={self.group}{eq}] "
                f"slots={len(self.slots)} plan=({plan}) :: {render_template(self.template, self)}")

    def evaluate_template(self, slot_values: Sequence, ops=NUMPY):
        """Evaluate a quantifier-free template; quantifier nodes are not allowed here."""
        return _eval_template(self.template, self, slot_values, ops)


def _eval_template(node, c: CompiledConstraint, slot_values, ops):
    if isinstance(node, Slot):
        return slot_values[node.index]
    if isinstance(node, ConnectiveNode):
        args = [_eval_template(ch, c, slot_values, ops) for ch in node.children]
        return connective(node.op, args, c.tnorm, ops)
    raise SemanticsError("evaluate_template only handles quantifier-free templates")


def render_template(node, c: CompiledConstraint) -> str:
    if isinstance(node, Slot):
        a = c.slots[node.index].atom
        return f"#{node.index}<{lang.pretty(a)}>"
    if isinstance(node, ConnectiveNode):
        if node.op == "not":
            return f"(1 - {render_template(node.children[0], c)})"
        a, b = (render_template(ch, c) for ch in node.children)
        return f"{node.op}({a}, {b})"
    return f"{node.kind}[{node.aggregation}]_{node.variable}({render_template(node.body, c)})"


def has_equality(f: lang.Formula) -> bool:
    if isinstance(f, lang.EqualityAtom):
        return True
    if isinstance(f, lang.Quantified):
        return has_equality(f.body)
    if isinstance(f, lang.Connective):
        return any(has_equality(ch) for ch in f.children)
    return False


def compile_formula(ast: lang.Formula, tnorm: str = "product", equality=None, *,
                    forall: Optional[str] = None, exists: Optional[str] = None,
                    weight: float = 1.0, group: str = "main", name: str = "c0",
                    source: str = "", options: Optional[dict] = None) -> CompiledConstraint:
    """Translate a validated formula into a :class:`CompiledConstraint`.

    ``forall``/``exists`` pick the aggregation per quantifier kind and default
    to ``tnorm``.  Quantifiers without an annotated domain are rejected.
    """
    tnorm = tnorm_name(tnorm)
    aggs = {"forall": tnorm_name(forall or tnorm), "exists": tnorm_name(exists or tnorm)}
    if weight < 0:
        raise SemanticsError(f"negative weight for {name}")
    eq = None
    if has_equality(ast):
        if equality is None:
            raise MissingEqualityBinding(f"constraint {name} uses '=' but no equality operator was bound")
        eq = equality_binding(equality)
    plan: List[PlanEntry] = []
    slots: List[AtomSlot] = []

    def walk(f, scope: Dict[str, int]):
        if isinstance(f, lang.Quantified):
            if f.domain is None:
                raise SemanticsError(f"quantifier over {f.variable} has no domain; validate first")
            qid = len(plan)
            plan.append(PlanEntry(f.variable, f.domain, f.kind, aggs[f.kind]))
            body = walk(f.body, {**scope, f.variable: qid})
            return QuantifierNode(qid, f.kind, f.variable, f.domain, aggs[f.kind], body)
        if isinstance(f, lang.Connective):
            return ConnectiveNode(f.op, tuple(walk(ch, scope) for ch in f.children))
        names = lang.atom_vars(f)
        missing = [v for v in names if v not in scope]
        if missing:
            raise lang.UnboundVariable(missing[0], f.pos)
        slots.append(AtomSlot(f, tuple((v, scope[v]) for v in names)))
        return Slot(len(slots) - 1)

    template = walk(ast, {})
    return CompiledConstraint(template, tuple(plan), tuple(slots), tnorm, weight, group, name,
                              eq, ast, source, dict(options or {}))


# the public name used throughout the package
compile = compile_formula


def compile_spec(spec: lang.ConstraintSpec, sig: lang.Signature, tnorm: str = "product",
                 equality=None) -> CompiledConstraint:
    """Validate and compile one constraint-file entry, honouring its per-line options."""
    typed = lang.validate(spec.formula, sig)
    opts = spec.options
    return compile_formula(
        typed,
        opts.get("tnorm", tnorm),
        opts.get("eq", opts.get("equality", equality)),
        forall=opts.get("forall"),
        exists=opts.get("exists"),
        weight=spec.weight,
        group=spec.group,
        name=spec.name or "c0",
        source=spec.source,
        options=opts,
    )
