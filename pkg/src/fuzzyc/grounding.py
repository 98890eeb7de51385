"""Grounding of quantified variables and evaluation of compiled constraints.

Every sub-formula is evaluated over a *context*: the ordered tuple of
quantifiers enclosing it.  Its value is a vector with one entry per row of
the cartesian product of those quantifiers' element indices (lexicographic,
last variable fastest).  A quantifier evaluates its body in the extended
context, reshapes to ``[outer_rows, n]`` and folds the last axis.  Terms and
atoms are computed once over the variables they actually mention and then
gathered out to the full context, which is what makes ``g_F(e(x))`` appear a
single time per row however many atoms use it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import lang
from .autodiff import Graph, Node
from .models import GivenTable, ModelBinding
from .semantics import CompiledConstraint, ConnectiveNode, GraphOps, QuantifierNode, Slot, connective, fold

DEFAULT_ROW_CAP = 1_000_000


class GroundingError(Exception):
    pass


class EmptyDomain(GroundingError):
    pass


class BudgetExceeded(GroundingError):
    pass


class UnboundSymbol(GroundingError):
    pass


@dataclass
class Domain:
    name: str
    elements: np.ndarray  # [n, *shape]
    ids: Optional[List[str]] = None
    kind: str = "vector"

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=np.float64)
        if self.elements.ndim == 1:
            self.elements = self.elements[:, None]
        if self.ids is None:
            self.ids = [str(i) for i in range(len(self.elements))]
        if len(self.ids) != len(self.elements):
            raise GroundingError(f"domain {self.name}: {len(self.ids)} ids for {len(self.elements)} elements")

    def __len__(self):
        return len(self.elements)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.elements.shape[1:])

    @property
    def flat_dim(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Exhaustive:
    pass


@dataclass(frozen=True)
class Minibatch:
    size: int
    seed: int


GroundingMode = Union[Exhaustive, Minibatch]
EXHAUSTIVE = Exhaustive()


@dataclass
class GroundingTable:
    """Per-quantifier element indices; rows are their cartesian product in plan order."""

    variables: Tuple[str, ...]
    domains: Tuple[str, ...]
    indices: Tuple[np.ndarray, ...]
    mode: GroundingMode = EXHAUSTIVE
    full_sizes: Optional[Tuple[int, ...]] = None

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(i) for i in self.indices)

    def __len__(self):
        return int(np.prod(self.sizes)) if self.indices else 1

    @property
    def rows(self) -> np.ndarray:
        """Assignment rows ``[n_rows, n_vars]`` of element indices."""
        if not self.indices:
            return np.zeros((1, 0), dtype=np.intp)
        grids = np.meshgrid(*self.indices, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)


def ground(constraint: CompiledConstraint, domains: Mapping[str, Domain],
           mode: GroundingMode = EXHAUSTIVE, row_cap: int = DEFAULT_ROW_CAP,
           bindings: Optional["Bindings"] = None) -> GroundingTable:
    """Choose element indices for every quantifier of ``constraint``.

    In minibatch mode universal variables are sampled uniformly with replacement
    from a generator seeded with ``mode.seed``; existential variables always range
    over their whole domain.

    When ``bindings`` is given, elements whose value is fixed by a crisp given
    guard are dropped: an existential variable keeps only elements satisfying a
    given conjunct of its body, and a universal variable keeps only elements
    satisfying a given premise of its implication.  Dropped rows are exactly 0
    (resp. 1) under every t-norm, so the folds and their gradients are unchanged;
    ``full_sizes`` keeps the pre-pruning counts.
    """
    rng = np.random.default_rng(mode.seed) if isinstance(mode, Minibatch) else None
    idx = []
    for entry in constraint.plan:
        if entry.domain not in domains:
            raise GroundingError(f"domain {entry.domain!r} for {entry.variable} is not loaded")
        n = len(domains[entry.domain])
        if n == 0:
            raise EmptyDomain(entry.domain)
        if rng is not None and entry.kind == "forall":
            idx.append(rng.integers(0, n, size=mode.size))
        else:
            idx.append(np.arange(n))
    full = tuple(len(i) for i in idx)
    if bindings is not None:
        for qid, atoms in _guards(constraint, bindings).items():
            dom = domains[constraint.plan[qid].domain]
            ids = [dom.ids[i] for i in idx[qid]]
            keep = np.ones(len(ids), dtype=bool)
            for a in atoms:
                keep &= bindings.predicates[a.symbol].given.dense(a.symbol, [ids]) > 0.5
            if keep.any():
                idx[qid] = idx[qid][keep]
    table = GroundingTable(tuple(p.variable for p in constraint.plan),
                           tuple(p.domain for p in constraint.plan), tuple(idx), mode, full)
    if isinstance(mode, Exhaustive) and len(table) > row_cap:
        raise BudgetExceeded(f"{constraint.name}: {len(table)} grounding rows exceed cap {row_cap}")
    return table


def _conjuncts(node):
    if isinstance(node, ConnectiveNode) and node.op == "and":
        for ch in node.children:
            yield from _conjuncts(ch)
    else:
        yield node


def _guards(c: CompiledConstraint, bindings: "Bindings") -> Dict[int, list]:
    """Crisp given atoms over a single quantified variable that gate its rows."""
    out: Dict[int, list] = {}

    def given_on(node, qid):
        if not isinstance(node, Slot):
            return None
        s = c.slots[node.index]
        a = s.atom
        if not isinstance(a, lang.PredicateAtom):
            return None
        pb = bindings.predicates.get(a.symbol)
        if pb is None or not pb.is_given or len(a.args) != 1:
            return None
        return a if s.scope == ((a.args[0].name, qid),) else None

    def walk(node):
        if isinstance(node, QuantifierNode):
            body = node.body
            if node.kind == "exists":
                cands = list(_conjuncts(body))
            elif isinstance(body, ConnectiveNode) and body.op == "implies":
                cands = list(_conjuncts(body.children[0]))
            else:
                cands = []
            for ch in cands:
                a = given_on(ch, node.qid)
                if a is not None:
                    out.setdefault(node.qid, []).append(a)
            walk(body)
        elif isinstance(node, ConnectiveNode):
            for ch in node.children:
                walk(ch)

    walk(c.template)
    return out


# ---------------------------------------------------------------------------


@dataclass
class PredicateBinding:
    """Predicate -> model output column, or predicate -> given table."""

    model: Optional[ModelBinding] = None
    output: int = 0
    given: Optional[GivenTable] = None

    @property
    def is_given(self) -> bool:
        return self.given is not None


@dataclass
class Bindings:
    predicates: Dict[str, PredicateBinding] = field(default_factory=dict)
    functions: Dict[str, ModelBinding] = field(default_factory=dict)
    codomain_shapes: Dict[str, Tuple[int, ...]] = field(default_factory=dict)

    def models(self) -> List[ModelBinding]:
        out: Dict[str, ModelBinding] = {}
        for p in self.predicates.values():
            if p.model is not None:
                out.setdefault(p.model.name, p.model)
        for m in self.functions.values():
            out.setdefault(m.name, m)
        return list(out.values())


class _Evaluator:
    def __init__(self, graph: Graph, c: CompiledConstraint, table: GroundingTable,
                 bindings: Bindings, domains: Mapping[str, Domain]):
        self.g = graph
        self.c = c
        self.table = table
        self.b = bindings
        self.domains = domains
        self.ops = GraphOps(graph)
        self._term_cache: Dict[tuple, Node] = {}
        self._expand_cache: Dict[tuple, np.ndarray] = {}
        self._model_cache: Dict[tuple, Node] = {}

    # context helpers ----------------------------------------------------
    def _size(self, ctx):
        return int(np.prod([len(self.table.indices[q]) for q in ctx])) if ctx else 1

    def _expand_index(self, src: Tuple[int, ...], dst: Tuple[int, ...]) -> np.ndarray:
        key = (src, dst)
        if key not in self._expand_cache:
            dst_sizes = [len(self.table.indices[q]) for q in dst]
            multi = np.unravel_index(np.arange(self._size(dst)), dst_sizes) if dst else ()
            pos = {q: i for i, q in enumerate(dst)}
            if src:
                src_sizes = [len(self.table.indices[q]) for q in src]
                idx = np.ravel_multi_index(tuple(multi[pos[q]] for q in src), src_sizes)
            else:
                idx = np.zeros(self._size(dst), dtype=np.intp)
            self._expand_cache[key] = idx
        return self._expand_cache[key]

    def expand(self, node: Node, src, dst) -> Node:
        if tuple(src) == tuple(dst):
            return node
        if list(src) == [q for q in dst if q in src]:
            sizes = [len(self.table.indices[q]) for q in dst]
            shape = [n if q in src else 1 for q, n in zip(dst, sizes)]
            return self.g.expand(node, shape, sizes)
        return self.g.take(node, self._expand_index(tuple(src), tuple(dst)), axis=0)

    def order(self, qids, ctx):
        return tuple(q for q in ctx if q in qids)

    # terms --------------------------------------------------------------
    def term_qids(self, t: lang.Term, scope) -> set:
        return {scope[v] for v in lang.term_vars(t)}

    def term(self, t: lang.Term, scope: Dict[str, int], ctx) -> Tuple[Node, tuple]:
        """Value of ``t`` over its own variables; returns (node, var-context)."""
        own = self.order(self.term_qids(t, scope), ctx)
        key = (t, own)
        if key in self._term_cache:
            return self._term_cache[key], own
        if isinstance(t, lang.Var):
            q = scope[t.name]
            dom = self.domains[self.c.plan[q].domain]
            node = self.g.const(dom.elements[self.table.indices[q]])
        else:
            model = self.b.functions.get(t.symbol)
            if model is None:
                raise UnboundSymbol(t.symbol)
            x = self._model_input(t.args, scope, own, ctx)
            out = self._run_model(model, x, own)
            shape = self.b.codomain_shapes.get(t.symbol)
            if shape is not None and len(shape) > 1:
                out = self.g.reshape(out, (out.shape[0],) + tuple(shape))
            node = out
        self._term_cache[key] = node
        return node, own

    def _flat(self, node: Node) -> Node:
        if node.value.ndim == 2:
            return node
        return self.g.reshape(node, (node.shape[0], -1))

    def _model_input(self, args, scope, own, ctx) -> Node:
        key = ("input", tuple(args), own)
        if key in self._term_cache:
            return self._term_cache[key]
        parts = []
        for a in args:
            v, src = self.term(a, scope, ctx)
            parts.append(self._flat(self.expand(v, src, own)))
        node = parts[0] if len(parts) == 1 else self.g.concat(parts, axis=-1)
        self._term_cache[key] = node
        return node

    def _run_model(self, model: ModelBinding, x: Node, own) -> Node:
        key = (model.name, x.id)
        if key not in self._model_cache:
            self._model_cache[key] = model.forward(self.g, x)
        return self._model_cache[key]

    # atoms --------------------------------------------------------------
    def atom(self, slot_index: int, ctx) -> Node:
        s = self.c.slots[slot_index]
        scope = dict(s.scope)
        a = s.atom
        if isinstance(a, lang.EqualityAtom):
            own = self.order(set(scope.values()), ctx)
            lv, ls = self.term(a.left, scope, ctx)
            rv, rs = self.term(a.right, scope, ctx)
            eq = self.c.equality
            if eq.grid_fn is not None and all(list(s) == [q for q in own if q in s] for s in (ls, rs)):
                sizes = [len(self.table.indices[q]) for q in own]
                grid = lambda src: [n if q in src else 1 for q, n in zip(own, sizes)] or [1]
                truth = eq.grid_fn(self.g, lv, rv, grid(ls), grid(rs), sizes or [1])
            else:
                truth = eq.fn(self.g, self.expand(lv, ls, own), self.expand(rv, rs, own))
            return self.expand(truth, own, ctx)
        pb = self.b.predicates.get(a.symbol)
        if pb is None:
            raise UnboundSymbol(a.symbol)
        if pb.is_given:
            return self.expand(self._given(a, pb, scope, ctx), self.order(set(scope.values()), ctx), ctx)
        own = self.order(set(scope.values()), ctx)
        x = self._model_input(a.args, scope, own, ctx)
        out = self._run_model(pb.model, x, own)
        col = self.g.take(out, [pb.output], axis=1)
        truth = self.g.reshape(col, (col.shape[0],))
        return self.expand(truth, own, ctx)

    def _given(self, a: lang.PredicateAtom, pb: PredicateBinding, scope, ctx) -> Node:
        own = self.order(set(scope.values()), ctx)
        qids = [scope[t.name] for t in a.args]
        ids = []
        for q in qids:
            dom = self.domains[self.c.plan[q].domain]
            ids.append([dom.ids[i] for i in self.table.indices[q]])
        dense = pb.given.dense(a.symbol, ids)  # axes follow argument order
        # one row per own-context assignment
        sizes = [len(self.table.indices[q]) for q in own]
        multi = np.unravel_index(np.arange(self._size(own)), sizes) if own else ()
        pos = {q: i for i, q in enumerate(own)}
        vals = dense[tuple(multi[pos[q]] for q in qids)] if qids else dense.reshape(1)
        return self.g.const(np.asarray(vals, dtype=np.float64).reshape(-1))

    # formulas -----------------------------------------------------------
    def formula(self, node, ctx) -> Node:
        if isinstance(node, Slot):
            return self.atom(node.index, ctx)
        if isinstance(node, ConnectiveNode):
            args = [self.formula(ch, ctx) for ch in node.children]
            return connective(node.op, args, self.c.tnorm, self.ops)
        inner = ctx + (node.qid,)
        body = self.formula(node.body, inner)
        rows = self.g.reshape(body, (self._size(ctx), len(self.table.indices[node.qid])))
        return fold(node.kind, rows, node.aggregation, axis=1, ops=self.ops)

    def log_formula(self, node, ctx, average: bool) -> Node:
        """log of the truth, summing logs through leading product-forall folds."""
        if isinstance(node, QuantifierNode) and node.kind == "forall" and node.aggregation == "product":
            inner = ctx + (node.qid,)
            body = self.log_formula(node.body, inner, average)
            rows = self.g.reshape(body, (self._size(ctx), len(self.table.indices[node.qid])))
            return self.g.mean(rows, axis=1) if average else self.g.sum(rows, axis=1)
        return self.g.log(self.formula(node, ctx))


def evaluate_constraint(constraint: CompiledConstraint, table: GroundingTable, bindings: Bindings,
                        domains: Mapping[str, Domain], graph: Optional[Graph] = None) -> Tuple[Node, Graph]:
    """Scalar node holding the truth degree of ``constraint`` over ``table``."""
    graph = graph if graph is not None else Graph()
    ev = _Evaluator(graph, constraint, table, bindings, domains)
    out = ev.formula(constraint.template, ())
    return graph.reshape(out, ()), graph


def evaluate_log_truth(constraint: CompiledConstraint, table: GroundingTable, bindings: Bindings,
                       domains: Mapping[str, Domain], graph: Optional[Graph] = None,
                       average: bool = False) -> Tuple[Node, Graph]:
    """Scalar node holding ``log`` of the truth degree, computed without forming the product.

    With ``average=True`` the logs under leading product-forall folds are averaged
    rather than summed (the per-row mean used for minibatch training).
    """
    graph = graph if graph is not None else Graph()
    ev = _Evaluator(graph, constraint, table, bindings, domains)
    out = ev.log_formula(constraint.template, (), average)
    return graph.reshape(out, ()), graph
