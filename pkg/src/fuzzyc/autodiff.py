"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Graph` is an append-only tape of :class:`Node` objects.  Nodes are
evaluated eagerly when they are appended, and :func:`forward` re-runs the whole
tape from the current ``const``/``param`` values (used by the gradient checker
after perturbing a parameter).  Only scalar-tensor broadcasting is supported;
every other elementwise op requires identical shapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import weakref

import numpy as np

LOG_EPS = 1e-12
DEFAULT_NODE_BUDGET = 1_000_000


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    def __init__(self, node_id, detail=""):
        super().__init__(f"shape mismatch at node {node_id}: {detail}")
        self.node_id = node_id


class NonFiniteValue(AutodiffError):
    def __init__(self, node_id, op):
        super().__init__(f"non-finite value produced by node {node_id} ({op})")
        self.node_id = node_id


class SeedNotScalar(AutodiffError):
    pass


class BudgetExceeded(AutodiffError):
    pass


class Parameter:
    """A named learnable tensor.  Bindings own these; graphs reference them."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


@dataclass
class Node:
    id: int
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    grad: Optional[np.ndarray] = None
    needs_grad: bool = False
    _graph_ref: Optional[weakref.ref] = field(default=None, repr=False)

    @property
    def graph(self) -> "Graph":
        return self._graph_ref()

    @property
    def shape(self):
        return self.value.shape

    # operator sugar -----------------------------------------------------
    def _lift(self, other):
        return other if isinstance(other, Node) else self.graph.const(other)

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    def __radd__(self, other):
        return self.graph.add(self._lift(other), self)

    def __sub__(self, other):
        return self.graph.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self._lift(other), self)

    def __mul__(self, other):
        return self.graph.mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.graph.mul(self._lift(other), self)

    def __truediv__(self, other):
        return self.graph.div(self, self._lift(other))

    def __rtruediv__(self, other):
        return self.graph.div(self._lift(other), self)

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, self._lift(other))


# ---------------------------------------------------------------------------
# op table: forward(values, attrs) -> value ; backward(g, values, out, attrs) -> grads


def _unbroadcast(grad, shape):
    # only scalar <-> tensor broadcasting exists
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


def _check_same(values, node_id, op):
    shapes = [v.shape for v in values]
    nonscalar = {s for s in shapes if s != ()}
    if len(nonscalar) > 1:
        raise ShapeMismatch(node_id, f"{op} got {shapes}")


def _reduce_arg(x, axis, kind):
    idx = np.argmax(x, axis=axis) if kind == "max" else np.argmin(x, axis=axis)
    mask = np.zeros_like(x, dtype=bool)
    np.put_along_axis(mask, np.expand_dims(idx, axis), True, axis=axis)
    return mask


def _expand(g, x_shape, axis):
    if axis is None:
        return np.broadcast_to(g, x_shape)
    return np.broadcast_to(np.expand_dims(g, axis), x_shape)


def _exclusive_prod(x, axis):
    # product of all other entries along axis, exact even with zeros present
    xm = np.moveaxis(x, axis, -1)
    ones = np.ones(xm.shape[:-1] + (1,))
    left = np.cumprod(np.concatenate([ones, xm[..., :-1]], axis=-1), axis=-1)
    right = np.flip(
        np.cumprod(np.concatenate([ones, np.flip(xm[..., 1:], -1)], axis=-1), axis=-1), -1
    )
    return np.moveaxis(left * right, -1, axis)


def _softmax(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bw_min(g, vals, out, attrs):
    a, b = vals
    pick_a = np.broadcast_to(a <= b, out.shape)
    return [_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.shape)]


def _bw_max(g, vals, out, attrs):
    a, b = vals
    pick_a = np.broadcast_to(a >= b, out.shape)
    return [_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.shape)]


def _bw_matmul(g, vals, out, attrs):
    a, b = vals
    if b.ndim == 1:
        return [np.outer(g, b), a.T @ g]
    return [g @ b.T, a.T @ g]


def _fw_where(vals, attrs):
    x, y, a, b = vals
    cond = x <= y if attrs["cond"] == "le" else x == y
    return np.where(cond, a, b)


def _bw_where(g, vals, out, attrs):
    x, y, a, b = vals
    cond = np.broadcast_to(x <= y if attrs["cond"] == "le" else x == y, out.shape)
    return [np.zeros_like(x), np.zeros_like(y),
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape)]


def _fw_take(vals, attrs):
    return np.take(vals[0], attrs["indices"], axis=attrs["axis"])


def _scatter_add(n, indices, g):
    """Sum rows of ``g`` into ``n`` buckets given by ``indices`` (fixed order, deterministic)."""
    out = np.zeros((n,) + g.shape[1:])
    if len(indices) == 0:
        return out
    order = np.argsort(indices, kind="stable")
    srt = indices[order]
    starts = np.flatnonzero(np.r_[True, srt[1:] != srt[:-1]])
    out[srt[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return out


def _fw_expand(vals, attrs):
    x = vals[0]
    feat = x.shape[1:]
    b = x.reshape(attrs["src_shape"] + feat)
    full = np.broadcast_to(b, attrs["dst_shape"] + feat)
    return full.reshape((-1,) + feat)


def _bw_expand(g, vals, out, attrs):
    x = vals[0]
    feat = x.shape[1:]
    src, dst = attrs["src_shape"], attrs["dst_shape"]
    axes = tuple(i for i, (s, d) in enumerate(zip(src, dst)) if s == 1 and d != 1)
    gs = g.reshape(dst + feat).sum(axis=axes, keepdims=True) if axes else g.reshape(dst + feat)
    return [gs.reshape(x.shape)]


def _grid_diff(vals, attrs):
    a, b = vals
    fa, fb = a.shape[1:], b.shape[1:]
    if fa != fb:
        raise ValueError(f"feature shapes {fa} and {fb} differ")
    return a.reshape(attrs["a_shape"] + fa) - b.reshape(attrs["b_shape"] + fb)


def _fw_mean_abs_diff(vals, attrs):
    d = _grid_diff(vals, attrs)
    feat = tuple(range(len(attrs["dst_shape"]), d.ndim))
    return np.abs(d).mean(axis=feat).reshape(-1)


def _sum_to(x, shape, nfeat):
    axes = tuple(i for i, (s, d) in enumerate(zip(shape, x.shape[: x.ndim - nfeat])) if s == 1 and d != 1)
    return x.sum(axis=axes, keepdims=True) if axes else x


def _bw_mean_abs_diff(g, vals, out, attrs):
    d = _grid_diff(vals, attrs)
    dst = attrs["dst_shape"]
    nfeat = d.ndim - len(dst)
    scale = g.reshape(dst + (1,) * nfeat) / float(np.prod(d.shape[len(dst):]))
    s = np.sign(d) * scale
    needs = attrs.get("_needs", (True, True))
    ga = _sum_to(s, attrs["a_shape"], nfeat).reshape(vals[0].shape) if needs[0] else None
    gb = -_sum_to(s, attrs["b_shape"], nfeat).reshape(vals[1].shape) if needs[1] else None
    return [ga, gb]


def _bw_take(g, vals, out, attrs):
    x = vals[0]
    axis = attrs["axis"]
    gm = _scatter_add(x.shape[axis], attrs["indices"], np.moveaxis(g, axis, 0))
    return [np.moveaxis(gm, 0, axis)]


def _fw_concat(vals, attrs):
    return np.concatenate(vals, axis=attrs["axis"])


def _bw_concat(g, vals, out, attrs):
    sizes = np.cumsum([v.shape[attrs["axis"]] for v in vals])[:-1]
    return np.split(g, sizes, axis=attrs["axis"])


def _fw_reduce(fn):
    def fw(vals, attrs):
        return np.asarray(fn(vals[0], axis=attrs.get("axis")))
    return fw


def _bw_reduce_ext(kind):
    def bw(g, vals, out, attrs):
        x = vals[0]
        axis = attrs.get("axis")
        if axis is None:
            flat = x.reshape(-1)
            mask = _reduce_arg(flat, 0, kind).reshape(x.shape)
            return [np.where(mask, g, 0.0)]
        mask = _reduce_arg(x, axis, kind)
        return [np.where(mask, _expand(g, x.shape, axis), 0.0)]
    return bw


def _bw_prod(g, vals, out, attrs):
    x = vals[0]
    axis = attrs.get("axis")
    if axis is None:
        return [g * _exclusive_prod(x.reshape(-1), 0).reshape(x.shape)]
    return [_expand(g, x.shape, axis) * _exclusive_prod(x, axis)]


def _bw_sum(g, vals, out, attrs):
    return [np.array(_expand(g, vals[0].shape, attrs.get("axis")))]


def _bw_mean(g, vals, out, attrs):
    x = vals[0]
    axis = attrs.get("axis")
    n = x.size if axis is None else x.shape[axis]
    return [np.array(_expand(g, x.shape, axis)) / n]


def _bw_softmax(g, vals, out, attrs):
    axis = attrs.get("axis", -1)
    return [out * (g - (g * out).sum(axis=axis, keepdims=True))]


def _bw_log(g, vals, out, attrs):
    x = vals[0]
    return [np.where(x > LOG_EPS, g / np.maximum(x, LOG_EPS), 0.0)]


def _bw_clamp(g, vals, out, attrs):
    x = vals[0]
    lo, hi = attrs["lo"], attrs["hi"]
    return [np.where((x >= lo) & (x <= hi), g, 0.0)]


def _bw_leaky(g, vals, out, attrs):
    return [np.where(vals[0] > 0, g, attrs["alpha"] * g)]


OPS: Dict[str, Tuple[Optional[int], Callable, Callable]] = {
    # name: (arity, forward, backward)
    "add": (2, lambda v, a: v[0] + v[1],
            lambda g, v, o, a: [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)]),
    "sub": (2, lambda v, a: v[0] - v[1],
            lambda g, v, o, a: [_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)]),
    "mul": (2, lambda v, a: v[0] * v[1],
            lambda g, v, o, a: [_unbroadcast(g * v[1], v[0].shape),
                                _unbroadcast(g * v[0], v[1].shape)]),
    "div": (2, lambda v, a: v[0] / v[1],
            lambda g, v, o, a: [_unbroadcast(g / v[1], v[0].shape),
                                _unbroadcast(-g * v[0] / (v[1] * v[1]), v[1].shape)]),
    "neg": (1, lambda v, a: -v[0], lambda g, v, o, a: [-g]),
    "min": (2, lambda v, a: np.minimum(v[0], v[1]), _bw_min),
    "max": (2, lambda v, a: np.maximum(v[0], v[1]), _bw_max),
    "log": (1, lambda v, a: np.log(np.maximum(v[0], LOG_EPS)), _bw_log),
    "exp": (1, lambda v, a: np.exp(v[0]), lambda g, v, o, a: [g * o]),
    "tanh": (1, lambda v, a: np.tanh(v[0]), lambda g, v, o, a: [g * (1.0 - o * o)]),
    "abs": (1, lambda v, a: np.abs(v[0]), lambda g, v, o, a: [g * np.sign(v[0])]),
    "sum": (1, _fw_reduce(np.sum), _bw_sum),
    "mean": (1, _fw_reduce(np.mean), _bw_mean),
    "prod": (1, _fw_reduce(np.prod), _bw_prod),
    "reduce_min": (1, _fw_reduce(np.min), _bw_reduce_ext("min")),
    "reduce_max": (1, _fw_reduce(np.max), _bw_reduce_ext("max")),
    "matmul": (2, lambda v, a: v[0] @ v[1], _bw_matmul),
    "relu": (1, lambda v, a: np.maximum(v[0], 0.0),
             lambda g, v, o, a: [np.where(v[0] > 0, g, 0.0)]),
    "leaky_relu": (1, lambda v, a: np.where(v[0] > 0, v[0], a["alpha"] * v[0]), _bw_leaky),
    "sigmoid": (1, lambda v, a: _sigmoid(v[0]), lambda g, v, o, a: [g * o * (1.0 - o)]),
    "softmax": (1, lambda v, a: _softmax(v[0], a.get("axis", -1)), _bw_softmax),
    "clamp": (1, lambda v, a: np.clip(v[0], a["lo"], a["hi"]), _bw_clamp),
    "where": (4, _fw_where, _bw_where),
    "take": (1, _fw_take, _bw_take),
    "expand": (1, _fw_expand, _bw_expand),
    "mean_abs_diff": (2, _fw_mean_abs_diff, _bw_mean_abs_diff),
    "reshape": (1, lambda v, a: v[0].reshape(a["shape"]),
                lambda g, v, o, a: [g.reshape(v[0].shape)]),
    "concat": (None, _fw_concat, _bw_concat),
}

ELEMENTWISE = {"add", "sub", "mul", "div", "min", "max"}
# ops whose derivative jumps; used by the gradient checker to detect kinks
KINKED = {"min", "max", "abs", "mean_abs_diff", "relu", "leaky_relu", "clamp", "where",
          "reduce_min", "reduce_max", "log"}


class Graph:
    """Append-only computation tape."""

    def __init__(self, budget: int = DEFAULT_NODE_BUDGET, check_finite: bool = True):
        self.nodes: List[Node] = []
        self.budget = budget
        self.check_finite = check_finite
        self.params: Dict[str, Tuple[int, Parameter]] = {}
        self._ref = weakref.ref(self)

    def __len__(self):
        return len(self.nodes)

    # construction -------------------------------------------------------
    def _append(self, op, inputs, value, attrs=None):
        if len(self.nodes) >= self.budget:
            raise BudgetExceeded(f"graph exceeds node budget {self.budget}")
        needs = op == "param" or any(self.nodes[i].needs_grad for i in inputs)
        node = Node(len(self.nodes), op, tuple(inputs), value, attrs or {}, needs_grad=needs,
                    _graph_ref=self._ref)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        if isinstance(value, Node):
            return value
        return self._append("const", (), np.asarray(value, dtype=np.float64))

    def param(self, p: Parameter) -> Node:
        if p.name in self.params:
            return self.nodes[self.params[p.name][0]]
        node = self._append("param", (), p.value, {"param": p})
        self.params[p.name] = (node.id, p)
        return node

    def apply(self, op: str, *inputs, **attrs) -> Node:
        arity, fw, _ = OPS[op]
        ins = [x if isinstance(x, Node) else self.const(x) for x in inputs]
        if arity is not None and len(ins) != arity:
            raise AutodiffError(f"{op} expects {arity} inputs, got {len(ins)}")
        vals = [n.value for n in ins]
        node_id = len(self.nodes)
        value = self._compute(node_id, op, fw, vals, attrs)
        return self._append(op, [n.id for n in ins], value, attrs)

    def _compute(self, node_id, op, fw, vals, attrs):
        if op in ELEMENTWISE or op == "where":
            _check_same(vals, node_id, op)
        elif op == "matmul":
            a, b = vals
            if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
                raise ShapeMismatch(node_id, f"matmul {a.shape} @ {b.shape}")
        try:
            with np.errstate(all="ignore"):
                value = np.asarray(fw(vals, attrs), dtype=np.float64)
        except ValueError as exc:
            raise ShapeMismatch(node_id, str(exc)) from exc
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteValue(node_id, op)
        return value

    # sugar --------------------------------------------------------------
    def add(self, a, b):
        return self.apply("add", a, b)

    def sub(self, a, b):
        return self.apply("sub", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def div(self, a, b):
        return self.apply("div", a, b)

    def neg(self, a):
        return self.apply("neg", a)

    def minimum(self, a, b):
        return self.apply("min", a, b)

    def maximum(self, a, b):
        return self.apply("max", a, b)

    def log(self, a):
        return self.apply("log", a)

    def exp(self, a):
        return self.apply("exp", a)

    def tanh(self, a):
        return self.apply("tanh", a)

    def abs(self, a):
        return self.apply("abs", a)

    def sum(self, a, axis=None):
        return self.apply("sum", a, axis=axis)

    def mean(self, a, axis=None):
        return self.apply("mean", a, axis=axis)

    def prod(self, a, axis=None):
        return self.apply("prod", a, axis=axis)

    def reduce_min(self, a, axis=None):
        return self.apply("reduce_min", a, axis=axis)

    def reduce_max(self, a, axis=None):
        return self.apply("reduce_max", a, axis=axis)

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def relu(self, a):
        return self.apply("relu", a)

    def leaky_relu(self, a, alpha=0.01):
        return self.apply("leaky_relu", a, alpha=alpha)

    def sigmoid(self, a):
        return self.apply("sigmoid", a)

    def softmax(self, a, axis=-1):
        return self.apply("softmax", a, axis=axis)

    def clamp(self, a, lo=0.0, hi=1.0):
        return self.apply("clamp", a, lo=lo, hi=hi)

    def where_le(self, x, y, a, b):
        """``a`` where ``x <= y`` else ``b``; no gradient through the test."""
        return self.apply("where", x, y, a, b, cond="le")

    def where_eq(self, x, y, a, b):
        return self.apply("where", x, y, a, b, cond="eq")

    def take(self, a, indices, axis=0):
        return self.apply("take", a, indices=np.asarray(indices, dtype=np.intp), axis=axis)

    def expand(self, a, src_shape, dst_shape):
        """Broadcast rows of ``a`` laid out on grid ``src_shape`` (1 = absent axis) to ``dst_shape``."""
        return self.apply("expand", a, src_shape=tuple(int(v) for v in src_shape),
                          dst_shape=tuple(int(v) for v in dst_shape))

    def mean_abs_diff(self, a, b, a_shape=None, b_shape=None, dst_shape=None):
        """Row-wise mean of ``|a - b|`` over trailing axes.

        ``a`` and ``b`` hold rows laid out on grids ``a_shape`` and ``b_shape``
        (size 1 on absent axes); the result has one row per cell of
        ``dst_shape``, broadcast without materialising the expanded inputs.
        """
        n = a.shape[0]
        a_shape = tuple(int(v) for v in (a_shape or (n,)))
        b_shape = tuple(int(v) for v in (b_shape or (b.shape[0],)))
        dst_shape = tuple(int(v) for v in (dst_shape or np.broadcast_shapes(a_shape, b_shape)))
        return self.apply("mean_abs_diff", a, b, a_shape=a_shape, b_shape=b_shape, dst_shape=dst_shape)

    def reshape(self, a, shape):
        return self.apply("reshape", a, shape=tuple(shape))

    def concat(self, nodes: Sequence[Node], axis=-1):
        return self.apply("concat", *nodes, axis=axis)


# ---------------------------------------------------------------------------


def forward(graph: Graph, nodes: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    """Re-evaluate every node (or just ``nodes``, in order) from the current const/param values."""
    for node in graph.nodes if nodes is None else (graph.nodes[i] for i in nodes):
        if node.op == "const":
            continue
        if node.op == "param":
            node.value = node.attrs["param"].value
            continue
        _, fw, _ = OPS[node.op]
        vals = [graph.nodes[i].value for i in node.inputs]
        node.value = graph._compute(node.id, node.op, fw, vals, node.attrs)
    return [n.value for n in graph.nodes]


def descendants(graph: Graph, node_id: int, stop: Optional[int] = None) -> List[int]:
    """Ids of ``node_id`` and every node depending on it, up to ``stop`` inclusive."""
    hit = {node_id}
    end = len(graph.nodes) if stop is None else stop + 1
    for node in graph.nodes[node_id + 1:end]:
        if any(i in hit for i in node.inputs):
            hit.add(node.id)
    return sorted(hit)


def backward(graph: Graph, seed: Node | int) -> Dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``seed``; returns gradients keyed by parameter name."""
    seed_id = seed.id if isinstance(seed, Node) else seed
    root = graph.nodes[seed_id]
    if root.value.shape != () and root.value.size != 1:
        raise SeedNotScalar(f"seed node {seed_id} has shape {root.value.shape}")
    for n in graph.nodes:
        n.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(graph.nodes[: seed_id + 1]):
        if node.grad is None or not node.inputs or not node.needs_grad:
            continue
        _, _, bw = OPS[node.op]
        vals = [graph.nodes[i].value for i in node.inputs]
        attrs = node.attrs
        if node.op == "mean_abs_diff":
            attrs = dict(attrs, _needs=tuple(graph.nodes[i].needs_grad for i in node.inputs))
        grads = bw(node.grad, vals, node.value, attrs)
        for i, g in zip(node.inputs, grads):
            src = graph.nodes[i]
            if not src.needs_grad or g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != src.value.shape:
                g = g.reshape(src.value.shape)
            src.grad = g if src.grad is None else src.grad + g
    out = {}
    for name, (nid, p) in graph.params.items():
        g = graph.nodes[nid].grad
        out[name] = np.zeros_like(p.value) if g is None else g
    return out


# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: Optional[str]
    worst_index: Optional[tuple]
    n_checked: int
    skipped: bool = False
    notes: List[str] = field(default_factory=list)

    def passed(self, tolerance: float) -> bool:
        return self.skipped or self.max_rel_error < tolerance


def _kink_gap(graph: Graph, node: Node) -> Optional[np.ndarray]:
    """Distance of each output entry from its op's switching boundary (shaped like the output)."""
    vals = [graph.nodes[i].value for i in node.inputs]
    if node.op in ("min", "max", "where"):
        return np.broadcast_to(np.abs(vals[0] - vals[1]), node.value.shape)
    if node.op == "mean_abs_diff":
        d = np.abs(_grid_diff(vals, node.attrs))
        nd = len(node.attrs["dst_shape"])
        return d.min(axis=tuple(range(nd, d.ndim))).reshape(node.value.shape)
    if node.op in ("abs", "relu", "leaky_relu"):
        return np.abs(vals[0])
    if node.op == "clamp":
        return np.minimum(np.abs(vals[0] - node.attrs["lo"]), np.abs(vals[0] - node.attrs["hi"]))
    if node.op == "log":
        return np.abs(vals[0] - LOG_EPS)
    x = vals[0]
    axis = node.attrs.get("axis")
    if x.size < 2 or (axis is not None and x.shape[axis] < 2):
        return None
    flat = x.reshape(-1) if axis is None else np.moveaxis(x, axis, -1)
    srt = np.sort(flat, axis=-1)
    gap = srt[..., -1] - srt[..., -2] if node.op == "reduce_max" else srt[..., 1] - srt[..., 0]
    return np.reshape(gap, node.value.shape)


def _near_kink(graph: Graph, h: float, scale: float) -> Optional[str]:
    """First kinked node within ``h`` of a boundary at an entry that carries gradient.

    Needs a preceding :func:`backward`; kinks on branches that receive no
    gradient (masked by ``where``, saturated folds) do not affect the check.
    """
    tol = h * max(scale, 1.0)
    for node in graph.nodes:
        if node.op not in KINKED or not node.needs_grad or node.grad is None:
            continue
        gap = _kink_gap(graph, node)
        if gap is None or not np.size(gap):
            continue
        live = np.broadcast_to(node.grad != 0, gap.shape)
        if np.any(live & (gap <= tol)):
            return f"node {node.id} ({node.op}) within h of a kink"
    return None


def relative_error(a, b, floor: float = 1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(graph: Graph, seed: Node | int, h: float = 1e-5,
                    tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backward() against central differences for every parameter entry.

    Points where any kinked op sits within ``h`` of its switching boundary are
    skipped as a whole; the report says so in ``notes``.
    """
    seed_id = seed.id if isinstance(seed, Node) else seed
    if not graph.params:
        return GradCheckReport(0.0, None, None, 0, notes=["no parameters"])
    analytic = backward(graph, seed_id)
    note = _near_kink(graph, h, 1.0)
    if note is not None:
        return GradCheckReport(0.0, None, None, 0, skipped=True, notes=[note])
    worst, worst_p, worst_i, count = 0.0, None, None, 0
    for name, (nid, p) in graph.params.items():
        sub = descendants(graph, nid, seed_id)
        if seed_id not in sub:
            continue  # parameter does not reach the seed; backward gives exact zeros
        for idx in np.ndindex(p.value.shape):
            orig = p.value[idx]
            p.value[idx] = orig + h
            fp = float(forward(graph, sub)[seed_id])
            p.value[idx] = orig - h
            fm = float(forward(graph, sub)[seed_id])
            p.value[idx] = orig
            num = (fp - fm) / (2 * h)
            err = float(relative_error(analytic[name][idx], num))
            count += 1
            if err > worst:
                worst, worst_p, worst_i = err, name, idx
        forward(graph, sub)  # restore downstream values before the next parameter
    forward(graph)
    report = GradCheckReport(worst, worst_p, worst_i, count)
    if worst >= tolerance:
        report.notes.append(f"worst offender {worst_p}{list(worst_i)} rel err {worst:.3e}")
    return report
