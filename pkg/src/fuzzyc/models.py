"""Models bound to logic symbols: MLPs, RBF classifiers, given tables and fuzzy equality."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Graph, Node, Parameter

CHECKPOINT_VERSION = 1


class ModelError(Exception):
    pass


class ShapeMismatch(ModelError):
    pass


class UnknownElement(ModelError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _affine(g: Graph, x: Node, w: Parameter, b: Optional[Parameter]) -> Node:
    out = g.matmul(x, g.param(w))
    if b is None:
        return out
    # row-broadcast of the bias as an outer product with a ones column
    ones = g.const(np.ones((x.shape[0], 1)))
    return g.add(out, g.matmul(ones, g.param(b)))


class ModelBinding:
    """Base class.  ``forward`` maps a ``[rows, in_dim]`` node to ``[rows, out_dim]``."""

    kind = "abstract"

    def __init__(self, name: str, in_dim: int, out_dim: int):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.params: Dict[str, Parameter] = {}

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def _check(self, x: Node):
        if x.value.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"{self.name} expects [rows, {self.in_dim}], got {list(x.shape)}")

    def forward(self, g: Graph, x: Node) -> Node:
        raise NotImplementedError

    def predict(self, x) -> np.ndarray:
        """Numeric forward pass outside any training graph."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        g = Graph(check_finite=False)
        out = self.forward(g, g.const(x.reshape(1, -1) if single else x)).value
        return out[0] if single else out


class MLPBinding(ModelBinding):
    """One hidden leaky-ReLU layer.

    ``head`` is ``sigmoid`` for predicates and image-valued functions, ``softmax``
    for multi-class predicates, ``linear`` for latent codes.
    """

    kind = "mlp"

    def __init__(self, name, in_dim, out_dim, hidden=50, head="sigmoid", rng=None,
                 alpha=0.01, zero_init=False):
        super().__init__(name, in_dim, out_dim)
        if head not in ("sigmoid", "softmax", "linear"):
            raise ValueError(f"unknown head {head!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden, self.head, self.alpha = hidden, head, alpha
        init = (lambda a, b: np.zeros((a, b))) if zero_init else (lambda a, b: glorot(rng, a, b))
        self.params = {
            "W1": Parameter(f"{name}.W1", init(in_dim, hidden)),
            "b1": Parameter(f"{name}.b1", np.zeros((1, hidden))),
            "W2": Parameter(f"{name}.W2", init(hidden, out_dim)),
            "b2": Parameter(f"{name}.b2", np.zeros((1, out_dim))),
        }

    def share_first_layer(self, other: "MLPBinding"):
        """Make this model reuse ``other``'s first-layer parameters."""
        if other.in_dim != self.in_dim or other.hidden != self.hidden:
            raise ShapeMismatch(f"cannot share first layer of {other.name} with {self.name}")
        self.params["W1"] = other.params["W1"]
        self.params["b1"] = other.params["b1"]

    def forward(self, g, x):
        self._check(x)
        h = g.leaky_relu(_affine(g, x, self.params["W1"], self.params["b1"]), self.alpha)
        out = _affine(g, h, self.params["W2"], self.params["b2"])
        if self.head == "sigmoid":
            return g.sigmoid(out)
        if self.head == "softmax":
            return g.softmax(out, axis=-1)
        return out


def median_pairwise_distance(x: np.ndarray) -> float:
    sq = (x * x).sum(1)
    d2 = np.maximum(sq[:, None] - 2 * x @ x.T + sq[None, :], 0.0)
    iu = np.triu_indices(len(x), k=1)
    if len(iu[0]) == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


class RBFBinding(ModelBinding):
    """Gaussian units ``exp(-|x - c_k|^2 / s_k^2)`` into a bias-free linear layer and softmax.

    Without an output bias every membership tends to ``1/classes`` far from the data,
    so decision regions stay bounded.
    """

    kind = "rbf"

    def __init__(self, name, in_dim, classes=3, centers=None, n_centers=None, rng=None,
                 width=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(name, in_dim, classes)
        if centers is None:
            k = n_centers or 30 * classes
            centers = rng.uniform(0.0, 1.0, size=(k, in_dim))
        centers = np.asarray(centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[1] != in_dim:
            raise ShapeMismatch(f"centers must be [k, {in_dim}]")
        k = len(centers)
        width = width if width is not None else median_pairwise_distance(centers)
        self.params = {
            "centers": Parameter(f"{name}.centers", centers.T.copy()),  # [in, k]
            "widths": Parameter(f"{name}.widths", np.full((1, k), float(width))),
            "W": Parameter(f"{name}.W", glorot(rng, k, classes)),
        }

    @classmethod
    def from_data(cls, name, data: np.ndarray, labels: Optional[np.ndarray] = None, classes=3,
                  per_class=30, rng=None):
        """Centers sampled from training inputs (``per_class`` of each label when labels are given)."""
        rng = rng if rng is not None else np.random.default_rng(0)
        data = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
        if labels is None:
            idx = rng.choice(len(data), size=min(per_class * classes, len(data)), replace=False)
        else:
            idx = np.concatenate([
                rng.choice(np.flatnonzero(labels == c), size=per_class,
                           replace=per_class > np.sum(labels == c))
                for c in range(classes)
            ])
        centers = data[idx]
        return cls(name, data.shape[1], classes, centers=centers, rng=rng)

    @property
    def n_centers(self):
        return self.params["centers"].value.shape[1]

    def activations(self, g: Graph, x: Node) -> Node:
        self._check(x)
        rows, k = x.shape[0], self.n_centers
        c = g.param(self.params["centers"])
        s = g.param(self.params["widths"])
        xsq = g.matmul(x * x, g.const(np.ones((self.in_dim, k))))
        csq = g.matmul(g.const(np.ones((rows, self.in_dim))), c * c)
        d2 = xsq - 2.0 * g.matmul(x, c) + csq
        inv = g.matmul(g.const(np.ones((rows, 1))), 1.0 / (s * s))
        return g.exp(-(d2 * inv))

    def forward(self, g, x):
        act = self.activations(g, x)
        return g.softmax(g.matmul(act, g.param(self.params["W"])), axis=-1)


# ---------------------------------------------------------------------------
# given predicates


@dataclass
class GivenTable:
    """Crisp truth values of given predicates, keyed by element-id tuples."""

    values: Dict[str, Dict[Tuple[str, ...], float]] = field(default_factory=dict)
    defaults: Dict[str, float] = field(default_factory=dict)

    def set(self, predicate: str, element, value):
        key = tuple(element) if isinstance(element, (tuple, list)) else (str(element),)
        key = tuple(str(e) for e in key)
        v = float(value)
        if v not in (0.0, 1.0):
            raise ValueError(f"given value for {predicate}{key} must be 0 or 1")
        self.values.setdefault(predicate, {})[key] = v

    def add_complement(self, name: str, of: str):
        """Declare ``name`` as the crisp negation of ``of`` (mutually exclusive givens)."""
        self.values[name] = {k: 1.0 - v for k, v in self.values[of].items()}
        if of in self.defaults:
            self.defaults[name] = 1.0 - self.defaults[of]

    def lookup(self, predicate: str, element) -> float:
        key = tuple(element) if isinstance(element, (tuple, list)) else (element,)
        key = tuple(str(e) for e in key)
        table = self.values.get(predicate)
        if table is None and predicate not in self.defaults:
            raise UnknownElement(f"no given predicate {predicate!r}")
        if table is not None and key in table:
            return table[key]
        if predicate in self.defaults:
            return self.defaults[predicate]
        raise UnknownElement(f"{predicate}{key} is not in the table")

    def dense(self, predicate: str, ids: Sequence[Sequence[str]]) -> np.ndarray:
        """Truth array of shape ``(len(ids[0]), len(ids[1]), ...)`` over the given id lists."""
        shape = tuple(len(i) for i in ids)
        out = np.empty(shape)
        if predicate in self.defaults:
            out.fill(self.defaults[predicate])
            table = self.values.get(predicate, {})
            pos = [{str(e): j for j, e in enumerate(i)} for i in ids]
            for key, v in table.items():
                try:
                    out[tuple(p[k] for p, k in zip(pos, key))] = v
                except KeyError:
                    continue
            return out
        table = self.values.get(predicate)
        if table is None:
            raise UnknownElement(f"no given predicate {predicate!r}")
        if len(ids) == 1:
            try:
                return np.array([table[(str(e),)] for e in ids[0]], dtype=float)
            except KeyError as exc:
                raise UnknownElement(f"{predicate}{exc.args[0]} is not in the table") from None
        for idx in np.ndindex(shape):
            out[idx] = self.lookup(predicate, tuple(ids[a][j] for a, j in enumerate(idx)))
        return out

    @classmethod
    def from_csv(cls, path, defaults: Optional[Dict[str, float]] = None) -> "GivenTable":
        """Rows of ``element-id,predicate,0|1``; tuple ids are joined with ``;``."""
        table = cls(defaults=dict(defaults or {}))
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "element":
                    continue
                element, predicate, value = (c.strip() for c in row[:3])
                table.set(predicate, tuple(element.split(";")), value)
        return table

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "predicate", "value"])
            for pred, rows in self.values.items():
                for key, v in rows.items():
                    w.writerow([";".join(key), pred, int(v)])


def given_eval(table: GivenTable, predicate: str, element) -> float:
    return table.lookup(predicate, element)


# ---------------------------------------------------------------------------
# fuzzy equality


def _flatten_rows(g: Graph, a: Node) -> Node:
    if a.value.ndim == 2:
        return a
    return g.reshape(a, (a.shape[0], -1))


def pixel_similarity_node(g: Graph, a: Node, b: Node) -> Node:
    """Row-wise ``1 - tanh(mean |a - b|)`` for ``[rows, ...]`` nodes."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"pixel similarity of {list(a.shape)} and {list(b.shape)}")
    return 1.0 - g.tanh(g.mean_abs_diff(_flatten_rows(g, a), _flatten_rows(g, b)))


def pixel_similarity_grid(g: Graph, a: Node, b: Node, a_shape, b_shape, dst_shape) -> Node:
    """:func:`pixel_similarity_node` over all cells of a row grid, without expanding the inputs."""
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatch(f"pixel similarity of {list(a.shape[1:])} and {list(b.shape[1:])}")
    d = g.mean_abs_diff(_flatten_rows(g, a), _flatten_rows(g, b), a_shape, b_shape, dst_shape)
    return 1.0 - g.tanh(d)


def sqexp_similarity_node(g: Graph, a: Node, b: Node) -> Node:
    """Row-wise ``exp(-|a - b|^2)``, meant for latent vectors."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"similarity of {list(a.shape)} and {list(b.shape)}")
    d = _flatten_rows(g, a) - _flatten_rows(g, b)
    return g.exp(-g.sum(d * d, axis=1))


def pixel_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"pixel similarity of {list(x.shape)} and {list(y.shape)}")
    g = Graph()
    out = pixel_similarity_node(g, g.const(x.reshape(1, -1)), g.const(y.reshape(1, -1)))
    return float(out.value[0])


@dataclass(frozen=True)
class EqualityBinding:
    name: str
    fn: Callable[[Graph, Node, Node], Node]
    grid_fn: Optional[Callable] = None  # same value on a row grid, see pixel_similarity_grid


EQUALITY = {
    "pixel": EqualityBinding("pixel", pixel_similarity_node, pixel_similarity_grid),
    "sqexp": EqualityBinding("sqexp", sqexp_similarity_node),
}


def equality_binding(spec) -> EqualityBinding:
    if isinstance(spec, EqualityBinding):
        return spec
    try:
        return EQUALITY[spec]
    except KeyError:
        raise ModelError(f"unknown equality operator {spec!r}; have {sorted(EQUALITY)}") from None


# ---------------------------------------------------------------------------
# checkpoints


def unique_parameters(bindings: Iterable[ModelBinding]) -> Dict[str, Parameter]:
    out: Dict[str, Parameter] = {}
    for b in bindings:
        for p in b.parameters():
            out.setdefault(p.name, p)
    return out


def save_checkpoint(path, bindings: Iterable[ModelBinding], meta: Optional[dict] = None):
    params = unique_parameters(bindings)
    arrays = {name: p.value for name, p in sorted(params.items())}
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_header(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["__header__"]).decode())


def load_checkpoint(path, bindings: Iterable[ModelBinding]) -> dict:
    """Copy stored tensors into the bindings' parameters; returns the header."""
    params = unique_parameters(bindings)
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {header.get('version')}")
        for name, p in params.items():
            if name not in data:
                raise ModelError(f"checkpoint lacks parameter {name}")
            arr = data[name]
            if arr.shape != p.value.shape:
                raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs model {p.value.shape}")
            p.value = arr.astype(np.float64).copy()
    return header
