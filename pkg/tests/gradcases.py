"""Random smooth-point graphs, one per primitive op, for gradient checking.

Each builder takes an rng and returns ``(graph, seed)``.  Inputs are drawn
away from kinks (ties, zero, clamp bounds) so the central difference is
meaningful.  The op output is contracted with a random constant so every
entry of the Jacobian contributes to the scalar seed.
"""
import numpy as np

from fuzzyc.autodiff import Graph, Parameter


def _p(g, name, value):
    return g.param(Parameter(name, np.asarray(value, dtype=np.float64)))


def _contract(g, out, rng):
    w = g.const(rng.normal(size=out.shape))
    return g.sum(out * w)


def _apart(rng, n, gap=0.1):
    # two vectors whose entries differ by at least gap
    a = rng.uniform(-1, 1, n)
    d = rng.uniform(gap, 1, n) * rng.choice([-1, 1], n)
    return a, a + d


def _distinct(rng, shape, gap=0.05):
    n = int(np.prod(shape))
    vals = np.arange(n) * gap + rng.uniform(0, gap / 4)
    return rng.permutation(vals).reshape(shape) - n * gap / 2


def _unary(op, low=-2.0, high=2.0, avoid_zero=False, **attrs):
    def build(rng):
        g = Graph()
        x = rng.uniform(low, high, 5)
        if avoid_zero:
            x = np.where(np.abs(x) < 0.1, x + 0.2 * np.sign(x + 1e-9), x)
        out = g.apply(op, _p(g, "x", x), **attrs)
        return g, _contract(g, out, rng)
    return build


def _binary(op, b_low=-2.0, b_high=2.0):
    def build(rng):
        g = Graph()
        a = _p(g, "a", rng.uniform(-2, 2, 4))
        b = _p(g, "b", rng.uniform(b_low, b_high, 4))
        return g, _contract(g, g.apply(op, a, b), rng)
    return build


def _extremum(op):
    def build(rng):
        g = Graph()
        a, b = _apart(rng, 4)
        return g, _contract(g, g.apply(op, _p(g, "a", a), _p(g, "b", b)), rng)
    return build


def _reduce(op, positive=False):
    def build(rng):
        g = Graph()
        x = _distinct(rng, (3, 4))
        if positive:
            x = np.abs(x) + 0.5
        axis = int(rng.integers(0, 2)) if rng.random() < 0.7 else None
        out = g.apply(op, _p(g, "x", x), axis=axis)
        return g, _contract(g, out, rng)
    return build


def _matmul(rng):
    g = Graph()
    a = _p(g, "a", rng.normal(size=(3, 4)))
    b = _p(g, "b", rng.normal(size=(4, 2)) if rng.random() < 0.5 else rng.normal(size=4))
    return g, _contract(g, g.matmul(a, b), rng)


def _softmax(rng):
    g = Graph()
    return g, _contract(g, g.softmax(_p(g, "x", rng.normal(size=(3, 4))), axis=-1), rng)


def _clamp(rng):
    g = Graph()
    x = rng.uniform(-0.5, 1.5, 6)
    for edge in (0.0, 1.0):
        near = np.abs(x - edge) < 0.05
        x[near] += 0.1
    return g, _contract(g, g.clamp(_p(g, "x", x)), rng)


def _where(rng):
    g = Graph()
    x, y = _apart(rng, 5)
    a = _p(g, "a", rng.normal(size=5))
    b = _p(g, "b", rng.normal(size=5))
    return g, _contract(g, g.where_le(g.const(x), g.const(y), a, b), rng)


def _take(rng):
    g = Graph()
    x = _p(g, "x", rng.normal(size=(4, 3)))
    idx = rng.integers(0, 4, 7)
    return g, _contract(g, g.take(x, idx, axis=0), rng)


def _expand(rng):
    g = Graph()
    x = _p(g, "x", rng.normal(size=(3, 2)))
    src, dst = ((3, 1), (3, 4)) if rng.random() < 0.5 else ((1, 3), (4, 3))
    return g, _contract(g, g.expand(x, src, dst), rng)


def _mean_abs_diff(rng):
    g = Graph()
    a0 = rng.uniform(0.2, 0.8, (2, 5))
    b0 = rng.uniform(0.2, 0.8, (3, 5))
    # keep every pairwise difference away from zero
    b0 = np.where(np.abs(b0[None] - a0[:, None]).min(axis=0) < 0.05, b0 + 0.1, b0)
    if np.abs(b0[None] - a0[:, None]).min() < 1e-3:
        b0 = b0 + 0.013
    a = _p(g, "a", a0)
    b = _p(g, "b", b0)
    return g, _contract(g, g.mean_abs_diff(a, b, (2, 1), (1, 3)), rng)


def _reshape(rng):
    g = Graph()
    return g, _contract(g, g.reshape(_p(g, "x", rng.normal(size=(2, 6))), (3, 4)), rng)


def _concat(rng):
    g = Graph()
    a = _p(g, "a", rng.normal(size=(2, 3)))
    b = _p(g, "b", rng.normal(size=(2, 2)))
    return g, _contract(g, g.concat([a, b], axis=-1), rng)


PRIMITIVE_CASES = {
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "div": _binary("div", 0.5, 2.0),
    "neg": _unary("neg"),
    "min": _extremum("min"),
    "max": _extremum("max"),
    "log": _unary("log", 0.2, 3.0),
    "exp": _unary("exp"),
    "tanh": _unary("tanh"),
    "abs": _unary("abs", avoid_zero=True),
    "sum": _reduce("sum"),
    "mean": _reduce("mean"),
    "prod": _reduce("prod", positive=True),
    "reduce_min": _reduce("reduce_min"),
    "reduce_max": _reduce("reduce_max"),
    "matmul": _matmul,
    "relu": _unary("relu", avoid_zero=True),
    "leaky_relu": _unary("leaky_relu", avoid_zero=True, alpha=0.2),
    "sigmoid": _unary("sigmoid", -4.0, 4.0),
    "softmax": _softmax,
    "clamp": _clamp,
    "where": _where,
    "take": _take,
    "expand": _expand,
    "mean_abs_diff": _mean_abs_diff,
    "reshape": _reshape,
    "concat": _concat,
}


def compiled_problems(seed=0):
    """Small problems whose constraints add up to 20 compiled formulas.

    Parameters are jittered away from their initialisation so the check runs at
    a generic point rather than one where most implications are already satisfied.
    """
    from fuzzyc.scenarios import (DigitsConfig, digits_problem, make_glyphs, married_problem,
                                  scenario_married_republican)

    images, labels = make_glyphs(3, seed=seed)
    data = scenario_married_republican(seed, n=20, dim=4, label_frac=0.5)
    problems = {
        "digits": digits_problem(images, labels, DigitsConfig(seed=seed, hidden=4, centers_per_class=2)),
        "married_product": married_problem(data, seed=seed, hidden=5),
        "married_lukasiewicz": married_problem(data, seed=seed, hidden=5, tnorm="lukasiewicz"),
    }
    rng = np.random.default_rng(seed)
    for problem in problems.values():
        for model in problem.bindings.models():
            for p in model.parameters():
                p.value += rng.normal(0.0, 0.5, p.value.shape)
    return problems


def compiled_gradchecks():
    """Gradient reports for every constraint of :func:`compiled_problems`."""
    from fuzzyc.trainer import gradcheck

    out = {}
    for pname, problem in compiled_problems().items():
        for name, report in gradcheck(problem, batch=3).items():
            out[f"{pname}/{name}"] = report
    return out
