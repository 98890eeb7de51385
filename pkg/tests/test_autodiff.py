import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzyc.autodiff import (OPS, BudgetExceeded, Graph, NonFiniteValue, Parameter, SeedNotScalar, ShapeMismatch,
                             backward, check_gradients, descendants, forward)

from gradcases import PRIMITIVE_CASES


def _param(g, name, value):
    return g.param(Parameter(name, np.asarray(value, dtype=float)))


def test_forward_examples():
    g = Graph()
    assert float((g.const(0.5) * g.const(0.4)).value) == pytest.approx(0.2, abs=1e-16)
    assert float(g.neg(g.log(g.const(1.0))).value) == 0.0
    # Lukasiewicz implication min(1, 1 - x + y) at (0.9, 0.3)
    out = g.minimum(g.const(1.0), g.const(1.0) - g.const(0.9) + g.const(0.3))
    assert float(out.value) == pytest.approx(0.4, abs=1e-15)


def test_backward_examples():
    g = Graph()
    x = _param(g, "x", 0.5)
    out = x * _param(g, "y", 0.4)
    assert float(backward(g, out)["x"]) == pytest.approx(0.4)

    g = Graph()
    x = _param(g, "x", 0.25)
    assert float(backward(g, g.neg(g.log(x)))["x"]) == pytest.approx(-4.0)


def test_every_op_has_a_case():
    assert set(PRIMITIVE_CASES) == set(OPS)


@pytest.mark.parametrize("op", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_at_100_points(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    for _ in range(100):
        g, seed = PRIMITIVE_CASES[op](rng)
        report = check_gradients(g, seed, h=1e-5, tolerance=1e-4)
        assert not report.skipped, report.notes
        assert report.max_rel_error < 1e-4, report.notes


def test_mlp_loss_gradcheck(rng):
    g = Graph()
    x = g.const(rng.normal(size=(6, 3)))
    w1 = _param(g, "w1", rng.normal(size=(3, 5)))
    w2 = _param(g, "w2", rng.normal(size=(5, 1)))
    p = g.sigmoid(g.matmul(g.tanh(g.matmul(x, w1)), w2))
    y = g.const((rng.random((6, 1)) < 0.5).astype(float))
    loss = g.neg(g.sum(y * g.log(p) + (1.0 - y) * g.log(1.0 - p)))
    report = check_gradients(g, loss)
    assert report.n_checked == 20 and report.max_rel_error < 1e-4


def test_tie_point_is_skipped():
    g = Graph()
    a = _param(g, "a", [0.3, 0.7])
    out = g.sum(g.maximum(a, g.const(0.7)))
    report = check_gradients(g, out)
    assert report.skipped and "max" in report.notes[0]


def test_constant_graph_reports_zero():
    g = Graph()
    out = g.sum(g.const([1.0, 2.0]) * 3.0)
    report = check_gradients(g, out)
    assert report.max_rel_error == 0.0 and report.n_checked == 0
    assert backward(g, out) == {}


def test_min_max_ties_route_to_first_argument():
    g = Graph()
    a, b = _param(g, "a", 0.5), _param(g, "b", 0.5)
    grads = backward(g, g.minimum(a, b) + g.maximum(a, b))
    assert float(grads["a"]) == 2.0 and float(grads["b"]) == 0.0


def test_abs_subgradient_at_zero():
    g = Graph()
    x = _param(g, "x", 0.0)
    assert float(backward(g, g.abs(x))["x"]) == 0.0


def test_log_is_protected_at_zero():
    g = Graph()
    x = _param(g, "x", 0.0)
    out = g.log(x)
    assert np.isfinite(out.value) and float(out.value) == pytest.approx(np.log(1e-12))
    assert float(backward(g, out)["x"]) == 0.0


def test_seed_must_be_scalar():
    g = Graph()
    v = _param(g, "v", [1.0, 2.0])
    with pytest.raises(SeedNotScalar):
        backward(g, v * 2.0)


def test_shape_mismatch():
    g = Graph()
    with pytest.raises(ShapeMismatch):
        g.add(g.const(np.ones(3)), g.const(np.ones(4)))
    with pytest.raises(ShapeMismatch):
        g.matmul(g.const(np.ones((2, 3))), g.const(np.ones((2, 3))))


def test_non_finite_value():
    g = Graph()
    with pytest.raises(NonFiniteValue):
        g.div(g.const(1.0), g.const(0.0))


def test_budget():
    g = Graph(budget=3)
    g.const(1.0)
    g.const(2.0)
    g.const(3.0)
    with pytest.raises(BudgetExceeded):
        g.const(4.0)


def _sum_of_losses(rng):
    g = Graph()
    w = _param(g, "w", rng.normal(size=4))
    x = g.const(rng.normal(size=4))
    l1 = g.sum(g.tanh(w * x))
    l2 = g.sum(g.exp(w) * g.sigmoid(x))
    return g, l1, l2


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_gradient_is_linear(seed):
    rng = np.random.default_rng(seed)
    g, l1, l2 = _sum_of_losses(rng)
    total = l1 + l2
    gt = backward(g, total)["w"]
    g1 = backward(g, l1)["w"]
    g2 = backward(g, l2)["w"]
    np.testing.assert_allclose(gt, g1 + g2, rtol=0, atol=1e-12)


def test_forward_is_bit_identical(rng):
    g, l1, l2 = _sum_of_losses(rng)
    first = [v.copy() for v in forward(g)]
    second = forward(g)
    assert all(np.array_equal(a, b) for a, b in zip(first, second))


def test_partial_forward_matches_full(rng):
    g, l1, l2 = _sum_of_losses(rng)
    nid, p = g.params["w"]
    p.value += 0.1
    part = [v.copy() for v in forward(g, descendants(g, nid))]
    full = forward(g)
    assert all(np.array_equal(a, b) for a, b in zip(part, full))


def test_expand_equals_take(rng):
    a = rng.normal(size=(3, 2))
    w = rng.normal(size=(12, 2))
    out = {}
    for kind in ("expand", "take"):
        g = Graph()
        x = _param(g, "x", a)
        if kind == "expand":
            y = g.expand(x, (3, 1), (3, 4))
        else:
            y = g.take(x, np.repeat(np.arange(3), 4))
        loss = g.sum(y * g.const(w))
        out[kind] = (y.value, backward(g, loss)["x"])
    np.testing.assert_array_equal(out["expand"][0], out["take"][0])
    np.testing.assert_allclose(out["expand"][1], out["take"][1], atol=1e-14)


def test_mean_abs_diff_equals_materialised_grid(rng):
    a0, b0 = rng.random((2, 5)), rng.random((3, 5))
    g = Graph()
    a, b = _param(g, "a", a0), _param(g, "b", b0)
    fused = g.mean_abs_diff(a, b, (2, 1), (1, 3))
    ga = backward(g, g.sum(fused))

    h = Graph()
    a2, b2 = _param(h, "a", a0), _param(h, "b", b0)
    ea = h.take(a2, np.repeat(np.arange(2), 3))
    eb = h.take(b2, np.tile(np.arange(3), 2))
    plain = h.mean(h.abs(ea - eb), axis=1)
    gb = backward(h, h.sum(plain))
    np.testing.assert_allclose(fused.value, plain.value, atol=1e-15)
    for k in ("a", "b"):
        np.testing.assert_allclose(ga[k], gb[k], atol=1e-14)


def test_constants_get_no_gradient_work():
    g = Graph()
    c = g.const(np.ones(3))
    w = _param(g, "w", np.ones(3))
    out = g.sum(g.exp(c) * w)
    backward(g, out)
    assert not c.needs_grad and c.grad is None
    assert w.needs_grad
