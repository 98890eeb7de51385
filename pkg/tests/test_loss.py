import math

import numpy as np
import pytest

from fuzzyc import lang
from fuzzyc.autodiff import Graph, Parameter, backward
from fuzzyc.grounding import EXHAUSTIVE, ground
from fuzzyc.loss import (EmptyObjective, LossError, NegativeWeight, UnknownGroup, default_mapping, map_loss,
                         mapping_name, partition, raw_neglog, total_cost)
from fuzzyc.scenarios import scenario_faces_compile_only
from fuzzyc.trainer import constraint_loss

import oracle


def test_map_loss_examples():
    assert map_loss(0.7, "linear") == pytest.approx(0.3, abs=1e-15)
    assert map_loss(1.0, "neglog") == 0.0
    assert map_loss(1.0, "linear") == 0.0
    assert map_loss(math.exp(-2.0), "neglog") == pytest.approx(2.0, abs=1e-15)


def test_neglog_is_protected():
    assert map_loss(0.0, "neglog") == pytest.approx(-math.log(1e-12))
    assert raw_neglog(0.0) == math.inf


def test_mapping_names():
    assert mapping_name("NegLog") == "neglog"
    assert mapping_name("a") == "linear" and mapping_name("b") == "neglog"
    assert default_mapping("product") == "neglog" and default_mapping("goedel") == "linear"
    with pytest.raises(LossError):
        mapping_name("hinge")


@pytest.mark.parametrize("mapping", ["linear", "neglog"])
def test_mappings_strictly_decrease(mapping):
    grid = np.linspace(1e-6, 1.0, 1001)
    losses = [map_loss(t, mapping) for t in grid]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_map_loss_on_nodes():
    g = Graph()
    t = g.param(Parameter("t", 0.25))
    out = map_loss(t, "neglog")
    assert float(out.value) == pytest.approx(math.log(4.0))
    assert float(backward(g, out)["t"]) == pytest.approx(-4.0)


def test_total_cost_examples():
    assert total_cost([(1.0, 0.3), (2.0, 0.1)]) == pytest.approx(0.5, abs=1e-15)
    assert total_cost([(1.0, 0.0), (3.0, 0.0)]) == 0.0
    assert total_cost([]) == 0.0
    with pytest.raises(NegativeWeight):
        total_cost([(-1.0, 0.3)])


def test_total_cost_gradient_reaches_every_term():
    g = Graph()
    a = g.param(Parameter("a", 0.5))
    b = g.param(Parameter("b", 0.8))
    cost = total_cost([(1.0, map_loss(a, "linear")), (2.0, map_loss(b, "neglog"))], g)
    grads = backward(g, cost)
    assert float(grads["a"]) == pytest.approx(-1.0)
    assert float(grads["b"]) == pytest.approx(-2.0 / 0.8)


def test_cross_entropy_identity(rng):
    for _ in range(100):
        problem, c, p = oracle.cross_entropy_instance(rng)
        table = ground(c, problem.domains, EXHAUSTIVE)
        g = Graph()
        loss, _ = constraint_loss(g, c, table, problem, "neglog", scale_rows=False)
        cost = total_cost([(1.0, loss)], g)
        assert float(cost.value) == pytest.approx(-np.log(p).sum(), abs=1e-9)


def _specs(text):
    sig = lang.Signature(predicates={n: lang.PredicateSig(1) for n in ("a", "b", "c")},
                         domains={"D": lang.DomainSig((1,))})
    from fuzzyc.semantics import compile_spec
    return [compile_spec(s, sig) for s in lang.parse_constraints(text)]


def test_partition_adversarial_split():
    cs = _specs("group=gen: forall x: a(x)\ngroup=gen: forall x: b(x)\ngroup=disc: forall x: c(x)")
    objs = partition(cs, [{"name": "generator", "groups": ["gen"], "trainable": ["g"]},
                          {"name": "discriminator", "groups": ["disc"], "trainable": ["d"], "lr": 0.1}])
    assert objs[0].constraints == ["c0", "c1"] and objs[1].constraints == ["c2"]
    assert objs[1].lr == 0.1 and objs[0].steps == 1


def test_partition_shared_group():
    cs = _specs("forall x: a(x)")
    objs = partition(cs, [{"name": "x", "groups": ["main"], "trainable": ["m"]},
                          {"name": "y", "groups": ["main"], "trainable": ["n"]}])
    assert objs[0].constraints == objs[1].constraints == ["c0"]


def test_partition_errors():
    cs = _specs("group=odd: forall x: a(x)")
    with pytest.raises(UnknownGroup):
        partition(cs, [{"name": "main", "groups": ["main"], "trainable": ["m"]}])
    with pytest.raises(EmptyObjective):
        partition(cs, [{"name": "main", "groups": ["odd"], "trainable": ["m"]},
                       {"name": "idle", "groups": ["none"], "trainable": ["m"]}])
    with pytest.raises(EmptyObjective):
        partition(cs, [{"name": "main", "groups": ["odd"]}])


def test_face_constraints_split_into_two_players():
    cs = scenario_faces_compile_only()
    groups = {c.group for c in cs}
    assert groups == {"generator", "discriminator"}
    objs = partition(cs, [{"name": "gen", "groups": ["generator"], "trainable": ["e"]},
                          {"name": "disc", "groups": ["discriminator"], "trainable": ["d_M"]}])
    assert len(objs[0].constraints) + len(objs[1].constraints) == len(cs)
