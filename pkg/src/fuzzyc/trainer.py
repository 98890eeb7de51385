"""Adam, the training loop over objectives, evaluation and config loading."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import lang, loss as lossmod
from .autodiff import Graph, Parameter, backward, check_gradients
from .grounding import (EXHAUSTIVE, Bindings, Domain, Minibatch, PredicateBinding, evaluate_constraint,
                        evaluate_log_truth, ground)
from .models import GivenTable, MLPBinding, ModelBinding, RBFBinding, load_checkpoint, save_checkpoint
from .semantics import CompiledConstraint, QuantifierNode, compile_spec, tnorm_name

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)


class TrainError(Exception):
    pass


class ShapeMismatch(TrainError):
    pass


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update of every parameter that has a gradient."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.value.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.value.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        p.value = p.value - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


# ---------------------------------------------------------------------------
# problem assembly


@dataclass
class Problem:
    signature: lang.Signature
    domains: Dict[str, Domain]
    bindings: Bindings
    constraints: List[CompiledConstraint]
    objectives: List[lossmod.Objective]

    @property
    def models(self) -> Dict[str, ModelBinding]:
        return {m.name: m for m in self.bindings.models()}

    def constraint(self, name: str) -> CompiledConstraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)


def _resolve_trainable(names, bindings: Bindings) -> tuple:
    models = {m.name: m for m in bindings.models()}
    out = []
    for n in names:
        if n in models:
            out.append(n)
        elif n in bindings.functions:
            out.append(bindings.functions[n].name)
        elif n in bindings.predicates and bindings.predicates[n].model is not None:
            out.append(bindings.predicates[n].model.name)
        else:
            raise lang.UnknownSymbol(n)
    return tuple(dict.fromkeys(out))


def build_problem(specs: Sequence[lang.ConstraintSpec], signature: lang.Signature,
                  domains: Dict[str, Domain], bindings: Bindings, objectives: Sequence[Mapping],
                  tnorm: str = "product", equality: Optional[str] = None) -> Problem:
    """Validate and compile every constraint, then partition them into objectives.

    Symbol errors surface here, before any training starts.
    """
    compiled = []
    for spec in specs:
        try:
            compiled.append(compile_spec(spec, signature, tnorm, equality))
        except Exception as exc:
            raise TrainError(f"constraint {spec.name} (line {spec.line}): {exc}") from exc
    for c in compiled:
        for s in c.slots:
            a = s.atom
            if isinstance(a, lang.PredicateAtom) and a.symbol not in bindings.predicates:
                raise lang.UnknownSymbol(a.symbol)
    objs = lossmod.partition(compiled, objectives)
    for o in objs:
        o.trainable = _resolve_trainable(o.trainable, bindings)
    return Problem(signature, domains, bindings, compiled, objs)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    seed: int = 0
    tnorm: str = "product"
    mapping: Optional[str] = None  # default: neglog for product, linear otherwise
    equality: Optional[str] = None
    epochs: int = 300
    lr: float = 1e-4
    batch_size: int = 64  # 0 grounds every constraint exhaustively
    steps_per_epoch: Optional[int] = None
    checkpoint_every: int = 0
    early_stop: Optional[float] = 0.9
    out_dir: Optional[str] = None
    row_cap: int = 1_000_000
    schedule: str = "constant"  # or "cosine": anneal each objective's lr to 0 over the run
    source: Optional[str] = None  # config file this run came from, recorded in checkpoints


def scheduled_lr(base: float, schedule: str, step: int, total: int) -> float:
    if schedule == "constant":
        return base
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / max(total, 1)))
    raise TrainError(f"unknown lr schedule {schedule!r}")


@dataclass
class TrainReport:
    records: List[dict] = field(default_factory=list)  # one per (epoch, constraint)
    objective_losses: List[dict] = field(default_factory=list)
    wall_time: float = 0.0
    epochs_run: int = 0
    final: Dict[str, float] = field(default_factory=dict)
    checkpoints: List[str] = field(default_factory=list)

    def truths(self, epoch: int) -> Dict[str, float]:
        return {r["constraint"]: r["truth"] for r in self.records if r["epoch"] == epoch}

    def loss_curve(self, objective: str) -> List[float]:
        return [r["loss"] for r in self.objective_losses if r["objective"] == objective]

    def to_json(self, include_time: bool = True) -> str:
        d = asdict(self)
        if not include_time:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True, indent=1)


def _leading_forall_rows(c: CompiledConstraint, table) -> int:
    node, rows = c.template, 1
    while isinstance(node, QuantifierNode) and node.kind == "forall" and node.aggregation == "product":
        sizes = table.full_sizes or table.sizes
        rows *= sizes[node.qid]
        node = node.body
    return rows


def constraint_loss(graph: Graph, c: CompiledConstraint, table, problem: Problem, mapping: str,
                    scale_rows: bool):
    """Return (loss node, truth float) for one constraint on one grounding table.

    ``neglog`` goes through log space so that large product-forall folds never
    underflow; with ``scale_rows`` the loss is divided by the number of rows
    under the leading product-forall quantifiers (per-row mean for minibatches).
    """
    if mapping == "neglog":
        logt, _ = evaluate_log_truth(c, table, problem.bindings, problem.domains, graph)
        loss = -logt
        if scale_rows:
            loss = loss / float(_leading_forall_rows(c, table))
        return loss, float(np.exp(logt.value))
    truth, _ = evaluate_constraint(c, table, problem.bindings, problem.domains, graph)
    return 1.0 - truth, float(truth.value)


def _mapping_for(c: CompiledConstraint, config: TrainConfig) -> str:
    m = c.options.get("mapping") or config.mapping
    return lossmod.mapping_name(m) if m else lossmod.default_mapping(c.tnorm)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def _steps_per_epoch(problem: Problem, config: TrainConfig) -> int:
    if config.steps_per_epoch:
        return config.steps_per_epoch
    if config.batch_size <= 0:
        return 1
    biggest = max((len(problem.domains[p.domain]) for c in problem.constraints for p in c.plan
                   if p.kind == "forall"), default=1)
    return max(1, math.ceil(biggest / config.batch_size))


def objective_step(problem: Problem, objective: lossmod.Objective, config: TrainConfig,
                   state: AdamState, seed: int) -> tuple:
    """Ground, evaluate and update one objective; returns (cost, {constraint: truth})."""
    g = Graph()
    terms, truths = [], {}
    for ci, name in enumerate(objective.constraints):
        c = problem.constraint(name)
        mode = EXHAUSTIVE if config.batch_size <= 0 else Minibatch(config.batch_size, _seed(seed, ci))
        table = ground(c, problem.domains, mode, config.row_cap, problem.bindings)
        try:
            l, t = constraint_loss(g, c, table, problem, _mapping_for(c, config), config.batch_size > 0)
        except Exception as exc:
            raise TrainError(f"constraint {c.name}: {exc}") from exc
        terms.append((c.weight, l))
        truths[name] = t
    cost = lossmod.total_cost(terms, g)
    grads = backward(g, cost)
    models = problem.models
    params = {p.name: p for m in objective.trainable for p in models[m].parameters()}
    adam_step(params, {k: v for k, v in grads.items() if k in params}, state)
    return float(cost.value), truths


def _meta(config: TrainConfig, epoch: int) -> dict:
    meta = {"epoch": epoch, "seed": config.seed}
    if config.source:
        meta["config"] = config.source
    return meta


def train(problem: Problem, config: TrainConfig, callback=None) -> TrainReport:
    """Alternate over objectives in declared order, one Adam step each per training step."""
    t0 = time.perf_counter()
    report = TrainReport()
    base = {o.name: o.lr if o.lr is not None else config.lr for o in problem.objectives}
    states = {o.name: AdamState(lr=base[o.name]) for o in problem.objectives}
    steps = _steps_per_epoch(problem, config)
    total = steps * config.epochs
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for epoch in range(config.epochs):
        sums: Dict[str, List[float]] = {}
        obj_sums: Dict[str, List[float]] = {}
        for step in range(steps):
            for oi, obj in enumerate(problem.objectives):
                states[obj.name].lr = scheduled_lr(base[obj.name], config.schedule, epoch * steps + step, total)
                for rep in range(obj.steps):
                    cost, truths = objective_step(problem, obj, config, states[obj.name],
                                                  _seed(config.seed, epoch, step, oi, rep))
                    obj_sums.setdefault(obj.name, []).append(cost)
                    for k, v in truths.items():
                        sums.setdefault(k, []).append(v)
        for c in problem.constraints:
            vals = sums.get(c.name, [])
            report.records.append({"epoch": epoch, "constraint": c.name,
                                   "truth": float(np.mean(vals)) if vals else float("nan")})
        for name, vals in obj_sums.items():
            report.objective_losses.append({"epoch": epoch, "objective": name, "loss": float(np.mean(vals))})
        report.epochs_run = epoch + 1
        if callback is not None:
            callback(epoch, report)
        if out_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            path = out_dir / f"checkpoint_{epoch + 1:04d}.npz"
            save_checkpoint(path, problem.bindings.models(), _meta(config, epoch + 1))
            report.checkpoints.append(str(path))
        if config.early_stop is not None and all(
                r["truth"] > config.early_stop for r in report.records if r["epoch"] == epoch):
            log.info("early stop at epoch %d", epoch)
            break
    report.wall_time = time.perf_counter() - t0
    if out_dir:
        path = out_dir / "final.npz"
        save_checkpoint(path, problem.bindings.models(), _meta(config, report.epochs_run))
        report.checkpoints.append(str(path))
        (out_dir / "report.json").write_text(report.to_json())
    return report


def evaluate(problem: Problem, domains: Optional[Dict[str, Domain]] = None,
             row_cap: int = 1_000_000) -> Dict[str, float]:
    """Exhaustive truth degree of every constraint (optionally on other data)."""
    doms = domains or problem.domains
    out = {}
    for c in problem.constraints:
        table = ground(c, doms, EXHAUSTIVE, row_cap, problem.bindings)
        g = Graph(check_finite=False)
        view = Problem(problem.signature, doms, problem.bindings, problem.constraints, problem.objectives)
        logt, _ = evaluate_log_truth(c, table, view.bindings, doms, g)
        out[c.name] = float(np.exp(logt.value))
    return out


def gradcheck(problem: Problem, batch: int = 3, seed: int = 0, h: float = 1e-5, tolerance: float = 1e-4,
              tries: int = 8):
    """Finite-difference check of every constraint's training loss on small seeded groundings.

    ``batch <= 0`` grounds exhaustively.  A draw whose gradient is identically
    zero (every row satisfied) or which sits on a kink is redrawn with the next
    seed, up to ``tries`` times; the last report is kept either way.
    """
    reports = {}
    for ci, c in enumerate(problem.constraints):
        for t in range(tries):
            mode = EXHAUSTIVE if batch <= 0 else Minibatch(batch, _seed(seed, ci, t))
            table = ground(c, problem.domains, mode, bindings=problem.bindings)
            g = Graph()
            l, _ = constraint_loss(g, c, table, problem, "neglog", batch > 0)
            report = check_gradients(g, l, h, tolerance)
            flat = not report.skipped and not any(np.any(v) for v in backward(g, l).values())
            if flat:
                report.notes.append("zero gradient at this grounding")
            reports[c.name] = report
            if batch <= 0 or not (report.skipped or flat):
                break
    return reports


# ---------------------------------------------------------------------------
# config files


def load_domain_file(path, name: str, kind: str = "vector") -> Domain:
    """``.npy`` arrays or CSV with a ``#count=N shape=AxB`` header and ``id,v1,v2,...`` rows."""
    path = Path(path)
    if path.suffix == ".npy":
        return Domain(name, np.load(path), kind=kind)
    ids, rows, shape, count = [], [], None, None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    k, _, v = item.partition("=")
                    if k == "count":
                        count = int(v)
                    elif k == "shape":
                        shape = tuple(int(s) for s in v.split("x"))
                continue
            parts = line.split(",")
            ids.append(parts[0].strip())
            rows.append([float(x) for x in parts[1:]])
    arr = np.asarray(rows, dtype=np.float64)
    if count is not None and count != len(arr):
        raise TrainError(f"{path}: header says {count} elements, found {len(arr)}")
    if shape is not None:
        arr = arr.reshape((len(arr),) + shape)
    return Domain(name, arr, ids, kind)


def save_domain_csv(path, domain: Domain):
    shape = "x".join(str(s) for s in domain.shape)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#count={len(domain)} shape={shape}\n")
        for i, e in zip(domain.ids, domain.elements.reshape(len(domain), -1)):
            fh.write(i + "," + ",".join(repr(float(v)) for v in e) + "\n")


def _model_from_config(name: str, spec: Mapping, domains, givens: Optional[GivenTable], rng) -> ModelBinding:
    kind = spec.get("kind", "mlp")
    inputs = spec.get("input", [])
    inputs = [inputs] if isinstance(inputs, str) else list(inputs)
    in_dim = spec.get("in_dim") or sum(domains[d].flat_dim for d in inputs)
    if kind == "mlp":
        out_dim = spec.get("outputs")
        if out_dim is None and spec.get("codomain"):
            out_dim = domains[spec["codomain"]].flat_dim if spec["codomain"] in domains else spec.get("latent", 16)
        return MLPBinding(name, in_dim, int(out_dim or 1), hidden=spec.get("hidden", 50),
                          head=spec.get("head", "sigmoid"), rng=rng)
    if kind == "rbf":
        classes = spec.get("classes", 3)
        per_class = spec.get("per_class", 30)
        data = domains[inputs[0]]
        labels = None
        if spec.get("labels") and givens is not None:
            lab = np.full(len(data), -1)
            for k, pred in enumerate(spec["labels"]):
                lab[givens.dense(pred, [data.ids]) > 0.5] = k
            labels = lab
        return RBFBinding.from_data(name, data.elements, labels, classes, per_class, rng)
    raise TrainError(f"model {name}: unknown kind {kind!r}")


def load_config(path, constraints=None, all_trainable: bool = False) -> tuple:
    """Read a TOML config; returns ``(problem, TrainConfig)``.

    ``constraints`` replaces the configured constraint file.  With
    ``all_trainable`` the configured objectives are ignored in favour of one
    objective over every group (useful when only evaluating).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    base = path.parent
    tc = TrainConfig(**{k: cfg[k] for k in TrainConfig.__dataclass_fields__ if k in cfg})
    tc.tnorm = tnorm_name(tc.tnorm)
    tc.source = str(path.resolve())
    if tc.early_stop is False:  # TOML has no null
        tc.early_stop = None
    if tc.out_dir and not os.path.isabs(tc.out_dir):
        tc.out_dir = str(base / tc.out_dir)
    domains = {}
    for name, d in cfg.get("domains", {}).items():
        domains[name] = load_domain_file(base / d["file"], name, d.get("kind", "vector"))
    givens = None
    if "givens" in cfg:
        gcfg = cfg["givens"]
        givens = GivenTable.from_csv(base / gcfg["file"], gcfg.get("defaults"))
        for new, of in gcfg.get("complements", {}).items():
            givens.add_complement(new, of)
    seeds = np.random.SeedSequence(tc.seed).spawn(len(cfg.get("models", {})) + 1)
    models = {}
    for (name, m), ss in zip(sorted(cfg.get("models", {}).items()), seeds):
        models[name] = _model_from_config(name, m, domains, givens, np.random.default_rng(ss))
    for name, m in cfg.get("models", {}).items():
        if m.get("share_first_layer"):
            models[name].share_first_layer(models[m["share_first_layer"]])
    sig = lang.Signature(domains={n: lang.DomainSig(d.shape, d.kind) for n, d in domains.items()})
    bindings = Bindings()
    for name, p in cfg.get("predicates", {}).items():
        doms = tuple(p.get("domains", ())) or None
        arity = len(doms) if doms else p.get("arity", 1)
        if p.get("given"):
            if givens is None:
                raise TrainError(f"predicate {name} is given but no [givens] file is configured")
            sig.predicates[name] = lang.PredicateSig(arity, "given", doms)
            bindings.predicates[name] = PredicateBinding(given=givens)
        else:
            if p.get("model") not in models:
                raise lang.UnknownSymbol(p.get("model", name))
            sig.predicates[name] = lang.PredicateSig(arity, "learnable", doms)
            bindings.predicates[name] = PredicateBinding(model=models[p["model"]], output=p.get("output", 0))
    for name, f in cfg.get("functions", {}).items():
        if f.get("model") not in models:
            raise lang.UnknownSymbol(f.get("model", name))
        sig.functions[name] = lang.FunctionSig(tuple(f.get("domains", ())), f.get("codomain"))
        bindings.functions[name] = models[f["model"]]
        if f.get("codomain") in domains:
            bindings.codomain_shapes[name] = domains[f["codomain"]].shape
    specs = lang.load_constraints(Path(constraints) if constraints else base / cfg["constraints"])
    objectives = (not all_trainable and cfg.get("objectives")) or [{"name": "main", "groups": sorted({s.group for s in specs}),
                                            "trainable": sorted(models)}]
    problem = build_problem(specs, sig, domains, bindings, objectives, tc.tnorm, tc.equality)
    return problem, tc


def load_problem_checkpoint(problem: Problem, path) -> dict:
    return load_checkpoint(path, problem.bindings.models())
