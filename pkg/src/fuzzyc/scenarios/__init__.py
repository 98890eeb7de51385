"""Shipped scenarios: Married/Republican, next/previous digits, and the face rules (compile only)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import lang
from ..autodiff import Graph
from ..grounding import Bindings, Domain, PredicateBinding, evaluate_constraint, ground
from ..models import GivenTable, MLPBinding, RBFBinding
from ..semantics import TNORMS, CompiledConstraint, compile_spec
from ..trainer import Problem, TrainConfig, TrainReport, build_problem, train
from .glyphs import make_glyphs, to_pgm

ASSET_VERSION = "v1"


def asset_path(name: str) -> Path:
    return Path(str(resources.files(__package__) / ASSET_VERSION / name))


def read_asset(name: str) -> str:
    return asset_path(name).read_text(encoding="utf-8")


def manifest() -> dict:
    return json.loads(read_asset("manifest.json"))


# ---------------------------------------------------------------------------
# Married / Republican


@dataclass
class MarriedData:
    features: np.ndarray   # [n, d]
    party: np.ndarray      # [n] 1 = Republican
    spouse: np.ndarray     # [n] index of the partner
    labelled: np.ndarray   # [n] bool, supervision available
    givens: GivenTable

    @property
    def pairs(self) -> np.ndarray:
        """Each married couple once, as ``[m, 2]`` indices."""
        i = np.arange(len(self.spouse))
        keep = i < self.spouse
        return np.stack([i[keep], self.spouse[keep]], axis=1)


def scenario_married_republican(seed: int = 0, n: int = 200, dim: int = 16, label_frac: float = 0.2,
                                separation: float = 0.9, household: float = 0.5,
                                individual: float = 1.0) -> MarriedData:
    """Synthetic people with a party, a spouse of the same party and a few party labels.

    A person's features are the couple's shared household vector plus
    individual noise; the party shifts the household along a fixed direction.
    """
    rng = np.random.default_rng(seed)
    couples = n // 2
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    party_c = rng.permutation(np.arange(couples) % 2)
    hh = rng.normal(0.0, household, size=(couples, dim)) + np.outer(2 * party_c - 1, direction) * separation
    order = rng.permutation(n)
    couple_of = np.empty(n, dtype=int)
    couple_of[order] = np.arange(n) // 2
    features = hh[couple_of] + rng.normal(0.0, individual, size=(n, dim))
    party = party_c[couple_of]
    spouse = np.empty(n, dtype=int)
    for c in range(couples):
        a, b = order[2 * c], order[2 * c + 1]
        spouse[a], spouse[b] = b, a
    labelled = np.zeros(n, dtype=bool)
    labelled[rng.choice(n, size=int(round(label_frac * n)), replace=False)] = True
    givens = GivenTable(defaults={"Married": 0.0})
    for i in range(n):
        givens.set("Married", (str(i), str(spouse[i])), 1.0)
        givens.set("SR", str(i), float(labelled[i] and party[i] == 1))
        givens.set("SNR", str(i), float(labelled[i] and party[i] == 0))
        givens.set("TrueRepublican", str(i), float(party[i]))
    return MarriedData(features, party, spouse, labelled, givens)


def married_signature(dim: int) -> lang.Signature:
    return lang.Signature(
        predicates={
            "Married": lang.PredicateSig(2, "given", ("People", "People")),
            "SR": lang.PredicateSig(1, "given", ("People",)),
            "SNR": lang.PredicateSig(1, "given", ("People",)),
            "Republican": lang.PredicateSig(1, "learnable", ("People",)),
        },
        domains={"People": lang.DomainSig((dim,))},
    )


def married_problem(data: MarriedData, with_rule: bool = True, seed: int = 0, hidden: int = 50,
                    tnorm: str = "product") -> Problem:
    dim = data.features.shape[1]
    specs = lang.parse_constraints(read_asset("married_republican.fol"))
    if not with_rule:
        specs = [s for s in specs if s.group != "rule"]
    model = MLPBinding("f_R", dim, 1, hidden=hidden, rng=np.random.default_rng(seed))
    bindings = Bindings(predicates={
        "Married": PredicateBinding(given=data.givens),
        "SR": PredicateBinding(given=data.givens),
        "SNR": PredicateBinding(given=data.givens),
        "Republican": PredicateBinding(model=model),
    })
    domains = {"People": Domain("People", data.features)}
    groups = sorted({s.group for s in specs})
    return build_problem(specs, married_signature(dim), domains, bindings,
                         [{"name": "main", "groups": groups, "trainable": ["Republican"]}], tnorm)


def married_config(seed: int = 0, epochs: int = 400, lr: float = 0.01) -> TrainConfig:
    return TrainConfig(seed=seed, tnorm="product", epochs=epochs, lr=lr, batch_size=0, early_stop=None)


@dataclass
class MarriedResult:
    accuracy_with: float
    accuracy_without: float
    married_agreement: float  # fraction of couples with |f_R(a) - f_R(b)| < 0.2
    report_with: TrainReport
    report_without: TrainReport
    predictions_with: np.ndarray
    predictions_without: np.ndarray


def _heldout_accuracy(pred: np.ndarray, data: MarriedData) -> float:
    mask = ~data.labelled
    return float(np.mean((pred[mask] > 0.5) == (data.party[mask] == 1)))


def run_married_republican(seed: int = 0, epochs: int = 400, lr: float = 0.01, out_dir=None,
                           **data_kw) -> MarriedResult:
    """Train with and without the marriage rule on the same data, seed and epochs.

    With ``out_dir`` the two runs write their checkpoints and reports to
    ``with_rule/`` and ``without_rule/`` below it.
    """
    data = scenario_married_republican(seed, **data_kw)
    preds, reports = {}, {}
    for with_rule in (True, False):
        problem = married_problem(data, with_rule, seed)
        cfg = married_config(seed, epochs, lr)
        if out_dir is not None:
            cfg.out_dir = str(Path(out_dir) / ("with_rule" if with_rule else "without_rule"))
        reports[with_rule] = train(problem, cfg)
        preds[with_rule] = problem.bindings.predicates["Republican"].model.predict(data.features)[:, 0]
    pairs = data.pairs
    gap = np.abs(preds[True][pairs[:, 0]] - preds[True][pairs[:, 1]])
    return MarriedResult(_heldout_accuracy(preds[True], data), _heldout_accuracy(preds[False], data),
                         float(np.mean(gap < 0.2)), reports[True], reports[False], preds[True], preds[False])


_MARRIED_TOML = """\
# Married/Republican on synthetic people; regenerate with scripts/make_married_config.py
seed = {seed}
tnorm = "product"
epochs = {epochs}
lr = {lr}
batch_size = 0
early_stop = false
constraints = "married_republican.fol"
out_dir = "runs/married"

[domains.People]
file = "people.csv"

[givens]
file = "givens.csv"
defaults = {{ Married = 0.0 }}

[models.f_R]
kind = "mlp"
input = "People"
outputs = 1
hidden = 50

[predicates.Married]
given = true
domains = ["People", "People"]

[predicates.SR]
given = true
domains = ["People"]

[predicates.SNR]
given = true
domains = ["People"]

[predicates.Republican]
model = "f_R"
domains = ["People"]

[[objectives]]
name = "main"
groups = ["main", "rule"]
trainable = ["f_R"]
"""


def write_married_config(out_dir, seed: int = 0, epochs: int = 400, lr: float = 0.01, **data_kw) -> Path:
    """Write a self-contained config directory (data, givens, rules, TOML); returns the TOML path."""
    from ..trainer import save_domain_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = scenario_married_republican(seed, **data_kw)
    save_domain_csv(out / "people.csv", Domain("People", data.features))
    givens = GivenTable(values={k: v for k, v in data.givens.values.items() if k != "TrueRepublican"},
                        defaults=dict(data.givens.defaults))
    givens.to_csv(out / "givens.csv")
    (out / "married_republican.fol").write_text(read_asset("married_republican.fol"), encoding="utf-8")
    np.savetxt(out / "party.txt", data.party, fmt="%d")
    path = out / "married.toml"
    path.write_text(_MARRIED_TOML.format(seed=seed, epochs=epochs, lr=lr), encoding="utf-8")
    return path


def married_rule_truth_on_labels(data: MarriedData, tnorm: str = "product") -> float:
    """Truth of the marriage rule with Republican read from the ground-truth parties."""
    spec = next(s for s in lang.parse_constraints(read_asset("married_republican.fol")) if s.group == "rule")
    sig = married_signature(data.features.shape[1])
    sig.predicates["Republican"] = lang.PredicateSig(1, "given", ("People",))
    c = compile_spec(spec, sig, tnorm)
    truth = GivenTable(values={"Republican": data.givens.values["TrueRepublican"]},
                       defaults={})
    bindings = Bindings(predicates={"Married": PredicateBinding(given=data.givens),
                                    "Republican": PredicateBinding(given=truth)})
    domains = {"People": Domain("People", data.features)}
    out, _ = evaluate_constraint(c, ground(c, domains), bindings, domains)
    return float(out.value)


# ---------------------------------------------------------------------------
# next / previous digits

DIGIT_PREDICATES = ("zero", "one", "two")
GIVEN_DIGITS = ("isZero", "isOne", "isTwo")


def digits_signature() -> lang.Signature:
    preds = {g: lang.PredicateSig(1, "given", ("Image",)) for g in GIVEN_DIGITS}
    preds.update({p: lang.PredicateSig(1, "learnable", ("Image",)) for p in DIGIT_PREDICATES})
    return lang.Signature(
        predicates=preds,
        functions={"next": lang.FunctionSig(("Image",), "Image"),
                   "previous": lang.FunctionSig(("Image",), "Image")},
        domains={"Image": lang.DomainSig((8, 8), "image")},
    )


def digits_givens(labels: np.ndarray) -> GivenTable:
    table = GivenTable()
    for i, lab in enumerate(labels):
        for k, name in enumerate(GIVEN_DIGITS):
            table.set(name, str(i), float(lab == k))
    return table


@dataclass
class DigitsConfig:
    seed: int = 0
    per_class: int = 1500
    test_per_class: int = 100
    epochs: int = 8
    lr: float = 0.02
    batch_size: int = 32
    hidden: int = 50
    centers_per_class: int = 30
    share_first_layer: bool = False
    early_stop: Optional[float] = None
    out_dir: Optional[str] = None
    schedule: str = "constant"


def digits_problem(images: np.ndarray, labels: np.ndarray, cfg: DigitsConfig) -> Problem:
    ss = np.random.SeedSequence(cfg.seed).spawn(3)
    flat = images.reshape(len(images), -1)
    rbf = RBFBinding.from_data("digits", flat, labels, 3, cfg.centers_per_class, np.random.default_rng(ss[0]))
    nxt = MLPBinding("next", 64, 64, cfg.hidden, "sigmoid", np.random.default_rng(ss[1]))
    prv = MLPBinding("previous", 64, 64, cfg.hidden, "sigmoid", np.random.default_rng(ss[2]))
    if cfg.share_first_layer:
        prv.share_first_layer(nxt)
    givens = digits_givens(labels)
    bindings = Bindings(
        predicates={**{g: PredicateBinding(given=givens) for g in GIVEN_DIGITS},
                    **{p: PredicateBinding(model=rbf, output=k) for k, p in enumerate(DIGIT_PREDICATES)}},
        functions={"next": nxt, "previous": prv},
        codomain_shapes={"next": (8, 8), "previous": (8, 8)},
    )
    specs = lang.parse_constraints(read_asset("toy_digits.fol"))
    domains = {"Image": Domain("Image", images, kind="image")}
    return build_problem(specs, digits_signature(), domains, bindings,
                         [{"name": "models", "groups": ["main"], "trainable": ["zero", "next", "previous"]}],
                         "product", "pixel")


@dataclass
class DigitsResult:
    next_accuracy: float       # fraction of test x with class(next(x)) == c+1 mod 3
    previous_accuracy: float
    cycle_error_pn: float      # mean |previous(next(x)) - x|
    cycle_error_np: float      # mean |next(previous(x)) - x|
    circular_accuracy: float   # class(next^3(x)) == class(x)
    discriminator_accuracy: float
    report: TrainReport
    grid_path: Optional[str]
    problem: Problem = field(repr=False, default=None)


def classify(problem: Problem, images: np.ndarray) -> np.ndarray:
    rbf = problem.bindings.predicates["zero"].model
    return np.argmax(rbf.predict(images.reshape(len(images), -1)), axis=1)


def generate(problem: Problem, fn: str, images: np.ndarray) -> np.ndarray:
    model = problem.bindings.functions[fn]
    return model.predict(images.reshape(len(images), -1)).reshape(images.shape)


def digits_metrics(problem: Problem, images: np.ndarray, labels: np.ndarray) -> dict:
    nxt = generate(problem, "next", images)
    prv = generate(problem, "previous", images)
    return {
        "next_accuracy": float(np.mean(classify(problem, nxt) == (labels + 1) % 3)),
        "previous_accuracy": float(np.mean(classify(problem, prv) == (labels - 1) % 3)),
        "cycle_error_pn": float(np.mean(np.abs(generate(problem, "previous", nxt) - images))),
        "cycle_error_np": float(np.mean(np.abs(generate(problem, "next", prv) - images))),
        "circular_accuracy": float(np.mean(
            classify(problem, generate(problem, "next", generate(problem, "next", nxt))) == labels)),
        "discriminator_accuracy": float(np.mean(classify(problem, images) == labels)),
    }


def write_digit_grid(problem: Problem, images: np.ndarray, path, rows: int = 9):
    """PGM grid with columns (input, next(input), previous(input))."""
    nxt = generate(problem, "next", images[:rows])
    prv = generate(problem, "previous", images[:rows])
    return to_pgm([[images[i], nxt[i], prv[i]] for i in range(min(rows, len(images)))], path)


def run_task_toy_digits(cfg: Optional[DigitsConfig] = None, callback=None) -> DigitsResult:
    cfg = cfg or DigitsConfig()
    images, labels = make_glyphs(cfg.per_class + cfg.test_per_class, seed=cfg.seed)
    n_train = 3 * cfg.per_class
    train_x, train_y = images[:n_train], labels[:n_train]
    test_x, test_y = images[n_train:], labels[n_train:]
    problem = digits_problem(train_x, train_y, cfg)
    tc = TrainConfig(seed=cfg.seed, tnorm="product", equality="pixel", epochs=cfg.epochs, lr=cfg.lr,
                     batch_size=cfg.batch_size, early_stop=cfg.early_stop, out_dir=cfg.out_dir,
                     schedule=cfg.schedule)
    report = train(problem, tc, callback)
    metrics = digits_metrics(problem, test_x, test_y)
    report.final.update(metrics)
    grid = None
    if cfg.out_dir:
        grid = str(Path(cfg.out_dir) / "digits_grid.pgm")
        write_digit_grid(problem, test_x, grid)
        (Path(cfg.out_dir) / "report.json").write_text(report.to_json())
    return DigitsResult(report=report, grid_path=grid, problem=problem, **metrics)


# ---------------------------------------------------------------------------
# faces (compile only)

FACE_GIVENS = ("S_M", "S_F", "S_E")
FACE_DISCRIMINATORS = ("d_M", "d_F", "d_E")
FACE_GENERATORS = ("g_M", "g_F", "g_E")


def faces_signature(image_shape=(64, 64, 3), latent: int = 16) -> lang.Signature:
    preds = {s: lang.PredicateSig(1, "given", ("Image",)) for s in FACE_GIVENS}
    preds.update({d: lang.PredicateSig(1, "learnable", ("Image",)) for d in FACE_DISCRIMINATORS})
    funcs = {"e": lang.FunctionSig(("Image",), "Latent")}
    funcs.update({g: lang.FunctionSig(("Latent",), "Image") for g in FACE_GENERATORS})
    return lang.Signature(preds, funcs, {"Image": lang.DomainSig(tuple(image_shape), "image"),
                                         "Latent": lang.DomainSig((latent,))})


def scenario_faces_compile_only(tnorm: str = "product") -> List[CompiledConstraint]:
    sig = faces_signature()
    specs = lang.parse_constraints(read_asset("faces.fol"))
    return [compile_spec(s, sig, tnorm, "pixel") for s in specs]


SCENARIO_FILES = ("toy_digits.fol", "married_republican.fol", "faces.fol")


def scenario_signature(fname: str) -> lang.Signature:
    return {"toy_digits.fol": digits_signature,
            "married_republican.fol": lambda: married_signature(16),
            "faces.fol": faces_signature}[fname]()


def compile_all(tnorms=TNORMS) -> Dict[str, Dict[str, int]]:
    """Compile every shipped constraint file under every t-norm; returns constraint counts."""
    out: Dict[str, Dict[str, int]] = {}
    for fname in SCENARIO_FILES:
        sig = scenario_signature(fname)
        specs = lang.parse_constraints(read_asset(fname))
        for t in tnorms:
            out.setdefault(fname, {})[t] = len([compile_spec(s, sig, t, "pixel") for s in specs])
    return out
