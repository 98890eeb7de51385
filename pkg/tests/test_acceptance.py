"""Acceptance criteria 1 to 9, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.  The
digit task dominates the runtime (two full runs of a few minutes each).
"""
import itertools
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from fuzzyc import lang
from fuzzyc.autodiff import Graph, check_gradients
from fuzzyc.grounding import EXHAUSTIVE, evaluate_constraint, ground
from fuzzyc.loss import total_cost
from fuzzyc.scenarios import DigitsConfig, run_married_republican, run_task_toy_digits, scenario_faces_compile_only
from fuzzyc.scenarios.glyphs import read_pgm
from fuzzyc.semantics import TNORMS, compile_formula, eval_connective
from fuzzyc.trainer import constraint_loss

sys.path.insert(0, str(Path(__file__).parent))
import oracle  # noqa: E402
from gradcases import PRIMITIVE_CASES, compiled_gradchecks  # noqa: E402

_RUNS = {}
ACCEPTANCE_LINES = []  # printed in the terminal summary by conftest.py
_TMP = Path(tempfile.mkdtemp(prefix="fuzzyc-acceptance-"))


def _report(n, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{seconds:.2f}s]"
    ACCEPTANCE_LINES.append(line)
    return line


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# -- 1 and 2: connective tables ------------------------------------------------------


def _grid_errors():
    grid = [i / 10 for i in range(11)]
    worst = 0.0
    for tn in TNORMS:
        for x, y in itertools.product(grid, grid):
            worst = max(worst, abs(eval_connective("not", [x], tn) - oracle.neg(x)))
            for op, fn in oracle.CONNECTIVE.items():
                worst = max(worst, abs(eval_connective(op, [x, y], tn) - fn(tn, x, y)))
    return worst


def test_criterion_1_truth_tables():
    worst, dt = _timed(_grid_errors)
    ok = worst <= 1e-12 and dt < 1.0
    _report(1, ok, f"3 logics x 5 connectives on the 0.1 grid, max error {worst:.1e}", dt)
    assert ok


def _boolean_cases():
    truth = {"not": lambda a, b: not a, "and": lambda a, b: a and b, "or": lambda a, b: a or b,
             "implies": lambda a, b: (not a) or b, "iff": lambda a, b: a == b}
    cases = bad = 0
    for tn in TNORMS:
        for a, b in itertools.product((0.0, 1.0), repeat=2):
            for op, fn in truth.items():
                args = [a] if op == "not" else [a, b]
                cases += 1
                bad += eval_connective(op, args, tn) != float(fn(bool(a), bool(b)))
    return cases, bad


def test_criterion_2_classical_boundary():
    (cases, bad), dt = _timed(_boolean_cases)
    # every (logic, connective, input pair) combination: 3 x 5 x 4
    ok = bad == 0 and cases == 60 and dt < 1.0
    _report(2, ok, f"{cases} Boolean cases exact, {bad} mismatches", dt)
    assert ok


# -- 3: cross-entropy identity ----------------------------------------------------------


def _cross_entropy_errors():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        problem, c, p = oracle.cross_entropy_instance(rng)
        g = Graph()
        loss, _ = constraint_loss(g, c, ground(c, problem.domains, EXHAUSTIVE), problem, "neglog", False)
        worst = max(worst, abs(float(total_cost([(1.0, loss)], g).value) + np.log(p).sum()))
    return worst


def test_criterion_3_cross_entropy():
    worst, dt = _timed(_cross_entropy_errors)
    ok = worst <= 1e-9 and dt < 1.0
    _report(3, ok, f"100 instances, max |loss - sum(-log p)| {worst:.1e}", dt)
    assert ok


# -- 4: oracle equivalence ----------------------------------------------------------------


def _oracle_errors():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(500):
        f = oracle.random_formula(rng, depth=4, max_quant=2)
        assert oracle.quant_count(f) <= 2
        world = oracle.World(int(rng.integers(1, 7)), rng)
        typed = lang.validate(f, world.signature())
        tn = str(rng.choice(TNORMS))
        c = compile_formula(typed, tn, world.equality())
        want = world.truth(typed, {}, tn, {"forall": tn, "exists": tn})
        got, _ = evaluate_constraint(c, ground(c, world.domains()), world.bindings(), world.domains())
        worst = max(worst, abs(float(got.value) - want))
    return worst


def test_criterion_4_oracle_equivalence():
    worst, dt = _timed(_oracle_errors)
    ok = worst <= 1e-12
    _report(4, ok, f"500 random formulas, max error {worst:.1e}", dt)
    assert ok


# -- 5: gradient checks ---------------------------------------------------------------------


def _gradchecks():
    worst, failures = 0.0, []
    for op, build in sorted(PRIMITIVE_CASES.items()):
        rng = np.random.default_rng(sum(op.encode()))
        g, seed = build(rng)
        r = check_gradients(g, seed, h=1e-5, tolerance=1e-4)
        if r.skipped or r.max_rel_error >= 1e-4:
            failures.append(op)
        worst = max(worst, r.max_rel_error)
    compiled = compiled_gradchecks()
    for name, r in compiled.items():
        if r.skipped or r.max_rel_error >= 1e-4 or r.n_checked == 0:
            failures.append(name)
        worst = max(worst, r.max_rel_error)
    return len(PRIMITIVE_CASES), len(compiled), worst, failures


def test_criterion_5_gradient_checks():
    (n_ops, n_compiled, worst, failures), dt = _timed(_gradchecks)
    ok = not failures and n_compiled == 20 and dt < 30.0
    _report(5, ok, f"{n_ops} primitive ops + {n_compiled} compiled constraints, max rel error {worst:.1e}"
                   + (f", failing: {failures}" if failures else ""), dt)
    assert ok


# -- 6 and 7: scenarios ------------------------------------------------------------------------


def _married(tag):
    if tag not in _RUNS:
        _RUNS[tag] = _timed(lambda: run_married_republican(0, out_dir=_TMP / tag))
    return _RUNS[tag]


def _digits(tag):
    if tag not in _RUNS:
        _RUNS[tag] = _timed(lambda: run_task_toy_digits(DigitsConfig(seed=0, out_dir=str(_TMP / tag))))
    return _RUNS[tag]


def test_criterion_6_married_rule_helps():
    r, dt = _married("married_a")
    ok = r.accuracy_with > r.accuracy_without and r.married_agreement >= 0.9 and dt < 120.0
    _report(6, ok, f"held-out accuracy {r.accuracy_with:.4f} with rule vs {r.accuracy_without:.4f} without, "
                   f"couples within 0.2: {r.married_agreement:.3f}", dt)
    assert ok


def test_criterion_7_toy_digits():
    r, dt = _digits("digits_a")
    grid = read_pgm(r.grid_path) if r.grid_path and Path(r.grid_path).is_file() else None
    grid_ok = grid is not None and grid.shape[1] == 3 * 8 * 4 + 4
    ok = (r.next_accuracy >= 0.9 and r.previous_accuracy >= 0.9 and r.cycle_error_pn < 0.1
          and r.cycle_error_np < 0.1 and grid_ok and dt < 300.0)
    _report(7, ok, f"next {r.next_accuracy:.3f}, previous {r.previous_accuracy:.3f}, "
                   f"cycle errors {r.cycle_error_pn:.4f}/{r.cycle_error_np:.4f}, grid {'written' if grid_ok else 'missing'}",
            dt)
    assert ok


# -- 8: faces compile ---------------------------------------------------------------------------


def _faces():
    counts, errors = {}, []
    for t in TNORMS:
        try:
            counts[t] = len(scenario_faces_compile_only(t))
        except Exception as exc:  # any compile error fails the criterion
            errors.append(f"{t}: {exc}")
    return counts, errors


def test_criterion_8_faces_compile():
    (counts, errors), dt = _timed(_faces)
    ok = not errors and all(n == 20 for n in counts.values()) and len(counts) == 3
    _report(8, ok, f"faces.fol constraints per t-norm {counts}, {len(errors)} error(s)", dt)
    assert ok


# -- 9: determinism ---------------------------------------------------------------------------------


def _run_bytes(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.npz"))}


def test_criterion_9_determinism():
    t0 = time.perf_counter()
    diffs = []
    for kind, run in (("married", _married), ("digits", _digits)):
        (a, _), (b, _) = run(f"{kind}_a"), run(f"{kind}_b")
        reports = ((a.report_with, b.report_with), (a.report_without, b.report_without)) if kind == "married" \
            else ((a.report, b.report),)
        for ra, rb in reports:
            ja, jb = (r.to_json(include_time=False).replace(f"{kind}_b", f"{kind}_a") for r in (ra, rb))
            if ja != jb:
                diffs.append(f"{kind} report")
        ca, cb = _run_bytes(_TMP / f"{kind}_a"), _run_bytes(_TMP / f"{kind}_b")
        if not ca or ca != cb:
            diffs.append(f"{kind} checkpoints")
    dt = time.perf_counter() - t0
    ok = not diffs
    _report(9, ok, "second runs of 6 and 7 bit-identical" if ok else f"differences: {diffs}", dt)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
