"""Command line: compile, train, eval and gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import lang
from .models import load_checkpoint, read_checkpoint_header
from .semantics import TNORMS, compile_spec, tnorm_name


def _signature_for(path: Path, specs):
    from .scenarios import SCENARIO_FILES, scenario_signature

    if path.name in SCENARIO_FILES:
        return scenario_signature(path.name)
    return lang.infer_signature(s.formula for s in specs)


def cmd_compile(args) -> int:
    path = Path(args.file)
    try:
        specs = lang.load_constraints(path)
        sig = _signature_for(path, specs)
    except lang.FolError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return 1
    tnorms = TNORMS if args.tnorm == "all" else (tnorm_name(args.tnorm),)
    failures = 0
    for t in tnorms:
        for spec in specs:
            try:
                c = compile_spec(spec, sig, t, args.equality)
            except Exception as exc:  # report every failing line, then exit non-zero
                failures += 1
                print(f"{path}:{spec.line}: [{t}] {type(exc).__name__}: {exc}", file=sys.stderr)
                if not args.check:
                    return 1
                continue
            if not args.quiet:
                print(c.summary())
    if args.check:
        print(f"{path}: {len(specs)} constraint(s) x {len(tnorms)} t-norm(s), {failures} error(s)")
    return 1 if failures else 0


def cmd_train(args) -> int:
    from .grounding import BudgetExceeded
    from .trainer import evaluate, load_config, train

    problem, tc = load_config(args.config)
    for key in ("seed", "epochs", "lr", "out_dir"):
        v = getattr(args, key)
        if v is not None:
            setattr(tc, key, v)

    def progress(epoch, report):
        if args.verbose:
            print(f"epoch {epoch}: " + " ".join(f"{o['loss']:.4f}" for o in report.objective_losses
                                                 if o["epoch"] == epoch))

    report = train(problem, tc, progress)
    try:
        last = evaluate(problem)
    except BudgetExceeded:  # too large to ground exhaustively: show the last epoch's running means
        last = report.truths(report.epochs_run - 1)
    for name, t in last.items():
        print(f"{name}\t{t:.6f}")
    print(f"epochs={report.epochs_run} wall={report.wall_time:.1f}s")
    for ck in report.checkpoints[-1:]:
        print(f"checkpoint {ck}")
    return 0


def _domain_override(items):
    out = {}
    for item in items or ():
        name, sep, file = item.partition("=")
        if not sep:
            raise SystemExit(f"--domain expects NAME=FILE, got {item!r}")
        out[name] = file
    return out


def cmd_eval(args) -> int:
    from .trainer import evaluate, load_domain_file

    header = read_checkpoint_header(args.checkpoint)
    config = args.config or header.get("meta", {}).get("config")
    if not config:
        print("checkpoint does not record its config; pass --config", file=sys.stderr)
        return 2
    from .trainer import load_config

    problem, _ = load_config(config, constraints=args.constraints, all_trainable=True)
    load_checkpoint(args.checkpoint, problem.bindings.models())
    domains = dict(problem.domains)
    for name, file in _domain_override(args.domain).items():
        domains[name] = load_domain_file(file, name, domains[name].kind if name in domains else "vector")
    truths = evaluate(problem, domains)
    if args.json:
        print(json.dumps(truths, indent=1, sort_keys=True))
    else:
        for name, t in truths.items():
            print(f"{name}\t{t:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .trainer import gradcheck, load_config

    problem, tc = load_config(args.config)
    reports = gradcheck(problem, batch=args.batch, seed=tc.seed, h=args.h, tolerance=args.tolerance)
    bad = 0
    for name, r in reports.items():
        if r.skipped:
            status = "skipped (" + "; ".join(r.notes) + ")"
        elif r.max_rel_error < args.tolerance:
            status = "ok"
        else:
            status, bad = "FAIL", bad + 1
        print(f"{name}\t{r.max_rel_error:.3e}\t{r.n_checked}\t{status}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fuzzyc", description=__doc__)
    p.add_argument("--log", default="WARNING", help="logging level")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="parse, validate and compile a constraint file")
    c.add_argument("file")
    c.add_argument("--tnorm", default="product", help="goedel, lukasiewicz, product or all")
    c.add_argument("--equality", default="pixel")
    c.add_argument("--check", action="store_true", help="report every error and a summary line")
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(fn=cmd_compile)

    t = sub.add_parser("train", help="train from a TOML config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="truth of each constraint under a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--constraints", help="constraint file (default: the config's)")
    e.add_argument("--config", help="config file (default: the one recorded in the checkpoint)")
    e.add_argument("--domain", action="append", metavar="NAME=FILE", help="evaluate on other data")
    e.add_argument("--json", action="store_true")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every constraint loss")
    g.add_argument("--config", required=True)
    g.add_argument("--batch", type=int, default=3)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log.upper(), logging.WARNING))
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
