"""Train the Married/Republican example with and without the marriage rule."""
import argparse
import json
import time

from fuzzyc.scenarios import run_married_republican


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=400)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--out", help="write the metrics as JSON here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    r = run_married_republican(args.seed, args.epochs, args.lr)
    metrics = {
        "seed": args.seed,
        "accuracy_with_rule": r.accuracy_with,
        "accuracy_without_rule": r.accuracy_without,
        "married_agreement": r.married_agreement,
        "seconds": round(time.perf_counter() - t0, 1),
    }
    print(json.dumps(metrics, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(metrics, fh, indent=1)


if __name__ == "__main__":
    main()
