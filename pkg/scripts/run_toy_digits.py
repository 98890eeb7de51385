"""Train next/previous on synthetic 0/1/2 glyphs and write the sample grid."""
import argparse
import json
import time

from fuzzyc.scenarios import DigitsConfig, run_task_toy_digits


def main():
    d = DigitsConfig()
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--per-class", type=int, default=d.per_class)
    ap.add_argument("--epochs", type=int, default=d.epochs)
    ap.add_argument("--lr", type=float, default=d.lr)
    ap.add_argument("--batch-size", type=int, default=d.batch_size)
    ap.add_argument("--out-dir", default="runs/toy_digits")
    args = ap.parse_args()

    cfg = DigitsConfig(seed=args.seed, per_class=args.per_class, epochs=args.epochs, lr=args.lr,
                       batch_size=args.batch_size, out_dir=args.out_dir)

    def progress(epoch, report):
        loss = report.loss_curve("models")[-1]
        print(f"epoch {epoch}  loss {loss:.4f}  {time.perf_counter() - t0:.0f}s", flush=True)

    t0 = time.perf_counter()
    r = run_task_toy_digits(cfg, progress)
    print(json.dumps({k: getattr(r, k) for k in ("next_accuracy", "previous_accuracy", "cycle_error_pn",
                                                 "cycle_error_np", "circular_accuracy",
                                                 "discriminator_accuracy")}, indent=1))
    print("grid:", r.grid_path)


if __name__ == "__main__":
    main()
