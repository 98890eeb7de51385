"""Write a runnable config directory for `fuzzyc train --config`."""
import argparse

from fuzzyc.scenarios import write_married_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", nargs="?", default="configs/married")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=400)
    args = ap.parse_args()
    path = write_married_config(args.out_dir, args.seed, args.epochs)
    print(path)


if __name__ == "__main__":
    main()
