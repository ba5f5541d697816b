"""Train the reference networks on the synthetic market over several seeds.

Generates the datasets (unless present), trains relu2-128x1 and relu-64x3 for
each seed through the CLI, then collects the final losses into one CSV and
emits report data for every run.

    python scripts/reference_runs.py --out runs/reference --seeds 1 2 3
"""

import argparse
import csv
import sys
from pathlib import Path

from shallowiv.cli import main as cli

MODELS = ("relu2-128x1", "relu-64x3")


def run(args):
    out = Path(args.out)
    data = out / "data"
    if not (data / "train.csv").is_file():
        if cli(["generate", "--out", str(data)]):
            return 1
    rows, dirs = [], []
    for model in args.models:
        for seed in args.seeds:
            run_dir = out / f"{model}-s{seed}"
            dirs.append(str(run_dir))
            code = cli(["train", "--model", model, "--seed", str(seed), "--epochs", str(args.epochs),
                        "--train", str(data / "train.csv"), "--valid", str(data / "valid.csv"),
                        "--out", str(run_dir)])
            if code:
                print(f"{model} seed {seed}: exit {code}", file=sys.stderr)
                continue
            with open(run_dir / "summary.csv", newline="") as fh:
                for r in csv.DictReader(fh):
                    rows.append({"model": model, "seed": seed, **r})
    if rows:
        with open(out / "reference.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    if args.report and dirs:
        cli(["report", *dirs, "--out", str(out / "report")])
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/reference")
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--models", nargs="+", default=list(MODELS))
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--report", action="store_true", help="also write learning-curve and surface CSVs")
    sys.exit(run(p.parse_args()))
