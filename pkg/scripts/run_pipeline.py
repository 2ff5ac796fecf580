"""Run the whole CLI pipeline (gen-data, train-detectors, train-policy, evaluate).

    python scripts/run_pipeline.py --data-type univariate --seed 0 --out-dir runs/uni
"""
import argparse
import sys
import time

from hecad import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data-type", default="univariate", choices=("univariate", "multivariate"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/pipeline")
    ap.add_argument("--config")
    ap.add_argument("--epochs", type=int, help="detector epochs (default per data type)")
    ap.add_argument("--mode", default="sequential", choices=("sequential", "parallel"))
    args = ap.parse_args()

    common = ["--data-type", args.data_type, "--seed", str(args.seed), "--out-dir", args.out_dir]
    if args.config:
        common += ["--config", args.config]
    steps = [["gen-data"], ["train-detectors"] + (["--epochs", str(args.epochs)] if args.epochs is not None else []),
             ["train-policy", "--mode", args.mode], ["evaluate"]]
    for step in steps:
        t0 = time.perf_counter()
        code = cli.main(step + common)
        print(f"[{step[0]}: exit {code}, {time.perf_counter() - t0:.1f} s]\n")
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
