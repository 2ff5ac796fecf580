"""Repeat the 12-week univariate pipeline over several seeds and report, per
seed, the tier accuracies, the largest accuracy inversion between tiers and
the number of training windows flagged anomalous."""
import argparse
import tempfile

from hecad import cli, data, hecsim, schemes


def check(seed, epochs=None):
    with tempfile.TemporaryDirectory() as out:
        base = ["--out-dir", out, "--seed", str(seed)]
        cli.main(["gen-data"] + base)
        cli.main(["train-detectors"] + base + (["--epochs", str(epochs)] if epochs is not None else []))
        cfg = cli.load_config(None, {"out_dir": out, "seed": seed})
        scaler, scored = cli.load_artifacts(cfg)
        windows = cli.scaled_windows(cli.load_series(cfg), scaler, cfg)
        train = data.make_splits(windows, "ad_training").selected
        train_fp = sum(r.is_anomaly for s in scored for r in s.detect_many(train))
        dep = hecsim.Deployment(cli.make_profiles(cfg), scored)
        acc = [schemes.evaluate_scheme(t, windows, dep)[0].accuracy for t in hecsim.TIERS]
    inversion = max(100 * (acc[i] - acc[j]) for i in range(3) for j in range(i + 1, 3))
    return acc, inversion, train_fp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--epochs", type=int)
    args = ap.parse_args()
    passed = 0
    for seed in range(args.seeds):
        acc, inv, fp = check(seed, args.epochs)
        ok = inv <= 2 and fp == 0
        passed += ok
        print(f"seed {seed}: acc {[round(100 * a, 1) for a in acc]} inversion {inv:5.1f} train fp {fp}  "
              f"{'ok' if ok else 'violated'}")
    print(f"{passed}/{args.seeds} seeds satisfy both conditions")


if __name__ == "__main__":
    main()
