"""Retrain the policy for a range of delay weights on the synthetic three-context
environment and print how tier usage, delay and accuracy move with alpha."""
import argparse

import numpy as np

from hecad import bandit, cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", default="0.00005,0.0002,0.0005,0.001,0.002,0.004,0.01")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int, default=1500)
    args = ap.parse_args()

    alphas = [float(a) for a in args.alphas.split(",")]
    env = bandit.make_synthetic_env(seed=args.seed)
    reports = cli.run_sweep(env, alphas,
                            lambda a: bandit.TrainLoopConfig(n_epochs=args.episodes, cost_alpha=a, seed=args.seed))
    print(f"{'alpha':>8} {'acc':>7} {'delay':>8} {'reward':>7}  iot/edge/cloud")
    for a, r in zip(alphas, reports):
        c = r.tier_counts
        print(f"{a:8g} {r.accuracy:7.4f} {r.mean_delay_ms:8.1f} {r.mean_reward:7.4f}  "
              f"{c['iot']}/{c['edge']}/{c['cloud']}")
    print(f"spearman(alpha, delay) = {cli.delay_trend(alphas, [r.mean_delay_ms for r in reports]):.3f}")
    print(f"spearman(alpha, accuracy) = {cli.delay_trend(alphas, [r.accuracy for r in reports]):.3f}")


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    main()
