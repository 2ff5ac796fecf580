"""Policy convergence on the synthetic environment across seeds and training
settings: fraction of windows mapped to the optimal tier, and final reward."""
import argparse
import time

import numpy as np

from hecad import bandit, schemes


def run(seed, **overrides):
    env = bandit.make_synthetic_env(seed=seed, bernoulli=overrides.pop("bernoulli", False))
    cfg = bandit.TrainLoopConfig(seed=seed, **overrides)
    t0 = time.perf_counter()
    res = bandit.train_policy_sequential(env, cfg)
    opt = bandit.optimal_arms(env, cfg.cost_alpha)
    greedy = np.argmax(res.policy.forward(env.states), axis=1)
    frac = np.mean(greedy == np.array([opt[c] for c in env.contexts]))
    adaptive = schemes.evaluate_on_env("adaptive", env, res.policy, cfg.cost_alpha).mean_reward
    best = max(schemes.evaluate_on_env(k, env, None, cfg.cost_alpha).mean_reward for k in ("iot", "edge", "cloud"))
    return frac, adaptive - best, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    settings = {
        "default (rmsprop, per-state baseline)": {},
        "global best baseline": {"per_state_baseline": False},
        "sgd lr 0.05": {"optimizer": "sgd", "learning_rate": 0.05},
        "bernoulli outcomes": {"bernoulli": True},
        "300 episodes": {"n_epochs": 300},
    }
    for name, kw in settings.items():
        rows = np.array([run(s, **dict(kw)) for s in range(args.seeds)])
        print(f"{name:40} optimal {rows[:, 0].mean():.3f} (min {rows[:, 0].min():.3f})  "
              f"reward gap {rows[:, 1].mean():+.4f} (min {rows[:, 1].min():+.4f})  {rows[:, 2].mean():.1f} s/run")


if __name__ == "__main__":
    main()
