"""Contextual-bandit tier selection.

A one-hidden-layer softmax policy maps a window's contextual state to a
distribution over the K tiers. It is trained with REINFORCE against a
best-observed-reward baseline (kept per training state by default), using
mini-batches and a linearly decayed epsilon-greedy exploration schedule. The parallel trainer groups each
batch by chosen tier and queries every group in a single call.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .models import _load, _save

K = 3
STATE_DIMS = {"handcrafted_univariate": 28, "encoded_multivariate": 100, "encoded_univariate": 201}
HIDDEN_UNITS = {"handcrafted_univariate": 100, "encoded_multivariate": 300, "encoded_univariate": 500}


# ----------------------------------------------------------------- contexts


@dataclass
class ContextualState:
    vector: np.ndarray
    kind: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()
        if STATE_DIMS.get(self.kind) != self.vector.size:
            raise ValueError(f"{self.kind} state must have dim {STATE_DIMS.get(self.kind)}, got {self.vector.size}")


def extract_handcrafted(window, steps_per_day: int = 96, days: int = 7) -> ContextualState:
    """Per-day (min, max, mean, std) of a one-week univariate window, day-major."""
    x = np.asarray(getattr(window, "data", window), dtype=np.float64).reshape(-1)
    if x.size != steps_per_day * days:
        raise ValueError(f"handcrafted features need a {steps_per_day * days}-step window, got {x.size}")
    d = x.reshape(days, steps_per_day)
    feats = np.stack([d.min(axis=1), d.max(axis=1), d.mean(axis=1), d.std(axis=1)], axis=1)
    return ContextualState(feats.ravel(), "handcrafted_univariate")


def encoded_states(detector, windows) -> np.ndarray:
    model = getattr(detector, "model", detector)
    return model.encode_batch(list(windows))


# ------------------------------------------------------------------- policy


class PolicyNetwork:
    def __init__(self, layers: list[nn.Dense]):
        self.layers = layers

    @classmethod
    def init(cls, input_dim: int, hidden_units: int, seed: int = 0, n_actions: int = K) -> "PolicyNetwork":
        rng = nn.make_rng(seed)
        return cls([nn.Dense.init(input_dim, hidden_units, "tanh", rng),
                    nn.Dense.init(hidden_units, n_actions, "softmax", rng)])

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def hidden_units(self) -> int:
        return self.layers[0].n_out

    @property
    def n_actions(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> list[np.ndarray]:
        return nn.all_params(self.layers)

    def flat_params(self) -> np.ndarray:
        return nn.flatten(self.params())

    def set_flat_params(self, theta) -> None:
        nn.unflatten_into(self.params(), theta)

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork([nn.Dense(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers])

    def forward(self, states) -> np.ndarray:
        states = np.asarray(getattr(states, "vector", states), dtype=np.float64)
        if states.shape[-1] != self.input_dim:
            raise nn.ShapeError("policy state dim", self.input_dim, states.shape[-1])
        return nn.forward(self.layers, states)[0]


def policy_forward(policy: PolicyNetwork, state) -> np.ndarray:
    return policy.forward(state)


def greedy_action(s) -> int:
    """Index of the most likely tier (0 = iot); ties go to the lowest index."""
    return int(np.argmax(np.asarray(s)))


def one_hot(index: int, n: int = K) -> np.ndarray:
    a = np.zeros(n)
    a[index] = 1.0
    return a


def select_actions(s, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Decayed-epsilon-greedy for a batch of likelihood rows.

    Always draws one uniform and one random action per row, so the RNG
    stream does not depend on the policy output.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    s = np.atleast_2d(s)
    u = rng.random(s.shape[0])
    random_actions = rng.integers(0, s.shape[1], size=s.shape[0])
    return np.where(u < epsilon, random_actions, np.argmax(s, axis=1))


def select_action(s, epsilon: float, rng: np.random.Generator) -> int:
    return int(select_actions(s, epsilon, rng)[0])


# ------------------------------------------------------------- reward model


def cost(t_e2e_ms, alpha: float):
    """Delay cost alpha*t / (1 + alpha*t), t in milliseconds."""
    at = alpha * np.asarray(t_e2e_ms, dtype=np.float64)
    out = at / (1.0 + at)
    return float(out) if np.ndim(out) == 0 else out


def reward(accuracy, cost_value):
    out = np.asarray(accuracy, dtype=np.float64) - np.asarray(cost_value, dtype=np.float64)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class BaselineTracker:
    """Best reward observed so far.

    `best_reward` is the global best. With `per_state=True` the tracker also
    keeps the best reward seen for each training-set index and uses that as
    the baseline for the state; unseen states fall back to their own reward.
    """

    best_reward: float = -np.inf
    per_state: bool = False
    state_best: dict = field(default_factory=dict)

    def value(self, batch_rewards, indices=None) -> np.ndarray:
        r = np.asarray(batch_rewards, dtype=np.float64)
        if self.per_state and indices is not None:
            return np.array([self.state_best.get(int(i), v) for i, v in zip(indices, r)])
        if np.isfinite(self.best_reward):
            return np.full_like(r, self.best_reward)
        return np.full_like(r, r.max())


def update_baseline(tracker: BaselineTracker, batch_rewards, indices=None) -> BaselineTracker:
    batch = np.asarray(batch_rewards, dtype=np.float64)
    if batch.size:
        tracker.best_reward = max(tracker.best_reward, float(batch.max()))
    if indices is not None:
        for i, v in zip(indices, batch):
            i = int(i)
            tracker.state_best[i] = max(tracker.state_best.get(i, -np.inf), float(v))
    return tracker


# ---------------------------------------------------------------- gradients


def _reinforce_targets(actions, advantages, n_actions) -> np.ndarray:
    t = np.zeros((len(actions), n_actions))
    t[np.arange(len(actions)), actions] = advantages
    return t


def reinforce_objective(policy: PolicyNetwork, states, actions, advantages, l2_gamma: float = 0.0) -> float:
    """-(1/N) sum_i adv_i log s_{a_i}(z_i) + gamma/2 ||theta||^2."""
    s = policy.forward(states)
    logp = np.log(np.maximum(s[np.arange(len(actions)), actions], nn.LOG_FLOOR))
    theta = policy.flat_params()
    return float(-np.mean(np.asarray(advantages) * logp) + 0.5 * l2_gamma * theta @ theta)


def reinforce_gradient(policy: PolicyNetwork, states, actions, rewards, baselines,
                       l2_gamma: float = 0.0) -> np.ndarray:
    """Flat gradient of the baseline-corrected REINFORCE loss w.r.t. all policy parameters."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.asarray(actions, dtype=int).ravel()
    if actions.size == 0:
        raise ValueError("empty batch")
    adv = np.asarray(rewards, dtype=np.float64) - np.asarray(baselines, dtype=np.float64)
    out, caches = nn.forward(policy.layers, states)
    _, dz = nn.loss_and_grad("reinforce", out, _reinforce_targets(actions, adv, policy.n_actions))
    _, grads = nn.backward(policy.layers, caches, dz)
    return nn.flatten(grads) + l2_gamma * policy.flat_params()


# -------------------------------------------------------------- environment


@dataclass
class BanditEnv:
    """Replayable table of per-(window, tier) detection correctness and delay.

    `query_overhead_s` simulates the per-call round trip between the
    training server and a detector.
    """

    states: np.ndarray  # (M, d)
    accuracy: np.ndarray  # (M, K), correctness in {0,1} or [0,1]
    delay_ms: np.ndarray  # (M, K)
    query_overhead_s: float = 0.0
    contexts: np.ndarray | None = None  # optional ground-truth context ids

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.accuracy = np.asarray(self.accuracy, dtype=np.float64)
        self.delay_ms = np.asarray(self.delay_ms, dtype=np.float64)
        m = self.states.shape[0]
        if self.accuracy.shape != self.delay_ms.shape or self.accuracy.shape[0] != m:
            raise ValueError("states, accuracy and delay tables must agree on the number of windows")
        if not np.all(np.isfinite(self.accuracy)) or not np.all(np.isfinite(self.delay_ms)):
            raise ValueError("environment is missing (window, tier) entries")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.accuracy.shape[1]

    def query(self, i: int, k: int) -> tuple[float, float]:
        if self.query_overhead_s:
            time.sleep(self.query_overhead_s)
        return float(self.accuracy[i, k]), float(self.delay_ms[i, k])

    def query_batch(self, indices, k: int) -> tuple[np.ndarray, np.ndarray]:
        if self.query_overhead_s:
            time.sleep(self.query_overhead_s)
        idx = np.asarray(indices, dtype=int)
        return self.accuracy[idx, k].copy(), self.delay_ms[idx, k].copy()

    def mean_delays(self) -> np.ndarray:
        # a constant column is returned as is; averaging it can be off by an ulp
        if np.all(self.delay_ms == self.delay_ms[0]):
            return self.delay_ms[0].copy()
        return self.delay_ms.mean(axis=0)


# per-context probability that each tier detects correctly
SYNTHETIC_ACCURACY = np.array([
    [0.97, 0.98, 0.99],  # easy: every tier is right, so the IoT tier wins on delay
    [0.15, 0.95, 0.97],  # medium: the edge tier is accurate enough
    [0.05, 0.30, 0.96],  # hard: only the cloud tier is reliable
])


def make_synthetic_env(n_per_context: int = 64, seed: int = 0, state_dim: int = 8,
                       accuracy_table=SYNTHETIC_ACCURACY, delays_ms=None, state_noise: float = 0.3,
                       query_overhead_s: float = 0.0, bernoulli: bool = False) -> BanditEnv:
    """Gaussian state clusters, one per context.

    By default each window's accuracy is its context's expected accuracy;
    with `bernoulli=True` a 0/1 outcome is drawn once per (window, tier).
    """
    from .hecsim import default_profiles

    if delays_ms is None:
        delays_ms = [p.mean_e2e_ms for p in default_profiles("univariate")]
    rng = nn.make_rng(seed)
    acc_table = np.asarray(accuracy_table, dtype=np.float64)
    n_ctx = acc_table.shape[0]
    centers = rng.normal(0.0, 1.0, (n_ctx, state_dim))
    ctx = np.repeat(np.arange(n_ctx), n_per_context)
    states = centers[ctx] + state_noise * rng.normal(size=(ctx.size, state_dim))
    correct = acc_table[ctx].copy()
    if bernoulli:
        correct = (rng.random(correct.shape) < correct).astype(np.float64)
    delays = np.tile(np.asarray(delays_ms, dtype=np.float64), (ctx.size, 1))
    return BanditEnv(states, correct, delays, query_overhead_s, ctx)


def optimal_arms(env: BanditEnv, alpha: float) -> dict[int, int]:
    """Brute-force best tier per context from the env table's empirical mean reward."""
    if env.contexts is None:
        raise ValueError("env has no context ids")
    r = reward(env.accuracy, cost(env.delay_ms, alpha))
    return {int(c): int(np.argmax(r[env.contexts == c].mean(axis=0))) for c in np.unique(env.contexts)}


# ----------------------------------------------------------------- training


@dataclass
class TrainLoopConfig:
    n_epochs: int = 1500
    batch_n: int | None = None  # None: whole training set per batch
    batches_per_episode: int = 1
    optimizer: str = "rmsprop"
    learning_rate: float = 0.003
    l2_gamma: float = 1e-4
    cost_alpha: float = 0.0005
    explore_steps: int | None = None  # A; None: half of n_epochs
    p_init: float = 0.5
    p_end: float = 0.0
    hidden_units: int = 100
    per_state_baseline: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p_init <= 1 and 0 <= self.p_end <= 1):
            raise ValueError("exploration probabilities must be in [0, 1]")
        if self.explore_steps is None:
            self.explore_steps = self.n_epochs // 2
        if self.explore_steps > self.n_epochs:
            raise ValueError("explore_steps cannot exceed n_epochs")


def epsilon_at(config: TrainLoopConfig, n_e: int) -> float:
    if n_e < 0:
        raise ValueError("episode index must be >= 0")
    a = config.explore_steps
    if a == 0:
        return config.p_end
    r = max((a - n_e) / a, 0.0)
    return (config.p_init - config.p_end) * r + config.p_end


@dataclass
class EpisodeLog:
    episode: int
    epsilon: float
    mean_reward: float
    best_baseline: float
    loss: float
    wall_ms: float


LOG_COLUMNS = ("episode", "epsilon", "mean_reward", "best_baseline", "loss", "wall_ms")


@dataclass
class TrainingResult:
    policy: PolicyNetwork
    log: list[EpisodeLog] = field(default_factory=list)
    baseline: BaselineTracker = field(default_factory=BaselineTracker)


def _train(env: BanditEnv, config: TrainLoopConfig, query, policy: PolicyNetwork | None) -> TrainingResult:
    root = np.random.SeedSequence(config.seed)
    init_seed, shuffle_seq, explore_seq = root.spawn(3)
    if policy is None:
        policy = PolicyNetwork.init(env.states.shape[1], config.hidden_units,
                                    int(init_seed.generate_state(1)[0]), env.n_actions)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
    explore_rng = np.random.Generator(np.random.PCG64(explore_seq))
    opt = nn.Optimizer(nn.OptimizerConfig(config.optimizer, config.learning_rate, l2_gamma=config.l2_gamma,
                                          l2_on_bias=True))
    tracker = BaselineTracker(per_state=config.per_state_baseline)
    batch_n = config.batch_n or env.size
    log = []
    for n_e in range(config.n_epochs):
        t0 = time.perf_counter()
        eps = epsilon_at(config, n_e)
        perm = shuffle_rng.permutation(env.size)
        ep_rewards, ep_losses = [], []
        for b in range(config.batches_per_episode):
            idx = np.take(perm, np.arange(b * batch_n, (b + 1) * batch_n), mode="wrap")
            states = env.states[idx]
            s = policy.forward(states)
            actions = select_actions(s, eps, explore_rng)
            acc, delay = query(idx, actions)
            r = reward(acc, cost(delay, config.cost_alpha))
            adv = r - tracker.value(r, idx)
            _, loss = nn.train_step(policy.layers, states, _reinforce_targets(actions, adv, env.n_actions),
                                    "reinforce", opt, explore_rng)
            update_baseline(tracker, r, idx)
            ep_rewards.append(r)
            ep_losses.append(loss)
        log.append(EpisodeLog(n_e, eps, float(np.mean(np.concatenate(ep_rewards))), tracker.best_reward,
                              float(np.mean(ep_losses)), (time.perf_counter() - t0) * 1e3))
    return TrainingResult(policy, log, tracker)


def train_policy_sequential(env: BanditEnv, config: TrainLoopConfig,
                            policy: PolicyNetwork | None = None) -> TrainingResult:
    """Reference trainer: every (state, action) pair is queried one at a time."""

    def query(idx, actions):
        acc = np.empty(len(idx))
        delay = np.empty(len(idx))
        for j, (i, a) in enumerate(zip(idx, actions)):
            acc[j], delay[j] = env.query(int(i), int(a))
        return acc, delay

    return _train(env, config, query, policy)


def train_policy_parallel(env: BanditEnv, config: TrainLoopConfig, fixed_delay_table,
                          policy: PolicyNetwork | None = None, max_workers: int | None = None) -> TrainingResult:
    """Accelerated training: one batched query per selected tier, tiers queried
    concurrently, rewards computed from fixed per-tier mean delays."""
    table = np.asarray(fixed_delay_table, dtype=np.float64)
    if table.shape != (env.n_actions,):
        raise ValueError(f"fixed delay table needs {env.n_actions} entries")
    pool = ThreadPoolExecutor(max_workers=max_workers or env.n_actions)

    def query(idx, actions):
        groups = {int(k): np.flatnonzero(actions == k) for k in np.unique(actions)}
        futures = {k: pool.submit(env.query_batch, idx[pos], k) for k, pos in groups.items()}
        acc = np.empty(len(idx))
        for k, pos in groups.items():
            acc[pos] = futures[k].result()[0]
        return acc, table[actions]

    try:
        return _train(env, config, query, policy)
    finally:
        pool.shutdown()


def grouped_queries(actions) -> int:
    """Number of batched detector calls the parallel trainer makes for a batch."""
    return int(np.unique(np.asarray(actions)).size)


def write_log_csv(path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for e in log:
            w.writerow([e.episode, repr(e.epsilon), repr(e.mean_reward), repr(e.best_baseline),
                        repr(e.loss), f"{e.wall_ms:.3f}"])


def save_policy(path, policy: PolicyNetwork, metadata: dict | None = None) -> None:
    desc = {"input_dim": policy.input_dim, "hidden_units": policy.hidden_units, "n_actions": policy.n_actions}
    _save(path, "policy", desc, policy.params(), metadata or {})


def load_policy(path) -> PolicyNetwork:
    meta, params = _load(path)
    if meta["kind"] != "policy":
        raise ValueError(f"{path} holds a {meta['kind']} checkpoint, not a policy")
    d = meta["descriptor"]
    policy = PolicyNetwork.init(d["input_dim"], d["hidden_units"], 0, d["n_actions"])
    policy.set_flat_params(params)
    return policy
