"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""
import time

import numpy as np
import pytest

from hecad import bandit, cli, hecsim, models, nn, schemes, scoring
from hecad.bandit import PolicyNetwork, TrainLoopConfig


def test_c01_parameter_counts(criterion):
    got = {
        "ae_iot": models.build_ae(models.AE_PRESETS["iot"], 0).parameter_count(),
        "ae_cloud": models.build_ae(models.AE_PRESETS["cloud"], 0).parameter_count(),
        "s2s_iot": models.build_seq2seq(models.SEQ2SEQ_PRESETS["iot"], 0).parameter_count(),
        "s2s_edge": models.build_seq2seq(models.SEQ2SEQ_PRESETS["edge"], 0).parameter_count(),
    }
    want = {"ae_iot": 271_017, "ae_cloud": 1_085_077, "s2s_iot": 28_518, "s2s_edge": 97_818}
    assert criterion(1, got == want, str(got))


def test_c02_delays(criterion):
    want = {"univariate": (12.4, 257.4, 504.5), "multivariate": (591.0, 667.3, 732.3)}
    worst = max(abs(p.mean_e2e_ms - w) for kind, ws in want.items()
                for p, w in zip(hecsim.default_profiles(kind), ws))
    assert criterion(2, worst <= 0.1, f"max deviation {worst:.2e} ms")


def _fd_relative_error():
    rng = np.random.default_rng(0)
    # AE 12-8-4-8-12 has 12*8+8+8*4+4+4*8+8+8*12+12 = 288 parameters
    ae = models.build_ae(models.AeArchitecture((12, 8, 4, 8, 12), dropout=0.0), 0)
    x = rng.normal(size=(3, 12))
    theta = nn.flatten(ae.params())

    def f(th):
        nn.unflatten_into(ae.params(), th)
        return nn.loss_and_grad("mse", nn.forward(ae.layers, x)[0], x)[0]

    numeric = nn.finite_diff_gradient(f, theta)
    nn.unflatten_into(ae.params(), theta)
    out, caches = nn.forward(ae.layers, x)
    analytic = nn.flatten(nn.backward(ae.layers, caches, nn.loss_and_grad("mse", out, x)[1])[1])
    ae_err = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)

    policy = PolicyNetwork.init(6, 20, seed=1)  # 6*20+20+20*3+3 = 203 parameters
    states, actions = rng.normal(size=(8, 6)), rng.integers(0, 3, 8)
    r, b = rng.uniform(-1, 1, 8), np.full(8, 0.1)
    theta = policy.flat_params()

    def g(th):
        policy.set_flat_params(th)
        return bandit.reinforce_objective(policy, states, actions, r - b, l2_gamma=1e-3)

    numeric = nn.finite_diff_gradient(g, theta)
    policy.set_flat_params(theta)
    analytic = bandit.reinforce_gradient(policy, states, actions, r, b, l2_gamma=1e-3)
    pol_err = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    return ae_err, pol_err


def _expected_grad(policy, z, rewards, baseline):
    pi = policy.forward(z[None])[0]
    return sum(pi[a] * bandit.reinforce_gradient(policy, z[None], [a], [rewards[a]], [baseline])
               for a in range(3))


def _exact_checks():
    policy = PolicyNetwork.init(2, 2, seed=4)  # 15 parameters
    z, rewards = np.array([0.3, -0.8]), np.array([0.95, 0.6, 0.75])
    out, caches = nn.forward(policy.layers, z[None])
    pi = out[0]
    true = nn.flatten(nn.backward(policy.layers, caches, -(pi * (rewards - pi @ rewards))[None])[1])
    unbiased = np.max(np.abs(_expected_grad(policy, z, rewards, 0.0) - true))
    shift = max(np.max(np.abs(_expected_grad(policy, z, rewards, c) - _expected_grad(policy, z, rewards, 0.0)))
                for c in (-1.0, 0.5, 3.0))
    return policy.flat_params().size, unbiased, shift


def test_c03_gradients(criterion):
    ae_err, pol_err = _fd_relative_error()
    n, unbiased, shift = _exact_checks()
    ok = ae_err < 1e-4 and pol_err < 1e-4 and n <= 20 and unbiased < 1e-8 and shift < 1e-8
    assert criterion(3, ok, f"fd rel err ae {ae_err:.1e} policy {pol_err:.1e}; "
                            f"{n} params: bias {unbiased:.1e} shift {shift:.1e}")


def test_c04_synthetic_convergence(criterion):
    t0 = time.perf_counter()
    env = bandit.make_synthetic_env(seed=0)
    res = bandit.train_policy_sequential(env, TrainLoopConfig(seed=0))
    opt = bandit.optimal_arms(env, 0.0005)
    greedy = np.argmax(res.policy.forward(env.states), axis=1)
    frac = float(np.mean(greedy == np.array([opt[c] for c in env.contexts])))
    adaptive = schemes.evaluate_on_env("adaptive", env, res.policy).mean_reward
    best_fixed = max(schemes.evaluate_on_env(k, env).mean_reward for k in ("iot", "edge", "cloud"))
    wall = time.perf_counter() - t0
    ok = frac >= 0.95 and adaptive >= best_fixed - 0.01 and wall < 120
    assert criterion(4, ok, f"optimal {frac:.3f}, adaptive {adaptive:.4f} vs fixed {best_fixed:.4f}, "
                            f"{wall:.1f} s")


def test_c05_cost_and_reward(criterion, rng):
    c250 = bandit.cost(250.0, 0.0005)
    r = bandit.reward(rng.random(10_000), bandit.cost(rng.uniform(0, 1e6, 10_000), rng.uniform(1e-6, 1e-2, 10_000)))
    # 0.111111 is 1/9 rounded to six places; the exact value is compared at 1e-9
    ok = abs(c250 - 1 / 9) <= 1e-9 and bandit.cost(0.0, 0.0005) == 0.0 and np.all((r > -1) & (r <= 1))
    assert criterion(5, ok, f"cost(250)={c250:.9f}, reward range [{r.min():.4f}, {r.max():.4f}]")


def test_c06_epsilon_closed_form(criterion):
    a, p_i, p_e = 100, 0.5, 0.05
    cfg = TrainLoopConfig(n_epochs=200, explore_steps=a, p_init=p_i, p_end=p_e)
    points = (0, a // 2, a, 2 * a)
    got = [bandit.epsilon_at(cfg, n) for n in points]
    want = [(p_i - p_e) * max((a - n) / a, 0) + p_e for n in points]
    assert criterion(6, got == want and got[0] == p_i and got[-1] == p_e, f"eps at {points}: {got}")


def test_c07_parallel_training(criterion):
    env = bandit.make_synthetic_env(seed=0)
    cfg = TrainLoopConfig(n_epochs=200, batch_n=64, batches_per_episode=3, hidden_units=32, seed=0)
    seq = bandit.train_policy_sequential(env, cfg)
    par = bandit.train_policy_parallel(env, cfg, env.mean_delays())
    diff = float(np.max(np.abs(seq.policy.flat_params() - par.policy.flat_params())))

    slow = bandit.make_synthetic_env(seed=0, query_overhead_s=0.1)
    one = TrainLoopConfig(n_epochs=1, batch_n=64, hidden_units=32, seed=0)
    t0 = time.perf_counter()
    bandit.train_policy_sequential(slow, one)
    t_seq = time.perf_counter() - t0
    t0 = time.perf_counter()
    bandit.train_policy_parallel(slow, one, slow.mean_delays())
    t_par = time.perf_counter() - t0
    speedup = t_seq / t_par
    ok = diff <= 1e-12 and speedup >= 3
    assert criterion(7, ok, f"max param diff {diff:.1e}, speedup {speedup:.1f}x ({t_seq:.2f} s vs {t_par:.2f} s)")


@pytest.fixture(scope="module")
def univariate_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("c08")
    t0 = time.perf_counter()
    codes = [cli.main([cmd, "--out-dir", str(out), "--seed", "0"])
             for cmd in ("gen-data", "train-detectors", "train-policy", "evaluate")]
    return out, codes, time.perf_counter() - t0


def test_c08_univariate_pipeline(criterion, univariate_run):
    out, codes, wall = univariate_run
    cfg = cli.load_config(None, {"out_dir": str(out)})
    scaler, scored = cli.load_artifacts(cfg)
    windows = cli.scaled_windows(cli.load_series(cfg), scaler, cfg)
    train = cli.data.make_splits(windows, "ad_training").selected
    train_fp = sum(r.is_anomaly for s in scored for r in s.detect_many(train))
    dep = hecsim.Deployment(cli.make_profiles(cfg), scored)
    acc = [schemes.evaluate_scheme(t, windows, dep)[0].accuracy for t in hecsim.TIERS]
    inversion = max(100 * (acc[i] - acc[j]) for i in range(3) for j in range(i + 1, 3))
    _, recs = schemes.evaluate_scheme("successive", windows, dep)
    full = [r for r in recs if len(r.attempts) == 3]
    sums_ok = all(abs(r.t_e2e_ms - 774.3) < 1e-9 for r in full) and all(
        abs(r.t_e2e_ms - sum(p.mean_e2e_ms for p in dep.profiles[:len(r.attempts)])) < 1e-9 for r in recs)
    n_anom = sum(w.label for w in windows)
    ok = codes == [0, 0, 0, 0] and len(windows) == 12 and n_anom == 3 and inversion <= 2 \
        and train_fp == 0 and sums_ok and wall < 300
    assert criterion(8, ok, f"tier acc {[round(100 * a, 1) for a in acc]}, inversion {inversion:.1f} pts, "
                            f"train fp {train_fp}, {len(full)} full escalations at 774.3 ms, {wall:.1f} s")


def test_c09_alpha_sweep(criterion):
    alphas = [0.00005, 0.0005, 0.004]
    env = bandit.make_synthetic_env(seed=0)
    reports = cli.run_sweep(env, alphas, lambda a: TrainLoopConfig(cost_alpha=a, seed=0))
    delays = [r.mean_delay_ms for r in reports]
    rho = cli.delay_trend(alphas, delays)
    assert criterion(9, rho <= 0, f"delays {[round(d, 1) for d in delays]}, spearman {rho:.3f}")


def test_c10_scores_and_metrics(criterion):
    v = [scoring.log_pd(scoring.GaussianErrorModel([0.0], [[1.0]]), 0.0),
         scoring.log_pd(scoring.GaussianErrorModel([0.0], [[1.0]]), 2.0),
         scoring.log_pd(scoring.GaussianErrorModel([0.0, 0.0], np.eye(2)), [0.0, 0.0])]
    lp_ok = all(abs(a - b) <= 1e-6 for a, b in zip(v, (-0.9189385, -2.9189385, -1.8378771)))
    m = scoring.score_run([1] * 3 + [0] * 2 + [1] + [0] * 4, [1] * 5 + [0] * 5)
    m_ok = (m.tp, m.fp, m.fn, m.tn) == (3, 1, 2, 4) and m.accuracy == 0.7 and round(m.f1, 4) == 0.6667
    assert criterion(10, lp_ok and m_ok, f"logpd {[round(x, 7) for x in v]}, acc {m.accuracy}, f1 {m.f1:.4f}")
