"""Command-line pipeline: gen-data, train-detectors, train-policy, evaluate, sweep-alpha.

Artifacts live in --out-dir:

  series.csv           one row per step: value columns x0.., then label (0/1)
  detector_<tier>.npz  detector checkpoints
  calibration.json     scaler, per-tier error Gaussian and threshold
  detectors.csv        tier, kind, params, exec_ms, flops, epochs, final_loss, drift_ratio
  cv.csv               tier, fold, heldout_mse (only with --cv-folds > 1)
  policy.npz           policy checkpoint
  policy_log.csv       episode, epsilon, mean_reward, best_baseline, loss, wall_ms
  reports.csv/.json    scheme, f1, accuracy, mean_delay_ms, mean_reward,
                       count_iot, count_edge, count_cloud, selector_overhead_ms, n, note
  dispatch_<scheme>.csv  origin, tier, label, prediction, t_e2e_ms
  sweep.csv            alpha, accuracy, mean_delay_ms, mean_reward, count_iot, count_edge, count_cloud

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import bandit, data, hecsim, models, schemes, scoring

log = logging.getLogger("hecad")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_EPOCHS = {"univariate": 200, "multivariate": 20}


class UsageError(Exception):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | csv
    csv_path: str | None = None
    dims: int | None = None  # defaults to 1 (univariate) or 18 (multivariate)
    label_column: bool = True
    weeks: int = 12
    anomalous_weeks: list = field(default_factory=lambda: [3, 7, 10])
    subjects: int = 2
    normal_segments: int = 4
    anomalous_segments: int = 1
    segment_steps: int = 256


@dataclass
class RunConfig:
    data_type: str = "univariate"
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    detector_epochs: int | None = None
    profiles: list | None = None  # per-tier LayerProfile overrides (dicts)
    train_loop: dict = field(default_factory=dict)  # TrainLoopConfig overrides
    mode: str = "sequential"
    policy_normal_count: int | None = None
    schemes: list = field(default_factory=lambda: [k.value for k in schemes.SchemeKind])
    cost_alpha: float = 0.0005
    alphas: list = field(default_factory=lambda: [0.00005, 0.0005, 0.004])
    sweep_env: str = "synthetic"  # synthetic | pipeline
    knn_k: int | None = None
    cv_folds: int = 0  # k-fold check of detector training; 0 or 1 = off

    def validate(self):
        if self.data_type not in ("univariate", "multivariate"):
            raise UsageError(f"unknown data type {self.data_type!r}")
        if self.data.source not in ("synthetic", "csv"):
            raise UsageError(f"unknown data source {self.data.source!r}")
        if self.data.source == "csv" and not (self.data.csv_path and Path(self.data.csv_path).exists()):
            raise FileNotFoundError(f"data file not found: {self.data.csv_path}")
        if self.cv_folds < 0:
            raise UsageError("cv_folds must be >= 0")
        if self.mode not in ("sequential", "parallel"):
            raise UsageError(f"unknown training mode {self.mode!r}")
        if self.sweep_env not in ("synthetic", "pipeline"):
            raise UsageError(f"unknown sweep environment {self.sweep_env!r}")
        try:
            schemes.parse_schemes(self.schemes)
        except ValueError as e:
            raise UsageError(str(e)) from None
        try:
            bandit.TrainLoopConfig(**self.train_loop)
        except (TypeError, ValueError) as e:
            raise UsageError(f"bad train_loop: {e}") from None

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    doc = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        doc = json.loads(p.read_text())
    doc.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    data_doc = doc.pop("data", {}) or {}
    try:
        cfg = RunConfig(data=DataConfig(**data_doc), **doc)
    except TypeError as e:
        raise UsageError(f"bad config: {e}") from None
    if isinstance(cfg.schemes, str):
        cfg.schemes = [s for s in cfg.schemes.split(",") if s]
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------- data


def generate_series(cfg: RunConfig) -> data.TimeSeries:
    d = cfg.data
    if cfg.data_type == "univariate":
        return data.gen_univariate_weekly(d.weeks, d.anomalous_weeks, cfg.seed)
    return data.gen_multivariate_activity(d.subjects, d.normal_segments, d.anomalous_segments,
                                          d.segment_steps, cfg.seed)


def load_series(cfg: RunConfig) -> data.TimeSeries:
    cached = cfg.out / "series.csv"
    dims = cfg.data.dims or (1 if cfg.data_type == "univariate" else data.MHEALTH_DIMS)
    if cfg.data.source == "csv":
        return data.load_csv(cfg.data.csv_path, dims, cfg.data.label_column)
    if cached.exists():
        return data.load_csv(cached, dims, True, cfg.data_type)
    return generate_series(cfg)


def window_spec(cfg: RunConfig) -> data.WindowSpec:
    return data.UNIVARIATE_WINDOW if cfg.data_type == "univariate" else data.MULTIVARIATE_WINDOW


def scaled_windows(series: data.TimeSeries, scaler: data.Scaler, cfg: RunConfig) -> list[data.Window]:
    return data.slide_windows(data.apply_scaler(scaler, series), window_spec(cfg))


def build_model(cfg: RunConfig, tier: str, seed: int):
    if cfg.data_type == "univariate":
        return models.build_ae(models.AE_PRESETS[tier], seed)
    return models.build_seq2seq(models.SEQ2SEQ_PRESETS[tier], seed)


# ----------------------------------------------------------------- artifacts


def save_calibration(path: Path, scaler: data.Scaler, scored: list[scoring.ScoredDetector]) -> None:
    doc = {"scaler": {"mean": scaler.mean.tolist(), "std": scaler.std.tolist()}, "tiers": {}}
    for tier, s in zip(hecsim.TIERS, scored):
        c = s.calibration
        doc["tiers"][tier] = {"mu": s.error_model.mu.tolist(), "sigma": s.error_model.sigma.tolist(),
                              "threshold": c.threshold, "confident_factor": c.confident_factor,
                              "confident_fraction": c.confident_fraction}
    path.write_text(json.dumps(doc, indent=2))


def load_artifacts(cfg: RunConfig):
    """Scaler and the three scored detectors written by train-detectors."""
    cal_path = cfg.out / "calibration.json"
    if not cal_path.exists():
        raise FileNotFoundError(f"{cal_path} missing; run train-detectors first")
    doc = json.loads(cal_path.read_text())
    scaler = data.Scaler(np.array(doc["scaler"]["mean"]), np.array(doc["scaler"]["std"]))
    scored = []
    for tier in hecsim.TIERS:
        ckpt = cfg.out / f"detector_{tier}.npz"
        if not ckpt.exists():
            raise FileNotFoundError(f"{ckpt} missing; run train-detectors first")
        t = doc["tiers"][tier]
        em = scoring.GaussianErrorModel(t["mu"], t["sigma"])
        cal = scoring.DetectorCalibration(t["threshold"], t["confident_factor"], t["confident_fraction"])
        scored.append(scoring.ScoredDetector(models.load_detector(ckpt), em, cal))
    return scaler, scored


def make_profiles(cfg: RunConfig) -> list[hecsim.LayerProfile]:
    if cfg.profiles:
        return [hecsim.LayerProfile(**p) for p in cfg.profiles]
    return hecsim.default_profiles(cfg.data_type)


def state_fn_for(cfg: RunConfig, scored):
    if cfg.data_type == "univariate":
        return lambda w: bandit.extract_handcrafted(w).vector
    encoder = scored[0].detector  # the device computes the state with its own encoder
    return lambda w: bandit.encoded_states(encoder, [w])[0]


def policy_windows(cfg: RunConfig, windows):
    return data.make_splits(windows, "policy_training", normal_count=cfg.policy_normal_count).selected


def loop_config(cfg: RunConfig, n_windows: int | None = None, **extra) -> bandit.TrainLoopConfig:
    kw = {"seed": cfg.seed, "cost_alpha": cfg.cost_alpha}
    if cfg.data_type == "multivariate" and n_windows:
        # ten mini-batches per episode for the activity data
        kw.update(batches_per_episode=10, batch_n=max(1, -(-n_windows // 10)))
    kw.update(cfg.train_loop)
    kw.update(extra)
    if "hidden_units" not in cfg.train_loop and "hidden_units" not in extra:
        kw["hidden_units"] = (bandit.HIDDEN_UNITS["handcrafted_univariate"] if cfg.data_type == "univariate"
                              else bandit.HIDDEN_UNITS["encoded_multivariate"])
    return bandit.TrainLoopConfig(**kw)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ------------------------------------------------------------------ commands


def cmd_gen_data(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    series = generate_series(cfg) if cfg.data.source == "synthetic" else load_series(cfg)
    data.save_csv(cfg.out / "series.csv", series)
    print(f"wrote {series.steps} steps x {series.dims} dims "
          f"({int(series.step_labels.sum())} anomalous steps) to {cfg.out / 'series.csv'}")


def cross_validate(cfg: RunConfig, tier: str, seed: int, windows, epochs: int) -> list[float]:
    """Held-out reconstruction MSE per fold for one tier's architecture."""
    folds = np.array_split(np.arange(len(windows)), cfg.cv_folds)
    out = []
    for held in folds:
        if held.size == 0 or held.size == len(windows):
            continue
        mask = np.ones(len(windows), bool)
        mask[held] = False
        model = build_model(cfg, tier, seed)
        fit = [w for w, m in zip(windows, mask) if m]
        det = models.train_detector(model, fit, models.default_train_config(model, epochs, seed), tier)
        recs = models.reconstruct_many(det, [windows[i] for i in held])
        out.append(float(np.mean([np.mean(r.errors ** 2) for r in recs])))
    return out


def cmd_train_detectors(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    series = load_series(cfg)
    scaler = data.fit_scaler(series)
    windows = scaled_windows(series, scaler, cfg)
    train = data.make_splits(windows, "ad_training").selected
    epochs = cfg.detector_epochs if cfg.detector_epochs is not None else DEFAULT_EPOCHS[cfg.data_type]
    profiles = make_profiles(cfg)
    scored, rows, cv_rows = [], [], []
    for k, tier in enumerate(hecsim.TIERS):
        if cfg.cv_folds > 1:
            for f, mse in enumerate(cross_validate(cfg, tier, cfg.seed + k, train, epochs)):
                cv_rows.append([tier, f, mse])
        model = build_model(cfg, tier, cfg.seed + k)
        det = models.train_detector(model, train, models.default_train_config(model, epochs, cfg.seed + k), tier)
        models.save_detector(cfg.out / f"detector_{tier}.npz", det)
        scored.append(scoring.fit_scored_detector(det, train))
        final = det.loss_history[-1] if det.loss_history else float("nan")
        steps = window_spec(cfg).length
        drift = models.drift_ratio(det, train)
        if drift > 3:
            log.warning("%s detector: closed-loop error is %.1fx the teacher-forced error", tier, drift)
        rows.append([tier, det.kind, det.parameter_count(), profiles[k].exec_ms,
                     models.estimate_flops(det, steps), det.epochs_used, final, drift])
        log.info("trained %s detector: %d params, final loss %.5f", tier, det.parameter_count(), final)
    save_calibration(cfg.out / "calibration.json", scaler, scored)
    header = ("tier", "kind", "params", "exec_ms", "flops", "epochs", "final_loss", "drift_ratio")
    _write_csv(cfg.out / "detectors.csv", header, rows)
    if cv_rows:
        _write_csv(cfg.out / "cv.csv", ("tier", "fold", "heldout_mse"), cv_rows)
    print(f"{len(train)} training windows")
    print(f"{'tier':6} {'kind':8} {'params':>10} {'exec_ms':>8} {'flops':>12} {'epochs':>6} {'loss':>10} "
          f"{'drift':>6}")
    for r in rows:
        print(f"{r[0]:6} {r[1]:8} {r[2]:>10,} {r[3]:>8.1f} {r[4]:>12,} {r[5]:>6} {r[6]:>10.5f} {r[7]:>6.2f}")
    for tier in hecsim.TIERS:
        mses = [m for t, _, m in cv_rows if t == tier]
        if mses:
            print(f"cv {tier}: held-out mse {np.mean(mses):.5f} +/- {np.std(mses):.5f} over {len(mses)} folds")


def _pipeline_env(cfg: RunConfig, scored, windows, query_overhead_s: float = 0.0):
    deployment = hecsim.Deployment(make_profiles(cfg), scored)
    state_fn = state_fn_for(cfg, scored)
    states = np.stack([state_fn(w) for w in windows])
    return deployment, state_fn, schemes.build_env(deployment, windows, states, query_overhead_s)


def cmd_train_policy(cfg: RunConfig) -> None:
    scaler, scored = load_artifacts(cfg)
    windows = policy_windows(cfg, scaled_windows(load_series(cfg), scaler, cfg))
    deployment, _, env = _pipeline_env(cfg, scored, windows)
    lc = loop_config(cfg, env.size)
    t0 = time.perf_counter()
    if cfg.mode == "parallel":
        result = bandit.train_policy_parallel(env, lc, env.mean_delays())
    else:
        result = bandit.train_policy_sequential(env, lc)
    wall = time.perf_counter() - t0
    bandit.save_policy(cfg.out / "policy.npz", result.policy, {"mode": cfg.mode, "seed": cfg.seed,
                                                               "cost_alpha": lc.cost_alpha})
    bandit.write_log_csv(cfg.out / "policy_log.csv", result.log)
    last = result.log[-1].mean_reward if result.log else float("nan")
    print(f"trained policy on {env.size} windows ({cfg.mode}, {lc.n_epochs} episodes) in {wall:.2f} s; "
          f"final mean reward {last:.4f}")


def cmd_evaluate(cfg: RunConfig) -> None:
    scaler, scored = load_artifacts(cfg)
    windows = scaled_windows(load_series(cfg), scaler, cfg)
    kinds = schemes.parse_schemes(cfg.schemes)
    deployment = hecsim.Deployment(make_profiles(cfg), scored)
    artifacts = schemes.SchemeArtifacts(state_fn=state_fn_for(cfg, scored))
    if schemes.SchemeKind.ADAPTIVE in kinds:
        path = cfg.out / "policy.npz"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run train-policy first")
        artifacts.policy = bandit.load_policy(path)
    if {schemes.SchemeKind.KNN_SINGLE, schemes.SchemeKind.KNN_SEQUENCE} & set(kinds):
        train = policy_windows(cfg, windows)
        feats = np.stack([artifacts.state_fn(w) for w in train])
        k = cfg.knn_k or schemes.KNN_K[cfg.data_type]
        artifacts.knn = schemes.fit_knn_models(schemes.build_knn_training_data(train, deployment, feats), k)
    reports = []
    for kind in kinds:
        rep, records = schemes.evaluate_scheme(kind, windows, deployment, artifacts, cfg.cost_alpha)
        hecsim.write_records_csv(cfg.out / f"dispatch_{kind.value}.csv", records)
        reports.append(rep)
    schemes.write_reports_csv(cfg.out / "reports.csv", reports)
    schemes.write_reports_json(cfg.out / "reports.json", reports)
    print(schemes.comparison_table(reports))


SWEEP_COLUMNS = ("alpha", "accuracy", "mean_delay_ms", "mean_reward", "count_iot", "count_edge", "count_cloud")


def run_sweep(env: bandit.BanditEnv, alphas, make_config) -> list[schemes.EvaluationReport]:
    out = []
    for a in alphas:
        result = bandit.train_policy_parallel(env, make_config(a), env.mean_delays())
        out.append(schemes.evaluate_on_env("adaptive", env, result.policy, a))
    return out


def delay_trend(alphas, delays) -> float:
    """Spearman correlation of delay against alpha; a constant series counts as 0."""
    if np.ptp(delays) == 0:
        return 0.0
    return float(spearmanr(alphas, delays).statistic)


def cmd_sweep_alpha(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.sweep_env == "synthetic":
        env = bandit.make_synthetic_env(seed=cfg.seed)
        make = lambda a: loop_config(cfg, cost_alpha=a, hidden_units=cfg.train_loop.get("hidden_units", 100))
    else:
        scaler, scored = load_artifacts(cfg)
        windows = policy_windows(cfg, scaled_windows(load_series(cfg), scaler, cfg))
        env = _pipeline_env(cfg, scored, windows)[2]
        make = lambda a: loop_config(cfg, env.size, cost_alpha=a)
    alphas = [float(a) for a in cfg.alphas]
    reports = run_sweep(env, alphas, make)
    rows = [[a, r.accuracy, r.mean_delay_ms, r.mean_reward, r.tier_counts["iot"], r.tier_counts["edge"],
             r.tier_counts["cloud"]] for a, r in zip(alphas, reports)]
    _write_csv(cfg.out / "sweep.csv", SWEEP_COLUMNS, rows)
    for row in rows:
        print(f"alpha={row[0]:<8g} accuracy={row[1]:.4f} delay={row[2]:8.2f} ms reward={row[3]:.4f}")
    if len(alphas) > 1:
        print(f"spearman(alpha, delay) = {delay_trend(alphas, [r[2] for r in rows]):.3f}")


COMMANDS = {"gen-data": cmd_gen_data, "train-detectors": cmd_train_detectors, "train-policy": cmd_train_policy,
            "evaluate": cmd_evaluate, "sweep-alpha": cmd_sweep_alpha}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its values")
    common.add_argument("--seed", type=int, help="seed for data, detectors and policy (default 0)")
    common.add_argument("--out-dir", dest="out_dir", help="artifact directory (default runs/default)")
    common.add_argument("--data-type", dest="data_type", choices=("univariate", "multivariate"))
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="hecad", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter,
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic (or ingested) series to series.csv")
    td = sub.add_parser("train-detectors", parents=[common], help="train and calibrate the three tier detectors")
    td.add_argument("--epochs", type=int, dest="detector_epochs")
    td.add_argument("--cv-folds", type=int, dest="cv_folds", help="k-fold check of detector training (default off)")
    tp = sub.add_parser("train-policy", parents=[common], help="train the tier-selection policy")
    tp.add_argument("--mode", choices=("sequential", "parallel"))
    tp.add_argument("--episodes", type=int)
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate schemes and print the comparison table")
    ev.add_argument("--schemes", help="comma-separated subset of " + ",".join(k.value for k in schemes.SchemeKind))
    ev.add_argument("--alpha", type=float, dest="cost_alpha")
    sw = sub.add_parser("sweep-alpha", parents=[common], help="retrain the policy per alpha and write sweep.csv")
    sw.add_argument("--alphas", help="comma-separated alpha values")
    sw.add_argument("--env", dest="sweep_env", choices=("synthetic", "pipeline"))
    sw.add_argument("--episodes", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    over = {k: getattr(args, k, None) for k in ("seed", "out_dir", "data_type", "detector_epochs", "mode",
                                                 "schemes", "cost_alpha", "sweep_env", "cv_folds")}
    try:
        if getattr(args, "alphas", None):
            try:
                over["alphas"] = [float(a) for a in args.alphas.split(",")]
            except ValueError:
                raise UsageError(f"bad --alphas {args.alphas!r}") from None
        cfg = load_config(args.config, over)
        if getattr(args, "episodes", None) is not None:
            cfg.train_loop = {**cfg.train_loop, "n_epochs": args.episodes}
            cfg.validate()
        COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"hecad: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, FloatingPointError, json.JSONDecodeError) as e:
        print(f"hecad: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
