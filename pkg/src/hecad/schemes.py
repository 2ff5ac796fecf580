"""Tier-selection schemes and their evaluation: fixed tiers, successive
escalation, two kNN selectors and the adaptive policy."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import bandit
from .hecsim import TIERS, Deployment, DispatchRecord, tier_index

KNN_K = {"univariate": 4, "multivariate": 3}


class SchemeKind(str, Enum):
    IOT = "iot"
    EDGE = "edge"
    CLOUD = "cloud"
    SUCCESSIVE = "successive"
    KNN_SINGLE = "knn_single"
    KNN_SEQUENCE = "knn_sequence"
    ADAPTIVE = "adaptive"


FIXED = (SchemeKind.IOT, SchemeKind.EDGE, SchemeKind.CLOUD)


def parse_schemes(names) -> list[SchemeKind]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    out = []
    for n in names:
        try:
            out.append(SchemeKind(n.strip()))
        except ValueError:
            raise ValueError(f"unknown scheme {n!r}; choose from {[k.value for k in SchemeKind]}") from None
    return out


# ----------------------------------------------------------------------- knn


@dataclass
class KnnClassifier:
    k: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if self.features.shape[0] == 0:
            raise ValueError("kNN needs a nonempty training set")
        if self.labels.size != self.features.shape[0]:
            raise ValueError("one label per training vector")
        if not 1 <= self.k <= self.labels.size:
            raise ValueError(f"k={self.k} must be in [1, {self.labels.size}]")

    def predict(self, feature) -> int:
        x = np.asarray(getattr(feature, "vector", feature), dtype=np.float64).ravel()
        d = np.linalg.norm(self.features - x, axis=1)
        nearest = np.argsort(d, kind="stable")[: self.k]
        best = None
        for lab in np.unique(self.labels[nearest]):
            mine = d[nearest][self.labels[nearest] == lab]
            key = (-mine.size, mine.mean(), lab)  # votes, then mean distance, then label
            if best is None or key < best:
                best = key
        return int(best[2])


def knn_train(features, labels, k: int) -> KnnClassifier:
    return KnnClassifier(k, features, labels)


def knn_predict(classifier: KnnClassifier, feature) -> int:
    return classifier.predict(feature)


@dataclass
class KnnTrainingData:
    features: np.ndarray
    single_labels: np.ndarray  # lowest correct tier, cloud if none
    stop_labels: np.ndarray  # (n, K) 1 = stop at this tier


def tier_correctness(deployment: Deployment, windows) -> np.ndarray:
    """(n, K) 0/1 matrix: does tier k classify window i correctly."""
    labels = np.array([bool(w.label) for w in windows])
    pred = np.array([[r.is_anomaly for r in deployment.results(k, windows)] for k in range(len(TIERS))]).T
    return (pred == labels[:, None]).astype(np.float64)


def build_knn_training_data(windows, deployment: Deployment, features) -> KnnTrainingData:
    correct = tier_correctness(deployment, list(windows))
    first = np.where(correct.any(axis=1), np.argmax(correct, axis=1), len(TIERS) - 1)
    return KnnTrainingData(np.asarray(features, dtype=np.float64), first, correct.astype(int))


@dataclass
class KnnModels:
    single: KnnClassifier
    sequence: list[KnnClassifier]  # one stop/continue classifier per non-final tier


def fit_knn_models(data: KnnTrainingData, k: int) -> KnnModels:
    n = data.features.shape[0]
    k = min(k, n)
    seq = [knn_train(data.features, data.stop_labels[:, t], k) for t in range(len(TIERS) - 1)]
    return KnnModels(knn_train(data.features, data.single_labels, k), seq)


# -------------------------------------------------------------------- report


@dataclass
class EvaluationReport:
    scheme: str
    f1: float
    accuracy: float
    mean_delay_ms: float
    mean_reward: float
    tier_counts: dict = field(default_factory=dict)
    selector_overhead_ms: float = 0.0
    n: int = 0
    note: str = ""


REPORT_COLUMNS = ("scheme", "f1", "accuracy", "mean_delay_ms", "mean_reward", "count_iot", "count_edge",
                  "count_cloud", "selector_overhead_ms", "n", "note")


@dataclass
class SchemeArtifacts:
    """What the non-fixed schemes need. `state_fn` maps a window to the
    contextual state vector shared by the policy and the kNN selectors."""

    state_fn: object = None
    policy: bandit.PolicyNetwork | None = None
    knn: KnnModels | None = None


def _dispatch(deployment: Deployment, window, tiers) -> DispatchRecord:
    t = 0.0
    for k in tiers:
        p = deployment.profiles[k]
        t += p.net_rtt_ms + p.payload_ms + p.exec_time(deployment.rng)
    result = deployment.results(tiers[-1], [window])[0]
    return DispatchRecord(getattr(window, "origin", None), TIERS[tiers[-1]], bool(window.label), result, t,
                          tuple(TIERS[k] for k in tiers))


def successive_tiers(deployment: Deployment, window) -> list[int]:
    tiers = []
    for k in range(len(TIERS)):
        tiers.append(k)
        if deployment.results(k, [window])[0].is_confident:
            break
    return tiers


def _require(kind, artifacts):
    need = {SchemeKind.ADAPTIVE: ("policy", "state_fn"), SchemeKind.KNN_SINGLE: ("knn", "state_fn"),
            SchemeKind.KNN_SEQUENCE: ("knn", "state_fn")}.get(kind, ())
    missing = [n for n in need if artifacts is None or getattr(artifacts, n) is None]
    if missing:
        raise ValueError(f"scheme {kind.value} needs {', '.join(missing)}")


def select_tiers(kind: SchemeKind, window, deployment: Deployment, artifacts: SchemeArtifacts | None) -> list[int]:
    """Tiers a scheme visits for one window, in order (last one answers)."""
    if kind in FIXED:
        return [tier_index(kind.value)]
    if kind is SchemeKind.SUCCESSIVE:
        return successive_tiers(deployment, window)
    z = artifacts.state_fn(window)
    if kind is SchemeKind.ADAPTIVE:
        return [bandit.greedy_action(bandit.policy_forward(artifacts.policy, z))]
    if kind is SchemeKind.KNN_SINGLE:
        return [artifacts.knn.single.predict(z)]
    for t, clf in enumerate(artifacts.knn.sequence):
        if clf.predict(z) == 1:
            return list(range(t + 1))
    return list(range(len(TIERS)))


def evaluate_scheme(kind, windows, deployment: Deployment, artifacts: SchemeArtifacts | None = None,
                    cost_alpha: float = 0.0005) -> tuple[EvaluationReport, list[DispatchRecord]]:
    from .hecsim import summarize

    kind = SchemeKind(kind)
    windows = list(windows)
    if not windows:
        raise ValueError("no windows to evaluate")
    _require(kind, artifacts)
    records, overhead = [], []
    for w in windows:
        t0 = time.perf_counter()
        tiers = select_tiers(kind, w, deployment, artifacts)
        if kind not in FIXED and kind is not SchemeKind.SUCCESSIVE:
            overhead.append((time.perf_counter() - t0) * 1e3)
        if kind is SchemeKind.KNN_SEQUENCE:
            # the sequence runs only the final tier's detector; the earlier
            # stops are answered by the classifiers, not the detectors
            tiers = tiers[-1:]
        records.append(_dispatch(deployment, w, tiers))
    rep = summarize(records, cost_alpha)
    note = "successive has no single-tier reward; computed from total delay" if kind is SchemeKind.SUCCESSIVE else ""
    report = EvaluationReport(kind.value, rep.f1, rep.accuracy, rep.mean_delay_ms, rep.mean_reward,
                              rep.tier_counts, float(np.mean(overhead)) if overhead else 0.0, rep.n, note)
    return report, records


def evaluate_on_env(kind, env: bandit.BanditEnv, policy: bandit.PolicyNetwork | None = None,
                    cost_alpha: float = 0.0005) -> EvaluationReport:
    """Score a fixed or adaptive scheme directly on a bandit environment table."""
    kind = SchemeKind(kind)
    if kind in FIXED:
        actions = np.full(env.size, tier_index(kind.value))
    elif kind is SchemeKind.ADAPTIVE:
        if policy is None:
            raise ValueError("adaptive scheme needs a policy")
        actions = np.argmax(policy.forward(env.states), axis=1)
    else:
        raise ValueError(f"scheme {kind.value} cannot be scored on a bandit table")
    idx = np.arange(env.size)
    acc, delay = env.accuracy[idx, actions], env.delay_ms[idx, actions]
    r = bandit.reward(acc, bandit.cost(delay, cost_alpha))
    counts = {t: int(np.sum(actions == k)) for k, t in enumerate(TIERS)}
    return EvaluationReport(kind.value, float("nan"), float(acc.mean()), float(delay.mean()), float(r.mean()),
                            counts, 0.0, env.size, "bandit-table evaluation; f1 undefined")


def build_env(deployment: Deployment, windows, states, query_overhead_s: float = 0.0) -> bandit.BanditEnv:
    """Replay table of per-(window, tier) correctness and mean end-to-end delay."""
    windows = list(windows)
    correct = tier_correctness(deployment, windows)
    delays = np.tile([p.mean_e2e_ms for p in deployment.profiles], (len(windows), 1))
    return bandit.BanditEnv(np.asarray(states, dtype=np.float64), correct, delays, query_overhead_s)


# ----------------------------------------------------------------------- i/o


def _row(r: EvaluationReport) -> list:
    return [r.scheme, r.f1, r.accuracy, r.mean_delay_ms, r.mean_reward, r.tier_counts.get("iot", 0),
            r.tier_counts.get("edge", 0), r.tier_counts.get("cloud", 0), r.selector_overhead_ms, r.n, r.note]


def write_reports_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(_row(r))


def write_reports_json(path, reports) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in reports], indent=2))


def comparison_table(reports) -> str:
    head = ("scheme", "F1", "acc(%)", "delay(ms)", "reward", "iot/edge/cloud", "sel(ms)")
    rows = [head]
    for r in reports:
        c = r.tier_counts
        rows.append((r.scheme, f"{r.f1:.3f}", f"{100 * r.accuracy:.2f}", f"{r.mean_delay_ms:.2f}",
                     f"{r.mean_reward:.4f}", f"{c.get('iot', 0)}/{c.get('edge', 0)}/{c.get('cloud', 0)}",
                     f"{r.selector_overhead_ms:.3f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = ["  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(row))
             for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)
