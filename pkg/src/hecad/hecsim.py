"""Deterministic simulation of the IoT/edge/cloud hierarchy: per-tier
execution-time and network-delay models and end-to-end delay accounting."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

TIERS = ("iot", "edge", "cloud")

# mean execution times (ms) measured per tier on the testbed hardware
EXEC_MS = {
    "univariate": (12.4, 7.4, 4.5),
    "multivariate": (591.0, 417.3, 232.3),
}
# network component (ms): end-to-end delay minus execution time
NET_MS = (0.0, 250.0, 500.0)


def tier_index(tier) -> int:
    if isinstance(tier, (int, np.integer)):
        if not 0 <= tier < len(TIERS):
            raise ValueError(f"tier index {tier} out of range")
        return int(tier)
    try:
        return TIERS.index(tier)
    except ValueError:
        raise ValueError(f"unknown tier {tier!r}; expected one of {TIERS}") from None


@dataclass
class LayerProfile:
    tier: str
    exec_ms: float
    net_rtt_ms: float = 0.0
    payload_ms: float = 0.0
    jitter: float = 0.0  # uniform +/- fraction of exec_ms

    def __post_init__(self):
        if min(self.exec_ms, self.net_rtt_ms, self.payload_ms, self.jitter) < 0:
            raise ValueError("durations and jitter must be non-negative")
        if self.tier == "iot" and self.net_rtt_ms != 0:
            raise ValueError("the IoT tier runs locally; its network delay must be 0")

    def exec_time(self, rng: np.random.Generator | None = None) -> float:
        if self.jitter and rng is not None:
            return self.exec_ms * (1.0 + rng.uniform(-self.jitter, self.jitter))
        return self.exec_ms

    @property
    def mean_e2e_ms(self) -> float:
        return self.net_rtt_ms + self.payload_ms + self.exec_ms


def default_profiles(data_type: str) -> list[LayerProfile]:
    if data_type not in EXEC_MS:
        raise ValueError(f"unknown data type {data_type!r}")
    return [LayerProfile(t, e, n) for t, e, n in zip(TIERS, EXEC_MS[data_type], NET_MS)]


@dataclass
class SimClock:
    now_ms: float = 0.0

    def advance(self, ms: float) -> float:
        if ms < 0:
            raise ValueError("clock cannot move backwards")
        self.now_ms += ms
        return self.now_ms


@dataclass
class Deployment:
    """One scored detector per tier plus the tier delay profiles.

    `detectors[k]` needs a `detect_many(windows)` method returning detection
    results (see `scoring.ScoredDetector`). Results are memoized per window
    origin since detectors are deterministic.
    """

    profiles: list[LayerProfile]
    detectors: list
    rng: np.random.Generator | None = None
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.profiles) != len(TIERS) or len(self.detectors) != len(TIERS):
            raise ValueError("a deployment needs exactly one profile and one detector per tier")

    @property
    def K(self) -> int:
        return len(self.profiles)

    def results(self, tier, windows) -> list:
        k = tier_index(tier)
        missing = [w for w in windows if (k, _key(w)) not in self._memo]
        if missing:
            for w, r in zip(missing, self.detectors[k].detect_many(missing)):
                self._memo[(k, _key(w))] = r
        return [self._memo[(k, _key(w))] for w in windows]


def _key(window):
    origin = getattr(window, "origin", None)
    return origin if origin is not None else id(window)


@dataclass
class DispatchRecord:
    origin: tuple
    tier: str
    label: bool
    result: object
    t_e2e_ms: float
    attempts: tuple[str, ...] = ()

    @property
    def prediction(self) -> bool:
        return bool(self.result.is_anomaly)

    @property
    def correct(self) -> bool:
        return self.prediction == bool(self.label)


def simulate_e2e(deployment: Deployment, tier, window, clock: SimClock | None = None) -> DispatchRecord:
    k = tier_index(tier)
    prof = deployment.profiles[k]
    result = deployment.results(k, [window])[0]
    t = prof.net_rtt_ms + prof.payload_ms + prof.exec_time(deployment.rng)
    if clock is not None:
        clock.advance(t)
    return DispatchRecord(getattr(window, "origin", None), TIERS[k], bool(getattr(window, "label", False)),
                          result, t, (TIERS[k],))


@dataclass
class ReplayReport:
    n: int
    mean_delay_ms: float
    accuracy: float
    f1: float
    mean_reward: float
    tier_counts: dict


def summarize(records, cost_alpha: float) -> ReplayReport:
    from .bandit import cost, reward
    from .scoring import score_run

    if not records:
        raise ValueError("no dispatch records")
    metrics = score_run([r.prediction for r in records], [r.label for r in records])
    rewards = [reward(float(r.correct), cost(r.t_e2e_ms, cost_alpha)) for r in records]
    counts = {t: 0 for t in TIERS}
    for r in records:
        for t in r.attempts or (r.tier,):
            counts[t] += 1
    return ReplayReport(len(records), float(np.mean([r.t_e2e_ms for r in records])), metrics.accuracy,
                        metrics.f1, float(np.mean(rewards)), counts)


def replay(deployment: Deployment, windows, selector: Callable, clock: SimClock | None = None,
           cost_alpha: float = 0.0005):
    windows = list(windows)
    if not windows:
        raise ValueError("nothing to replay")
    clock = clock or SimClock()
    records = [simulate_e2e(deployment, selector(w), w, clock) for w in windows]
    return records, summarize(records, cost_alpha)


# ------------------------------------------------------------------ file i/o

RECORD_COLUMNS = ("origin", "tier", "label", "prediction", "t_e2e_ms")


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            origin = ":".join(str(p) for p in r.origin) if r.origin is not None else ""
            w.writerow([origin, r.tier, int(r.label), int(r.prediction), f"{r.t_e2e_ms:.6f}"])


def save_profiles(path, profiles, extra: dict | None = None) -> None:
    doc = {"profiles": [asdict(p) for p in profiles]}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2))


def load_profiles(path) -> tuple[list[LayerProfile], dict]:
    doc = json.loads(Path(path).read_text())
    profiles = [LayerProfile(**p) for p in doc.pop("profiles")]
    return profiles, doc
