"""Time series, standardization, windowing, splits, CSV ingestion and the
seeded synthetic generators used in place of the public datasets."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STD_FLOOR = 1e-12
STEPS_PER_DAY = 96
DAYS_PER_WEEK = 7
STEPS_PER_WEEK = STEPS_PER_DAY * DAYS_PER_WEEK
MHEALTH_DIMS = 18


@dataclass
class TimeSeries:
    values: np.ndarray  # (steps, dims)
    step_labels: np.ndarray  # (steps,) bool
    sample_period: float = 1.0  # seconds
    series_id: str = "series"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.step_labels = np.asarray(self.step_labels, dtype=bool).ravel()
        if self.step_labels.size != self.values.shape[0]:
            raise ValueError(f"{self.step_labels.size} labels for {self.values.shape[0]} steps")

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    length: int
    stride: int

    def __post_init__(self):
        if self.length <= 0 or self.stride <= 0:
            raise ValueError("window length and stride must be positive")


UNIVARIATE_WINDOW = WindowSpec(STEPS_PER_WEEK, STEPS_PER_WEEK)
MULTIVARIATE_WINDOW = WindowSpec(128, 64)


@dataclass
class Window:
    data: np.ndarray  # (length, dims)
    label: bool
    origin: tuple[str, int] = ("series", 0)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def fit_scaler(train: TimeSeries) -> Scaler:
    if train.steps == 0:
        raise ValueError("cannot fit a scaler on an empty series")
    mean = train.values.mean(axis=0)
    std = np.maximum(train.values.std(axis=0), STD_FLOOR)
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, series: TimeSeries) -> TimeSeries:
    return TimeSeries(scaler.transform(series.values), series.step_labels.copy(),
                      series.sample_period, series.series_id)


def slide_windows(series: TimeSeries, spec: WindowSpec) -> list[Window]:
    if series.steps < spec.length:
        raise ValueError(f"series of {series.steps} steps is shorter than one window ({spec.length})")
    count = (series.steps - spec.length) // spec.stride + 1
    out = []
    for k in range(count):
        s = k * spec.stride
        out.append(Window(series.values[s:s + spec.length].copy(),
                          bool(series.step_labels[s:s + spec.length].any()),
                          (series.series_id, s)))
    return out


# ---------------------------------------------------------------- generators


def _day_profile(high: bool, rng) -> np.ndarray:
    t = np.arange(STEPS_PER_DAY)
    base = 1.0 + 0.1 * np.sin(2 * np.pi * t / STEPS_PER_DAY)
    if high:
        # working-hours plateau with smooth shoulders (roughly 07:00-19:00)
        ramp = 1.0 / (1.0 + np.exp(-(t - 28) / 2.0)) - 1.0 / (1.0 + np.exp(-(t - 76) / 2.0))
        base = base + 3.0 * ramp * rng.uniform(0.99, 1.01)
    return base + rng.normal(0.0, 0.05, STEPS_PER_DAY)


def gen_univariate_weekly(weeks: int, anomalous_weeks=(), seed: int = 0) -> TimeSeries:
    """Weekly power-demand-like series: five weekday peaks, two low weekend days.

    Each anomalous week either drops one weekday to the weekend level or
    raises one weekend day to the weekday level; only that day is labeled.
    """
    if weeks <= 0:
        raise ValueError("need at least one week")
    anomalous = set(int(w) for w in anomalous_weeks)
    if not anomalous <= set(range(weeks)):
        raise ValueError(f"anomalous weeks {sorted(anomalous)} outside 0..{weeks - 1}")
    rng = np.random.Generator(np.random.PCG64(seed))
    values, labels = [], []
    for w in range(weeks):
        flipped = None
        if w in anomalous:
            flipped = int(rng.integers(0, DAYS_PER_WEEK))
        for d in range(DAYS_PER_WEEK):
            high = d < 5
            if d == flipped:
                high = not high
            values.append(_day_profile(high, rng))
            labels.append(np.full(STEPS_PER_DAY, d == flipped))
    return TimeSeries(np.concatenate(values), np.concatenate(labels), 900.0, "univariate")


# activity signatures: (base frequency in Hz, amplitude)
NORMAL_ACTIVITY = (1.0, 1.0)
ANOMALOUS_ACTIVITIES = ((0.3, 0.4), (2.5, 1.8), (1.6, 0.6), (0.0, 0.2))


def _activity_segment(freq: float, amp: float, steps: int, rng, rate_hz: float) -> np.ndarray:
    t = np.arange(steps) / rate_hz
    phases = rng.uniform(0, 2 * np.pi, MHEALTH_DIMS)
    harmonics = 1.0 + 0.5 * (np.arange(MHEALTH_DIMS) % 3)
    gains = amp * (0.8 + 0.4 * (np.arange(MHEALTH_DIMS) % 2))
    x = gains * np.sin(2 * np.pi * freq * harmonics * t[:, None] + phases)
    return x + rng.normal(0.0, 0.05, (steps, MHEALTH_DIMS))


def gen_multivariate_activity(subjects: int = 1, normal_segments: int = 4, anomalous_segments: int = 1,
                              segment_steps: int = 256, seed: int = 0, rate_hz: float = 50.0) -> TimeSeries:
    """18-channel activity series; one dominant normal activity plus anomalous ones.

    Each subject contributes `normal_segments` normal and `anomalous_segments`
    anomalous segments (cycling through the anomalous signatures) in seeded
    random order.
    """
    if normal_segments < 1 or segment_steps < 1:
        raise ValueError("need at least one normal segment of positive length")
    if subjects < 1 or anomalous_segments < 0:
        raise ValueError("invalid subject/segment counts")
    rng = np.random.Generator(np.random.PCG64(seed))
    values, labels = [], []
    for _ in range(subjects):
        kinds = [None] * normal_segments + [i % len(ANOMALOUS_ACTIVITIES) for i in range(anomalous_segments)]
        for j in rng.permutation(len(kinds)):
            kind = kinds[j]
            freq, amp = NORMAL_ACTIVITY if kind is None else ANOMALOUS_ACTIVITIES[kind]
            values.append(_activity_segment(freq, amp, segment_steps, rng, rate_hz))
            labels.append(np.full(segment_steps, kind is not None))
    return TimeSeries(np.concatenate(values), np.concatenate(labels), 1.0 / rate_hz, "multivariate")


# ----------------------------------------------------------------------- csv


def load_csv(path, dims: int, label_column: bool = False, series_id: str | None = None) -> TimeSeries:
    """Read one row per time step: `dims` numeric columns, then an optional
    integer label column (nonzero = anomalous). A non-numeric first row is
    treated as a header."""
    path = Path(path)
    values, labels = [], []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            expected = dims + (1 if label_column else 0)
            try:
                nums = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and not values:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: non-numeric field in row {row!r}") from None
            if len(nums) != expected:
                raise ValueError(f"{path}:{lineno}: expected {expected} columns, got {len(nums)}")
            values.append(nums[:dims])
            labels.append(bool(int(nums[dims])) if label_column else False)
    if not values:
        raise ValueError(f"{path}: no data rows")
    return TimeSeries(np.array(values), np.array(labels), 1.0, series_id or path.stem)


def save_csv(path, series: TimeSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(series.dims)] + ["label"])
        for row, lab in zip(series.values, series.step_labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


# --------------------------------------------------------------------- splits


@dataclass
class Partition:
    selected: list[Window]
    rest: list[Window] = field(default_factory=list)


def _normal_anomalous(windows):
    normal = [w for w in windows if not w.label]
    anomalous = [w for w in windows if w.label]
    return normal, anomalous


def make_splits(windows, purpose: str, *, train_ratio: float = 0.7, normal_count: int | None = None,
                normal_fraction: float | None = None, anomalous_fraction: float = 1.0,
                seed: int | None = None) -> Partition:
    """Partition windows for detector training, policy training or evaluation.

    ad_training: `train_ratio` of the normal windows (the rest of the set is
    returned as `rest`). policy_training: `anomalous_fraction` of the anomalous
    windows plus normal windows held out from detector training, either
    `normal_count` of them, `normal_fraction` of all normals, or by default
    as many as there are anomalous ones. evaluation: everything.
    """
    windows = list(windows)
    rng = np.random.Generator(np.random.PCG64(seed)) if seed is not None else None
    normal, anomalous = _normal_anomalous(windows)
    if rng is not None:
        normal = [normal[i] for i in rng.permutation(len(normal))]
    n_train = int(round(train_ratio * len(normal)))

    if purpose == "ad_training":
        if not normal:
            raise ValueError("no normal windows available for detector training")
        train = normal[:n_train]
        chosen = {id(w) for w in train}
        return Partition(train, [w for w in windows if id(w) not in chosen])
    if purpose == "policy_training":
        n_anom = int(round(anomalous_fraction * len(anomalous)))
        if rng is not None:
            anomalous = [anomalous[i] for i in rng.permutation(len(anomalous))]
        anom = anomalous[:n_anom]
        if normal_count is None:
            normal_count = (int(round(normal_fraction * len(normal))) if normal_fraction is not None
                            else len(anom))
        held_out = normal[n_train:] + normal[:n_train]
        norm = held_out[:normal_count]
        chosen = {id(w) for w in anom + norm}
        ordered = [w for w in windows if id(w) in chosen]
        return Partition(ordered, [w for w in windows if id(w) not in chosen])
    if purpose == "evaluation":
        return Partition(windows, [])
    raise ValueError(f"unknown split purpose {purpose!r}")
