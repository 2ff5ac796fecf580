"""Gaussian error model, logPD anomaly scores, threshold calibration and
confusion-matrix metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COV_REG = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianErrorModel:
    mu: np.ndarray
    sigma: np.ndarray  # regularized covariance, (dim, dim)

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        chol = np.linalg.cholesky(self.sigma)
        self._logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        self._whiten = np.linalg.inv(chol)

    @property
    def dim(self) -> int:
        return self.mu.size

    def log_pd_many(self, errors) -> np.ndarray:
        e = np.asarray(errors, dtype=np.float64).reshape(-1, self.dim)
        # plain einsum keeps each row's arithmetic independent of batch size,
        # so a step scores identically in calibration and in detection
        z = np.einsum("nj,kj->nk", e - self.mu, self._whiten, optimize=False)
        maha = np.einsum("nk,nk->n", z, z, optimize=False)
        return -0.5 * (self.dim * LOG_2PI + self._logdet + maha)


def fit_error_model(errors) -> GaussianErrorModel:
    e = np.asarray(errors, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] < 2:
        raise ValueError("need at least 2 error vectors to fit a Gaussian")
    mu = e.mean(axis=0)
    cov = np.atleast_2d(np.cov(e, rowvar=False, ddof=1))
    return GaussianErrorModel(mu, cov + COV_REG * np.eye(e.shape[1]))


def log_pd(model: GaussianErrorModel, error) -> float:
    error = np.atleast_1d(np.asarray(error, dtype=np.float64))
    if error.size != model.dim:
        raise ValueError(f"error has dim {error.size}, model expects {model.dim}")
    return float(model.log_pd_many(error)[0])


@dataclass
class DetectorCalibration:
    threshold: float
    confident_factor: float = 2.0
    confident_fraction: float = 0.05

    def __post_init__(self):
        if self.confident_factor < 1:
            raise ValueError("confident_factor must be >= 1")
        if not 0 < self.confident_fraction < 1:
            raise ValueError("confident_fraction must be in (0, 1)")


def calibrate(model: GaussianErrorModel | None, training_errors, *, confident_factor=2.0,
              confident_fraction=0.05) -> DetectorCalibration:
    """Threshold = smallest logPD seen on normal training data.

    With `model=None`, `training_errors` are taken to be logPD values already.
    """
    if model is None:
        scores = np.asarray(training_errors, dtype=np.float64).ravel()
    else:
        scores = model.log_pd_many(training_errors)
    if scores.size == 0:
        raise ValueError("cannot calibrate on an empty set")
    return DetectorCalibration(float(scores.min()), confident_factor, confident_fraction)


@dataclass
class DetectionResult:
    is_anomaly: bool
    is_confident: bool
    per_step_logpd: np.ndarray
    anomalous_step_count: int


def detect(per_step_logpd, cal: DetectorCalibration) -> DetectionResult:
    lp = np.asarray(per_step_logpd, dtype=np.float64).ravel()
    if lp.size == 0:
        raise ValueError("empty logPD vector")
    n_anom = int(np.sum(lp < cal.threshold))
    # threshold is negative, so factor * threshold is the stricter bound
    very_low = bool(np.any(lp < cal.confident_factor * cal.threshold))
    many = n_anom > cal.confident_fraction * lp.size
    return DetectionResult(n_anom >= 1, very_low or many, lp, n_anom)


@dataclass
class ConfusionMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def score_run(predictions, truth) -> ConfusionMetrics:
    pred = np.asarray(predictions, dtype=bool)
    true = np.asarray(truth, dtype=bool)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    return ConfusionMetrics(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
    )


@dataclass
class ScoredDetector:
    """A trained detector bundled with its error model and threshold."""

    detector: object
    error_model: GaussianErrorModel
    calibration: DetectorCalibration

    def logpd(self, reconstruction) -> np.ndarray:
        return self.error_model.log_pd_many(reconstruction.errors)

    def detect_many(self, windows) -> list[DetectionResult]:
        from .models import reconstruct_many

        return [detect(self.logpd(r), self.calibration) for r in reconstruct_many(self.detector, windows)]

    def detect(self, window) -> DetectionResult:
        return self.detect_many([window])[0]


def fit_scored_detector(detector, training_windows, **cal_kwargs) -> ScoredDetector:
    """Fit the error Gaussian on per-step training errors and set the threshold."""
    from .models import reconstruct_many

    recs = reconstruct_many(detector, training_windows)
    model = fit_error_model(np.concatenate([r.errors for r in recs], axis=0))
    scores = np.concatenate([model.log_pd_many(r.errors) for r in recs])
    return ScoredDetector(detector, model, calibrate(None, scores, **cal_kwargs))
