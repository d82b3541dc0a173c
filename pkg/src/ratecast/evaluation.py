"""Prediction scoring, spectra and the peer-selection stretch experiment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .factorization import FactorModel, ensemble_predict, ensemble_value, predict, predict_rating
from .ratings import MetricKind, MetricMatrix, RatingMatrix

SPECTRUM_MAX_N = 3000


def rmse(actual, predicted) -> float:
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise ValueError(f"length mismatch: {actual.shape} vs {predicted.shape}")
    if actual.size == 0:
        raise ValueError("rmse of an empty sample is undefined")
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))


def confusion_matrix(actual, predicted, R: int = 5) -> np.ndarray:
    """Row-normalized counts: rows are actual ratings, columns predicted ratings."""
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape:
        raise ValueError("length mismatch")
    for name, arr in (("actual", actual), ("predicted", predicted)):
        if arr.size and (arr.min() < 1 or arr.max() > R):
            raise ValueError(f"{name} ratings outside [1, {R}]")
    counts = np.zeros((R, R))
    np.add.at(counts, (actual - 1, predicted - 1), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


@dataclass
class EvalReport:
    rmse: float
    confusion: np.ndarray
    error_gt1_fraction: float
    accuracy: float
    count: int

    def to_text(self) -> str:
        R = self.confusion.shape[0]
        lines = [f"count={self.count}", f"rmse={self.rmse:.6f}", f"accuracy={self.accuracy:.6f}",
                 f"error_gt1_fraction={self.error_gt1_fraction:.6f}", "confusion (rows=actual, cols=predicted)",
                 "     " + "".join(f"{p:>7d}" for p in range(1, R + 1))]
        for a in range(R):
            lines.append(f"{a + 1:>5d}" + "".join(f"{x:7.2f}" for x in self.confusion[a]))
        return "\n".join(lines) + "\n"

    def confusion_csv(self) -> str:
        R = self.confusion.shape[0]
        lines = ["actual," + ",".join(f"pred_{p}" for p in range(1, R + 1))]
        lines.extend(f"{a + 1}," + ",".join(f"{x:.6f}" for x in row) for a, row in enumerate(self.confusion))
        return "\n".join(lines) + "\n"


def evaluate_predictions(actual, predicted, R: int = 5) -> EvalReport:
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    return EvalReport(
        rmse=rmse(actual, predicted),
        confusion=confusion_matrix(actual, predicted, R),
        error_gt1_fraction=float(np.mean(np.abs(actual - predicted) > 1)),
        accuracy=float(np.mean(actual == predicted)),
        count=int(actual.size),
    )


def evaluate(models: FactorModel | Sequence[FactorModel], test: RatingMatrix) -> EvalReport:
    """Score one model, or the ensemble of several, on held-out ratings."""
    if isinstance(models, FactorModel):
        models = [models]
    if any(m.n != test.n for m in models):
        raise ValueError(f"model size n={models[0].n} does not match test matrix n={test.n}")
    if len(models) == 1:
        pred = predict_rating(models[0], test.rows, test.cols)
    else:
        pred = ensemble_predict(models, test.rows, test.cols)
    return evaluate_predictions(test.ratings, pred, test.R)


def singular_spectrum(m: np.ndarray) -> np.ndarray:
    """Singular values of a complete matrix, divided by the largest, descending."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has missing or non-finite entries; the spectrum needs a complete matrix")
    if max(m.shape) > SPECTRUM_MAX_N:
        raise ValueError(f"matrix larger than {SPECTRUM_MAX_N} on a side is not supported")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("spectrum of an all-zero matrix is undefined")
    return s / s[0]


@dataclass
class StretchReport:
    kind: MetricKind
    peer_set_sizes: list[int]
    median_rating: list[float] = field(default_factory=list)
    median_random: list[float] = field(default_factory=list)
    mean_rating: list[float] = field(default_factory=list)
    mean_random: list[float] = field(default_factory=list)

    def closeness(self, values) -> np.ndarray:
        """Distance from the optimum 1 on a log scale, so RTT and ABW compare alike."""
        return np.abs(np.log(np.asarray(values)))

    def to_csv(self) -> str:
        lines = ["peer_set_size,median_rating_based,median_random,mean_rating_based,mean_random"]
        for row in zip(self.peer_set_sizes, self.median_rating, self.median_random,
                       self.mean_rating, self.mean_random):
            lines.append(f"{row[0]}," + ",".join(f"{x:.6f}" for x in row[1:]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"metric={self.kind.value}",
                 f"{'size':>6} {'rating_median':>14} {'random_median':>14} {'rating_mean':>12} {'random_mean':>12}"]
        for row in zip(self.peer_set_sizes, self.median_rating, self.median_random,
                       self.mean_rating, self.mean_random):
            lines.append(f"{row[0]:>6d} {row[1]:>14.4f} {row[2]:>14.4f} {row[3]:>12.4f} {row[4]:>12.4f}")
        return "\n".join(lines) + "\n"


def _prediction_tables(models: Sequence[FactorModel], n: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.divmod(np.arange(n * n), n)
    if len(models) == 1:
        rating = predict_rating(models[0], rows, cols)
        raw = predict(models[0], rows, cols)
    else:
        rating = ensemble_predict(models, rows, cols)
        raw = ensemble_value(models, rows, cols)
    return rating.reshape(n, n), np.asarray(raw).reshape(n, n)


def peer_selection_experiment(metric: MetricMatrix, models: FactorModel | Sequence[FactorModel],
                              peer_set_sizes: Sequence[int], trials: int = 1,
                              rng: np.random.Generator | int = 0, tie: str = "raw",
                              predicted_ratings: np.ndarray | None = None,
                              predicted_raw: np.ndarray | None = None) -> StretchReport:
    """Stretch of rating-based and random peer selection over random peer sets.

    For every node and trial a uniform peer set of each size is drawn among the
    nodes with a measured, positive metric value. The rating-based policy takes
    the best predicted rating; ties go to the larger raw prediction when
    ``tie="raw"``, then uniformly at random. Stretch is the selected peer's
    value divided by the best value in the set.

    ``predicted_ratings``/``predicted_raw`` (n x n) override the model tables.
    """
    if isinstance(models, FactorModel):
        models = [models]
    if tie not in ("raw", "random"):
        raise ValueError("tie must be 'raw' or 'random'")
    n = metric.n
    if predicted_ratings is None:
        predicted_ratings, table_raw = _prediction_tables(models, n)
        predicted_raw = table_raw if predicted_raw is None else predicted_raw
    elif predicted_raw is None:
        predicted_raw = np.zeros((n, n))
    base_seed = int(rng.integers(2 ** 32)) if isinstance(rng, np.random.Generator) else int(rng)

    valid = ~metric.missing & (metric.values > 0)
    candidates = [np.flatnonzero(valid[i]) for i in range(n)]
    sizes = [int(s) for s in peer_set_sizes]
    if any(s < 1 for s in sizes):
        raise ValueError("peer-set sizes must be positive")
    usable = [i for i in range(n) if candidates[i].size > 0]
    smallest = min((candidates[i].size for i in usable), default=0)
    if not usable or max(sizes) > smallest:
        raise ValueError(f"peer set of size {max(sizes)} exceeds the {smallest} measured candidates of some node")

    lower = metric.kind is MetricKind.LOWER_IS_BETTER
    report = StretchReport(metric.kind, sizes)
    for size in sizes:
        by_rating, by_random = [], []
        for trial in range(trials):
            for i in usable:
                g = np.random.default_rng([base_seed, size, trial, i])
                peers = g.choice(candidates[i], size=size, replace=False)
                truth = metric.values[i, peers]
                best = truth.min() if lower else truth.max()

                score = predicted_ratings[i, peers].astype(np.float64)
                top = peers[score == score.max()]
                if tie == "raw" and top.size > 1:
                    raw = predicted_raw[i, top]
                    top = top[raw == raw.max()]
                chosen = top[0] if top.size == 1 else g.choice(top)
                by_rating.append(metric.values[i, chosen] / best)
                by_random.append(metric.values[i, g.choice(peers)] / best)
        report.median_rating.append(float(np.median(by_rating)))
        report.median_random.append(float(np.median(by_random)))
        report.mean_rating.append(float(np.mean(by_rating)))
        report.mean_random.append(float(np.mean(by_random)))
    return report
