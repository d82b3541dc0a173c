"""Quantization of raw path metrics into ordinal ratings.

A rating is an integer in ``[1, R]`` where larger is always better,
whatever the direction of the underlying metric.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DegenerateScaleError(ValueError):
    """Thresholds cannot be made strictly ascending."""


class MetricKind(str, enum.Enum):
    LOWER_IS_BETTER = "lower_is_better"  # RTT
    HIGHER_IS_BETTER = "higher_is_better"  # ABW

    @classmethod
    def parse(cls, text: str | MetricKind) -> MetricKind:
        if isinstance(text, MetricKind):
            return text
        aliases = {"rtt": cls.LOWER_IS_BETTER, "lower": cls.LOWER_IS_BETTER,
                   "abw": cls.HIGHER_IS_BETTER, "higher": cls.HIGHER_IS_BETTER}
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass
class MetricMatrix:
    """Dense n x n matrix of raw metric values with a missing-entry mask."""

    values: np.ndarray
    missing: np.ndarray
    kind: MetricKind = MetricKind.LOWER_IS_BETTER
    unit: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool).copy()
        self.kind = MetricKind.parse(self.kind)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"metric matrix must be square, got shape {self.values.shape}")
        if self.missing.shape != self.values.shape:
            raise ValueError("missing mask shape does not match values")
        np.fill_diagonal(self.missing, True)
        self.missing |= ~np.isfinite(self.values) | (self.values < 0)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def observed_values(self) -> np.ndarray:
        return self.values[~self.missing]

    def observed_count(self) -> int:
        return int((~self.missing).sum())


@dataclass(frozen=True)
class RatingScale:
    thresholds: tuple[float, ...]
    kind: MetricKind = MetricKind.LOWER_IS_BETTER

    def __post_init__(self):
        tau = np.asarray(self.thresholds, dtype=np.float64)
        object.__setattr__(self, "thresholds", tuple(float(t) for t in tau))
        object.__setattr__(self, "kind", MetricKind.parse(self.kind))
        if tau.size < 1:
            raise ValueError("a rating scale needs at least one threshold")
        if not np.all(np.isfinite(tau)) or np.any(tau <= 0):
            raise DegenerateScaleError(f"thresholds must be finite and positive: {self.thresholds}")
        if np.any(np.diff(tau) <= 0):
            raise DegenerateScaleError(f"thresholds must be strictly ascending: {self.thresholds}")

    @property
    def R(self) -> int:
        return len(self.thresholds) + 1

    def rate(self, values) -> np.ndarray:
        """Map metric values to ratings. A value equal to a threshold falls in the lower bin."""
        above = np.searchsorted(np.asarray(self.thresholds), np.asarray(values, dtype=np.float64),
                                side="left")
        if self.kind is MetricKind.HIGHER_IS_BETTER:
            return (1 + above).astype(np.int64)
        return (self.R - above).astype(np.int64)


@dataclass
class RatingMatrix:
    """Sparse n x n rating matrix stored as parallel (row, col, rating) arrays."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    ratings: np.ndarray
    R: int = 5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        self.ratings = np.ascontiguousarray(self.ratings, dtype=np.int64)
        if not (self.rows.shape == self.cols.shape == self.ratings.shape) or self.rows.ndim != 1:
            raise ValueError("rows, cols and ratings must be 1-d arrays of equal length")
        if self.rows.size:
            if self.rows.min() < 0 or self.cols.min() < 0 or max(self.rows.max(), self.cols.max()) >= self.n:
                raise ValueError("entry index out of range")
            if np.any(self.rows == self.cols):
                raise ValueError("diagonal entries are not allowed")
            if self.ratings.min() < 1 or self.ratings.max() > self.R:
                raise ValueError(f"ratings must lie in [1, {self.R}]")
            keys = self.rows * self.n + self.cols
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate (i, j) entries")

    def __len__(self) -> int:
        return int(self.rows.size)

    def subset(self, index) -> RatingMatrix:
        return RatingMatrix(self.n, self.rows[index], self.cols[index], self.ratings[index], self.R,
                            dict(self.meta))

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        out = np.full((self.n, self.n), fill, dtype=np.float64)
        out[self.rows, self.cols] = self.ratings
        return out

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.ratings, minlength=self.R + 1)[1:]


def thresholds_by_percentile(m: MetricMatrix, R: int = 5) -> RatingScale:
    """Place the R-1 thresholds at the 100*k/R percentiles of the observed values."""
    if R < 2:
        raise ValueError("R must be at least 2")
    sample = m.observed_values()
    if sample.size < R:
        raise DegenerateScaleError(f"need at least {R} observed values, got {sample.size}")
    qs = 100.0 * np.arange(1, R) / R
    tau = np.percentile(sample, qs, method="linear")
    return RatingScale(tuple(tau), m.kind)


def thresholds_even(upper: float, R: int = 5,
                    kind: MetricKind | str = MetricKind.LOWER_IS_BETTER) -> RatingScale:
    """Evenly spaced thresholds ending at ``upper``, e.g. 300 -> [75, 150, 225, 300]."""
    if not upper > 0 or not np.isfinite(upper):
        raise ValueError(f"upper must be a positive finite value, got {upper}")
    if R < 2:
        raise ValueError("R must be at least 2")
    return RatingScale(tuple(k * upper / (R - 1) for k in range(1, R)), kind)


def quantize(m: MetricMatrix, scale: RatingScale) -> RatingMatrix:
    if scale.kind is not m.kind:
        raise ValueError(f"metric kind mismatch: matrix is {m.kind.value}, scale is {scale.kind.value}")
    rows, cols = np.nonzero(~m.missing)
    ratings = scale.rate(m.values[rows, cols])
    return RatingMatrix(m.n, rows, cols, ratings, scale.R)
