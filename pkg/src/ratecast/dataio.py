"""Matrix files, synthetic ground truth, and train/test splits.

File formats (all text, first line is a versioned header)::

    #ratecast-matrix v1 n=<n>          dense metric matrix, one row per line,
    <v00> <v01> ...                    NaN or negative = missing

    #ratecast-matrix v1 n=<n>          rating triples, 0-based indices
    # R=5 ...                          optional key=value comment lines
    <i> <j> <rating>
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ratings import MetricKind, MetricMatrix, RatingMatrix
from .simulator import probed_entries, select_neighbors

MATRIX_HEADER = "#ratecast-matrix v1"


class FormatError(ValueError):
    pass


def resolve_path(path: str | Path) -> Path:
    """Return ``path`` or, if it does not exist, its match under ``$RATECAST_DATA_DIR``."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    data_dir = os.environ.get("RATECAST_DATA_DIR")
    if data_dir and (Path(data_dir) / p).exists():
        return Path(data_dir) / p
    return p


def _parse_header(line: str, path, lineno: int = 1) -> dict[str, str]:
    if not line.startswith(MATRIX_HEADER):
        raise FormatError(f"{path}:{lineno}: expected '{MATRIX_HEADER} n=<n>' header")
    try:
        return dict(tok.split("=", 1) for tok in line[len(MATRIX_HEADER):].split())
    except ValueError:
        raise FormatError(f"{path}:{lineno}: malformed header") from None


def _read_comments(lines: list[tuple[int, str]]) -> tuple[dict[str, str], list[tuple[int, str]]]:
    meta = {}
    body = []
    for lineno, line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    meta[key] = val
        elif line.strip():
            body.append((lineno, line))
    return meta, body


def load_metric_matrix(path: str | Path, kind: MetricKind | str | None = None,
                       unit: str = "") -> MetricMatrix:
    """Read a dense metric matrix; ``kind`` falls back to the file's ``# kind=`` comment, then RTT."""
    path = resolve_path(path)
    text = path.read_text().splitlines()
    if not text:
        raise FormatError(f"{path}: empty file")
    header = _parse_header(text[0], path)
    meta, body = _read_comments(list(enumerate(text[1:], start=2)))
    rows = []
    for lineno, line in body:
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric token") from None
        if len(rows[-1]) != len(rows[0]):
            raise FormatError(f"{path}:{lineno}: row has {len(rows[-1])} values, expected {len(rows[0])}")
    n = len(rows)
    if n == 0 or len(rows[0]) != n:
        raise FormatError(f"{path}: matrix is not square ({n} rows, {len(rows[0]) if rows else 0} columns)")
    if "n" in header and int(header["n"]) != n:
        raise FormatError(f"{path}: header says n={header['n']} but found {n} rows")
    values = np.array(rows, dtype=np.float64)
    missing = ~np.isfinite(values) | (values < 0)
    if kind is None:
        kind = meta.get("kind", MetricKind.LOWER_IS_BETTER)
    return MetricMatrix(values, missing, kind, unit or meta.get("unit", ""))


def save_metric_matrix(m: MetricMatrix, path: str | Path) -> None:
    lines = [f"{MATRIX_HEADER} n={m.n}", f"# kind={m.kind.value}" + (f" unit={m.unit}" if m.unit else "")]
    for values, missing in zip(m.values, m.missing):
        lines.append(" ".join("NaN" if miss else repr(float(v)) for v, miss in zip(values, missing)))
    Path(path).write_text("\n".join(lines) + "\n")


def save_ratings(ratings: RatingMatrix, path: str | Path, **meta) -> None:
    extra = {"R": ratings.R, **ratings.meta, **meta}
    lines = [f"{MATRIX_HEADER} n={ratings.n}", "# " + " ".join(f"{k}={v}" for k, v in extra.items())]
    lines.extend(f"{i} {j} {x}" for i, j, x in zip(ratings.rows, ratings.cols, ratings.ratings))
    Path(path).write_text("\n".join(lines) + "\n")


def load_ratings(path: str | Path) -> RatingMatrix:
    path = resolve_path(path)
    text = path.read_text().splitlines()
    if not text:
        raise FormatError(f"{path}: empty file")
    header = _parse_header(text[0], path)
    if "n" not in header:
        raise FormatError(f"{path}:1: header lacks n=<n>")
    meta, body = _read_comments(list(enumerate(text[1:], start=2)))
    triples = np.empty((len(body), 3), dtype=np.int64)
    for k, (lineno, line) in enumerate(body):
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'i j rating'")
        try:
            triples[k] = [int(p) for p in parts]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer token") from None
    R = int(meta.pop("R", 5))
    try:
        return RatingMatrix(int(header["n"]), triples[:, 0], triples[:, 1], triples[:, 2], R, meta)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def generate_synthetic(n: int, true_rank: int, value_range: tuple[float, float] = (10.0, 500.0),
                       noise_sd: float = 0.0, kind: MetricKind | str = MetricKind.LOWER_IS_BETTER,
                       seed: int = 0, unit: str = "", decay: float = 0.5) -> MetricMatrix:
    """Low-rank non-negative ground truth rescaled into ``value_range``.

    The affine offset shares one rank direction with the constant matrix, so the
    noiseless matrix has rank exactly ``true_rank``: rank-1 uses a purely
    multiplicative scale, higher ranks use true_rank-1 uniform random factors plus
    the offset. Factor column c is weighted by ``decay**c`` so component strengths
    fall off the way measured network spectra do; ``decay=1`` weights them equally.
    Gaussian noise of standard deviation ``noise_sd`` is added last, clamped at 0.
    """
    lo, hi = map(float, value_range)
    if n < 2 or not 1 <= true_rank <= n:
        raise ValueError(f"need n >= 2 and 1 <= true_rank <= n, got n={n}, true_rank={true_rank}")
    if not (0 <= lo < hi and math.isfinite(hi)):
        raise ValueError(f"value_range must satisfy 0 <= lo < hi, got {value_range}")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    if not 0 < decay <= 1:
        raise ValueError("decay must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if true_rank == 1:
        floor = math.sqrt(lo / hi)
        a = rng.uniform(floor, 1.0, n)
        b = rng.uniform(floor, 1.0, n)
        W = hi * np.outer(a, b)
    else:
        A = rng.random((n, true_rank - 1)) * decay ** np.arange(true_rank - 1)
        B = rng.random((n, true_rank - 1))
        W0 = A @ B.T
        W = lo + (hi - lo) * (W0 - W0.min()) / (W0.max() - W0.min())
    if noise_sd > 0:
        W = np.maximum(W + rng.normal(0.0, noise_sd, W.shape), 0.0)
    missing = np.eye(n, dtype=bool)
    return MetricMatrix(W, missing, kind, unit)


class SplitMode(str, enum.Enum):
    NEIGHBOR_K = "neighbor_k"
    FRACTION = "fraction"


@dataclass(frozen=True)
class SplitSpec:
    mode: SplitMode = SplitMode.NEIGHBOR_K
    k: int = 10
    fraction: float = 0.5
    seed: int = 0
    bidirectional: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        if self.mode is SplitMode.FRACTION and not 0 < self.fraction < 1:
            raise ValueError("fraction must lie in (0, 1)")
        if self.mode is SplitMode.NEIGHBOR_K and self.k < 1:
            raise ValueError("k must be at least 1")

    def describe(self) -> dict:
        if self.mode is SplitMode.FRACTION:
            return {"mode": self.mode.value, "fraction": self.fraction, "seed": self.seed}
        return {"mode": self.mode.value, "k": self.k, "seed": self.seed,
                "bidirectional": int(self.bidirectional)}


def split(ratings: RatingMatrix, spec: SplitSpec) -> tuple[RatingMatrix, RatingMatrix]:
    """Partition the observed entries into disjoint train and test sets."""
    rng = np.random.default_rng(spec.seed)
    if spec.mode is SplitMode.FRACTION:
        perm = rng.permutation(len(ratings))
        cut = int(round(spec.fraction * len(ratings)))
        in_train = np.zeros(len(ratings), dtype=bool)
        in_train[perm[:cut]] = True
    else:
        if spec.k >= ratings.n:
            raise ValueError(f"k={spec.k} must be smaller than n={ratings.n}")
        neighbors = select_neighbors(ratings.n, spec.k, rng)
        prows, pcols = probed_entries(neighbors, spec.bidirectional)
        probed = np.zeros((ratings.n, ratings.n), dtype=bool)
        probed[prows, pcols] = True
        in_train = probed[ratings.rows, ratings.cols]
    meta = {f"split_{k}": v for k, v in spec.describe().items()}
    train_part = ratings.subset(in_train)
    test_part = ratings.subset(~in_train)
    train_part.meta.update(meta, part="train")
    test_part.meta.update(meta, part="test")
    return train_part, test_part


def save_split(train_part: RatingMatrix, test_part: RatingMatrix, prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    paths = (prefix.with_name(prefix.name + ".train"), prefix.with_name(prefix.name + ".test"))
    save_ratings(train_part, paths[0])
    save_ratings(test_part, paths[1])
    return paths
