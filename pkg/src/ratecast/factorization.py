"""Matrix factorization models trained by stochastic gradient descent.

Three models share the factor form ``X_hat = U V^T``:

* RMF   squared loss with L2 regularization, predictions rounded to [1, R]
* MMMF  ordinal regression against R-1 learned thresholds with the smooth hinge
* NMF   generalized KL divergence with U, V kept strictly positive

All training goes through the compiled kernels in :mod:`ratecast._kernels`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from ._kernels import EPS_NN
from .ratings import RatingMatrix

MODEL_HEADER = "#ratecast-model v1"


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, epoch: int):
        super().__init__(f"training diverged at step {step} (epoch {epoch})")
        self.step = step
        self.epoch = epoch


class ModelKind(str, enum.Enum):
    RMF = "rmf"
    MMMF = "mmmf"
    NMF = "nmf"

    @property
    def code(self) -> int:
        return {"rmf": _kernels.RMF, "mmmf": _kernels.MMMF, "nmf": _kernels.NMF}[self.value]

    @classmethod
    def parse(cls, text: str | ModelKind) -> ModelKind:
        return text if isinstance(text, ModelKind) else cls(text.strip().lower())


@dataclass
class FactorModel:
    kind: ModelKind
    U: np.ndarray
    V: np.ndarray
    R: int = 5
    theta: np.ndarray | None = None

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.U.shape != self.V.shape:
            raise ValueError(f"U and V must both be n x r, got {self.U.shape} and {self.V.shape}")
        if self.kind is ModelKind.MMMF:
            if self.theta is None:
                raise ValueError("an MMMF model needs thresholds")
            self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
            if self.theta.shape != (self.R - 1,) or np.any(np.diff(self.theta) <= 0):
                raise ValueError(f"MMMF thresholds must be {self.R - 1} strictly ascending values")
        elif self.theta is not None:
            raise ValueError(f"{self.kind.value} models carry no thresholds")

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def r(self) -> int:
        return self.U.shape[1]

    def copy(self) -> FactorModel:
        theta = None if self.theta is None else self.theta.copy()
        return FactorModel(self.kind, self.U.copy(), self.V.copy(), self.R, theta)

    def _theta_array(self) -> np.ndarray:
        return self.theta if self.theta is not None else np.empty(0)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.05
    lam: float = 0.1
    rank: int = 10
    epochs: int = 50
    seed: int = 0
    learn_theta: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("learning rate must be positive")
        if not self.lam >= 0:
            raise ValueError("regularization must be non-negative")
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class TrainResult:
    model: FactorModel
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else math.nan


@dataclass
class Observations:
    """Real-valued observed entries, for training on unquantized values."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    ratings: np.ndarray
    R: int = 5

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        self.ratings = np.ascontiguousarray(self.ratings, dtype=np.float64)

    def __len__(self) -> int:
        return int(self.rows.size)


def initial_thresholds(R: int) -> np.ndarray:
    return np.arange(1, R, dtype=np.float64) + 0.5


def init_model(kind: ModelKind | str, n: int, config: TrainConfig, rng: np.random.Generator,
               R: int = 5) -> FactorModel:
    """Factors drawn i.i.d. from (0, 1/sqrt(r)]; MMMF thresholds start at the bin midpoints."""
    kind = ModelKind.parse(kind)
    if n < 2:
        raise ValueError("need at least two nodes")
    scale = 1.0 / math.sqrt(config.rank)
    U = (1.0 - rng.random((n, config.rank))) * scale
    V = (1.0 - rng.random((n, config.rank))) * scale
    theta = initial_thresholds(R) if kind is ModelKind.MMMF else None
    return FactorModel(kind, U, V, R, theta)


def smooth_hinge(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 1.0, 0.0, np.where(z > 0.0, 0.5 * (1.0 - z) ** 2, 0.5 - z))


def _estimates(model: FactorModel, rows, cols) -> np.ndarray:
    return np.einsum("ij,ij->i", model.U[rows], model.V[cols])


def _frobenius_penalty(model: FactorModel) -> float:
    return float(np.sum(model.U ** 2) + np.sum(model.V ** 2))


def rmf_loss(model: FactorModel, ratings: RatingMatrix, lam: float) -> float:
    err = ratings.ratings - _estimates(model, ratings.rows, ratings.cols)
    return float(np.sum(err ** 2) + lam * _frobenius_penalty(model))


def mmmf_loss(model: FactorModel, ratings: RatingMatrix, lam: float) -> float:
    est = _estimates(model, ratings.rows, ratings.cols)
    levels = np.arange(1, model.R)
    sign = np.where(ratings.ratings[:, None] <= levels[None, :], 1.0, -1.0)
    hinge = smooth_hinge(sign * (model.theta[None, :] - est[:, None]))
    return float(hinge.sum() + lam * _frobenius_penalty(model))


def nmf_divergence(model: FactorModel, ratings: RatingMatrix) -> float:
    est = _estimates(model, ratings.rows, ratings.cols)
    if np.any(est <= 0):
        raise ValueError("NMF estimate is not strictly positive; non-negativity is broken")
    est = np.maximum(est, EPS_NN)
    x = ratings.ratings.astype(np.float64)
    return float(np.sum(x * np.log(x / est) - x + est))


def nmf_loss(model: FactorModel, ratings: RatingMatrix, lam: float) -> float:
    return nmf_divergence(model, ratings) + lam * _frobenius_penalty(model)


def objective(model: FactorModel, ratings: RatingMatrix, lam: float) -> float:
    if model.kind is ModelKind.RMF:
        return rmf_loss(model, ratings, lam)
    if model.kind is ModelKind.MMMF:
        return mmmf_loss(model, ratings, lam)
    return nmf_loss(model, ratings, lam)


def entry_gradient(kind: ModelKind | str, u, v, theta, x: float, lam: float):
    """Analytic per-entry gradient used by the SGD step, as (grad_u, grad_v, grad_theta)."""
    kind = ModelKind.parse(kind)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = np.empty(0) if theta is None else np.asarray(theta, dtype=np.float64)
    gu, gv, gt = np.empty_like(u), np.empty_like(v), np.empty_like(theta)
    _kernels.entry_grad(kind.code, u, v, theta, float(x), float(lam), gu, gv, gt)
    return gu, gv, gt


def _step(model: FactorModel, i: int, j: int, x: float, eta: float, lam: float,
          learn_theta: bool = True):
    _kernels.sgd_step(model.kind.code, model.U[i], model.V[j], model._theta_array(), float(x),
                      float(eta), float(lam), bool(learn_theta))
    return model.U[i], model.V[j]


def rmf_sgd_step(model: FactorModel, i: int, j: int, x: float, eta: float, lam: float):
    """u_i += eta (e v_j - lam u_i), v_j += eta (e u_i - lam v_j), both from pre-update rows."""
    if model.kind is not ModelKind.RMF:
        raise ValueError("rmf_sgd_step needs an RMF model")
    return _step(model, i, j, x, eta, lam)


def mmmf_sgd_step(model: FactorModel, i: int, j: int, x: float, eta: float, lam: float,
                  learn_theta: bool = True):
    if model.kind is not ModelKind.MMMF:
        raise ValueError("mmmf_sgd_step needs an MMMF model")
    return _step(model, i, j, x, eta, lam, learn_theta)


def nmf_sgd_step(model: FactorModel, i: int, j: int, x: float, eta: float, lam: float):
    if model.kind is not ModelKind.NMF:
        raise ValueError("nmf_sgd_step needs an NMF model")
    return _step(model, i, j, x, eta, lam)


def run_order(model: FactorModel, ratings: RatingMatrix | Observations, order: np.ndarray, config: TrainConfig,
              epoch: int = 0) -> float:
    """Apply SGD steps in place over ``ratings`` in the given entry order; return the mean data loss."""
    order = np.ascontiguousarray(order, dtype=np.int64)
    out = np.zeros(1)
    failed = _kernels.run_epoch(model.kind.code, model.U, model.V, model._theta_array(),
                                ratings.rows, ratings.cols, ratings.ratings.astype(np.float64),
                                order, float(config.eta), float(config.lam),
                                bool(config.learn_theta), out)
    if failed >= 0:
        raise TrainingDiverged(int(failed), epoch)
    return float(out[0]) / max(len(order), 1)


def train(kind: ModelKind | str, ratings: RatingMatrix | Observations, config: TrainConfig = TrainConfig(),
          orders: Sequence[np.ndarray] | None = None) -> TrainResult:
    """Train one model by per-epoch shuffled SGD.

    ``orders`` replaces the shuffles with an explicit entry order per epoch; the
    model initialization still comes from ``config.seed``.
    """
    if len(ratings) < 1:
        raise ValueError("cannot train on an empty rating matrix")
    rng = np.random.default_rng(config.seed)
    model = init_model(kind, ratings.n, config, rng, ratings.R)
    losses = []
    if orders is None:
        for epoch in range(config.epochs):
            losses.append(run_order(model, ratings, rng.permutation(len(ratings)), config, epoch))
    else:
        for epoch, order in enumerate(orders):
            losses.append(run_order(model, ratings, order, config, epoch))
    return TrainResult(model, losses)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def predict(model: FactorModel, i, j):
    """Raw real-valued estimate u_i . v_j (scalars or arrays of indices)."""
    if np.isscalar(i) and np.isscalar(j):
        return float(model.U[i] @ model.V[j])
    i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
    return _estimates(model, i.ravel(), j.ravel()).reshape(i.shape)


def _bins(theta: np.ndarray, est) -> np.ndarray:
    # rho with theta[rho-1] < est <= theta[rho], theta[0] = -inf, theta[R] = +inf
    return 1 + np.searchsorted(theta, est, side="left")


def _to_rating(model: FactorModel, est) -> np.ndarray:
    est = np.asarray(est, dtype=np.float64)
    if model.kind is ModelKind.MMMF:
        return _bins(model.theta, est).astype(np.int64)
    return np.clip(_round_half_away(est), 1, model.R).astype(np.int64)


def predict_rating(model: FactorModel, i, j):
    out = _to_rating(model, predict(model, i, j))
    return int(out) if out.ndim == 0 else out


def rating_scale_value(model: FactorModel, i, j):
    """Real prediction on the rating scale: raw estimate for RMF/NMF, fractional bin position for MMMF."""
    est = np.asarray(predict(model, i, j), dtype=np.float64)
    if model.kind is not ModelKind.MMMF:
        return est
    theta = model.theta
    R = model.R
    rho = _bins(theta, est)
    edge_width = theta[1] - theta[0] if R > 2 else 1.0
    last_width = theta[-1] - theta[-2] if R > 2 else 1.0
    lo = theta[np.clip(rho - 2, 0, R - 2)]
    hi = theta[np.clip(rho - 1, 0, R - 2)]
    interior = (rho - 0.5) + (est - lo) / np.where(hi > lo, hi - lo, 1.0)
    first = np.maximum(rho + 0.5 - (hi - est) / edge_width, rho - 0.5)
    last = np.minimum(rho - 0.5 + (est - lo) / last_width, rho + 0.5)
    return np.where(rho == 1, first, np.where(rho == R, last, interior))


def ensemble_value(models: Sequence[FactorModel], i, j):
    if not models:
        raise ValueError("ensemble needs at least one model")
    return sum(np.asarray(rating_scale_value(m, i, j), dtype=np.float64) for m in models) / len(models)


def ensemble_predict(models: Sequence[FactorModel], i, j):
    """Average the members' rating-scale predictions, then round and clamp to [1, R]."""
    value = ensemble_value(models, i, j)
    out = np.clip(_round_half_away(value), 1, models[0].R).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def train_ensemble(ratings: RatingMatrix, members: Sequence[tuple[ModelKind | str, TrainConfig]]
                   ) -> list[TrainResult]:
    return [train(kind, ratings, cfg) for kind, cfg in members]


def default_ensemble_members(config: TrainConfig) -> list[tuple[ModelKind, TrainConfig]]:
    """Two predictors per model kind, differing in rank and seed."""
    from dataclasses import replace
    members = []
    for offset, kind in enumerate(ModelKind):
        members.append((kind, replace(config, seed=config.seed + 101 * offset)))
        members.append((kind, replace(config, rank=max(1, config.rank // 2),
                                      seed=config.seed + 101 * offset + 7)))
    return members


def _fmt(values) -> str:
    return " ".join(format(float(x), ".17g") for x in values)


def save_models(models: FactorModel | Sequence[FactorModel], path: str | Path) -> None:
    """Write one or more models; each block starts with its own versioned header."""
    if isinstance(models, FactorModel):
        models = [models]
    lines = []
    for m in models:
        lines.append(f"{MODEL_HEADER} kind={m.kind.value} n={m.n} r={m.r} R={m.R}")
        lines.extend(_fmt(row) for row in m.U)
        lines.extend(_fmt(row) for row in m.V)
        if m.kind is ModelKind.MMMF:
            lines.append(_fmt(m.theta))
    Path(path).write_text("\n".join(lines) + "\n")


def load_models(path: str | Path) -> list[FactorModel]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    models = []
    pos = 0
    while pos < len(lines):
        header = lines[pos]
        if not header.startswith(MODEL_HEADER):
            raise ValueError(f"{path}:{pos + 1}: expected '{MODEL_HEADER}' header")
        fields = dict(tok.split("=", 1) for tok in header[len(MODEL_HEADER):].split())
        try:
            kind = ModelKind.parse(fields["kind"])
            n, r, R = int(fields["n"]), int(fields["r"]), int(fields["R"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{pos + 1}: malformed model header") from exc
        count = 2 * n + (1 if kind is ModelKind.MMMF else 0)
        block = lines[pos + 1:pos + 1 + count]
        if len(block) != count:
            raise ValueError(f"{path}: truncated model block starting at line {pos + 1}")
        try:
            rows = [np.array([float(t) for t in ln.split()]) for ln in block]
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric value in model block at line {pos + 1}") from exc
        if any(len(row) != r for row in rows[:2 * n]):
            raise ValueError(f"{path}: factor row length differs from r={r}")
        theta = rows[2 * n] if kind is ModelKind.MMMF else None
        models.append(FactorModel(kind, np.vstack(rows[:n]), np.vstack(rows[n:2 * n]), R, theta))
        pos += 1 + count
    if not models:
        raise ValueError(f"{path}: no model found")
    return models
