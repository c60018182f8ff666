"""
Probabilistic matrix factorization trained by per-rating SGD.

R is approximated by P . Q^t with F hidden factors. Each update follows

    e = r - p_u . q_i
    p_u <- p_u + gamma * (2 * e * q_i - lambda * p_u)
    q_i <- q_i + gamma * (2 * e * p_u_old - lambda * q_i)

No biases, no clipping.
"""

import logging
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models.FairErrors import (
    ArtifactVersionError,
    ConfigError,
    DataIOError,
    DivergenceError,
    ModelShapeError,
)
from fairrec.fairrec_app.fair_models.dataset import RatingMatrix

logger = logging.getLogger(__name__)

FILE_MAGIC = b"FAIRREC-PMF"
FILE_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    factors: int = settings.FACTORS
    learning_rate: float = settings.PMF_LEARNING_RATE
    regularization: float = settings.PMF_REGULARIZATION
    epochs: int = settings.PMF_EPOCHS
    init_scale: float = settings.PMF_INIT_SCALE
    seed: int = settings.SEED

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("Learning rate must be a positive finite number", field_name="pmf.learning_rate")
        if not (np.isfinite(self.regularization) and self.regularization >= 0):
            raise ConfigError("Regularization must be finite and >= 0", field_name="pmf.regularization")
        if self.epochs < 1:
            raise ConfigError("PMF needs at least one epoch", field_name="pmf.epochs", epochs=self.epochs)
        if self.factors < 1:
            raise ConfigError("PMF needs at least one factor", field_name="pmf.factors")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    mae: Optional[float] = None
    rmse: Optional[float] = None


@dataclass(eq=False)
class FactorModel:
    P: np.ndarray
    Q: np.ndarray
    history: List[EpochStats] = field(default_factory=list)

    @property
    def factors(self) -> int:
        return self.P.shape[1]

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def copy(self) -> "FactorModel":
        return FactorModel(self.P.copy(), self.Q.copy(), list(self.history))

    def check_fits(self, ratings: RatingMatrix):
        if ratings.num_users != self.num_users or ratings.num_items != self.num_items:
            raise ModelShapeError("Factor model dimensions do not match the ratings", component="pmf",
                                  model=(self.num_users, self.num_items),
                                  ratings=(ratings.num_users, ratings.num_items))

    def predict_all(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", self.P[users], self.Q[items])


def init_factors(num_users: int, num_items: int, factors: int = settings.FACTORS,
                 init_scale: float = settings.PMF_INIT_SCALE, seed: int = settings.SEED) -> FactorModel:
    if num_users <= 0 or num_items <= 0 or factors <= 0:
        raise ModelShapeError("Factor dimensions must be positive", component="pmf",
                              users=num_users, items=num_items, factors=factors)
    rng = np.random.default_rng(seed)
    P = rng.uniform(-init_scale, init_scale, size=(num_users, factors))
    Q = rng.uniform(-init_scale, init_scale, size=(num_items, factors))
    return FactorModel(P, Q)


def predict(model: FactorModel, u: int, i: int) -> float:
    if not (0 <= u < model.num_users and 0 <= i < model.num_items):
        raise ModelShapeError("User or item index out of range", component="pmf", user=u, item=i)
    return float(model.P[u] @ model.Q[i])


def regularized_loss(r: float, p: np.ndarray, q: np.ndarray, regularization: float) -> float:
    """Squared error of one rating plus lambda/2 times the squared factor norms."""
    e = r - p @ q
    return float(e * e + regularization / 2 * (p @ p + q @ q))


def gradients(r: float, p: np.ndarray, q: np.ndarray, regularization: float) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of ``regularized_loss`` with respect to p and q."""
    e = r - p @ q
    return -2 * e * q + regularization * p, -2 * e * p + regularization * q


def mean_regularized_loss(model: FactorModel, ratings: RatingMatrix, regularization: float) -> float:
    if ratings.num_entries == 0:
        return 0.0
    P, Q = model.P[ratings.users], model.Q[ratings.items]
    errors = ratings.ratings - np.einsum("ij,ij->i", P, Q)
    penalty = regularization / 2 * (np.einsum("ij,ij->i", P, P) + np.einsum("ij,ij->i", Q, Q))
    return float(np.mean(errors ** 2 + penalty))


def sgd_epoch(model: FactorModel, train: RatingMatrix, cfg: TrainConfig, epoch: int = 0) -> Tuple[FactorModel, float]:
    """One pass over ``train`` in seed-shuffled order; updates ``model`` in place."""
    model.check_fits(train)
    gamma, lam = cfg.learning_rate, cfg.regularization
    P, Q = model.P, model.Q
    order = np.random.default_rng([cfg.seed, epoch]).permutation(train.num_entries)
    users, items = train.users[order], train.items[order]
    ratings = train.ratings[order].astype(float)

    with np.errstate(over="ignore", invalid="ignore"):
        for u, i, r in zip(users, items, ratings):
            p_u = P[u].copy()
            e = r - p_u @ Q[i]
            P[u] += gamma * (2 * e * Q[i] - lam * p_u)
            Q[i] += gamma * (2 * e * p_u - lam * Q[i])

    loss = mean_regularized_loss(model, train, lam)
    if not np.isfinite(loss):
        raise DivergenceError("PMF loss is not finite; try a smaller learning rate", epoch=epoch,
                              component="pmf", learning_rate=gamma)
    return model, loss


def evaluate(model: FactorModel, ratings: RatingMatrix) -> Tuple[float, float]:
    """(MAE, RMSE) of the model on ``ratings``."""
    if ratings.num_entries == 0:
        return float("nan"), float("nan")
    errors = ratings.ratings - model.predict_all(ratings.users, ratings.items)
    return float(np.mean(np.abs(errors))), float(np.sqrt(np.mean(errors ** 2)))


def train(ratings: RatingMatrix, cfg: TrainConfig = TrainConfig(), held_out: Optional[RatingMatrix] = None,
          model: Optional[FactorModel] = None) -> FactorModel:
    if ratings.num_entries == 0:
        raise ConfigError("PMF needs a nonempty training set", field_name="ratings")
    if model is None:
        model = init_factors(ratings.num_users, ratings.num_items, cfg.factors, cfg.init_scale, cfg.seed)

    logger.info(f"Training PMF: {ratings.num_entries} ratings, F={cfg.factors}, "
                f"gamma={cfg.learning_rate}, lambda={cfg.regularization}, {cfg.epochs} epochs")
    for epoch in range(cfg.epochs):
        model, loss = sgd_epoch(model, ratings, cfg, epoch)
        stats = EpochStats(epoch=epoch + 1, train_loss=loss)
        if held_out is not None and held_out.num_entries:
            stats.mae, stats.rmse = evaluate(model, held_out)
        model.history.append(stats)
        logger.debug(f"PMF epoch {stats.epoch}: loss={loss:.5f} mae={stats.mae} rmse={stats.rmse}")

    last = model.history[-1]
    logger.info(f"PMF finished: loss={last.train_loss:.5f} held-out MAE={last.mae} RMSE={last.rmse}")
    return model


_HEADER = struct.Struct("<11sHqqq")


def save(model: FactorModel, path) -> None:
    """Versioned flat file: header (magic, version, users, items, F) then row-major float64 P and Q."""
    header = _HEADER.pack(FILE_MAGIC, FILE_VERSION, model.num_users, model.num_items, model.factors)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(model.P, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.Q, dtype="<f8").tobytes())


def load(path) -> FactorModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read factor model: {e}", path=str(path))
    if len(blob) < _HEADER.size:
        raise ArtifactVersionError("truncated factor model header", path=str(path))
    magic, version, users, items, factors = _HEADER.unpack_from(blob)
    if magic != FILE_MAGIC or version != FILE_VERSION:
        raise ArtifactVersionError(f"unknown factor model format {magic!r} v{version}", path=str(path))
    values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if values.size != (users + items) * factors:
        raise ArtifactVersionError("factor model body does not match its header", path=str(path))
    P = values[:users * factors].reshape(users, factors).copy()
    Q = values[users * factors:].reshape(items, factors).copy()
    return FactorModel(P, Q)
