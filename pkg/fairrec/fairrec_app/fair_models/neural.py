"""
Fairness-weighted multilayer network h(p_u, q_i, beta).

Training inputs concatenate the user factors, the item factors and beta;
labels mix the accuracy error of the factor model and the distance between
the normalized item and user minority values:

    loss = beta * e_acc + (1 - beta) * e_fair

The network is a plain numpy MLP (rectifier hidden layers, identity output,
inverted dropout after the first hidden layer) fitted to the labels with
mean absolute error and RMSprop.
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models.FairErrors import (
    ArtifactVersionError,
    ConfigError,
    DataIOError,
    DivergenceError,
    ModelShapeError,
)
from fairrec.fairrec_app.fair_models.dataset import RatingMatrix, partition_sizes
from fairrec.fairrec_app.fair_models.minority_index import NormalizedIndex
from fairrec.fairrec_app.fair_models.pmf import FactorModel

logger = logging.getLogger(__name__)

FILE_MAGIC = b"FAIRREC-MLN"
FILE_VERSION = 1


class AccuracyScale(str, Enum):
    NORMALIZED = "normalized"
    RAW = "raw"

    @classmethod
    def parse(cls, value) -> "AccuracyScale":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"Unknown accuracy scale '{value}'", field_name="mln.accuracy_scale",
                              accepted="normalized,raw")


class Mode(str, Enum):
    TRAIN = "train"
    INFER = "infer"


@dataclass(frozen=True)
class MlnTrainConfig:
    epochs: int = settings.MLN_EPOCHS
    batch_size: int = settings.MLN_BATCH_SIZE
    learning_rate: float = settings.MLN_LEARNING_RATE
    decay: float = settings.MLN_DECAY
    epsilon: float = settings.MLN_EPSILON
    seed: int = settings.SEED
    fractions: Sequence[float] = settings.SPLIT_FRACTIONS
    hidden: Sequence[int] = settings.MLN_HIDDEN_LAYERS
    dropout: float = settings.MLN_DROPOUT
    accuracy_scale: str = settings.ACCURACY_SCALE
    max_ratings: int = settings.MLN_MAX_RATINGS

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("MLN needs at least one epoch", field_name="mln.epochs")
        if self.batch_size < 1:
            raise ConfigError("Batch size must be positive", field_name="mln.batch_size")
        if not self.learning_rate > 0 or not self.epsilon > 0:
            raise ConfigError("Learning rate and epsilon must be positive", field_name="mln.learning_rate")
        if not 0 < self.decay < 1:
            raise ConfigError("Squared-gradient decay must be in (0, 1)", field_name="mln.decay")
        if not 0 <= self.dropout < 1:
            raise ConfigError("Dropout rate must be in [0, 1)", field_name="mln.dropout")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions) or abs(sum(self.fractions) - 1) > 1e-9:
            raise ConfigError("MLN split fractions must be three non-negative values summing to 1",
                              field_name="mln.fractions", fractions=tuple(self.fractions))
        if (isinstance(self.hidden, (str, bytes)) or not isinstance(self.hidden, Sequence) or not self.hidden
                or any(isinstance(h, bool) or not isinstance(h, (int, np.integer)) or h < 1 for h in self.hidden)):
            raise ConfigError("Hidden layers must be a non-empty list of positive integers",
                              field_name="mln.hidden", hidden=self.hidden)
        AccuracyScale.parse(self.accuracy_scale)


@dataclass(eq=False)
class MlnModel:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    dropout: float = settings.MLN_DROPOUT
    sq_weights: List[np.ndarray] = field(default_factory=list)
    sq_biases: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.sq_weights:
            self.sq_weights = [np.zeros_like(w) for w in self.weights]
            self.sq_biases = [np.zeros_like(b) for b in self.biases]

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "MlnModel":
        return MlnModel([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout,
                        [s.copy() for s in self.sq_weights], [s.copy() for s in self.sq_biases])


class TrainingExample(NamedTuple):
    x: np.ndarray
    y: float


class ExampleSet(NamedTuple):
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def take(self, positions) -> "ExampleSet":
        return ExampleSet(self.X[positions], self.y[positions])

    @classmethod
    def from_examples(cls, examples: Iterable[TrainingExample]) -> "ExampleSet":
        xs, ys = [], []
        for example in examples:
            xs.append(example.x)
            ys.append(example.y)
        if not xs:
            return cls(np.zeros((0, 0)), np.zeros(0))
        return cls(np.vstack(xs), np.asarray(ys, dtype=float))


@dataclass
class MlnEpochStats:
    epoch: int
    train_mae: float
    validation_mae: float


@dataclass
class MlnTrainResult:
    model: MlnModel
    history: List[MlnEpochStats]
    test_mae: float = float("nan")


def init_mln(input_width: int = 2 * settings.FACTORS + 1, hidden: Sequence[int] = settings.MLN_HIDDEN_LAYERS,
             dropout: float = settings.MLN_DROPOUT, seed: int = settings.SEED) -> MlnModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = (input_width,) + tuple(hidden) + (1,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlnModel(weights, biases, dropout)


def combined_loss(e_accuracy: float, e_fairness: float, beta: float) -> float:
    return beta * e_accuracy + (1 - beta) * e_fairness


def label(r: float, p_u: np.ndarray, q_i: np.ndarray, im_i: float, um_u: float, beta: float,
          accuracy_scale=AccuracyScale.NORMALIZED, max_rating: int = settings.MAX_RATING) -> float:
    """
    Training target for one (rating, beta) pair.

    In normalized mode the accuracy error is divided by (N_max - 1)^2 and
    capped at 1, since unclipped factor predictions may leave the rating
    scale.
    """
    e_accuracy = (r - float(np.dot(p_u, q_i))) ** 2
    if AccuracyScale.parse(accuracy_scale) is AccuracyScale.NORMALIZED:
        e_accuracy = min(e_accuracy / (max_rating - 1) ** 2, 1.0)
    e_fairness = (im_i - um_u) ** 2
    return combined_loss(e_accuracy, e_fairness, beta)


def _index_values(factors: FactorModel, ratings: RatingMatrix, im: NormalizedIndex, um: NormalizedIndex):
    factors.check_fits(ratings)
    im_values = np.asarray(im.values, dtype=float)
    um_values = np.asarray(um.values, dtype=float)
    if len(im_values) != ratings.num_items or len(um_values) != ratings.num_users:
        raise ModelShapeError("Normalized indexes do not cover the rating universe", component="neural")
    missing_items = np.isnan(im_values[ratings.items])
    missing_users = np.isnan(um_values[ratings.users])
    if missing_items.any() or missing_users.any():
        raise ModelShapeError("Missing index value for a rated entity", component="neural",
                              items=int(missing_items.sum()), users=int(missing_users.sum()))
    return im_values, um_values


def build_training_set(factors: FactorModel, ratings: RatingMatrix, im: NormalizedIndex, um: NormalizedIndex,
                       beta_grid: Sequence[float] = settings.BETA_GRID,
                       accuracy_scale=AccuracyScale.NORMALIZED) -> Iterator[TrainingExample]:
    """Streams |ratings| x |beta grid| examples, rating-major."""
    im_values, um_values = _index_values(factors, ratings, im, um)
    for u, i, r in zip(ratings.users, ratings.items, ratings.ratings):
        p_u, q_i = factors.P[u], factors.Q[i]
        for beta in beta_grid:
            yield TrainingExample(
                x=np.concatenate([p_u, q_i, [beta]]),
                y=label(float(r), p_u, q_i, im_values[i], um_values[u], beta, accuracy_scale, ratings.max_rating),
            )


def build_training_arrays(factors: FactorModel, ratings: RatingMatrix, im: NormalizedIndex, um: NormalizedIndex,
                          beta_grid: Sequence[float] = settings.BETA_GRID,
                          accuracy_scale=AccuracyScale.NORMALIZED) -> ExampleSet:
    """
    Vectorized build_training_set; same rows in the same order.

    With the normalized accuracy scale the squared error is divided by
    (max_rating - 1) ** 2 and capped at 1.
    """
    im_values, um_values = _index_values(factors, ratings, im, um)
    betas = np.asarray(beta_grid, dtype=float)
    n, k = ratings.num_entries, len(betas)

    P, Q = factors.P[ratings.users], factors.Q[ratings.items]
    e_accuracy = (ratings.ratings - np.einsum("ij,ij->i", P, Q)) ** 2
    if AccuracyScale.parse(accuracy_scale) is AccuracyScale.NORMALIZED:
        e_accuracy = np.minimum(e_accuracy / (ratings.max_rating - 1) ** 2, 1.0)
    e_fairness = (im_values[ratings.items] - um_values[ratings.users]) ** 2

    X = np.empty((n * k, 2 * factors.factors + 1))
    X[:, :factors.factors] = np.repeat(P, k, axis=0)
    X[:, factors.factors:-1] = np.repeat(Q, k, axis=0)
    X[:, -1] = np.tile(betas, n)
    y = (betas[None, :] * e_accuracy[:, None] + (1 - betas[None, :]) * e_fairness[:, None]).reshape(-1)
    return ExampleSet(X, y)


def split_examples(examples: ExampleSet, fractions: Sequence[float], seed: int) -> Tuple[ExampleSet, ExampleSet, ExampleSet]:
    n_train, n_validation, _ = partition_sizes(len(examples), fractions)
    order = np.random.default_rng(seed).permutation(len(examples))
    return (examples.take(order[:n_train]),
            examples.take(order[n_train:n_train + n_validation]),
            examples.take(order[n_train + n_validation:]))


def _check_width(model: MlnModel, X: np.ndarray):
    if X.shape[-1] != model.input_width:
        raise ModelShapeError("Input width does not match the network", component="neural",
                              expected=model.input_width, got=X.shape[-1])


def _forward(model: MlnModel, X: np.ndarray, train: bool, rng: Optional[np.random.Generator]):
    """Batch forward pass; returns outputs and the per-layer cache for backprop."""
    activations = [X]
    masks = []
    a = X
    last = len(model.weights) - 1
    for layer, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        if layer == last:
            a = z
            break
        a = np.maximum(z, 0.0)
        mask = None
        if layer == 0 and train and model.dropout > 0:
            mask = (rng.random(a.shape) >= model.dropout) / (1.0 - model.dropout)
            a = a * mask
        masks.append(mask)
        activations.append(a)
    return a[:, 0], (activations, masks)


def _backward(model: MlnModel, cache, d_out: np.ndarray):
    activations, masks = cache
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    delta = d_out[:, None]
    for layer in range(len(model.weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        delta = delta @ model.weights[layer].T
        # activations[layer] is post-rectifier (and post-dropout); zero where the unit was off
        delta = delta * (activations[layer] > 0)
        if masks[layer - 1] is not None:
            delta = delta * masks[layer - 1]
    return grad_w, grad_b


def forward_batch(model: MlnModel, X: np.ndarray, mode=Mode.INFER, seed: Optional[int] = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_width(model, X)
    train = Mode(mode) is Mode.TRAIN
    rng = np.random.default_rng(seed) if train else None
    out, _ = _forward(model, X, train, rng)
    return out


def mln_forward(model: MlnModel, x: np.ndarray, mode=Mode.INFER, seed: Optional[int] = None) -> float:
    return float(forward_batch(model, np.asarray(x, dtype=float)[None, :], mode, seed)[0])


def predict_loss(model: MlnModel, p_u: np.ndarray, q_i: np.ndarray, beta: float) -> float:
    return mln_forward(model, np.concatenate([p_u, q_i, [beta]]), Mode.INFER)


def mae(model: MlnModel, examples: ExampleSet) -> float:
    if len(examples) == 0:
        return float("nan")
    return float(np.mean(np.abs(forward_batch(model, examples.X) - examples.y)))


def backprop_gradients(model: MlnModel, X: np.ndarray, y: np.ndarray):
    """Gradients of the batch MAE with dropout disabled."""
    out, cache = _forward(model, X, False, None)
    return _backward(model, cache, np.sign(out - y) / len(y))


def numerical_gradients(model: MlnModel, X: np.ndarray, y: np.ndarray, eps: float = 1e-6):
    """Central finite differences of the batch MAE, parameter by parameter."""
    def loss():
        out, _ = _forward(model, X, False, None)
        return float(np.mean(np.abs(out - y)))

    grads = []
    for param in model.parameters():
        grad = np.zeros_like(param)
        flat, flat_grad = param.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            plus = loss()
            flat[k] = saved - eps
            minus = loss()
            flat[k] = saved
            flat_grad[k] = (plus - minus) / (2 * eps)
        grads.append(grad)
    n = len(model.weights)
    return grads[:n], grads[n:]


def _rmsprop_step(model: MlnModel, grad_w, grad_b, cfg: MlnTrainConfig):
    rho, rate, eps = cfg.decay, cfg.learning_rate, cfg.epsilon
    for params, grads, state in ((model.weights, grad_w, model.sq_weights), (model.biases, grad_b, model.sq_biases)):
        for param, grad, sq in zip(params, grads, state):
            sq *= rho
            sq += (1 - rho) * grad * grad
            param -= rate * grad / np.sqrt(sq + eps)


def mln_train(model: MlnModel, examples: Union[ExampleSet, Iterable[TrainingExample]],
              cfg: MlnTrainConfig = MlnTrainConfig()) -> MlnTrainResult:
    """
    Fits ``model`` in place on the training share of ``examples``.

    The example set is split by ``cfg.fractions``; validation MAE is computed
    in infer mode after every epoch and the test MAE once at the end.
    """
    if not isinstance(examples, ExampleSet):
        examples = ExampleSet.from_examples(examples)
    train_set, validation_set, test_set = split_examples(examples, cfg.fractions, cfg.seed)
    if len(train_set) == 0:
        raise ConfigError("MLN needs a nonempty training set", field_name="examples")
    _check_width(model, train_set.X)

    rng = np.random.default_rng([cfg.seed, 1])
    history = []
    logger.info(f"Training MLN {model.layer_sizes} on {len(train_set)} examples "
                f"({len(validation_set)} validation, {len(test_set)} test)")
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            X, y = train_set.X[batch], train_set.y[batch]
            out, cache = _forward(model, X, True, rng)
            residual = out - y
            total_loss += float(np.abs(residual).sum())
            grad_w, grad_b = _backward(model, cache, np.sign(residual) / len(batch))
            _rmsprop_step(model, grad_w, grad_b, cfg)

        train_mae = total_loss / len(train_set)
        if not np.isfinite(train_mae):
            raise DivergenceError("MLN loss is not finite", epoch=epoch, component="neural",
                                  learning_rate=cfg.learning_rate)
        stats = MlnEpochStats(epoch, train_mae, mae(model, validation_set))
        history.append(stats)
        logger.debug(f"MLN epoch {epoch}: train MAE={stats.train_mae:.5f} validation MAE={stats.validation_mae:.5f}")

    result = MlnTrainResult(model, history, mae(model, test_set))
    logger.info(f"MLN finished: validation MAE={history[-1].validation_mae:.5f} test MAE={result.test_mae:.5f}")
    return result


_HEADER = struct.Struct("<11sHdH")


def save(model: MlnModel, path) -> None:
    """Versioned flat file: header, layer sizes, then each layer's weights and biases as float64."""
    sizes = model.layer_sizes
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FILE_MAGIC, FILE_VERSION, model.dropout, len(sizes)))
        f.write(np.asarray(sizes, dtype="<i8").tobytes())
        for W, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load(path) -> MlnModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read network: {e}", path=str(path))
    if len(blob) < _HEADER.size:
        raise ArtifactVersionError("truncated network header", path=str(path))
    magic, version, dropout, count = _HEADER.unpack_from(blob)
    if magic != FILE_MAGIC or version != FILE_VERSION:
        raise ArtifactVersionError(f"unknown network format {magic!r} v{version}", path=str(path))
    offset = _HEADER.size
    sizes = np.frombuffer(blob, dtype="<i8", count=count, offset=offset)
    offset += 8 * count
    weights, biases = [], []
    try:
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=offset)
            offset += 8 * fan_in * fan_out
            b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
            offset += 8 * fan_out
            weights.append(W.reshape(fan_in, fan_out).copy())
            biases.append(b.copy())
    except ValueError:
        raise ArtifactVersionError("network body does not match its header", path=str(path))
    return MlnModel(weights, biases, dropout)
