"""Mini-batch training with a held-out validation split and early stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import Model, build_model, cross_entropy, one_hot
from .optim import Adam

log = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise TrainError("train.validation_fraction: must be in (0, 1)")
        if self.patience < 1:
            raise TrainError("train.patience: must be >= 1")
        if self.batch_size < 1:
            raise TrainError("train.batch_size: must be >= 1")
        if self.max_epochs < 1:
            raise TrainError("train.max_epochs: must be >= 1")
        if not self.learning_rate > 0:
            raise TrainError("train.learning_rate: must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    n_train: int = 0
    n_val: int = 0

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc)])
        return path


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_weights = None
        self.wait = 0

    def update(self, epoch: int, val_loss: float, model: Model | None = None) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.wait = 0
            if model is not None:
                self.best_weights = model.get_weights()
            return False
        self.wait += 1
        return self.wait >= self.patience


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Indices (train, val): ``round(fraction * n_c)`` of each class go to validation."""
    labels = np.asarray(labels)
    val = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(fraction * idx.size))
        k = min(k, idx.size - 1)
        val.extend(idx[:k].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    train = np.setdiff1d(np.arange(labels.size), val)
    return train, val


def evaluate(model: Model, x, y, batch_size: int = 64) -> tuple[float, float]:
    """(mean cross-entropy, accuracy in [0, 1]) in eval mode."""
    probs = model.predict(x, batch_size)
    loss = cross_entropy(probs, one_hot(y))
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return loss, acc


def train(model_or_name, x, y, config: TrainConfig = TrainConfig()) -> tuple[Model, TrainLog]:
    """Fit a model on (x, y); returns the best-validation-epoch model and its log.

    ``model_or_name`` is a built Model or an architecture name (built here
    with ``config.seed``).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y):
        raise TrainError("inputs and labels differ in length")
    if len(y) < 2:
        raise TrainError("need at least 2 training instances")
    if np.unique(y).size < 2:
        raise TrainError("training partition contains a single class")

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    split_rng = np.random.default_rng(seeds[1])
    rng = np.random.default_rng(seeds[2])

    model = model_or_name if isinstance(model_or_name, Model) else build_model(model_or_name, x.shape[1:], init_seed)

    tr, va = stratified_split(y, config.validation_fraction, split_rng)
    if va.size == 0:
        raise TrainError("validation split is empty; increase validation_fraction or data size")
    xt, yt, xv, yv = x[tr], y[tr], x[va], y[va]
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    stopper = EarlyStopping(config.patience)
    tlog = TrainLog(n_train=len(tr), n_val=len(va))

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(xt))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            b = order[s:s + config.batch_size]
            yb = one_hot(yt[b])
            probs = model.forward(xt[b], mode="train", rng=rng)
            total += cross_entropy(probs, yb) * len(b)
            model.backward(yb, need_input_grad=False)
            opt.step(model)
        model.clear()
        val_loss, val_acc = evaluate(model, xv, yv, config.batch_size)
        rec = EpochRecord(epoch, total / len(xt), val_loss, val_acc)
        tlog.epochs.append(rec)
        log.debug("epoch %d train_loss=%.5f val_loss=%.5f val_acc=%.3f", *asdict(rec).values())
        if stopper.update(epoch, val_loss, model):
            break

    tlog.stopped_epoch = tlog.epochs[-1].epoch
    tlog.best_epoch = stopper.best_epoch
    if stopper.best_weights is not None:
        model.set_weights(stopper.best_weights)
    return model, tlog
