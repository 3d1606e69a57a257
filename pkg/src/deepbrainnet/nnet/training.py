"""Adam training loop with early stopping and plateau learning-rate reduction.

One xorshift stream seeded from the config drives epoch shuffling and dropout
masks in a fixed order, so identical configurations reproduce identical
histories byte for byte. Validation loss drives both schedules: no strict
improvement for `lr_reduce_patience` epochs halves (by `lr_reduce_factor`)
the learning rate, and none for `early_stop_patience` epochs stops training;
the weights of the best-validation-loss epoch are restored at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import Prng
from .network import Network, softmax_cross_entropy


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN or infinite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    early_stop_patience: int = 5
    lr_reduce_factor: float = 0.5
    lr_reduce_patience: int = 3
    dropout_rate: float = 0.3
    freeze_branches_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.early_stop_patience < 1 or self.lr_reduce_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.lr_reduce_factor < 1.0:
            raise ValueError("lr_reduce_factor must be in (0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.freeze_branches_epochs < 0:
            raise ValueError("freeze_branches_epochs must be >= 0")


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def __len__(self):
        return len(self.train_loss)

    def save_csv(self, path) -> None:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc,lr"]
        for i in range(len(self.train_loss)):
            lines.append(
                f"{i + 1},{self.train_loss[i]:.10g},{self.train_acc[i]:.10g},"
                f"{self.val_loss[i]:.10g},{self.val_acc[i]:.10g},{self.lr[i]:.10g}"
            )
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


class Adam:
    """Per-parameter first/second moment state with bias correction."""

    def __init__(self, params: list[np.ndarray], beta1: float, beta2: float, epsilon: float):
        self.params = params
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = [0] * len(params)

    def step(self, grads: list[np.ndarray], lr: float, active: set[int] | None = None) -> None:
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if active is not None and i not in active:
                continue
            self.t[i] += 1
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t[i])
            v_hat = self.v[i] / (1 - self.beta2 ** self.t[i])
            p -= lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def evaluate_loss(network: Network, x: np.ndarray, labels: np.ndarray, chunk: int = 256):
    """Mean loss and accuracy over a dataset, dropout disabled."""
    total_loss = 0.0
    correct = 0
    n = x.shape[0]
    for start in range(0, n, chunk):
        xs = x[start : start + chunk]
        ys = labels[start : start + chunk]
        logits = network.forward_logits(xs, training=False)
        loss, _, probs = softmax_cross_entropy(logits, ys)
        total_loss += loss * xs.shape[0]
        correct += int((probs.argmax(axis=1) == ys).sum())
    return total_loss / n, correct / n


def train(
    network: Network,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    augment_fn=None,
) -> TrainingHistory:
    """Minibatch Adam on softmax cross-entropy with seeded determinism.

    `augment_fn(sample_index, epoch)`, when given, supplies the (C, H, W)
    training tensor for that sample and epoch; validation data are never
    augmented. During the first `freeze_branches_epochs` epochs only the head
    is updated, mimicking fine-tuning on frozen pretrained branches.
    """
    train_x, train_y = train_set
    val_x, val_y = val_set
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    val_y = np.asarray(val_y, dtype=np.int64)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("training and validation sets must be nonempty")
    for labels in (train_y, val_y):
        if labels.size and (labels.min() < 0 or labels.max() >= network.n_classes):
            raise ValueError(f"labels must lie in [0, {network.n_classes})")

    rng = Prng(config.seed)
    optimizer = Adam(network.parameters(), config.beta1, config.beta2, config.adam_epsilon)
    head_ids = {id(p) for p in network.head_parameters()}
    head_indices = {i for i, p in enumerate(network.parameters()) if id(p) in head_ids}

    history = TrainingHistory()
    lr = config.learning_rate
    best_val = np.inf
    best_weights = network.get_weights()
    stale_stop = 0
    stale_lr = 0
    n = train_x.shape[0]

    for epoch in range(1, config.epochs + 1):
        order = list(range(n))
        rng.shuffle(order)
        active = head_indices if epoch <= config.freeze_branches_epochs else None
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            if augment_fn is not None:
                xb = np.stack([augment_fn(i, epoch) for i in batch])
            else:
                xb = train_x[batch]
            yb = train_y[batch]
            logits = network.forward_logits(xb, training=True, rng=rng)
            loss, dlogits, probs = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite training loss at epoch {epoch}, batch start {start}"
                )
            network.zero_grads()
            network.backward_from_logits(dlogits)
            optimizer.step(network.gradients(), lr, active=active)
            epoch_loss += loss * len(batch)
            epoch_correct += int((probs.argmax(axis=1) == yb).sum())

        val_loss, val_acc = evaluate_loss(network, val_x, val_y)
        if not np.isfinite(val_loss):
            raise NonFiniteLossError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(epoch_loss / n)
        history.train_acc.append(epoch_correct / n)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        history.lr.append(lr)
        history.stopped_epoch = epoch

        if val_loss < best_val:
            best_val = val_loss
            best_weights = network.get_weights()
            history.best_epoch = epoch
            stale_stop = 0
            stale_lr = 0
        else:
            stale_stop += 1
            stale_lr += 1
            if stale_lr >= config.lr_reduce_patience:
                lr *= config.lr_reduce_factor
                stale_lr = 0
            if stale_stop >= config.early_stop_patience:
                break

    network.set_weights(best_weights)
    return history
