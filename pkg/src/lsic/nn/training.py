"""Adam training loop with early stopping on validation accuracy.

Training halts once validation accuracy has not improved for `patience`
consecutive epochs (or at max_epochs) and the weights from the best
validation epoch are restored. History is one record per epoch:
{epoch, train_loss, train_acc, val_acc}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigInvalid, EmptyDataset
from .layers import Dropout
from .model import ModelGraph, batch_probs, loss_and_grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 20
    dropout_rate: float = 0.3
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.patience < 1:
            raise ConfigInvalid("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigInvalid("batch_size and max_epochs must be >= 1")
        return self


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, model: ModelGraph, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c = self.cfg
        correct1 = 1.0 - c.beta1 ** self.t
        correct2 = 1.0 - c.beta2 ** self.t
        weights = model.weights()
        for key, g in grads.items():
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            self.m[key] = c.beta1 * self.m[key] + (1 - c.beta1) * g
            self.v[key] = c.beta2 * self.v[key] + (1 - c.beta2) * g * g
            m_hat = self.m[key] / correct1
            v_hat = self.v[key] / correct2
            update = c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)
            model.set_tensor(key, (weights[key] - update).astype(weights[key].dtype))


def _joint_accuracy(probs: dict[str, np.ndarray], labels: dict[str, np.ndarray]) -> float:
    """Exact-match accuracy: all heads correct simultaneously."""
    correct = None
    for head, p in probs.items():
        hit = np.argmax(p, axis=1) == labels[head]
        correct = hit if correct is None else (correct & hit)
    return float(np.mean(correct))


def train(model: ModelGraph, train_x: np.ndarray, train_y: dict[str, np.ndarray],
          val_x: np.ndarray, val_y: dict[str, np.ndarray],
          cfg: TrainConfig | None = None):
    """Train in place; returns (model, history).

    Labels are index arrays keyed by head name ("intent" for the single
    head; "action" and "object" for slots).
    """
    cfg = (cfg or TrainConfig()).validate()
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise EmptyDataset("train and validation sets must be nonempty")

    for ly in model.all_layers():
        if isinstance(ly, Dropout):
            ly.rate = cfg.dropout_rate

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg)
    n = train_x.shape[0]
    history: list[dict] = []
    best_acc = -1.0
    best_epoch = 0
    best_snap = model.snapshot()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        hits = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch_y = {h: y[idx] for h, y in train_y.items()}
            loss, grads, probs = loss_and_grad(model, train_x[idx], batch_y, rng=rng)
            opt.step(model, grads)
            epoch_loss += loss * len(idx)
            hits += _joint_accuracy(probs, batch_y) * len(idx)

        val_probs = batch_probs(model, val_x)
        val_acc = _joint_accuracy(val_probs, val_y)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "train_acc": hits / n,
            "val_acc": val_acc,
        })

        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_snap = model.snapshot()
        elif epoch - best_epoch >= cfg.patience:
            break

    model.restore(best_snap)
    return model, history
