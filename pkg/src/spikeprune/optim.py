"""SGD with momentum, learning-rate schedules, and the cross-entropy + L1-on-gamma loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError


@dataclass
class TrainConfig:
    lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 20
    lr_schedule: str = "cosine"          # "cosine" | "step"
    lr_drop_epochs: tuple = (80, 120)
    lr_drop_factor: float = 0.1
    lambda_l1: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ArgumentError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lambda_l1 < 0:
            raise ArgumentError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.lr_schedule not in ("cosine", "step"):
            raise ArgumentError(f"unknown lr schedule {self.lr_schedule!r}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a given epoch. Cosine decays to ~0; step drops 10x per milestone."""
    if not 0 <= epoch < cfg.epochs:
        raise ArgumentError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))
    drops = sum(1 for d in cfg.lr_drop_epochs if epoch >= d)
    return cfg.lr * cfg.lr_drop_factor ** drops


class SGD:
    """Classical momentum: v <- m*v + g + wd*p ; p <- p - lr*v.

    Weight decay skips batch-norm gamma/beta (the L1 penalty handles gamma).
    Masked parameters are re-zeroed (value and velocity) after every step so
    pruned connections stay exactly 0.
    """

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(p) for name, p in params.items()}

    @staticmethod
    def _decayed(name: str) -> bool:
        return not (name.endswith(".gamma") or name.endswith(".beta"))

    def step(self, params: dict, grads: dict, lr: float, masks: dict | None = None):
        for name, p in params.items():
            g = grads[name]
            if g is None:
                raise ArgumentError(f"missing gradient for {name}")
            if g.shape != p.shape:
                raise DimensionError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
            if self.cfg.weight_decay and self._decayed(name):
                g = g + self.cfg.weight_decay * p
            v = self.velocity[name]
            v *= self.cfg.momentum
            v += g
            p -= lr * v
            if masks is not None and name in masks:
                m = masks[name]
                p *= m
                v *= m


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_ce_l1(logits: np.ndarray, targets: np.ndarray, gammas: dict | None = None,
               lambda_l1: float = 0.0):
    """Mean cross-entropy plus lambda * sum|gamma|.

    Returns (loss, dlogits, gamma_l1_grads). The |gamma| subgradient at 0 is 0.
    """
    n = logits.shape[0]
    if n == 0:
        raise ArgumentError("empty batch")
    if targets.shape[0] != n:
        raise DimensionError(f"{n} logit rows vs {targets.shape[0]} targets")
    p = softmax(logits)
    nll = -np.log(np.maximum(p[np.arange(n), targets], 1e-300))
    loss = nll.mean()
    dlogits = p
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    l1_grads = {}
    if gammas:
        for name, g in gammas.items():
            loss += lambda_l1 * np.abs(g).sum()
            l1_grads[name] = lambda_l1 * np.sign(g)
    return loss, dlogits, l1_grads


def accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == targets).mean())
