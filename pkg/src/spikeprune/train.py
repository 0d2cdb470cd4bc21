"""Training loop around one network: batching, SGD steps, evaluation,
per-epoch CSV rows, and full-state checkpointing (weights, velocity, masks,
RNG stream) so interrupted runs resume bit-identically.
"""

from __future__ import annotations

import numpy as np

from . import checkpoint
from .data import Dataset
from .network import NetworkSpec, SpikingNetwork
from .optim import SGD, TrainConfig, accuracy, loss_ce_l1, lr_at

EPOCH_HEADER = "epoch,lr,train_loss,train_acc,test_loss,test_acc,sparsity"
PRUNE_HEADER = "iteration,step,s_t,s_prime,k,regenerated_fraction,train_acc"


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: str, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


class Trainer:
    def __init__(self, net: SpikingNetwork, data: Dataset, cfg: TrainConfig,
                 rng: np.random.Generator):
        self.net = net
        self.data = data
        self.cfg = cfg
        self.rng = rng
        self.optim = SGD(net.parameters(), cfg)
        self.steps_per_epoch = -(-data.x_train.shape[0] // cfg.batch_size)

    def batches(self):
        """One epoch of shuffled training batches (one permutation draw)."""
        n = self.data.x_train.shape[0]
        perm = self.rng.permutation(n)
        for i in range(0, n, self.cfg.batch_size):
            sel = perm[i:i + self.cfg.batch_size]
            yield self.data.x_train[sel], self.data.y_train[sel]

    def _gammas(self):
        return {name: p for name, p in self.net.parameters().items()
                if name.endswith(".gamma")}

    def train_step(self, x, y, lr: float, masks: dict | None = None,
                   lambda_l1: float = 0.0):
        logits = self.net.forward(x, training=True)
        gammas = self._gammas() if lambda_l1 > 0 else None
        loss, dlogits, l1_grads = loss_ce_l1(logits, y, gammas, lambda_l1)
        acc = accuracy(logits, y)
        self.net.backward(dlogits)
        grads = self.net.grads()
        for name, g in l1_grads.items():
            grads[name] = grads[name] + g
        self.optim.step(self.net.parameters(), grads, lr, masks)
        return float(loss), acc

    def evaluate(self, split: str = "test", batch_size: int = 256):
        x = self.data.x_test if split == "test" else self.data.x_train
        y = self.data.y_test if split == "test" else self.data.y_train
        losses, hits = 0.0, 0.0
        for i in range(0, x.shape[0], batch_size):
            xb, yb = x[i:i + batch_size], y[i:i + batch_size]
            logits = self.net.forward(xb, training=False)
            loss, _, _ = loss_ce_l1(logits, yb)
            losses += loss * xb.shape[0]
            hits += (logits.argmax(axis=1) == yb).sum()
        return float(losses / x.shape[0]), float(hits / x.shape[0])

    def run_epochs(self, epochs: int, lambda_l1: float = 0.0,
                   masks: dict | None = None, sparsity: float = 0.0) -> list:
        rows = []
        for epoch in range(epochs):
            lr = lr_at(epoch, self.cfg)
            losses, accs = [], []
            for x, y in self.batches():
                loss, acc = self.train_step(x, y, lr, masks, lambda_l1)
                losses.append(loss)
                accs.append(acc)
            test_loss, test_acc = self.evaluate()
            rows.append((epoch, lr, float(np.mean(losses)), float(np.mean(accs)),
                         test_loss, test_acc, sparsity))
        return rows


# ---------------------------------------------------------------------------
# Full-state checkpoints
# ---------------------------------------------------------------------------

def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(rng: np.random.Generator, state: dict):
    rng.bit_generator.state = state


def save_run_state(path, net: SpikingNetwork, meta_extra: dict | None = None,
                   trainer: Trainer | None = None, masks: dict | None = None,
                   rng: np.random.Generator | None = None):
    arrays = {}
    arrays.update(net.parameters())
    arrays.update(net.state_arrays())
    if trainer is not None:
        for name, v in trainer.optim.velocity.items():
            arrays[f"velocity/{name}"] = v
    if masks is not None:
        for name, m in masks.items():
            arrays[f"mask/{name}"] = m
    meta = {"network": net.spec.to_dict()}
    if rng is not None:
        meta["rng_state"] = rng_state(rng)
    if meta_extra:
        meta.update(meta_extra)
    checkpoint.save(path, arrays, meta)


def load_run_state(path):
    """Returns (net, arrays, meta); velocity/mask entries stay in arrays."""
    arrays, meta = checkpoint.load(path)
    spec = NetworkSpec.from_dict(meta["network"])
    net = SpikingNetwork(spec, np.random.default_rng(0))
    for name in list(arrays):
        if name.startswith(("velocity/", "mask/")):
            continue
        if name.endswith((".running_mean", ".running_var")):
            net.set_state_array(name, arrays[name])
        else:
            net.set_parameter(name, arrays[name])
    return net, arrays, meta

