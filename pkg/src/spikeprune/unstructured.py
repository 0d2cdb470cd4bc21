"""Connection-level pruning: cubic gradual schedule, global magnitude
criterion, over-pruning to an extended sparsity, and criticality-ranked
top-k regeneration, all maintained through binary masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import SurvivalLedger
from .criticality import CriticalityTable, network_connection_scores, score_batch
from .errors import ArgumentError
from .optim import lr_at


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class SparsitySchedule:
    """Cubic gradual-pruning ramp with a regeneration ratio.

    Iteration n of the schedule targets s_f - s_f*(1 - n*delta_t/t_f)^3.
    """

    s_f: float
    delta_t: int
    t_f: int
    r: float = 0.0
    n: int = 0

    def __post_init__(self):
        if not 0.0 < self.s_f < 1.0:
            raise ArgumentError(f"s_f must be in (0, 1), got {self.s_f}")
        if not 0.0 <= self.r < 1.0:
            raise ArgumentError(f"r must be in [0, 1), got {self.r}")
        if self.delta_t <= 0:
            raise ArgumentError(f"delta_t must be positive, got {self.delta_t}")

    @property
    def iterations(self) -> int:
        return self.t_f // self.delta_t


def current_sparsity(sched: SparsitySchedule) -> float:
    """s_t = s_f - s_f*(1 - n*delta_t/t_f)^3, monotone non-decreasing in n."""
    if sched.n * sched.delta_t > sched.t_f:
        raise ArgumentError(
            f"iteration {sched.n} is past the schedule end ({sched.t_f} steps)"
        )
    frac = sched.n * sched.delta_t / sched.t_f
    return sched.s_f - sched.s_f * (1.0 - frac) ** 3


def extend_sparsity(s_t: float, r: float) -> float:
    """Over-pruned level s_t + r*(1 - s_t) from which k structures come back."""
    if not 0.0 <= s_t < 1.0:
        raise ArgumentError(f"s_t must be in [0, 1), got {s_t}")
    if not 0.0 <= r < 1.0:
        raise ArgumentError(f"r must be in [0, 1), got {r}")
    return s_t + r * (1.0 - s_t)


class PruneMask:
    """Binary masks aligned with the prunable weight tensors of one network.

    Tensors are concatenated in layer order to form a single flat index
    space; all global ranking happens there.
    """

    def __init__(self, masks: dict):
        self.masks = masks
        self._sizes = {name: m.size for name, m in masks.items()}

    @staticmethod
    def ones_like(weights: dict) -> "PruneMask":
        return PruneMask({name: np.ones_like(w) for name, w in weights.items()})

    def copy(self) -> "PruneMask":
        return PruneMask({name: m.copy() for name, m in self.masks.items()})

    @property
    def total(self) -> int:
        return sum(self._sizes.values())

    def survivors(self) -> int:
        return int(sum(m.sum() for m in self.masks.values()))

    def sparsity(self) -> float:
        return 1.0 - self.survivors() / self.total

    def flat(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.masks.values()])

    def set_flat(self, flat: np.ndarray):
        off = 0
        for name, m in self.masks.items():
            size = self._sizes[name]
            self.masks[name] = flat[off:off + size].reshape(m.shape).astype(np.float64)
            off += size

    def apply(self, weights: dict):
        for name, w in weights.items():
            w *= self.masks[name]


def flatten_like(mask: PruneMask, arrays: dict) -> np.ndarray:
    """Concatenate per-tensor arrays into the mask's flat index space."""
    return np.concatenate([np.asarray(arrays[name]).ravel() for name in mask.masks])


def prune_global_magnitude(weights: dict, mask: PruneMask, s_prime: float) -> np.ndarray:
    """Mask the smallest-|w| weights across all tensors down to sparsity s_prime.

    Already-masked weights stay masked (their rank key is forced below any
    magnitude). Ties break toward the lower flat index. Returns the flat
    indices newly pruned by this call; weights are zeroed in place.
    """
    total = mask.total
    survivors_target = round_half_up((1.0 - s_prime) * total)
    if survivors_target < 1:
        raise ArgumentError(f"sparsity {s_prime} would leave no survivors")
    flat_mask = mask.flat()
    keys = np.abs(flatten_like(mask, weights))
    keys[flat_mask == 0.0] = -1.0
    order = np.argsort(keys, kind="stable")
    prune_count = total - survivors_target
    new_flat = np.ones(total)
    new_flat[order[:prune_count]] = 0.0
    np.minimum(new_flat, flat_mask, out=new_flat)
    newly_pruned = np.flatnonzero((flat_mask == 1.0) & (new_flat == 0.0))
    mask.set_flat(new_flat)
    mask.apply(weights)
    return newly_pruned


def regenerate(mask: PruneMask, weights: dict, conn_scores: dict, snapshot: dict,
               k: int) -> np.ndarray:
    """Unmask the top-k pruned connections by criticality.

    Ranking is (criticality desc, |snapshot| desc, flat index asc). Restored
    connections take their snapshot value: the pre-prune weight for
    connections cut this iteration, 0 for ones cut earlier. Returns the flat
    indices regenerated.
    """
    flat_mask = mask.flat()
    pruned = np.flatnonzero(flat_mask == 0.0)
    if k > pruned.size:
        raise ArgumentError(f"k={k} exceeds pruned count {pruned.size}")
    if k == 0:
        return np.empty(0, dtype=np.intp)
    score_flat = flatten_like(mask, conn_scores)[pruned]
    snap_flat = flatten_like(mask, snapshot)
    order = np.lexsort((pruned, -np.abs(snap_flat[pruned]), -score_flat))
    chosen = pruned[order[:k]]
    flat_mask[chosen] = 1.0
    mask.set_flat(flat_mask)
    restored = flat_mask * 0.0
    restored[chosen] = 1.0
    off = 0
    for name, m in mask.masks.items():
        size = m.size
        sel = restored[off:off + size].reshape(m.shape).astype(bool)
        weights[name][sel] = snapshot[name][sel]
        off += size
    return chosen


@dataclass
class PruneEvent:
    iteration: int
    step: int
    s_t: float
    s_prime: float
    k: int
    rescue_fraction: float
    train_acc: float
    sparsity_after: float = 0.0


@dataclass
class PruneRunResult:
    mask: PruneMask
    ledger: SurvivalLedger
    events: list
    epoch_rows: list
    mask_history: list          # (post_prune, post_regen) flat bool pairs


def _survivor_target(total: int, s: float) -> int:
    return round_half_up((1.0 - s) * total)


def prune_loop(net, trainer, sched: SparsitySchedule, epochs: int,
               aggregation: str = "max", gmp_only: bool = False) -> PruneRunResult:
    """Iterative train/prune/regenerate driver.

    Runs `epochs` epochs of training; after every training step t with
    t % delta_t == 0 and t <= t_f, advances the schedule, prunes globally
    to the extended sparsity, scores criticality from the step just
    trained, and regenerates back to the schedule sparsity. Steps past t_f
    fine-tune with masks frozen. With gmp_only the event prunes straight
    to the schedule sparsity and skips scoring and regeneration entirely.
    """
    weights = net.prunable()
    mask = PruneMask.ones_like(weights)
    ledger = SurvivalLedger(mask.total)
    events = []
    epoch_rows = []
    history = []
    step = 0
    for epoch in range(epochs):
        lr = lr_at(epoch, trainer.cfg)
        losses, accs = [], []
        for x, y in trainer.batches():
            loss, acc = trainer.train_step(x, y, lr, masks=mask.masks)
            losses.append(loss)
            accs.append(acc)
            step += 1
            if step <= sched.t_f and step % sched.delta_t == 0:
                sched.n += 1
                s_t = current_sparsity(sched)
                if gmp_only:
                    newly = prune_global_magnitude(weights, mask, s_t)
                    ledger.on_iteration(sched.n, newly, np.empty(0, dtype=np.intp))
                    history.append((mask.flat().astype(bool), mask.flat().astype(bool)))
                    events.append(PruneEvent(sched.n, step, s_t, s_t, 0, 0.0, acc,
                                             mask.sparsity()))
                    continue
                s_prime = extend_sparsity(s_t, sched.r)
                snapshot = {name: w.copy() for name, w in weights.items()}
                newly = prune_global_magnitude(weights, mask, s_prime)
                post_prune = mask.flat().astype(bool)
                table = CriticalityTable()
                table.accumulate(score_batch(net.lif_states(), aggregation))
                conn = network_connection_scores(net, table.finalize())
                k = _survivor_target(mask.total, s_t) - mask.survivors()
                chosen = regenerate(mask, weights, conn, snapshot, k)
                ledger.on_iteration(sched.n, newly, chosen)
                history.append((post_prune, mask.flat().astype(bool)))
                rec = ledger.records[-1]
                events.append(PruneEvent(sched.n, step, s_t, s_prime, int(k),
                                         rec.rescue_fraction, acc, mask.sparsity()))
        test_loss, test_acc = trainer.evaluate()
        epoch_rows.append((epoch, lr, float(np.mean(losses)), float(np.mean(accs)),
                           test_loss, test_acc, mask.sparsity()))
    return PruneRunResult(mask=mask, ledger=ledger, events=events,
                          epoch_rows=epoch_rows, mask_history=history)
