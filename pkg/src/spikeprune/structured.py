"""Channel-level pruning: L1-trained batch-norm scaling factors, global
|gamma| ranking, criticality regeneration over the training set, physical
slimming of the network, and multiply-accumulate accounting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import SurvivalLedger
from .criticality import CriticalityTable, score_batch
from .errors import ArgumentError, DimensionError
from .network import NetworkSpec, SpikingNetwork, trace_shapes
from .unstructured import extend_sparsity, round_half_up


@dataclass
class ChannelPlan:
    """Surviving original channel indices per batch-norm layer."""

    keep: dict                  # bn layer index -> sorted list of channel indices
    widths: dict                # bn layer index -> original channel count

    def __post_init__(self):
        for layer, idx in self.keep.items():
            width = self.widths[layer]
            if len(idx) == 0:
                raise ArgumentError(f"layer {layer}: a channel plan needs >= 1 survivor")
            if list(idx) != sorted(set(idx)) or idx[-1] >= width or idx[0] < 0:
                raise ArgumentError(f"layer {layer}: bad channel indices {idx}")

    @property
    def total_channels(self) -> int:
        return sum(self.widths.values())

    def survivors(self) -> int:
        return sum(len(v) for v in self.keep.values())

    def to_dict(self):
        return {
            "keep": {str(k): list(map(int, v)) for k, v in self.keep.items()},
            "widths": {str(k): int(v) for k, v in self.widths.items()},
        }

    @staticmethod
    def from_dict(d):
        return ChannelPlan(
            keep={int(k): list(map(int, v)) for k, v in d["keep"].items()},
            widths={int(k): int(v) for k, v in d["widths"].items()},
        )


def bn_gammas(net: SpikingNetwork) -> dict:
    """Gamma vectors keyed by batch-norm layer index, in layer order."""
    return {
        i: layer.gamma
        for i, layer in enumerate(net.layers)
        if layer.kind == "batchnorm"
    }


def rank_channels(gammas: dict) -> list:
    """All (layer, channel) pairs in ascending |gamma| order, ties by index."""
    layers, channels, mags = [], [], []
    for layer in sorted(gammas):
        g = np.asarray(gammas[layer])
        layers.extend([layer] * g.size)
        channels.extend(range(g.size))
        mags.extend(np.abs(g))
    layers = np.array(layers)
    channels = np.array(channels)
    mags = np.array(mags)
    order = np.lexsort((channels, layers, mags))
    return [(int(layers[i]), int(channels[i])) for i in order]


@dataclass
class ChannelPruneInfo:
    percent: float
    percent_prime: float
    k: int
    pruned: list                # (layer, channel) removed before regeneration
    regenerated: list           # (layer, channel) brought back
    force_kept: list            # (layer, channel) kept by the collapse guard


def prune_and_regenerate_channels(net: SpikingNetwork, percent: float, r: float,
                                  channel_scores: dict) -> tuple:
    """Over-prune channels by |gamma| to the extended percent, then regenerate.

    channel_scores maps bn layer index -> per-channel criticality. Returns
    (ChannelPlan, ChannelPruneInfo). A layer emptied by the global ranking
    force-keeps its highest-|gamma| channel.
    """
    gammas = bn_gammas(net)
    widths = {layer: g.size for layer, g in gammas.items()}
    total = sum(widths.values())
    percent_prime = extend_sparsity(percent, r)
    survivors_prime = round_half_up((1.0 - percent_prime) * total)
    if survivors_prime < 1:
        raise ArgumentError(f"extended percent {percent_prime} leaves no channels")
    ranking = rank_channels(gammas)
    prune_count = total - survivors_prime
    pruned = ranking[:prune_count]

    target_survivors = round_half_up((1.0 - percent) * total)
    k = target_survivors - survivors_prime
    regenerated = []
    if k > 0:
        if k > len(pruned):
            raise ArgumentError(f"k={k} exceeds pruned channel count {len(pruned)}")
        score = np.array([channel_scores[l][c] for l, c in pruned])
        mag = np.array([abs(gammas[l][c]) for l, c in pruned])
        idx = np.arange(len(pruned))
        order = np.lexsort((idx, -mag, -score))
        regenerated = [pruned[i] for i in order[:k]]

    removed = set(pruned) - set(regenerated)
    keep = {layer: [c for c in range(widths[layer]) if (layer, c) not in removed]
            for layer in widths}
    force_kept = []
    for layer, kept in keep.items():
        if not kept:
            g = np.abs(gammas[layer])
            best = int(np.lexsort((np.arange(g.size), -g))[0])
            keep[layer] = [best]
            force_kept.append((layer, best))
    plan = ChannelPlan(keep=keep, widths=widths)
    info = ChannelPruneInfo(percent=percent, percent_prime=percent_prime, k=int(max(k, 0)),
                            pruned=pruned, regenerated=regenerated, force_kept=force_kept)
    return plan, info


# ---------------------------------------------------------------------------
# Surgery
# ---------------------------------------------------------------------------

def apply_plan_to_spec(spec: NetworkSpec, plan: ChannelPlan) -> NetworkSpec:
    """NetworkSpec with channel widths reduced per the plan."""
    shapes = trace_shapes(spec)
    new_layers = []
    kept_in = None                       # None = input channels untouched
    for i, ls in enumerate(spec.layers):
        if ls.kind == "conv":
            keep_out = plan.keep.get(i + 1)
            if keep_out is None:
                raise DimensionError(f"plan has no entry for batch norm after conv {i}")
            new_layers.append(ls.__class__(
                "conv",
                in_channels=ls.in_channels if kept_in is None else len(kept_in),
                out_channels=len(keep_out),
                kernel=ls.kernel, stride=ls.stride, padding=ls.padding,
            ))
            kept_in = keep_out
        elif ls.kind == "batchnorm":
            new_layers.append(ls.__class__("batchnorm", out_channels=len(plan.keep[i])))
        elif ls.kind == "linear":
            if kept_in is None:
                new_layers.append(ls)
            else:
                if spec.layers[i - 1].kind != "flatten":
                    raise DimensionError(
                        "slimming expects the linear after the conv stack to follow a flatten"
                    )
                c_, h_, w_ = shapes[i - 2]
                new_layers.append(ls.__class__(
                    "linear",
                    in_features=len(kept_in) * h_ * w_,
                    out_features=ls.out_features,
                ))
                kept_in = None
        else:
            new_layers.append(ls)
    return NetworkSpec(input_shape=spec.input_shape, layers=new_layers,
                       t_steps=spec.t_steps, lif=spec.lif)


def _head_keep_features(plan_keep: list, h: int, w: int) -> np.ndarray:
    hw = h * w
    return np.concatenate([np.arange(c * hw, (c + 1) * hw) for c in plan_keep])


def slim(net: SpikingNetwork, plan: ChannelPlan) -> SpikingNetwork:
    """Physically remove pruned channels; output matches the gamma/beta-masked
    original within float roundoff for every input."""
    for layer, width in plan.widths.items():
        if net.layers[layer].kind != "batchnorm" or net.layers[layer].channels != width:
            raise DimensionError(f"plan does not match network at layer {layer}")
    spec = net.spec
    shapes = trace_shapes(spec)
    new_spec = apply_plan_to_spec(spec, plan)
    out = SpikingNetwork(new_spec, np.random.default_rng(0))
    kept_in = None
    for i, ls in enumerate(spec.layers):
        src = net.layers[i]
        dst = out.layers[i]
        if ls.kind == "conv":
            keep_out = plan.keep[i + 1]
            w = src.weight[keep_out]
            if kept_in is not None:
                w = w[:, kept_in]
            dst.weight = w.copy()
            kept_in = keep_out
        elif ls.kind == "batchnorm":
            keep = plan.keep[i]
            dst.gamma = src.gamma[keep].copy()
            dst.beta = src.beta[keep].copy()
            dst.running_mean = src.running_mean[keep].copy()
            dst.running_var = src.running_var[keep].copy()
        elif ls.kind == "linear":
            if kept_in is None:
                dst.weight = src.weight.copy()
            else:
                c_, h_, w_ = shapes[i - 2]
                cols = _head_keep_features(kept_in, h_, w_)
                dst.weight = src.weight[:, cols].copy()
                kept_in = None
            dst.bias = src.bias.copy()
    return out


def mask_channels(net: SpikingNetwork, plan: ChannelPlan) -> SpikingNetwork:
    """Copy of net with pruned channels silenced (gamma and beta zeroed).

    A silenced channel emits exactly 0 after batch norm, so the LIF behind it
    never fires and the channel contributes nothing downstream; this is the
    equivalence oracle for slim().
    """
    other = net.clone()
    for layer, keep in plan.keep.items():
        drop = np.setdiff1d(np.arange(plan.widths[layer]), keep)
        other.layers[layer].gamma[drop] = 0.0
        other.layers[layer].beta[drop] = 0.0
    return other


# ---------------------------------------------------------------------------
# MAC accounting
# ---------------------------------------------------------------------------

@dataclass
class FlopsReport:
    layers: list                # (layer index, kind, dense MACs, slim MACs)
    dense_total: int
    slim_total: int

    @property
    def reduction(self) -> float:
        if self.dense_total == 0:
            return 0.0
        return 1.0 - self.slim_total / self.dense_total

    def to_dict(self):
        return {
            "layers": [
                {"layer": i, "kind": k, "dense_macs": d, "slim_macs": s}
                for i, k, d, s in self.layers
            ],
            "dense_total": self.dense_total,
            "slim_total": self.slim_total,
            "reduction": self.reduction,
        }


def _spec_macs(spec: NetworkSpec) -> dict:
    """Per-weighted-layer multiply-accumulates for one sample, one timestep."""
    shapes = trace_shapes(spec)
    macs = {}
    for i, ls in enumerate(spec.layers):
        if ls.kind == "conv":
            _, oh, ow = shapes[i]
            macs[i] = ls.out_channels * ls.in_channels * ls.kernel * ls.kernel * oh * ow
        elif ls.kind == "linear":
            macs[i] = ls.in_features * ls.out_features
    return macs


def count_flops(spec: NetworkSpec, plan: ChannelPlan | None = None) -> FlopsReport:
    """MAC counts of the dense spec and its slimmed version; pure geometry."""
    dense = _spec_macs(spec)
    slim_macs = _spec_macs(apply_plan_to_spec(spec, plan)) if plan is not None else dense
    layers = [(i, spec.layers[i].kind, int(dense[i]), int(slim_macs[i])) for i in sorted(dense)]
    return FlopsReport(layers=layers,
                       dense_total=int(sum(dense.values())),
                       slim_total=int(sum(slim_macs.values())))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def criticality_over_dataset(net: SpikingNetwork, x: np.ndarray, y: np.ndarray,
                             batch_size: int, aggregation: str = "max") -> dict:
    """Accumulate channel criticality over a full dataset in inference mode."""
    table = CriticalityTable()
    for i in range(0, x.shape[0], batch_size):
        net.forward(x[i:i + batch_size], training=False)
        table.accumulate(score_batch(net.lif_states(), aggregation))
    finalized = table.finalize()
    scores = {}
    for i, layer in enumerate(net.layers):
        if layer.kind == "batchnorm":
            lif = net.scoring_lif(i)
            scores[i] = finalized[lif]
    return scores


@dataclass
class StructuredRunResult:
    plan: ChannelPlan
    info: ChannelPruneInfo
    net: SpikingNetwork           # slimmed, fine-tuned
    flops: FlopsReport
    ledger: SurvivalLedger
    train_rows: list
    finetune_rows: list
    channel_scores: dict


def structured_pipeline(net, make_trainer, train_epochs: int, finetune_epochs: int,
                        percent: float, r: float, lambda_l1: float,
                        batch_size: int, aggregation: str = "max") -> StructuredRunResult:
    """Three phases: L1-sparsified training, prune+regenerate+slim, fine-tune.

    make_trainer(net, epochs) builds a fresh training loop around a network;
    the fine-tune phase runs without the L1 term.
    """
    trainer = make_trainer(net, train_epochs)
    train_rows = trainer.run_epochs(train_epochs, lambda_l1=lambda_l1)

    scores = criticality_over_dataset(net, trainer.data.x_train, trainer.data.y_train,
                                      batch_size, aggregation)
    plan, info = prune_and_regenerate_channels(net, percent, r, scores)

    ledger = SurvivalLedger(plan.total_channels)
    pairs = [(l, c) for l in sorted(plan.widths) for c in range(plan.widths[l])]
    index_of = {pc: i for i, pc in enumerate(pairs)}
    newly = np.array(sorted(index_of[pc] for pc in info.pruned), dtype=np.intp)
    regen = np.array(sorted(index_of[pc] for pc in info.regenerated), dtype=np.intp)
    ledger.on_iteration(1, newly, regen)

    slimmed = slim(net, plan)
    flops = count_flops(net.spec, plan)
    finetuner = make_trainer(slimmed, finetune_epochs)
    finetune_rows = finetuner.run_epochs(finetune_epochs, lambda_l1=0.0)
    return StructuredRunResult(plan=plan, info=info, net=slimmed, flops=flops,
                               ledger=ledger, train_rows=train_rows,
                               finetune_rows=finetune_rows, channel_scores=scores)
