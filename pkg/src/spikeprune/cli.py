"""Command-line harness: train | prune-unstructured | prune-structured |
analyze | verify.

One RNG stream per run, seeded once; draws happen in a fixed order (dataset,
weight init, per-epoch shuffles), so any subcommand rerun with the same
config and seed writes byte-identical CSVs. Output goes to --out, the
config's `out`, or $SPIKEPRUNE_OUT/<subcommand> (default ./runs/<subcommand>).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import checkpoint
from .analysis import (
    FeatureBank,
    class_mean_cosine,
    extract_features,
    importance_transition,
    intra_cluster_variance,
    replay_mask_history,
    survival_report,
)
from .config import ExperimentConfig, load_config
from .criticality import scores_to_rows
from .data import load_dataset
from .errors import ConfigError
from .layers import LIFParams
from .network import SpikingNetwork, vgg_mini
from .optim import TrainConfig
from .structured import ChannelPlan, structured_pipeline
from .train import (
    EPOCH_HEADER,
    PRUNE_HEADER,
    Trainer,
    load_run_state,
    restore_rng,
    save_run_state,
    write_csv,
)
from .unstructured import SparsitySchedule, prune_loop

PACKAGE_ERRORS = (ConfigError, ValueError, RuntimeError, ArithmeticError, OSError)


def _out_dir(args, cfg: ExperimentConfig, sub: str) -> str:
    root = os.environ.get("SPIKEPRUNE_OUT", "runs")
    path = args.out or cfg.out or os.path.join(root, sub)
    os.makedirs(path, exist_ok=True)
    return path


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _make_spec(cfg: ExperimentConfig):
    if cfg.arch != "vgg_mini":
        raise ConfigError(f"key 'arch': unknown architecture {cfg.arch!r}")
    lif = LIFParams(tau=cfg.tau, v_threshold=cfg.v_threshold, v_reset=cfg.v_reset)
    return vgg_mini(input_shape=cfg.image, channels=cfg.channels, classes=cfg.classes,
                    kernel=cfg.kernel, pool=cfg.pool, t_steps=cfg.T, lif=lif)


def _train_cfg(cfg: ExperimentConfig, epochs: int, mode: str,
               lambda_l1: float = 0.0) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.wd,
        batch_size=cfg.batch_size, epochs=epochs,
        lr_schedule=cfg.schedule_kind(mode),
        lr_drop_epochs=(cfg.N_1, cfg.N_2),
        lambda_l1=lambda_l1, seed=cfg.seed,
    )


def _fresh_run(cfg: ExperimentConfig):
    """Seeded stream -> dataset -> network, in that order."""
    rng = np.random.default_rng(cfg.seed)
    data = load_dataset(cfg.dataset_spec(), rng)
    net = SpikingNetwork(_make_spec(cfg), rng)
    return rng, data, net


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg, "train")
    rng, data, net = _fresh_run(cfg)
    trainer = Trainer(net, data, _train_cfg(cfg, cfg.epochs, "unstructured"), rng)
    rows = trainer.run_epochs(cfg.epochs)
    write_csv(os.path.join(out, "train_log.csv"), EPOCH_HEADER, rows)
    save_run_state(
        os.path.join(out, "checkpoint.ckpt"), net,
        meta_extra={"kind": "dense", "config": cfg.to_dict(), "epochs_done": cfg.epochs},
        trainer=trainer, rng=rng,
    )
    print(f"train: {cfg.epochs} epochs, final test acc "
          f"{rows[-1][5]:.4f}, artifacts in {out}")
    return 0


def _unstructured_schedule(cfg: ExperimentConfig, steps_per_epoch: int) -> SparsitySchedule:
    budget = cfg.N_p * steps_per_epoch
    t_f = (budget // cfg.delta_t) * cfg.delta_t
    if t_f == 0:
        raise ConfigError(
            f"key 'delta_t': {cfg.delta_t} exceeds the pruning budget of {budget} steps"
        )
    return SparsitySchedule(s_f=cfg.s_f, delta_t=cfg.delta_t, t_f=t_f,
                            r=cfg.regen_ratio("unstructured"))


def cmd_prune_unstructured(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg, "unstructured")
    if args.resume:
        net, _, meta = load_run_state(args.resume)
        prev = ExperimentConfig.from_dict(meta["config"])
        if prev.seed != cfg.seed:
            raise ConfigError(f"resume checkpoint was seeded {prev.seed}, config says {cfg.seed}")
        if meta.get("epochs_done") != cfg.N_pre:
            raise ConfigError(
                f"resume checkpoint holds {meta.get('epochs_done')} epochs, N_pre={cfg.N_pre}"
            )
        # the dataset came from the stream's first draws; the checkpointed
        # state already accounts for everything up to the end of pretraining
        data = load_dataset(cfg.dataset_spec(), np.random.default_rng(cfg.seed))
        rng = np.random.default_rng(cfg.seed)
        restore_rng(rng, meta["rng_state"])
    else:
        rng, data, net = _fresh_run(cfg)
        if cfg.N_pre > 0:
            pre = Trainer(net, data, _train_cfg(cfg, cfg.N_pre, "unstructured"), rng)
            rows = pre.run_epochs(cfg.N_pre)
            write_csv(os.path.join(out, "pretrain_log.csv"), EPOCH_HEADER, rows)

    trainer = Trainer(net, data, _train_cfg(cfg, cfg.N_p + cfg.N_f, "unstructured"), rng)
    sched = _unstructured_schedule(cfg, trainer.steps_per_epoch)
    res = prune_loop(net, trainer, sched, epochs=cfg.N_p + cfg.N_f,
                     aggregation=cfg.aggregation, gmp_only=args.gmp_only)

    write_csv(os.path.join(out, "epoch_log.csv"), EPOCH_HEADER, res.epoch_rows)
    write_csv(os.path.join(out, "prune_log.csv"), PRUNE_HEADER,
              [(e.iteration, e.step, e.s_t, e.s_prime, e.k, e.rescue_fraction,
                e.train_acc) for e in res.events])

    hist_arrays = {}
    for i, (post_prune, post_regen) in enumerate(res.mask_history, start=1):
        hist_arrays[f"it{i:04d}.post_prune"] = post_prune.astype(np.float64)
        hist_arrays[f"it{i:04d}.post_regen"] = post_regen.astype(np.float64)
    checkpoint.save(os.path.join(out, "mask_history.ckpt"), hist_arrays,
                    {"iterations": len(res.mask_history), "total": res.mask.total})

    report = survival_report(res.ledger, res.mask.flat().astype(bool))
    with open(os.path.join(out, "survival.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)

    save_run_state(
        os.path.join(out, "checkpoint_final.ckpt"), net,
        meta_extra={"kind": "unstructured", "config": cfg.to_dict(),
                    "sparsity": res.mask.sparsity(),
                    "survived_via_regeneration": report["survived_via_regeneration"]},
        trainer=trainer, masks=res.mask.masks, rng=rng,
    )
    print(f"prune-unstructured: sparsity {res.mask.sparsity():.6f}, "
          f"final test acc {res.epoch_rows[-1][5]:.4f}, artifacts in {out}")
    return 0


def cmd_prune_structured(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg, "structured")
    rng, data, net = _fresh_run(cfg)

    def make_trainer(network, epochs):
        return Trainer(network, data,
                       _train_cfg(cfg, epochs, "structured", lambda_l1=cfg.s), rng)

    res = structured_pipeline(
        net, make_trainer, train_epochs=cfg.N_t, finetune_epochs=cfg.N_f,
        percent=cfg.percent, r=cfg.regen_ratio("structured"), lambda_l1=cfg.s,
        batch_size=cfg.batch_size, aggregation=cfg.aggregation,
    )
    write_csv(os.path.join(out, "train_log.csv"), EPOCH_HEADER, res.train_rows)
    write_csv(os.path.join(out, "finetune_log.csv"), EPOCH_HEADER, res.finetune_rows)
    write_csv(os.path.join(out, "criticality.csv"), "layer,unit,score",
              scores_to_rows(res.channel_scores))
    with open(os.path.join(out, "flops.json"), "w", encoding="utf-8") as f:
        json.dump(res.flops.to_dict(), f, sort_keys=True, indent=2)

    surviving = np.zeros(res.plan.total_channels, dtype=bool)
    pairs = [(l, c) for l in sorted(res.plan.widths) for c in range(res.plan.widths[l])]
    for i, (l, c) in enumerate(pairs):
        surviving[i] = c in set(res.plan.keep[l])
    report = survival_report(res.ledger, surviving)
    with open(os.path.join(out, "survival.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, indent=2)

    save_run_state(
        os.path.join(out, "checkpoint_l1.ckpt"), net,
        meta_extra={"kind": "structured-l1", "config": cfg.to_dict()},
        rng=rng,
    )
    save_run_state(
        os.path.join(out, "checkpoint_slim.ckpt"), res.net,
        meta_extra={"kind": "structured-slim", "config": cfg.to_dict(),
                    "plan": res.plan.to_dict(), "flops": res.flops.to_dict(),
                    "force_kept": [list(fc) for fc in res.info.force_kept]},
        rng=rng,
    )
    final_acc = res.finetune_rows[-1][5] if res.finetune_rows else float("nan")
    print(f"prune-structured: kept {res.plan.survivors()}/{res.plan.total_channels} "
          f"channels, flops reduction {res.flops.reduction:.4f}, "
          f"final test acc {final_acc:.4f}, artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _banks_from_checkpoint(path):
    net, _, meta = load_run_state(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    data = load_dataset(cfg.dataset_spec(), np.random.default_rng(cfg.seed))
    train = FeatureBank(extract_features(net, data.x_train), data.y_train, "train").normalize()
    test = FeatureBank(extract_features(net, data.x_test), data.y_test, "test").normalize()
    return train, test, cfg


def _gammas_over_original_axis(path):
    net, _, meta = load_run_state(path)
    if "plan" not in meta:
        raise ConfigError(f"{path}: checkpoint has no channel plan (not a slimmed model)")
    plan = ChannelPlan.from_dict(meta["plan"])
    gammas = {}
    for layer, keep in plan.keep.items():
        full = np.zeros(plan.widths[layer])
        full[list(keep)] = net.layers[layer].gamma
        gammas[layer] = full
    return plan.keep, gammas


def cmd_analyze(args) -> int:
    out = args.out or os.path.join(os.environ.get("SPIKEPRUNE_OUT", "runs"), "analyze")
    os.makedirs(out, exist_ok=True)
    if args.metric in ("variance", "cosine"):
        train, test, cfg = _banks_from_checkpoint(args.checkpoint)
        if args.metric == "variance":
            rows = []
            for cls in range(cfg.classes):
                rows.append(("train", cls, intra_cluster_variance(train, cls)))
                rows.append(("test", cls, intra_cluster_variance(test, cls)))
            write_csv(os.path.join(out, "variance.csv"), "split,class,variance", rows)
        else:
            rows = [(cls, class_mean_cosine(train, test, cls))
                    for cls in range(cfg.classes)]
            write_csv(os.path.join(out, "cosine.csv"), "class,cosine", rows)
    elif args.metric == "transition":
        if not args.checkpoint_b:
            raise ConfigError("--metric transition needs --checkpoint-b")
        plan_a, gam_a = _gammas_over_original_axis(args.checkpoint)
        plan_b, gam_b = _gammas_over_original_axis(args.checkpoint_b)
        result = importance_transition(plan_a, gam_a, plan_b, gam_b)
        if result is None:
            write_csv(os.path.join(out, "transition.csv"),
                      "side,layer,channel,gamma_norm", [])
            print("analyze: channel plans are identical; no non-overlapping channels")
            return 0
        mean_a, mean_b, rows = result
        write_csv(os.path.join(out, "transition.csv"),
                  "side,layer,channel,gamma_norm", rows)
        with open(os.path.join(out, "transition_summary.json"), "w", encoding="utf-8") as f:
            json.dump({"mean_a": mean_a, "mean_b": mean_b}, f, sort_keys=True, indent=2)
    elif args.metric == "survival":
        run_dir = os.path.dirname(os.path.abspath(args.checkpoint))
        hist_path = os.path.join(run_dir, "mask_history.ckpt")
        arrays, meta = checkpoint.load(hist_path)
        history = [
            (arrays[f"it{i:04d}.post_prune"].astype(bool),
             arrays[f"it{i:04d}.post_regen"].astype(bool))
            for i in range(1, meta["iterations"] + 1)
        ]
        report = replay_mask_history(np.ones(meta["total"], dtype=bool), history)
        rows = [(it["iteration"], it["pruned"], it["regenerated"], it["rescue_fraction"])
                for it in report["iterations"]]
        write_csv(os.path.join(out, "survival.csv"),
                  "iteration,pruned,regenerated,rescue_fraction", rows)
        with open(os.path.join(out, "survival_recomputed.json"), "w", encoding="utf-8") as f:
            json.dump(report, f, sort_keys=True, indent=2)
    print(f"analyze: {args.metric} written to {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all
    with tempfile.TemporaryDirectory() as tmp:
        results = run_all(tmp)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        print(f"error: {failed} verification properties failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeprune")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, resume=False):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        if resume:
            p.add_argument("--resume", default=None,
                           help="continue from a dense-training checkpoint")

    common(sub.add_parser("train", help="dense training run"))
    p = sub.add_parser("prune-unstructured", help="iterative magnitude pruning with regeneration")
    common(p, resume=True)
    p.add_argument("--gmp-only", action="store_true",
                   help="pure gradual magnitude pruning baseline (no regeneration)")
    common(sub.add_parser("prune-structured", help="channel slimming with regeneration"))

    p = sub.add_parser("analyze", help="post-hoc metrics over checkpoints")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--checkpoint-b", default=None)
    p.add_argument("--metric", required=True,
                   choices=["variance", "cosine", "transition", "survival"])
    p.add_argument("--out", default=None)

    sub.add_parser("verify", help="run the built-in invariant suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "prune-unstructured": cmd_prune_unstructured,
        "prune-structured": cmd_prune_structured,
        "analyze": cmd_analyze,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except PACKAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
