"""Distillation orchestrator: outer loop over fresh random models, inner
matching/model-training loops, periodic per-class re-clustering."""

from dataclasses import dataclass, field

import numpy as np
import torch

from . import cluster as cluster_mod
from .data import class_batch
from .errors import ConfigurationError, NumericalInstabilityError, UsageError
from .match import (
    class_gradient,
    distribution_match_loss,
    gradient_match_loss,
    image_update_step,
    random_synthetic,
)
from .augment import augment_pair
from .metrics import MetricsLog, evaluate, mmd, per_sample_gradient_norms
from .models import build_model, embed, sgd_step
from .persist import config_hash, save_checkpoint

CHECKPOINT_EVERY = 50


def _draw(rng):
    return int(rng.integers(2**31))


def _random_class_batch(ds, class_id, size, rng):
    pool = ds.class_index[class_id]
    size = min(size, len(pool))
    picks = rng.choice(len(pool), size=size, replace=False)
    return [pool[i] for i in picks]


def _recluster(ds, model, classes, k, rng):
    return {
        c: cluster_mod.cluster_class(ds, c, model, k, _draw(rng))
        for c in classes
    }


def _log_diagnostics(metrics, outer, step, model, ds, c, batch_idx, batch_images, batch_labels):
    _, class_feats = cluster_mod.class_embeddings(ds, c, model)
    with torch.no_grad():
        batch_feats = embed(model, batch_images).numpy()
    metrics.log(outer, step, c, "batch_mmd", mmd(batch_feats, class_feats))
    norms = per_sample_gradient_norms(model, batch_images, batch_labels)
    metrics.log(outer, step, c, "grad_norm_var", float(norms.var()))


def distill(ds, cfg, init="cluster", sampling="representative", checkpoint_dir=None,
            snapshot_interval=0, log_diagnostics=False):
    """Run the full matching loop and return (synthetic set, metrics log).

    init: cluster | random synthetic-image initialization.
    sampling: representative | random real mini-batch selection.
    With snapshot_interval > 0, detached image snapshots (one per interval,
    plus the final state) are attached to the returned log as ``snapshots``.

    Fully deterministic given cfg.seed; with init=random and sampling=random
    the clustering machinery is never touched.
    """
    cfg.validate()
    if init not in ("cluster", "random"):
        raise ConfigurationError(f"unknown init {init!r}")
    if sampling not in ("representative", "random"):
        raise ConfigurationError(f"unknown sampling {sampling!r}")
    classes = sorted(ds.class_index)
    for c in classes:
        if cfg.ipc > len(ds.class_index[c]):
            raise ConfigurationError(f"ipc {cfg.ipc} exceeds class {c} population")

    rng = np.random.default_rng(cfg.seed)
    if init == "cluster":
        init_model = build_model(cfg.model, _draw(rng))
        syn = cluster_mod.init_synthetic(ds, init_model, cfg.ipc, _draw(rng))
    else:
        syn = random_synthetic(ds, cfg.ipc, _draw(rng))

    metrics = MetricsLog(config_hash=config_hash(cfg), seed=cfg.seed)
    snapshots = []
    assignments = {}
    inner_counter = 0
    for outer in range(cfg.outer_iters):
        model = build_model(cfg.model, _draw(rng))
        if (sampling == "representative" and cfg.interval_unit == "outer"
                and outer % cfg.cluster_interval == 0):
            assignments = _recluster(ds, model, classes, cfg.num_subclusters, rng)
        if snapshot_interval and outer % snapshot_interval == 0:
            snapshots.append((outer, syn.clone_images()))
        for step in range(cfg.inner_loops):
            if (sampling == "representative" and cfg.interval_unit == "inner"
                    and inner_counter % cfg.cluster_interval == 0):
                assignments = _recluster(ds, model, classes, cfg.num_subclusters, rng)
            for c in classes:
                if sampling == "representative":
                    idx = cluster_mod.representative_batch(
                        assignments[c], ds, model, cfg.per_cluster, _draw(rng))
                else:
                    idx = _random_class_batch(ds, c, cfg.real_batch_size, rng)
                real_images, real_labels = class_batch(ds, c, idx)
                syn_idx = syn.class_indices(c)
                aug_real, aug_syn = augment_pair(
                    real_images, syn.images[syn_idx], cfg.aug_spec, _draw(rng))
                context = f"(outer {outer}, step {step}, class {c})"
                if cfg.objective == "gradient":
                    g_t = [g.detach() for g in class_gradient(model, aug_real, real_labels)]
                    g_s = class_gradient(model, aug_syn, syn.labels[syn_idx], create_graph=True)
                    loss = gradient_match_loss(g_s, g_t, cfg.metric)
                else:
                    loss = distribution_match_loss(model, aug_real, aug_syn)
                if not torch.isfinite(loss):
                    raise NumericalInstabilityError(f"non-finite matching loss {context}")
                image_update_step(syn, c, loss, cfg.lr_images, context=context)
                metrics.log(outer, step, c, "match_loss", float(loss.detach()))
                if log_diagnostics:
                    _log_diagnostics(metrics, outer, step, model, ds, c,
                                     idx, real_images, real_labels)
            if cfg.model_train_source == "real":
                picks = rng.choice(len(ds), size=min(cfg.train_batch, len(ds)), replace=False)
                t = torch.as_tensor(picks, dtype=torch.long)
                train_images, train_labels = ds.images[t], ds.labels[t]
            else:
                train_images, train_labels = syn.images.detach(), syn.labels
            sgd_step(model, train_images, train_labels, cfg.lr_model)
            inner_counter += 1
        if checkpoint_dir and (outer + 1) % CHECKPOINT_EVERY == 0:
            save_checkpoint(checkpoint_dir, syn, metrics, ds.norm_stats, outer, cfg)
    if snapshot_interval:
        snapshots.append((cfg.outer_iters, syn.clone_images()))
        metrics.snapshots = snapshots
    return syn, metrics


@dataclass(frozen=True)
class StrategySpec:
    sampling: str  # random | representative
    init: str  # random | cluster
    seed: int = None

    @property
    def name(self):
        return f"{self.sampling}-{self.init}"


@dataclass
class StrategyResult:
    strategy: StrategySpec
    eval_iters: list
    accuracies: list
    final_accuracy: float
    metrics: MetricsLog


@dataclass
class ComparisonReport:
    results: list
    baseline: str
    iterations_to_baseline: dict = field(default_factory=dict)


def strategy_compare(ds, cfg, strategies, test, eval_every=None, eval_epochs=100,
                     eval_lr=0.01, eval_repeats=1, eval_seed=0):
    """Run distill once per strategy under matched seeds and budgets.

    Synthetic-image snapshots taken every ``eval_every`` outer iterations are
    each evaluated on ``test``, yielding an accuracy-vs-iteration series and,
    relative to the random-random baseline's final accuracy, an
    iterations-to-reach-baseline statistic.
    """
    if not strategies:
        raise UsageError("need at least one strategy")
    for s in strategies:
        if s.seed is not None and s.seed != cfg.seed:
            raise UsageError("strategy seeds must match the shared config seed")
    if eval_every is None:
        eval_every = max(1, cfg.outer_iters // 10)
    results = []
    for s in strategies:
        syn, metrics = distill(ds, cfg, init=s.init, sampling=s.sampling,
                               snapshot_interval=eval_every)
        iters, accs = [], []
        for it, images in metrics.snapshots:
            snap = _as_syn(images, syn)
            mean_acc, _, _ = evaluate(snap, test, cfg.model, epochs=eval_epochs,
                                      lr=eval_lr, repeats=eval_repeats, seed=eval_seed,
                                      aug_spec=cfg.aug_spec)
            iters.append(it)
            accs.append(mean_acc)
        results.append(StrategyResult(s, iters, accs, accs[-1], metrics))

    baseline = next(
        (r for r in results if r.strategy.sampling == "random" and r.strategy.init == "random"),
        results[0],
    )
    report = ComparisonReport(results=results, baseline=baseline.strategy.name)
    for r in results:
        reached = [it for it, a in zip(r.eval_iters, r.accuracies)
                   if a >= baseline.final_accuracy]
        report.iterations_to_baseline[r.strategy.name] = reached[0] if reached else None
    return report


def _as_syn(images, template):
    from .match import SyntheticSet

    return SyntheticSet(images=images.clone().requires_grad_(True),
                        labels=template.labels, ipc=template.ipc)
