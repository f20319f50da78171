"""Episodic task construction and the meta-training loop.

The meta step runs the inner updates for the whole task batch IN SEQUENCE on
one shared, evolving parameter store (no per-task copies), then takes a
single first-order optimizer step on the summed query losses evaluated at
the resulting parameters. A classic per-task-copy variant is available
behind MetaConfig.per_task_copies purely as a comparison arm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, NumericError
from .model import mean_loss_components
from .optim import AdamState, adam_step, clip_global_norm, sgd_step
from .tensor import Tape, add, backward


@dataclass
class Task:
    """Support/query split of samples sharing one knowledge graph."""

    support: list
    query: list
    task_id: object = None

    def __post_init__(self):
        if not self.support or not self.query:
            raise ContractError("task needs non-empty support and query sets")
        if len({id(s) for s in self.support} & {id(s) for s in self.query}):
            raise ContractError("support and query sets must be disjoint")
        graphs = {id(getattr(s, "graph", None)) for s in self.support + self.query}
        graphs.discard(id(None))
        if len(graphs) > 1:
            raise ContractError("all samples in a task must share one knowledge graph")


@dataclass
class MetaConfig:
    """Learning-rate / step-count / shot-count hyperparameters."""

    alpha: float = 1e-4            # inner (task-level) learning rate
    beta: float = 1e-4             # meta learning rate
    num_tasks: int = 5             # tasks per episode
    k_support: int = 8
    k_query: int = 14
    inner_steps: int = 4
    test_update_steps: int = 10
    inner_optimizer: str = "adam"
    meta_optimizer: str = "adam"
    max_episodes: int = 100
    early_stop_patience: int = 10
    clip_norm: float = 5.0
    per_task_copies: bool = False  # classic first-order variant, comparison only

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ContractError("learning rates must be positive")
        for name in ("num_tasks", "k_support", "k_query"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        for name in ("inner_steps", "test_update_steps", "max_episodes",
                     "early_stop_patience"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        for name in ("inner_optimizer", "meta_optimizer"):
            if getattr(self, name) not in ("sgd", "adam"):
                raise ContractError(f"{name} must be 'sgd' or 'adam'")


class TaskSampler:
    """Seeded sampling without replacement within an episode."""

    def __init__(self, pool, seed=0):
        self.pool = list(pool)
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self.pool)

    def sample(self, n):
        if n > len(self.pool):
            raise DataError(f"cannot sample {n} tasks from a pool of {len(self.pool)}")
        idx = self._rng.choice(len(self.pool), size=n, replace=False)
        return [self.pool[i] for i in idx]


def split_support_query(samples, k_support, k_query, seed, task_id=None):
    """Seeded shuffle, then the first k_support / next k_query samples."""
    need = k_support + k_query
    if len(samples) < need:
        raise DataError(
            f"need {need} samples to split {k_support}+{k_query}, got "
            f"{len(samples)} (short by {need - len(samples)})"
        )
    order = np.random.default_rng(seed).permutation(len(samples))
    support = [samples[i] for i in order[:k_support]]
    query = [samples[i] for i in order[k_support:need]]
    return Task(support=support, query=query, task_id=task_id)


# ---------------------------------------------------------------------------
# optimization plumbing


def _make_state(kind, store):
    return AdamState(store) if kind == "adam" else None


def _opt_step(kind, store, grads, state, lr, clip_norm):
    grads = clip_global_norm(grads, clip_norm)
    if kind == "adam":
        adam_step(store, grads, state, lr)
    else:
        sgd_step(store, grads, lr)
    return state


def _batch_grads(model, samples):
    tape = Tape()
    tape.watch(model.store)
    with tape:
        loss, stats = model.batch_objective(samples)
    return backward(tape, loss), stats


def batch_loss_value(model, samples):
    """Mean total loss over samples with no recording; (value, stat rows)."""
    loss, stats = model.batch_objective(samples)
    return loss.item(), stats


# ---------------------------------------------------------------------------
# training loops


def inner_update(model, task, cfg, opt_state=None):
    """cfg.inner_steps optimizer steps on the mean support loss.

    Returns (model, optimizer state, stat rows from the last step's forward).
    """
    if opt_state is None:
        opt_state = _make_state(cfg.inner_optimizer, model.store)
    last_stats = None
    for _ in range(cfg.inner_steps):
        grads, last_stats = _batch_grads(model, task.support)
        _opt_step(cfg.inner_optimizer, model.store, grads, opt_state,
                  cfg.alpha, cfg.clip_norm)
    return model, opt_state, last_stats


@dataclass
class EpisodeStats:
    tasks: list = field(default_factory=list)
    n_samples: int = 0
    meta_loss: float = 0.0


def _query_grads(model, batch):
    """Summed-over-tasks query objective at the current parameters."""
    tape = Tape()
    tape.watch(model.store)
    per_task = []
    with tape:
        total = None
        for task in batch:
            loss, stats = model.batch_objective(task.query)
            per_task.append(mean_loss_components(stats))
            total = loss if total is None else add(total, loss)
    return backward(tape, total), per_task, total.item()


def meta_batch_step(model, batch, cfg, meta_state=None):
    """One episode: sequential inner updates, then one meta step.

    The task batch shares a single evolving parameter trajectory; after the
    last task the summed query losses are differentiated at the resulting
    parameters (first-order) and one optimizer step with rate beta is taken.
    """
    if not batch:
        raise ContractError("meta_batch_step on empty task batch")
    if meta_state is None:
        meta_state = _make_state(cfg.meta_optimizer, model.store)

    touched = set()
    for task in batch:
        touched.update(id(s) for s in task.support)
        touched.update(id(s) for s in task.query)

    support_rows = {}
    if cfg.per_task_copies:
        base = model.store.snapshot()
        accum = None
        per_task = []
        for task in batch:
            model.store.restore(base)
            _, _, stats = inner_update(model, task, cfg)
            if stats is not None:
                support_rows[id(task)] = mean_loss_components(stats)
            grads, q_stats = _batch_grads(model, task.query)
            per_task.append(mean_loss_components(q_stats))
            if accum is None:
                accum = {name: g.values.copy() for name, g in grads.items()}
            else:
                for name, g in grads.items():
                    accum[name] += g.values
        model.store.restore(base)
        meta_loss = sum(row["total"] for row in per_task)
        _opt_step(cfg.meta_optimizer, model.store, accum, meta_state,
                  cfg.beta, cfg.clip_norm)
    else:
        inner_state = _make_state(cfg.inner_optimizer, model.store)
        for task in batch:
            _, inner_state, stats = inner_update(model, task, cfg, inner_state)
            if stats is not None:
                support_rows[id(task)] = mean_loss_components(stats)
        grads, per_task, meta_loss = _query_grads(model, batch)
        _opt_step(cfg.meta_optimizer, model.store, grads, meta_state,
                  cfg.beta, cfg.clip_norm)

    stats = EpisodeStats(n_samples=len(touched), meta_loss=meta_loss)
    for task, q_row in zip(batch, per_task):
        stats.tasks.append({
            "task_id": task.task_id,
            "support": support_rows.get(id(task)),
            "query": q_row,
        })
    return model, meta_state, stats


class TrainingLog:
    """Append-only comma-separated rows, one per task per episode."""

    HEADER = "episode,split,task_id,kl,nll,bow,total,sel_acc"

    def __init__(self):
        self.rows = []

    def add(self, episode, split, task_id, row):
        self.rows.append(",".join([
            str(episode), split, str(task_id),
            repr(row["kl"]), repr(row["nll"]), repr(row["bow"]),
            repr(row["total"]), repr(row["sel_acc"]),
        ]))

    def text(self):
        return "\n".join([self.HEADER] + self.rows) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())


def validation_loss(model, tasks):
    """Mean query total loss over tasks at the current parameters; per-task rows."""
    rows = []
    for task in tasks:
        _, stats = batch_loss_value(model, task.query)
        rows.append((task.task_id, mean_loss_components(stats)))
    return sum(r["total"] for _, r in rows) / len(rows), rows


@dataclass
class TrainResult:
    log: TrainingLog
    episodes: int = 0
    best_val: float = float("nan")
    diverged: bool = False
    meta_state: object = None  # final-episode optimizer state, for resuming


def meta_train(model, sampler, cfg, val_tasks=None):
    """Episodic loop with early stopping on validation query loss.

    The model ends holding the best-validation parameters (or the final ones
    when no validation tasks are given). Numeric divergence stops training
    and restores the best parameters instead of raising.
    """
    if len(sampler) < cfg.num_tasks:
        raise DataError(
            f"sampler pool has {len(sampler)} tasks, need >= {cfg.num_tasks}"
        )
    log = TrainingLog()
    result = TrainResult(log=log)
    best_snap = model.store.snapshot()
    best_val = float("inf")
    stale = 0
    meta_state = _make_state(cfg.meta_optimizer, model.store)

    for episode in range(1, cfg.max_episodes + 1):
        batch = sampler.sample(cfg.num_tasks)
        try:
            _, meta_state, stats = meta_batch_step(model, batch, cfg, meta_state)
        except NumericError:
            result.diverged = True
            break
        result.episodes = episode
        for task_row in stats.tasks:
            if task_row["support"] is not None:
                log.add(episode, "support", task_row["task_id"], task_row["support"])
            log.add(episode, "query", task_row["task_id"], task_row["query"])

        if val_tasks:
            val, rows = validation_loss(model, val_tasks)
            for task_id, row in rows:
                log.add(episode, "val", task_id, row)
            if val < best_val:
                best_val = val
                best_snap = model.store.snapshot()
                stale = 0
            else:
                stale += 1
                if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
                    break
        else:
            best_snap = model.store.snapshot()

    model.store.restore(best_snap)
    result.best_val = best_val if best_val != float("inf") else float("nan")
    result.meta_state = meta_state
    return model, result


def adapt(model, task, cfg, seen_task_ids=None):
    """Fine-tune a private copy on an unseen task's support set.

    Returns (adapted model, query loss before, query loss after). The given
    model is left untouched.
    """
    if seen_task_ids is not None and task.task_id in set(seen_task_ids):
        raise ContractError(f"task {task.task_id!r} was seen during meta-training")
    adapted = model.clone()
    pre, _ = batch_loss_value(adapted, task.query)
    state = _make_state(cfg.inner_optimizer, adapted.store)
    for _ in range(cfg.test_update_steps):
        grads, _ = _batch_grads(adapted, task.support)
        _opt_step(cfg.inner_optimizer, adapted.store, grads, state,
                  cfg.alpha, cfg.clip_norm)
    post, _ = batch_loss_value(adapted, task.query)
    return adapted, pre, post


def supervised_train(model, samples, cfg, epochs=None, batch_size=0,
                     shuffle=True, seed=0, log=None):
    """Plain mini-batch optimization of the total loss; the non-meta baseline.

    batch_size 0 means one batch per epoch. Returns (model, per-step mean
    losses).
    """
    if not samples:
        raise ContractError("supervised_train on empty sample list")
    epochs = cfg.max_episodes if epochs is None else epochs
    if batch_size <= 0:
        batch_size = len(samples)
    state = _make_state(cfg.meta_optimizer, model.store)
    rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            grads, stats = _batch_grads(model, batch)
            row = mean_loss_components(stats)
            losses.append(row["total"])
            if log is not None:
                log.add(epoch, "train", start // batch_size, row)
            _opt_step(cfg.meta_optimizer, model.store, grads, state,
                      cfg.beta, cfg.clip_norm)
    return model, losses
