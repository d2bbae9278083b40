"""Episodic pre-training, PLF-only fine-tuning and direct baselines."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .data import Task
from .embedding import EmptyClass
from .model import DenModel, bce_loss, check_support, episode, fresh_bank, softmax_ce_loss
from .nn import AdamState, adam_step, dense_backward, dense_forward, init_params
from .plf import PLFBank

log = logging.getLogger(__name__)

MAX_BATCH_RETRIES = 10


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 256
    learning_rate: float = 0.001
    finetune_epochs: int = 10
    seed: int = 0
    finetune_learning_rate: float = 0.001
    subtask_sampling: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.finetune_epochs < 0:
            raise ValueError("steps, batch_size and finetune_epochs must be nonnegative (batch_size positive)")
        if self.learning_rate <= 0 or self.finetune_learning_rate <= 0:
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeBatch:
    support_X: np.ndarray
    support_y: np.ndarray
    query_X: np.ndarray
    query_y: np.ndarray
    task_id: str
    columns: np.ndarray


class LossRecord(NamedTuple):
    step: int
    task_id: str
    loss: float


@dataclass
class TrainState:
    shared: AdamState
    banks: dict[str, AdamState] = field(default_factory=dict)
    step: int = 0


def _support_ok(y: np.ndarray, L: int, mode: str) -> bool:
    counts = np.bincount(y, minlength=L)
    return bool(np.all(counts[: 2 if mode == "binary" else L] > 0))


def sample_episode(task: Task, batch_size: int, mode: str, rng: np.random.Generator,
                   subtask_sampling: bool = False) -> EpisodeBatch:
    """Draw disjoint support (B) and query (A) batches from one task.

    Tasks with fewer than ``2*batch_size`` rows are split in half.  A
    support batch missing a required class is redrawn up to 10 times.
    """
    n = task.n
    if n < 2:
        raise ValueError(f"task {task.task_id!r} has {n} rows; two nonempty batches need 2")
    if subtask_sampling:
        C = int(rng.integers(1, task.d + 1))
        cols = np.sort(rng.choice(task.d, size=C, replace=False))
    else:
        cols = np.arange(task.d)
    for _ in range(MAX_BATCH_RETRIES):
        if n >= 2 * batch_size:
            idx = rng.choice(n, size=2 * batch_size, replace=False)
            B, A = idx[:batch_size], idx[batch_size:]
        else:
            perm = rng.permutation(n)
            B, A = perm[: n // 2], perm[n // 2 :]
        if _support_ok(task.y[B], task.L, mode):
            X = task.X[:, cols]
            return EpisodeBatch(X[B], task.y[B], X[A], task.y[A], task.task_id, cols)
    raise ValueError(
        f"task {task.task_id!r}: support batch lacked a class in {MAX_BATCH_RETRIES} draws"
    )


def _train_bank(model: DenModel, task: Task) -> PLFBank:
    bank = model.train_banks.get(task.task_id)
    if bank is None:
        bank = fresh_bank(model, task.X)
        model.train_banks[task.task_id] = bank
    return bank


def _init_state(model: DenModel, config: TrainConfig) -> TrainState:
    return TrainState(AdamState.fresh(model.shared_params(), learning_rate=config.learning_rate))


def pretrain_step(model: DenModel, tasks: list[Task], config: TrainConfig,
                  rng: np.random.Generator) -> float:
    """One episodic gradient step on a uniformly drawn task; returns the query loss.

    Updates every block, including the drawn task's PLF bank.  Optimizer
    state lives on ``model.train_state``.
    """
    return _step(model, tasks, config, rng)[0]


def _step(model, tasks, config, rng) -> tuple[float, str]:
    if model.train_state is None:
        model.train_state = _init_state(model, config)
    state: TrainState = model.train_state
    task = tasks[int(rng.integers(len(tasks)))]
    if model.mode == "binary" and task.L != 2:
        raise ValueError(f"binary model cannot train on {task.L}-class task {task.task_id!r}")
    batch = sample_episode(task, config.batch_size, model.mode, rng, config.subtask_sampling)
    use_plf = model.config.use_plf
    full_bank = _train_bank(model, task) if use_plf else None
    bank = full_bank.subset(batch.columns) if use_plf else None
    _, loss, grads = episode(
        model, batch.support_X, batch.support_y, batch.query_X, batch.query_y,
        L=task.L, bank=bank, grad=True,
    )
    shared = model.shared_params()
    new, state.shared = adam_step(shared, {k: grads[k] for k in shared}, state.shared)
    model.assign_shared(new)
    if use_plf:
        params = {f"alpha{c}": full_bank.plfs[c].alpha for c in batch.columns}
        bank_grads = {f"alpha{c}": grads[f"bank.alpha{j}"] for j, c in enumerate(batch.columns)}
        bstate = state.banks.get(task.task_id)
        if bstate is None:
            bstate = AdamState.fresh(
                {f"alpha{c}": p.alpha for c, p in enumerate(full_bank.plfs)},
                learning_rate=config.learning_rate,
            )
        new_alpha, state.banks[task.task_id] = adam_step(params, bank_grads, bstate)
        for c in batch.columns:
            full_bank.plfs[c].alpha[...] = new_alpha[f"alpha{c}"]
        bank.project()
    state.step += 1
    return loss, task.task_id


def pretrain(model: DenModel, tasks: list[Task], config: TrainConfig):
    """Run ``config.steps`` episodic steps.  Returns ``(model, history)``."""
    if config.steps < 1:
        raise ValueError("pretrain needs at least one step")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("training task ids must be unique (each owns a PLF bank)")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    history = []
    for step in range(config.steps):
        loss, task_id = _step(model, tasks, config, rng)
        history.append(LossRecord(step, task_id, loss))
        if step % 500 == 0:
            log.debug("step %d loss %.4f", step, loss)
    return model, history


def _stratified_halves(y: np.ndarray, L: int, rng: np.random.Generator):
    first, second = [], []
    for k in range(L):
        rows = rng.permutation(np.flatnonzero(y == k))
        cut = (rows.size + int(rng.integers(2))) // 2 if rows.size % 2 else rows.size // 2
        first.append(rows[:cut])
        second.append(rows[cut:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def finetune(model: DenModel, support: Task, config: TrainConfig, seed=None) -> DenModel:
    """Refit the PLF bank on ``support`` and train only its output values.

    Each epoch splits the support into two stratified halves; each half in
    turn provides the embedding while the other provides the loss, and the
    two gradients are averaged into one Adam step.  Shared blocks are
    referenced, never modified.
    """
    L = support.L
    counts = np.bincount(support.y, minlength=L)
    needed = 2 if model.mode == "binary" else L
    check_support(support.y, L, model.mode)
    if np.any(counts[:needed] < 2):
        raise ValueError("fine-tuning needs at least 2 support examples per class")
    tuned = DenModel(model.config, model.h, model.head, model.v)
    tuned.bank_task_id = support.task_id
    if not model.config.use_plf:
        return tuned
    bank = fresh_bank(model, support.X)
    tuned.bank = bank
    rng = np.random.default_rng(np.random.SeedSequence([config.seed if seed is None else seed, 2]))
    params = bank.named_params("bank")
    state = AdamState.fresh(params, learning_rate=config.finetune_learning_rate)
    sets = model.index_sets(support.d)
    for _ in range(config.finetune_epochs):
        a, b = _stratified_halves(support.y, L, rng)
        total = {k: np.zeros_like(p) for k, p in params.items()}
        for emb, tgt in ((a, b), (b, a)):
            _, _, grads = episode(
                tuned, support.X[emb], support.y[emb], support.X[tgt], support.y[tgt],
                L=L, bank=bank, sets=sets, grad=True,
            )
            for k in total:
                total[k] += 0.5 * grads[k]
        params, state = adam_step(params, total, state)
        for j, p in enumerate(bank.plfs):
            p.alpha[...] = params[f"bank.alpha{j}"]
        bank.project()
        params = bank.named_params("bank")
    return tuned


def _standardize(support_X, query_X):
    mu = support_X.mean(axis=0)
    sd = support_X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (support_X - mu) / sd, (query_X - mu) / sd


def direct_baseline_mlp(support: Task, query_X, hidden_dims, config: TrainConfig,
                        steps: int = 500, lr: float = 0.1) -> np.ndarray:
    """Dense net trained by full-batch gradient descent on the support set alone.

    Columns are standardized with support statistics.  Binary tasks return
    one logit per query row; multiclass tasks return ``(n, L)`` scores.
    """
    L = support.L
    counts = np.bincount(support.y, minlength=L)
    if np.any(counts == 0):
        raise EmptyClass(f"support has no examples of class {int(np.flatnonzero(counts == 0)[0])}")
    Xs, Xq = _standardize(support.X, np.asarray(query_X, dtype=np.float64))
    out_dim = 1 if L == 2 else L
    net = init_params([support.d, *hidden_dims, out_dim], np.random.default_rng(config.seed))
    for _ in range(steps):
        out, cache = dense_forward(net, Xs)
        if L == 2:
            _, g = bce_loss(out[:, 0], support.y)
            g = g[:, None]
        else:
            _, g = softmax_ce_loss(out, support.y)
        grads, _ = dense_backward(net, cache, g)
        for i in range(len(net.weights)):
            net.weights[i] -= lr * grads.weights[i]
            net.biases[i] -= lr * grads.biases[i]
    out, _ = dense_forward(net, Xq)
    return out[:, 0] if L == 2 else out


def direct_baseline_linear(support: Task, query_X, config: TrainConfig, **kw) -> np.ndarray:
    """Logistic regression on the support set (the zero-hidden-layer MLP)."""
    return direct_baseline_mlp(support, query_X, [], config, **kw)
