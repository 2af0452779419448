"""Bilevel training: fast adaptation on support sets, meta-updates on query losses.

For every task the shared initialization is adapted by a few plain SGD
steps on the support loss ("fast adaptation"); the adapted model is then
judged on the task's query pair, with the transition vector recomputed
from the support pairs under the adapted parameters.  Query-loss
gradients are first-order: they are taken at the adapted parameters and
applied to the shared initialization, summed over the tasks of a
meta-batch.  ``inner_steps=0`` turns the whole thing into plain SGD on
query losses (the ablated mode).

Determinism: each task in a meta-batch gets its own child seed drawn
up-front from the training stream, and gradients are reduced in task
order, so results are bit-identical for any worker count.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .config import HyperParams
from .data import IndexedLog
from .model import (
    Grads,
    Params,
    aggregate,
    apply_grads_,
    init_params,
    loss_and_grad,
    score,
    transition_rep,
)
from .tasks import sample_negative, sample_task

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class TrainState:
    params: Params
    hyper: HyperParams
    rng: np.random.Generator
    step: int = 0
    opt_m: dict = field(default_factory=dict)  # adam first moments
    opt_v: dict = field(default_factory=dict)  # adam second moments


@dataclass
class StepStats:
    support_loss: float | None  # None when fast adaptation is disabled
    query_loss: float


def init_state(hp: HyperParams, n_items: int) -> TrainState:
    hp.validate()
    rng = np.random.default_rng(hp.seed)
    return TrainState(init_params(n_items, hp.dim, rng), hp, rng)


def _triples_for(pairs, log, user, rng, negatives_per_pair):
    out = []
    for p in pairs:
        for _ in range(negatives_per_pair):
            out.append((p.head, p.tail, sample_negative(log, user, rng)))
    return out


def _adapt_with_losses(params: Params, triples, hp: HyperParams):
    theta = params.copy()
    losses = []
    for _ in range(hp.inner_steps):
        loss, grads = loss_and_grad(theta, triples, hp.margin)
        losses.append(loss)
        apply_grads_(theta, grads, hp.task_lr)
    return theta, losses


def inner_adapt(params: Params, support, hp: HyperParams) -> Params:
    """``inner_steps`` plain gradient steps on the support loss.

    ``support`` is a list of (head, tail, negative) triples.  The input
    parameters are never aliased or mutated; with ``inner_steps=0`` the
    returned copy is bit-identical to the input.
    """
    if len(support) == 0:
        raise ValueError("inner_adapt needs a non-empty support set")
    theta, _ = _adapt_with_losses(params, support, hp)
    return theta


def _task_contribution(params, task, log, hp, seed):
    """Support loss, query loss and first-order meta-gradient of one task."""
    rng = np.random.default_rng(seed)
    support_pairs = [(p.head, p.tail) for p in task.support]
    support_loss = None
    theta = params
    if hp.inner_steps > 0:
        triples = _triples_for(task.support, log, task.user, rng,
                               hp.negatives_per_pair)
        theta, losses = _adapt_with_losses(params, triples, hp)
        support_loss = losses[0]
    query_triples = _triples_for([task.query], log, task.user, rng,
                                 hp.negatives_per_pair)
    query_loss, grads = loss_and_grad(theta, query_triples, hp.margin,
                                      rep_pairs=support_pairs)
    return support_loss, query_loss, grads


def _merge_grads(acc: Grads, grads: Grads):
    for item, g in grads.d_embeddings.items():
        cur = acc.d_embeddings.get(item)
        if cur is None:
            acc.d_embeddings[item] = g.copy()
        else:
            cur += g
    acc.d_transform += grads.d_transform
    acc.d_bias += grads.d_bias


def _adam_update(state: TrainState, total: Grads):
    hp = state.hyper
    params = state.params
    if not state.opt_m:
        for name, arr in (("embeddings", params.embeddings),
                          ("transform", params.transform),
                          ("bias", params.bias)):
            state.opt_m[name] = np.zeros_like(arr)
            state.opt_v[name] = np.zeros_like(arr)
    dense_emb = np.zeros_like(params.embeddings)
    for item, g in total.d_embeddings.items():
        dense_emb[item] = g
    t = state.step + 1
    corr1 = 1.0 - _ADAM_B1 ** t
    corr2 = 1.0 - _ADAM_B2 ** t
    for name, arr, g in (("embeddings", params.embeddings, dense_emb),
                         ("transform", params.transform, total.d_transform),
                         ("bias", params.bias, total.d_bias)):
        m = state.opt_m[name]
        v = state.opt_v[name]
        m *= _ADAM_B1
        m += (1.0 - _ADAM_B1) * g
        v *= _ADAM_B2
        v += (1.0 - _ADAM_B2) * g * g
        arr -= hp.meta_lr * (m / corr1) / (np.sqrt(v / corr2) + _ADAM_EPS)


def meta_batch_step(state: TrainState, tasks, log: IndexedLog,
                    workers: int = 1):
    """One meta-update over a batch of tasks; returns (state, StepStats).

    Negatives are drawn per pair inside, fresh for every evaluation.  The
    summed query gradient is applied to the shared parameters with the
    configured outer optimizer.
    """
    if len(tasks) == 0:
        raise ValueError("meta_batch_step needs at least one task")
    hp = state.hyper
    if hp.second_order:
        raise NotImplementedError(
            "second_order is reserved; only first-order meta-gradients "
            "are implemented")
    seeds = [int(s) for s in state.rng.integers(2 ** 63, size=len(tasks))]

    def work(i):
        return _task_contribution(state.params, tasks[i], log, hp, seeds[i])

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(work, range(len(tasks))))
    else:
        results = [work(i) for i in range(len(tasks))]

    total = Grads({}, np.zeros_like(state.params.transform),
                  np.zeros_like(state.params.bias))
    sup_losses = []
    q_losses = []
    for sup, q, grads in results:  # ordered deterministic reduction
        if sup is not None:
            sup_losses.append(sup)
        q_losses.append(q)
        _merge_grads(total, grads)

    if hp.outer_opt == "adam":
        _adam_update(state, total)
    else:
        apply_grads_(state.params, total, hp.meta_lr)
    state.step += 1
    stats = StepStats(
        support_loss=float(np.mean(sup_losses)) if sup_losses else None,
        query_loss=float(np.mean(q_losses)))
    return state, stats


def adapt_for_user(params: Params, support, hp: HyperParams,
                   log: IndexedLog, rng: np.random.Generator):
    """Fast-adapt a copy of the shared parameters to one user's support set.

    Returns ``(adapted params, transition vector)`` where the transition
    vector is aggregated from the support pairs under the adapted
    parameters.  The input parameters are never mutated; with
    ``inner_steps=0`` the adapted copy equals the input.
    """
    if len(support) == 0:
        raise ValueError("adapt_for_user needs a non-empty support set")
    if hp.inner_steps > 0:
        triples = _triples_for(support, log, support[0].user, rng,
                               hp.negatives_per_pair)
        theta = inner_adapt(params, triples, hp)
    else:
        theta = params.copy()
    reps = [transition_rep(theta, p.head, p.tail) for p in support]
    return theta, aggregate(reps)


def predict_scores(params: Params, tr: np.ndarray, query_head,
                   candidates) -> np.ndarray:
    """Preference score per candidate: negated squared translation residual."""
    if len(candidates) == 0:
        raise ValueError("predict_scores needs at least one candidate")
    return np.array([-score(params, tr, query_head, c) for c in candidates])


def train_loop(state: TrainState, log: IndexedLog, epochs: int,
               tasks_per_epoch: int, workers: int = 1, on_step=None):
    """epochs x (sample tasks -> meta step); tasks_per_epoch is rounded up
    to whole meta-batches.  ``on_step(step, epoch, stats, elapsed)`` fires
    after every meta-update."""
    hp = state.hyper
    steps_per_epoch = max(1, ceil(tasks_per_epoch / hp.meta_batch))
    start = time.perf_counter()
    for epoch in range(epochs):
        for _ in range(steps_per_epoch):
            tasks = [sample_task(log, hp, state.rng)
                     for _ in range(hp.meta_batch)]
            _, stats = meta_batch_step(state, tasks, log, workers=workers)
            if on_step is not None:
                on_step(state.step, epoch, stats,
                        time.perf_counter() - start)
    return state
