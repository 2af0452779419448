import hashlib

import numpy as np
import pytest

from metatl.config import HyperParams
from metatl.data import IndexedLog, UserHistory
from metatl.meta import (
    TrainState,
    adapt_for_user,
    inner_adapt,
    init_state,
    meta_batch_step,
    predict_scores,
    train_loop,
)
from metatl.model import Grads, loss_and_grad, score, sgd_update, transition_rep, aggregate
from metatl.tasks import Task, TransitionPair, sample_negative, sample_task

import oracles


def digest(params):
    h = hashlib.sha256()
    for arr in (params.embeddings, params.transform, params.bias):
        h.update(arr.tobytes())
    return h.hexdigest()


def toy_log(n_users=12, n_items=15, length=8, seed=0):
    rng = np.random.default_rng(seed)
    users = {}
    for u in range(n_users):
        items = rng.integers(n_items, size=length).astype(np.int64)
        users[u] = UserHistory(items, np.arange(length, dtype=np.int64))
    return IndexedLog(users, n_items)


def cycle_log(n_users=30, n_items=12, length=8):
    users = {}
    for u in range(n_users):
        start = u % n_items
        items = np.array([(start + j) % n_items for j in range(length)],
                         dtype=np.int64)
        users[u] = UserHistory(items, np.arange(length, dtype=np.int64))
    return IndexedLog(users, n_items)


# --- inner_adapt ----------------------------------------------------------

def test_inner_adapt_flat_loss_is_identity():
    hp = HyperParams(dim=2, inner_steps=3, task_lr=0.5)
    state = init_state(hp, 4)
    p = state.params
    # place the negative far away so every hinge is inactive
    p.embeddings[:] = 0.0
    p.embeddings[2] = 50.0
    out = inner_adapt(p, [(0, 1, 2)], hp)
    assert np.array_equal(out.embeddings, p.embeddings)
    assert np.array_equal(out.transform, p.transform)
    assert out is not p and out.embeddings is not p.embeddings


def test_inner_adapt_zero_lr_is_identity():
    hp = HyperParams(dim=3, inner_steps=2)
    hp.task_lr = 0.0  # bypasses validate(): op-level contract check
    state = init_state(HyperParams(dim=3, seed=5), 6)
    out = inner_adapt(state.params, [(0, 1, 2), (1, 2, 3)], hp)
    assert np.array_equal(out.embeddings, state.params.embeddings)


def test_inner_adapt_zero_steps_returns_copy():
    hp = HyperParams(dim=3, inner_steps=0)
    state = init_state(hp, 5)
    out = inner_adapt(state.params, [(0, 1, 2)], hp)
    assert np.array_equal(out.embeddings, state.params.embeddings)
    assert out.embeddings is not state.params.embeddings


def test_inner_adapt_single_step_is_one_sgd_step():
    hp = HyperParams(dim=4, inner_steps=1, task_lr=0.07, seed=3)
    state = init_state(hp, 8)
    triples = [(0, 1, 2), (3, 4, 5)]
    _, g = loss_and_grad(state.params, triples, hp.margin)
    want = sgd_update(state.params, g, hp.task_lr)
    got = inner_adapt(state.params, triples, hp)
    assert np.array_equal(got.embeddings, want.embeddings)
    assert np.array_equal(got.transform, want.transform)
    assert np.array_equal(got.bias, want.bias)


def test_inner_adapt_does_not_touch_input():
    hp = HyperParams(dim=4, inner_steps=3, task_lr=0.5, seed=1)
    state = init_state(hp, 8)
    before = digest(state.params)
    inner_adapt(state.params, [(0, 1, 2)], hp)
    assert digest(state.params) == before


def test_inner_adapt_empty_support():
    hp = HyperParams(dim=2)
    state = init_state(hp, 4)
    with pytest.raises(ValueError):
        inner_adapt(state.params, [], hp)


# --- meta_batch_step ------------------------------------------------------

def one_task(user=0, log=None):
    hp = HyperParams(k=3)
    return sample_task(log, hp, np.random.default_rng(17))


def test_meta_step_zero_meta_lr_keeps_params():
    log = toy_log()
    hp = HyperParams(dim=4, k=3, seed=2, inner_steps=1)
    state = init_state(hp, log.n_items)
    hp.meta_lr = 0.0
    before = digest(state.params)
    task = one_task(log=log)
    meta_batch_step(state, [task], log)
    assert digest(state.params) == before
    assert state.step == 1


def test_meta_step_ablated_equals_plain_sgd_on_query():
    log = toy_log(seed=4)
    hp = HyperParams(dim=4, k=3, seed=9, inner_steps=0, meta_lr=0.05)
    state = init_state(hp, log.n_items)
    task = one_task(log=log)

    # mirror the internal draws: one child seed, then the query negative
    rng = np.random.default_rng(hp.seed)
    from metatl.model import init_params
    params0 = init_params(log.n_items, hp.dim, rng)
    child = int(rng.integers(2 ** 63, size=1)[0])
    task_rng = np.random.default_rng(child)
    neg = sample_negative(log, task.user, task_rng)
    _, g = loss_and_grad(params0,
                         [(task.query.head, task.query.tail, neg)],
                         hp.margin,
                         rep_pairs=[(p.head, p.tail) for p in task.support])
    want = sgd_update(params0, g, hp.meta_lr)

    meta_batch_step(state, [task], log)
    assert np.array_equal(state.params.embeddings, want.embeddings)
    assert np.array_equal(state.params.transform, want.transform)
    assert np.array_equal(state.params.bias, want.bias)


def test_meta_step_rejects_empty_and_second_order():
    log = toy_log()
    hp = HyperParams(dim=2, k=3)
    state = init_state(hp, log.n_items)
    with pytest.raises(ValueError):
        meta_batch_step(state, [], log)
    hp.second_order = True
    with pytest.raises(NotImplementedError):
        meta_batch_step(state, [one_task(log=log)], log)


def test_meta_step_worker_count_is_bit_invariant():
    log = toy_log(seed=6)
    results = []
    for workers in (1, 4):
        hp = HyperParams(dim=4, k=3, seed=21, inner_steps=1, meta_batch=6)
        state = init_state(hp, log.n_items)
        tasks = [sample_task(log, hp, state.rng) for _ in range(6)]
        meta_batch_step(state, tasks, log, workers=workers)
        results.append(digest(state.params))
    assert results[0] == results[1]


def test_training_is_reproducible():
    log = cycle_log()
    digests = []
    for _ in range(2):
        hp = HyperParams(dim=8, k=3, seed=33, meta_batch=4)
        state = init_state(hp, log.n_items)
        train_loop(state, log, epochs=2, tasks_per_epoch=8)
        digests.append(digest(state.params))
    assert digests[0] == digests[1]


def test_query_loss_trends_down_on_cycle_data():
    log = cycle_log()
    hp = HyperParams(dim=8, k=3, seed=0, meta_batch=4, task_lr=0.05,
                     meta_lr=0.01)
    state = init_state(hp, log.n_items)
    losses = []
    train_loop(state, log, epochs=200, tasks_per_epoch=4,
               on_step=lambda step, epoch, stats, t: losses.append(
                   stats.query_loss))
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_outer_update_descends_on_fixed_episodes():
    # with fixed episodes and fixed negatives, an infinitesimal outer step
    # in the summed first-order direction lowers the summed query loss
    log = cycle_log()
    hp = HyperParams(dim=6, k=3, seed=12, inner_steps=1, task_lr=0.01)
    state = init_state(hp, log.n_items)
    rng = np.random.default_rng(100)
    episodes = []
    for _ in range(4):
        task = sample_task(log, hp, rng)
        sup = [(p.head, p.tail, sample_negative(log, task.user, rng))
               for p in task.support]
        qry = [(task.query.head, task.query.tail,
                sample_negative(log, task.user, rng))]
        episodes.append((task, sup, qry))

    def total_query_loss(params):
        total = 0.0
        for task, sup, qry in episodes:
            theta = inner_adapt(params, sup, hp)
            loss, _ = loss_and_grad(
                theta, qry, hp.margin,
                rep_pairs=[(p.head, p.tail) for p in task.support])
            total += loss
        return total

    merged = Grads({}, np.zeros_like(state.params.transform),
                   np.zeros_like(state.params.bias))
    for task, sup, qry in episodes:
        theta = inner_adapt(state.params, sup, hp)
        _, g = loss_and_grad(
            theta, qry, hp.margin,
            rep_pairs=[(p.head, p.tail) for p in task.support])
        from metatl.meta import _merge_grads
        _merge_grads(merged, g)

    before = total_query_loss(state.params)
    probe = sgd_update(state.params, merged, lr=1e-6)
    after = total_query_loss(probe)
    assert after < before


def test_adam_outer_runs_and_is_deterministic():
    log = toy_log(seed=8)
    digests = []
    for _ in range(2):
        hp = HyperParams(dim=4, k=3, seed=44, outer_opt="adam",
                         meta_lr=0.01, meta_batch=3)
        state = init_state(hp, log.n_items)
        train_loop(state, log, epochs=3, tasks_per_epoch=3)
        digests.append(digest(state.params))
    assert digests[0] == digests[1]


# --- adapt_for_user -------------------------------------------------------

def test_adapt_for_user_ablated_mode_identity():
    log = toy_log()
    hp = HyperParams(dim=4, k=3, seed=7, inner_steps=0)
    state = init_state(hp, log.n_items)
    support = [TransitionPair(0, 1, 2), TransitionPair(0, 2, 3)]
    theta, tr = adapt_for_user(state.params, support, hp, log,
                               np.random.default_rng(0))
    assert np.array_equal(theta.embeddings, state.params.embeddings)
    reps = [transition_rep(state.params, 1, 2),
            transition_rep(state.params, 2, 3)]
    assert np.array_equal(tr, aggregate(reps))


def test_adapt_for_user_leaves_global_params_alone():
    log = toy_log()
    hp = HyperParams(dim=4, k=3, seed=7, inner_steps=2, task_lr=0.3)
    state = init_state(hp, log.n_items)
    before = digest(state.params)
    support = [TransitionPair(0, 1, 2)]
    adapt_for_user(state.params, support, hp, log, np.random.default_rng(0))
    assert digest(state.params) == before


@pytest.mark.parametrize("seed", [0, 3, 5])
def test_adaptation_improves_true_next_item_score(seed):
    # user generated by a permutation with the 3-cycle 0->1->2->0: the
    # history 0,1,2,0,1 puts the query transition (0->1) inside the
    # support set, so fast adaptation descends on the true next item's
    # own score
    users = {0: UserHistory(np.array([0, 1, 2, 0, 1]), np.arange(5))}
    for u in range(1, 8):
        st = 3 + (u % 7)
        items = [(st + j - 3) % 7 + 3 for j in range(6)]
        users[u] = UserHistory(np.array(items, dtype=np.int64), np.arange(6))
    log = IndexedLog(users, 10)

    hp = HyperParams(dim=8, k=4, seed=seed, task_lr=0.05,
                     negatives_per_pair=4, inner_steps=2)
    state = init_state(hp, log.n_items)
    support = [TransitionPair(0, 0, 1), TransitionPair(0, 1, 2),
               TransitionPair(0, 2, 0)]
    head, truth = 0, 1
    reps = [transition_rep(state.params, p.head, p.tail) for p in support]
    pref_before = -score(state.params, aggregate(reps), head, truth)
    theta, tr = adapt_for_user(state.params, support, hp, log,
                               np.random.default_rng(seed + 100))
    pref_after = -score(theta, tr, head, truth)
    assert pref_after > pref_before


def test_adapt_for_user_empty_support():
    log = toy_log()
    hp = HyperParams(dim=2, k=2)
    state = init_state(hp, log.n_items)
    with pytest.raises(ValueError):
        adapt_for_user(state.params, [], hp, log, np.random.default_rng(0))


# --- predict_scores -------------------------------------------------------

def test_predict_scores_exact_translation_max():
    hp = HyperParams(dim=2, seed=0)
    state = init_state(hp, 4)
    p = state.params
    tr = np.array([0.25, 0.5])
    p.embeddings[1] = p.embeddings[0] + tr
    scores = predict_scores(p, tr, 0, [1, 2, 3])
    assert scores[0] == 0.0
    assert np.argmax(scores) == 0
    assert np.all(scores <= 0.0)


def test_predict_scores_match_scalar_oracle_ordering():
    rng = np.random.default_rng(9)
    hp = HyperParams(dim=3, seed=1)
    state = init_state(hp, 10)
    tr = rng.uniform(0.1, 0.9, size=3)
    cands = [int(c) for c in rng.integers(10, size=7)]
    got = predict_scores(state.params, tr, 2, cands)
    dists = [oracles.squared_distance_score(state.params.embeddings.tolist(),
                                            tr.tolist(), 2, c) for c in cands]
    assert np.argsort(got).tolist() == np.argsort([-d for d in dists]).tolist()
    assert np.allclose(got, [-d for d in dists], atol=1e-9)


def test_predict_scores_duplicates_and_empty():
    hp = HyperParams(dim=2, seed=0)
    state = init_state(hp, 4)
    tr = np.array([0.5, 0.5])
    scores = predict_scores(state.params, tr, 0, [2, 2, 3])
    assert scores[0] == scores[1]
    with pytest.raises(ValueError):
        predict_scores(state.params, tr, 0, [])
