"""Ranking evaluation: MRR and Hit@1 against sampled negatives.

Each eligible test user contributes one ranking: their first k
interactions form the support set, the model fast-adapts to it, and the
(k+1)-th item is ranked among ``eval_negatives`` items the user never
interacted with.  Ties are pessimistic: the truth ranks below every
candidate with an equal score.  Negatives are drawn from a per-user
stream derived from the global seed, so results are reproducible
regardless of evaluation order.
"""

from dataclasses import dataclass

import numpy as np

from .config import HyperParams
from .data import IndexedLog
from .meta import adapt_for_user, predict_scores
from .model import Params
from .tasks import ExhaustedNegativesError, build_test_task

_EVAL_STREAM = 0x45564C31  # distinguishes eval draws from training draws


@dataclass
class EvalResult:
    mrr: float
    hit_at_1: float
    users_evaluated: int
    users_skipped: int


def rank_truth(scored, truth) -> int:
    """1 + (#strictly better) + (#tied), requiring the truth exactly once."""
    truth_scores = [s for item, s in scored if item == truth]
    if len(truth_scores) != 1:
        raise ValueError(f"truth item {truth} appears {len(truth_scores)} "
                         f"times in the candidate list")
    ts = truth_scores[0]
    rank = 1
    for item, s in scored:
        if item != truth and s >= ts:
            rank += 1
    return rank


def sample_eval_negatives(log: IndexedLog, user: int, count: int,
                          rng: np.random.Generator) -> list:
    """``count`` distinct items outside the user's history (uniform).

    Falls back to drawing with replacement in the degenerate case where
    fewer than ``count`` items are eligible.
    """
    seen = log.interacted(user)
    eligible = log.n_items - len(seen)
    if eligible <= 0:
        raise ExhaustedNegativesError(
            f"user {user} interacted with all {log.n_items} items")
    if eligible < count:
        pool = np.setdiff1d(np.arange(log.n_items),
                            np.fromiter(seen, dtype=np.int64))
        return [int(x) for x in rng.choice(pool, size=count, replace=True)]
    out = []
    taken = set(seen)
    while len(out) < count:
        cand = int(rng.integers(log.n_items))
        if cand not in taken:
            taken.add(cand)
            out.append(cand)
    return out


def summarize(ranks, skipped: int) -> EvalResult:
    if not ranks:
        return EvalResult(0.0, 0.0, 0, skipped)
    rr = [1.0 / r for r in ranks]
    hits = [1.0 if r == 1 else 0.0 for r in ranks]
    return EvalResult(float(np.mean(rr)), float(np.mean(hits)),
                      len(ranks), skipped)


def evaluate(params: Params, test: IndexedLog, hp: HyperParams,
             per_user: list | None = None) -> EvalResult:
    """Rank the ground-truth next item for every eligible test user.

    Never mutates ``params``.  When ``per_user`` is given, one
    ``(user, rank, reciprocal rank)`` row is appended per evaluated user.
    """
    ranks = []
    skipped = 0
    for user in sorted(test.users):
        built = build_test_task(user, test.users[user], hp)
        if built is None:
            skipped += 1
            continue
        support, query_head, truth = built
        rng = np.random.default_rng([hp.seed, _EVAL_STREAM, user])
        theta, tr = adapt_for_user(params, support, hp, test, rng)
        negatives = sample_eval_negatives(test, user, hp.eval_negatives, rng)
        candidates = [truth] + negatives
        scores = predict_scores(theta, tr, query_head, candidates)
        rank = rank_truth(list(zip(candidates, scores)), truth)
        ranks.append(rank)
        if per_user is not None:
            per_user.append((user, rank, 1.0 / rank))
    return summarize(ranks, skipped)
