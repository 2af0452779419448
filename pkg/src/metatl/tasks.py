"""Episode construction and negative sampling.

A meta-training task mimics a cold-start user with k initial
interactions: sample an eligible user, draw k+1 of their interactions
uniformly without replacement, re-sort them chronologically, chain the
first k into k-1 support pairs and keep the final transition as the
query.  Test-time support sets instead use the user's actual first k
interactions.
"""

from dataclasses import dataclass

import numpy as np

from .data import IndexedLog, UserHistory


class EmptyPopulationError(ValueError):
    """No user has enough interactions to build a task."""


class ExhaustedNegativesError(ValueError):
    """The user has interacted with every item in the vocabulary."""


@dataclass(frozen=True)
class TransitionPair:
    user: int
    head: int
    tail: int


@dataclass(frozen=True)
class Task:
    user: int
    support: tuple  # k-1 TransitionPairs, chronological
    query: TransitionPair


def sample_task(log: IndexedLog, hp, rng: np.random.Generator) -> Task:
    """One few-shot episode from a uniformly chosen eligible user."""
    eligible = log.eligible_users(hp.k + 1)
    if not eligible:
        raise EmptyPopulationError(
            f"no user has >= {hp.k + 1} interactions")
    user = eligible[int(rng.integers(len(eligible)))]
    hist = log.users[user]
    picked = np.sort(rng.choice(len(hist.items), size=hp.k + 1,
                                replace=False))
    items = [int(i) for i in hist.items[picked]]
    support = tuple(TransitionPair(user, items[j], items[j + 1])
                    for j in range(hp.k - 1))
    query = TransitionPair(user, items[hp.k - 1], items[hp.k])
    return Task(user, support, query)


def sample_negative(log: IndexedLog, user: int,
                    rng: np.random.Generator) -> int:
    """Uniform draw over items the user never interacted with."""
    seen = log.interacted(user)
    if len(seen) >= log.n_items:
        raise ExhaustedNegativesError(
            f"user {user} interacted with all {log.n_items} items")
    for _ in range(64):  # rejection is cheap while the vocabulary is sparse
        cand = int(rng.integers(log.n_items))
        if cand not in seen:
            return cand
    pool = np.setdiff1d(np.arange(log.n_items), np.fromiter(seen, dtype=np.int64))
    return int(pool[int(rng.integers(len(pool)))])


def build_test_task(user: int, hist: UserHistory, hp):
    """Support pairs over the user's first k interactions, plus the truth.

    Returns ``(support, query_head, truth)`` or None when the history is
    too short to hold k initial interactions and a ground-truth next item.
    """
    if len(hist.items) < hp.k + 1:
        return None
    items = [int(i) for i in hist.items[:hp.k + 1]]
    support = [TransitionPair(user, items[j], items[j + 1])
               for j in range(hp.k - 1)]
    return support, items[hp.k - 1], items[hp.k]
