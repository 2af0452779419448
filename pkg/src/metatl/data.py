"""Interaction-log parsing, item frequency filtering and the temporal user split.

Input logs are UTF-8 TSV, one interaction per line::

    user<TAB>item<TAB>timestamp

Users whose earliest interaction falls before the split timestamp become
training users (keeping their full history); users who first appear at or
after it become test users.  Item and user IDs are densified in order of
first appearance, so re-running the pipeline on identical input yields
bit-identical output.
"""

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


class LogParseError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int


def parse_log(path) -> list:
    """One Interaction per non-empty line, in file order."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.rstrip("\n").rstrip("\r")
            if not stripped.strip():
                continue
            parts = stripped.split("\t")
            if len(parts) != 3:
                raise LogParseError(path, line_no,
                                    f"expected 3 tab-separated fields, "
                                    f"got {len(parts)}")
            user, item, ts_raw = parts
            if not user or not item:
                raise LogParseError(path, line_no, "empty user or item id")
            try:
                ts = int(ts_raw)
            except ValueError:
                raise LogParseError(path, line_no,
                                    f"bad timestamp {ts_raw!r}") from None
            if ts < 0:
                raise LogParseError(path, line_no, f"negative timestamp {ts}")
            out.append(Interaction(user, item, ts))
    return out


def filter_items(log, min_count: int = 10) -> list:
    """Drop interactions of items seen fewer than ``min_count`` times.

    Single pass: counts are taken once over the input, no re-filtering
    cascade after removal.
    """
    counts = Counter(x.item for x in log)
    return [x for x in log if counts[x.item] >= min_count]


@dataclass
class UserHistory:
    """One user's interactions as dense item indices, chronological order."""

    items: np.ndarray  # int64
    times: np.ndarray  # int64


class IndexedLog:
    """Immutable per-user histories over a dense item vocabulary."""

    def __init__(self, users: dict, n_items: int):
        self.users = users
        self.n_items = n_items
        self._interacted: dict = {}
        self._eligible: dict = {}

    def __len__(self):
        return len(self.users)

    def interacted(self, user) -> frozenset:
        """All items the user ever touched, over their entire history."""
        got = self._interacted.get(user)
        if got is None:
            got = frozenset(int(i) for i in self.users[user].items)
            self._interacted[user] = got
        return got

    def eligible_users(self, min_len: int) -> list:
        """Sorted indices of users with at least ``min_len`` interactions."""
        got = self._eligible.get(min_len)
        if got is None:
            got = sorted(u for u, h in self.users.items()
                         if len(h.items) >= min_len)
            self._eligible[min_len] = got
        return got


@dataclass
class SplitDataset:
    item_ids: list          # dense index -> original item id
    item_index: dict        # original item id -> dense index
    user_ids: list
    user_index: dict
    train: IndexedLog
    test: IndexedLog
    split_time: int
    warnings: list = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


def temporal_split(log, split_time: int, boundary: str = "test") -> SplitDataset:
    """Split users by the time of their first interaction.

    ``boundary`` decides where a user whose first interaction is exactly
    the split timestamp goes ("test" by default).
    """
    if not log:
        raise ValueError("cannot split an empty log")
    if boundary not in ("test", "train"):
        raise ValueError(f"boundary must be 'test' or 'train', got {boundary!r}")

    item_index: dict = {}
    item_ids: list = []
    user_index: dict = {}
    user_ids: list = []
    per_user: dict = {}
    for x in log:
        if x.item not in item_index:
            item_index[x.item] = len(item_ids)
            item_ids.append(x.item)
        if x.user not in user_index:
            user_index[x.user] = len(user_ids)
            user_ids.append(x.user)
            per_user[user_index[x.user]] = []
        per_user[user_index[x.user]].append(x)

    cut = split_time if boundary == "test" else split_time + 1
    train_users: dict = {}
    test_users: dict = {}
    for u, events in per_user.items():
        ordered = sorted(events, key=lambda e: e.timestamp)  # stable on ties
        hist = UserHistory(
            np.array([item_index[e.item] for e in ordered], dtype=np.int64),
            np.array([e.timestamp for e in ordered], dtype=np.int64))
        first = int(hist.times[0])
        if first < cut:
            train_users[u] = hist
        else:
            test_users[u] = hist

    warnings = []
    if not train_users:
        warnings.append("temporal split produced no training users")
    if not test_users:
        warnings.append("temporal split produced no test users")
    n_items = len(item_ids)
    return SplitDataset(item_ids, item_index, user_ids, user_index,
                        IndexedLog(train_users, n_items),
                        IndexedLog(test_users, n_items),
                        split_time, warnings)


def build_dataset(path, split_time: int, min_count: int = 10,
                  boundary: str = "test") -> SplitDataset:
    """parse -> filter -> split, the whole pipeline for one TSV file."""
    return temporal_split(filter_items(parse_log(path), min_count),
                          split_time, boundary)


# --- optional split cache -------------------------------------------------

_CACHE_FORMAT = "metatl-split-cache"
_CACHE_VERSION = 1


def save_split_cache(ds: SplitDataset, path):
    def dump_side(side):
        return {str(u): [h.items.tolist(), h.times.tolist()]
                for u, h in side.users.items()}

    payload = {
        "format": _CACHE_FORMAT,
        "version": _CACHE_VERSION,
        "split_time": ds.split_time,
        "item_ids": ds.item_ids,
        "user_ids": ds.user_ids,
        "train": dump_side(ds.train),
        "test": dump_side(ds.test),
        "warnings": ds.warnings,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_split_cache(path) -> SplitDataset:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != _CACHE_FORMAT:
        raise ValueError(f"{path}: not a split cache file")
    if payload.get("version") != _CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version "
                         f"{payload.get('version')}")

    def load_side(side):
        return {int(u): UserHistory(np.array(items, dtype=np.int64),
                                    np.array(times, dtype=np.int64))
                for u, (items, times) in side.items()}

    item_ids = payload["item_ids"]
    user_ids = payload["user_ids"]
    n_items = len(item_ids)
    return SplitDataset(item_ids,
                        {it: i for i, it in enumerate(item_ids)},
                        user_ids,
                        {u: i for i, u in enumerate(user_ids)},
                        IndexedLog(load_side(payload["train"]), n_items),
                        IndexedLog(load_side(payload["test"]), n_items),
                        payload["split_time"],
                        payload["warnings"])
