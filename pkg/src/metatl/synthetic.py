"""Synthetic interaction logs with known transition structure.

Users walk over the item set following a successor rule: either a
permutation (deterministic mode, default: shift-by-one cycle) or a
row-stochastic matrix.  With probability ``noise`` a step jumps to a
uniformly random item instead.  Train users are timestamped before the
split point and test users after it, so generated logs drop straight
into the data pipeline.  The per-item oracle (mode of the successor
distribution) gives a ceiling on what any predictor can achieve.
"""

from dataclasses import dataclass

import numpy as np

from .data import Interaction


@dataclass
class MarkovSpec:
    n_items: int
    successor: np.ndarray | None = None  # 1-D permutation or 2-D stochastic matrix
    n_train_users: int = 100
    n_test_users: int = 20
    seq_len_range: tuple = (8, 16)
    noise: float = 0.0
    split_time: int = 1_000_000_000

    def validate(self) -> "MarkovSpec":
        if self.n_items < 2:
            raise ValueError(f"n_items must be >= 2, got {self.n_items}")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError(f"noise must be in [0, 1), got {self.noise}")
        lo, hi = self.seq_len_range
        if not 2 <= lo <= hi:
            raise ValueError(f"bad seq_len_range {self.seq_len_range}")
        if self.n_train_users < 0 or self.n_test_users < 0:
            raise ValueError("user counts must be non-negative")
        if self.successor is not None:
            s = np.asarray(self.successor)
            if s.ndim == 1:
                if not np.array_equal(np.sort(s), np.arange(self.n_items)):
                    raise ValueError("successor is not a permutation")
            elif s.ndim == 2:
                if s.shape != (self.n_items, self.n_items):
                    raise ValueError(f"successor matrix shape {s.shape}")
                if np.any(s < 0) or np.any(
                        np.abs(s.sum(axis=1) - 1.0) > 1e-9):
                    raise ValueError("successor rows must be distributions")
            else:
                raise ValueError("successor must be 1-D or 2-D")
        return self

    def successor_rule(self) -> np.ndarray:
        if self.successor is None:
            return (np.arange(self.n_items) + 1) % self.n_items  # cycle
        return np.asarray(self.successor)


def _walk(spec: MarkovSpec, rule: np.ndarray, length: int,
          rng: np.random.Generator) -> list:
    seq = [int(rng.integers(spec.n_items))]
    for _ in range(length - 1):
        if rng.random() < spec.noise:
            seq.append(int(rng.integers(spec.n_items)))
        elif rule.ndim == 1:
            seq.append(int(rule[seq[-1]]))
        else:
            seq.append(int(rng.choice(spec.n_items, p=rule[seq[-1]])))
    return seq


def gen_dataset(spec: MarkovSpec, seed: int) -> list:
    """Interaction list honoring the split-time convention of the pipeline.

    Timestamps are strictly increasing within a user; every train user's
    events lie before ``split_time``, every test user's at or after it.
    Each user draws from its own child stream of ``seed``.
    """
    spec.validate()
    rule = spec.successor_rule()
    out = []
    total = spec.n_train_users + spec.n_test_users
    for uidx in range(total):
        rng = np.random.default_rng([seed, uidx])
        length = int(rng.integers(spec.seq_len_range[0],
                                  spec.seq_len_range[1] + 1))
        is_test = uidx >= spec.n_train_users
        if is_test:
            name = f"test_u{uidx - spec.n_train_users:06d}"
            base = spec.split_time + (uidx - spec.n_train_users) * 100_000
        else:
            name = f"train_u{uidx:06d}"
            base = 1 + uidx * 100_000
            if base + length >= spec.split_time:
                raise ValueError("split_time too small for this many "
                                 "train users")
        for pos, item in enumerate(_walk(spec, rule, length, rng)):
            out.append(Interaction(name, f"i{item:06d}", base + pos))
    return out


def write_tsv(log, path):
    with open(path, "w", encoding="utf-8") as f:
        for x in log:
            f.write(f"{x.user}\t{x.item}\t{x.timestamp}\n")


def oracle_best_next(spec: MarkovSpec, item: int) -> int:
    """Mode of the successor distribution; ties go to the lowest index."""
    rule = spec.successor_rule()
    if rule.ndim == 1:
        return int(rule[item])
    return int(np.argmax(rule[item]))


def hit1_ceiling(spec: MarkovSpec) -> float:
    """Best possible Hit@1 of any predictor under the noise model.

    The oracle answer is correct whenever the walk follows the rule, plus
    the 1/n_items chance that a noise jump lands on it anyway.  (Exact
    for the permutation mode; for matrix mode it additionally assumes
    deterministic rows.)
    """
    return 1.0 - spec.noise + spec.noise / spec.n_items
