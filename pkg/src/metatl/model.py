"""Trainable parameters, forward passes and hand-derived gradients.

A transition pair (head -> tail) observed for one user is encoded by a
single sigmoid layer over the concatenated item embeddings; the encodings
of all pairs in a support set are averaged into one transition vector
``tr``.  A candidate tail item is scored by the squared translation
residual ``|| E[head] + tr - E[tail] ||^2`` (lower is better) and training
minimizes a margin ranking loss between observed tails and sampled
negative tails.

There is no autodiff anywhere: `loss_and_grad` backpropagates by hand
through the hinge, the squared distances, the mean and the sigmoid layer,
and `check_gradients` validates it against central finite differences.
All arithmetic is float64.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass
class Params:
    """Full trainable state: embedding table, transform matrix, bias."""

    embeddings: np.ndarray  # (n_items, dim)
    transform: np.ndarray   # (dim, 2*dim)
    bias: np.ndarray        # (dim,)

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    @property
    def n_items(self) -> int:
        return self.embeddings.shape[0]

    def copy(self) -> "Params":
        return Params(self.embeddings.copy(), self.transform.copy(),
                      self.bias.copy())

    def validate(self) -> "Params":
        n, d = self.embeddings.shape
        if self.transform.shape != (d, 2 * d):
            raise ValueError(
                f"transform shape {self.transform.shape} != ({d}, {2 * d})")
        if self.bias.shape != (d,):
            raise ValueError(f"bias shape {self.bias.shape} != ({d},)")
        for name, arr in (("embeddings", self.embeddings),
                          ("transform", self.transform), ("bias", self.bias)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        return self


@dataclass
class Grads:
    """Gradient of a loss w.r.t. Params; embedding part is sparse.

    ``d_embeddings`` only carries rows for items that actually appear in
    the pairs that produced the gradient; everything else is implicitly
    zero.
    """

    d_embeddings: dict  # item id -> (dim,)
    d_transform: np.ndarray
    d_bias: np.ndarray


def init_params(n_items: int, dim: int, rng: np.random.Generator) -> Params:
    """Seeded initialization: embeddings uniform in [-6/sqrt(d), 6/sqrt(d)],
    transform Xavier-uniform, bias zero.  Draw order (embeddings first) is
    part of the reproducibility contract."""
    if n_items < 1 or dim < 1:
        raise ValueError("n_items and dim must be positive")
    e_scale = 6.0 / np.sqrt(dim)
    w_scale = np.sqrt(6.0 / (3.0 * dim))  # fan_in=2d, fan_out=d
    emb = rng.uniform(-e_scale, e_scale, size=(n_items, dim))
    w = rng.uniform(-w_scale, w_scale, size=(dim, 2 * dim))
    b = np.zeros(dim)
    return Params(emb, w, b)


def _check_item(params: Params, item) -> int:
    i = int(item)
    if not 0 <= i < params.n_items:
        raise ValueError(f"unknown item id {item} (vocabulary size "
                         f"{params.n_items})")
    return i


def transition_rep(params: Params, head, tail) -> np.ndarray:
    """Encode one (head -> tail) pair: sigma(W (E[head] || E[tail]) + b).

    Every component of the result lies strictly in (0, 1).
    """
    h = _check_item(params, head)
    t = _check_item(params, tail)
    cat = np.concatenate([params.embeddings[h], params.embeddings[t]])
    return expit(params.transform @ cat + params.bias)


def aggregate(reps) -> np.ndarray:
    """Componentwise mean of the pair encodings of one support set."""
    if len(reps) == 0:
        raise ValueError("cannot aggregate an empty list of representations")
    return np.mean(np.asarray(reps, dtype=np.float64), axis=0)


def score(params: Params, tr: np.ndarray, head, tail) -> float:
    """Squared translation residual || E[head] + tr - E[tail] ||^2 (>= 0)."""
    h = _check_item(params, head)
    t = _check_item(params, tail)
    r = params.embeddings[h] + tr - params.embeddings[t]
    return float(r @ r)


def margin_loss(params: Params, tr: np.ndarray, triples, margin: float) -> float:
    """Sum over (head, tail, neg) of max(0, margin + s(head,tail) - s(head,neg))."""
    if len(triples) == 0:
        raise ValueError("margin_loss needs at least one triple")
    total = 0.0
    for h, t, n in triples:
        total += max(0.0, margin + score(params, tr, h, t)
                     - score(params, tr, h, n))
    return total


def _forward(params, triples, margin, rep_pairs):
    reps = [transition_rep(params, h, t) for h, t in rep_pairs]
    tr = aggregate(reps)
    return margin_loss(params, tr, triples, margin), reps, tr


def _hinge_margins(params, tr, triples, margin):
    return np.array([margin + score(params, tr, h, t) - score(params, tr, h, n)
                     for h, t, n in triples])


def _acc(d_emb: dict, item: int, vec: np.ndarray):
    cur = d_emb.get(item)
    if cur is None:
        d_emb[item] = vec.astype(np.float64, copy=True)
    else:
        cur += vec


def loss_and_grad(params: Params, triples, margin: float,
                  rep_pairs=None) -> tuple[float, Grads]:
    """Margin loss over ``triples`` and its exact gradient w.r.t. Params.

    The transition vector is recomputed inside from ``rep_pairs``
    (defaulting to the triples' positive pairs), so the gradient includes
    the chain through the sigmoid layer and the mean.  Inactive hinge
    terms contribute nothing; the subgradient at the kink is 0.  The
    returned loss is bit-identical to composing transition_rep ->
    aggregate -> margin_loss on the same inputs.
    """
    if len(triples) == 0:
        raise ValueError("loss_and_grad needs at least one triple")
    if rep_pairs is None:
        rep_pairs = [(h, t) for h, t, _ in triples]
    loss, reps, tr = _forward(params, triples, margin, rep_pairs)

    d = params.dim
    E = params.embeddings
    d_emb: dict = {}
    d_w = np.zeros_like(params.transform)
    d_b = np.zeros_like(params.bias)
    g_tr = np.zeros(d)

    for h, t, n in triples:
        h = _check_item(params, h)
        t = _check_item(params, t)
        n = _check_item(params, n)
        u = E[h] + tr - E[t]
        v = E[h] + tr - E[n]
        if margin + float(u @ u) - float(v @ v) > 0.0:
            du = 2.0 * u
            dv = 2.0 * v
            _acc(d_emb, h, du - dv)
            _acc(d_emb, t, -du)
            _acc(d_emb, n, dv)
            g_tr += du - dv

    if np.any(g_tr):
        g_rep = g_tr / len(reps)  # mean backprop, same for every pair
        w_t = params.transform.T
        for (h, t), a in zip(rep_pairs, reps):
            h = _check_item(params, h)
            t = _check_item(params, t)
            g_z = g_rep * a * (1.0 - a)
            cat = np.concatenate([E[h], E[t]])
            d_w += np.outer(g_z, cat)
            d_b += g_z
            g_cat = w_t @ g_z
            _acc(d_emb, h, g_cat[:d])
            _acc(d_emb, t, g_cat[d:])

    return loss, Grads(d_emb, d_w, d_b)


def sgd_update(params: Params, grads: Grads, lr: float) -> Params:
    """One plain gradient step; returns a new Params, input untouched."""
    out = params.copy()
    apply_grads_(out, grads, lr)
    return out


def apply_grads_(params: Params, grads: Grads, lr: float):
    """In-place ``theta -= lr * grad`` with sparse embedding rows."""
    for item, g in grads.d_embeddings.items():
        params.embeddings[item] -= lr * g
    params.transform -= lr * grads.d_transform
    params.bias -= lr * grads.d_bias


# --- finite-difference gradient checking ---------------------------------

@dataclass
class GradCheckReport:
    trials: int
    max_rel_err: float
    threshold: float
    skipped_coords: int
    checked_coords: int
    failures: list  # (trial, array name, flat index, analytic, fd, rel err)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        line = (f"{status}: max relative error {self.max_rel_err:.3e} over "
                f"{self.trials} trials ({self.checked_coords} coordinates, "
                f"{self.skipped_coords} skipped at hinge kinks, "
                f"threshold {self.threshold:.0e})")
        if self.failures:
            trial, name, idx, ana, fd, rel = self.failures[0]
            line += (f"; first offender trial {trial} {name}[{idx}] "
                     f"analytic={ana:.6e} fd={fd:.6e} rel={rel:.3e}")
        return line


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def check_gradients(hp, trials: int, h: float = 1e-5, threshold: float = 1e-4,
                    kink_tol: float = 1e-7) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs ``trials`` randomized small instances (seeded from hp.seed).
    Coordinates whose +/-h evaluations land on different sides of a hinge
    kink, or whose base margin is within ``kink_tol`` of the kink, are
    skipped: one-sided derivatives differ there by construction.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(hp.seed)
    max_rel = 0.0
    skipped = 0
    checked = 0
    failures = []

    for trial in range(trials):
        n_items = int(rng.integers(6, 13))
        params = init_params(n_items, hp.dim, rng)
        params.bias += rng.normal(0.0, 0.3, size=hp.dim)
        n_triples = int(rng.integers(1, 4))
        triples = [tuple(int(x) for x in rng.integers(n_items, size=3))
                   for _ in range(n_triples)]
        rep_pairs = [(h_, t_) for h_, t_, _ in triples]

        _, _, tr = _forward(params, triples, hp.margin, rep_pairs)
        base_margins = _hinge_margins(params, tr, triples, hp.margin)
        near_kink = bool(np.any(np.abs(base_margins) < kink_tol))
        base_active = base_margins > 0.0

        _, grads = loss_and_grad(params, triples, hp.margin, rep_pairs)
        dense = {
            "embeddings": np.zeros_like(params.embeddings),
            "transform": grads.d_transform,
            "bias": grads.d_bias,
        }
        for item, g in grads.d_embeddings.items():
            dense["embeddings"][item] = g

        for name in ("embeddings", "transform", "bias"):
            arr = getattr(params, name)
            flat = arr.reshape(-1)
            analytic = dense[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up, _, tr_u = _forward(params, triples, hp.margin, rep_pairs)
                act_u = _hinge_margins(params, tr_u, triples, hp.margin) > 0.0
                flat[i] = orig - h
                dn, _, tr_d = _forward(params, triples, hp.margin, rep_pairs)
                act_d = _hinge_margins(params, tr_d, triples, hp.margin) > 0.0
                flat[i] = orig
                if near_kink or not (np.array_equal(act_u, base_active)
                                     and np.array_equal(act_d, base_active)):
                    skipped += 1
                    continue
                fd = (up - dn) / (2.0 * h)
                rel = _rel_err(analytic[i], fd)
                checked += 1
                if rel > max_rel:
                    max_rel = rel
                if rel >= threshold:
                    failures.append((trial, name, i, float(analytic[i]),
                                     float(fd), float(rel)))

    return GradCheckReport(trials, max_rel, threshold, skipped, checked,
                           failures)
