"""Deep Sets classification heads over index sets.

The binary head sums a shared ``phi`` over every index set's features
``[z^t, s^t]`` and maps the pooled vector through ``psi`` to a logit.
The multiclass head drops ``psi`` and scores each class by the average
dot product between the query's pooled vector and those of the support
rows carrying that class.

``phi`` and ``psi`` are normally :class:`~den.nn.DenseNet` instances, but
any callable mapping an ``(n, p)`` array to an ``(n, q)`` array works;
the Bayes oracle uses this to plug in closed-form functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import (
    DistributionEmbedding,
    EmptyClass,
    gather_sets,
    scatter_sets,
    selection_matrix,
)
from .nn import DenseNet, dense_backward, dense_forward


@dataclass
class IndexSetPolicy:
    """Which r-tuples of covariate indices the heads range over.

    With ``max_sets=None`` and ``cap_square=True`` the cap is ``d**2``, so
    enumeration is exact for ``r <= 2`` and subsampled beyond.
    """

    r: int = 2
    max_sets: int | None = None
    seed: int = 0
    cap_square: bool = True

    def cap(self, d: int) -> int | None:
        if self.max_sets is not None:
            return self.max_sets
        return d * d if self.cap_square else None


def enumerate_index_sets(d: int, policy: IndexSetPolicy) -> np.ndarray:
    """``(S, r)`` array of 0-based index tuples, lexicographically ordered."""
    r = policy.r
    if d < 1 or r < 1:
        raise ValueError(f"need d >= 1 and r >= 1, got d={d}, r={r}")
    if policy.max_sets is not None and policy.max_sets < 1:
        raise ValueError("max_sets must be >= 1")
    total = d**r
    cap = policy.cap(d)
    if cap is None or total <= cap:
        codes = np.arange(total)
    else:
        rng = np.random.default_rng(policy.seed)
        codes = np.sort(rng.choice(total, size=cap, replace=False))
    # base-d digits, most significant first
    powers = d ** np.arange(r - 1, -1, -1)
    return (codes[:, None] // powers) % d


@dataclass
class ClassifierHead:
    phi: DenseNet
    psi: DenseNet


def _apply(f, x: np.ndarray) -> np.ndarray:
    if isinstance(f, DenseNet):
        return dense_forward(f, x)[0]
    return np.asarray(f(x), dtype=np.float64)


def phi_features(Z: np.ndarray, s_vectors: np.ndarray, sets: np.ndarray, sel=None) -> np.ndarray:
    """``(n, S, r + E)`` array of ``[z^t, s^t]`` for every row and index set."""
    n = Z.shape[0]
    S, _ = sets.shape
    G = gather_sets(Z, sets, sel)
    return np.concatenate([G, np.broadcast_to(s_vectors[None], (n, S, s_vectors.shape[1]))], axis=2)


@dataclass
class _PoolCache:
    phi_cache: object
    sel: np.ndarray
    shape: tuple[int, int, int]


def pooled_forward(phi: DenseNet, Z, s_vectors, sets, sel=None):
    """Sum of ``phi`` over index sets for each row of ``Z``; returns ``(n, P)``."""
    Z = np.asarray(Z, dtype=np.float64)
    sets = np.asarray(sets)
    S, r = sets.shape
    if sel is None:
        sel = selection_matrix(sets, Z.shape[1])
    feats = phi_features(Z, s_vectors, sets, sel)
    n, _, width = feats.shape
    out, pc = dense_forward(phi, feats.reshape(n * S, width))
    pooled = out.reshape(n, S, phi.out_dim).sum(axis=1)
    return pooled, _PoolCache(pc, sel, (n, S, r))


def pooled_backward(phi: DenseNet, cache: _PoolCache, d_pooled: np.ndarray):
    """Returns ``(phi grads, dZ, d s_vectors)``."""
    n, S, r = cache.shape
    d_out = np.broadcast_to(d_pooled[:, None, :], (n, S, d_pooled.shape[1]))
    grads, d_in = dense_backward(phi, cache.phi_cache, d_out.reshape(n * S, -1))
    d_in = d_in.reshape(n, S, -1)
    return grads, scatter_sets(d_in[:, :, :r], cache.sel), d_in[:, :, r:].sum(axis=0)


def penultimate_embed(head: ClassifierHead, z, s: DistributionEmbedding, sets) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    Z = z[None] if z.ndim == 1 else z
    sets = np.asarray(sets, dtype=np.int64).reshape(len(sets), -1)
    s_vectors = s.lookup(sets)
    if Z.shape[1] <= sets.max():
        raise ValueError(f"index sets reference column {sets.max()} of a {Z.shape[1]}-dim input")
    feats = phi_features(Z, s_vectors, sets)
    n, S, width = feats.shape
    pooled = _apply(head.phi, feats.reshape(n * S, width)).reshape(n, S, -1).sum(axis=1)
    return pooled[0] if z.ndim == 1 else pooled


def deepsets_logit(head: ClassifierHead, z, s: DistributionEmbedding, sets):
    """Binary logit for one query vector (float) or a batch of rows (array)."""
    z = np.asarray(z, dtype=np.float64)
    pooled = penultimate_embed(head, z, s, sets)
    q = _apply(head.psi, np.atleast_2d(pooled))[:, 0]
    return float(q[0]) if z.ndim == 1 else q


def class_mean_matrix(support_embeds: np.ndarray, support_labels: np.ndarray, L: int):
    """``(L, p)`` per-class mean embeddings and the per-class counts."""
    labels = np.asarray(support_labels)
    counts = np.bincount(labels, minlength=L)[:L]
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyClass(f"no support examples for class {int(missing[0])}")
    sums = np.zeros((L, support_embeds.shape[1]))
    np.add.at(sums, labels, support_embeds)
    return sums / counts[:, None], counts


def matching_scores(query_embed, support_embeds, support_labels, L: int) -> np.ndarray:
    """Average dot product of the query with each class's support embeddings."""
    q = np.asarray(query_embed, dtype=np.float64)
    means, _ = class_mean_matrix(np.asarray(support_embeds, dtype=np.float64), support_labels, L)
    return q @ means.T


def softmax(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("softmax input must be finite")
    e = np.exp(q - q.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
