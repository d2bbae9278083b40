"""Distribution embeddings of a support batch, one vector per index set.

Binary tasks use the conditional form: per index set, the class-0 mean of
``h``, the class-1 mean of ``h``, and the positive-class fraction.
Multiclass tasks use the joint form: the mean over all support rows of
``h([z^t, v(y)])`` with ``v`` a trainable label lookup table.

Index sets are rows of an ``(S, r)`` integer array of 0-based column
indices.  Repeated indices and both orders are allowed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import DenseNet, dense_backward, dense_forward


class EmptyClass(ValueError):
    """A class required by the computation has no support examples."""


@dataclass
class DistributionEmbedding:
    sets: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.sets = np.asarray(self.sets, dtype=np.int64).reshape(len(self.sets), -1)
        if self.vectors.shape[0] != self.sets.shape[0]:
            raise ValueError("one embedding vector per index set")
        self._row = {tuple(int(i) for i in t): n for n, t in enumerate(self.sets)}

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, index_set) -> np.ndarray:
        return self.vectors[self._row[tuple(int(i) for i in np.atleast_1d(index_set))]]

    def lookup(self, sets: np.ndarray) -> np.ndarray:
        """Stack the vectors for ``sets`` in the given order."""
        try:
            rows = [self._row[tuple(int(i) for i in t)] for t in np.asarray(sets)]
        except KeyError as err:
            raise ValueError(f"no embedding for index set {err.args[0]}") from None
        return self.vectors[rows]


@dataclass
class LabelEncoder:
    table: np.ndarray

    @property
    def L_max(self) -> int:
        return self.table.shape[0]

    @property
    def m(self) -> int:
        return self.table.shape[1]

    def __call__(self, labels) -> np.ndarray:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.L_max):
            raise ValueError(f"label outside [0, {self.L_max})")
        return self.table[labels]

    def copy(self) -> LabelEncoder:
        return LabelEncoder(self.table.copy())


def init_label_encoder(L_max: int, m: int, seed) -> LabelEncoder:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return LabelEncoder(rng.uniform(-1.0, 1.0, size=(L_max, m)))


def selection_matrix(sets: np.ndarray, d: int) -> np.ndarray:
    """One-hot ``(S*r, d)`` matrix so that ``Z @ sel.T`` gathers set columns."""
    flat = np.asarray(sets).ravel()
    if flat.size and (flat.min() < 0 or flat.max() >= d):
        raise ValueError(f"index set entry outside [0, {d})")
    sel = np.zeros((flat.size, d))
    sel[np.arange(flat.size), flat] = 1.0
    return sel


def gather_sets(Z: np.ndarray, sets: np.ndarray, sel: np.ndarray | None = None) -> np.ndarray:
    """``(n, S, r)`` array of the columns each index set picks out."""
    S, r = sets.shape
    if sel is None:
        return Z[:, sets]
    return (Z @ sel.T).reshape(Z.shape[0], S, r)


def scatter_sets(dG: np.ndarray, sel: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`gather_sets`: fold ``(n, S, r)`` grads back to ``(n, d)``."""
    n = dG.shape[0]
    return dG.reshape(n, -1) @ sel


def class_mean(values: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    mask = np.asarray(labels) == k
    if not mask.any():
        raise EmptyClass(f"no support examples with label {k}")
    return np.asarray(values)[mask].mean(axis=0)


def _check_h(h: DenseNet, want: int):
    if h.in_dim != want:
        raise ValueError(f"embedding net expects input {h.in_dim}, index sets give {want}")


@dataclass
class _ConditionalCache:
    h_cache: object
    sel: np.ndarray
    y: np.ndarray
    n0: int
    n1: int
    shape: tuple[int, int, int]


def conditional_forward(h: DenseNet, Z, y, sets, sel=None):
    """Batched conditional embedding; returns ``(S, 2*H+1)`` vectors and a cache."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y)
    sets = np.asarray(sets)
    S, r = sets.shape
    _check_h(h, r)
    if Z.shape[0] != y.shape[0]:
        raise ValueError("Z and y disagree on the number of rows")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("conditional embedding needs 0/1 labels")
    n = Z.shape[0]
    n1 = int(y.sum())
    n0 = n - n1
    if n0 == 0:
        raise EmptyClass("support batch has no class-0 examples")
    if n1 == 0:
        raise EmptyClass("support batch has no class-1 examples")
    if sel is None:
        sel = selection_matrix(sets, Z.shape[1])
    G = gather_sets(Z, sets, sel)
    out, hc = dense_forward(h, G.reshape(n * S, r))
    out = out.reshape(n, S, h.out_dim)
    mean0 = out[y == 0].mean(axis=0)
    mean1 = out[y == 1].mean(axis=0)
    ybar = np.full((S, 1), n1 / n)
    vectors = np.concatenate([mean0, mean1, ybar], axis=1)
    return vectors, _ConditionalCache(hc, sel, y, n0, n1, (n, S, h.out_dim))


def conditional_backward(h: DenseNet, cache: _ConditionalCache, ds: np.ndarray):
    """Returns ``(h grads, dZ)`` for upstream ``ds`` of shape ``(S, 2*H+1)``."""
    n, S, H = cache.shape
    d_out = np.where(
        (cache.y == 0)[:, None, None],
        ds[None, :, :H] / cache.n0,
        ds[None, :, H : 2 * H] / cache.n1,
    )
    grads, d_in = dense_backward(h, cache.h_cache, d_out.reshape(n * S, H))
    r = d_in.shape[1]
    return grads, scatter_sets(d_in.reshape(n, S, r), cache.sel)


def embed_conditional(h: DenseNet, Z, y, sets) -> DistributionEmbedding:
    sets = np.asarray(sets, dtype=np.int64)
    vectors, _ = conditional_forward(h, Z, y, sets)
    return DistributionEmbedding(sets, vectors)


@dataclass
class _JointCache:
    h_cache: object
    sel: np.ndarray
    y: np.ndarray
    shape: tuple[int, int, int, int]


def joint_forward(h: DenseNet, v: LabelEncoder, Z, y, sets, sel=None):
    """Batched joint embedding; returns ``(S, H)`` vectors and a cache."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y)
    sets = np.asarray(sets)
    S, r = sets.shape
    _check_h(h, r + v.m)
    n = Z.shape[0]
    if n == 0:
        raise EmptyClass("empty support batch")
    if n != y.shape[0]:
        raise ValueError("Z and y disagree on the number of rows")
    codes = v(y)
    if sel is None:
        sel = selection_matrix(sets, Z.shape[1])
    G = gather_sets(Z, sets, sel)
    inp = np.concatenate([G, np.broadcast_to(codes[:, None, :], (n, S, v.m))], axis=2)
    out, hc = dense_forward(h, inp.reshape(n * S, r + v.m))
    vectors = out.reshape(n, S, h.out_dim).mean(axis=0)
    return vectors, _JointCache(hc, sel, y, (n, S, r, v.m))


def joint_backward(h: DenseNet, v: LabelEncoder, cache: _JointCache, ds: np.ndarray):
    """Returns ``(h grads, label-table grad, dZ)``."""
    n, S, r, m = cache.shape
    d_out = np.broadcast_to(ds[None] / n, (n, S, ds.shape[1])).reshape(n * S, -1)
    grads, d_in = dense_backward(h, cache.h_cache, d_out)
    d_in = d_in.reshape(n, S, r + m)
    d_table = np.zeros_like(v.table)
    np.add.at(d_table, cache.y, d_in[:, :, r:].sum(axis=1))
    return grads, d_table, scatter_sets(d_in[:, :, :r], cache.sel)


def embed_joint(h: DenseNet, v: LabelEncoder, Z, y, sets) -> DistributionEmbedding:
    sets = np.asarray(sets, dtype=np.int64)
    vectors, _ = joint_forward(h, v, Z, y, sets)
    return DistributionEmbedding(sets, vectors)

