"""Per-covariate piecewise linear calibrators (the transformation block).

A :class:`PLF` has fixed, strictly increasing keypoints and trainable
output values ``alpha`` at those keypoints.  Inputs outside the keypoint
range are clamped to the nearest endpoint value.  An input sitting exactly
on an interior keypoint is assigned to the segment on its left; both
segments agree there, so only the gradient routing is affected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateColumn(ValueError):
    """A covariate column has fewer than two distinct values."""


@dataclass
class PLF:
    keypoints: np.ndarray
    alpha: np.ndarray
    monotonic: bool = False

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        k = self.keypoints
        if k.ndim != 1 or k.size < 2:
            raise ValueError("a PLF needs at least 2 keypoints")
        if self.alpha.shape != k.shape:
            raise ValueError("keypoints and alpha must have the same length")
        if np.any(np.diff(k) <= 0):
            raise ValueError("keypoints must be strictly increasing")

    @property
    def K(self) -> int:
        return self.keypoints.size

    def copy(self) -> PLF:
        return PLF(self.keypoints.copy(), self.alpha.copy(), self.monotonic)


def plf_init(K: int, domain: tuple[float, float], monotonic: bool = False, seed: int = 0) -> PLF:
    """Uniform keypoints on ``domain`` with alpha the identity ramp onto [0, 1].

    ``seed`` is accepted for interface symmetry; the initialization is
    deterministic.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if not lo < hi:
        raise ValueError(f"empty domain ({lo}, {hi})")
    k = np.linspace(lo, hi, K)
    return PLF(k, (k - lo) / (hi - lo), monotonic)


def _segments(plf: PLF, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Segment index, interpolation weight in [0, 1], and in-domain mask."""
    k = plf.keypoints
    seg = np.clip(np.searchsorted(k, x, side="left") - 1, 0, k.size - 2)
    t = (x - k[seg]) / (k[seg + 1] - k[seg])
    inside = (x >= k[0]) & (x <= k[-1])
    return seg, np.clip(t, 0.0, 1.0), inside


def plf_forward(plf: PLF, x):
    xa = np.asarray(x, dtype=np.float64)
    seg, t, _ = _segments(plf, xa)
    a = plf.alpha
    out = (1.0 - t) * a[seg] + t * a[seg + 1]
    return float(out) if out.ndim == 0 else out


def plf_backward(plf: PLF, x, upstream) -> tuple[np.ndarray, np.ndarray | float]:
    """Gradients of ``sum(upstream * plf(x))`` w.r.t. alpha and x."""
    xa = np.asarray(x, dtype=np.float64)
    ua = np.broadcast_to(np.asarray(upstream, dtype=np.float64), xa.shape)
    seg, t, inside = _segments(plf, xa)
    K = plf.K
    g_alpha = np.bincount(seg.ravel(), weights=((1.0 - t) * ua).ravel(), minlength=K)
    g_alpha += np.bincount(seg.ravel() + 1, weights=(t * ua).ravel(), minlength=K)
    k, a = plf.keypoints, plf.alpha
    slope = (a[seg + 1] - a[seg]) / (k[seg + 1] - k[seg])
    g_x = np.where(inside, slope * ua, 0.0)
    return g_alpha, (float(g_x) if g_x.ndim == 0 else g_x)


def isotonic_fit(values: np.ndarray) -> np.ndarray:
    """Least-squares nondecreasing fit by pool-adjacent-violators."""
    block_sum: list[float] = []
    block_len: list[int] = []
    for v in np.asarray(values, dtype=np.float64):
        block_sum.append(float(v))
        block_len.append(1)
        while len(block_sum) > 1 and (
            block_sum[-2] / block_len[-2] > block_sum[-1] / block_len[-1]
        ):
            s, n = block_sum.pop(), block_len.pop()
            block_sum[-1] += s
            block_len[-1] += n
    return np.concatenate(
        [np.full(n, s / n) for s, n in zip(block_sum, block_len)]
    )


def plf_project_monotone(plf: PLF) -> PLF:
    if not plf.monotonic:
        raise ValueError("monotone projection requested for a non-monotonic PLF")
    if np.all(np.diff(plf.alpha) >= 0):
        return plf.copy()
    return PLF(plf.keypoints.copy(), isotonic_fit(plf.alpha), True)


def fit_keypoints_from_support(column: np.ndarray, K: int) -> np.ndarray:
    column = np.asarray(column, dtype=np.float64)
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if column.size == 0 or not np.all(np.isfinite(column)):
        raise ValueError("column must be nonempty and finite")
    lo, hi = column.min(), column.max()
    if lo == hi:
        raise DegenerateColumn(f"constant column (value {lo})")
    return np.linspace(lo, hi, K)


def plf_from_column(column: np.ndarray, K: int, monotonic: bool = False) -> PLF:
    """Fresh PLF over the observed range; constant columns are widened by 0.5."""
    try:
        k = fit_keypoints_from_support(column, K)
    except DegenerateColumn:
        v = float(np.asarray(column)[0])
        k = np.linspace(v - 0.5, v + 0.5, K)
    return plf_init(K, (k[0], k[-1]), monotonic)


@dataclass
class PLFBank:
    plfs: list[PLF]

    @property
    def d(self) -> int:
        return len(self.plfs)

    def named_params(self, prefix: str = "bank") -> dict[str, np.ndarray]:
        return {f"{prefix}.alpha{j}": p.alpha for j, p in enumerate(self.plfs)}

    def n_params(self) -> int:
        return sum(p.K for p in self.plfs)

    def subset(self, columns) -> PLFBank:
        """View onto selected columns; the PLF objects are shared, not copied."""
        return PLFBank([self.plfs[j] for j in columns])

    def project(self) -> None:
        """Project every monotonic PLF in place."""
        for p in self.plfs:
            if p.monotonic:
                p.alpha[:] = plf_project_monotone(p).alpha

    def copy(self) -> PLFBank:
        return PLFBank([p.copy() for p in self.plfs])


def fit_bank(X: np.ndarray, K: int, monotonic: bool = False) -> PLFBank:
    X = np.asarray(X, dtype=np.float64)
    return PLFBank([plf_from_column(X[:, j], K, monotonic) for j in range(X.shape[1])])


def identity_bank(d: int, domain: tuple[float, float] = (0.0, 1.0)) -> PLFBank:
    """A bank that is the identity on ``domain`` (K=2, alpha equal to keypoints)."""
    lo, hi = domain
    return PLFBank([PLF(np.array([lo, hi]), np.array([lo, hi])) for _ in range(d)])


def bank_forward(bank: PLFBank, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.d:
        raise ValueError(f"bank has {bank.d} columns, input has shape {X.shape}")
    Z = np.empty_like(X)
    for j, p in enumerate(bank.plfs):
        Z[:, j] = plf_forward(p, X[:, j])
    return Z


def bank_backward(bank: PLFBank, X: np.ndarray, dZ: np.ndarray) -> list[np.ndarray]:
    """Alpha gradients, one array per column, of ``sum(dZ * bank(X))``."""
    return [plf_backward(p, X[:, j], dZ[:, j])[0] for j, p in enumerate(bank.plfs)]
