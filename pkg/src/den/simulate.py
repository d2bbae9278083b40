"""Synthetic aggregation tasks and exact Bayes references.

Each simulated covariate plays the role of a classifier score:
``x_j = sigmoid(a_j * (2y - 1) + eps_j)`` with ``eps_j ~ N(0, noise^2)``
drawn independently given the label.  A column's AUC is
``Phi(sqrt(2) * a_j / noise)``, so the default strength range
``[0.18, 1.65]`` spans single-score AUCs of roughly 0.6 to 0.99.

The Bayes oracle handles class-conditional densities that factor over all
r-tuples of coordinates ("f-expansions"); only the diagonal Gaussian
family is implemented.  Its posterior is computed by literally evaluating
the Deep Sets form with ``phi = log f + d**-r * log(prior)`` and
``psi = exp``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit
from scipy.stats import multivariate_normal

from .classifier import ClassifierHead, IndexSetPolicy, deepsets_logit, enumerate_index_sets, penultimate_embed
from .data import Task
from .embedding import DistributionEmbedding
from .metrics import auc, auc_stderr

PRIOR_GRID = tuple(np.round(np.arange(1, 10) / 10, 1))


@dataclass
class ScorerSpec:
    count: int
    strength_range: tuple[float, float] = (0.18, 1.65)
    noise: float = 1.0
    pi: float = 0.5
    strengths: np.ndarray | None = None

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValueError("count must be >= 1")
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie in (0, 1), got {self.pi}")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        lo, hi = self.strength_range
        if not 0.0 <= lo <= hi:
            raise ValueError(f"bad strength range {self.strength_range}")
        if self.strengths is not None:
            self.strengths = np.asarray(self.strengths, dtype=np.float64)
            if self.strengths.shape != (self.count,):
                raise ValueError("one strength per scorer")

    def realize(self, seed) -> ScorerSpec:
        """Fix the per-scorer strengths exactly as ``simulate_task_family(.., seed)`` draws them."""
        rng = np.random.default_rng(seed)
        return replace(self, strengths=_strengths(self, rng))


def _strengths(spec: ScorerSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.strength_range
    drawn = rng.uniform(lo, hi, size=spec.count)
    return drawn if spec.strengths is None else spec.strengths


def simulate_task_family(spec: ScorerSpec, n: int, seed, task_id: str | None = None) -> Task:
    if n < 2:
        raise ValueError("need at least 2 rows")
    rng = np.random.default_rng(seed)
    a = _strengths(spec, rng)
    y = (rng.random(n) < spec.pi).astype(np.int64)
    eps = rng.normal(0.0, 1.0, size=(n, spec.count)) * spec.noise
    X = expit(a[None, :] * (2 * y[:, None] - 1) + eps)
    cols = [f"score{j}" for j in range(spec.count)]
    return Task(X, y, 2, cols, task_id or f"family{seed}")


def sample_subtask(task: Task, C: int, seed) -> Task:
    """Keep ``C`` distinct columns drawn uniformly without replacement."""
    if not 1 <= C <= task.d:
        raise ValueError(f"C must lie in [1, {task.d}], got {C}")
    rng = np.random.default_rng(seed)
    cols = rng.choice(task.d, size=C, replace=False)
    return task.select_columns(cols, f"{task.task_id}/sub{C}")


def simulate_suite(n_tasks: int, count_range: tuple[int, int], n: int, seed,
                   strength_range=(0.18, 1.65), noise: float = 1.0, prefix: str = "family") -> list[Task]:
    """Families with dimension uniform on ``count_range`` and prior on {0.1, ..., 0.9}."""
    ss = np.random.SeedSequence(seed)
    tasks = []
    for i, child in enumerate(ss.spawn(n_tasks)):
        rng = np.random.default_rng(child)
        count = int(rng.integers(count_range[0], count_range[1] + 1))
        pi = float(rng.choice(PRIOR_GRID))
        spec = ScorerSpec(count, tuple(strength_range), noise, pi)
        tasks.append(simulate_task_family(spec, n, rng, f"{prefix}{i:03d}"))
    return tasks


@dataclass
class DistortionSpec:
    """Per-column warp ``x -> shift + scale * x**power`` on nonnegative data."""

    powers: np.ndarray
    shifts: np.ndarray
    scales: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=np.float64)
        self.shifts = np.asarray(self.shifts, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        if not (self.powers.shape == self.shifts.shape == self.scales.shape):
            raise ValueError("powers, shifts and scales must align")
        if np.any(self.powers < 0.25) or np.any(self.powers > 4.0):
            raise ValueError("power exponents must lie in [0.25, 4]")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive for the warp to be increasing")

    @classmethod
    def random(cls, d: int, seed, shift_range=(-1.0, 1.0), scale_range=(0.5, 5.0)) -> DistortionSpec:
        rng = np.random.default_rng(seed)
        powers = np.exp(rng.uniform(np.log(0.25), np.log(4.0), size=d))
        return cls(powers, rng.uniform(*shift_range, size=d), rng.uniform(*scale_range, size=d), seed)

    @classmethod
    def identity(cls, d: int) -> DistortionSpec:
        return cls(np.ones(d), np.zeros(d), np.ones(d))


def apply_heterogeneity(task: Task, spec: DistortionSpec) -> Task:
    if spec.powers.shape != (task.d,):
        raise ValueError(f"distortion covers {spec.powers.size} columns, task has {task.d}")
    if np.any(task.X < 0):
        raise ValueError("power warps need nonnegative covariates")
    X = spec.shifts + spec.scales * task.X**spec.powers
    return Task(X, task.y.copy(), task.L, list(task.columns), task.task_id)


@dataclass
class FExpansionSpec:
    """Diagonal Gaussian class conditionals written as an order-r f-expansion.

    ``means`` and ``sds`` are ``(L, d)``.  For an r-tuple ``t`` the factor is
    ``prod_i N(z_{t_i}; mu_{t_i}, sd_{t_i}) ** (1 / (r * d**(r-1)))``; every
    coordinate occurs ``r * d**(r-1)`` times across ``[d]**r``, so the
    product over all tuples is the diagonal Gaussian density.
    """

    r: int
    means: np.ndarray
    sds: np.ndarray
    priors: np.ndarray
    family: str = "diagonal-gaussian"
    d: int = field(init=False)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.sds = np.atleast_2d(np.asarray(self.sds, dtype=np.float64))
        self.priors = np.asarray(self.priors, dtype=np.float64)
        if self.family != "diagonal-gaussian":
            raise ValueError(f"unsupported f-family {self.family!r}")
        if self.means.shape != self.sds.shape or self.means.shape[0] != self.priors.size:
            raise ValueError("means, sds and priors disagree on the class count")
        if np.any(self.sds <= 0):
            raise ValueError("standard deviations must be positive")
        if np.any(self.priors <= 0) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be positive and sum to 1")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        self.d = self.means.shape[1]

    @property
    def L(self) -> int:
        return self.priors.size


def _fexp_phi(spec: FExpansionSpec):
    r, d = spec.r, spec.d
    power = 1.0 / (r * d ** (r - 1))
    log_prior_share = 1.0 / d**r

    def phi(features: np.ndarray) -> np.ndarray:
        # features: [z^t (r), mu^t (r), sd^t (r), prior]
        z, mu, sd = features[:, :r], features[:, r : 2 * r], features[:, 2 * r : 3 * r]
        log_n = -0.5 * ((z - mu) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)
        out = power * log_n.sum(axis=1) + log_prior_share * np.log(features[:, 3 * r])
        return out[:, None]

    return phi


def _class_embeddings(spec: FExpansionSpec, sets: np.ndarray) -> list[DistributionEmbedding]:
    out = []
    for k in range(spec.L):
        vec = np.concatenate(
            [spec.means[k][sets], spec.sds[k][sets], np.full((len(sets), 1), spec.priors[k])], axis=1
        )
        out.append(DistributionEmbedding(sets, vec))
    return out


def _fexp_parts(spec: FExpansionSpec, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != spec.d:
        raise ValueError(f"z has {z.shape[-1]} coordinates, spec has {spec.d}")
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    sets = enumerate_index_sets(spec.d, IndexSetPolicy(spec.r, None, cap_square=False))
    head = ClassifierHead(_fexp_phi(spec), np.exp)
    return z, sets, head, _class_embeddings(spec, sets)


def bayes_posterior_f_expansion(spec: FExpansionSpec, z) -> np.ndarray:
    """Posterior over classes from the Deep Sets form with ``psi = exp``."""
    z, sets, head, embeds = _fexp_parts(spec, z)
    unnorm = np.stack([np.atleast_1d(deepsets_logit(head, z, s, sets)) for s in embeds], axis=-1)
    total = unnorm.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("zero total density; z is too far from every class")
    post = unnorm / total
    return post[0] if z.ndim == 1 else post


def bayes_log_scores_f_expansion(spec: FExpansionSpec, z) -> np.ndarray:
    """``log(prior * density)`` per class: the pooled sum before ``psi``."""
    z, sets, head, embeds = _fexp_parts(spec, z)
    logs = np.stack(
        [np.atleast_2d(penultimate_embed(head, z, s, sets))[:, 0] for s in embeds], axis=-1
    )
    return logs[0] if z.ndim == 1 else logs


def bayes_posterior_direct(spec: FExpansionSpec, z) -> np.ndarray:
    """Density-ratio Bayes rule with the full diagonal Gaussian densities."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    dens = np.stack(
        [
            spec.priors[k] * multivariate_normal(spec.means[k], np.diag(spec.sds[k] ** 2)).pdf(z).reshape(-1)
            for k in range(spec.L)
        ],
        axis=-1,
    )
    return dens / dens.sum(axis=-1, keepdims=True)


def random_f_expansion(d: int, L: int, r: int, seed) -> FExpansionSpec:
    rng = np.random.default_rng(seed)
    priors = rng.dirichlet(np.full(L, 2.0))
    return FExpansionSpec(r, rng.normal(0, 1, (L, d)), rng.uniform(0.5, 2.0, (L, d)), priors)


def sample_f_expansion(spec: FExpansionSpec, n: int, seed, task_id: str = "fexp") -> Task:
    rng = np.random.default_rng(seed)
    y = rng.choice(spec.L, size=n, p=spec.priors)
    X = spec.means[y] + spec.sds[y] * rng.normal(size=(n, spec.d))
    return Task(X, y, spec.L, [f"z{j}" for j in range(spec.d)], task_id)


def scorer_as_f_expansion(spec: ScorerSpec) -> FExpansionSpec:
    """The scorer model in logit space: ``logit(x_j) | y ~ N(a_j (2y-1), noise^2)``."""
    if spec.strengths is None:
        raise ValueError("scorer strengths must be fixed (ScorerSpec.realize)")
    if spec.noise <= 0:
        raise ValueError("noise-free scorers have no density")
    a = spec.strengths
    sds = np.full((2, spec.count), spec.noise)
    return FExpansionSpec(1, np.stack([-a, a]), sds, np.array([1 - spec.pi, spec.pi]))


def bayes_scores(spec: ScorerSpec | FExpansionSpec, X) -> np.ndarray:
    """Log-odds of class 1 under the exact Bayes posterior (any monotone score works for AUC)."""
    if isinstance(spec, ScorerSpec):
        if spec.strengths is None:
            raise ValueError("scorer strengths must be fixed (ScorerSpec.realize)")
        U = logit(np.asarray(X, dtype=np.float64))
        if spec.noise == 0:
            return U @ spec.strengths
        logs = bayes_log_scores_f_expansion(scorer_as_f_expansion(spec), U)
    else:
        if spec.L != 2:
            raise ValueError("AUC oracle needs a binary spec")
        logs = bayes_log_scores_f_expansion(spec, X)
    return logs[..., 1] - logs[..., 0]


def bayes_auc_oracle(spec: ScorerSpec | FExpansionSpec, n_mc: int, seed) -> tuple[float, float]:
    """Monte-Carlo AUC of the Bayes classifier on fresh data; returns ``(auc, stderr)``."""
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    if isinstance(spec, ScorerSpec):
        if spec.strengths is None:
            raise ValueError("scorer strengths must be fixed (ScorerSpec.realize)")
        task = simulate_task_family(spec, n_mc, seed)
    elif isinstance(spec, FExpansionSpec):
        if spec.L != 2:
            raise ValueError("AUC oracle needs a binary spec")
        task = sample_f_expansion(spec, n_mc, seed)
    else:
        raise TypeError(f"unsupported spec type {type(spec).__name__}")
    n_pos = int(task.y.sum())
    if n_pos in (0, task.n):
        raise ValueError("Monte-Carlo sample drew a single class")
    value = auc(bayes_scores(spec, task.X), task.y)
    return value, auc_stderr(value, n_pos, task.n - n_pos)
