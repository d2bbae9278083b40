"""The composed DEN model and its end-to-end forward/backward pass.

A model is a per-task PLF bank (task dependent) in front of three shared
blocks (task independent): the embedding net ``h``, the label encoder
``v`` (multiclass only) and the classifier nets ``phi``/``psi``.

Binary mode embeds the support batch conditionally on the label and maps
each query to a logit.  Multiclass mode embeds the joint distribution and
scores classes by matching pooled query vectors against pooled support
vectors, returning softmax probabilities.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import (
    ClassifierHead,
    IndexSetPolicy,
    class_mean_matrix,
    enumerate_index_sets,
    pooled_backward,
    pooled_forward,
    sigmoid,
    softmax,
)
from .data import Task
from .embedding import (
    EmptyClass,
    LabelEncoder,
    conditional_backward,
    conditional_forward,
    init_label_encoder,
    joint_backward,
    joint_forward,
    selection_matrix,
)
from .nn import DenseNet, dense_backward, dense_forward, init_params
from .plf import PLFBank, bank_backward, bank_forward, fit_bank

MODES = ("binary", "multiclass")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``K`` keypoints per PLF; ``H`` hidden width and ``L`` number of dense
    layers shared by ``h``, ``phi`` and ``psi``; ``r`` dependency order;
    ``cap`` index-set cap (``None`` means ``d**2``, ``"none"`` disables
    capping); ``L_max`` and ``m`` size the label encoder.
    """

    mode: str = "binary"
    K: int = 10
    H: int = 16
    L: int = 3
    r: int = 2
    cap: int | str | None = None
    L_max: int = 10
    m: int = 4
    use_plf: bool = True
    monotonic: bool = False
    policy_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("K", "H", "L", "r", "L_max", "m"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if isinstance(self.cap, str) and self.cap not in ("none", "d2"):
            raise ValueError(f"cap must be an integer, 'd2', 'none' or null, got {self.cap!r}")

    def policy(self) -> IndexSetPolicy:
        if self.cap is None or self.cap == "d2":
            return IndexSetPolicy(self.r, None, self.policy_seed, cap_square=True)
        if self.cap == "none":
            return IndexSetPolicy(self.r, None, self.policy_seed, cap_square=False)
        return IndexSetPolicy(self.r, int(self.cap), self.policy_seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenModel:
    config: ModelConfig
    h: DenseNet
    head: ClassifierHead
    v: LabelEncoder | None = None
    bank: PLFBank | None = None
    bank_task_id: str | None = None
    train_banks: dict[str, PLFBank] = field(default_factory=dict)
    train_state: object = None

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def policy(self) -> IndexSetPolicy:
        return self.config.policy()

    def index_sets(self, d: int) -> np.ndarray:
        return enumerate_index_sets(d, self.policy)

    def shared_params(self) -> dict[str, np.ndarray]:
        """Task-independent parameters by name; the arrays are live references."""
        params = self.h.named_params("h")
        params.update(self.head.phi.named_params("phi"))
        if self.head.psi is not None:
            params.update(self.head.psi.named_params("psi"))
        if self.v is not None:
            params["v.table"] = self.v.table
        return params

    def assign_shared(self, new: dict[str, np.ndarray]) -> None:
        live = self.shared_params()
        for name, value in new.items():
            live[name][...] = value


def build_model(config: ModelConfig, seed) -> DenModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    H, L, r = config.H, config.L, config.r
    if config.mode == "binary":
        h = init_params([r] + [H] * L, rng)
        width = 2 * H + 1
        v = None
    else:
        h = init_params([r + config.m] + [H] * L, rng)
        width = H
        v = init_label_encoder(config.L_max, config.m, rng)
    phi = init_params([r + width] + [H] * L, rng)
    psi = init_params([H] * L + [1], rng) if config.mode == "binary" else None
    return DenModel(config, h, ClassifierHead(phi, psi), v)


def split_params(model: DenModel, bank: PLFBank | None = None):
    """``(task_dependent, task_independent)`` parameter dicts."""
    bank = model.bank if bank is None else bank
    dependent = bank.named_params("bank") if (bank is not None and model.config.use_plf) else {}
    return dependent, model.shared_params()


def bce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean sigmoid cross-entropy and its gradient w.r.t. the logits."""
    q = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if q.shape != y.shape:
        raise ValueError("logits and labels differ in length")
    n = q.size
    # log(1 + exp(-|q|)) + max(q, 0) - q*y
    per = np.logaddexp(0.0, -np.abs(q)) + np.maximum(q, 0.0) - q * y
    return float(per.mean()), (sigmoid(q) - y) / n


def softmax_ce_loss(scores, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over rows and its gradient w.r.t. the scores."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 2 or s.shape[0] != y.shape[0]:
        raise ValueError("scores must be (n, L) with one label per row")
    n = s.shape[0]
    shifted = s - s.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), y]))
    grad = softmax(s)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def _support_arrays(support):
    if isinstance(support, Task):
        return support.X, support.y, support.L
    X, y = support[0], support[1]
    y = np.asarray(y)
    L = support[2] if len(support) > 2 else int(y.max()) + 1
    return np.asarray(X, dtype=np.float64), y, max(int(L), 2)


def _resolve_bank(model: DenModel, bank, d: int):
    if not model.config.use_plf:
        return None
    bank = model.bank if bank is None else bank
    if bank is None:
        raise ValueError("model has no PLF bank; fine-tune or pass one explicitly")
    if bank.d != d:
        raise ValueError(f"PLF bank has {bank.d} columns, data has {d}")
    return bank


def _transform(bank, X):
    return X if bank is None else bank_forward(bank, X)


def episode(model: DenModel, Xs, ys, Xq, yq=None, L: int | None = None, bank=None, sets=None,
            grad: bool = False):
    """Embed ``(Xs, ys)``, score ``Xq`` and optionally backprop the loss on ``yq``.

    Returns ``(scores, loss, grads)``; binary scores are logits, multiclass
    scores are the raw matching scores (pre-softmax).  ``grads`` maps
    parameter names (``bank.alpha{j}``, ``h.W0``, ...) to arrays.
    """
    Xs = np.asarray(Xs, dtype=np.float64)
    Xq = np.asarray(Xq, dtype=np.float64)
    ys = np.asarray(ys)
    if Xs.ndim != 2 or Xq.ndim != 2 or Xs.shape[1] != Xq.shape[1]:
        raise ValueError(f"support {Xs.shape} and query {Xq.shape} must share a column count")
    d = Xs.shape[1]
    bank = _resolve_bank(model, bank, d)
    if sets is None:
        sets = model.index_sets(d)
    sel = selection_matrix(sets, d)
    Zs, Zq = _transform(bank, Xs), _transform(bank, Xq)
    phi, psi = model.head.phi, model.head.psi

    if model.mode == "binary":
        svec, ec = conditional_forward(model.h, Zs, ys, sets, sel)
        pooled, pc = pooled_forward(phi, Zq, svec, sets, sel)
        q, psic = dense_forward(psi, pooled)
        scores = q[:, 0]
        if yq is None:
            return scores, None, None
        loss, dq = bce_loss(scores, yq)
        if not grad:
            return scores, loss, None
        g_psi, d_pooled = dense_backward(psi, psic, dq[:, None])
        g_phi, dZq, ds = pooled_backward(phi, pc, d_pooled)
        g_h, dZs = conditional_backward(model.h, ec, ds)
        grads = {**g_h.named("h"), **g_phi.named("phi"), **g_psi.named("psi")}
    else:
        if L is None:
            L = int(ys.max()) + 1
        svec, ec = joint_forward(model.h, model.v, Zs, ys, sets, sel)
        Pq, pcq = pooled_forward(phi, Zq, svec, sets, sel)
        Ps, pcs = pooled_forward(phi, Zs, svec, sets, sel)
        M, counts = class_mean_matrix(Ps, ys, L)
        scores = Pq @ M.T
        if yq is None:
            return scores, None, None
        loss, dscores = softmax_ce_loss(scores, yq)
        if not grad:
            return scores, loss, None
        dPq = dscores @ M
        dPs = (dscores.T @ Pq / counts[:, None])[ys]
        g_phi_q, dZq, ds_q = pooled_backward(phi, pcq, dPq)
        g_phi_s, dZs_pool, ds_s = pooled_backward(phi, pcs, dPs)
        g_h, d_table, dZs_emb = joint_backward(model.h, model.v, ec, ds_q + ds_s)
        dZs = dZs_pool + dZs_emb
        grads = {**g_h.named("h"), "v.table": d_table}
        for name, gq in g_phi_q.named("phi").items():
            grads[name] = gq + g_phi_s.named("phi")[name]

    if bank is not None:
        g_q = bank_backward(bank, Xq, dZq)
        g_s = bank_backward(bank, Xs, dZs)
        for j in range(bank.d):
            grads[f"bank.alpha{j}"] = g_q[j] + g_s[j]
    return scores, loss, grads


def check_support(support_y: np.ndarray, L: int, mode: str) -> None:
    counts = np.bincount(np.asarray(support_y), minlength=L)
    needed = 2 if mode == "binary" else L
    for k in range(needed):
        if counts[k] == 0:
            raise EmptyClass(f"support set has no examples of class {k}")


def den_forward(model: DenModel, support, query_X, bank: PLFBank | None = None) -> np.ndarray:
    """Binary: one logit per query row.  Multiclass: ``(n_query, L)`` probabilities."""
    Xs, ys, L = _support_arrays(support)
    query_X = np.asarray(query_X, dtype=np.float64)
    if query_X.ndim != 2 or query_X.shape[1] != Xs.shape[1]:
        raise ValueError(f"query has shape {query_X.shape}, support has {Xs.shape[1]} columns")
    check_support(ys, L, model.mode)
    scores, _, _ = episode(model, Xs, ys, query_X, L=L, bank=bank)
    return scores if model.mode == "binary" else softmax(scores)


def predict_labels(model: DenModel, support, query_X, bank=None) -> np.ndarray:
    out = den_forward(model, support, query_X, bank)
    if model.mode == "binary":
        return (out > 0).astype(np.int64)
    return out.argmax(axis=1)


def fresh_bank(model: DenModel, X) -> PLFBank:
    return fit_bank(X, model.config.K, model.config.monotonic)


def param_count(model: DenModel, d: int | None = None) -> dict[str, int]:
    """Block sizes: the closed-form (bias-free) counts and the true totals.

    ``embedding_formula = r*H + H**2*(L-1)`` and
    ``classification_formula = (r+2)*H + 2*H**2*L`` with ``L`` the layer
    count; ``transform = d*K``.
    """
    c = model.config
    if d is None:
        d = model.bank.d if model.bank is not None else 0
    r, H, L, K = c.r, c.H, c.L, c.K
    shared = model.h.n_params() + model.head.phi.n_params()
    if model.head.psi is not None:
        shared += model.head.psi.n_params()
    if model.v is not None:
        shared += model.v.table.size
    transform = d * K if c.use_plf else 0
    # bank alphas are the only trainable PLF scalars; keypoints are fixed
    bank_true = model.bank.n_params() if (model.bank is not None and c.use_plf) else transform
    return {
        "transform": transform,
        "embedding_formula": r * H + H * H * (L - 1),
        "classification_formula": (r + 2) * H + 2 * H * H * L,
        "embedding_true": model.h.n_params() + (model.v.table.size if model.v is not None else 0),
        "classification_true": shared - model.h.n_params()
        - (model.v.table.size if model.v is not None else 0),
        "true_total": shared + bank_true,
    }
