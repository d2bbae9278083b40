import numpy as np
import pytest

from den.data import Task
from den.embedding import EmptyClass
from den.model import (
    ModelConfig,
    bce_loss,
    build_model,
    den_forward,
    episode,
    fresh_bank,
    param_count,
    predict_labels,
    softmax_ce_loss,
    split_params,
)

from _gradcheck import numeric_grad, rel_error


def _support(rng, n, d, L=2):
    y = rng.integers(0, L, size=n)
    y[:L] = np.arange(L)
    return Task(rng.uniform(size=(n, d)), y, L)


def _tuned(mode="binary", d=3, seed=0, **kw):
    rng = np.random.default_rng(seed)
    L = 2 if mode == "binary" else 3
    m = build_model(ModelConfig(mode=mode, K=4, H=6, L=2, **kw), seed=seed)
    sup = _support(rng, 20, d, L)
    if m.config.use_plf:
        m.bank = fresh_bank(m, sup.X)
    return m, sup, rng.uniform(size=(7, d))


class TestLosses:
    def test_bce_at_zero(self):
        loss, _ = bce_loss(np.array([0.0]), np.array([1]))
        assert loss == pytest.approx(np.log(2), abs=1e-15)

    def test_bce_stable(self):
        loss, g = bce_loss(np.array([1e4, -1e4]), np.array([1, 0]))
        assert np.isfinite(loss) and loss < 1e-12 and np.all(np.isfinite(g))
        loss, _ = bce_loss(np.array([-1e4]), np.array([1]))
        assert loss == pytest.approx(1e4)

    def test_bce_length(self):
        with pytest.raises(ValueError):
            bce_loss(np.zeros(3), np.zeros(2))

    def test_softmax_ce_uniform(self):
        loss, _ = softmax_ce_loss(np.zeros((4, 5)), np.array([0, 1, 2, 4]))
        assert loss == pytest.approx(np.log(5), abs=1e-15)

    def test_softmax_ce_confident(self):
        s = np.zeros((2, 3))
        s[0, 1] = s[1, 2] = 1e4
        loss, g = softmax_ce_loss(s, np.array([1, 2]))
        assert loss < 1e-12 and np.all(np.isfinite(g))

    @pytest.mark.parametrize("seed", range(5))
    def test_loss_gradients(self, seed):
        rng = np.random.default_rng(seed)
        q, y = rng.normal(size=9) * 3, rng.integers(0, 2, size=9)
        g = bce_loss(q, y)[1]
        assert rel_error(g, numeric_grad(lambda: bce_loss(q, y)[0], q)) < 1e-4
        S, t = rng.normal(size=(6, 4)) * 3, rng.integers(0, 4, size=6)
        G = softmax_ce_loss(S, t)[1]
        assert rel_error(G, numeric_grad(lambda: softmax_ce_loss(S, t)[0], S)) < 1e-4


class TestForward:
    @pytest.mark.parametrize("mode", ["binary", "multiclass"])
    def test_deterministic(self, mode):
        m, sup, Xq = _tuned(mode)
        a, b = den_forward(m, sup, Xq), den_forward(m, sup, Xq)
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("mode", ["binary", "multiclass"])
    def test_support_permutation(self, mode):
        m, sup, Xq = _tuned(mode, seed=4)
        perm = np.random.default_rng(9).permutation(sup.n)
        a = den_forward(m, sup, Xq)
        b = den_forward(m, (sup.X[perm], sup.y[perm], sup.L), Xq)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_output_shapes(self):
        m, sup, Xq = _tuned("multiclass")
        p = den_forward(m, sup, Xq)
        assert p.shape == (7, 3)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        m, sup, Xq = _tuned("binary")
        assert den_forward(m, sup, Xq).shape == (7,)

    def test_wrong_query_width(self):
        m, sup, _ = _tuned()
        with pytest.raises(ValueError):
            den_forward(m, sup, np.ones((2, 4)))

    def test_bank_width_mismatch(self):
        m, sup, Xq = _tuned()
        m.bank = fresh_bank(m, np.random.default_rng(0).uniform(size=(5, 2)))
        with pytest.raises(ValueError):
            den_forward(m, sup, Xq)

    def test_missing_class(self):
        m, sup, Xq = _tuned()
        with pytest.raises(EmptyClass):
            den_forward(m, (sup.X, np.zeros(sup.n, dtype=int), 2), Xq)
        m, sup, Xq = _tuned("multiclass")
        y = sup.y.copy()
        y[y == 2] = 0
        with pytest.raises(EmptyClass):
            den_forward(m, (sup.X, y, 3), Xq)

    def test_threshold_ties_to_class_zero(self):
        m, sup, Xq = _tuned()
        logits = den_forward(m, sup, Xq)
        np.testing.assert_array_equal(predict_labels(m, sup, Xq), (logits > 0).astype(int))

    def test_without_plf_ignores_bank(self):
        m, sup, Xq = _tuned(use_plf=False)
        assert m.bank is None
        assert den_forward(m, sup, Xq).shape == (7,)


def _flat_check(mode, seed, tol):
    rng = np.random.default_rng(seed)
    m = build_model(ModelConfig(mode=mode, K=3, H=4, L=2, r=2), seed=seed)
    L = 2 if mode == "binary" else 3
    sup, qry = _support(rng, 10, 2, L), _support(rng, 8, 2, L)
    m.bank = fresh_bank(m, sup.X)
    for p in m.bank.plfs:
        p.alpha[:] = rng.uniform(size=p.K)
    for name, arr in m.shared_params().items():
        if ".b" in name:
            arr[:] = rng.normal(size=arr.shape) * 0.1

    def loss():
        return episode(m, sup.X, sup.y, qry.X, qry.y, L=L)[1]

    _, _, grads = episode(m, sup.X, sup.y, qry.X, qry.y, L=L, grad=True)
    params = {**m.shared_params(), **m.bank.named_params("bank")}
    assert set(grads) == set(params)
    for name, arr in params.items():
        assert rel_error(grads[name], numeric_grad(loss, arr), floor=1e-6) < tol, name


class TestEndToEndGradient:
    @pytest.mark.parametrize("seed", range(3))
    def test_binary(self, seed):
        _flat_check("binary", seed, 1e-3)

    @pytest.mark.parametrize("seed", range(3))
    def test_multiclass(self, seed):
        _flat_check("multiclass", seed, 1e-3)


class TestParams:
    @pytest.mark.parametrize("mode", ["binary", "multiclass"])
    def test_partition(self, mode):
        m, _, _ = _tuned(mode)
        dep, indep = split_params(m)
        assert set(dep).isdisjoint(indep)
        assert all(k.startswith("bank.") for k in dep)
        ids = [id(a) for a in list(dep.values()) + list(indep.values())]
        assert len(set(ids)) == len(ids)
        total = sum(a.size for a in dep.values()) + sum(a.size for a in indep.values())
        assert total == param_count(m)["true_total"]

    def test_reference_counts(self):
        m = build_model(ModelConfig(K=10, H=16, L=3, r=2), seed=0)
        c = param_count(m, d=7)
        assert c["transform"] == 70
        assert c["embedding_formula"] == 544
        assert c["classification_formula"] == 1600

    @pytest.mark.parametrize("r,H,L", [(1, 3, 1), (2, 16, 3), (3, 5, 2), (2, 7, 4)])
    def test_formulas_count_weights(self, r, H, L):
        m = build_model(ModelConfig(K=4, H=H, L=L, r=r), seed=0)
        c = param_count(m, d=3)
        assert c["embedding_formula"] == m.h.n_params(with_biases=False)
        weights = m.head.phi.n_params(with_biases=False) + m.head.psi.n_params(with_biases=False)
        assert c["classification_formula"] == weights
