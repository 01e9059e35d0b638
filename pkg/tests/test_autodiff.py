"""Numerics: primitive correctness, backward soundness, Adam, grad_check."""

import numpy as np
import scipy.sparse as sp

import gnnaudit.autodiff as ad


def rand_gen(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# primitive forward values
# ---------------------------------------------------------------------------

def test_sigmoid_at_zero():
    assert ad.sigmoid(ad.Tensor([0.0])).value[0] == 0.5


def test_row_softmax_uniform_and_sums():
    out = ad.row_softmax(ad.Tensor([[0.0, 0.0]])).value
    np.testing.assert_allclose(out, [[0.5, 0.5]])
    gen = rand_gen(3)
    p = ad.row_softmax(ad.Tensor(gen.normal(size=(7, 5)))).value
    np.testing.assert_allclose(p.sum(axis=1), np.ones(7), atol=1e-12)


def test_masked_row_softmax_masked_entries_zero():
    gen = rand_gen(4)
    x = ad.Tensor(gen.normal(size=(4, 6)))
    mask = gen.random((4, 6)) < 0.5
    mask[2] = False   # empty row
    p = ad.masked_row_softmax(x, mask).value
    assert np.all(p[~mask] == 0.0)
    sums = p.sum(axis=1)
    np.testing.assert_allclose(sums[mask.any(axis=1)], 1.0, atol=1e-12)
    assert sums[2] == 0.0


def test_spmm_matches_dense_oracle():
    gen = rand_gen(1)
    for _ in range(10):
        S = sp.random(6, 6, density=0.4, random_state=gen, format="csr")
        X = gen.normal(size=(6, 3))
        out = ad.spmm(S, ad.Tensor(X)).value
        np.testing.assert_allclose(out, S.toarray() @ X, atol=1e-12)


def test_segment_softmax_groups_sum_to_one():
    gen = rand_gen(2)
    segments = np.array([0, 0, 1, 1, 1, 3])
    p = ad.segment_softmax(ad.Tensor(gen.normal(size=6)), segments, 4).value
    for s in (0, 1, 3):
        np.testing.assert_allclose(p[segments == s].sum(), 1.0, atol=1e-12)


def test_cross_entropy_matches_manual():
    logits = np.array([[2.0, -1.0, 0.5], [0.0, 0.0, 0.0]])
    labels = np.array([0, 2])
    loss = ad.cross_entropy_with_logits(ad.Tensor(logits), labels).value
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    manual = -np.log(p[np.arange(2), labels]).mean()
    np.testing.assert_allclose(float(loss), manual, atol=1e-12)


def test_binary_cross_entropy_matches_manual():
    z = np.array([1.5, -0.3, 0.0])
    t = np.array([1.0, 0.0, 1.0])
    loss = ad.binary_cross_entropy_with_logits(ad.Tensor(z), t).value
    s = 1 / (1 + np.exp(-z))
    manual = -(t * np.log(s) + (1 - t) * np.log(1 - s)).mean()
    np.testing.assert_allclose(float(loss), manual, atol=1e-12)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_squared_norm_gradient_analytic():
    W = ad.Tensor(np.eye(2), requires_grad=True)
    loss = ad.squared_norm(W)
    ad.backward(loss)
    np.testing.assert_allclose(W.grad, 2.0 * np.eye(2))


def test_gradient_of_unused_parameter_is_none():
    W = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    U = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ad.squared_norm(W)
    ad.backward(loss)
    assert U.grad is None   # treated as zero


def test_nonscalar_loss_rejected():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    try:
        ad.backward(x)
    except ValueError as exc:
        assert "scalar" in str(exc)
    else:
        raise AssertionError("expected ValueError")


def test_repeated_backward_over_shared_graph_is_clean():
    # a second backward over the same graph must not inherit stale
    # intermediate gradients
    W = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    h = W @ ad.Tensor(np.ones((2, 2)))
    loss = ad.squared_norm(h)
    ad.zero_grads([W])
    ad.backward(loss)
    g1 = W.grad.copy()
    ad.zero_grads([W])
    ad.backward(loss)
    np.testing.assert_array_equal(W.grad, g1)


def test_three_layer_composition_matches_finite_differences():
    gen = rand_gen(7)
    W1 = ad.Tensor(gen.normal(size=(4, 5)), requires_grad=True, name="W1")
    W2 = ad.Tensor(gen.normal(size=(5, 3)), requires_grad=True, name="W2")
    W3 = ad.Tensor(gen.normal(size=(3, 1)), requires_grad=True, name="W3")
    X = ad.Tensor(gen.normal(size=(6, 4)))

    def f():
        h = ad.tanh(X @ W1)
        h = ad.relu(h @ W2 + ad.Tensor(0.1))
        return ad.squared_norm(ad.sigmoid(h @ W3))

    report = ad.grad_check(f, [W1, W2, W3])
    assert max(report.values()) <= 1e-4, report


def test_grad_check_linear_is_exact():
    W = ad.Tensor(np.array([[1.0, 2.0]]), requires_grad=True, name="W")
    c = ad.Tensor(np.array([[3.0], [4.0]]))
    report = ad.grad_check(lambda: ad.sum_all(W @ c), [W])
    assert report["W"] <= 1e-9


def test_weighted_spmm_gradients():
    gen = rand_gen(9)
    S = sp.random(5, 5, density=0.5, random_state=gen, format="csr")
    S.data[:] = gen.normal(size=S.nnz)
    vals = ad.Tensor(S.data.copy(), requires_grad=True, name="vals")
    X = ad.Tensor(gen.normal(size=(5, 3)), requires_grad=True, name="X")

    def f():
        return ad.squared_norm(ad.weighted_spmm(vals, S.indptr, S.indices,
                                                S.shape, X))

    report = ad.grad_check(f, [vals, X])
    assert max(report.values()) <= 1e-4, report


def test_broadcast_bias_gradient():
    gen = rand_gen(11)
    b = ad.Tensor(np.zeros((1, 3)), requires_grad=True, name="b")
    X = ad.Tensor(gen.normal(size=(4, 3)))
    report = ad.grad_check(lambda: ad.squared_norm(X + b), [b])
    assert report["b"] <= 1e-6


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = ad.Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_bias_corrected():
    # constant g=1, lr=0.1: mhat = vhat = 1, step = -lr / (1 + eps)
    p = ad.Tensor(np.array(0.0), requires_grad=True)
    opt = ad.Adam([p], lr=0.1)
    p.grad = np.array(1.0)
    opt.step()
    np.testing.assert_allclose(float(p.value), -0.1, rtol=1e-6)


def test_adam_step_functional_matches_class():
    gen = rand_gen(13)
    v0 = gen.normal(size=(3, 2))
    g = gen.normal(size=(3, 2))
    p = ad.Tensor(v0.copy(), requires_grad=True)
    opt = ad.Adam([p], lr=0.05)
    p.grad = g.copy()
    opt.step()
    out, _ = ad.adam_step([v0.copy()], [g.copy()], None, lr=0.05)
    np.testing.assert_allclose(p.value, out[0], atol=1e-15)


def test_adam_deterministic():
    def run():
        p = ad.Tensor(np.array([0.3, 0.7]), requires_grad=True)
        opt = ad.Adam([p], lr=0.02)
        for i in range(20):
            p.grad = np.array([np.sin(i), np.cos(i)])
            opt.step(weight_decay=1e-3)
        return p.value.copy()

    np.testing.assert_array_equal(run(), run())
