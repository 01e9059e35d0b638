"""Reverse-mode automatic differentiation over dense fp64 arrays.

Small tape-based autograd in the micrograd style: each primitive records its
parents and a backward closure on the produced node, and ``backward`` walks
the implicit tape in reverse topological order. Sparse matrices (scipy CSR)
only ever appear as constants; gradients flow through their dense operands
and, for ``weighted_spmm``, through the per-edge values.

Everything is float64. Set ``DEBUG_CHECK_FINITE = True`` to reject NaN/Inf
forward values as they are produced.
"""

import numpy as np
import scipy.sparse as sp

DEBUG_CHECK_FINITE = False


class Tensor:
    """A node in the computation graph: an fp64 array plus grad bookkeeping."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        if DEBUG_CHECK_FINITE and not np.all(np.isfinite(self.value)):
            raise FloatingPointError("non-finite tensor value")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def item(self):
        return float(self.value)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn):
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += np.reshape(g, t.value.shape)


def backward(loss):
    """Backpropagate from a scalar loss, accumulating into ``.grad``."""
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    # intermediates may hold grads from an earlier backward over a shared
    # graph; only leaves accumulate across calls
    for node in order:
        if node._parents:
            node.grad = None
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.value)
    loss.grad += np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a, b):
    def bwd(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)
    return _make(a.value @ b.value, (a, b), bwd)


def spmm(s, x):
    """Sparse (constant CSR) times dense Tensor."""
    if not sp.issparse(s):
        raise TypeError("spmm expects a scipy sparse matrix as first operand")
    s = s.tocsr()

    def bwd(g):
        _accum(x, s.T @ g)
    return _make(s @ x.value, (x,), bwd)


def weighted_spmm(edge_vals, indptr, indices, shape, x):
    """Multiply a CSR matrix with differentiable per-edge values by dense x.

    ``edge_vals`` are the CSR data entries (a Tensor); the sparsity pattern
    (indptr, indices, shape) is constant. Gradients reach both the edge
    values and x.
    """
    mat = sp.csr_matrix((edge_vals.value, indices, indptr), shape=shape)
    rows = np.repeat(np.arange(shape[0]), np.diff(indptr))

    def bwd(g):
        _accum(x, mat.T @ g)
        _accum(edge_vals, np.einsum("ij,ij->i", g[rows], x.value[indices]))
    return _make(mat @ x.value, (edge_vals, x), bwd)


def add(a, b):
    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))
    return _make(a.value + b.value, (a, b), bwd)


def sub(a, b):
    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, -_unbroadcast(g, b.value.shape))
    return _make(a.value - b.value, (a, b), bwd)


def mul(a, b):
    def bwd(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))
    return _make(a.value * b.value, (a, b), bwd)


def scale(a, c):
    c = float(c)

    def bwd(g):
        _accum(a, g * c)
    return _make(a.value * c, (a,), bwd)


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def relu(x):
    keep = x.value > 0

    def bwd(g):
        _accum(x, g * keep)
    return _make(np.where(keep, x.value, 0.0), (x,), bwd)


def leaky_relu(x, slope=0.2):
    pos = x.value > 0

    def bwd(g):
        _accum(x, g * np.where(pos, 1.0, slope))
    return _make(np.where(pos, x.value, slope * x.value), (x,), bwd)


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.value))

    def bwd(g):
        _accum(x, g * s * (1.0 - s))
    return _make(s, (x,), bwd)


def tanh(x):
    t = np.tanh(x.value)

    def bwd(g):
        _accum(x, g * (1.0 - t * t))
    return _make(t, (x,), bwd)


def row_softmax(x):
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        _accum(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _make(p, (x,), bwd)


def masked_row_softmax(x, mask):
    """Row softmax restricted to ``mask`` (bool array); masked entries are 0.

    Rows with an empty mask come out all-zero.
    """
    mask = np.asarray(mask, dtype=bool)
    neg = np.where(mask, x.value, -np.inf)
    zmax = neg.max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(neg - zmax), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    p = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def bwd(g):
        _accum(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _make(p, (x,), bwd)


def segment_softmax(scores, segments, n_segments):
    """Softmax over groups of entries; ``segments[e]`` is the group of e."""
    segments = np.asarray(segments)
    smax = np.full(n_segments, -np.inf)
    np.maximum.at(smax, segments, scores.value)
    smax = np.where(np.isfinite(smax), smax, 0.0)
    e = np.exp(scores.value - smax[segments])
    denom = np.zeros(n_segments)
    np.add.at(denom, segments, e)
    p = e / denom[segments]

    def bwd(g):
        dot = np.zeros(n_segments)
        np.add.at(dot, segments, g * p)
        _accum(scores, p * (g - dot[segments]))
    return _make(p, (scores,), bwd)


def gather_rows(x, idx):
    idx = np.asarray(idx)

    def bwd(g):
        acc = np.zeros_like(x.value)
        np.add.at(acc, idx, g)
        _accum(x, acc)
    return _make(x.value[idx], (x,), bwd)


def concat_cols(a, b):
    na = a.value.shape[1]

    def bwd(g):
        _accum(a, g[:, :na])
        _accum(b, g[:, na:])
    return _make(np.concatenate([a.value, b.value], axis=1), (a, b), bwd)


def dropout(x, mask):
    """Apply a pre-drawn keep mask (already scaled by 1/keep_prob)."""
    mask = np.asarray(mask, dtype=np.float64)

    def bwd(g):
        _accum(x, g * mask)
    return _make(x.value * mask, (x,), bwd)


def cross_entropy_with_logits(logits, labels, idx=None):
    """Mean negative log-likelihood of integer ``labels`` under row softmax.

    ``idx`` restricts the mean to a subset of rows.
    """
    labels = np.asarray(labels)
    if idx is None:
        idx = np.arange(logits.value.shape[0])
    idx = np.asarray(idx)
    z = logits.value[idx]
    y = labels[idx]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    nll = lse - z[np.arange(len(idx)), y]
    p = np.exp(z - zmax)
    p /= p.sum(axis=1, keepdims=True)

    def bwd(g):
        d = p.copy()
        d[np.arange(len(idx)), y] -= 1.0
        acc = np.zeros_like(logits.value)
        np.add.at(acc, idx, d * (float(g) / len(idx)))
        _accum(logits, acc)
    return _make(nll.mean(), (logits,), bwd)


def binary_cross_entropy_with_logits(logits, targets, idx=None):
    """Mean BCE of 0/1 targets against 1-d logits."""
    targets = np.asarray(targets, dtype=np.float64)
    if idx is None:
        idx = np.arange(logits.value.shape[0])
    idx = np.asarray(idx)
    z = logits.value.reshape(-1)[idx]
    t = targets[idx]
    # stable: log(1+exp(-|z|)) + max(z,0) - z*t
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    s = 1.0 / (1.0 + np.exp(-z))

    def bwd(g):
        acc = np.zeros(logits.value.size)
        np.add.at(acc, idx, (s - t) * (float(g) / len(idx)))
        _accum(logits, acc.reshape(logits.value.shape))
    return _make(loss.mean(), (logits,), bwd)


def squared_norm(x):
    def bwd(g):
        _accum(x, 2.0 * float(g) * x.value)
    return _make((x.value ** 2).sum(), (x,), bwd)


def inner_product(a, b):
    def bwd(g):
        _accum(a, float(g) * b.value)
        _accum(b, float(g) * a.value)
    return _make((a.value * b.value).sum(), (a, b), bwd)


def sum_all(x):
    def bwd(g):
        _accum(x, np.full_like(x.value, float(g)))
    return _make(x.value.sum(), (x,), bwd)


def mean_all(x):
    n = x.value.size

    def bwd(g):
        _accum(x, np.full_like(x.value, float(g) / n))
    return _make(x.value.mean(), (x,), bwd)


def absolute(x):
    sign = np.sign(x.value)  # derivative at 0 taken as 0

    def bwd(g):
        _accum(x, g * sign)
    return _make(np.abs(x.value), (x,), bwd)


# ---------------------------------------------------------------------------
# optimizer and gradient checking
# ---------------------------------------------------------------------------

class Adam:
    """Standard Adam with bias correction; state lives on the instance."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, weight_decay=0.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if weight_decay:
                g = g + weight_decay * p.value
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional single Adam update; ``state`` is (t, [m...], [v...]) or None."""
    if state is None:
        state = (0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    t, ms, vs = state
    t += 1
    out = []
    for p, g, m, v in zip(params, grads, ms, vs):
        m[:] = beta1 * m + (1 - beta1) * g
        v[:] = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out, (t, ms, vs)


def grad_check(f, params, eps=1e-5):
    """Compare analytic grads of scalar f(params) against central differences.

    Returns {param_name_or_index: max relative error}. Points where the
    forward value sits exactly on a relu kink are the caller's concern;
    inputs here are generic by construction in the tests.
    """
    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
                for p in params]
    report = {}
    for k, p in enumerate(params):
        num = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().value)
            flat[i] = orig - eps
            fm = float(f().value)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * eps)
        denom = np.abs(analytic[k]) + np.abs(num) + 1e-12
        err = float((np.abs(analytic[k] - num) / denom).max()) if flat.size else 0.0
        report[p.name or k] = err
    return report
