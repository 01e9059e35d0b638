"""Fairness countermeasures: edge weighting, embedding projection,
adversarial debiasing, gradient-projection fair learning, compositional
filters, and the two edge-weight combinations.

Every method is a :class:`~gnnaudit.models.GNNClassifier` subclass (or a
plain classifier fed FairWalk weights), and every method with its knobs at
zero delegates each training step to the baseline implementation, so the
zero-knob trajectory is bit-identical to the baseline at equal seed.
"""

import numpy as np

from . import autodiff as ad
from . import rng
from .models import GNNClassifier

PROJ_EPS = 1e-12


# ---------------------------------------------------------------------------
# FairWalk-style edge weights
# ---------------------------------------------------------------------------

def _neighbor_group_counts(graph, attr):
    """Per directed edge (v->u): (#groups among N(v), #neighbors of v in u's group)."""
    a = graph.adjacency
    attr = np.asarray(attr)
    n_groups_present = np.zeros(a.nnz, dtype=np.int64)
    same_group_count = np.zeros(a.nnz, dtype=np.int64)
    indptr, indices = a.indptr, a.indices
    for v in range(graph.n_nodes):
        lo, hi = indptr[v], indptr[v + 1]
        if lo == hi:
            continue
        g = attr[indices[lo:hi]]
        vals, counts = np.unique(g, return_counts=True)
        lookup = dict(zip(vals.tolist(), counts.tolist()))
        n_groups_present[lo:hi] = len(vals)
        same_group_count[lo:hi] = [lookup[x] for x in g.tolist()]
    return n_groups_present, same_group_count


def fairwalk_weights(graph, attr):
    """Per-edge weights giving each neighbor group equal total mass.

    For node v with groups G(v) among its neighbors, the edge to a neighbor
    u gets 1 / (|G(v)| * |N_{g(u)}(v)|): weights out of v sum to 1 and each
    present group receives mass 1/|G(v)|. Isolated nodes have no edges and
    hence no weights.
    """
    g, ng = _neighbor_group_counts(graph, attr)
    w = np.ones(graph.adjacency.nnz)
    mask = g > 0
    w[mask] = 1.0 / (g[mask] * ng[mask])
    return w


def fairwalk_conv_weights(graph, attr):
    """FairWalk weights rescaled by out-degree for use in the convolution.

    The per-node rescale deg(v) keeps the weighted degree at its unweighted
    scale, so a single-group attribute yields weights exactly 1 and the
    weighted model reduces to the baseline bit-for-bit.
    """
    g, ng = _neighbor_group_counts(graph, attr)
    deg = np.diff(graph.adjacency.indptr)
    degv = np.repeat(deg, deg)
    w = np.ones(graph.adjacency.nnz)
    mask = g > 0
    w[mask] = degv[mask] / (g[mask] * ng[mask])
    return w


# ---------------------------------------------------------------------------
# embedding projection
# ---------------------------------------------------------------------------

def group_basis(attr, drop_empty=True):
    """Orthonormal basis S of the centered group-indicator subspace."""
    attr = np.asarray(attr)
    groups = np.unique(attr)
    cols = []
    for g in groups:
        ind = (attr == g).astype(np.float64)
        if drop_empty and ind.sum() == 0:
            continue
        cols.append(ind - ind.mean())
    M = np.column_stack(cols) if cols else np.zeros((len(attr), 0))
    if M.shape[1] == 0:
        return M
    q, r = np.linalg.qr(M)
    keep = np.abs(np.diag(r)) > 1e-10
    return q[:, keep]


def project_embeddings(Z, attr):
    """Remove the group-indicator subspace from embedding columns: Z - S S^T Z."""
    S = group_basis(attr)
    if S.shape[1] == 0:
        return np.asarray(Z, dtype=np.float64).copy()
    Z = np.asarray(Z, dtype=np.float64)
    return Z - S @ (S.T @ Z)


class EmbedProjClassifier(GNNClassifier):
    """GNN whose embeddings are projected off the sensitive subspace at every
    forward pass, during training and at evaluation."""

    def _setup(self, graph, split, edge_weights):
        super()._setup(graph, split, edge_weights)
        self._S = ad.Tensor(group_basis(graph.fairness_attr))

    def _transform_embedding(self, Z):
        if self._S.value.shape[1] == 0:
            return Z
        return Z - self._S @ (ad.Tensor(self._S.value.T) @ Z)


# ---------------------------------------------------------------------------
# small MLP used by adversaries, filters and discriminators
# ---------------------------------------------------------------------------

class _MLP:
    def __init__(self, gen, dims, name, zero_last=False):
        self.params = {}
        for l in range(len(dims) - 1):
            limit = np.sqrt(6.0 / (dims[l] + dims[l + 1]))
            W = gen.uniform(-limit, limit, size=(dims[l], dims[l + 1]))
            if zero_last and l == len(dims) - 2:
                W = np.zeros_like(W)
            self.params[f"{name}_W{l}"] = ad.Tensor(W, requires_grad=True, name=f"{name}_W{l}")
            self.params[f"{name}_b{l}"] = ad.Tensor(np.zeros((1, dims[l + 1])),
                                                    requires_grad=True, name=f"{name}_b{l}")
        self.name = name
        self.n_layers = len(dims) - 1

    def forward(self, X):
        H = X
        for l in range(self.n_layers):
            H = H @ self.params[f"{self.name}_W{l}"] + self.params[f"{self.name}_b{l}"]
            if l < self.n_layers - 1:
                H = ad.relu(H)
        return H

    def tensors(self):
        return list(self.params.values())


def _val_fairness_gap(model):
    """Validation statistical-parity gap of the current parameters."""
    from .evaluation import statistical_parity_diff
    _, logits = model._forward()
    preds = np.argmax(logits.value, axis=1)
    return statistical_parity_diff(preds, model.graph_.fairness_attr,
                                   model.split_.val)


def _column(P, j):
    """Differentiable extraction of column j as (n, 1)."""
    n_cols = P.value.shape[1]
    e = np.zeros((n_cols, 1))
    e[j, 0] = 1.0
    return P @ ad.Tensor(e)


def _covariance(u, v):
    """|cov| of two (n,1) tensors over their rows."""
    uc = u - ad.mean_all(u)
    vc = v - ad.mean_all(v)
    return ad.absolute(ad.mean_all(ad.mul(uc, vc)))


# ---------------------------------------------------------------------------
# adversarial debiasing
# ---------------------------------------------------------------------------

class AdvDebiasClassifier(GNNClassifier):
    """Alternating adversarial debiasing.

    The model minimizes L_cls - alpha * L_adv + beta * |cov(s_hat, y_hat)|
    where the adversary (a 2-layer MLP on the embeddings) predicts the
    fairness group and s_hat / y_hat are the adversary / task posteriors.
    One adversary step per model step.
    """

    def __init__(self, alpha=1.0, beta=0.0, adv_hidden=16, adv_lr=None, **kw):
        super().__init__(**kw)
        self.alpha = alpha
        self.beta = beta
        self.adv_hidden = adv_hidden
        self.adv_lr = adv_lr

    def _setup(self, graph, split, edge_weights):
        super()._setup(graph, split, edge_weights)
        self._attr = np.asarray(graph.fairness_attr)
        self._attr_classes = int(self._attr.max()) + 1
        gen = rng.stream(self.seed, "adversary")
        self._adv = _MLP(gen, [self.hidden_dims[-1], self.adv_hidden,
                               self._attr_classes], "adv")
        self._adv_opt = ad.Adam(self._adv.tensors(),
                                lr=self.lr if self.adv_lr is None else self.adv_lr)

    def _train_step(self, epoch):
        if self.alpha == 0 and self.beta == 0:
            return super()._train_step(epoch)
        train = self.split_.train
        # model step
        ad.zero_grads(self._opt.params)
        ad.zero_grads(self._adv.tensors())
        Z, logits = self._forward(self._draw_masks())
        loss = ad.cross_entropy_with_logits(logits, self.graph_.labels, train)
        adv_logits = self._adv.forward(Z)
        adv_loss = ad.cross_entropy_with_logits(adv_logits, self._attr, train)
        loss = loss + ad.scale(adv_loss, -self.alpha)
        if self.beta:
            y_hat = ad.gather_rows(_column(ad.row_softmax(logits), min(1, self.n_classes_ - 1)), train)
            s_probs = ad.row_softmax(adv_logits)
            cov = None
            for g in range(1, self._attr_classes):
                term = _covariance(ad.gather_rows(_column(s_probs, g), train), y_hat)
                cov = term if cov is None else cov + term
            if cov is not None:
                loss = loss + ad.scale(cov, self.beta)
        ad.backward(loss)
        self._opt.step(weight_decay=self.weight_decay)
        # adversary step on frozen embeddings
        ad.zero_grads(self._adv.tensors())
        z_const = ad.Tensor(Z.value)
        a_loss = ad.cross_entropy_with_logits(self._adv.forward(z_const), self._attr, train)
        ad.backward(a_loss)
        self._adv_opt.step()
        return float(loss.value)

    def _fair_selection_active(self):
        return self.alpha != 0 or self.beta != 0

    def _epoch_metrics(self):
        return {"val_gap": _val_fairness_gap(self)} if self._fair_selection_active() else {}

    def adversary_accuracy(self, nodes):
        Z, _ = self._forward()
        pred = np.argmax(self._adv.forward(ad.Tensor(Z.value)).value[nodes], axis=1)
        return float(np.mean(pred == self._attr[nodes]))


# ---------------------------------------------------------------------------
# fair learning via gradient projection
# ---------------------------------------------------------------------------

class FairLearnClassifier(GNNClassifier):
    """Predictor/adversary training with per-tensor gradient surgery.

    Per parameter tensor W: g = gP - proj_{gA}(gP) - alpha * gA, where gP is
    the task-loss gradient and gA the adversary-loss gradient through the
    task posterior. Mode "par" feeds the adversary the task posterior alone;
    "eoo" appends the true label and restricts the adversary loss to
    positive-label nodes.

    The surgical update is applied as a plain gradient-descent step (an
    adaptive optimizer would renormalize the adversary-ascent term to full
    step size and collapse the predictor); with a vanishing adversary
    gradient it is exactly a gradient-descent step on the task loss.
    """

    def __init__(self, alpha=1.0, fair_mode="par", adv_hidden=8, adv_lr=None,
                 sgd_lr=0.5, **kw):
        super().__init__(**kw)
        self.alpha = alpha
        self.fair_mode = fair_mode
        self.adv_hidden = adv_hidden
        self.adv_lr = adv_lr
        self.sgd_lr = sgd_lr

    def _setup(self, graph, split, edge_weights):
        super()._setup(graph, split, edge_weights)
        self._attr = np.asarray(graph.fairness_attr)
        groups = np.unique(self._attr)
        self._group_targets = ([(self._attr == groups[1]).astype(np.float64)]
                               if len(groups) == 2 else
                               [(self._attr == g).astype(np.float64) for g in groups])
        in_dim = 1 if self.fair_mode == "par" else 2
        gen = rng.stream(self.seed, "fair-adversary")
        self._advs = [_MLP(gen, [in_dim, self.adv_hidden, 1], f"fladv{i}")
                      for i in range(len(self._group_targets))]
        self._adv_opts = [ad.Adam(a.tensors(),
                                  lr=self.lr if self.adv_lr is None else self.adv_lr)
                          for a in self._advs]
        if self.fair_mode == "eoo":
            pos = self.split_.train[graph.labels[self.split_.train] == 1]
            if len(pos) == 0:
                raise ValueError("eoo mode requires positive-class train nodes")
            self._adv_nodes = pos
        else:
            self._adv_nodes = self.split_.train

    def _adv_input(self, y_hat):
        if self.fair_mode == "par":
            return y_hat
        y_col = ad.Tensor((self.graph_.labels == 1).astype(np.float64)[:, None])
        return ad.concat_cols(y_hat, y_col)

    def _train_step(self, epoch):
        if self.alpha == 0:
            return super()._train_step(epoch)
        train = self.split_.train
        model_params = self._opt.params

        # task gradient
        ad.zero_grads(model_params)
        Z, logits = self._forward(self._draw_masks())
        task_loss = ad.cross_entropy_with_logits(logits, self.graph_.labels, train)
        ad.backward(task_loss)
        g_task = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
                  for p in model_params]

        # adversary gradient through the positive-class posterior (a bounded
        # stand-in for the task logit; the raw logit saturates the adversary)
        y_hat = _column(ad.row_softmax(logits), min(1, self.n_classes_ - 1))
        adv_in = self._adv_input(y_hat)
        losses = []
        for a, target in zip(self._advs, self._group_targets):
            losses.append(ad.binary_cross_entropy_with_logits(
                _flat(a.forward(adv_in)), target, self._adv_nodes))
        worst = int(np.argmax([float(l.value) for l in losses]))
        ad.zero_grads(model_params)
        for a in self._advs:
            ad.zero_grads(a.tensors())
        ad.backward(losses[worst])
        g_adv = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
                 for p in model_params]

        # gradient surgery, per tensor; plain descent step
        for p, gp, ga in zip(model_params, g_task, g_adv):
            na = np.sqrt((ga * ga).sum())
            if na > PROJ_EPS:
                bhat = ga / na
                gp = gp - (gp * bhat).sum() * bhat
            g = gp - self.alpha * ga + self.weight_decay * p.value
            p.value -= self.sgd_lr * g

        # adversary step on detached posterior
        y_det = ad.Tensor(y_hat.value)
        adv_in_det = self._adv_input(y_det)
        for a, opt, target in zip(self._advs, self._adv_opts, self._group_targets):
            ad.zero_grads(a.tensors())
            l = ad.binary_cross_entropy_with_logits(
                _flat(a.forward(adv_in_det)), target, self._adv_nodes)
            ad.backward(l)
            opt.step()
        return float(task_loss.value)

    def _fair_selection_active(self):
        return self.alpha != 0

    def _epoch_metrics(self):
        return {"val_gap": _val_fairness_gap(self)} if self._fair_selection_active() else {}


def _flat(t):
    def bwd(g):
        ad._accum(t, g.reshape(t.value.shape))
    return ad._make(t.value.reshape(-1), (t,), bwd)


# ---------------------------------------------------------------------------
# compositional filters
# ---------------------------------------------------------------------------

class FilterClassifier(GNNClassifier):
    """Per-attribute residual filters with adversarial discriminators.

    Each sensitive attribute a gets a residual filter Z' = Z + F_a(Z) and a
    discriminator D_a predicting a from the filtered embedding; filters are
    composed in declaration order. Model loss is L_cls - lam * sum_a L_{D_a}
    (the model maximizes discriminator loss); discriminators train on their
    own loss against detached embeddings.
    """

    def __init__(self, lam=1.0, attrs=("fairness",), filter_hidden=16, **kw):
        super().__init__(**kw)
        self.lam = lam
        self.attrs = tuple(attrs)
        self.filter_hidden = filter_hidden

    def _attr_values(self, name):
        return np.asarray({"fairness": self.graph_.fairness_attr,
                           "privacy": self.graph_.privacy_attr}[name])

    def _setup(self, graph, split, edge_weights):
        super()._setup(graph, split, edge_weights)
        d = self.hidden_dims[-1]
        gen_f = rng.stream(self.seed, "filter")
        gen_d = rng.stream(self.seed, "discriminator")
        self._filters = [_MLP(gen_f, [d, self.filter_hidden, d], f"filt_{a}", zero_last=True)
                         for a in self.attrs]
        self._discs = []
        for a in self.attrs:
            k = int(self._attr_values(a).max()) + 1
            self._discs.append(_MLP(gen_d, [d, self.filter_hidden, k], f"disc_{a}"))
        if self.lam != 0:
            # filters train with the model
            extra = [t for f in self._filters for t in f.tensors()]
            self._opt = ad.Adam(list(self.params_.values()) + extra, lr=self.lr)
        self._disc_opts = [ad.Adam(dnet.tensors(), lr=self.lr) for dnet in self._discs]

    def _transform_embedding(self, Z):
        if self.lam == 0:
            return Z
        for f in self._filters:
            Z = Z + f.forward(Z)
        return Z

    def _train_step(self, epoch):
        if self.lam == 0:
            return super()._train_step(epoch)
        train = self.split_.train
        ad.zero_grads(self._opt.params)
        for dnet in self._discs:
            ad.zero_grads(dnet.tensors())
        Z, logits = self._forward(self._draw_masks())   # Z already filtered
        loss = ad.cross_entropy_with_logits(logits, self.graph_.labels, train)
        for a, dnet in zip(self.attrs, self._discs):
            d_loss = ad.cross_entropy_with_logits(dnet.forward(Z), self._attr_values(a), train)
            loss = loss + ad.scale(d_loss, -self.lam)
        ad.backward(loss)
        self._opt.step(weight_decay=self.weight_decay)
        # discriminator steps on detached filtered embeddings
        z_const = ad.Tensor(Z.value)
        for a, dnet, opt in zip(self.attrs, self._discs, self._disc_opts):
            ad.zero_grads(dnet.tensors())
            l = ad.cross_entropy_with_logits(dnet.forward(z_const), self._attr_values(a), train)
            ad.backward(l)
            opt.step()
        return float(loss.value)

    def _fair_selection_active(self):
        return self.lam != 0 and "fairness" in self.attrs

    def _epoch_metrics(self):
        return {"val_gap": _val_fairness_gap(self)} if self._fair_selection_active() else {}

    def discriminator_accuracy(self, which, nodes, on_filtered=True):
        filters = self._filters
        if not on_filtered:
            self._filters = []
        Z, _ = self._forward()
        self._filters = filters
        dnet = self._discs[self.attrs.index(which)]
        pred = np.argmax(dnet.forward(ad.Tensor(Z.value)).value[nodes], axis=1)
        return float(np.mean(pred == self._attr_values(which)[nodes]))


class EdgeWeightClassifier(GNNClassifier):
    """Baseline architecture trained on FairWalk convolution weights, with the
    fairness-aware epoch selection shared by the other interventions. With a
    single-group attribute the weights are exactly 1 and every epoch's gap is
    0, so selection (and the whole run) reduces to the baseline."""

    def _fair_selection_active(self):
        return True

    def _epoch_metrics(self):
        return {"val_gap": _val_fairness_gap(self)}


# ---------------------------------------------------------------------------
# dispatcher, including the combined methods
# ---------------------------------------------------------------------------

METHODS = ("none", "adv_debias", "embed_proj", "edge_weight", "filter",
           "fair_learn", "ew_ad", "ew_flpar")


def train_intervention(method, graph, split, model_kw, alpha=0.0, beta=0.0,
                       lam=0.0, fair_mode="par", filter_attrs=("fairness",)):
    """Train one (method, parameter point) and return the fitted classifier."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    weights = None
    if method in ("edge_weight", "ew_ad", "ew_flpar"):
        weights = fairwalk_conv_weights(graph, graph.fairness_attr)
    if method == "none":
        model = GNNClassifier(**model_kw)
    elif method == "edge_weight":
        model = EdgeWeightClassifier(**model_kw)
    elif method in ("adv_debias", "ew_ad"):
        model = AdvDebiasClassifier(alpha=alpha, beta=beta, **model_kw)
    elif method == "embed_proj":
        model = EmbedProjClassifier(**model_kw)
    elif method in ("fair_learn", "ew_flpar"):
        mode = "par" if method == "ew_flpar" else fair_mode
        model = FairLearnClassifier(alpha=alpha, fair_mode=mode, **model_kw)
    elif method == "filter":
        model = FilterClassifier(lam=lam, attrs=filter_attrs, **model_kw)
    return model.fit(graph, split, edge_weights=weights)
