"""Differentiable models: losses, per-sample gradients, Hessian-vector products.

Supported models are logistic regression and small ReLU MLPs, implemented
directly on float64 numpy arrays. Exact Hessian-vector products use the
R-operator (forward-over-reverse double differentiation); a central-difference
variant is kept for quantifying its truncation error. All operations are pure:
nothing mutates its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .exceptions import NumericError, ShapeError
from .params import ParameterVector, as_flat

KINDS = ("logistic_regression", "mlp")
ACTIVATIONS = ("relu", "identity")
LOSSES = ("cross_entropy", "squared_error")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description. ``layer_widths`` runs input -> output."""

    kind: str
    layer_widths: tuple
    activation: str = "relu"
    loss: str = "cross_entropy"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if len(self.layer_widths) < 2 or any(w <= 0 for w in self.layer_widths):
            raise ValueError("layer_widths must be >= 2 positive integers")
        if self.kind == "logistic_regression" and len(self.layer_widths) != 2:
            raise ValueError("logistic regression has exactly one affine layer")

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    @property
    def input_dim(self):
        return self.layer_widths[0]

    @property
    def output_dim(self):
        return self.layer_widths[-1]


def build_layout(spec):
    """Named block layout matching the packing order W0, b0, W1, b1, ..."""
    layout = {}
    offset = 0
    for l in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[l], spec.layer_widths[l + 1]
        layout[f"W{l}"] = (offset, (fan_out, fan_in))
        offset += fan_out * fan_in
        layout[f"b{l}"] = (offset, (fan_out,))
        offset += fan_out
    return layout, offset


def param_count(spec):
    return build_layout(spec)[1]


def init_params(spec, seed):
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    layout, size = build_layout(spec)
    rng = np.random.default_rng([int(seed), 0x1A17])
    values = np.zeros(size)
    pv = ParameterVector(values, layout)
    for l in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[l], spec.layer_widths[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        pv.block(f"W{l}")[:] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    return pv


def zero_params(spec):
    layout, size = build_layout(spec)
    return ParameterVector(np.zeros(size), layout)


def _unpack(spec, flat):
    """Views (W_l, b_l) into the flat vector, in layer order."""
    Ws, bs = [], []
    offset = 0
    for l in range(spec.n_layers):
        fan_in, fan_out = spec.layer_widths[l], spec.layer_widths[l + 1]
        Ws.append(flat[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in))
        offset += fan_out * fan_in
        bs.append(flat[offset : offset + fan_out])
        offset += fan_out
    return Ws, bs


def _xy(dataset):
    if isinstance(dataset, LabeledDataset):
        return dataset.features, dataset.labels
    X, Y = dataset
    return np.asarray(X, dtype=np.float64).reshape(len(X), -1), np.asarray(Y)


def _targets(spec, Y, n):
    """Canonicalize labels: int class indices for CE, (n, out) floats for SE."""
    if spec.loss == "cross_entropy":
        Y = np.asarray(Y)
        if not np.issubdtype(Y.dtype, np.integer):
            raise ShapeError("cross_entropy labels must be integer class indices")
        if Y.size and (Y.min() < 0 or Y.max() >= spec.output_dim):
            raise ShapeError("class index outside the output range")
        return Y.reshape(n)
    T = np.asarray(Y, dtype=np.float64).reshape(n, -1)
    if T.shape[1] != spec.output_dim:
        raise ShapeError(
            f"squared_error target width {T.shape[1]} != output {spec.output_dim}"
        )
    return T


def _check_inputs(spec, X):
    if X.shape[1] != spec.input_dim:
        raise ShapeError(f"input width {X.shape[1]} != model input {spec.input_dim}")


def _act(spec, z):
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(spec, z):
    if spec.activation == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _forward(spec, flat, X):
    """Returns (Zs, As): pre-activations per layer and inputs to each layer."""
    Ws, bs = _unpack(spec, flat)
    As = [X]
    Zs = []
    for l in range(spec.n_layers):
        z = As[-1] @ Ws[l].T + bs[l]
        Zs.append(z)
        if l < spec.n_layers - 1:
            As.append(_act(spec, z))
    return Zs, As


def _losses_and_delta(spec, logits, targets):
    """Per-sample losses plus the loss gradient w.r.t. the logits."""
    if spec.loss == "cross_entropy":
        zmax = logits.max(axis=1, keepdims=True)
        ez = np.exp(logits - zmax)
        sez = ez.sum(axis=1, keepdims=True)
        lse = np.log(sez[:, 0]) + zmax[:, 0]
        losses = lse - logits[np.arange(len(logits)), targets]
        soft = ez / sez
        delta = soft.copy()
        delta[np.arange(len(logits)), targets] -= 1.0
        return losses, delta, soft
    resid = logits - targets
    losses = 0.5 * (resid**2).sum(axis=1)
    return losses, resid, None


def sample_losses(spec, params, dataset):
    """Per-sample losses for every row of the dataset."""
    X, Y = _xy(dataset)
    _check_inputs(spec, X)
    flat = as_flat(params)
    Zs, _ = _forward(spec, flat, X)
    targets = _targets(spec, Y, len(X))
    losses, _, _ = _losses_and_delta(spec, Zs[-1], targets)
    if not np.all(np.isfinite(losses)):
        raise NumericError("non-finite loss value")
    return losses


def per_sample_loss(spec, params, x, y):
    return float(sample_losses(spec, params, ([x], [y]))[0])


def mean_loss(spec, params, dataset, weights=None):
    losses = sample_losses(spec, params, dataset)
    if weights is None:
        return float(losses.mean())
    return float(np.dot(np.asarray(weights, dtype=np.float64), losses))


def _backprop_pack(spec, flat, Zs, As, delta, weights=None, per_sample=False):
    """Reverse pass. Packs gradients into flat vectors in layout order.

    With ``per_sample`` returns an (n, P) matrix of per-sample gradients;
    otherwise the weighted sum (weights default to all ones).
    """
    Ws, _ = _unpack(spec, flat)
    n = len(delta)
    P = flat.size
    layout, _ = build_layout(spec)
    if per_sample:
        out = np.zeros((n, P))
    else:
        out = np.zeros(P)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    D = delta
    for l in reversed(range(spec.n_layers)):
        offW, shapeW = layout[f"W{l}"]
        offB, shapeB = layout[f"b{l}"]
        cW = shapeW[0] * shapeW[1]
        if per_sample:
            out[:, offW : offW + cW] = np.einsum("no,ni->noi", D, As[l]).reshape(n, cW)
            out[:, offB : offB + shapeB[0]] = D
        else:
            wD = D * w[:, None]
            out[offW : offW + cW] = (wD.T @ As[l]).reshape(cW)
            out[offB : offB + shapeB[0]] = wD.sum(axis=0)
        if l > 0:
            D = (D @ Ws[l]) * _act_grad(spec, Zs[l - 1])
    return out


def per_sample_gradients(spec, params, dataset):
    """(n, P) matrix of per-sample loss gradients."""
    X, Y = _xy(dataset)
    _check_inputs(spec, X)
    flat = as_flat(params)
    Zs, As = _forward(spec, flat, X)
    targets = _targets(spec, Y, len(X))
    _, delta, _ = _losses_and_delta(spec, Zs[-1], targets)
    G = _backprop_pack(spec, flat, Zs, As, delta, per_sample=True)
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite gradient")
    return G


def per_sample_gradient(spec, params, x, y):
    return per_sample_gradients(spec, params, ([x], [y]))[0]


def batch_gradient(spec, params, dataset, weights):
    """Weighted sum of per-sample gradients (empirical-risk part only)."""
    X, Y = _xy(dataset)
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(X):
        raise ShapeError(f"{len(weights)} weights for {len(X)} samples")
    _check_inputs(spec, X)
    flat = as_flat(params)
    Zs, As = _forward(spec, flat, X)
    targets = _targets(spec, Y, len(X))
    _, delta, _ = _losses_and_delta(spec, Zs[-1], targets)
    g = _backprop_pack(spec, flat, Zs, As, delta, weights=weights)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    return g


def mean_gradient(spec, params, dataset):
    X, _ = _xy(dataset)
    n = len(X)
    return batch_gradient(spec, params, dataset, np.full(n, 1.0 / n))


def _hvp_exact(spec, flat, X, targets, weights, V):
    """R-operator Hessian-vector products, batched over the rows of V (k, P)."""
    Ws, _ = _unpack(spec, flat)
    layout, P = build_layout(spec)
    k = V.shape[0]
    n = len(X)
    VWs, Vbs = [], []
    for l in range(spec.n_layers):
        offW, shapeW = layout[f"W{l}"]
        offB, shapeB = layout[f"b{l}"]
        VWs.append(V[:, offW : offW + shapeW[0] * shapeW[1]].reshape(k, *shapeW))
        Vbs.append(V[:, offB : offB + shapeB[0]])

    Zs, As = _forward(spec, flat, X)
    # R-forward: directional derivatives of activations. RAs[l] pairs with
    # As[l]; the network input does not depend on the parameters.
    RAs = [None]
    RZ = None
    for l in range(spec.n_layers):
        RZ = np.einsum("ni,koi->nko", As[l], VWs[l]) + Vbs[l][None, :, :]
        if RAs[l] is not None:
            RZ += np.einsum("nki,oi->nko", RAs[l], Ws[l])
        if l < spec.n_layers - 1:
            RAs.append(_act_grad(spec, Zs[l])[:, None, :] * RZ)

    _, delta, soft = _losses_and_delta(spec, Zs[-1], targets)
    if spec.loss == "cross_entropy":
        s = soft[:, None, :]
        RD = s * RZ - s * (s * RZ).sum(axis=2, keepdims=True)
    else:
        RD = RZ

    out = np.zeros((k, P))
    D = delta
    for l in reversed(range(spec.n_layers)):
        offW, shapeW = layout[f"W{l}"]
        offB, shapeB = layout[f"b{l}"]
        cW = shapeW[0] * shapeW[1]
        HW = np.einsum("n,nko,ni->koi", weights, RD, As[l])
        if RAs[l] is not None:
            HW += np.einsum("n,no,nki->koi", weights, D, RAs[l])
        out[:, offW : offW + cW] = HW.reshape(k, cW)
        out[:, offB : offB + shapeB[0]] = np.einsum("n,nko->ko", weights, RD)
        if l > 0:
            ag = _act_grad(spec, Zs[l - 1])[:, None, :]
            RD = (
                np.einsum("nko,oi->nki", RD, Ws[l])
                + np.einsum("no,koi->nki", D, VWs[l])
            ) * ag
            D = (D @ Ws[l]) * _act_grad(spec, Zs[l - 1])
    return out


def hessian_vector_product(
    spec, params, dataset, weights, v, mode="exact", eps_scale=1e-4
):
    """H^er v for the weighted empirical risk (no regularizer).

    ``v`` may be a single flat vector or a (k, P) stack; the result has the
    same shape. ``finite_difference`` mode uses a central difference of the
    batch gradient with step r = eps_scale / max(1, ||v||).
    """
    X, Y = _xy(dataset)
    _check_inputs(spec, X)
    flat = as_flat(params)
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(X):
        raise ShapeError(f"{len(weights)} weights for {len(X)} samples")
    V = np.asarray(as_flat(v) if not isinstance(v, np.ndarray) else v, dtype=np.float64)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    if V.shape[1] != flat.size:
        raise ShapeError(f"vector length {V.shape[1]} != parameter count {flat.size}")

    if mode == "exact":
        targets = _targets(spec, Y, len(X))
        out = _hvp_exact(spec, flat, X, targets, weights, V)
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite Hessian-vector product")
    elif mode == "finite_difference":
        out = np.empty_like(V)
        for i, vec in enumerate(V):
            r = eps_scale / max(1.0, float(np.linalg.norm(vec)))
            gp = batch_gradient(spec, flat + r * vec, dataset, weights)
            gm = batch_gradient(spec, flat - r * vec, dataset, weights)
            out[i] = (gp - gm) / (2.0 * r)
            if not np.all(np.isfinite(out[i])):
                raise NumericError(f"non-finite finite-difference HVP (step r={r})")
    else:
        raise ValueError(f"unknown HVP mode {mode!r}")
    return out[0] if single else out


def dense_hessian(spec, params, dataset, weights, cap=2000):
    """Full H^er matrix, assembled from exact HVPs with basis vectors."""
    P = as_flat(params).size
    if P > cap:
        raise ValueError(f"parameter count {P} exceeds dense-Hessian cap {cap}")
    basis = np.eye(P)
    H = hessian_vector_product(spec, params, dataset, weights, basis, mode="exact")
    return H.T


def power_iteration_max_eig(matvec, dim, iterations=200, seed=0):
    """Largest |eigenvalue| of a symmetric operator by power iteration."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng([int(seed), 0xE16])
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        hv = np.asarray(matvec(v))
        nrm = float(np.linalg.norm(hv))
        if nrm == 0.0:
            return 0.0
        lam = nrm
        v = hv / nrm
    return lam


def test_loss(spec, params, dataset):
    """Mean per-sample loss over a test subset (no regularizer)."""
    return float(sample_losses(spec, params, dataset).mean())


def test_loss_gradient(spec, params, dataset):
    return mean_gradient(spec, params, dataset)


def accuracy(spec, params, dataset):
    X, Y = _xy(dataset)
    flat = as_flat(params)
    Zs, _ = _forward(spec, flat, X)
    pred = Zs[-1].argmax(axis=1)
    return float((pred == np.asarray(Y)).mean())
