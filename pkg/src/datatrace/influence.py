"""Influence-functions baseline via inverse-Hessian-vector products.

The influence of a training point on a test point is evaluated at the final
parameters only: IF = -grad_test^T (H_T + damping I)^{-1} grad_i. The inverse
HVP can be computed by damped conjugate gradient, by the stochastic
Neumann-series iteration with single-sample Hessians, or (for tiny models)
by a dense solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .exceptions import ConvergenceError, ScalingError

NEUMANN_DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class InverseHvpConfig:
    method: str = "conjugate_gradient"  # conjugate_gradient | neumann | dense
    damping: float = 0.01
    cg_max_iters: int = 1000
    cg_tolerance: float = 1e-10
    neumann_depth: int = 500
    neumann_repeats: int = 4
    neumann_scale: float | None = None  # None -> 1.1 * max |eig| by power iteration
    seed: int = 0
    include_regularizer_in_hessian: bool = True

    def __post_init__(self):
        if self.method not in ("conjugate_gradient", "neumann", "dense"):
            raise ValueError(f"unknown inverse-HVP method {self.method!r}")
        if self.damping < 0.0:
            raise ValueError("damping must be >= 0")


@dataclass
class InfluenceReport:
    method: str  # influence_cg | influence_neumann | influence_dense
    values: dict  # train index -> IF(z_i, test subset)
    scaled_values: dict  # train index -> -IF / N, comparable to C(i)
    pair_values: dict | None
    diagnostics: dict
    n_train: int


def _method_tag(config):
    return {
        "conjugate_gradient": "influence_cg",
        "neumann": "influence_neumann",
        "dense": "influence_dense",
    }[config.method]


def _shift(config, weight_decay):
    shift = config.damping
    if config.include_regularizer_in_hessian:
        shift += weight_decay
    return shift


def _full_operator(model, params, dataset, shift):
    n = len(dataset)
    uniform = np.full(n, 1.0 / n)

    def matvec(v):
        hv = models.hessian_vector_product(model, params, dataset, uniform, v)
        return hv + shift * v

    return matvec


def _cg(matvec, v, tol, max_iters):
    """Conjugate gradient for (H + shift I) x = v; residual-norm stopping."""
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return np.zeros_like(v), 0.0, 0
    x = np.zeros_like(v)
    r = v.copy()
    d = r.copy()
    rs = float(r @ r)
    for it in range(1, max_iters + 1):
        hd = matvec(d)
        alpha = rs / float(d @ hd)
        x += alpha * d
        r -= alpha * hd
        rs_new = float(r @ r)
        resid = np.sqrt(rs_new)
        if resid <= tol * vnorm:
            return x, resid, it
        d = r + (rs_new / rs) * d
        rs = rs_new
    raise ConvergenceError(
        f"CG did not reach tolerance in {max_iters} iterations "
        f"(residual {np.sqrt(rs):.3e} vs target {tol * vnorm:.3e})",
        residual=float(np.sqrt(rs)),
        iterations=max_iters,
    )


def _neumann_scale(model, params, dataset, shift, config):
    if config.neumann_scale is not None:
        return float(config.neumann_scale)
    # The iteration applies single-sample Hessians, whose spectra can exceed
    # the mean Hessian's, so the scale must bound the largest per-sample
    # eigenvalue seen over a probe subset.
    n = len(dataset)
    rng = np.random.default_rng([int(config.seed), 0x5CA1])
    probe = rng.choice(n, size=min(16, n), replace=False)
    dim = np.size(params)
    max_eig = 0.0
    for d in probe:
        sub = dataset.subset(np.array([d]))

        def matvec(v, sub=sub):
            hv = models.hessian_vector_product(model, params, sub, np.array([1.0]), v)
            return hv + shift * v

        eig = models.power_iteration_max_eig(
            matvec, dim=dim, iterations=50, seed=config.seed
        )
        max_eig = max(max_eig, eig)
    # 1.1 headroom so the scaled operator has spectral radius < 1.
    return 1.1 * max(max_eig, 1e-12)


def _neumann(model, params, dataset, v, shift, scale, config):
    n = len(dataset)
    vnorm = float(np.linalg.norm(v))
    estimates = np.zeros((config.neumann_repeats, v.size))
    for rep in range(config.neumann_repeats):
        rng = np.random.default_rng([int(config.seed), rep])
        r = v.copy()
        for _ in range(config.neumann_depth):
            d = int(rng.integers(n))
            sub = dataset.subset(np.array([d]))
            hr = models.hessian_vector_product(
                model, params, sub, np.array([1.0]), r
            )
            hr += shift * r
            r = v + r - hr / scale
            if float(np.linalg.norm(r)) > NEUMANN_DIVERGENCE_FACTOR * max(vnorm, 1.0):
                raise ScalingError(
                    f"Neumann iterate diverged (scale {scale}); increase the scale"
                )
        estimates[rep] = r / scale
    return estimates.mean(axis=0), estimates


def inverse_hvp(model, params, dataset, v, config, weight_decay=0.0):
    """Approximate (H_T + damping I)^{-1} v. Returns (result, diagnostics)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size != np.size(params):
        raise ValueError("vector length does not match parameter count")
    shift = _shift(config, weight_decay)
    if config.method == "conjugate_gradient":
        matvec = _full_operator(model, params, dataset, shift)
        x, resid, iters = _cg(matvec, v, config.cg_tolerance, config.cg_max_iters)
        return x, {"cg_residual": resid, "cg_iterations": iters}
    if config.method == "neumann":
        scale = _neumann_scale(model, params, dataset, shift, config)
        mean, estimates = _neumann(model, params, dataset, v, shift, scale, config)
        spread = float(np.linalg.norm(estimates.std(axis=0)))
        return mean, {"neumann_scale": scale, "neumann_repeat_std": spread}
    # dense
    n = len(dataset)
    uniform = np.full(n, 1.0 / n)
    H = models.dense_hessian(model, params, dataset, uniform)
    H = H + shift * np.eye(H.shape[0])
    return np.linalg.solve(H, v), {}


def influence(
    model,
    final_params,
    train_dataset,
    test_dataset,
    train_indices,
    config=InverseHvpConfig(),
    weight_decay=0.0,
    per_test=False,
):
    """IF(z_i, test subset) for each requested training index.

    ``values`` holds the raw -grad_test^T H^{-1} grad_i, whose sign follows
    the upweighting direction. ``scaled_values`` holds -IF/N, the first-order
    estimate of the test-loss change from removing the sample, which is the
    quantity comparable (in scale and sign) to trajectory contributions C(i).
    """
    n = len(train_dataset)
    g_test = models.test_loss_gradient(model, final_params, test_dataset)
    values, scaled, pairs = {}, {}, ({} if per_test else None)
    diagnostics = {}
    if per_test:
        G_test = models.per_sample_gradients(model, final_params, test_dataset)
    for i in train_indices:
        g_i = models.per_sample_gradient(
            model, final_params, train_dataset.features[i], train_dataset.labels[i]
        )
        ihvp, diag = inverse_hvp(
            model, final_params, train_dataset, g_i, config, weight_decay
        )
        values[i] = float(-(g_test @ ihvp))
        scaled[i] = -values[i] / n
        diagnostics[i] = diag
        if per_test:
            for j, gt in enumerate(G_test):
                pairs[(i, j)] = float(-(gt @ ihvp))
    return InfluenceReport(
        method=_method_tag(config),
        values=values,
        scaled_values=scaled,
        pair_values=pairs,
        diagnostics=diagnostics,
        n_train=n,
    )


def as_contribution_report(report, test_tag="test"):
    """View an influence report on the C(i) scale (-IF / N) for comparisons."""
    from .hypergrad import ContributionReport

    pair = None
    if report.pair_values is not None:
        pair = {k: -v / report.n_train for k, v in report.pair_values.items()}
    return ContributionReport(
        method=report.method,
        values=dict(report.scaled_values),
        pair_values=pair,
        test_tag=test_tag,
        n_train=report.n_train,
    )
