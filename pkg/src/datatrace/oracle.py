"""Ground-truth generators based on full retraining.

The oracle perturbs a sample's data weight (never the dataset itself), so the
batch schedule is unchanged between the nominal and perturbed runs and the
measured difference isolates the derivative of test loss with respect to the
weight. Central finite differences of that derivative are the gold standard
the trajectory trackers are validated against.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import models, trainer

MAX_ORACLE_SAMPLES = 200
MAX_ORACLE_STEPS = 5000


@dataclass
class OracleResult:
    index: int
    value: float  # central-difference d L_test / d eps_i
    delta: float  # step actually used
    loss_plus: float
    loss_minus: float
    loo_delta: float | None  # L_test(without i) - L_test(nominal)
    checksum_plus: str
    checksum_minus: str


def _params_checksum(params):
    return hashlib.sha256(np.ascontiguousarray(params).tobytes()).hexdigest()


def _guard(dataset, config, force):
    n = len(dataset)
    if force:
        return
    if n > MAX_ORACLE_SAMPLES:
        raise ValueError(
            f"oracle limited to {MAX_ORACLE_SAMPLES} samples (got {n}); pass force=True"
        )
    if config.epochs * max(1, n // max(1, config.batch_size or n)) > MAX_ORACLE_STEPS:
        raise ValueError("oracle step budget exceeded; pass force=True")


def _perturbed_loss(model, dataset, record, index, eps_value, test_dataset, base_weights):
    weights = base_weights.copy()
    weights[index] += eps_value
    run = trainer.replay(record, dataset, data_weights=weights, check=False)
    return models.test_loss(model, run.final_params, test_dataset), run


def _central_difference(model, dataset, record, index, delta, test_dataset, base_weights):
    lp, run_p = _perturbed_loss(
        model, dataset, record, index, +delta, test_dataset, base_weights
    )
    lm, run_m = _perturbed_loss(
        model, dataset, record, index, -delta, test_dataset, base_weights
    )
    return (lp - lm) / (2.0 * delta), lp, lm, run_p, run_m


def finite_difference_hypergradient(
    model,
    dataset,
    config,
    index,
    test_dataset,
    delta=1e-3,
    data_weights=None,
    nominal=None,
    richardson=True,
    force=False,
):
    """Central-difference d L_test / d eps_i via retraining.

    With ``richardson`` (the default) the estimates at delta and delta/2 are
    combined as (4*half - full) / 3, cancelling the O(delta^2) truncation
    term; the reported step is the smaller one actually used.
    """
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    _guard(dataset, config, force)
    n = len(dataset)
    base = np.zeros(n) if data_weights is None else np.asarray(data_weights, dtype=float)
    if nominal is None:
        nominal = trainer.train(model, dataset, config, data_weights=base)

    value, lp, lm, run_p, run_m = _central_difference(
        model, dataset, nominal, index, delta, test_dataset, base
    )
    used = delta
    if richardson:
        half, lp, lm, run_p, run_m = _central_difference(
            model, dataset, nominal, index, delta / 2.0, test_dataset, base
        )
        value = (4.0 * half - value) / 3.0
        used = delta / 2.0
    return OracleResult(
        index=index,
        value=value,
        delta=used,
        loss_plus=lp,
        loss_minus=lm,
        loo_delta=None,
        checksum_plus=_params_checksum(run_p.final_params),
        checksum_minus=_params_checksum(run_m.final_params),
    )


def leave_one_out(
    model, dataset, config, index, test_dataset, data_weights=None, nominal=None, force=False
):
    """Test-loss change from retraining with eps_i = -1/N (sample removed)."""
    _guard(dataset, config, force)
    n = len(dataset)
    base = np.zeros(n) if data_weights is None else np.asarray(data_weights, dtype=float)
    if nominal is None:
        nominal = trainer.train(model, dataset, config, data_weights=base)
    nominal_loss = models.test_loss(model, nominal.final_params, test_dataset)
    without_loss, run = _perturbed_loss(
        model, dataset, nominal, index, -1.0 / n, test_dataset, base
    )
    # One-sided secant estimate of d L_test/d eps_i from the -1/N step;
    # loo_delta itself is the C(i)-comparable quantity.
    return OracleResult(
        index=index,
        value=-(without_loss - nominal_loss) * n,
        delta=1.0 / n,
        loss_plus=without_loss,
        loss_minus=nominal_loss,
        loo_delta=without_loss - nominal_loss,
        checksum_plus=_params_checksum(run.final_params),
        checksum_minus=_params_checksum(nominal.final_params),
    )
