"""Per-sample hypergradients carried through the training trajectory.

For each tracked training sample i this module maintains d(params)/d(eps_i)
across every optimization step, in two modes: the exact Hessian-aware
recurrence, and the fast approximation that deletes the Hessian term. Both
ride a trajectory replay through the trainer's step hook, so they see the
identical batch order and learning rates as the original run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models, trainer
from .exceptions import ConfigError, DivergenceError


@dataclass
class HypergradState:
    """Tracked state for one sample at one step."""

    sample_index: int
    mode: str  # "exact" | "approx"
    nabla: np.ndarray  # d w_t / d eps_i
    mom_deriv: np.ndarray  # d v_t / d eps_i
    step: int


@dataclass
class ApproxErrorTrace:
    """Exact-vs-approx error norms alongside the analytic bound.

    bound_t = L * M_w * lr_1 / (lr_t * weight_decay), with L estimated by
    power iteration on the final empirical-risk Hessian and M_w the measured
    running max of ||nabla_t|| over the exact run.
    """

    sample_index: int
    steps: np.ndarray
    error_norms: np.ndarray
    bounds: np.ndarray
    lipschitz_estimate: float
    nabla_max: float


@dataclass
class ContributionReport:
    """Per-sample contribution values with method provenance."""

    method: str
    values: dict  # train index -> C(i)
    pair_values: dict | None  # (train index, test index) -> C(i, j)
    test_tag: str
    n_train: int


class _Tracker:
    """Shared recurrence engine; runs one or both modes over a replay."""

    def __init__(self, record, tracked, use_hessian, hvp_mode, lockstep=False):
        self.record = record
        self.tracked = list(tracked)
        self.use_hessian = use_hessian
        self.hvp_mode = hvp_mode
        self.lockstep = lockstep  # run exact and approx side by side
        n = record.n_train
        if any(i < 0 or i >= n for i in self.tracked):
            raise ConfigError("tracked index outside [0, n_train)")
        k = len(self.tracked)
        P = record.final_params.size
        self.nabla = np.zeros((k, P))
        self.mom = np.zeros((k, P))
        if lockstep:
            self.nabla_a = np.zeros((k, P))
            self.mom_a = np.zeros((k, P))
        self.pos = {i: r for r, i in enumerate(self.tracked)}
        self.hvp_calls = 0
        self.nabla_max = 0.0
        self.on_step = None  # optional callback(t, tracker)

    def __call__(self, ctx):
        rec = self.record
        p = rec.config.momentum
        lam = rec.config.weight_decay
        n = rec.n_train
        b = len(ctx.batch)

        in_batch = [i for i in self.tracked if i in set(int(j) for j in ctx.batch)]
        source = np.zeros_like(self.nabla)
        if in_batch:
            G = ctx.per_sample_gradients(in_batch)
            rows = [self.pos[i] for i in in_batch]
            source[rows] = (n / b) * G

        if self.use_hessian or self.lockstep:
            hterm = ctx.batch_hvp(self.nabla, mode=self.hvp_mode)
            self.hvp_calls += 1
            self.mom = p * self.mom + hterm + lam * self.nabla + source
            self.nabla = self.nabla - ctx.lr * self.mom
        else:
            self.mom = p * self.mom + lam * self.nabla + source
            self.nabla = self.nabla - ctx.lr * self.mom
        if self.lockstep:
            self.mom_a = p * self.mom_a + lam * self.nabla_a + source
            self.nabla_a = self.nabla_a - ctx.lr * self.mom_a

        if not np.all(np.isfinite(self.nabla)):
            raise DivergenceError(ctx.step, f"hypergradient diverged at step {ctx.step}")
        self.nabla_max = max(
            self.nabla_max, float(np.linalg.norm(self.nabla, axis=1).max())
        )
        if self.on_step is not None:
            self.on_step(ctx.step, self)

    def states(self, mode, step):
        src = self.nabla_a if (self.lockstep and mode == "approx") else self.nabla
        mom = self.mom_a if (self.lockstep and mode == "approx") else self.mom
        return {
            i: HypergradState(i, mode, src[r].copy(), mom[r].copy(), step)
            for i, r in self.pos.items()
        }


def _run(record, dataset, tracker):
    trainer.replay(record, dataset, step_hook=tracker, check=False)
    return tracker


def track_exact(record, dataset, tracked_indices, hvp_mode="exact"):
    """Hessian-aware hypergradients at the final step, per tracked sample."""
    tracker = _Tracker(record, tracked_indices, use_hessian=True, hvp_mode=hvp_mode)
    _run(record, dataset, tracker)
    return tracker.states("exact", record.steps)


def track_approx(record, dataset, tracked_indices):
    """Hessian-free hypergradients (the fast recurrence). No HVPs occur."""
    tracker = _Tracker(record, tracked_indices, use_hessian=False, hvp_mode="exact")
    _run(record, dataset, tracker)
    assert tracker.hvp_calls == 0
    return tracker.states("approx", record.steps)


def error_trace(record, dataset, index, record_stride=1, hvp_mode="exact", power_iters=200):
    """Run both modes in lockstep and record error norms against the bound."""
    if record.config.weight_decay <= 0.0:
        raise ConfigError("the approximation-error bound requires weight_decay > 0")
    tracker = _Tracker(record, [index], use_hessian=True, hvp_mode=hvp_mode, lockstep=True)
    steps, errors = [], []

    def on_step(t, tk):
        if t % record_stride == 0 or t == record.steps:
            steps.append(t)
            errors.append(float(np.linalg.norm(tk.nabla[0] - tk.nabla_a[0])))

    tracker.on_step = on_step
    _run(record, dataset, tracker)

    n = record.n_train
    w_T = record.final_params
    uniform = np.full(n, 1.0 / n)
    L = models.power_iteration_max_eig(
        lambda v: models.hessian_vector_product(record.model, w_T, dataset, uniform, v),
        dim=w_T.size,
        iterations=power_iters,
        seed=record.config.seed,
    )
    m_w = tracker.nabla_max
    lam = record.config.weight_decay
    lr1 = record.lrs[0]
    steps = np.asarray(steps)
    bounds = L * m_w * lr1 / (record.lrs[steps - 1] * lam)
    return ApproxErrorTrace(
        sample_index=index,
        steps=steps,
        error_norms=np.asarray(errors),
        bounds=bounds,
        lipschitz_estimate=L,
        nabla_max=m_w,
    )


def contribution(record, states, test_dataset, per_test=False, method=None):
    """Contribution report from final-step hypergradient states.

    C(i) = -(1/N) * grad L_test(w_T)^T nabla_{T,i}; with ``per_test`` the
    per-pair values C(i, j) over individual test samples are included, and
    C(i) is their mean by linearity.
    """
    if len(test_dataset) == 0:
        raise ValueError("empty test subset")
    if not states:
        raise ValueError("no hypergradient states given")
    n = record.n_train
    modes = {s.mode for s in states.values()}
    tag = method or (modes.pop() if len(modes) == 1 else "mixed")
    g_test = models.test_loss_gradient(record.model, record.final_params, test_dataset)
    values = {}
    pair_values = {} if per_test else None
    if per_test:
        G = models.per_sample_gradients(record.model, record.final_params, test_dataset)
    for i, state in states.items():
        values[i] = float(-(1.0 / n) * (g_test @ state.nabla))
        if per_test:
            pairs = -(1.0 / n) * (G @ state.nabla)
            for j, cij in enumerate(pairs):
                pair_values[(i, j)] = float(cij)
    return ContributionReport(
        method=tag,
        values=values,
        pair_values=pair_values,
        test_tag=getattr(test_dataset, "split_tag", "test"),
        n_train=n,
    )


def save_states(states, path):
    """Serialize final hypergradient states to one little-endian blob + index."""
    with open(path, "wb") as blob, open(path + ".idx", "w") as idx:
        offset = 0
        for i in sorted(states):
            s = states[i]
            arr = np.concatenate([s.nabla, s.mom_deriv]).astype("<f8")
            blob.write(arr.tobytes())
            idx.write(f"{i} {s.mode} {s.step} {offset} {s.nabla.size}\n")
            offset += arr.size
    return path


def load_states(path):
    blob = np.fromfile(path, dtype="<f8")
    states = {}
    with open(path + ".idx") as idx:
        for line in idx:
            i, mode, step, offset, size = line.split()
            i, step, offset, size = int(i), int(step), int(offset), int(size)
            states[i] = HypergradState(
                i,
                mode,
                blob[offset : offset + size].copy(),
                blob[offset + size : offset + 2 * size].copy(),
                step,
            )
    return states
