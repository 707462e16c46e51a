"""Deterministic gradient-descent training with exact trajectory replay.

Supports full-batch GD, GD with momentum, and mini-batch SGD with seeded
shuffling. Every run is reproducible bit-for-bit from its config: batch
orders come from (seed, epoch) streams, never global RNG state.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import models
from .exceptions import ConfigError, DivergenceError, ReplayDivergenceError
from .models import ModelSpec
from .params import as_flat

DIVERGENCE_FACTOR = 1e6


# ---------------------------------------------------------------------------
# Learning-rate schedules. All built-in schedules are non-increasing.


@dataclass(frozen=True)
class ConstantSchedule:
    def describe(self):
        return "constant"


@dataclass(frozen=True)
class StepDecaySchedule:
    factor: float
    epoch: int

    def __post_init__(self):
        if not 0.0 < self.factor <= 1.0:
            raise ConfigError("step_decay factor must lie in (0, 1]")
        if self.epoch < 1:
            raise ConfigError("step_decay epoch must be >= 1")

    def describe(self):
        return f"step_decay(factor={self.factor!r},epoch={self.epoch})"


@dataclass(frozen=True)
class ExponentialSchedule:
    """Per-step decay: lr_{t+1} = c * lr_t exactly."""

    c: float

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise ConfigError("exponential rate c must lie in (0, 1]")

    def describe(self):
        return f"exponential(c={self.c!r})"


@dataclass(frozen=True)
class ReduceOnPlateauSchedule:
    """Multiply by ``factor`` when train(+validation) loss stops improving.

    A plateau is declared when the monitored loss fails to improve on the
    best value by more than ``rel_threshold`` (relative) within ``patience``
    epochs.
    """

    factor: float
    patience: int = 2
    rel_threshold: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.factor <= 1.0:
            raise ConfigError("plateau factor must lie in (0, 1]")
        if self.patience < 1:
            raise ConfigError("plateau patience must be >= 1")

    def describe(self):
        return (
            f"reduce_on_plateau(factor={self.factor!r},patience={self.patience},"
            f"rel_threshold={self.rel_threshold!r})"
        )


def schedule_from_string(text):
    """Parse the textual schedule form produced by ``describe``."""
    text = text.strip()
    if text == "constant":
        return ConstantSchedule()
    name, _, body = text.partition("(")
    if not body.endswith(")"):
        raise ConfigError(f"malformed schedule {text!r}")
    kwargs = {}
    for part in body[:-1].split(","):
        if not part:
            continue
        key, _, val = part.partition("=")
        kwargs[key.strip()] = float(val)
    if name == "step_decay":
        return StepDecaySchedule(kwargs["factor"], int(kwargs["epoch"]))
    if name == "exponential":
        return ExponentialSchedule(kwargs["c"])
    if name == "reduce_on_plateau":
        return ReduceOnPlateauSchedule(
            kwargs["factor"],
            int(kwargs.get("patience", 2)),
            kwargs.get("rel_threshold", 1e-4),
        )
    raise ConfigError(f"unknown schedule {name!r}")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    batch_size: int  # 0 means full batch
    initial_lr: float
    schedule: object = ConstantSchedule()
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    snapshot_stride: int = 0  # steps between snapshots; 0 = once per epoch

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0 (0 = full batch)")
        if self.initial_lr <= 0.0:
            raise ConfigError("initial_lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        # Schedules are non-increasing, so checking the initial product
        # covers every step.
        if self.weight_decay > 0.0 and self.initial_lr * self.weight_decay >= 1.0:
            raise ConfigError("initial_lr * weight_decay must be < 1")


def build_batch_schedule(n, batch_size, epochs, seed):
    """Seeded shuffled partition per epoch; the last batch may be short."""
    if batch_size <= 0 or batch_size >= n:
        batch_size = n
    batches = []
    for epoch in range(epochs):
        rng = np.random.default_rng([int(seed), epoch])
        perm = rng.permutation(n).astype(np.int32)
        for start in range(0, n, batch_size):
            batches.append(perm[start : start + batch_size])
    return batches


@dataclass
class TrajectoryRecord:
    """Everything needed to replay a run deterministically."""

    model: ModelSpec
    config: TrainingConfig
    n_train: int
    data_weights: np.ndarray
    batches: list
    lrs: np.ndarray  # per step, 1-based step t -> lrs[t-1]
    losses: np.ndarray  # regularized batch loss at w_{t-1}
    snapshots: dict  # step -> flat params (0 and T always present)
    final_params: np.ndarray

    @property
    def steps(self):
        return len(self.batches)

    def checksum(self):
        h = hashlib.sha256()
        for step in sorted(self.snapshots):
            h.update(struct.pack("<q", step))
            h.update(self.snapshots[step].tobytes())
        return h.hexdigest()


class StepContext:
    """Immutable view of one training step, handed to step hooks.

    Exposes the pre-update parameters and seeded access to per-sample
    gradients and batch HVPs evaluated at those parameters.
    """

    def __init__(self, trainer_state, step, lr, batch):
        self._st = trainer_state
        self.step = step
        self.lr = lr
        self.batch = batch
        self.params = trainer_state.w.copy()
        self.params.setflags(write=False)

    @property
    def n_train(self):
        return self._st.n

    def per_sample_gradients(self, indices):
        """Gradients of the listed samples at the pre-update parameters."""
        st = self._st
        sub = st.dataset.subset(np.asarray(indices, dtype=np.int64))
        return models.per_sample_gradients(st.model, st.w, sub)

    def batch_hvp(self, v, mode="exact", eps_scale=1e-4):
        """H^er of the regularizer-free batch-mean loss times v."""
        st = self._st
        b = len(self.batch)
        sub = st.dataset.subset(self.batch)
        weights = np.full(b, 1.0 / b)
        return models.hessian_vector_product(
            st.model, st.w, sub, weights, v, mode=mode, eps_scale=eps_scale
        )


class _TrainerState:
    def __init__(self, model, dataset, w):
        self.model = model
        self.dataset = dataset
        self.n = len(dataset)
        self.w = w


def _epoch_lrs(config, epochs):
    """Per-epoch base rates for epoch-level schedules (not plateau)."""
    lrs = []
    lr = config.initial_lr
    sched = config.schedule
    for epoch in range(epochs):
        if isinstance(sched, StepDecaySchedule) and epoch + 1 == sched.epoch:
            lr *= sched.factor
        lrs.append(lr)
    return lrs


def train(
    model,
    dataset,
    config,
    data_weights=None,
    step_hook=None,
    init=None,
    validation=None,
    batches=None,
    lrs=None,
):
    """Run (momentum) gradient descent and record the trajectory.

    ``data_weights`` are the per-sample offsets to the 1/N coefficients;
    a sample in a batch of size b contributes with weight 1/b + N*eps_i/b,
    the ridge term ``weight_decay * w`` is added on top. ``step_hook`` is
    called after the step gradient is computed and before the update.
    ``batches``/``lrs`` override the derived schedule (used by replay).
    """
    n = len(dataset)
    eps = np.zeros(n) if data_weights is None else np.asarray(data_weights, dtype=np.float64)
    if len(eps) != n:
        raise ConfigError(f"{len(eps)} data weights for {n} samples")

    if batches is None:
        batches = build_batch_schedule(n, config.batch_size, config.epochs, config.seed)
    steps_per_epoch = max(1, len(batches) // config.epochs)
    total_steps = len(batches)
    stride = config.snapshot_stride if config.snapshot_stride > 0 else steps_per_epoch

    if init is None:
        w = models.init_params(model, config.seed).values.copy()
    else:
        w = as_flat(init).copy()
    lam = config.weight_decay
    p = config.momentum
    velocity = np.zeros_like(w)
    st = _TrainerState(model, dataset, w)

    epoch_lrs = _epoch_lrs(config, config.epochs)
    plateau = isinstance(config.schedule, ReduceOnPlateauSchedule)
    exponential = isinstance(config.schedule, ExponentialSchedule)
    plateau_lr = config.initial_lr
    # Running product keeps lr_{t+1} = c * lr_t exact in floating point.
    exp_lr = config.initial_lr
    best_monitor = np.inf
    stale_epochs = 0

    out_lrs = np.empty(total_steps)
    out_losses = np.empty(total_steps)
    snapshots = {0: w.copy()}
    initial_loss = None

    for t in range(1, total_steps + 1):
        batch = batches[t - 1]
        epoch = (t - 1) // steps_per_epoch
        if lrs is not None:
            lr = float(lrs[t - 1])
        elif exponential:
            lr = exp_lr
            exp_lr *= config.schedule.c
        elif plateau:
            lr = plateau_lr
        else:
            lr = epoch_lrs[min(epoch, config.epochs - 1)]
        if lam > 0.0 and not 0.0 < lr * lam < 1.0:
            raise ConfigError(f"lr*weight_decay = {lr * lam} outside (0, 1) at step {t}")

        b = len(batch)
        sub = dataset.subset(batch)
        weights = 1.0 / b + n * eps[batch] / b
        g = models.batch_gradient(model, st.w, sub, weights)
        if lam > 0.0:
            g = g + lam * st.w

        batch_losses = models.sample_losses(model, st.w, sub)
        loss = float(np.dot(weights, batch_losses)) + 0.5 * lam * float(st.w @ st.w)
        out_losses[t - 1] = loss
        out_lrs[t - 1] = lr
        if initial_loss is None:
            initial_loss = abs(loss) + 1e-12
        if not np.isfinite(loss) or abs(loss) > DIVERGENCE_FACTOR * initial_loss:
            raise DivergenceError(t)

        if step_hook is not None:
            step_hook(StepContext(st, t, lr, batch))

        velocity = p * velocity + g
        st.w = st.w - lr * velocity

        if t % stride == 0 or t == total_steps:
            snapshots[t] = st.w.copy()

        if plateau and lrs is None and t % steps_per_epoch == 0:
            full_weights = 1.0 / n + eps
            monitor = float(
                np.dot(full_weights, models.sample_losses(model, st.w, dataset))
            ) + 0.5 * lam * float(st.w @ st.w)
            if validation is not None:
                monitor += models.test_loss(model, st.w, validation)
            if monitor < best_monitor * (1.0 - config.schedule.rel_threshold):
                best_monitor = monitor
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= config.schedule.patience:
                    plateau_lr *= config.schedule.factor
                    stale_epochs = 0

    return TrajectoryRecord(
        model=model,
        config=config,
        n_train=n,
        data_weights=eps,
        batches=batches,
        lrs=out_lrs,
        losses=out_losses,
        snapshots=snapshots,
        final_params=st.w.copy(),
    )


def replay(record, dataset, data_weights=None, step_hook=None, check=True):
    """Re-run a recorded trajectory with the identical batch order and rates.

    With unchanged weights the replay must be bit-identical; ``check``
    verifies every recorded snapshot and raises ReplayDivergenceError naming
    the first bad step. Perturbed weights (the oracle's case) skip the check.
    """
    weights = record.data_weights if data_weights is None else np.asarray(data_weights)
    perturbed = data_weights is not None and not np.array_equal(
        weights, record.data_weights
    )
    new = train(
        record.model,
        dataset,
        record.config,
        data_weights=weights,
        step_hook=step_hook,
        init=record.snapshots[0],
        batches=record.batches,
        lrs=record.lrs,
    )
    if check and not perturbed:
        for step in sorted(record.snapshots):
            if step in new.snapshots and not np.array_equal(
                record.snapshots[step], new.snapshots[step]
            ):
                raise ReplayDivergenceError(step)
    return new


# ---------------------------------------------------------------------------
# On-disk form: config as text, snapshots/rates as little-endian blobs,
# batch schedule as 32-bit index lists.


def save_trajectory(record, directory):
    os.makedirs(directory, exist_ok=True)
    cfg = record.config
    lines = [
        "[model]",
        f"kind = {record.model.kind}",
        f"layer_widths = {','.join(str(w) for w in record.model.layer_widths)}",
        f"activation = {record.model.activation}",
        f"loss = {record.model.loss}",
        "",
        "[training]",
        f"epochs = {cfg.epochs}",
        f"batch_size = {cfg.batch_size}",
        f"initial_lr = {cfg.initial_lr!r}",
        f"schedule = {cfg.schedule.describe()}",
        f"momentum = {cfg.momentum!r}",
        f"weight_decay = {cfg.weight_decay!r}",
        f"seed = {cfg.seed}",
        f"snapshot_stride = {cfg.snapshot_stride}",
        "",
        "[meta]",
        f"n_train = {record.n_train}",
        f"param_count = {record.final_params.size}",
        f"checksum = {record.checksum()}",
        "",
    ]
    with open(os.path.join(directory, "config.txt"), "w") as fh:
        fh.write("\n".join(lines))

    with open(os.path.join(directory, "snapshots.bin"), "wb") as blob, open(
        os.path.join(directory, "snapshots.idx"), "w"
    ) as idx:
        offset = 0
        for step in sorted(record.snapshots):
            arr = record.snapshots[step].astype("<f8")
            blob.write(arr.tobytes())
            idx.write(f"{step} {offset} {arr.size}\n")
            offset += arr.size

    record.lrs.astype("<f8").tofile(os.path.join(directory, "lrs.bin"))
    record.losses.astype("<f8").tofile(os.path.join(directory, "losses.bin"))
    record.data_weights.astype("<f8").tofile(os.path.join(directory, "weights.bin"))
    with open(os.path.join(directory, "schedule.bin"), "wb") as fh:
        for batch in record.batches:
            fh.write(struct.pack("<I", len(batch)))
            fh.write(np.asarray(batch, dtype="<i4").tobytes())


def load_trajectory(directory):
    import configparser

    cp = configparser.ConfigParser()
    cp.read(os.path.join(directory, "config.txt"))
    model = ModelSpec(
        kind=cp["model"]["kind"],
        layer_widths=tuple(int(w) for w in cp["model"]["layer_widths"].split(",")),
        activation=cp["model"]["activation"],
        loss=cp["model"]["loss"],
    )
    config = TrainingConfig(
        epochs=cp.getint("training", "epochs"),
        batch_size=cp.getint("training", "batch_size"),
        initial_lr=cp.getfloat("training", "initial_lr"),
        schedule=schedule_from_string(cp["training"]["schedule"]),
        momentum=cp.getfloat("training", "momentum"),
        weight_decay=cp.getfloat("training", "weight_decay"),
        seed=cp.getint("training", "seed"),
        snapshot_stride=cp.getint("training", "snapshot_stride"),
    )
    n_train = cp.getint("meta", "n_train")

    snapshots = {}
    blob = np.fromfile(os.path.join(directory, "snapshots.bin"), dtype="<f8")
    with open(os.path.join(directory, "snapshots.idx")) as idx:
        for line in idx:
            step, offset, count = (int(x) for x in line.split())
            snapshots[step] = blob[offset : offset + count].copy()

    lrs = np.fromfile(os.path.join(directory, "lrs.bin"), dtype="<f8")
    losses = np.fromfile(os.path.join(directory, "losses.bin"), dtype="<f8")
    weights = np.fromfile(os.path.join(directory, "weights.bin"), dtype="<f8")
    batches = []
    with open(os.path.join(directory, "schedule.bin"), "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            (count,) = struct.unpack("<I", head)
            batches.append(np.frombuffer(fh.read(4 * count), dtype="<i4").copy())

    record = TrajectoryRecord(
        model=model,
        config=config,
        n_train=n_train,
        data_weights=weights,
        batches=batches,
        lrs=lrs,
        losses=losses,
        snapshots=snapshots,
        final_params=snapshots[max(snapshots)].copy(),
    )
    stored = cp["meta"].get("checksum")
    if stored and stored != record.checksum():
        raise ReplayDivergenceError(-1, "stored trajectory checksum mismatch")
    return record
