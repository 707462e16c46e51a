"""Experiment orchestration and the command-line interface.

Configuration lives in one INI-style text file; flags override individual
fields. Every random choice flows from a named seed in the config, so a rerun
of the same config reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import attribution, data, hypergrad, models, oracle, reports, trainer
from .influence import InverseHvpConfig, as_contribution_report
from .influence import influence as influence_fn
from .exceptions import ConfigError

VERSION = "0.1.0"

METHODS = (
    "exact",
    "approx",
    "influence_cg",
    "influence_neumann",
    "influence_dense",
    "oracle_fd",
    "oracle_loo",
)

OUTPUT_ROOT_ENV = "DATATRACE_OUTPUT_ROOT"


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"  # synthetic | idx | csv
    classes: int = 2
    per_class: int = 25
    dim: int = 5
    separation: float = 3.0
    seed: int = 1
    test_per_class: int = 25
    test_seed: int = 2
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""


@dataclass(frozen=True)
class TrackingConfig:
    selection: str = "all"  # all | random_k | explicit | per_class_fraction
    k: int = 10
    seed: int = 3
    indices: tuple = ()
    fraction: float = 0.1


@dataclass(frozen=True)
class NoiseConfig:
    fraction: float = 0.0
    seed: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    model: models.ModelSpec
    training: trainer.TrainingConfig
    tracking: TrackingConfig
    methods: tuple
    noise: NoiseConfig
    inverse_hvp: InverseHvpConfig
    oracle_delta: float
    output_dir: str

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")


# ---------------------------------------------------------------------------
# Config file parsing / canonical serialization.


def _parser_from_text(text):
    cp = configparser.ConfigParser()
    cp.read_string(text)
    return cp


def parse_config_text(text):
    cp = _parser_from_text(text)

    ds = cp["dataset"] if cp.has_section("dataset") else {}
    dataset = DatasetConfig(
        source=ds.get("source", "synthetic"),
        classes=int(ds.get("classes", 2)),
        per_class=int(ds.get("per_class", 25)),
        dim=int(ds.get("dim", 5)),
        separation=float(ds.get("separation", 3.0)),
        seed=int(ds.get("seed", 1)),
        test_per_class=int(ds.get("test_per_class", 25)),
        test_seed=int(ds.get("test_seed", 2)),
        train_images=ds.get("train_images", ""),
        train_labels=ds.get("train_labels", ""),
        test_images=ds.get("test_images", ""),
        test_labels=ds.get("test_labels", ""),
        train_csv=ds.get("train_csv", ""),
        test_csv=ds.get("test_csv", ""),
    )
    if dataset.source not in ("synthetic", "idx", "csv"):
        raise ConfigError(f"unknown dataset source {dataset.source!r}")

    mo = cp["model"] if cp.has_section("model") else {}
    model = models.ModelSpec(
        kind=mo.get("kind", "logistic_regression"),
        layer_widths=tuple(
            int(w) for w in mo.get("layer_widths", f"{dataset.dim},{dataset.classes}").split(",")
        ),
        activation=mo.get("activation", "relu"),
        loss=mo.get("loss", "cross_entropy"),
    )

    tr = cp["training"] if cp.has_section("training") else {}
    training = trainer.TrainingConfig(
        epochs=int(tr.get("epochs", 100)),
        batch_size=int(tr.get("batch_size", 0)),
        initial_lr=float(tr.get("initial_lr", 0.1)),
        schedule=trainer.schedule_from_string(tr.get("schedule", "constant")),
        momentum=float(tr.get("momentum", 0.0)),
        weight_decay=float(tr.get("weight_decay", 0.01)),
        seed=int(tr.get("seed", 7)),
        snapshot_stride=int(tr.get("snapshot_stride", 0)),
    )

    tk = cp["tracking"] if cp.has_section("tracking") else {}
    indices = tk.get("indices", "")
    tracking = TrackingConfig(
        selection=tk.get("selection", "all"),
        k=int(tk.get("k", 10)),
        seed=int(tk.get("seed", 3)),
        indices=tuple(int(i) for i in indices.split(",") if i.strip()),
        fraction=float(tk.get("fraction", 0.1)),
    )
    if tracking.selection not in ("all", "random_k", "explicit", "per_class_fraction"):
        raise ConfigError(f"unknown tracked-sample selection {tracking.selection!r}")

    me = cp["methods"] if cp.has_section("methods") else {}
    methods = tuple(
        m.strip() for m in me.get("methods", "exact,approx").split(",") if m.strip()
    )

    no = cp["noise"] if cp.has_section("noise") else {}
    noise = NoiseConfig(
        fraction=float(no.get("fraction", 0.0)), seed=int(no.get("seed", 5))
    )

    iv = cp["influence"] if cp.has_section("influence") else {}
    scale = iv.get("neumann_scale", "auto")
    inverse_hvp = InverseHvpConfig(
        method="conjugate_gradient",  # per-method tag decides at call time
        damping=float(iv.get("damping", 0.01)),
        cg_max_iters=int(iv.get("cg_max_iters", 1000)),
        cg_tolerance=float(iv.get("cg_tolerance", 1e-10)),
        neumann_depth=int(iv.get("neumann_depth", 500)),
        neumann_repeats=int(iv.get("neumann_repeats", 4)),
        neumann_scale=None if scale == "auto" else float(scale),
        seed=int(iv.get("seed", 11)),
        include_regularizer_in_hessian=str(
            iv.get("include_regularizer_in_hessian", "true")
        ).lower()
        in ("1", "true", "yes"),
    )

    orc = cp["oracle"] if cp.has_section("oracle") else {}
    oracle_delta = float(orc.get("delta", 1e-3))

    out = cp["output"] if cp.has_section("output") else {}
    output_dir = out.get("directory", "out")

    return ExperimentConfig(
        dataset=dataset,
        model=model,
        training=training,
        tracking=tracking,
        methods=methods,
        noise=noise,
        inverse_hvp=inverse_hvp,
        oracle_delta=oracle_delta,
        output_dir=output_dir,
    )


def config_to_text(cfg, include_output=True):
    """Canonical lossless text form; hashing this identifies the experiment.

    The [output] section is excluded from the identity hash so the same
    experiment written to two directories hashes identically.
    """
    ds, tk, no, iv = cfg.dataset, cfg.tracking, cfg.noise, cfg.inverse_hvp
    tr, mo = cfg.training, cfg.model
    lines = [
        "[dataset]",
        f"source = {ds.source}",
        f"classes = {ds.classes}",
        f"per_class = {ds.per_class}",
        f"dim = {ds.dim}",
        f"separation = {ds.separation!r}",
        f"seed = {ds.seed}",
        f"test_per_class = {ds.test_per_class}",
        f"test_seed = {ds.test_seed}",
        f"train_images = {ds.train_images}",
        f"train_labels = {ds.train_labels}",
        f"test_images = {ds.test_images}",
        f"test_labels = {ds.test_labels}",
        f"train_csv = {ds.train_csv}",
        f"test_csv = {ds.test_csv}",
        "",
        "[model]",
        f"kind = {mo.kind}",
        f"layer_widths = {','.join(str(w) for w in mo.layer_widths)}",
        f"activation = {mo.activation}",
        f"loss = {mo.loss}",
        "",
        "[training]",
        f"epochs = {tr.epochs}",
        f"batch_size = {tr.batch_size}",
        f"initial_lr = {tr.initial_lr!r}",
        f"schedule = {tr.schedule.describe()}",
        f"momentum = {tr.momentum!r}",
        f"weight_decay = {tr.weight_decay!r}",
        f"seed = {tr.seed}",
        f"snapshot_stride = {tr.snapshot_stride}",
        "",
        "[tracking]",
        f"selection = {tk.selection}",
        f"k = {tk.k}",
        f"seed = {tk.seed}",
        f"indices = {','.join(str(i) for i in tk.indices)}",
        f"fraction = {tk.fraction!r}",
        "",
        "[methods]",
        f"methods = {','.join(cfg.methods)}",
        "",
        "[noise]",
        f"fraction = {no.fraction!r}",
        f"seed = {no.seed}",
        "",
        "[influence]",
        f"damping = {iv.damping!r}",
        f"cg_max_iters = {iv.cg_max_iters}",
        f"cg_tolerance = {iv.cg_tolerance!r}",
        f"neumann_depth = {iv.neumann_depth}",
        f"neumann_repeats = {iv.neumann_repeats}",
        f"neumann_scale = {'auto' if iv.neumann_scale is None else repr(iv.neumann_scale)}",
        f"seed = {iv.seed}",
        f"include_regularizer_in_hessian = {str(iv.include_regularizer_in_hessian).lower()}",
        "",
        "[oracle]",
        f"delta = {cfg.oracle_delta!r}",
        "",
    ]
    if include_output:
        lines += ["[output]", f"directory = {cfg.output_dir}", ""]
    else:
        lines += [""]
    return "\n".join(lines)


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


# ---------------------------------------------------------------------------
# Pipeline pieces.


def build_datasets(cfg):
    """Train/test splits plus the noise record (None when fraction is 0)."""
    ds = cfg.dataset
    if ds.source == "synthetic":
        train = data.synth_gaussian(
            ds.classes, ds.per_class, ds.dim, ds.separation, ds.seed, "train"
        )
        test = data.synth_gaussian(
            ds.classes, ds.test_per_class, ds.dim, ds.separation, ds.test_seed, "test"
        )
    elif ds.source == "idx":
        train = data.load_idx(ds.train_images, ds.train_labels, ds.classes, "train")
        test = data.load_idx(ds.test_images, ds.test_labels, ds.classes, "test")
    else:
        train = data.load_csv(ds.train_csv, ds.classes, "train")
        test = data.load_csv(ds.test_csv, ds.classes, "test")
    data.check_disjoint(train, test)
    noise_record = None
    if cfg.noise.fraction > 0.0:
        train, noise_record = data.inject_noise(train, cfg.noise.fraction, cfg.noise.seed)
    return train, test, noise_record


def select_tracked(cfg, train):
    tk = cfg.tracking
    n = len(train)
    if tk.selection == "all":
        return np.arange(n)
    if tk.selection == "explicit":
        return np.array(sorted(tk.indices), dtype=np.int64)
    if tk.selection == "random_k":
        rng = np.random.default_rng([tk.seed, 0x7AC4])
        return np.sort(rng.choice(n, size=min(tk.k, n), replace=False))
    # per_class_fraction
    rng = np.random.default_rng([tk.seed, 0x7AC5])
    chosen = []
    for c in range(train.class_count):
        rows = np.flatnonzero(train.labels == c)
        k = max(1, int(np.floor(tk.fraction * len(rows))))
        chosen.extend(rng.choice(rows, size=k, replace=False))
    return np.array(sorted(chosen), dtype=np.int64)


def _influence_config(cfg, method):
    kind = {
        "influence_cg": "conjugate_gradient",
        "influence_neumann": "neumann",
        "influence_dense": "dense",
    }[method]
    return replace(cfg.inverse_hvp, method=kind)


def compute_report(cfg, method, record, train, test, tracked, per_test=False):
    """One contribution report for one method over the tracked indices."""
    if method == "exact":
        states = hypergrad.track_exact(record, train, tracked)
        return hypergrad.contribution(record, states, test, per_test=per_test)
    if method == "approx":
        states = hypergrad.track_approx(record, train, tracked)
        return hypergrad.contribution(record, states, test, per_test=per_test)
    if method.startswith("influence"):
        rep = influence_fn(
            cfg.model,
            record.final_params,
            train,
            test,
            [int(i) for i in tracked],
            config=_influence_config(cfg, method),
            weight_decay=cfg.training.weight_decay,
            per_test=per_test,
        )
        return as_contribution_report(rep, test_tag=test.split_tag)
    if method == "oracle_fd":
        results = [
            oracle.finite_difference_hypergradient(
                cfg.model, train, cfg.training, int(i), test,
                delta=cfg.oracle_delta, nominal=record,
            )
            for i in tracked
        ]
        return reports.oracle_results_to_report(results, len(train), "oracle_fd")
    if method == "oracle_loo":
        results = [
            oracle.leave_one_out(cfg.model, train, cfg.training, int(i), test, nominal=record)
            for i in tracked
        ]
        return reports.oracle_results_to_report(results, len(train), "oracle_loo")
    raise ConfigError(f"unknown method {method!r}")


def _resolve_output(cfg, override=None):
    out = override or cfg.output_dir
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    return out


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(cfg, out_dir, files):
    manifest = {
        "config_hash": hashlib.sha256(
            config_to_text(cfg, include_output=False).encode()
        ).hexdigest(),
        "version": VERSION,
        "seeds": {
            "dataset": cfg.dataset.seed,
            "dataset_test": cfg.dataset.test_seed,
            "training": cfg.training.seed,
            "tracking": cfg.tracking.seed,
            "noise": cfg.noise.seed,
            "influence": cfg.inverse_hvp.seed,
        },
        "files": {name: _file_sha256(os.path.join(out_dir, name)) for name in sorted(files)},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def run_experiment(cfg, output_dir=None):
    """train -> track per method -> contributions -> analytics -> emit."""
    out = _resolve_output(cfg, output_dir)
    files = []

    # The output location is implicit (the file's own directory), so it is
    # omitted; every byte of the emitted tree is then location-independent.
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(config_to_text(cfg, include_output=False))
    files.append("config.ini")

    train, test, noise_record = build_datasets(cfg)
    if noise_record is not None:
        with open(os.path.join(out, "noise.json"), "w") as fh:
            json.dump(
                {
                    "flipped_indices": [int(i) for i in noise_record.flipped_indices],
                    "original_labels": [int(l) for l in noise_record.original_labels],
                    "new_labels": [int(l) for l in noise_record.new_labels],
                    "seed": noise_record.seed,
                },
                fh,
                sort_keys=True,
                indent=2,
            )
            fh.write("\n")
        files.append("noise.json")

    record = trainer.train(cfg.model, train, cfg.training)
    trainer.save_trajectory(record, os.path.join(out, "trajectory"))
    tracked = select_tracked(cfg, train)

    method_reports = {}
    for method in cfg.methods:
        rep = compute_report(cfg, method, record, train, test, tracked)
        name = f"contrib_{method}.csv"
        reports.write_report_csv(rep, os.path.join(out, name))
        files.append(name)
        method_reports[method] = rep

        stats = attribution.distribution_stats(rep)
        name = f"stats_{method}.json"
        attribution.write_stats_json(stats, os.path.join(out, name))
        files.append(name)

    if len(method_reports) >= 2:
        ref_tag = "exact" if "exact" in method_reports else cfg.methods[0]
        ref = method_reports[ref_tag]
        for method, rep in method_reports.items():
            if method == ref_tag:
                continue
            cmp_ = attribution.compare_methods(ref, rep)
            name = f"compare_{ref_tag}_vs_{method}.json"
            attribution.write_comparison_json(cmp_, os.path.join(out, name))
            files.append(name)

    _write_manifest(cfg, out, files)
    return out


def run_cleaning(cfg, output_dir=None, method="approx"):
    """inject noise -> track -> discard bottom r% -> retrain -> accuracies."""
    if not 0.0 < cfg.noise.fraction < 1.0:
        raise ConfigError("cleaning requires a noise fraction in (0, 1)")
    out = _resolve_output(cfg, output_dir)
    train, test, noise_record = build_datasets(cfg)
    record = trainer.train(cfg.model, train, cfg.training)
    tracked = np.arange(len(train))
    rep = compute_report(cfg, method, record, train, test, tracked)
    retained = attribution.clean_dataset(rep, cfg.noise.fraction)
    attribution.write_retained_indices(retained, os.path.join(out, "retained.txt"))

    discarded = sorted(set(range(len(train))) - set(int(i) for i in retained))
    flipped = set(int(i) for i in noise_record.flipped_indices)
    recovered = len(flipped & set(discarded)) / max(1, len(flipped))

    acc_nofilter = models.accuracy(cfg.model, record.final_params, test)
    cleaned_train = train.subset(retained)
    cleaned_record = trainer.train(cfg.model, cleaned_train, cfg.training)
    acc_cleaned = models.accuracy(cfg.model, cleaned_record.final_params, test)

    payload = {
        "method": method,
        "noise_fraction": cfg.noise.fraction,
        "flipped_recovered_fraction": recovered,
        "accuracy_no_filtering": acc_nofilter,
        "accuracy_cleaned": acc_cleaned,
        "n_discarded": len(discarded),
    }
    with open(os.path.join(out, "cleaning.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return payload


def run_bound_trace(cfg, output_dir=None, record_stride=1):
    """Exact-vs-approx error trace with the analytic bound, per tracked index."""
    if cfg.training.weight_decay <= 0.0:
        raise ConfigError("bound-trace requires weight_decay > 0")
    out = _resolve_output(cfg, output_dir)
    train, _, _ = build_datasets(cfg)
    record = trainer.train(cfg.model, train, cfg.training)
    tracked = select_tracked(cfg, train)
    import csv as _csv

    path = os.path.join(out, "bound_trace.csv")
    constants = {}
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["train_index", "step", "error_norm", "bound"])
        for i in tracked:
            trace = hypergrad.error_trace(record, train, int(i), record_stride=record_stride)
            constants[int(i)] = {
                "lipschitz_estimate": trace.lipschitz_estimate,
                "nabla_max": trace.nabla_max,
            }
            for t, err, bnd in zip(trace.steps, trace.error_norms, trace.bounds):
                writer.writerow([int(i), int(t), repr(float(err)), repr(float(bnd))])
    with open(os.path.join(out, "bound_constants.json"), "w") as fh:
        json.dump(constants, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Argument parsing.


def _apply_overrides(cfg, args):
    text = config_to_text(cfg)
    cp = _parser_from_text(text)
    for item in args.set or []:
        key, _, value = item.partition("=")
        section, _, option = key.partition(".")
        if not cp.has_section(section):
            raise ConfigError(f"unknown config section {section!r}")
        cp.set(section, option, value)
    if args.seed is not None:
        cp.set("training", "seed", str(args.seed))
    if args.epochs is not None:
        cp.set("training", "epochs", str(args.epochs))
    if args.methods is not None:
        cp.set("methods", "methods", args.methods)
    if getattr(args, "noise_fraction", None) is not None:
        cp.set("noise", "fraction", repr(args.noise_fraction))
    if args.output is not None:
        cp.set("output", "directory", args.output)
    buf = io.StringIO()
    cp.write(buf)
    return parse_config_text(buf.getvalue())


def _add_common(sub):
    sub.add_argument("--config", help="experiment config file (INI)")
    sub.add_argument("--output", help="output directory")
    sub.add_argument("--seed", type=int, help="training seed override")
    sub.add_argument("--epochs", type=int, help="epoch count override")
    sub.add_argument("--methods", help="comma-separated method list override")
    sub.add_argument("--noise-fraction", dest="noise_fraction", type=float)
    sub.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override any config field (repeatable)",
    )


def _config_from_args(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config_text("")
    return _apply_overrides(cfg, args)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="datatrace",
        description="Training-data attribution through optimization trajectories",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "track", "influence", "oracle", "clean", "bound-trace", "run"):
        sub = subparsers.add_parser(name)
        _add_common(sub)
    cmp_sub = subparsers.add_parser("compare")
    cmp_sub.add_argument("--reference", required=True, help="gold-standard CSV")
    cmp_sub.add_argument("--candidate", required=True, help="candidate CSV")
    cmp_sub.add_argument("--output", required=True, help="comparison JSON path")

    args = parser.parse_args(argv)

    if args.command == "compare":
        ref = reports.read_report_csv(args.reference)
        cand = reports.read_report_csv(args.candidate)
        comparison = attribution.compare_methods(ref, cand)
        attribution.write_comparison_json(comparison, args.output)
        print(f"wrote {args.output}")
        return 0

    cfg = _config_from_args(args)

    if args.command == "train":
        out = _resolve_output(cfg, args.output)
        train_ds, _, _ = build_datasets(cfg)
        record = trainer.train(cfg.model, train_ds, cfg.training)
        trainer.save_trajectory(record, os.path.join(out, "trajectory"))
        print(f"trained {record.steps} steps -> {out}/trajectory")
        return 0

    if args.command in ("track", "influence", "oracle"):
        wanted = {
            "track": ("exact", "approx"),
            "influence": ("influence_cg", "influence_neumann", "influence_dense"),
            "oracle": ("oracle_fd", "oracle_loo"),
        }[args.command]
        methods = tuple(m for m in cfg.methods if m in wanted) or (wanted[0],)
        out = _resolve_output(cfg, args.output)
        train_ds, test_ds, _ = build_datasets(cfg)
        record = trainer.train(cfg.model, train_ds, cfg.training)
        tracked = select_tracked(cfg, train_ds)
        for method in methods:
            rep = compute_report(cfg, method, record, train_ds, test_ds, tracked)
            path = os.path.join(out, f"contrib_{method}.csv")
            reports.write_report_csv(rep, path)
            print(f"wrote {path}")
        return 0

    if args.command == "clean":
        payload = run_cleaning(cfg, args.output)
        print(json.dumps(payload, sort_keys=True))
        return 0

    if args.command == "bound-trace":
        path = run_bound_trace(cfg, args.output)
        print(f"wrote {path}")
        return 0

    # run
    out = run_experiment(cfg, args.output)
    print(f"experiment complete -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
