"""Shared probe builders for the test suite."""

import numpy as np
import pytest

import datatrace as dt

# One line per acceptance criterion, printed in the terminal summary so the
# verdicts are visible even when pytest captures per-test stdout.
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


def gaussian_pair(classes=2, per_class=25, dim=5, separation=3.0, seed=1,
                  test_per_class=25, test_seed=None):
    """Matched train/test splits from the synthetic Gaussian generator."""
    if test_seed is None:
        test_seed = seed + 100
    train = dt.synth_gaussian(classes, per_class, dim, separation, seed, "train")
    test = dt.synth_gaussian(classes, test_per_class, dim, separation, test_seed, "test")
    return train, test


def ridge_probe(targets=(0.0, 2.0), test_targets=(2.0,)):
    """1-D ridge regression: inputs are all 1, squared-error targets.

    The model output is c = W + b, so the regularized minimizer satisfies
    c* = sum(w_i a_i) / (sum(w_i) + lambda/2) with W = b = c/2.
    """
    spec = dt.ModelSpec("logistic_regression", (1, 1), loss="squared_error")
    n = len(targets)
    train = dt.LabeledDataset(
        np.ones((n, 1)), np.asarray(targets, dtype=np.float64).reshape(n, 1), 1, "train"
    )
    m = len(test_targets)
    test = dt.LabeledDataset(
        np.ones((m, 1)),
        np.asarray(test_targets, dtype=np.float64).reshape(m, 1),
        1,
        "test",
    )
    return spec, train, test


def bias_only_probe(targets):
    """Squared-error probe with zero inputs: only the bias parameter moves."""
    spec = dt.ModelSpec("logistic_regression", (1, 1), loss="squared_error")
    n = len(targets)
    data = dt.LabeledDataset(
        np.zeros((n, 1)), np.asarray(targets, dtype=np.float64).reshape(n, 1), 1, "train"
    )
    return spec, data


@pytest.fixture(scope="session")
def convex_probe():
    """Strongly convex logistic probe shared by several suites."""
    spec = dt.ModelSpec("logistic_regression", (5, 2))
    train, test = gaussian_pair()
    cfg = dt.TrainingConfig(
        epochs=500, batch_size=0, initial_lr=0.1, weight_decay=0.01, seed=7
    )
    record = dt.train(spec, train, cfg)
    return spec, train, test, cfg, record
