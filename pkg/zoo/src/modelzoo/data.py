"""The 8x8 digit dataset with deterministic splits."""

import numpy as np
from sklearn.datasets import load_digits

CIRCLE_DIGITS = (0, 6, 8, 9)


def digits_dataset():
    """Images scaled to [0, 1], flattened row-major to 64 values."""
    bunch = load_digits()
    x = (bunch.images / 16.0).reshape(len(bunch.images), 64)
    return x.astype(np.float64), bunch.target.astype(np.int64)


def split(x, y, seed, n_train=1500):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    train, test = order[:n_train], order[n_train:]
    return (x[train], y[train]), (x[test], y[test])


def parity_labels(y):
    """0 = even, 1 = odd."""
    return (y % 2).astype(np.int64)


def circle_labels(y):
    """0 = no closed circle, 1 = has one (digits 0, 6, 8, 9)."""
    return np.isin(y, CIRCLE_DIGITS).astype(np.int64)
