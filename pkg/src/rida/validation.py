"""Input validation helpers shared by the estimators and the CLI."""

import numbers

import numpy as np

from .exceptions import ValidationError


def check_fraction(value, name, *, low_open=False, high_open=False):
    """Return ``value`` as a float, raising if it is outside [0, 1].

    ``low_open`` / ``high_open`` exclude the corresponding endpoint.
    """
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValidationError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value!r}")
    lo_ok = value > 0.0 if low_open else value >= 0.0
    hi_ok = value < 1.0 if high_open else value <= 1.0
    if not (lo_ok and hi_ok):
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValidationError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return value


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_positive_real(value, name, *, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValidationError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValidationError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_labels(y, n=None, *, allow_unlabeled=False):
    """Validate a per-vertex integer label vector.

    With ``allow_unlabeled`` the value -1 marks an unknown label, following the
    scikit-learn semi-supervised convention.
    """
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"labels must be 1-dimensional, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError("labels must be integers")
    y = y.astype(np.int64)
    if n is not None and y.shape[0] != n:
        raise ValidationError(f"expected {n} labels, got {y.shape[0]}")
    lowest = -1 if allow_unlabeled else 0
    if y.size and y.min() < lowest:
        raise ValidationError(f"labels must be >= {lowest}")
    return y


def check_index(idx, n, name="index"):
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"{name} has entries outside [0, {n})")
    if np.unique(idx).size != idx.size:
        raise ValidationError(f"{name} has repeated entries")
    return idx


def labeled_index(y):
    """Indices of vertices whose label is known (not -1)."""
    return np.flatnonzero(np.asarray(y) >= 0)


def check_consistent_graph(graph, X):
    if X.n != graph.n:
        raise ValidationError(
            f"attribute matrix has {X.n} rows but the graph has {graph.n} vertices"
        )
