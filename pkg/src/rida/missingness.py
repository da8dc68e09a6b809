"""Seeded attribute-incompleteness masks.

A :class:`MissingnessSpec` removes ``floor(alpha * d)`` attribute positions from
each of ``floor(beta * n)`` vertices.  ``mask.tsv`` lists the *missing* entries,
one ``v<TAB>j`` line each, in row-major order.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DatasetFormatError, ValidationError
from .graphio import AttributeMatrix
from .validation import check_fraction


@dataclass(frozen=True)
class MissingnessSpec:
    alpha: float
    beta: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_fraction(self.alpha, "alpha"))
        object.__setattr__(self, "beta", check_fraction(self.beta, "beta"))

    def counts(self, n, d):
        """(affected vertices, missing positions per affected vertex)."""
        # the epsilon guards products such as 0.7 * 2485 = 1739.4999...
        return (
            int(np.floor(self.beta * n + 1e-9)),
            int(np.floor(self.alpha * d + 1e-9)),
        )


def apply_missingness(attributes, spec):
    """Hide entries of a fully observed attribute matrix.

    Affected vertices are drawn first, without replacement.  Then, for each
    affected vertex in ascending id order, fresh positions are drawn from the
    same stream.
    """
    if not attributes.is_complete():
        raise ValidationError("apply_missingness expects a fully observed matrix")
    n, d = attributes.shape
    n_vertices, n_positions = spec.counts(n, d)
    rng = np.random.default_rng(spec.seed)
    affected = np.sort(rng.choice(n, size=n_vertices, replace=False))
    mask = np.ones((n, d), dtype=bool)
    for v in affected:
        mask[v, rng.choice(d, size=n_positions, replace=False)] = False
    return AttributeMatrix(attributes.values, mask)


def save_mask(attributes, path, *, allow_empty=False):
    """Write the missing entries of ``attributes`` to ``path``."""
    rows, cols = np.nonzero(~attributes.mask)
    if rows.size == 0 and not allow_empty:
        raise ValidationError("mask has no missing entries; pass allow_empty=True to write it")
    with Path(path).open("w", encoding="ascii", newline="\n") as fh:
        fh.writelines(f"{v}\t{j}\n" for v, j in zip(rows, cols))


def load_mask(complete, path):
    """Apply a saved mask to a fully observed matrix."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask file not found: {path}")
    n, d = complete.shape
    mask = np.ones((n, d), dtype=bool)
    with path.open("r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DatasetFormatError(path, lineno, "expected 'v<TAB>j'")
            try:
                v, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise DatasetFormatError(path, lineno, "non-integer id") from None
            if not (0 <= v < n and 0 <= j < d):
                raise ValidationError(f"{path}:{lineno}: entry ({v}, {j}) outside {n}x{d}")
            if not mask[v, j]:
                raise ValidationError(f"{path}:{lineno}: duplicate entry ({v}, {j})")
            mask[v, j] = False
    return AttributeMatrix(complete.values, mask)


class MissingnessMasker(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`apply_missingness`.

    Parameters
    ----------
    alpha : float
        Fraction of attribute positions removed from each affected vertex.
    beta : float
        Fraction of vertices affected.
    random_state : int
        Seed of the sampling stream.
    """

    def __init__(self, alpha=0.3, beta=0.7, random_state=0):
        self.alpha = alpha
        self.beta = beta
        self.random_state = random_state

    def fit(self, X, y=None):
        self.spec_ = MissingnessSpec(self.alpha, self.beta, self.random_state)
        X = _as_attributes(X)
        self.n_features_in_ = X.d
        return self

    def transform(self, X):
        X = _as_attributes(X)
        spec = getattr(self, "spec_", None) or MissingnessSpec(self.alpha, self.beta, self.random_state)
        return apply_missingness(X, spec)


def _as_attributes(X):
    if isinstance(X, AttributeMatrix):
        return X
    return AttributeMatrix(np.asarray(X, dtype=np.float64))
