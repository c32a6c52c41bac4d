"""Marginal order statistics and rank permutations.

A dataset ``x(1..n)`` is split into sorted marginal values ``M_i`` and
permutations ``pi_i`` with ``x_i(t) = M_i(pi_i(t))``. Permutations are
0-based here; :func:`permutation_one_based` converts for display and files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CanonicalStatistic, Dataset
from .exceptions import ModelSpecError

NATURAL = "natural"
OBSERVATIONAL = "observational"


@dataclass(frozen=True, eq=False)
class RankDecomposition:
    """Sorted marginals ``M`` (d, n) and rank permutations ``pi`` (d, n)."""

    M: np.ndarray
    pi: np.ndarray
    order_policy: str
    types: tuple
    names: tuple

    @property
    def n(self) -> int:
        return self.M.shape[1]

    @property
    def d(self) -> int:
        return self.M.shape[0]

    def values(self, pi=None) -> np.ndarray:
        """Recomposed data matrix (n, d) for ``pi`` (default: stored ranks)."""
        pi = self.pi if pi is None else pi
        return np.take_along_axis(self.M, pi, axis=1).T

    def check(self):
        if self.M.shape != self.pi.shape:
            raise ModelSpecError("M and pi shapes differ")
        ref = np.arange(self.n)
        for i in range(self.d):
            if not np.array_equal(np.sort(self.pi[i]), ref):
                raise ModelSpecError(f"pi[{i}] is not a permutation of 0..{self.n - 1}")


def decompose(data: Dataset, policy: str = OBSERVATIONAL, rng=None) -> RankDecomposition:
    """Split ``data`` into marginal order statistics and ranks.

    Under the natural order, tied values receive ranks drawn uniformly among
    the consistent assignments using ``rng``.
    """
    if data.n < 1:
        raise ModelSpecError("decompose needs n >= 1")
    X = data.values
    n, d = X.shape
    if policy == OBSERVATIONAL:
        M = X.T.copy()
        pi = np.tile(np.arange(n), (d, 1))
    elif policy == NATURAL:
        rng = np.random.default_rng(rng)
        M = np.empty((d, n))
        pi = np.empty((d, n), dtype=np.int64)
        for i in range(d):
            # ties are broken by independent uniform keys
            order = np.lexsort((rng.random(n), X[:, i]))
            M[i] = X[order, i]
            pi[i, order] = np.arange(n)
    else:
        raise ModelSpecError(f"unknown order policy {policy!r}")
    M.setflags(write=False)
    pi.setflags(write=False)
    return RankDecomposition(M, pi, policy, data.types, data.names)


def recompose(dec: RankDecomposition) -> Dataset:
    """Rebuild the dataset ``x(t) = (M o pi)(t)``."""
    dec.check()
    return Dataset(dec.values(), dec.types, dec.names)


def h_star(dec: RankDecomposition, h: CanonicalStatistic, pi=None) -> np.ndarray:
    """Sufficient statistic ``sum_t h((M o pi)(t))`` of the conditional likelihood."""
    return h.evaluate(dec.values(pi)).sum(axis=0)


def permutation_one_based(pi) -> list:
    return [[int(v) + 1 for v in row] for row in np.asarray(pi)]


def relative_arrangement(pi) -> tuple:
    """Key identifying ``pi`` up to a common relabelling of rows.

    Two permutation tuples give the same multiset of recomposed rows (for
    distinct marginal values) iff they share this key.
    """
    pi = np.asarray(pi)
    inv0 = np.argsort(pi[0])
    return tuple(tuple(int(v) for v in pi[i, inv0]) for i in range(1, pi.shape[0]))
