"""Domain types: column schemas, datasets, marginal specifications, canonical
statistics and model specifications.

Values of every column kind are stored in a single ``float64`` matrix:
continuous and circular values as reals, counts as integral floats and
categorical values as their level index (declaration order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .exceptions import ModelSpecError, StatisticDomainError

CONTINUOUS = "continuous"
COUNT = "count"
CATEGORICAL = "categorical"
CIRCULAR = "circular"
KINDS = (CONTINUOUS, COUNT, CATEGORICAL, CIRCULAR)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ColumnType:
    """Kind of a single column.

    ``levels`` is only meaningful for categorical columns. ``quantify`` allows a
    categorical column to enter arithmetic statistics through its level index.
    """

    kind: str = CONTINUOUS
    levels: tuple = ()
    quantify: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelSpecError(f"unknown column kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if self.kind == CATEGORICAL and len(set(self.levels)) < 2:
            raise ModelSpecError("categorical column needs at least 2 distinct levels")
        if self.kind == CATEGORICAL and len(set(self.levels)) != len(self.levels):
            raise ModelSpecError("categorical levels must be distinct")

    @classmethod
    def continuous(cls):
        return cls(CONTINUOUS)

    @classmethod
    def count(cls):
        return cls(COUNT)

    @classmethod
    def circular(cls):
        return cls(CIRCULAR)

    @classmethod
    def categorical(cls, levels, quantify=False):
        return cls(CATEGORICAL, tuple(levels), quantify)

    def level_index(self, label) -> int:
        try:
            return self.levels.index(str(label))
        except ValueError:
            raise ModelSpecError(f"{label!r} is not a level of {self.levels}") from None

    def check_values(self, values: np.ndarray) -> list[str]:
        """Return invariant violations for a column of encoded values."""
        out = []
        if not np.all(np.isfinite(values)):
            out.append("missing or non-finite values")
            return out
        if self.kind == COUNT:
            if np.any(values < 0) or np.any(values != np.round(values)):
                out.append("count values must be non-negative integers")
        elif self.kind == CATEGORICAL:
            if (np.any(values != np.round(values)) or np.any(values < 0)
                    or np.any(values >= len(self.levels))):
                out.append("categorical values must be level indices")
        elif self.kind == CIRCULAR:
            if np.any(values < 0) or np.any(values >= TWO_PI):
                out.append("circular values must lie in [0, 2*pi)")
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` rows by ``d`` typed columns.

    Parameters
    ----------
    values : array of shape (n, d)
        Encoded values (see module docstring).
    types : sequence of ColumnType
    names : sequence of str, optional
    """

    values: np.ndarray
    types: tuple
    names: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ModelSpecError("dataset values must be a 2-d array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        types = tuple(self.types)
        names = tuple(self.names) or tuple(f"x{i + 1}" for i in range(values.shape[1]))
        if len(types) != values.shape[1] or len(names) != values.shape[1]:
            raise ModelSpecError(
                f"{values.shape[1]} columns but {len(types)} types and {len(names)} names")
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "names", names)
        for j, ct in enumerate(types):
            problems = ct.check_values(values[:, j])
            if problems:
                raise ModelSpecError(f"column {names[j]!r}: {problems[0]}")

    @classmethod
    def from_array(cls, X, types=None, names=None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if types is None:
            types = [ColumnType.continuous()] * X.shape[1]
        return cls(X, tuple(types), tuple(names or ()))

    @classmethod
    def from_columns(cls, names, types, columns) -> "Dataset":
        """Build from raw column values; categorical labels are encoded."""
        cols = []
        for name, ct, raw in zip(names, types, columns):
            if ct.kind == CATEGORICAL:
                cols.append([ct.level_index(v) for v in raw])
            else:
                try:
                    cols.append([float(v) for v in raw])
                except (TypeError, ValueError):
                    raise ModelSpecError(f"column {name!r}: non-numeric value") from None
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise ModelSpecError(f"columns have different lengths {sorted(lengths)}")
        return cls(np.array(cols, dtype=float).T.reshape(-1, len(cols)), tuple(types), tuple(names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def decode(self, j: int, value):
        """Return the user-facing representation of an encoded value."""
        ct = self.types[j]
        if ct.kind == CATEGORICAL:
            return ct.levels[int(value)]
        if ct.kind == COUNT:
            return int(value)
        return float(value)

    def rows(self) -> list[tuple]:
        return [tuple(self.decode(j, v) for j, v in enumerate(r)) for r in self.values]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.types == other.types and self.names == other.names
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, names={self.names})"


class CanonicalStatistic:
    """Vector-valued canonical statistic ``h: X -> R^K``.

    Parameters
    ----------
    func : callable
        Maps a row (1-d float array of length d) to ``K`` values, or, when
        ``vectorized`` is true, an ``(m, d)`` array to an ``(m, K)`` array.
    dim : int
        Number of components ``K``.
    vectorized : bool
        Whether ``func`` accepts a matrix of rows.
    names : sequence of str, optional
        Component labels used in reports.
    kernel : numba function, optional
        Compiled row evaluator ``kernel(x, out)`` writing ``K`` values into
        ``out``; used by the exchange sampler when available.
    """

    def __init__(self, func: Callable, dim: int, *, vectorized: bool = False,
                 names: Optional[Sequence[str]] = None, kernel=None, exprs=None,
                 d: Optional[int] = None):
        if int(dim) < 1:
            raise ModelSpecError("canonical statistic needs K >= 1")
        self.func = func
        self.dim = int(dim)
        self.vectorized = vectorized
        self.names = tuple(names) if names is not None else tuple(f"h{k + 1}" for k in range(self.dim))
        self.kernel = kernel
        self.exprs = exprs
        self.d = d

    def __call__(self, row) -> np.ndarray:
        row = np.asarray(row, dtype=float)
        if self.vectorized:
            out = np.asarray(self.func(row[None, :]), dtype=float).reshape(self.dim)
        else:
            out = np.asarray(self.func(row), dtype=float).reshape(self.dim)
        if not np.all(np.isfinite(out)):
            raise StatisticDomainError(f"canonical statistic is not finite at row {row.tolist()}")
        return out

    def evaluate(self, X) -> np.ndarray:
        """Evaluate on every row of ``X``; returns shape ``(m, K)``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if self.vectorized:
            out = np.asarray(self.func(X), dtype=float).reshape(X.shape[0], self.dim)
        else:
            out = np.empty((X.shape[0], self.dim))
            for t in range(X.shape[0]):
                out[t] = np.asarray(self.func(X[t]), dtype=float).reshape(self.dim)
        if not np.all(np.isfinite(out)):
            bad = int(np.argmax(~np.all(np.isfinite(out), axis=1)))
            raise StatisticDomainError(f"canonical statistic is not finite at row {X[bad].tolist()}")
        return out

    def __repr__(self):
        return f"CanonicalStatistic(K={self.dim}, names={self.names})"


def pairwise_products(d: int) -> CanonicalStatistic:
    """``h(x) = (x_i x_j)_{i<j}`` in lexicographic pair order."""
    from .statlang import compile_statistic, parse
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    exprs = [parse(f"x{i + 1}*x{j + 1}", d) for i, j in pairs]
    # compiled form keeps types and exprs, so sub-statistics get a kernel too
    h = compile_statistic(exprs, [ColumnType.continuous()] * d)
    h.names = tuple(f"x{i + 1}*x{j + 1}" for i, j in pairs)
    return h


# --------------------------------------------------------------------------
# marginal specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    var: float = 1.0
    kind = CONTINUOUS

    def violations(self):
        return [] if self.var > 0 and math.isfinite(self.mean) else [f"Normal variance {self.var} must be > 0"]

    def sample(self, rng, size):
        return self.mean + math.sqrt(self.var) * rng.standard_normal(size)

    def grid(self, points=201, width=6.0):
        sd = math.sqrt(self.var)
        x = np.linspace(self.mean - width * sd, self.mean + width * sd, points)
        w = stats.norm.pdf(x, self.mean, sd)
        return x, w / w.sum()


@dataclass(frozen=True)
class Poisson:
    rate: float = 1.0
    kind = COUNT

    def violations(self):
        return [] if self.rate > 0 else [f"Poisson rate {self.rate} must be > 0"]

    def support_size(self, tail=1e-8, floor=21):
        m = int(stats.poisson.isf(tail, self.rate)) + 1
        return max(m, floor)

    def sample(self, rng, size):
        # inverse CDF on a table capped where the cumulative mass reaches 1 - 1e-12
        top = int(stats.poisson.isf(1e-12, self.rate)) + 2
        cdf = np.cumsum(stats.poisson.pmf(np.arange(top), self.rate))
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(size), side="right").astype(float)

    def grid(self, size=None):
        m = size or self.support_size()
        x = np.arange(m, dtype=float)
        w = stats.poisson.pmf(x, self.rate)
        return x, w / w.sum()


@dataclass(frozen=True)
class Bernoulli:
    p: float = 0.5
    kind = COUNT

    def violations(self):
        return [] if 0 < self.p < 1 else [f"Bernoulli p {self.p} must lie in (0, 1)"]

    def sample(self, rng, size):
        return (rng.random(size) < self.p).astype(float)

    def grid(self):
        return np.array([0.0, 1.0]), np.array([1 - self.p, self.p])


@dataclass(frozen=True)
class Beta:
    a: float = 1.0
    b: float = 1.0
    kind = CONTINUOUS

    def violations(self):
        return [] if self.a > 0 and self.b > 0 else [f"Beta parameters ({self.a}, {self.b}) must be > 0"]

    def sample(self, rng, size):
        return rng.beta(self.a, self.b, size)

    def grid(self, points=201):
        x = (np.arange(points) + 0.5) / points
        w = stats.beta.pdf(x, self.a, self.b)
        return x, w / w.sum()


@dataclass(frozen=True)
class UniformCircle:
    kind = CIRCULAR

    def violations(self):
        return []

    def sample(self, rng, size):
        return rng.random(size) * TWO_PI

    def grid(self, points=64):
        return TWO_PI * np.arange(points) / points, np.full(points, 1.0 / points)


@dataclass(frozen=True)
class FiniteTable:
    support: tuple
    probs: tuple
    kind = COUNT

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(float(v) for v in self.support))
        object.__setattr__(self, "probs", tuple(float(v) for v in self.probs))

    def violations(self):
        out = []
        p = np.asarray(self.probs)
        if len(self.support) != len(p):
            out.append(f"FiniteTable has {len(self.support)} support points and {len(p)} probabilities")
        if np.any(p < 0):
            out.append("FiniteTable probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            out.append(f"FiniteTable sums to {p.sum():.12g}")
        return out

    def sample(self, rng, size):
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return np.asarray(self.support)[idx]

    def grid(self):
        return np.asarray(self.support), np.asarray(self.probs)


@dataclass(frozen=True)
class Empirical:
    """Use the observed marginal values; not samplable."""

    kind = None

    def violations(self):
        return []

    def sample(self, rng, size):
        raise ModelSpecError("empirical marginals cannot be sampled")


MARGINAL_FAMILIES = {
    "normal": Normal, "poisson": Poisson, "bernoulli": Bernoulli, "beta": Beta,
    "uniform_circle": UniformCircle, "finite": FiniteTable, "empirical": Empirical,
}


@dataclass(frozen=True)
class ModelSpec:
    """Canonical statistic, marginals and dependence parameter."""

    h: CanonicalStatistic
    d: int
    marginals: tuple = ()
    theta: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def K(self) -> int:
        return self.h.dim


def validate_model(spec: ModelSpec) -> list[str]:
    """Return every invariant violation of ``spec``; empty when consistent."""
    out = []
    if spec.d < 1:
        out.append(f"d={spec.d} must be positive")
    if len(spec.marginals) != spec.d:
        out.append(f"marginals length {len(spec.marginals)} ≠ d={spec.d}")
    if spec.theta.shape != (spec.h.dim,):
        out.append(f"theta length {spec.theta.size} ≠ K={spec.h.dim}")
    if not np.all(np.isfinite(spec.theta)):
        out.append("theta must be finite")
    if spec.h.d is not None and spec.h.d != spec.d:
        out.append(f"canonical statistic declared for d={spec.h.d}, model has d={spec.d}")
    for i, m in enumerate(spec.marginals):
        for v in m.violations():
            out.append(f"marginals[{i}]: {v}")
    return out


def eval_h(spec: ModelSpec, row, types: Optional[Sequence[ColumnType]] = None) -> np.ndarray:
    """Evaluate the canonical statistic of ``spec`` on one row.

    ``row`` holds decoded values; categorical labels are encoded through
    ``types`` when given.
    """
    if len(row) != spec.d:
        raise StatisticDomainError(f"row has {len(row)} entries, model has d={spec.d}")
    encoded = []
    for j, v in enumerate(row):
        ct = types[j] if types is not None else None
        if ct is not None and ct.kind == CATEGORICAL and isinstance(v, str):
            encoded.append(float(ct.level_index(v)))
        elif isinstance(v, str):
            raise StatisticDomainError(f"entry {j} is a label but column {j} is not categorical")
        else:
            encoded.append(float(v))
    if types is not None:
        for j, ct in enumerate(types):
            if ct.check_values(np.array([encoded[j]])):
                raise StatisticDomainError(f"entry {j}={row[j]!r} does not match column kind {ct.kind}")
    return spec.h(np.array(encoded))
