"""Desk-scale simulation studies of the estimators.

Each scenario fixes a data-generating model, a sample size and a set of
estimators; :func:`run_scenario` repeats the experiment and summarises the
errors with Monte Carlo standard errors.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .cle import fit_cle
from .core import Beta, Dataset, ModelSpec, Normal, Poisson, pairwise_products
from .exceptions import MindepError
from .exchange import ChainConfig
from .oracle import gaussian_mle, precision_theta, sample_population
from .ple import fit_ple
from .statlang import statistic

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
FULL_REPS = 1000


@dataclass(frozen=True)
class Scenario:
    """One data-generating setting and the estimators compared on it.

    ``generator`` is ``"gaussian"`` (exact multivariate normal draws with
    covariance ``Sigma``) or ``"population"`` (the exchange-chain sampler on
    ``N`` rows with ``L = L_factor * N`` steps).
    """

    name: str
    label: str
    h_sources: tuple
    theta: tuple
    n: int
    reps: int
    estimators: tuple = ("cle", "ple")
    generator: str = "population"
    Sigma: Optional[tuple] = None
    marginals: tuple = ()
    N: int = 1000
    L_factor: int = 150
    tol: float = 1e-2
    metrics: tuple = ("rmse", "bias", "sd")

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")

    @property
    def K(self) -> int:
        return len(self.theta)

    @property
    def d(self) -> int:
        return len(self.marginals) if self.Sigma is None else len(self.Sigma)

    def statistic(self):
        return statistic(list(self.h_sources), d=self.d)


# --------------------------------------------------------------------------
# scenario catalogue
# --------------------------------------------------------------------------

def _ar(d, rho):
    i = np.arange(d)
    return rho ** np.abs(i[:, None] - i[None, :])


def _exchangeable(d, rho):
    return (1 - rho) * np.eye(d) + rho


def _pair_sources(d):
    return tuple(f"x{i + 1}*x{j + 1}" for i in range(d) for j in range(i + 1, d))


def _gaussian(name, label, Sigma, reps, metrics):
    Sigma = np.asarray(Sigma)
    d = Sigma.shape[0]
    return Scenario(name=name, label=label, h_sources=_pair_sources(d),
                    theta=tuple(precision_theta(Sigma)), n=50, reps=reps,
                    estimators=("cle", "mle", "ple"), generator="gaussian",
                    Sigma=tuple(map(tuple, Sigma)), tol=1e-2, metrics=metrics)


def gaussian_table3(reps=200, **_):
    return [_gaussian("gaussian_table3", "ar rho=1/2", _ar(4, 0.5), reps, ("rmse", "bias", "sd"))]


def gaussian_table4(reps=200, structure=None, rho=None, **_):
    out = []
    for kind, values in (("ar", (0.0, 0.25, 0.5, 0.75)), ("exchangeable", (0.25, 0.5, 0.75))):
        if structure is not None and kind != structure:
            continue
        for r in values:
            if rho is not None and not np.isclose(r, rho):
                continue
            S = _ar(4, r) if kind == "ar" else _exchangeable(4, r)
            out.append(_gaussian("gaussian_table4", f"{kind} rho={r:g}", S, reps, ("norm_rms",)))
    return out


_THREEDIM = ("x1*x2", "x1*x3", "x2*x3", "x1*x2*x3")


def threedim_table5(reps=200, **_):
    return [Scenario(name="threedim_table5", label="theta=(1,0,0,-1)", h_sources=_THREEDIM,
                     theta=(1.0, 0.0, 0.0, -1.0), n=100, reps=reps,
                     marginals=(Normal(), Normal(), Normal()), tol=1e-2,
                     metrics=("rmse", "bias", "sd", "coverage"))]


def threedim_table6(reps=200, a=None, **_):
    out = []
    for v in (0.0, 1.0, 2.0):
        if a is not None and not np.isclose(v, a):
            continue
        out.append(Scenario(name="threedim_table6", label=f"a={v:g}", h_sources=_THREEDIM,
                            theta=(v, 0.0, 0.0, -v), n=100, reps=reps,
                            marginals=(Normal(), Normal(), Normal()), tol=1e-2,
                            metrics=("norm_rms",)))
    return out


def mixed_table7(reps=100, theta=None, **_):
    out = []
    for v in (0.0, 10.0, 100.0):
        if theta is not None and not np.isclose(v, theta):
            continue
        out.append(Scenario(name="mixed_table7", label=f"theta={v:g}", h_sources=("x1/(1+x2)",),
                            theta=(v,), n=50, reps=reps, marginals=(Beta(10, 10), Poisson(3)),
                            tol=1e-5, metrics=("rmse", "bias", "sd")))
    return out


SCENARIOS: dict = {
    "gaussian_table3": gaussian_table3,
    "gaussian_table4": gaussian_table4,
    "threedim_table5": threedim_table5,
    "threedim_table6": threedim_table6,
    "mixed_table7": mixed_table7,
}


def get_scenarios(name: str, reps: Optional[int] = None, full: bool = False, **filters) -> list:
    """Scenario list for a catalogue name; ``full`` switches to 1000 reps."""
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    kwargs = dict(filters)
    if full:
        kwargs["reps"] = FULL_REPS
    elif reps is not None:
        kwargs["reps"] = reps
    out = SCENARIOS[name](**kwargs)
    if not out:
        raise KeyError(f"filters {filters} select no setting of {name}")
    return out


# --------------------------------------------------------------------------
# one replication
# --------------------------------------------------------------------------

def rep_seed(seed: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(rep)])


def _generate(s: Scenario, h, rng) -> Dataset:
    if s.generator == "gaussian":
        C = np.linalg.cholesky(np.asarray(s.Sigma))
        return Dataset.from_array(rng.standard_normal((s.n, s.d)) @ C.T)
    spec = ModelSpec(h=h, d=s.d, marginals=s.marginals, theta=np.asarray(s.theta))
    return sample_population(spec, s.n, s.N, s.L_factor * s.N, rng)


def _run_ple(data, h, s, seed, cache):
    res = fit_ple(data, h, sandwich=True)
    cache["ple"] = res
    if not res.exists:
        raise MindepError("pseudo-likelihood estimate does not exist")
    return res.theta, res.std_errors


def _run_cle(data, h, s, seed, cache):
    ple = cache.get("ple")
    rep = fit_cle(data, h, tol=s.tol, seed=seed, ple=ple, method="mc",
                  cfg=ChainConfig.default(data.n, data.d, seed=seed))
    return rep.theta_hat, rep.std_errors


def _run_mle(data, h, s, seed, cache):
    return gaussian_mle(data), None


ESTIMATORS: dict = {"ple": _run_ple, "cle": _run_cle, "mle": _run_mle}


def run_rep(s: Scenario, seed: int, rep: int) -> dict:
    """Draw one dataset and apply every estimator; failures are recorded."""
    ss = rep_seed(seed, rep)
    data_seed, est_seed = ss.spawn(2)
    rng = np.random.default_rng(data_seed)
    h = s.statistic()
    data = _generate(s, h, rng)
    fit_seed = int(est_seed.generate_state(1, dtype=np.uint64)[0] >> 1)
    out = {"rep": rep, "estimates": {}, "std_errors": {}, "failures": {}, "seconds": {}}
    cache = {}
    # PLE first so CLE can start from it
    order = sorted(s.estimators, key=lambda e: e != "ple")
    for name in order:
        t0 = time.perf_counter()
        try:
            est, se = ESTIMATORS[name](data, h, s, fit_seed, cache)
            out["estimates"][name] = np.asarray(est, dtype=float)
            out["std_errors"][name] = None if se is None else np.asarray(se, dtype=float)
        except (MindepError, np.linalg.LinAlgError) as exc:
            out["failures"][name] = type(exc).__name__
        out["seconds"][name] = time.perf_counter() - t0
    return out


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------

@dataclass
class Row:
    setting: str
    estimator: str
    metric: str
    component: Optional[int]
    value: Optional[float]
    se: Optional[float]

    def to_dict(self):
        return {"setting": self.setting, "estimator": self.estimator, "metric": self.metric,
                "component": self.component, "value": self.value, "se": self.se}


def _rmse(e):
    mse = np.mean(e * e)
    r = math.sqrt(mse)
    if e.size < 2 or r == 0:
        return r, None
    se_mse = np.std(e * e, ddof=1) / math.sqrt(e.size)
    return r, float(se_mse / (2 * r))


def summarize(s: Scenario, reps: list) -> tuple:
    """Rows of metrics with Monte Carlo standard errors, plus skip counts."""
    theta = np.asarray(s.theta)
    rows, skipped, timing = [], {}, {}
    for est in s.estimators:
        got = [r for r in reps if est in r["estimates"]]
        skipped[est] = len(reps) - len(got)
        timing[est] = float(np.median([r["seconds"][est] for r in reps])) if reps else None
        if not got:
            continue
        E = np.array([r["estimates"][est] for r in got]) - theta
        R = E.shape[0]
        if "norm_rms" in s.metrics:
            v, se = _rmse(np.sqrt((E * E).sum(axis=1)))
            rows.append(Row(s.label, est, "norm_rms", None, v, se))
        for k in range(s.K):
            e = E[:, k]
            if "rmse" in s.metrics:
                v, se = _rmse(e)
                rows.append(Row(s.label, est, "rmse", k + 1, v, se))
            if "bias" in s.metrics:
                rows.append(Row(s.label, est, "bias", k + 1, float(e.mean()),
                                float(e.std(ddof=1) / math.sqrt(R)) if R > 1 else None))
            if "sd" in s.metrics:
                if R > 1:
                    sd = float(e.std(ddof=1))
                    rows.append(Row(s.label, est, "sd", k + 1, sd, sd / math.sqrt(2 * (R - 1))))
                else:
                    rows.append(Row(s.label, est, "sd", k + 1, None, None))
            if "coverage" in s.metrics and est == "cle":
                se = np.array([r["std_errors"][est][k] for r in got])
                hit = np.abs(e) <= Z95 * se
                c = float(hit.mean())
                rows.append(Row(s.label, est, "coverage", k + 1, c, math.sqrt(c * (1 - c) / R)))
    return rows, skipped, timing


@dataclass
class ScenarioResult:
    scenario: Scenario
    seed: int
    rows: list
    skipped: dict
    timing: dict
    reps: list = field(repr=False, default_factory=list)

    def value(self, estimator, metric, component=None):
        for r in self.rows:
            if r.estimator == estimator and r.metric == metric and r.component == component:
                return r.value
        raise KeyError((estimator, metric, component))

    def to_dict(self, timing: bool = True):
        s = self.scenario
        out = {"scenario": s.name, "setting": s.label, "seed": self.seed, "reps": s.reps,
               "n": s.n, "theta": list(s.theta), "h": list(s.h_sources), "tol": s.tol,
               "generator": s.generator, "skipped": self.skipped,
               "rows": [r.to_dict() for r in self.rows]}
        if s.generator == "population":
            out["population"] = {"N": s.N, "L": s.L_factor * s.N}
        if timing:
            out["median_seconds"] = self.timing
        return out


def _rep_task(args):
    s, seed, rep = args
    return run_rep(s, seed, rep)


def run_scenario(s: Scenario, seed: int = 0, threads: int = 1,
                 progress: Optional[Callable] = None) -> ScenarioResult:
    """Repeat ``s`` ``s.reps`` times; each rep's seed depends only on
    ``(seed, rep)`` so results do not depend on ``threads``."""
    tasks = [(s, seed, r) for r in range(s.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(_rep_task, tasks))
    else:
        reps = []
        for t in tasks:
            reps.append(_rep_task(t))
            if progress:
                progress(t[2] + 1, s.reps)
    rows, skipped, timing = summarize(s, reps)
    return ScenarioResult(s, seed, rows, skipped, timing, reps)


def format_table(results: list) -> str:
    """Human-readable table of every row of every result."""
    lines = [f"{'setting':<22}{'estimator':<10}{'metric':<10}{'comp':>5}{'value':>12}{'mc_se':>10}"]
    for res in results:
        for r in res.rows:
            val = "n/a" if r.value is None else f"{r.value:.4f}"
            se = "n/a" if r.se is None else f"{r.se:.4f}"
            comp = "" if r.component is None else str(r.component)
            lines.append(f"{r.setting:<22}{r.estimator:<10}{r.metric:<10}{comp:>5}{val:>12}{se:>10}")
        skips = ", ".join(f"{k}={v}" for k, v in res.skipped.items() if v)
        if skips:
            lines.append(f"{'':<22}skipped reps: {skips}")
    return "\n".join(lines)
