"""Command-line front end: ``mindep fit | sample | bounds | simulate``.

Every command reads one TOML config (see README). Reports are JSON with
lossless floats; a short human summary goes to standard error. Exit codes
are 0 (ok), 2 (configuration or input error), 3 (estimator does not exist)
and 4 (a solver did not converge).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cle import (ENUMERATION_BUDGET, Enumeration, FitReport, aic, conditional_loglik_mc,
                  fit_cle, wald_test)
from .core import (CATEGORICAL, KINDS, MARGINAL_FAMILIES, ColumnType, Dataset, Empirical,
                   ModelSpec, validate_model)
from .exceptions import (ConvergenceError, EnumerationBudgetError, MindepError,
                         ModelSpecError, NonExistenceError, StatisticDomainError)
from .exchange import ChainConfig
from .experiments import SCENARIOS, Scenario, format_table, get_scenarios, run_scenario
from .finite import expectation_range
from .oracle import sample_population
from .ple import fit_ple
from .rank import OBSERVATIONAL, decompose
from .statlang import StatlangSyntaxError, compile_statistic

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("mindep")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONEXISTENCE = 3
EXIT_CONVERGENCE = 4


class ConfigError(Exception):
    """Invalid configuration or input file."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from None


def _require(cfg, key, where="config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing key {key!r}")
    return cfg[key]


def parse_columns(cfg) -> list:
    """``[[columns]]`` tables -> ``[(name, ColumnType)]``."""
    out = []
    for j, col in enumerate(cfg.get("columns", [])):
        name = _require(col, "name", f"columns[{j}]")
        kind = col.get("kind", "continuous")
        if kind not in KINDS:
            raise ConfigError(f"column {name!r}: unknown kind {kind!r}")
        levels = tuple(str(v) for v in col.get("levels", ()))
        if kind == CATEGORICAL and not levels:
            raise ConfigError(f"column {name!r}: categorical columns need levels")
        out.append((name, ColumnType(kind, levels, bool(col.get("quantify", False)))))
    return out


def parse_marginal(spec, where="marginal"):
    if isinstance(spec, str):
        spec = {"family": spec}
    spec = dict(spec)
    family = spec.pop("family", None)
    if family not in MARGINAL_FAMILIES:
        raise ConfigError(f"{where}: unknown family {family!r}; choose from {sorted(MARGINAL_FAMILIES)}")
    try:
        m = MARGINAL_FAMILIES[family](**spec)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    problems = m.violations()
    if problems:
        raise ConfigError(f"{where}: {problems[0]}")
    return m


def chain_config(cfg, n, d, seed) -> ChainConfig:
    ch = cfg.get("chain", {})
    base = ChainConfig.default(n, d, seed=seed, L=ch.get("L"))
    try:
        return ChainConfig(L=int(ch.get("L", base.L)), burn_in=int(ch.get("burn_in", base.burn_in)),
                           thin=int(ch.get("thin", base.thin)),
                           resync_period=int(ch.get("resync_period", base.resync_period)), seed=seed)
    except ModelSpecError as exc:
        raise ConfigError(f"chain: {exc}") from None


def read_csv(path, columns) -> Dataset:
    """Read a comma-separated file with a header row.

    ``columns`` selects and types the columns; an empty schema reads every
    column as continuous.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"data file {path} not found") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            rows.append(row)
    if not columns:
        columns = [(h, ColumnType.continuous()) for h in header]
    idx = []
    for name, _ in columns:
        if name not in header:
            raise ConfigError(f"{path}: column {name!r} not in header {header}")
        idx.append(header.index(name))
    raw = [[r[i].strip() for r in rows] for i in idx]
    try:
        return Dataset.from_columns([c[0] for c in columns], [c[1] for c in columns], raw)
    except (ModelSpecError, KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _statistic(cfg, types):
    h = _require(cfg, "h")
    if isinstance(h, str):
        h = [h]
    try:
        return compile_statistic(list(h), types)
    except StatlangSyntaxError as exc:
        raise ConfigError(f"h: {exc}") from None


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def version_string() -> str:
    """Package version, with the git commit of the source tree when known."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "-C", str(here), "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _clean(obj):
    """Convert numpy values to plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_report(report: dict, args) -> str:
    report = dict(report)
    report["version"] = version_string()
    if not args.no_timestamp:
        report["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    # float repr is the shortest string that parses back to the same double
    text = json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def _summary(lines):
    sys.stderr.write("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _seed(cfg, args) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def _fit_report(rep: FitReport, method) -> dict:
    out = rep.to_dict()
    out["method"] = method
    return out


def cmd_fit(cfg, args) -> int:
    seed = _seed(cfg, args)
    columns = parse_columns(cfg)
    data_path = _require(cfg, "data")
    data_path = data_path.get("path") if isinstance(data_path, dict) else data_path
    data = read_csv(data_path, columns)
    h = _statistic(cfg, data.types)
    method = cfg.get("method", "cle")
    if method not in ("cle", "ple", "exact"):
        raise ConfigError(f"method must be cle, ple or exact, not {method!r}")
    tol = float(cfg.get("tol", 1e-2))
    max_iter = int(cfg.get("max_iter", 200))
    chain = chain_config(cfg, data.n, data.d, seed)
    policy = cfg.get("order_policy", OBSERVATIONAL)
    dec = decompose(data, OBSERVATIONAL)
    try:
        enum = Enumeration(dec, h, int(cfg.get("enumeration_budget", ENUMERATION_BUDGET)))
    except EnumerationBudgetError:
        enum = None
    if method == "exact" and enum is None:
        raise ConfigError("method 'exact' needs (n!)^(d-1) within the enumeration budget")

    if method == "ple":
        res = fit_ple(data, h)
        if not res.exists:
            raise NonExistenceError("pseudo-likelihood estimate does not exist", res.certificate)
        rep = FitReport(theta_hat=res.theta, covariance=res.covariance, loglik_conditional=None,
                        iterations=res.iterations, converged=True, method="ple", n=data.n,
                        names=h.names, seed=seed, tol=None, h_obs=None)
        if enum is not None:
            rep.loglik_conditional = enum.loglik(res.theta)
        else:
            rep.loglik_conditional, rep.loglik_se = conditional_loglik_mc(res.theta, dec, h, chain, seed)
            rep.chain_config = chain
    else:
        rep = fit_cle(data, h, tol=tol, max_iter=max_iter, cfg=chain, seed=seed,
                      method="exact" if method == "exact" else "auto", order_policy=policy,
                      compute_loglik=enum is None, init=cfg.get("init", "ple"),
                      theta0=cfg.get("theta0"))
        if not rep.converged:
            report = _fit_report(rep, method)
            report["error"] = "scoring did not converge"
            dump_report({"command": "fit", "config": cfg, "result": report}, args)
            return EXIT_CONVERGENCE
    K = rep.K
    wald = []
    for k in range(K):
        try:
            stat, dof, p = wald_test(rep, [k])
        except np.linalg.LinAlgError:
            stat, dof, p = float("nan"), 1, float("nan")
        wald.append({"component": h.names[k], "statistic": stat, "p_value": p})
    result = _fit_report(rep, method)
    result["wald"] = wald
    try:
        result["overall_wald"] = dict(zip(("statistic", "dof", "p_value"), wald_test(rep)))
    except np.linalg.LinAlgError:
        result["overall_wald"] = None
    result["aic"] = aic(rep) if rep.loglik_conditional is not None else None
    result["loglik_kind"] = "exact" if enum is not None else "monte_carlo"
    result["data"] = {"path": str(data_path), "n": data.n, "d": data.d, "names": list(data.names)}
    dump_report({"command": "fit", "config": cfg, "result": result}, args)
    lines = [f"{method} fit, n={data.n}, K={K}, converged={rep.converged}"]
    for k in range(K):
        lines.append(f"  {h.names[k]:<24} {rep.theta_hat[k]: .6f}  se {rep.std_errors[k]:.6f}"
                     f"  p {wald[k]['p_value']:.4g}")
    _summary(lines)
    return EXIT_OK


def _spec_from_config(cfg):
    columns = parse_columns(cfg)
    margs = _require(cfg, "marginals")
    marginals = [parse_marginal(m, f"marginals[{i}]") for i, m in enumerate(margs)]
    d = len(marginals)
    if not columns:
        columns = [(f"x{i + 1}", ColumnType(m.kind or "continuous")) for i, m in enumerate(marginals)]
    if len(columns) != d:
        raise ConfigError(f"{len(columns)} columns declared for {d} marginals")
    for i, m in enumerate(marginals):
        if isinstance(m, Empirical):
            raise ConfigError(f"marginals[{i}]: empirical marginals cannot be sampled")
    h = _statistic(cfg, [c[1] for c in columns])
    theta = np.atleast_1d(np.asarray(_require(cfg, "theta"), dtype=float))
    spec = ModelSpec(h=h, d=d, marginals=marginals, theta=theta)
    problems = validate_model(spec)
    if problems:
        raise ConfigError("; ".join(problems))
    return spec, columns


def cmd_sample(cfg, args) -> int:
    seed = _seed(cfg, args)
    spec, columns = _spec_from_config(cfg)
    n = int(_require(cfg, "n"))
    N = int(cfg.get("N", max(n, 1000)))
    L = int(cfg.get("L", 150 * N))
    rng = np.random.default_rng(seed)
    data = sample_population(spec, n, N, L, rng)
    names = [c[0] for c in columns]
    lines = [",".join(names)]
    for row in data.values:
        cells = []
        for (name, ct), v in zip(columns, row):
            if ct.kind == CATEGORICAL:
                cells.append(ct.levels[int(v)])
            else:
                cells.append(str(int(v)) if ct.kind == "count" else repr(float(v)))
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    _summary([f"sampled n={n} rows from a population of N={N} after L={L} exchange steps"])
    return EXIT_OK


def cmd_bounds(cfg, args) -> int:
    """Correlation range for each marginal setting under ``h`` (default ``x1*x2``)."""
    b = cfg.get("bounds", cfg)
    truncation = int(b.get("truncation", 21))
    probe = float(b.get("theta_probe", 10.0))
    tol = float(b.get("tol", 1e-10))
    max_sweeps = int(b.get("max_sweeps", 100_000))
    settings = _require(b, "settings", "bounds")
    rows = []
    for k, st in enumerate(settings):
        margs = _require(st, "marginals", f"settings[{k}]")
        if len(margs) != 2:
            raise ConfigError(f"settings[{k}]: bounds need exactly two marginals")
        grids = []
        for i, m in enumerate(margs):
            m = parse_marginal(m, f"settings[{k}].marginals[{i}]")
            if hasattr(m, "support_size"):
                grids.append(m.grid(truncation))
            elif hasattr(m, "grid"):
                grids.append(m.grid())
            else:
                raise ConfigError(f"settings[{k}].marginals[{i}]: marginal is not finite")
        (x1, r1), (x2, r2) = grids
        h_src = st.get("h", b.get("h", "x1*x2"))
        h = _statistic({"h": [h_src]}, [ColumnType.continuous()] * 2)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        table = h.evaluate(np.column_stack([X1.ravel(), X2.ravel()]))[:, 0].reshape(X1.shape)
        lower, upper = expectation_range(table, [r1, r2], probe, [x1, x2], tol, max_sweeps)
        rows.append({"label": st.get("label", f"setting{k + 1}"), "marginals": margs,
                     "h": h_src, "lower": lower, "upper": upper})
    dump_report({"command": "bounds", "truncation": truncation, "theta_probe": probe, "tol": tol,
                 "rows": rows}, args)
    _summary([f"{r['label']:<16} lower {r['lower']: .4f}  upper {r['upper']: .4f}" for r in rows])
    return EXIT_OK


def _custom_scenario(sc, reps):
    try:
        margs = tuple(parse_marginal(m) for m in sc.get("marginals", ()))
        Sigma = sc.get("Sigma")
        return Scenario(name=sc.get("name", "custom"), label=sc.get("label", "custom"),
                        h_sources=tuple(_require(sc, "h", "scenario")),
                        theta=tuple(float(v) for v in _require(sc, "theta", "scenario")),
                        n=int(_require(sc, "n", "scenario")), reps=int(sc.get("reps", reps or 100)),
                        estimators=tuple(sc.get("estimators", ("cle", "ple"))),
                        generator="gaussian" if Sigma is not None else "population",
                        Sigma=None if Sigma is None else tuple(map(tuple, Sigma)), marginals=margs,
                        N=int(sc.get("N", 1000)), L_factor=int(sc.get("L_factor", 150)),
                        tol=float(sc.get("tol", 1e-2)),
                        metrics=tuple(sc.get("metrics", ("rmse", "bias", "sd"))))
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None


def cmd_simulate(cfg, args) -> int:
    seed = _seed(cfg, args)
    sc = cfg.get("scenario", {})
    if isinstance(sc, str):
        sc = {"name": sc}
    name = sc.get("name", "custom")
    reps = sc.get("reps")
    if name in SCENARIOS:
        filters = {k: sc[k] for k in ("structure", "rho", "a", "theta") if k in sc}
        try:
            scenarios = get_scenarios(name, reps=reps, full=bool(sc.get("full", False)), **filters)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    elif name == "custom" or "h" in sc:
        scenarios = [_custom_scenario(sc, reps)]
    else:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)} or custom")
    results = [run_scenario(s, seed=seed, threads=args.threads) for s in scenarios]
    dump_report({"command": "simulate", "scenario": name,
                 "results": [r.to_dict(timing=not args.no_timestamp) for r in results]}, args)
    _summary([format_table(results)])
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "sample": cmd_sample, "bounds": cmd_bounds, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mindep", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mindep {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap")
        p.add_argument("--no-timestamp", action="store_true", help="omit the creation time")
        p.add_argument("--output", default=None, help="report path (default: stdout)")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MINDEP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ModelSpecError, StatisticDomainError, StatlangSyntaxError,
            EnumerationBudgetError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except NonExistenceError as exc:
        cert = "" if exc.certificate is None else \
            f" (separating direction {np.round(np.asarray(exc.certificate), 6).tolist()})"
        sys.stderr.write(f"error: estimator does not exist: {exc}{cert}\n")
        return EXIT_NONEXISTENCE
    except ConvergenceError as exc:
        sys.stderr.write(f"error: did not converge: {exc} (residual {exc.residual:.3e})\n")
        return EXIT_CONVERGENCE
    except MindepError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
