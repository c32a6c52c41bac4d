"""Exchange algorithm: Metropolis sampling of rank permutations given the
marginal order statistics.

Each step picks a variable ``i`` and two rows ``s != t`` uniformly, proposes
swapping their ``i``-th values, and accepts with probability ``min(1, rho)``
where ``rho`` only involves the two affected rows. The marginal order
statistics never change.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .core import CanonicalStatistic
from .exceptions import ModelSpecError, StatisticDomainError
from .rank import RankDecomposition

DEFAULT_RESYNC = 10_000
_BLOCK = 1 << 15


@dataclass(frozen=True)
class ChainConfig:
    """Run length, burn-in, thinning, cache resync period and seed."""

    L: int
    burn_in: int = 0
    thin: int = 1
    resync_period: int = DEFAULT_RESYNC
    seed: int = 0

    def __post_init__(self):
        if not (self.L > self.burn_in >= 0):
            raise ModelSpecError(f"need L > burn_in >= 0, got L={self.L}, burn_in={self.burn_in}")
        if self.thin < 1 or self.resync_period < 1:
            raise ModelSpecError("thin and resync_period must be >= 1")

    @classmethod
    def default(cls, n: int, d: int, seed: int = 0, L: Optional[int] = None) -> "ChainConfig":
        L = int(L or 150 * n)
        return cls(L=L, burn_in=L // 10, thin=max(1, n * d // 10), seed=seed)

    @property
    def n_samples(self) -> int:
        return (self.L - self.burn_in) // self.thin

    def with_length(self, L: int, seed: Optional[int] = None) -> "ChainConfig":
        """Same burn-in fraction and thinning at a new length."""
        frac = self.burn_in / self.L
        return ChainConfig(L=int(L), burn_in=int(L * frac), thin=self.thin,
                           resync_period=self.resync_period,
                           seed=self.seed if seed is None else seed)

    def to_dict(self):
        return {"L": self.L, "burn_in": self.burn_in, "thin": self.thin,
                "resync_period": self.resync_period, "seed": self.seed}


class ChainState:
    """Current permutations with cached per-row statistics.

    ``hrows[t]`` caches ``h((M o pi)(t))`` so a proposal touches two rows only.
    """

    def __init__(self, dec: RankDecomposition, h: CanonicalStatistic, pi=None):
        self.M = np.ascontiguousarray(dec.M, dtype=float)
        self.pi = np.array(dec.pi if pi is None else pi, dtype=np.int64)
        self.h = h
        self.step_count = 0
        self.resync()

    @property
    def rows(self) -> np.ndarray:
        return np.take_along_axis(self.M, self.pi, axis=1).T

    def resync(self):
        self.hrows = self.h.evaluate(self.rows)
        self.hstar = self.hrows.sum(axis=0)

    def H(self, theta) -> np.ndarray:
        """Per-row exponents ``theta . h(row_t)``."""
        return self.hrows @ np.asarray(theta, dtype=float)

    def swapped_rows(self, i, s, t):
        idx = np.arange(self.M.shape[0])
        xs = self.M[idx, self.pi[:, s]]
        xt = self.M[idx, self.pi[:, t]]
        xs[i], xt[i] = xt[i], xs[i]
        return xs, xt

    def copy(self) -> "ChainState":
        new = object.__new__(ChainState)
        new.M, new.pi, new.h = self.M, self.pi.copy(), self.h
        new.step_count = self.step_count
        new.hrows, new.hstar = self.hrows.copy(), self.hstar.copy()
        return new


def acceptance_ratio(state: ChainState, i: int, s: int, t: int, theta) -> float:
    """``rho = exp(H_s + H_t after swap) / exp(H_s + H_t before)``."""
    theta = np.asarray(theta, dtype=float)
    if s == t:
        raise ValueError("s and t must differ")
    xs, xt = state.swapped_rows(i, s, t)
    new = state.h(xs) + state.h(xt)
    log_rho = float(theta @ (new - state.hrows[s] - state.hrows[t]))
    if not math.isfinite(log_rho):
        raise StatisticDomainError("non-finite exponent in acceptance ratio")
    return math.exp(log_rho)


def step(state: ChainState, theta, rng) -> ChainState:
    """One exchange proposal with the Metropolis rule; returns a new state."""
    new = state.copy()
    d, n = state.M.shape
    i = int(rng.integers(d))
    s = int(rng.integers(n))
    t = int(rng.integers(n - 1))
    t += t >= s
    u = float(rng.random())
    rho = acceptance_ratio(state, i, s, t, theta)
    if u <= min(1.0, rho):
        xs, xt = state.swapped_rows(i, s, t)
        hs, ht = state.h(xs), state.h(xt)
        new.pi[i, s], new.pi[i, t] = state.pi[i, t], state.pi[i, s]
        new.hstar = new.hstar + hs + ht - new.hrows[s] - new.hrows[t]
        new.hrows[s], new.hrows[t] = hs, ht
    new.step_count += 1
    return new


@numba.njit(nogil=True)
def _recompute(M, perm, kern, hrows, hstar):
    d, n = M.shape
    x = np.empty(d)
    out = np.empty(hstar.shape[0])
    hstar[:] = 0.0
    for t in range(n):
        for j in range(d):
            x[j] = M[j, perm[j, t]]
        kern(x, out)
        for k in range(hstar.shape[0]):
            hrows[t, k] = out[k]
            hstar[k] += out[k]


@numba.njit(nogil=True)
def _chain_block(M, perm, hrows, hstar, theta, kern, coord, s_arr, t_arr, u_arr,
                 step0, burn_in, thin, resync, samples, perm_out, kept):
    d, n = M.shape
    K = hstar.shape[0]
    xs = np.empty(d)
    xt = np.empty(d)
    hs = np.empty(K)
    ht = np.empty(K)
    accepted = 0
    for b in range(coord.shape[0]):
        i = coord[b]
        s = s_arr[b]
        t = t_arr[b]
        for j in range(d):
            xs[j] = M[j, perm[j, s]]
            xt[j] = M[j, perm[j, t]]
        xs[i] = M[i, perm[i, t]]
        xt[i] = M[i, perm[i, s]]
        kern(xs, hs)
        kern(xt, ht)
        log_rho = 0.0
        for k in range(K):
            log_rho += theta[k] * (hs[k] + ht[k] - hrows[s, k] - hrows[t, k])
        if not np.isfinite(log_rho):
            raise ValueError("non-finite exponent in acceptance ratio")
        rho = math.exp(log_rho) if log_rho < 700.0 else np.inf
        if u_arr[b] <= min(1.0, rho):
            tmp = perm[i, s]
            perm[i, s] = perm[i, t]
            perm[i, t] = tmp
            for k in range(K):
                hstar[k] += hs[k] + ht[k] - hrows[s, k] - hrows[t, k]
                hrows[s, k] = hs[k]
                hrows[t, k] = ht[k]
            accepted += 1
        stp = step0 + b + 1
        if stp % resync == 0:
            _recompute(M, perm, kern, hrows, hstar)
        if stp > burn_in and (stp - burn_in) % thin == 0 and kept < samples.shape[0]:
            for k in range(K):
                samples[kept, k] = hstar[k]
            if perm_out.shape[0] > 0:
                perm_out[kept] = perm
            kept += 1
    return kept, accepted


def _python_block(state, theta, coord, s_arr, t_arr, u_arr, step0, cfg, samples, perm_out, kept):
    accepted = 0
    for b in range(coord.shape[0]):
        i, s, t = int(coord[b]), int(s_arr[b]), int(t_arr[b])
        xs, xt = state.swapped_rows(i, s, t)
        hs, ht = state.h(xs), state.h(xt)
        log_rho = float(theta @ (hs + ht - state.hrows[s] - state.hrows[t]))
        rho = math.exp(log_rho) if log_rho < 700.0 else math.inf
        if u_arr[b] <= min(1.0, rho):
            state.pi[i, s], state.pi[i, t] = state.pi[i, t], state.pi[i, s]
            state.hstar += hs + ht - state.hrows[s] - state.hrows[t]
            state.hrows[s], state.hrows[t] = hs, ht
            accepted += 1
        stp = step0 + b + 1
        if stp % cfg.resync_period == 0:
            state.resync()
        if stp > cfg.burn_in and (stp - cfg.burn_in) % cfg.thin == 0 and kept < samples.shape[0]:
            samples[kept] = state.hstar
            if perm_out.shape[0] > 0:
                perm_out[kept] = state.pi
            kept += 1
    return kept, accepted


@dataclass
class ChainResult:
    """Retained ``h_*`` samples (and optionally permutations) of one run."""

    samples: np.ndarray
    steps: np.ndarray
    acceptance_rate: float
    config: ChainConfig
    perms: Optional[np.ndarray] = None
    final_pi: Optional[np.ndarray] = field(default=None, repr=False)

    def write_trace(self, path):
        """One JSON record per retained sample: step index and ``h_*``."""
        with open(path, "w", encoding="utf-8") as fh:
            for stp, row in zip(self.steps, self.samples):
                fh.write(json.dumps({"step": int(stp), "h_star": [float(v) for v in row]}) + "\n")


def run_chain(dec: RankDecomposition, theta, h: CanonicalStatistic, cfg: ChainConfig,
              return_perms: bool = False, pi0=None) -> ChainResult:
    """Run the exchange algorithm at ``theta`` starting from the data's ranks.

    Returns ``cfg.n_samples`` retained ``h_*`` vectors.
    """
    theta = np.ascontiguousarray(np.atleast_1d(theta), dtype=float)
    if theta.shape != (h.dim,):
        raise ModelSpecError(f"theta has length {theta.size}, statistic has K={h.dim}")
    state = ChainState(dec, h, pi0)
    d, n = state.M.shape
    m = cfg.n_samples
    samples = np.empty((m, h.dim))
    perm_out = np.empty((m if return_perms else 0, d, n), dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    kern = getattr(h, "kernel", None)
    kept = 0
    accepted = 0
    done = 0
    while done < cfg.L:
        B = min(_BLOCK, cfg.L - done)
        if n < 2:
            # no transposition exists; the chain stays put
            for stp in range(done + 1, done + B + 1):
                if stp > cfg.burn_in and (stp - cfg.burn_in) % cfg.thin == 0 and kept < m:
                    samples[kept] = state.hstar
                    if return_perms:
                        perm_out[kept] = state.pi
                    kept += 1
            done += B
            continue
        coord = rng.integers(0, d, B)
        s_arr = rng.integers(0, n, B)
        t_arr = rng.integers(0, n - 1, B)
        t_arr += t_arr >= s_arr
        u_arr = rng.random(B)
        if kern is not None:
            kept, acc = _chain_block(state.M, state.pi, state.hrows, state.hstar, theta, kern,
                                     coord, s_arr, t_arr, u_arr, done, cfg.burn_in, cfg.thin,
                                     cfg.resync_period, samples, perm_out, kept)
        else:
            kept, acc = _python_block(state, theta, coord, s_arr, t_arr, u_arr, done, cfg,
                                      samples, perm_out, kept)
        accepted += acc
        done += B
    state.step_count = cfg.L
    steps = cfg.burn_in + cfg.thin * np.arange(1, m + 1)
    return ChainResult(samples=samples, steps=steps, acceptance_rate=accepted / cfg.L,
                       config=cfg, perms=perm_out if return_perms else None,
                       final_pi=state.pi.copy())


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    """Independent per-chain seeds; identical for any worker count."""
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def run_chains(dec, theta, h, cfg: ChainConfig, n_chains: int = 1, threads: int = 1) -> ChainResult:
    """Run ``n_chains`` independent chains and concatenate their samples."""
    if n_chains == 1:
        return run_chain(dec, theta, h, cfg)
    cfgs = [ChainConfig(cfg.L, cfg.burn_in, cfg.thin, cfg.resync_period, s)
            for s in chain_seeds(cfg.seed, n_chains)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: run_chain(dec, theta, h, c), cfgs))
    else:
        results = [run_chain(dec, theta, h, c) for c in cfgs]
    return ChainResult(samples=np.concatenate([r.samples for r in results]),
                       steps=np.concatenate([r.steps for r in results]),
                       acceptance_rate=float(np.mean([r.acceptance_rate for r in results])),
                       config=cfg)


# --------------------------------------------------------------------------
# Monte Carlo error of chain averages
# --------------------------------------------------------------------------

def batch_means_cov(samples: np.ndarray, n_batches: Optional[int] = None) -> np.ndarray:
    """Covariance of the sample mean estimated by non-overlapping batch means."""
    samples = np.atleast_2d(samples)
    m = samples.shape[0]
    b = n_batches or max(2, int(math.isqrt(m)))
    size = m // b
    if size < 1:
        return np.cov(samples, rowvar=False, bias=False).reshape(samples.shape[1], -1) / max(m, 1)
    means = samples[: b * size].reshape(b, size, -1).mean(axis=1)
    return np.atleast_2d(np.cov(means, rowvar=False)) / b


def effective_sample_size(samples: np.ndarray) -> np.ndarray:
    """Per-component ESS ``m * var / (m * var(mean))`` from batch means."""
    samples = np.atleast_2d(samples)
    m = samples.shape[0]
    var = samples.var(axis=0, ddof=1)
    mean_var = np.diag(batch_means_cov(samples))
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(mean_var > 0, var / mean_var, float(m))
    return np.minimum(ess, m)
