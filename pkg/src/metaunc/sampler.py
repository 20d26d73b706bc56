"""Adaptive random-walk Metropolis with split-R-hat and effective sample size.

Warmup tunes a Gaussian proposal: the global scale follows a Robbins-Monro
recursion toward the target acceptance rate, and the proposal shape is reset at
the end of each warmup window to the sample covariance of that window (dense
metric) or to its coordinate standard deviations (diagonal metric). A fixed
metric keeps the initial shape. Sampling runs with the proposal frozen, so
retained draws come from a valid Metropolis chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# warmup windows as fractions of n_warmup; the proposal shape is
# re-estimated at the end of each window
_WINDOWS = (0.15, 0.3, 0.5, 0.75)


@dataclass
class Chain:
    samples: np.ndarray  # (n_draws, dim)
    log_density: np.ndarray  # (n_draws,)
    accept_rate: float
    step_scale: np.ndarray  # proposal Cholesky factor, global scale included


def rwm_chain(logp, x0, n_warmup: int, n_draws: int, rng: np.random.Generator,
              scale0=None, target_accept: float = 0.3, lower=None, upper=None,
              metric: str = "dense") -> Chain:
    """Run one chain.

    ``logp`` maps a 1-d parameter vector to a log density (``-inf`` outside
    the support). Proposals outside ``[lower, upper]`` are rejected without
    evaluating ``logp``. ``scale0`` holds initial per-coordinate proposal
    standard deviations, or a lower-triangular factor of the initial proposal
    covariance. With ``metric="fixed"`` that shape is kept and warmup tunes
    only the global scale.
    """
    if metric not in ("dense", "diag", "fixed"):
        raise ValueError("metric must be 'dense', 'diag' or 'fixed'")
    x = np.array(x0, dtype=float)
    dim = x.size
    lower = np.full(dim, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(dim, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if scale0 is None:
        shape = np.eye(dim)
    else:
        scale0 = np.array(scale0, dtype=float)
        shape = scale0 if scale0.ndim == 2 else np.diag(scale0)
    lp = logp(x)
    if not np.isfinite(lp):
        raise ValueError("initial point has zero posterior density")
    log_lambda = math.log(2.38 / math.sqrt(dim))
    boundaries = sorted({int(f * n_warmup) for f in _WINDOWS} | {n_warmup})
    window_start = 0
    trace = np.empty((n_warmup, dim))

    for t in range(n_warmup):
        prop = x + math.exp(log_lambda) * (shape @ rng.standard_normal(dim))
        u = rng.random()
        if np.all(prop >= lower) and np.all(prop <= upper):
            lp_prop = logp(prop)
            log_ratio = lp_prop - lp
            acc = 1.0 if log_ratio >= 0 else math.exp(log_ratio) if np.isfinite(log_ratio) else 0.0
            if math.log(u) < log_ratio:
                x, lp = prop, lp_prop
        else:
            acc = 0.0
        gain = 1.0 / (t - window_start + 1) ** 0.6
        log_lambda += gain * (acc - target_accept)
        trace[t] = x
        if t + 1 in boundaries and t + 1 < n_warmup:
            new = _window_shape(trace[window_start:t + 1], metric) if metric != "fixed" else None
            if new is not None:
                shape = new
                log_lambda = math.log(2.38 / math.sqrt(dim))
            window_start = t + 1

    samples = np.empty((n_draws, dim))
    logs = np.empty(n_draws)
    step = math.exp(log_lambda) * shape
    n_acc = 0
    for t in range(n_draws):
        prop = x + step @ rng.standard_normal(dim)
        u = rng.random()
        if np.all(prop >= lower) and np.all(prop <= upper):
            lp_prop = logp(prop)
            if math.log(u) < lp_prop - lp:
                x, lp = prop, lp_prop
                n_acc += 1
        samples[t] = x
        logs[t] = lp
    return Chain(samples, logs, n_acc / max(n_draws, 1), step)


def _window_shape(window, metric):
    n, dim = window.shape
    sd = window.std(axis=0)
    if n < max(20, 2 * dim) or not np.all(sd > 0):
        return None
    if metric == "diag":
        return np.diag(sd)
    cov = np.cov(window, rowvar=False).reshape(dim, dim)
    # shrink toward the diagonal so short windows still give a usable factor
    w = n / (n + 5.0)
    cov = w * cov + (1 - w) * np.diag(np.diag(cov))
    try:
        return np.linalg.cholesky(cov + 1e-12 * np.diag(np.diag(cov)))
    except np.linalg.LinAlgError:
        return np.diag(sd)


def split_rhat(chains) -> np.ndarray:
    """Split-R-hat per coordinate for an array shaped ``(n_chains, n_draws, dim)``."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    n = chains.shape[1] // 2
    if n < 2:
        return np.full(chains.shape[2], np.nan)
    halves = np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean(axis=0)
    between = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / within)
    # constant coordinates (e.g. a chain parked on a bound) carry no information
    return np.where(within > 0, rhat, np.where(between > 0, np.inf, 1.0))


def _autocov(x):
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / n


def effective_sample_size(chains) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence estimator."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    m, n, dim = chains.shape
    out = np.empty(dim)
    for d in range(dim):
        x = chains[:, :, d]
        acov = np.array([_autocov(c) for c in x])
        chain_var = acov[:, 0] * n / (n - 1)
        within = chain_var.mean()
        var_plus = within * (n - 1) / n
        if m > 1:
            var_plus += x.mean(axis=1).var(ddof=1)
        if var_plus <= 0:
            out[d] = float(m * n)
            continue
        rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # pair sums, truncated at the first negative pair and made monotone
        pairs = rho[:-1:2] + rho[1::2]
        stop = np.argmax(pairs < 0) if np.any(pairs < 0) else pairs.size
        pairs = np.minimum.accumulate(pairs[:stop])
        tau = -1.0 + 2.0 * pairs.sum()
        out[d] = m * n / max(tau, 1.0 / math.log10(m * n + 10))
    return out


def mcse_mean(chains) -> np.ndarray:
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    flat = chains.reshape(-1, chains.shape[2])
    return flat.std(axis=0, ddof=1) / np.sqrt(effective_sample_size(chains))
