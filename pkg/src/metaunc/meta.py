"""Bayesian meta-models on groups of simulated PMP vectors.

A meta-model is a density on the simplex (logistic-normal or Dirichlet) with a
prior over its parameters. ``fit`` draws from the parameter posterior with
adaptive random-walk Metropolis; the draws define the posterior predictive
density of PMPs on new data and can be summarized by mean or k-means
embeddings.

Parameter layouts (one row per draw):

* logistic-normal, J models, k = J-1: ``mu`` (k entries) followed by the
  lower-triangular Cholesky factor of the ALR covariance in row-major
  ``tril`` order. The sampler works on the same vector with the Cholesky
  diagonal on the log scale.
* Dirichlet: ``alpha`` (J entries); the sampler works on ``log alpha``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from . import kernels
from .sampler import effective_sample_size, rwm_chain, split_rhat
from .simplex import (DirichletParams, LogisticNormalParams, alr, alr_inv,
                      clamp_to_interior)

log = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.05
LOG_SCALE_FLOOR = -20.0  # log Cholesky diagonal; keeps collapsed groups proper
LOG_ALPHA_BOUNDS = (-20.0, 25.0)
_LOG_2PI = math.log(2 * math.pi)


class MetaModelError(ValueError):
    pass


@dataclass(frozen=True)
class MetaModelConfig:
    likelihood_family: str = "logistic_normal"
    mu_scale: float = 5.0
    sigma_scale: float = 2.5
    alpha_log_scale: float = 3.0
    n_warmup: int = 1000
    n_draws: int = 2000
    n_chains: int = 4
    target_accept: float = 0.3
    epsilon_clamp: float = 1e-9

    def __post_init__(self):
        if self.likelihood_family not in FAMILIES:
            raise MetaModelError(f"unknown meta-model family {self.likelihood_family!r}")
        if min(self.mu_scale, self.sigma_scale, self.alpha_log_scale) <= 0:
            raise MetaModelError("prior scales must be positive")
        if self.n_draws < 1 or self.n_chains < 1 or self.n_warmup < 0:
            raise MetaModelError("n_draws and n_chains must be positive")
        if not 0 < self.target_accept < 1 or not 0 < self.epsilon_clamp < 0.5:
            raise MetaModelError("target_accept and epsilon_clamp out of range")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetaModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise MetaModelError(f"unknown meta-model settings: {sorted(unknown)}")
        return cls(**d)


# -- families -----------------------------------------------------------------


class LogisticNormalFamily:
    name = "logistic_normal"

    @staticmethod
    def dims(J):
        k = J - 1
        return k, k + k * (k + 1) // 2

    @staticmethod
    def split(params, J):
        """(mu, L) stacks from an ``(M, P)`` parameter array."""
        params = np.atleast_2d(params)
        k = J - 1
        rows, cols = np.tril_indices(k)
        L = np.zeros((params.shape[0], k, k))
        L[:, rows, cols] = params[:, k:]
        return params[:, :k], L

    @staticmethod
    def _diag_positions(J):
        k = J - 1
        rows, cols = np.tril_indices(k)
        return k + np.flatnonzero(rows == cols)

    @staticmethod
    def _off_layout(J):
        """Positions of the off-diagonal entries and of the diagonal in their column."""
        k = J - 1
        rows, cols = np.tril_indices(k)
        diag_of = {c: k + i for i, (r, c) in enumerate(zip(rows, cols)) if r == c}
        off = np.flatnonzero(rows != cols)
        return k + off, np.array([diag_of[c] for c in cols[off]], dtype=int)

    # Unconstrained coordinates: log of each diagonal entry and, below the
    # diagonal, L_ij / L_jj. The ratio straightens the ridge that appears when
    # the ALR coordinates are nearly collinear, which random-walk proposals
    # cannot follow in (log L_jj, L_ij).

    @classmethod
    def to_unconstrained(cls, params, J):
        u = np.array(params, dtype=float)
        idx = cls._diag_positions(J)
        off, col = cls._off_layout(J)
        u[..., off] = u[..., off] / u[..., col]
        u[..., idx] = np.log(u[..., idx])
        return u

    @classmethod
    def to_constrained(cls, u, J):
        p = np.array(u, dtype=float)
        idx = cls._diag_positions(J)
        off, col = cls._off_layout(J)
        p[..., idx] = np.exp(p[..., idx])
        p[..., off] = p[..., off] * p[..., col]
        return p

    @staticmethod
    def from_params(tau: LogisticNormalParams):
        rows, cols = np.tril_indices(tau.mu.size)
        return np.concatenate([tau.mu, tau.chol[rows, cols]])

    @classmethod
    def to_params(cls, row, J):
        mu, L = cls.split(row, J)
        return LogisticNormalParams(mu[0], chol=L[0])

    @staticmethod
    def stats(points):
        z = alr(points)
        n = z.shape[0]
        zbar = z.mean(axis=0)
        r = z - zbar
        return {"n": n, "zbar": zbar, "scatter": r.T @ r, "log_jac": float(np.log(points).sum())}

    @classmethod
    def log_likelihood(cls, u, st, J):
        k = J - 1
        mu, L = cls.split(cls.to_constrained(u, J), J)
        mu, L = mu[0], L[0]
        n = st["n"]
        Linv = np.linalg.inv(L)
        d = Linv @ (st["zbar"] - mu)
        quad = np.sum((Linv @ st["scatter"]) * Linv) + n * (d @ d)
        logdet = np.log(np.diag(L)).sum()
        return -0.5 * n * k * _LOG_2PI - n * logdet - 0.5 * quad - st["log_jac"]

    @classmethod
    def log_prior(cls, u, config, J):
        k = J - 1
        mu = u[:k]
        rows, cols = np.tril_indices(k)
        diag = rows == cols
        log_diag = u[k:][diag]
        off_pos, col_pos = cls._off_layout(J)
        off = u[off_pos] * np.exp(u[col_pos])
        lp = -0.5 * np.sum((mu / config.mu_scale) ** 2) - k * math.log(config.mu_scale * math.sqrt(2 * math.pi))
        s = config.sigma_scale
        # half-normal on the diagonal plus the log-transform Jacobian
        d = np.exp(log_diag)
        lp += np.sum(math.log(2) - math.log(s * math.sqrt(2 * math.pi)) - 0.5 * (d / s) ** 2 + log_diag)
        lp += np.sum(-math.log(s * math.sqrt(2 * math.pi)) - 0.5 * (off / s) ** 2 + u[col_pos])
        return lp

    @classmethod
    def initial(cls, st, J):
        k = J - 1
        n = st["n"]
        # the jitter puts a collapsed group at the scale floor from the start
        cov = st["scatter"] / n + math.exp(2 * (LOG_SCALE_FLOOR + 1)) * np.eye(k)
        L = np.linalg.cholesky(cov)
        rows, cols = np.tril_indices(k)
        u = np.concatenate([st["zbar"], L[rows, cols]])
        u = cls.to_unconstrained(u, J)
        diag = np.diag(L)
        scale = np.concatenate([
            np.sqrt(np.diag(cov) / n),
            np.where(rows == cols, 1.0 / math.sqrt(2 * n), diag[rows] / (diag[cols] * math.sqrt(n))),
        ])
        return u, scale

    @classmethod
    def bounds(cls, J):
        _, P = cls.dims(J)
        lower = np.full(P, -np.inf)
        lower[cls._diag_positions(J)] = LOG_SCALE_FLOOR
        return lower, np.full(P, np.inf)

    @classmethod
    def kernel_args(cls, params, J):
        mu, L = cls.split(params, J)
        k = J - 1
        linv = np.tril(np.linalg.inv(L))
        logc = -0.5 * k * _LOG_2PI - np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        return mu, linv, logc

    @classmethod
    def logpdf(cls, points, params, logw, J, threads=1):
        points = np.atleast_2d(points)
        mu, linv, logc = cls.kernel_args(params, J)
        return kernels.logistic_normal_lse(alr(points), np.log(points).sum(axis=1), mu, linv,
                                           logc, logw, threads=threads)

    @classmethod
    def sample(cls, rng, params, weights, n, J):
        mu, L = cls.split(params, J)
        pick = rng.choice(len(weights), size=n, p=weights)
        eps = rng.standard_normal((n, J - 1))
        z = mu[pick] + np.einsum("nab,nb->na", L[pick], eps)
        return alr_inv(z)

    @classmethod
    def mean(cls, params, J):
        mu, L = cls.split(params, J)
        L = L.mean(axis=0)
        return np.concatenate([mu.mean(axis=0), L[np.tril_indices(J - 1)]])


class DirichletFamily:
    name = "dirichlet"

    @staticmethod
    def dims(J):
        return J, J

    @staticmethod
    def to_unconstrained(params, J):
        return np.log(np.asarray(params, dtype=float))

    @staticmethod
    def to_constrained(u, J):
        return np.exp(np.asarray(u, dtype=float))

    @staticmethod
    def from_params(tau: DirichletParams):
        return np.array(tau.alpha, dtype=float)

    @staticmethod
    def to_params(row, J):
        return DirichletParams(np.asarray(row, dtype=float).reshape(J))

    @staticmethod
    def stats(points):
        return {"n": points.shape[0], "sum_log": np.log(points).sum(axis=0)}

    @staticmethod
    def log_likelihood(u, st, J):
        a = np.exp(u)
        return st["n"] * (gammaln(a.sum()) - gammaln(a).sum()) + (a - 1.0) @ st["sum_log"]

    @staticmethod
    def log_prior(u, config, J):
        s = config.alpha_log_scale
        return float(np.sum(-0.5 * (u / s) ** 2 - math.log(s * math.sqrt(2 * math.pi))))

    @staticmethod
    def initial(st, J):
        n = st["n"]
        # moment matching on the geometric mean is unavailable; start from the
        # symmetric Dirichlet whose E[log p] best matches the data
        m = np.exp(st["sum_log"] / n)
        m = m / m.sum()
        a = 5.0 * m * J
        return np.log(a), np.full(J, 1.0 / math.sqrt(n) + 1e-3)

    @staticmethod
    def bounds(J):
        return np.full(J, LOG_ALPHA_BOUNDS[0]), np.full(J, LOG_ALPHA_BOUNDS[1])

    @staticmethod
    def logpdf(points, params, logw, J, threads=1):
        points = np.atleast_2d(points)
        a = np.atleast_2d(params)
        logc = gammaln(a.sum(axis=1)) - gammaln(a).sum(axis=1)
        return kernels.dirichlet_lse(np.log(points), a - 1.0, logc, logw, threads=threads)

    @staticmethod
    def sample(rng, params, weights, n, J):
        a = np.atleast_2d(params)
        pick = rng.choice(len(weights), size=n, p=weights)
        g = rng.standard_gamma(a[pick])
        return g / g.sum(axis=1, keepdims=True)

    @staticmethod
    def mean(params, J):
        return np.atleast_2d(params).mean(axis=0)


FAMILIES = {f.name: f for f in (LogisticNormalFamily, DirichletFamily)}


def family_of(name):
    try:
        return FAMILIES[name]
    except KeyError:
        raise MetaModelError(f"unknown meta-model family {name!r}") from None


# -- posterior ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetaPosterior:
    family: str
    J: int
    draws: np.ndarray
    diagnostics: dict
    config: MetaModelConfig = field(default_factory=MetaModelConfig)
    seed: int | None = None
    model_name: str | None = None

    def __post_init__(self):
        fam = family_of(self.family)
        draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if draws.shape[1] != fam.dims(self.J)[1]:
            raise MetaModelError("draw width does not match the family layout")
        if self.family == "dirichlet":
            ok = np.all(draws > 0)
        else:
            ok = np.all(LogisticNormalFamily.split(draws, self.J)[1].diagonal(axis1=1, axis2=2) > 0)
        if not ok:
            raise MetaModelError("draws violate the family constraints")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def D(self) -> int:
        return self.draws.shape[0]

    @property
    def degenerate(self) -> bool:
        return bool(self.diagnostics.get("degenerate", False))

    def params(self, d: int):
        return family_of(self.family).to_params(self.draws[d], self.J)

    def unconstrained(self) -> np.ndarray:
        return family_of(self.family).to_unconstrained(self.draws, self.J)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "J": self.J,
            "model": self.model_name,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "diagnostics": self.diagnostics,
            "draws": self.draws.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "MetaPosterior":
        return cls(d["family"], int(d["J"]), np.array(d["draws"], dtype=float), d["diagnostics"],
                   MetaModelConfig.from_dict(d["config"]), d.get("seed"), d.get("model"))

    @classmethod
    def load(cls, path) -> "MetaPosterior":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _prepare_group(group, epsilon):
    pts = np.asarray(group, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise MetaModelError("cannot fit a meta-model to an empty group")
    return clamp_to_interior(pts, epsilon)


def _as_unconstrained(tau, family, J):
    fam = family_of(family)
    if isinstance(tau, (DirichletParams, LogisticNormalParams)):
        return fam.to_unconstrained(fam.from_params(tau), J)
    return np.asarray(tau, dtype=float)


def log_likelihood(tau, group, family: str, epsilon: float = 1e-9) -> float:
    """Sum of family log-densities over the clamped group members."""
    pts = _prepare_group(group, epsilon)
    J = pts.shape[1]
    fam = family_of(family)
    return float(fam.log_likelihood(_as_unconstrained(tau, family, J), fam.stats(pts), J))


def log_posterior(tau, group, config: MetaModelConfig = MetaModelConfig()) -> float:
    """Unnormalized log posterior in sampler coordinates.

    ``tau`` is either a parameter object or an unconstrained vector. The value
    includes the Jacobian of the log transform on scale parameters.
    """
    pts = _prepare_group(group, config.epsilon_clamp)
    J = pts.shape[1]
    fam = family_of(config.likelihood_family)
    u = _as_unconstrained(tau, config.likelihood_family, J)
    return float(fam.log_likelihood(u, fam.stats(pts), J) + fam.log_prior(u, config, J))


def _chain_seeds(seed, n):
    return np.random.SeedSequence(int(seed)).spawn(n)


def _hessian(f, x, h):
    """Central-difference Hessian with per-coordinate steps ``h``."""
    n = x.size
    H = np.empty((n, n))
    E = np.diag(h)
    f0 = f(x)
    for i in range(n):
        H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h[i] ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j])
                                 + f(x - E[i] - E[j])) / (4 * h[i] * h[j])
    return H


def _laplace_start(logp, u0, scale0, lower, upper):
    """(start, proposal factor, is_laplace): the posterior mode and the Cholesky
    factor of the inverse negative Hessian there.

    Falls back to the moment-based start when the mode sits on a bound or the
    curvature is not positive definite (a collapsed group, for instance).
    """
    fallback = u0, np.diag(scale0), False
    with np.errstate(all="ignore"):
        res = optimize.minimize(lambda u: -logp(u), u0, method="L-BFGS-B",
                                bounds=list(zip(lower, upper)))
        mode = res.x
        if not np.isfinite(res.fun) or np.any(mode - lower < 1e-3) or np.any(upper - mode < 1e-3):
            return fallback
        H = _hessian(logp, mode, 1e-4 * np.maximum(1.0, np.abs(mode)))
        try:
            shape = np.linalg.cholesky(np.linalg.inv(-H))
        except np.linalg.LinAlgError:
            return fallback
    if not np.all(np.isfinite(shape)):
        return fallback
    return mode, shape, True


def fit(group, config: MetaModelConfig = MetaModelConfig(), seed: int = 0, threads: int = 1,
        model_name: str | None = None) -> MetaPosterior:
    """Sample the meta-model posterior for one group of PMP vectors."""
    pts = _prepare_group(group, config.epsilon_clamp)
    if pts.shape[0] < 2:
        raise MetaModelError("a meta-model needs at least two PMP vectors")
    J = pts.shape[1]
    fam = family_of(config.likelihood_family)
    st = fam.stats(pts)
    degenerate = bool(np.all(pts == pts[0]))
    if degenerate:
        log.warning("group %s: all PMP vectors are identical; posterior collapses",
                    model_name or "")
    u0, scale0 = fam.initial(st, J)
    lower, upper = fam.bounds(J)
    u0 = np.clip(u0, lower + 1e-6, upper - 1e-6)

    def logp(u):
        val = fam.log_likelihood(u, st, J) + fam.log_prior(u, config, J)
        return val if np.isfinite(val) else -np.inf

    u0, shape0, laplace = _laplace_start(logp, u0, scale0, lower, upper)
    # a Laplace factor already matches the posterior's correlations; short
    # warmup windows only estimate them worse
    metric = "fixed" if laplace else "dense"

    def run(ss):
        rng = np.random.default_rng(ss)
        start = np.clip(u0 + shape0 @ rng.standard_normal(u0.size), lower + 1e-6, upper - 1e-6)
        return rwm_chain(logp, start, config.n_warmup, config.n_draws, rng, shape0,
                         config.target_accept, lower, upper, metric)

    seeds = _chain_seeds(seed, config.n_chains)
    if threads and threads > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=min(threads, config.n_chains)) as pool:
            chains = list(pool.map(run, seeds))
    else:
        chains = [run(s) for s in seeds]

    samples = np.stack([c.samples for c in chains])
    rhat = split_rhat(samples)
    ess = effective_sample_size(samples)
    keep = math.ceil(config.n_draws / config.n_chains)
    thin = max(1, config.n_draws // keep)
    kept = np.concatenate([c.samples[thin - 1::thin][:keep] for c in chains])[: config.n_draws]
    diagnostics = {
        "accept_rate": [c.accept_rate for c in chains],
        "rhat": [float(x) for x in rhat],
        "ess": [float(x) for x in ess],
        "max_rhat": float(np.max(rhat)),
        "min_ess": float(np.min(ess)),
        "n_obs": int(pts.shape[0]),
        "degenerate": degenerate,
        "thin": thin,
    }
    if not degenerate and not np.max(rhat) < RHAT_THRESHOLD:
        warnings.warn(f"meta-model {model_name or ''}: split R-hat {np.max(rhat):.3f} "
                      f">= {RHAT_THRESHOLD}", RuntimeWarning, stacklevel=2)
    return MetaPosterior(config.likelihood_family, J, fam.to_constrained(kept, J), diagnostics,
                         config, int(seed), model_name)


def posterior_predictive_logpdf(post: MetaPosterior, p, threads: int = 1):
    """Log of the draw-averaged family density at ``p`` (one point or a stack)."""
    p = np.asarray(p, dtype=float)
    pts = clamp_to_interior(np.atleast_2d(p), post.config.epsilon_clamp)
    if pts.shape[1] != post.J:
        raise MetaModelError("point dimension does not match the meta-model")
    logw = np.full(post.D, -math.log(post.D))
    out = family_of(post.family).logpdf(pts, post.draws, logw, post.J, threads)
    return float(out[0]) if p.ndim == 1 else out


# -- embeddings ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Embedding:
    """C representative parameter vectors with occupancy weights."""

    family: str
    J: int
    centers: np.ndarray
    weights: np.ndarray
    epsilon_clamp: float = 1e-9

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if centers.shape[0] != weights.size or weights.size < 1:
            raise MetaModelError("need one weight per center")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise MetaModelError("embedding weights must be positive and sum to one")
        MetaPosterior(self.family, self.J, centers, {})  # validates the layout
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)

    @property
    def C(self) -> int:
        return self.centers.shape[0]

    def params(self, c: int):
        return family_of(self.family).to_params(self.centers[c], self.J)

    def to_dict(self) -> dict:
        return {"family": self.family, "J": self.J, "centers": self.centers.tolist(),
                "weights": self.weights.tolist()}


def mean_embedding(post: MetaPosterior) -> Embedding:
    """Coordinate-wise draw average (Cholesky factors averaged, not covariances)."""
    center = family_of(post.family).mean(post.draws, post.J)
    return Embedding(post.family, post.J, center[None, :], np.ones(1), post.config.epsilon_clamp)


def _kmeans_pp(X, C, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, C):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(X, C: int, rng: np.random.Generator, n_init: int = 50, max_iter: int = 300,
           tol: float = 1e-10):
    """Lloyd's algorithm from k-means++ starts; returns (labels, inertia) of the best start."""
    X = np.asarray(X, dtype=float)
    best = None
    for _ in range(min(int(n_init), 50)):
        centers = _kmeans_pp(X, C, rng)
        for _ in range(max_iter):
            d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
            labels = np.argmin(d, axis=1)
            new = centers.copy()
            for c in range(C):
                members = X[labels == c]
                if len(members):
                    new[c] = members.mean(axis=0)
            shift = np.max(np.abs(new - centers))
            centers = new
            if shift <= tol:
                break
        d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d, axis=1)
        inertia = float(d[np.arange(len(X)), labels].sum())
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best


def cluster_embedding(post: MetaPosterior, C: int, seed: int = 0) -> Embedding:
    """k-means in sampler coordinates; each center is the member average in draw coordinates."""
    C = int(C)
    if not 1 <= C <= post.D:
        raise MetaModelError(f"number of clusters must lie in 1..{post.D}")
    if C == 1:
        return mean_embedding(post)
    if C == post.D:
        return Embedding(post.family, post.J, post.draws, np.full(post.D, 1.0 / post.D),
                         post.config.epsilon_clamp)
    fam = family_of(post.family)
    labels, _ = kmeans(post.unconstrained(), C, np.random.default_rng(np.random.SeedSequence(int(seed))))
    centers, weights = [], []
    for c in range(C):
        members = labels == c
        if members.any():
            centers.append(fam.mean(post.draws[members], post.J))
            weights.append(members.sum())
    weights = np.array(weights, dtype=float)
    return Embedding(post.family, post.J, np.array(centers), weights / weights.sum(),
                     post.config.epsilon_clamp)
