"""Generative candidate models with log marginal likelihoods.

Every model can simulate a data set from its prior predictive distribution and
score a data set by its log evidence. Conjugate families (Beta-Bernoulli and
Normal-Inverse-Gamma regression) have closed forms. The compartmental epidemic
models use importance sampling over the parameter prior.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import optimize, stats
from scipy.special import betaln, gammaln, logsumexp

from . import kernels
from .simplex import PmpVector

log = logging.getLogger(__name__)


class ModelError(ValueError):
    pass


class StepSizeError(ModelError):
    pass


class PmpFileError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations plus, for regression models, the full predictor matrix."""

    observations: np.ndarray
    covariates: np.ndarray | None = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 1 or obs.size < 1:
            raise ModelError("a data set needs at least one observation")
        object.__setattr__(self, "observations", obs)
        if self.covariates is not None:
            X = np.asarray(self.covariates, dtype=float)
            if X.ndim != 2 or X.shape[0] != obs.size:
                raise ModelError("covariates must have one row per observation")
            object.__setattr__(self, "covariates", X)

    @property
    def n(self) -> int:
        return self.observations.size


class GenerativeModel:
    """Base class: ``simulate`` draws from the prior predictive, ``log_marginal`` scores."""

    name: str
    family: str

    def simulate(self, rng: np.random.Generator, n: int) -> Dataset:
        raise NotImplementedError

    def log_marginal(self, data: Dataset) -> float:
        raise NotImplementedError


# -- Beta-Bernoulli -----------------------------------------------------------


@dataclass(frozen=True)
class BetaBernoulliModel(GenerativeModel):
    name: str
    alpha: float
    beta: float
    family: str = field(default="beta_bernoulli", init=False)

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ModelError("Beta prior parameters must be positive")

    def simulate(self, rng, n):
        theta = rng.beta(self.alpha, self.beta)
        return Dataset(rng.random(n) < theta)

    def log_marginal(self, data):
        return beta_bernoulli_log_marginal(self, data)


def beta_bernoulli_log_marginal(model: BetaBernoulliModel, y: Dataset) -> float:
    obs = y.observations
    if not np.all((obs == 0) | (obs == 1)):
        raise ModelError("Beta-Bernoulli data must be binary")
    s = float(obs.sum())
    n = obs.size
    return float(betaln(model.alpha + s, model.beta + n - s) - betaln(model.alpha, model.beta))


# -- Normal-Inverse-Gamma regression -----------------------------------------


@dataclass(frozen=True, eq=False)
class NigRegressionModel(GenerativeModel):
    """Linear regression with a Normal-Inverse-Gamma prior.

    ``sigma^2 ~ InvGamma(a0, b0)``, ``beta ~ N(mu0, sigma^2 lambda0^-1)``,
    ``y ~ N(X beta, sigma^2 I)``. The model reads the predictor columns
    ``columns`` out of a shared ``n_predictors``-wide matrix, so every model
    in a set scores the same data set.
    """

    name: str
    columns: tuple
    n_predictors: int = 5
    a0: float = 1.0
    b0: float = 1.0
    mu0: np.ndarray | None = None
    lambda0: np.ndarray | None = None
    family: str = field(default="nig_regression", init=False)

    def __post_init__(self):
        cols = tuple(int(c) for c in self.columns)
        p = len(cols)
        if p < 1 or min(cols) < 0 or max(cols) >= self.n_predictors:
            raise ModelError("columns must index into the shared predictor matrix")
        mu0 = np.zeros(p) if self.mu0 is None else np.asarray(self.mu0, dtype=float).reshape(p)
        lam = np.asarray(5.0 * np.eye(p) if self.lambda0 is None else self.lambda0, dtype=float)
        if lam.ndim == 0:
            lam = float(lam) * np.eye(p)
        elif lam.ndim == 1:
            lam = np.diag(lam)
        try:
            np.linalg.cholesky(lam)
        except np.linalg.LinAlgError as exc:
            raise ModelError("lambda0 must be symmetric positive definite") from exc
        if not np.allclose(lam, lam.T) or not (self.a0 > 0 and self.b0 > 0):
            raise ModelError("invalid Normal-Inverse-Gamma hyperparameters")
        for arr in (mu0, lam):
            arr.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "lambda0", lam)

    def design(self, data: Dataset) -> np.ndarray:
        if data.covariates is None or data.covariates.shape[1] != self.n_predictors:
            raise ModelError(f"{self.name}: expected {self.n_predictors} predictor columns")
        return data.covariates[:, list(self.columns)]

    def simulate(self, rng, n):
        X = rng.standard_normal((n, self.n_predictors))
        sigma2 = 1.0 / rng.gamma(self.a0, 1.0 / self.b0)
        L = np.linalg.cholesky(np.linalg.inv(self.lambda0))
        coef = self.mu0 + math.sqrt(sigma2) * (L @ rng.standard_normal(len(self.columns)))
        y = X[:, list(self.columns)] @ coef + math.sqrt(sigma2) * rng.standard_normal(n)
        return Dataset(y, X)

    def log_marginal(self, data):
        return nig_log_marginal(self, self.design(data), data.observations)


class NigPosterior(NamedTuple):
    a_n: float
    b_n: float
    mu_n: np.ndarray
    lambda_n: np.ndarray


def nig_posterior_update(model: NigRegressionModel, X, y) -> NigPosterior:
    X = np.asarray(X, dtype=float).reshape(-1, len(model.columns))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.size:
        raise ModelError("X and y disagree on the number of observations")
    lam0, mu0 = model.lambda0, model.mu0
    lam_n = X.T @ X + lam0
    # X^T X (X^T X)^-1 X^T y reduces to X^T y and needs no invertible X^T X
    rhs = X.T @ y + lam0 @ mu0
    c = np.linalg.cholesky(lam_n)
    mu_n = np.linalg.solve(c.T, np.linalg.solve(c, rhs))
    a_n = model.a0 + 0.5 * y.size
    b_n = model.b0 + 0.5 * (y @ y + mu0 @ lam0 @ mu0 - mu_n @ lam_n @ mu_n)
    return NigPosterior(float(a_n), float(b_n), mu_n, lam_n)


def nig_log_marginal(model: NigRegressionModel, X, y) -> float:
    post = nig_posterior_update(model, X, y)
    n = np.asarray(y).size
    _, logdet0 = np.linalg.slogdet(model.lambda0)
    _, logdet_n = np.linalg.slogdet(post.lambda_n)
    return float(
        -0.5 * n * math.log(2 * math.pi)
        + 0.5 * (logdet0 - logdet_n)
        + model.a0 * math.log(model.b0)
        - post.a_n * math.log(post.b_n)
        + gammaln(post.a_n)
        - gammaln(model.a0)
    )


# -- compartmental epidemic models --------------------------------------------

BASE_STEPS_PER_DAY = 20  # step 0.05 day
MAX_RATE_STEP = 0.25  # largest rate * step allowed before refining
MAX_STEPS_PER_DAY = 1_000_000
MIN_MEAN = 1e-12


def steps_per_day(beta, gamma, eta=None) -> np.ndarray:
    """RK4 steps per day: 20, refined so every rate times the step stays <= 0.25."""
    rates = [np.asarray(beta, dtype=float), np.asarray(gamma, dtype=float)]
    if eta is not None:
        rates.append(np.asarray(eta, dtype=float))
    fastest = np.maximum.reduce(np.broadcast_arrays(*rates))
    steps = np.maximum(BASE_STEPS_PER_DAY, np.ceil(fastest / MAX_RATE_STEP)).astype(np.int64)
    if np.any(steps > MAX_STEPS_PER_DAY) or not np.all(np.isfinite(fastest)):
        raise StepSizeError("step-size underflow: rates too large for fixed-step RK4")
    return steps


@dataclass(frozen=True)
class EpidemicModel(GenerativeModel):
    """SIR or SEIR dynamics observed through a Poisson or negative-binomial count.

    Priors are half-normal ``|N(mean, sd)|`` on every rate and, for the
    negative-binomial likelihood, on the dispersion ``phi`` (variance
    ``mu + mu^2 / phi``). ``log_marginal`` averages the likelihood over
    ``n_is`` importance draws generated from ``is_seed``.
    """

    name: str
    compartments: str = "SIR"
    likelihood: str = "poisson"
    beta_prior: tuple = (2.0, 0.1)
    gamma_prior: tuple = (0.4, 0.1)
    eta_prior: tuple | None = None
    phi_prior: tuple | None = None
    population: int = 763
    initial_infected: int = 1
    horizon: int = 14
    n_is: int = 20_000
    is_seed: int = 0
    proposal: str = "prior"
    family: str = field(default="epidemic", init=False)

    def __post_init__(self):
        object.__setattr__(self, "compartments", self.compartments.upper())
        object.__setattr__(self, "likelihood", self.likelihood.lower().replace("-", "_"))
        if self.compartments not in ("SIR", "SEIR"):
            raise ModelError("compartments must be SIR or SEIR")
        if self.likelihood not in ("poisson", "negative_binomial"):
            raise ModelError("likelihood must be poisson or negative_binomial")
        if self.compartments == "SEIR" and self.eta_prior is None:
            raise ModelError("SEIR models need an eta prior")
        if self.likelihood == "negative_binomial" and self.phi_prior is None:
            raise ModelError("negative-binomial models need a phi prior")
        for prior in self._priors():
            if len(prior) != 2 or prior[1] <= 0 or prior[0] < 0:
                raise ModelError("prior (mean, sd) pairs need sd > 0")
        if not 1 <= self.initial_infected <= self.population:
            raise ModelError("need 1 <= initial_infected <= population")
        if self.horizon < 2 or self.n_is < 1:
            raise ModelError("invalid horizon or importance sample size")
        if self.proposal not in ("prior", "laplace"):
            raise ModelError("proposal must be 'prior' or 'laplace'")
        for name in ("beta_prior", "gamma_prior", "eta_prior", "phi_prior"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))

    @property
    def seir(self) -> bool:
        return self.compartments == "SEIR"

    @property
    def negative_binomial(self) -> bool:
        return self.likelihood == "negative_binomial"

    def _priors(self):
        priors = [self.beta_prior, self.gamma_prior]
        if self.seir:
            priors.append(self.eta_prior)
        if self.negative_binomial:
            priors.append(self.phi_prior)
        return priors

    @property
    def parameter_names(self):
        names = ["beta", "gamma"]
        if self.seir:
            names.append("eta")
        if self.negative_binomial:
            names.append("phi")
        return names

    def sample_prior(self, rng, size) -> np.ndarray:
        means = np.array([p[0] for p in self._priors()])
        sds = np.array([p[1] for p in self._priors()])
        return np.abs(means + sds * rng.standard_normal((size, means.size)))

    def log_prior(self, theta) -> np.ndarray:
        """Folded-normal log density, matching ``|N(mean, sd)|`` sampling."""
        theta = np.atleast_2d(theta)
        means = np.array([p[0] for p in self._priors()])
        sds = np.array([p[1] for p in self._priors()])
        dens = np.logaddexp(stats.norm.logpdf(theta, means, sds), stats.norm.logpdf(-theta, means, sds))
        out = dens.sum(axis=1)
        return np.where(np.all(theta > 0, axis=1), out, -np.inf)

    def _unpack(self, theta):
        theta = np.atleast_2d(theta)
        beta, gamma = theta[:, 0], theta[:, 1]
        eta = theta[:, 2] if self.seir else np.zeros_like(beta)
        phi = theta[:, -1] if self.negative_binomial else None
        return beta, gamma, eta, phi

    def trajectories(self, theta, n_days, threads=1) -> np.ndarray:
        """Infected counts I(t) at days 1..n_days, one row per parameter vector."""
        beta, gamma, eta, _ = self._unpack(theta)
        return epidemic_compartments(self, beta, gamma, eta, n_days, threads)[:, :, 2]

    def log_likelihood(self, y, infected, phi=None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        mu = np.maximum(infected, MIN_MEAN)
        if not self.negative_binomial:
            return np.sum(y * np.log(mu) - mu - gammaln(y + 1.0), axis=-1)
        phi = np.asarray(phi, dtype=float)[:, None]
        return np.sum(
            gammaln(y + phi) - gammaln(phi) - gammaln(y + 1.0)
            + phi * (np.log(phi) - np.log(phi + mu))
            + y * (np.log(mu) - np.log(phi + mu)),
            axis=-1,
        )

    def simulate(self, rng, n):
        theta = self.sample_prior(rng, 1)
        infected = np.maximum(self.trajectories(theta, n)[0], 0.0)
        if self.negative_binomial:
            phi = theta[0, -1]
            counts = rng.negative_binomial(phi, phi / (phi + np.maximum(infected, MIN_MEAN)))
        else:
            counts = rng.poisson(infected)
        return Dataset(counts.astype(float))

    def log_marginal(self, data):
        est = epidemic_log_marginal(self, data, self.n_is, self.is_seed, self.proposal)
        if est.degenerate:
            log.warning("%s: every importance weight is zero; log evidence is -inf", self.name)
        return est.log_marginal


def epidemic_compartments(model: EpidemicModel, beta, gamma, eta, n_days, threads=1) -> np.ndarray:
    beta, gamma, eta = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (beta, gamma, eta))
    if np.any(beta < 0) or np.any(gamma < 0) or np.any(eta < 0):
        raise ModelError("epidemic rates must be non-negative")
    steps = steps_per_day(beta, gamma, eta if model.seir else None)
    return kernels.rk4_compartments(beta, gamma, eta, model.seir, model.population,
                                    model.initial_infected, int(n_days), steps, threads=threads)


def epidemic_integrate(model: EpidemicModel, beta, gamma, eta=0.0, n_days=None) -> np.ndarray:
    """Daily infected counts I(1), ..., I(T) for one parameter setting."""
    T = model.horizon if n_days is None else int(n_days)
    return epidemic_compartments(model, beta, gamma, eta, T)[0, :, 2]


class ISEstimate(NamedTuple):
    log_marginal: float
    stderr: float  # delta-method standard error of the log estimate
    ess: float
    degenerate: bool


def _summarize_log_weights(lw) -> ISEstimate:
    S = lw.size
    if np.all(lw == -np.inf):
        return ISEstimate(-np.inf, np.inf, 0.0, True)
    est = logsumexp(lw) - math.log(S)
    w = np.exp(lw - lw.max())
    ess = w.sum() ** 2 / np.sum(w * w)
    rel = np.std(w, ddof=1) / (w.mean() * math.sqrt(S)) if S > 1 else np.inf
    return ISEstimate(float(est), float(rel), float(ess), False)


@lru_cache(maxsize=32)
def _prior_bank(model: EpidemicModel, n_is: int, seed: int, n_days: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    theta = model.sample_prior(rng, n_is)
    infected = model.trajectories(theta, n_days)
    infected.setflags(write=False)
    return theta, infected


def prior_log_weights(model: EpidemicModel, y, n_is: int, seed: int) -> np.ndarray:
    """Per-draw log likelihoods under prior draws; their log-mean is the evidence estimate."""
    y = np.asarray(y, dtype=float)
    theta, infected = _prior_bank(model, int(n_is), int(seed), y.size)
    phi = theta[:, -1] if model.negative_binomial else None
    return model.log_likelihood(y, infected, phi)


def _laplace_log_weights(model: EpidemicModel, y, n_is: int, seed: int, defensive: float = 0.1):
    y = np.asarray(y, dtype=float)
    T = y.size

    def neg_log_post(log_theta):
        theta = np.exp(log_theta)[None, :]
        _, _, _, phi = model._unpack(theta)
        inf = model.trajectories(theta, T)
        val = model.log_likelihood(y, inf, phi)[0] + model.log_prior(theta)[0] + log_theta.sum()
        return -val if np.isfinite(val) else 1e300

    start = np.log([p[0] for p in model._priors()])
    res = optimize.minimize(neg_log_post, start, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 20_000, "maxfev": 20_000})
    mode = res.x
    d = mode.size
    h = 1e-4
    H = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h
            ej[j] = h
            H[i, j] = (neg_log_post(mode + ei + ej) - neg_log_post(mode + ei - ej)
                       - neg_log_post(mode - ei + ej) + neg_log_post(mode - ei - ej)) / (4 * h * h)
    H = 0.5 * (H + H.T)
    evals, evecs = np.linalg.eigh(H)
    cov = (evecs / np.maximum(evals, 1e-8)) @ evecs.T * 1.5
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    t = stats.multivariate_t(loc=mode, shape=cov, df=5)
    n_def = int(round(defensive * n_is))
    log_t = np.atleast_2d(t.rvs(size=n_is - n_def, random_state=rng)).reshape(-1, d)
    theta = np.vstack([np.exp(log_t), model.sample_prior(rng, n_def)])
    log_q = np.logaddexp(
        math.log1p(-defensive) + t.logpdf(np.log(theta)).reshape(-1) - np.log(theta).sum(axis=1),
        math.log(defensive) + model.log_prior(theta),
    )
    _, _, _, phi = model._unpack(theta)
    inf = model.trajectories(theta, T)
    return model.log_likelihood(y, inf, phi) + model.log_prior(theta) - log_q


def epidemic_log_marginal(model: EpidemicModel, y, n_is: int | None = None, seed: int | None = None,
                          proposal: str | None = None) -> ISEstimate:
    """Importance-sampling estimate of the log evidence.

    ``proposal="prior"`` averages the likelihood over prior draws. ``"laplace"``
    draws from a Student-t fitted at the posterior mode in log-parameter space,
    mixed with 10% prior draws to bound the weights.
    """
    obs = y.observations if isinstance(y, Dataset) else np.asarray(y, dtype=float)
    n_is = model.n_is if n_is is None else int(n_is)
    seed = model.is_seed if seed is None else int(seed)
    proposal = model.proposal if proposal is None else proposal
    if n_is < 1:
        raise ModelError("n_is must be positive")
    if np.any(obs < 0):
        raise ModelError("counts must be non-negative")
    if proposal == "prior":
        lw = prior_log_weights(model, obs, n_is, seed)
    elif proposal == "laplace":
        lw = _laplace_log_weights(model, obs, n_is, seed)
    else:
        raise ModelError(f"unknown proposal {proposal!r}")
    return _summarize_log_weights(np.where(np.isnan(lw), -np.inf, lw))


def load_epidemic_data(path) -> Dataset:
    """Read a ``day,in_bed`` CSV into a count data set ordered by day."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["day", "in_bed"]:
            raise ModelError("epidemic data must have header day,in_bed")
        rows = sorted((int(r["day"]), float(r["in_bed"])) for r in reader)
    return Dataset(np.array([v for _, v in rows]))


def load_dataset(path, model: GenerativeModel) -> Dataset:
    """Read observed data in the CSV layout of ``model``'s family.

    Beta-Bernoulli: one column ``y`` of 0/1 outcomes. Regression: ``x1..xP``
    predictor columns followed by ``y``. Epidemic: ``day,in_bed``.
    """
    if model.family == "epidemic":
        return load_epidemic_data(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ModelError(f"{path}: empty data file")
    header = [h.strip() for h in rows[0]]
    try:
        values = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError:
        raise ModelError(f"{path}: non-numeric entry") from None
    values = values.reshape(-1, len(header))
    if model.family == "nig_regression":
        expected = [f"x{i + 1}" for i in range(model.n_predictors)] + ["y"]
        if header != expected:
            raise ModelError(f"{path}: header must read {','.join(expected)}")
        return Dataset(values[:, -1], values[:, :-1])
    if header != ["y"]:
        raise ModelError(f"{path}: header must read y")
    return Dataset(values[:, 0])


# -- externally computed PMPs -------------------------------------------------

RENORMALIZE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ExternalPmpSource:
    """PMP vectors computed elsewhere, optionally labeled with the true model (1-based)."""

    pmps: np.ndarray
    labels: np.ndarray | None = None

    @property
    def J(self) -> int:
        return self.pmps.shape[1]

    @property
    def records(self):
        labels = [None] * len(self.pmps) if self.labels is None else self.labels.tolist()
        return [(PmpVector(p), lab) for p, lab in zip(self.pmps, labels)]


def load_external_pmps(path) -> ExternalPmpSource:
    """Read ``pi_1,...,pi_J[,true_model]``.

    Rows within 1e-6 of summing to one are renormalized; any other row is
    rejected with its 1-based data row number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise PmpFileError("empty PMP file")
    header = [h.strip() for h in rows[0]]
    labeled = header[-1] == "true_model"
    pi_cols = header[:-1] if labeled else header
    J = len(pi_cols)
    if J < 2 or pi_cols != [f"pi_{j + 1}" for j in range(J)]:
        raise PmpFileError("header must read pi_1,...,pi_J with an optional true_model column")
    pmps, labels = [], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise PmpFileError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        try:
            p = np.array([float(x) for x in row[:J]])
        except ValueError:
            raise PmpFileError(f"row {i}: non-numeric probability") from None
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise PmpFileError(f"row {i}: probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > RENORMALIZE_TOL:
            raise PmpFileError(f"row {i}: probabilities sum to {p.sum()!r}, not 1")
        pmps.append(p / p.sum())
        if labeled:
            try:
                lab = int(row[J])
            except ValueError:
                raise PmpFileError(f"row {i}: true_model must be an integer") from None
            if not 1 <= lab <= J:
                raise PmpFileError(f"row {i}: true_model {lab} outside 1..{J}")
            labels.append(lab)
    if not pmps:
        raise PmpFileError("PMP file has no data rows")
    return ExternalPmpSource(np.array(pmps), np.array(labels, dtype=int) if labeled else None)
