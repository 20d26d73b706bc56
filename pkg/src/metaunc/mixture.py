"""Predictive mixture of meta-model densities weighted by observed PMPs.

    f(p) = sum_j  w_j * p_j(p)

where ``w`` is the observed PMP vector and ``p_j`` is the posterior predictive
density of the meta-model fitted on PMPs simulated from model j. In embedded
mode each ``p_j`` is replaced by a weighted mixture over a few representative
parameter vectors instead of all posterior draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .meta import Embedding, MetaPosterior, cluster_embedding, family_of
from .simplex import PmpVector, SimplexDensityGrid, barycentric_grid, clamp_to_interior

MODES = ("full", "embedded")
MOMENT_SEED = 20240611
MOMENT_DRAWS = 100_000


class MixtureError(ValueError):
    pass


def _arrays(component):
    """(family, J, params, weights, epsilon) of a posterior or an embedding."""
    if isinstance(component, MetaPosterior):
        return (component.family, component.J, component.draws,
                np.full(component.D, 1.0 / component.D), component.config.epsilon_clamp)
    if isinstance(component, Embedding):
        return (component.family, component.J, component.centers, component.weights,
                component.epsilon_clamp)
    raise TypeError(f"expected MetaPosterior or Embedding, got {type(component).__name__}")


@dataclass(frozen=True, eq=False)
class PredictiveMixture:
    weights: PmpVector
    components: tuple
    mode: str = "full"
    seed: int | None = None
    clusters: int | None = None

    def __post_init__(self):
        w = self.weights if isinstance(self.weights, PmpVector) else PmpVector(self.weights)
        comps = tuple(self.components)
        if len(comps) != len(w):
            raise MixtureError(f"need {len(w)} components, got {len(comps)}")
        if self.mode not in MODES:
            raise MixtureError(f"mode must be one of {MODES}")
        for c in comps:
            if _arrays(c)[1] != len(w):
                raise MixtureError("component dimension does not match the observed PMPs")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def J(self) -> int:
        return len(self.weights)


def build_mixture(observed, fits, mode: str = "full", C: int = 3, seed: int = 0) -> PredictiveMixture:
    """Assemble the mixture; ``fits[j]`` is the posterior for model j (``None`` if its group was empty)."""
    observed = observed if isinstance(observed, PmpVector) else PmpVector(observed)
    fits = list(fits)
    if len(fits) != len(observed):
        raise MixtureError(f"observed PMPs have {len(observed)} entries but {len(fits)} fits were given")
    missing = [j + 1 for j, f in enumerate(fits) if f is None]
    if missing:
        raise MixtureError(f"no meta-model for model(s) {missing}: their simulation groups are empty")
    if mode not in MODES:
        raise MixtureError(f"mode must be one of {MODES}")
    if mode == "embedded":
        comps = [cluster_embedding(f, C, seed=_sub_seed(seed, j)) for j, f in enumerate(fits)]
        return PredictiveMixture(observed, comps, mode, int(seed), int(C))
    return PredictiveMixture(observed, fits, mode, int(seed), None)


def _sub_seed(seed, j):
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(j),)).generate_state(1)[0])


def component_logpdf(component, p, threads: int = 1):
    family, J, params, w, eps = _arrays(component)
    p = np.asarray(p, dtype=float)
    pts = clamp_to_interior(np.atleast_2d(p), eps)
    out = family_of(family).logpdf(pts, params, np.log(w), J, threads)
    return float(out[0]) if p.ndim == 1 else out


def mixture_logpdf(m: PredictiveMixture, p, threads: int = 1):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != m.J:
        raise MixtureError("point dimension does not match the mixture")
    pts = np.atleast_2d(p)
    terms = [math.log(w) + component_logpdf(c, pts, threads)
             for w, c in zip(m.weights.probs, m.components) if w > 0]
    out = terms[0] if len(terms) == 1 else logsumexp(np.stack(terms), axis=0)
    return float(out[0]) if p.ndim == 1 else out


class Moments(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    mean_stderr: np.ndarray  # zero when exact


def component_moments(component, n_draws: int = MOMENT_DRAWS, seed: int = MOMENT_SEED) -> Moments:
    """Mean and covariance of a component's predictive distribution.

    Exact for Dirichlet components; logistic-normal components use a fixed-seed
    Monte-Carlo sample of ``n_draws`` points.
    """
    family, J, params, w, _ = _arrays(component)
    if family == "dirichlet":
        a = np.atleast_2d(params)
        a0 = a.sum(axis=1, keepdims=True)
        means = a / a0
        mean = w @ means
        second = np.einsum("c,ci,cj->ij", w, means, means)
        within = np.einsum("c,ci->i", w / (a0[:, 0] + 1), means)
        within_outer = np.einsum("c,ci,cj->ij", w / (a0[:, 0] + 1), means, means)
        cov = np.diag(within) - within_outer + second - np.outer(mean, mean)
        return Moments(mean, cov, np.zeros(J))
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    x = family_of(family).sample(rng, params, w, int(n_draws), J)
    cov = np.cov(x, rowvar=False)
    return Moments(x.mean(axis=0), cov, np.sqrt(np.diag(cov) / x.shape[0]))


def component_variance_trace(component, n_draws: int = MOMENT_DRAWS, seed: int = MOMENT_SEED) -> float:
    return float(np.trace(component_moments(component, n_draws, seed).cov))


def linear_correction_matrix(m: PredictiveMixture) -> np.ndarray:
    """Matrix whose column j is the mean of component j; the mixture mean is this times the weights."""
    return np.stack([component_moments(c).mean for c in m.components], axis=1)


def mixture_mean(m: PredictiveMixture) -> PmpVector:
    return PmpVector.from_weights(linear_correction_matrix(m) @ m.weights.probs)


def mixture_variance_trace(m: PredictiveMixture) -> float:
    """Trace of the mixture covariance by the law of total variance over components."""
    w = m.weights.probs
    moments = [component_moments(c) for c in m.components]
    means = np.stack([mo.mean for mo in moments])
    center = w @ means
    within = sum(wj * np.trace(mo.cov) for wj, mo in zip(w, moments) if wj > 0)
    between = sum(wj * np.sum((mo.mean - center) ** 2) for wj, mo in zip(w, moments) if wj > 0)
    return float(within + between)


def sample_mixture(m: PredictiveMixture, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    which = rng.choice(m.J, size=int(n), p=m.weights.probs)
    out = np.empty((int(n), m.J))
    for j, comp in enumerate(m.components):
        idx = np.flatnonzero(which == j)
        if idx.size:
            family, J, params, w, _ = _arrays(comp)
            out[idx] = family_of(family).sample(rng, params, w, idx.size, J)
    return out


def vertex_mass(m: PredictiveMixture, q: int, radius: float = 0.1, n: int = MOMENT_DRAWS,
                seed: int = MOMENT_SEED) -> tuple[float, float]:
    """Mixture probability of the L1 ball of ``radius`` around vertex ``q`` (0-based).

    Sampling-based, so it stays accurate when the density piles up at a vertex
    where lattice quadrature cannot resolve it. Returns (mass, stderr).
    """
    x = sample_mixture(m, n, seed)
    target = np.zeros(m.J)
    target[q] = 1.0
    hit = np.abs(x - target).sum(axis=1) < radius
    mass = float(hit.mean())
    return mass, math.sqrt(mass * (1 - mass) / n)


def density_grid(m: PredictiveMixture, resolution: int = 200, threads: int = 1) -> SimplexDensityGrid:
    if m.J != 3:
        raise MixtureError("density grids are defined for three models only")
    grid = barycentric_grid(resolution, J=3)
    return grid.with_log_density(mixture_logpdf(m, grid.points, threads))


def mixture_summary(m: PredictiveMixture, model_names=None) -> dict:
    moments = [component_moments(c) for c in m.components]
    names = list(model_names) if model_names is not None else [f"M{j + 1}" for j in range(m.J)]
    return {
        "mode": m.mode,
        "clusters": m.clusters,
        "seed": m.seed,
        "moment_seed": MOMENT_SEED,
        "moment_draws": MOMENT_DRAWS,
        "models": names,
        "weights": m.weights.probs.tolist(),
        "component_means": [mo.mean.tolist() for mo in moments],
        "component_mean_stderr": [mo.mean_stderr.tolist() for mo in moments],
        "mixture_mean": mixture_mean(m).probs.tolist(),
        "variance_trace": mixture_variance_trace(m),
    }
