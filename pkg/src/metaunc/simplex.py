"""Points, transforms and densities on the probability simplex.

Posterior model probabilities live on the (J-1)-simplex. The meta-models need
two density families on it (Dirichlet and logistic-normal) and a regular
barycentric lattice for quadrature and for plottable density grids.

The logistic-normal family uses the additive log-ratio (ALR) link with the last
component as reference::

    alr(p) = (log(p_1 / p_J), ..., log(p_{J-1} / p_J))

Vertex and edge points have infinite ALR coordinates, so every density
evaluation first pushes its argument into the interior with
:func:`clamp_to_interior`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import lgamma, log, pi

import numpy as np
from scipy.special import gammaln, logsumexp

EPSILON = 1e-9
SUM_ATOL = 1e-12
SYMMETRY_ATOL = 1e-10


class DegenerateWeightsError(ValueError):
    pass


class PmpVector:
    """A point on the probability simplex.

    The weights are validated on construction and stored read-only. Use
    :meth:`from_weights` when the input only sums to one approximately.
    """

    __slots__ = ("probs",)

    def __init__(self, probs):
        p = np.array(probs, dtype=float).reshape(-1)
        if p.size < 2:
            raise ValueError("a PMP vector needs at least two entries")
        if not np.all(np.isfinite(p)):
            raise ValueError("PMP entries must be finite")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError(f"PMP entries must lie in [0, 1], got {p.tolist()}")
        if abs(p.sum() - 1.0) > SUM_ATOL:
            raise ValueError(f"PMP entries must sum to 1, got sum {p.sum()!r}")
        p.setflags(write=False)
        self.probs = p

    @classmethod
    def from_weights(cls, weights) -> "PmpVector":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise ValueError("weights must be finite, non-negative and not all zero")
        return cls(w / w.sum())

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, i):
        return self.probs[i]

    def __iter__(self):
        return iter(self.probs)

    def __eq__(self, other):
        if not isinstance(other, PmpVector):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"PmpVector({self.probs.tolist()})"

    @property
    def J(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(-1)
        if a.size < 2 or not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("Dirichlet concentrations must be positive and finite")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def J(self) -> int:
        return self.alpha.size


@dataclass(frozen=True, eq=False)
class LogisticNormalParams:
    """Location and covariance of the ALR coordinates.

    ``chol`` is the lower Cholesky factor of ``sigma``; pass either one.
    """

    mu: np.ndarray
    sigma: np.ndarray = None
    chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if self.chol is not None:
            L = np.array(self.chol, dtype=float).reshape(mu.size, mu.size)
            if np.any(np.diag(L) <= 0) or np.any(np.triu(L, 1) != 0):
                raise ValueError("chol must be lower triangular with positive diagonal")
            sigma = L @ L.T
        else:
            if self.sigma is None:
                raise ValueError("either sigma or chol is required")
            sigma = np.array(self.sigma, dtype=float).reshape(mu.size, mu.size)
            if not np.allclose(sigma, sigma.T, rtol=0.0, atol=SYMMETRY_ATOL):
                raise ValueError("sigma is not symmetric")
            sigma = 0.5 * (sigma + sigma.T)
            try:
                L = np.linalg.cholesky(sigma)
            except np.linalg.LinAlgError as exc:
                raise ValueError("sigma is not positive definite") from exc
        for arr in (mu, sigma, L):
            arr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", L)

    @property
    def J(self) -> int:
        return self.mu.size + 1


def normalize_from_log(log_weights) -> PmpVector:
    """Exponentiate and normalize log-weights without overflow."""
    lw = np.asarray(log_weights, dtype=float).reshape(-1)
    if lw.size < 2:
        raise ValueError("need at least two log-weights")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    if np.all(lw == -np.inf):
        raise DegenerateWeightsError("degenerate weights: every log-weight is -inf")
    p = np.exp(lw - logsumexp(lw))
    # exp/logsumexp rounding can leave the sum a few ulps away from one
    return PmpVector(p / p.sum())


def clamp_to_interior(p, epsilon: float = EPSILON) -> np.ndarray:
    """Raise every entry to at least ``epsilon`` and renormalize.

    Works on a single point or on an ``(..., J)`` stack of points. Points whose
    entries are all at least ``epsilon`` are returned unchanged.
    """
    p = np.asarray(p, dtype=float)
    J = p.shape[-1]
    if not 0.0 < epsilon < 1.0 / J:
        raise ValueError(f"epsilon must lie in (0, 1/J), got {epsilon}")
    q = np.maximum(p, epsilon)
    inside = np.all(p >= epsilon, axis=-1, keepdims=True)
    return np.where(inside, p, q / q.sum(axis=-1, keepdims=True))


def alr(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.log(p[..., :-1]) - np.log(p[..., -1:])


def alr_inv(z) -> np.ndarray:
    """Softmax of ``(z, 0)``."""
    z = np.asarray(z, dtype=float)
    full = np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def dirichlet_logpdf(p, params: DirichletParams) -> np.ndarray | float:
    p = np.asarray(p, dtype=float)
    a = params.alpha
    if p.shape[-1] != a.size:
        raise ValueError(f"dimension mismatch: point has {p.shape[-1]} entries, alpha {a.size}")
    const = gammaln(a.sum()) - gammaln(a).sum()
    out = const + np.log(p) @ (a - 1.0)
    return float(out) if np.ndim(out) == 0 else out


def logistic_normal_logpdf(p, params: LogisticNormalParams) -> np.ndarray | float:
    p = np.asarray(p, dtype=float)
    k = params.mu.size
    if p.shape[-1] != k + 1:
        raise ValueError(f"dimension mismatch: point has {p.shape[-1]} entries, expected {k + 1}")
    L = params.chol
    r = alr(p) - params.mu
    # solve L u = r for every point at once
    u = np.linalg.solve(L, r.reshape(-1, k).T).T.reshape(r.shape)
    logdet = np.log(np.diag(L)).sum()
    out = -0.5 * k * log(2 * pi) - logdet - 0.5 * np.sum(u * u, axis=-1) - np.log(p).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def dirichlet_mean(params: DirichletParams) -> PmpVector:
    a = params.alpha
    return PmpVector.from_weights(a / a.sum())


def log_uniform_dirichlet(J: int) -> float:
    """Log-density of the flat Dirichlet, ``log (J-1)!``."""
    return lgamma(J)


@dataclass(frozen=True, eq=False)
class SimplexDensityGrid:
    """Barycentric lattice points with quadrature weights and log-densities.

    ``weights`` are the per-point quadrature weights of the piecewise-linear
    rule on the lattice triangulation; they sum to the simplex volume
    ``1 / (J-1)!``. ``log_density`` stays ``None`` on a bare skeleton.
    """

    resolution: int
    points: np.ndarray
    weights: np.ndarray
    log_density: np.ndarray | None = None

    @property
    def J(self) -> int:
        return self.points.shape[1]

    def with_log_density(self, values) -> "SimplexDensityGrid":
        values = np.asarray(values, dtype=float)
        if values.shape != (self.points.shape[0],):
            raise ValueError("need exactly one log-density per lattice point")
        return SimplexDensityGrid(self.resolution, self.points, self.weights, values)

    def integral(self) -> float:
        if self.log_density is None:
            raise ValueError("grid has no density values")
        return float(np.sum(self.weights * np.exp(self.log_density)))

    def mass_where(self, mask) -> float:
        """Quadrature mass of the lattice points selected by ``mask``."""
        if self.log_density is None:
            raise ValueError("grid has no density values")
        return float(np.sum((self.weights * np.exp(self.log_density))[np.asarray(mask)]))

    def to_csv(self, path) -> None:
        if self.log_density is None:
            raise ValueError("grid has no density values")
        header = [f"p{i + 1}" for i in range(self.J)] + ["log_density"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for point, value in zip(self.points, self.log_density):
                w.writerow([repr(float(x)) for x in point] + [repr(float(value))])

    @classmethod
    def from_csv(cls, path, resolution: int | None = None) -> "SimplexDensityGrid":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "log_density":
            raise ValueError("grid CSV must end with a log_density column")
        data = np.array([[float(x) for x in row] for row in body])
        points, values = data[:, :-1], data[:, -1]
        J = points.shape[1]
        if resolution is None:
            # count = C(R+J-1, J-1); invert for J in {2, 3}
            n = len(points)
            resolution = n - 1 if J == 2 else int(round((np.sqrt(8 * n + 1) - 3) / 2))
        skeleton = barycentric_grid(resolution, J=J)
        return cls(resolution, points, skeleton.weights, values)


def _lattice(R: int, J: int) -> np.ndarray:
    if J == 2:
        i = np.arange(R + 1)
        return np.stack([i, R - i], axis=1)
    if J == 3:
        rows = [(i, j, R - i - j) for i in range(R + 1) for j in range(R + 1 - i)]
        return np.array(rows, dtype=int)
    raise ValueError("barycentric grids are available for J = 2 and J = 3")


def _linear_element_weights(counts: np.ndarray, R: int) -> np.ndarray:
    J = counts.shape[1]
    on_face = (counts == 0).sum(axis=1)
    if J == 2:
        # trapezoid rule on [0, 1]
        return np.where(on_face > 0, 0.5, 1.0) / R
    # each point carries a third of the area of its adjacent cells
    # interior: 6 cells, edge: 3, vertex: 1; cell area 1 / (2 R^2)
    n_cells = np.select([on_face == 0, on_face == 1], [6, 3], default=1)
    return n_cells / (6.0 * R * R)


def barycentric_grid(resolution: int, epsilon: float = EPSILON, J: int = 3) -> SimplexDensityGrid:
    """Regular lattice ``(i/R, j/R, (R-i-j)/R)`` clamped to the interior.

    Points are ordered by the first, then the second lattice index.
    """
    R = int(resolution)
    if R < 1:
        raise ValueError("resolution must be at least 1")
    counts = _lattice(R, J)
    points = clamp_to_interior(counts / R, epsilon)
    weights = _linear_element_weights(counts, R)
    return SimplexDensityGrid(R, points, weights)
