"""Posterior model probabilities and model-implied PMP samples.

``run_level2`` repeats, for k = 1..K: draw a true model from the model prior,
simulate N observations from its prior predictive distribution, and record the
PMP vector of every candidate on that simulated data set together with the
true model index.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import Dataset, GenerativeModel
from .simplex import PmpVector, normalize_from_log


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSet:
    models: tuple
    prior: PmpVector | None = None

    def __post_init__(self):
        models = tuple(self.models)
        if len(models) < 2:
            raise ValueError("a model set needs at least two models")
        names = [m.name for m in models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")
        prior = self.prior
        if prior is None:
            prior = PmpVector(np.full(len(models), 1.0 / len(models)))
        elif not isinstance(prior, PmpVector):
            prior = PmpVector(prior)
        if len(prior) != len(models):
            raise ValueError("prior model probabilities must have one entry per model")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "prior", prior)

    @property
    def J(self) -> int:
        return len(self.models)

    @property
    def names(self) -> list:
        return [m.name for m in self.models]


def compute_pmps(model_set: ModelSet, y: Dataset) -> PmpVector:
    log_ml = np.array([m.log_marginal(y) for m in model_set.models], dtype=float)
    if np.any(np.isnan(log_ml)):
        bad = [m.name for m, v in zip(model_set.models, log_ml) if np.isnan(v)]
        raise EngineError(f"log marginal likelihood is NaN for {', '.join(bad)}")
    with np.errstate(divide="ignore"):
        log_prior = np.log(model_set.prior.probs)
    return normalize_from_log(log_ml + log_prior)


def task_rng(seed: int, k: int) -> np.random.Generator:
    """Independent stream for simulation ``k`` (0-based) under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(k),)))


@dataclass(frozen=True, eq=False)
class LabeledPmpSample:
    """K simulated PMP vectors with the 1-based index of the generating model."""

    pmps: np.ndarray
    labels: np.ndarray
    n_obs: int | None
    seed: int | None
    model_names: tuple = ()
    stratified: bool = False

    def __post_init__(self):
        pmps = np.asarray(self.pmps, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if pmps.ndim != 2 or pmps.shape[0] != labels.size:
            raise ValueError("pmps and labels must have the same length")
        J = pmps.shape[1]
        if labels.size and (labels.min() < 1 or labels.max() > J):
            raise ValueError("labels must lie in 1..J")
        names = tuple(self.model_names) or tuple(f"M{j + 1}" for j in range(J))
        if len(names) != J:
            raise ValueError("need one model name per PMP column")
        object.__setattr__(self, "pmps", pmps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "model_names", names)

    @property
    def K(self) -> int:
        return self.labels.size

    @property
    def J(self) -> int:
        return self.pmps.shape[1]

    def to_csv(self, path) -> None:
        header = ["k", "true_model"] + [f"pi_{j + 1}" for j in range(self.J)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, (label, p) in enumerate(zip(self.labels, self.pmps), start=1):
                w.writerow([k, int(label)] + [repr(float(x)) for x in p])

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "K": self.K,
            "N": self.n_obs,
            "models": list(self.model_names),
            "stratified": self.stratified,
        }

    def save(self, csv_path) -> Path:
        """Write the CSV and its JSON sidecar (same stem, ``.json``)."""
        csv_path = Path(csv_path)
        self.to_csv(csv_path)
        side = csv_path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return side

    @classmethod
    def load(cls, csv_path) -> "LabeledPmpSample":
        csv_path = Path(csv_path)
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        J = len(header) - 2
        if header[:2] != ["k", "true_model"] or header[2:] != [f"pi_{j + 1}" for j in range(J)]:
            raise ValueError(f"{csv_path}: header must read k,true_model,pi_1,...,pi_J")
        labels = np.array([int(r[1]) for r in body], dtype=int)
        pmps = np.array([[float(x) for x in r[2:]] for r in body]).reshape(-1, J)
        meta = {}
        side = csv_path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text(encoding="utf-8"))
        return cls(pmps, labels, meta.get("N"), meta.get("seed"), tuple(meta.get("models", ())),
                   bool(meta.get("stratified", False)))


def _one_simulation(model_set: ModelSet, N: int, seed: int, k: int, stratified: bool):
    rng = task_rng(seed, k)
    if stratified:
        true = k % model_set.J
    else:
        true = int(rng.choice(model_set.J, p=model_set.prior.probs))
    try:
        data = model_set.models[true].simulate(rng, N)
        pmp = compute_pmps(model_set, data)
    except Exception as exc:
        raise EngineError(f"simulation k={k + 1} (true model {model_set.names[true]}): {exc}") from exc
    return pmp.probs, true + 1


def run_level2(model_set: ModelSet, K: int, N: int, seed: int, stratified: bool = False,
               threads: int = 1) -> LabeledPmpSample:
    """Simulate K data sets of N observations and their PMPs.

    With ``stratified`` the true model cycles through 1..J instead of being
    drawn from the model prior. Output depends only on the arguments, not on
    ``threads``.
    """
    if int(K) < 1 or int(N) < 1:
        raise ValueError("K and N must be positive")
    K, N = int(K), int(N)

    def work(k):
        return _one_simulation(model_set, N, seed, k, stratified)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(K), chunksize=max(1, K // (8 * threads))))
    else:
        results = [work(k) for k in range(K)]
    pmps = np.array([r[0] for r in results])
    labels = np.array([r[1] for r in results], dtype=int)
    return LabeledPmpSample(pmps, labels, N, int(seed), tuple(model_set.names), stratified)


@dataclass(frozen=True, eq=False)
class GroupedPmps:
    """PMP vectors partitioned by true model; ``indices[j]`` are positions in the sample."""

    groups: list
    indices: list = field(default_factory=list)

    @property
    def empty(self) -> list:
        """0-based indices of models that never generated a data set."""
        return [j for j, g in enumerate(self.groups) if len(g) == 0]

    def __len__(self):
        return len(self.groups)

    def __getitem__(self, j):
        return self.groups[j]

    def __iter__(self):
        return iter(self.groups)


def group_by_true_model(sample: LabeledPmpSample) -> GroupedPmps:
    indices = [np.flatnonzero(sample.labels == j + 1) for j in range(sample.J)]
    groups = [sample.pmps[idx] for idx in indices]
    return GroupedPmps(groups, indices)


def mean_max_pmp(sample: LabeledPmpSample) -> tuple[float, float]:
    """Average of the largest PMP per simulation, with its Monte-Carlo standard error."""
    m = sample.pmps.max(axis=1)
    return float(m.mean()), float(m.std(ddof=1) / math.sqrt(m.size)) if m.size > 1 else math.inf
