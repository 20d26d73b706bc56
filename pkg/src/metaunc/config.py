"""Pipeline configuration: a versioned JSON document validated before any compute.

Example::

    {
      "schema_version": 1,
      "models": [
        {"name": "M1", "family": "beta_bernoulli", "alpha": 1, "beta": 10},
        {"name": "M2", "family": "beta_bernoulli", "alpha": 1, "beta": 20}
      ],
      "K": 10000, "N": 50, "seed": 7,
      "observed": {"data": "builtin:minimal_atypical"}
    }

Omitted keys take the defaults of :class:`PipelineConfig`; unknown keys are
errors. Paths of the form ``builtin:<name>`` refer to data files shipped with
the package.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .engine import ModelSet
from .meta import MetaModelConfig, MetaModelError
from .mixture import MODES
from .models import BetaBernoulliModel, EpidemicModel, ModelError, NigRegressionModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {
    "beta_bernoulli": {"alpha", "beta"},
    "nig_regression": {"columns", "n_predictors", "a0", "b0", "mu0", "lambda0"},
    "epidemic": {"compartments", "likelihood", "beta_prior", "gamma_prior", "eta_prior",
                 "phi_prior", "population", "initial_infected", "horizon", "n_is", "is_seed",
                 "proposal"},
}
_BUILDERS = {
    "beta_bernoulli": BetaBernoulliModel,
    "nig_regression": NigRegressionModel,
    "epidemic": EpidemicModel,
}


def build_model(spec: dict):
    spec = dict(spec)
    family = spec.pop("family", None)
    name = spec.pop("name", None)
    if family not in _BUILDERS:
        raise ConfigError(f"unknown model family {family!r}; choose from {sorted(_BUILDERS)}")
    if not isinstance(name, str) or not name:
        raise ConfigError("every model needs a non-empty name")
    unknown = set(spec) - _MODEL_KEYS[family]
    if unknown:
        raise ConfigError(f"model {name}: unknown keys {sorted(unknown)}")
    for key in ("beta_prior", "gamma_prior", "eta_prior", "phi_prior", "columns"):
        if spec.get(key) is not None:
            spec[key] = tuple(spec[key])
    for key in ("mu0", "lambda0"):
        if spec.get(key) is not None:
            spec[key] = np.asarray(spec[key], dtype=float)
    try:
        return _BUILDERS[family](name=name, **spec)
    except (ModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"model {name}: {exc}") from exc


def resolve_path(ref: str, base: Path | None = None) -> Path:
    """Map ``builtin:<name>`` to a packaged CSV; relative paths resolve against ``base``."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        path = resources.files("metaunc") / "data" / f"{name}.csv"
        if not path.is_file():
            raise ConfigError(f"no builtin data set named {name!r}")
        return Path(str(path))
    path = Path(ref)
    if not path.is_absolute() and base is not None:
        path = base / path
    return path


def _check_int(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")


@dataclass(frozen=True)
class PipelineConfig:
    models: tuple
    K: int
    N: int
    seed: int = 0
    model_prior: tuple | None = None
    stratified: bool = False
    meta_model: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=lambda: {"mode": "full", "clusters": 3})
    observed: dict | None = None
    grid_resolution: int = 200
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version!r}")
        if not isinstance(self.models, (list, tuple)) or len(self.models) < 2:
            raise ConfigError("models must list at least two model specifications")
        object.__setattr__(self, "models", tuple(copy.deepcopy(dict(m)) for m in self.models))
        _check_int("K", self.K, 1)
        _check_int("N", self.N, 1)
        _check_int("seed", self.seed, 0)
        _check_int("grid_resolution", self.grid_resolution, 1)
        if not isinstance(self.stratified, bool):
            raise ConfigError("stratified must be true or false")
        if self.model_prior is not None:
            object.__setattr__(self, "model_prior", tuple(float(x) for x in self.model_prior))
        emb = {"mode": "full", "clusters": 3, **dict(self.embedding)}
        if set(emb) != {"mode", "clusters"}:
            raise ConfigError(f"embedding accepts only mode and clusters, got {sorted(emb)}")
        if emb["mode"] not in MODES:
            raise ConfigError(f"embedding mode must be one of {MODES}")
        _check_int("embedding.clusters", emb["clusters"], 1)
        object.__setattr__(self, "embedding", emb)
        if self.observed is not None:
            obs = dict(self.observed)
            if len(obs) != 1 or not set(obs) <= {"pmps", "data"}:
                raise ConfigError("observed must hold exactly one of 'pmps' or 'data'")
            if "pmps" in obs:
                obs["pmps"] = [float(x) for x in obs["pmps"]]
            object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "meta_model", dict(self.meta_model))
        # building the objects validates every nested value
        self.model_set()
        self.meta_config()
        if self.observed and "pmps" in self.observed and len(self.observed["pmps"]) != len(self.models):
            raise ConfigError("observed PMPs need one entry per model")

    def model_set(self) -> ModelSet:
        models = [build_model(m) for m in self.models]
        try:
            return ModelSet(models, self.model_prior)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def meta_config(self) -> MetaModelConfig:
        try:
            return MetaModelConfig.from_dict(self.meta_model)
        except (MetaModelError, TypeError) as exc:
            raise ConfigError(f"meta_model: {exc}") from exc

    def replace(self, **changes) -> "PipelineConfig":
        d = self.to_dict()
        d.update(changes)
        return PipelineConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "models": [dict(m) for m in self.models],
            "model_prior": None if self.model_prior is None else list(self.model_prior),
            "K": self.K,
            "N": self.N,
            "seed": self.seed,
            "stratified": self.stratified,
            "meta_model": dict(self.meta_model),
            "embedding": dict(self.embedding),
            "observed": None if self.observed is None else dict(self.observed),
            "grid_resolution": self.grid_resolution,
            "output_dir": self.output_dir,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        missing = {"models", "K", "N"} - set(d)
        if missing:
            raise ConfigError(f"missing required keys: {sorted(missing)}")
        d = {k: v for k, v in d.items() if not (v is None and k in ("embedding", "meta_model"))}
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.loads(text)


_TABLE = {
    "M1": dict(compartments="SIR", likelihood="poisson", beta_prior=[2.0, 0.1], gamma_prior=[0.4, 0.1]),
    "M2": dict(compartments="SEIR", likelihood="poisson", beta_prior=[3.0, 0.1],
               gamma_prior=[0.5, 0.1], eta_prior=[3.0, 0.1]),
    "M3": dict(compartments="SEIR", likelihood="negative_binomial", beta_prior=[3.0, 0.1],
               gamma_prior=[0.5, 0.1], eta_prior=[3.0, 0.1], phi_prior=[100.0, 1.0]),
}

PRESETS = {
    "minimal": {
        "models": [
            {"name": "M1", "family": "beta_bernoulli", "alpha": 1.0, "beta": 10.0},
            {"name": "M2", "family": "beta_bernoulli", "alpha": 1.0, "beta": 20.0},
        ],
        "K": 10000, "N": 50, "seed": 7,
        "observed": {"data": "builtin:minimal_atypical"},
    },
    "experiment1": {
        "models": [
            {"name": f"M{j + 1}", "family": "nig_regression", "columns": [0, 1, 2 + j],
             "n_predictors": 5, "a0": 1.0, "b0": 1.0, "lambda0": [5.0, 5.0, 5.0]}
            for j in range(3)
        ],
        "K": 300, "N": 10, "seed": 11,
        "observed": {"pmps": [0.05, 0.91, 0.03]},
    },
    "experiment2": {
        "models": [{"name": name, "family": "epidemic", **spec} for name, spec in _TABLE.items()],
        "K": 100, "N": 14, "seed": 5,
        "observed": {"data": "builtin:boarding_school"},
    },
}


def preset(name: str) -> PipelineConfig:
    try:
        return PipelineConfig.from_dict(copy.deepcopy(PRESETS[name]))
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
