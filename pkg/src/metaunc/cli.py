"""Command-line pipeline: simulate -> fit -> mix, plus ingestion of external PMPs.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, preset, resolve_path
from .engine import EngineError, LabeledPmpSample, compute_pmps, group_by_true_model, run_level2
from .meta import MetaModelConfig, MetaModelError, MetaPosterior, fit
from .mixture import MixtureError, build_mixture, density_grid, mixture_summary
from .models import ModelError, load_dataset, load_external_pmps
from .simplex import PmpVector

log = logging.getLogger("metaunc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# sub-seed labels; every random stage draws from its own stream of the master seed
_SIMULATE, _FIT, _MIX = 0, 1, 2


class UsageError(Exception):
    pass


def sub_seed(seed: int, *path: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1)[0])


def parse_observed(values) -> tuple[PmpVector, list]:
    """Validate observed PMPs given as strings or numbers.

    Values printed to d decimals may miss one by up to J * 0.5 * 10^-d; such
    inputs are renormalized. Anything further off is rejected.
    """
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    raw = [str(v).strip() for v in values]
    try:
        dec = [Decimal(v) for v in raw]
        probs = np.array([float(d) for d in dec])
    except Exception:
        raise UsageError(f"observed PMPs must be numbers, got {','.join(raw)}") from None
    if probs.size < 2 or not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise UsageError("observed PMPs need at least two non-negative entries")
    decimals = max(-d.as_tuple().exponent for d in dec) if dec else 0
    tol = max(probs.size * 0.5 * 10.0 ** (-decimals), 1e-12)
    if abs(probs.sum() - 1.0) > tol:
        raise UsageError(f"observed PMPs sum to {probs.sum():.6g}, not 1")
    return PmpVector.from_weights(probs), [float(d) for d in dec]


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(args, required=True) -> PipelineConfig | None:
    if args.config and args.preset:
        raise UsageError("use either --config or --preset, not both")
    if args.config:
        cfg = PipelineConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    elif required:
        raise UsageError("a configuration is required (--config FILE or --preset NAME)")
    else:
        return None
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for key in ("K", "N"):
        if getattr(args, key, None) is not None:
            changes[key] = getattr(args, key)
    if getattr(args, "stratified", False):
        changes["stratified"] = True
    if getattr(args, "family", None):
        changes["meta_model"] = {**cfg.meta_model, "likelihood_family": args.family}
    if getattr(args, "mode", None) or getattr(args, "clusters", None):
        emb = dict(cfg.embedding)
        if args.mode:
            emb["mode"] = args.mode
        if args.clusters:
            emb["clusters"] = args.clusters
        changes["embedding"] = emb
    if getattr(args, "resolution", None):
        changes["grid_resolution"] = args.resolution
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or (cfg.output_dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_base(args) -> Path | None:
    return Path(args.config).resolve().parent if args.config else None


# -- stages -------------------------------------------------------------------


def stage_simulate(cfg: PipelineConfig, out: Path, threads: int) -> list:
    sample = run_level2(cfg.model_set(), cfg.K, cfg.N, sub_seed(cfg.seed, _SIMULATE),
                        stratified=cfg.stratified, threads=threads)
    csv_path = out / "pmps.csv"
    side = sample.save(csv_path)
    return [csv_path, side]


def stage_fit(sample: LabeledPmpSample, meta_cfg: MetaModelConfig, seed: int, out: Path,
              threads: int) -> list:
    groups = group_by_true_model(sample)
    names = sample.model_names
    if groups.empty:
        missing = ", ".join(names[j] for j in groups.empty)
        raise MetaModelError(f"no simulated PMPs for model(s) {missing}; cannot fit their meta-models")
    written = []
    for j, group in enumerate(groups):
        try:
            post = fit(group, meta_cfg, seed=sub_seed(seed, _FIT, j), threads=threads,
                       model_name=names[j])
        except MetaModelError as exc:
            raise MetaModelError(f"model {names[j]}: {exc}") from exc
        written.append(out / f"posterior_{names[j]}.json")
        post.save(written[-1])
    return written


def stage_mix(posteriors: list, observed: PmpVector, raw_observed, source: str, mode: str,
              clusters: int, resolution: int, seed: int, out: Path, threads: int) -> list:
    m = build_mixture(observed, posteriors, mode=mode, C=clusters, seed=sub_seed(seed, _MIX))
    names = [p.model_name or f"M{j + 1}" for j, p in enumerate(posteriors)]
    summary = mixture_summary(m, names)
    summary["observed_input"] = raw_observed
    summary["observed_source"] = source
    summary["families"] = [p.family for p in posteriors]
    written = []
    if m.J == 3:
        grid = density_grid(m, resolution, threads)
        grid_path = out / "grid.csv"
        grid.to_csv(grid_path)
        summary["grid_resolution"] = resolution
        summary["grid_integral"] = grid.integral()
        written.append(grid_path)
    else:
        summary["grid_resolution"] = None
        summary["grid_integral"] = None
    written.insert(0, _write_json(out / "mixture.json", summary))
    return written


def _observed_from_args(args, cfg, base):
    if args.observed and args.data:
        raise UsageError("use either --observed or --data, not both")
    if args.observed:
        p, raw = parse_observed(args.observed)
        return p, raw, "cli"
    data_ref = args.data
    if data_ref is None and cfg is not None and cfg.observed is not None:
        if "pmps" in cfg.observed:
            p, raw = parse_observed(cfg.observed["pmps"])
            return p, raw, "config"
        data_ref = cfg.observed["data"]
        base = _config_base(args)
    if data_ref is None:
        raise UsageError("observed PMPs are required (--observed a,b,c or --data FILE)")
    if cfg is None:
        raise UsageError("--data needs a configuration to score the data under each model")
    ms = cfg.model_set()
    data = load_dataset(resolve_path(data_ref, base), ms.models[0])
    p = compute_pmps(ms, data)
    return p, p.probs.tolist(), data_ref


# -- commands -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    stage_simulate(cfg, out, args.threads)
    return EXIT_OK


def _meta_config(args, cfg) -> MetaModelConfig:
    meta_cfg = cfg.meta_config() if cfg else MetaModelConfig()
    if args.family and not cfg:
        meta_cfg = MetaModelConfig.from_dict({**meta_cfg.to_dict(), "likelihood_family": args.family})
    return meta_cfg


def cmd_fit(args) -> int:
    cfg = _load_config(args, required=False)
    out = _out_dir(args, cfg)
    pmps = Path(args.pmps) if args.pmps else out / "pmps.csv"
    sample = LabeledPmpSample.load(pmps)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    stage_fit(sample, _meta_config(args, cfg), seed, out, args.threads)
    return EXIT_OK


def cmd_mix(args) -> int:
    cfg = _load_config(args, required=False)
    out = _out_dir(args, cfg)
    if args.posteriors:
        paths = [Path(p) for p in args.posteriors]
    elif cfg is not None:
        paths = [out / f"posterior_{m['name']}.json" for m in cfg.models]
    else:
        paths = sorted(out.glob("posterior_*.json"))
    if not paths:
        raise UsageError("no meta-model posteriors given (--posteriors FILE ...)")
    posteriors = [MetaPosterior.load(p) for p in paths]
    observed, raw, source = _observed_from_args(args, cfg, Path.cwd())
    mode = args.mode or (cfg.embedding["mode"] if cfg else "full")
    clusters = args.clusters or (cfg.embedding["clusters"] if cfg else 3)
    resolution = args.resolution or (cfg.grid_resolution if cfg else 200)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    stage_mix(posteriors, observed, raw, source, mode, clusters, resolution, seed, out, args.threads)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    written = [_write_json(out / "config.json", cfg.to_dict())]
    written += stage_simulate(cfg, out, args.threads)
    sample = LabeledPmpSample.load(out / "pmps.csv")
    post_paths = stage_fit(sample, cfg.meta_config(), cfg.seed, out, args.threads)
    written += post_paths
    if cfg.observed is not None or args.observed or args.data:
        observed, raw, source = _observed_from_args(args, cfg, Path.cwd())
        posteriors = [MetaPosterior.load(p) for p in post_paths]
        written += stage_mix(posteriors, observed, raw, source, cfg.embedding["mode"],
                             cfg.embedding["clusters"], cfg.grid_resolution, cfg.seed, out,
                             args.threads)
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "files": {p.name: _sha256(p) for p in written},
    }
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = _load_config(args, required=False)
    out = _out_dir(args, cfg)
    src = load_external_pmps(args.pmps_file)
    if src.labels is None:
        raise UsageError(f"{args.pmps_file}: a true_model column is needed to group PMPs for fitting")
    names = tuple(m["name"] for m in cfg.models) if cfg else ()
    sample = LabeledPmpSample(src.pmps, src.labels, None, None, names)
    sample.save(out / "pmps.csv")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="pipeline configuration (JSON)")
        p.add_argument("--preset", help="built-in configuration: minimal, experiment1, experiment2")
    p.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads; results do not depend on this")
    p.add_argument("--out", help="output directory")


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaunc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate labeled PMPs for the configured model set")
    _common(p)
    p.add_argument("--K", type=int, help="number of simulated data sets")
    p.add_argument("--N", type=int, help="observations per data set")
    p.add_argument("--stratified", action="store_true", help="cycle true models instead of sampling them")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one meta-model per true-model group")
    _common(p)
    p.add_argument("--pmps", help="labeled PMP CSV (default: OUT/pmps.csv)")
    p.add_argument("--family", choices=["logistic_normal", "dirichlet"])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mix", help="build the predictive mixture for observed PMPs")
    _common(p)
    p.add_argument("--posteriors", nargs="+", help="posterior JSON files in model order")
    p.add_argument("--observed", help="observed PMPs, e.g. 0.05,0.91,0.03")
    p.add_argument("--data", help="observed data file; PMPs are computed under the configured models")
    p.add_argument("--mode", choices=["full", "embedded"])
    p.add_argument("--clusters", type=_positive, help="clusters per component in embedded mode")
    p.add_argument("--resolution", type=_positive, help="density grid resolution")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("pipeline", help="simulate, fit and mix in one run, with a manifest")
    _common(p)
    p.add_argument("--K", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--family", choices=["logistic_normal", "dirichlet"])
    p.add_argument("--observed")
    p.add_argument("--data")
    p.add_argument("--mode", choices=["full", "embedded"])
    p.add_argument("--clusters", type=_positive)
    p.add_argument("--resolution", type=_positive)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("ingest", help="convert an external PMP file into a labeled sample")
    _common(p)
    p.add_argument("pmps_file", help="CSV with pi_1..pi_J and a true_model column")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"metaunc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EngineError, MetaModelError, MixtureError, ModelError, OSError, ValueError) as exc:
        print(f"metaunc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
