import hashlib
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from metaunc.cli import main, parse_observed, UsageError
from metaunc.config import ConfigError, PRESETS, PipelineConfig, preset
from metaunc.engine import LabeledPmpSample

SHORT_META = {"n_warmup": 300, "n_draws": 400, "n_chains": 2}

POSTERIOR_SCHEMA = {
    "type": "object",
    "required": ["family", "J", "draws", "diagnostics", "config", "seed"],
    "properties": {
        "family": {"enum": ["logistic_normal", "dirichlet"]},
        "draws": {"type": "array", "minItems": 1, "items": {"type": "array"}},
        "diagnostics": {
            "type": "object",
            "required": ["rhat", "ess", "max_rhat", "min_ess", "accept_rate", "degenerate"],
        },
    },
}


def beta_config(**over):
    d = {
        "models": [{"name": "A", "family": "beta_bernoulli", "alpha": 1, "beta": 2},
                   {"name": "B", "family": "beta_bernoulli", "alpha": 2, "beta": 1}],
        "K": 60, "N": 30, "seed": 3, "meta_model": dict(SHORT_META),
    }
    d.update(over)
    return d


def three_config(**over):
    d = {
        "models": [{"name": f"M{j}", "family": "beta_bernoulli", "alpha": a, "beta": b}
                   for j, (a, b) in enumerate([(1, 4), (2, 2), (4, 1)], start=1)],
        "K": 90, "N": 20, "seed": 1, "meta_model": dict(SHORT_META), "grid_resolution": 40,
    }
    d.update(over)
    return d


@pytest.fixture
def write_cfg(tmp_path):
    def write(d, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(d))
        return str(path)
    return write


def test_simulate_rows(tmp_path):
    assert main(["simulate", "--preset", "minimal", "--K", "100", "--out", str(tmp_path), "--threads", "1"]) == 0
    sample = LabeledPmpSample.load(tmp_path / "pmps.csv")
    assert sample.K == 100 and sample.J == 2
    side = json.loads((tmp_path / "pmps.json").read_text())
    assert side["K"] == 100 and side["N"] == 50 and side["models"] == ["M1", "M2"]


def test_simulate_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--preset", "minimal", "--K", "50", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a/pmps.csv").read_bytes() == (tmp_path / "b/pmps.csv").read_bytes()


def test_seed_changes_output(tmp_path):
    main(["simulate", "--preset", "minimal", "--K", "30", "--out", str(tmp_path / "a")])
    main(["simulate", "--preset", "minimal", "--K", "30", "--seed", "8", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/pmps.csv").read_bytes() != (tmp_path / "b/pmps.csv").read_bytes()


def test_zero_K_is_config_error(tmp_path, capsys):
    assert main(["simulate", "--preset", "minimal", "--K", "0", "--out", str(tmp_path)]) == 2
    assert "K" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 2


def test_stratified_forwarded(tmp_path, write_cfg):
    cfg = write_cfg(beta_config(K=10))
    assert main(["simulate", "--config", cfg, "--stratified", "--out", str(tmp_path)]) == 0
    sample = LabeledPmpSample.load(tmp_path / "pmps.csv")
    assert sample.stratified
    np.testing.assert_array_equal(sample.labels, [1, 2] * 5)


def test_fit_writes_posteriors(tmp_path, write_cfg):
    cfg = write_cfg(beta_config())
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 0
    for name in ("A", "B"):
        doc = json.loads((tmp_path / f"posterior_{name}.json").read_text())
        jsonschema.validate(doc, POSTERIOR_SCHEMA)
        assert doc["family"] == "logistic_normal" and doc["J"] == 2


def test_fit_family_flag(tmp_path, write_cfg):
    cfg = write_cfg(beta_config())
    main(["simulate", "--config", cfg, "--out", str(tmp_path)])
    assert main(["fit", "--config", cfg, "--family", "dirichlet", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "posterior_A.json").read_text())["family"] == "dirichlet"


def test_empty_group_names_model(tmp_path, write_cfg, capsys):
    cfg = write_cfg(beta_config(K=20, model_prior=[1.0, 0.0]))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["fit", "--config", cfg, "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "B" in err and "metaunc: error:" in err


def test_mix_observed_rounded(tmp_path, write_cfg):
    cfg = write_cfg(three_config())
    out = str(tmp_path)
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert main(["fit", "--config", cfg, "--out", out]) == 0
    assert main(["mix", "--config", cfg, "--observed", "0.05,0.91,0.03", "--out", out]) == 0
    doc = json.loads((tmp_path / "mixture.json").read_text())
    assert doc["observed_input"] == [0.05, 0.91, 0.03]
    np.testing.assert_allclose(doc["weights"], np.array([0.05, 0.91, 0.03]) / 0.99, rtol=1e-14)
    assert doc["grid_resolution"] == 40 and doc["grid_integral"] > 0
    rows = (tmp_path / "grid.csv").read_text().splitlines()
    assert rows[0] == "p1,p2,p3,log_density" and len(rows) == 1 + 41 * 42 // 2


def test_mix_rejects_non_simplex(tmp_path, write_cfg, capsys):
    cfg = write_cfg(three_config())
    out = str(tmp_path)
    main(["simulate", "--config", cfg, "--out", out])
    main(["fit", "--config", cfg, "--out", out])
    assert main(["mix", "--config", cfg, "--observed", "0.5,0.6,0.1", "--out", out]) == 2
    assert "sum" in capsys.readouterr().err
    assert main(["mix", "--config", cfg, "--observed", "a,b,c", "--out", out]) == 2


def test_mix_from_data(tmp_path, write_cfg):
    data = tmp_path / "obs.csv"
    data.write_text("y\n" + "\n".join(["1"] * 25 + ["0"] * 5) + "\n")
    cfg = write_cfg(beta_config())
    out = str(tmp_path)
    main(["simulate", "--config", cfg, "--out", out])
    main(["fit", "--config", cfg, "--out", out])
    assert main(["mix", "--config", cfg, "--data", str(data), "--out", out]) == 0
    doc = json.loads((tmp_path / "mixture.json").read_text())
    assert doc["observed_source"] == str(data)
    assert doc["weights"][1] > doc["weights"][0]
    assert doc["grid_integral"] is None


def test_parse_observed_tolerance():
    p, raw = parse_observed("0.333,0.333,0.333")
    assert raw == [0.333] * 3 and p.probs.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(UsageError):
        parse_observed("0.3,0.3,0.2")
    with pytest.raises(UsageError):
        parse_observed("1")


def test_pipeline_manifest(tmp_path, write_cfg):
    cfg = write_cfg(three_config(observed={"pmps": [0.2, 0.3, 0.5]}, embedding={"mode": "embedded", "clusters": 2}))
    assert main(["pipeline", "--config", cfg, "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1
    assert {"config.json", "pmps.csv", "posterior_M1.json", "mixture.json", "grid.csv"} <= set(manifest["files"])
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    mix = json.loads((tmp_path / "mixture.json").read_text())
    assert mix["mode"] == "embedded" and mix["clusters"] == 2
    saved = PipelineConfig.load(tmp_path / "config.json")
    assert saved == PipelineConfig.load(cfg) or saved.to_dict() == PipelineConfig.load(cfg).to_dict()


def test_ingest_requires_labels(tmp_path, capsys):
    f = tmp_path / "p.csv"
    f.write_text("pi_1,pi_2\n0.4,0.6\n0.5,0.5\n")
    assert main(["ingest", str(f), "--out", str(tmp_path)]) == 2
    f.write_text("pi_1,pi_2,true_model\n0.4,0.6,2\n0.5,0.5,1\n")
    assert main(["ingest", str(f), "--out", str(tmp_path)]) == 0
    np.testing.assert_array_equal(LabeledPmpSample.load(tmp_path / "pmps.csv").labels, [2, 1])
    f.write_text("pi_1,pi_2,true_model\n0.4,0.7,2\n")
    assert main(["ingest", str(f), "--out", str(tmp_path)]) == 3
    assert "row 1" in capsys.readouterr().err


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "metaunc.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout


class TestConfig:
    def test_round_trip(self):
        for name in PRESETS:
            cfg = preset(name)
            assert PipelineConfig.loads(cfg.dumps()).to_dict() == cfg.to_dict()

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown"):
            PipelineConfig.from_dict({**beta_config(), "colour": "red"})
        bad = beta_config()
        bad["models"][0]["gamma"] = 3
        with pytest.raises(ConfigError, match="unknown"):
            PipelineConfig.from_dict(bad)
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(beta_config(meta_model={"n_warmup": 10, "shrink": 1}))

    def test_required_and_ranges(self):
        d = beta_config()
        del d["K"]
        with pytest.raises(ConfigError, match="missing"):
            PipelineConfig.from_dict(d)
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(beta_config(N=0))
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(beta_config(schema_version=2))
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(beta_config(embedding={"mode": "partial"}))
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(beta_config(observed={"pmps": [0.2, 0.3, 0.5]}))

    def test_bad_json(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
        (tmp_path / "x.json").write_text("{not json")
        assert main(["simulate", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == 2

    def test_presets_build(self):
        assert preset("experiment1").model_set().J == 3
        assert preset("experiment2").model_set().J == 3
        with pytest.raises(ConfigError):
            preset("nonexistent")
