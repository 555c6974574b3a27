import pytest

from gridshield.config import ConfigError, load_config, parse_config
from gridshield.detector import ETA_BY_ATTACK

BASE = "seed: 7\n"


def test_minimal_defaults():
    cfg = parse_config(BASE)
    assert cfg.seed == 7 and cfg.samples == 21600 and cfg.case == "ieee14"
    q = cfg.queue()
    assert (q.lam, q.mu, q.poll_interval) == (10.0, 40.0, 4.0)
    assert cfg.ensemble("mdos").eta == ETA_BY_ATTACK["mdos"]
    assert cfg.ensemble("mfdi").eta == 11.0
    assert cfg.plan().folds == 10
    assert cfg.load_case().meas_dim == 68


def test_scenario_seed_per_kind():
    cfg = parse_config(BASE)
    seeds = {k: cfg.scenario_for(k).seed for k in ("mfdi", "mdos", "mitm")}
    assert len(set(seeds.values())) == 3
    assert cfg.scenario_for("mdos").seed == parse_config(BASE).scenario_for("mdos").seed
    assert cfg.with_seed(8).scenario_for("mdos").seed != seeds["mdos"]


@pytest.mark.parametrize(
    "text, needle",
    [
        ("samples: 10\n", "missing required key 'seed'"),
        ("seed: 1\ncolour: red\n", ":2: unknown key 'colour'"),
        ("seed: 1\ndetector:\n  alpha: 0.1\n  gamma: 2\n", ":4: unknown key 'detector.gamma'"),
        ("seed: 1\nsamples: many\n", ":2: 'samples' has the wrong type"),
        ("seed: 1\nseed: 2\n", ":2: duplicate key 'seed'"),
        ("seed: -1\n", "unsigned 64-bit"),
        ("seed: 1\nsamples: 0\n", "samples must be positive"),
        ("seed: 1\nscenario: {kind: ddos}\n", "unknown scenario.kind"),
        ("seed: 1\nsuite: [mfdi, worm]\n", "suite"),
        ("seed: 1\ndetector: {alpha: 2.0}\n", "alpha"),
        ("seed: 1\nnetwork: {lam: 50, mu: 40}\n", "unstable"),
        ("seed: 1\ncase: missing.json\n", "not found"),
        ("seed: 1\nsweep: {betas: [1, 90]}\n", "betas"),
        ("seed: [1\n", "invalid YAML"),
        ("", "empty"),
    ],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle.replace("(", r"\(").replace("[", r"\[")):
        parse_config(text, "exp.yaml")


def test_paths_relative_to_config(tmp_path):
    import json

    from gridshield.gridmodel import bundled_case

    case = bundled_case("tiny3")
    doc = {
        "buses": [{"id": b.id, "type": b.type, "base_load": b.base_load} for b in case.buses],
        "branches": [{"from": b.from_bus, "to": b.to_bus, "x": b.x} for b in case.branches],
        "measurements": [{"kind": m.kind, "loc": list(m.location) if m.kind == "flow" else m.location}
                         for m in case.measurements],
    }
    (tmp_path / "grid").mkdir()
    (tmp_path / "grid" / "c.json").write_text(json.dumps(doc))
    (tmp_path / "p.json").write_text(json.dumps({"shape": [1.0, 1.2]}))
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text("seed: 3\ncase: grid/c.json\nprofile: p.json\nout: res\n")
    cfg = load_config(cfg_path)
    assert cfg.load_case().meas_dim == case.meas_dim
    assert cfg.load_profile().shape.tolist() == [1.0, 1.2]
    assert cfg.out_dir() == tmp_path / "res"
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")


def test_bundled_config_loads():
    from pathlib import Path

    cfg = load_config(Path(__file__).parents[1] / "configs" / "desk14.yaml")
    assert cfg.seed == 20240607 and cfg.suite == ("mfdi", "c_mfdi", "mdos", "mfdi_mdos", "mitm")
    assert cfg.sweep["betas"] == [10, 30, 60, 90, 150, 300]
