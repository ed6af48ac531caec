import json

import pytest
import yaml
from pydantic import ValidationError

from conftest import shrunken_config
from srdlab import cli
from srdlab.config import BUNDLED, load_config, load_raw, parse_config
from srdlab.errors import ConfigurationError


def test_bundled_configs_load():
    for name in BUNDLED:
        cfg = load_config(name)
        assert cfg.name == name
        assert cfg.build_model().grid.n_modes == 64
    p2 = load_config("allen-cahn-p2")
    assert p2.build_scheme().dt == 1e-4
    assert p2.build_model().lam == pytest.approx(8.8696044, rel=1e-6)
    assert load_config("allen-cahn-p4").build_model().lam == pytest.approx(-1.0)


def test_unknown_keys_rejected():
    raw = load_raw("linear-ou")
    raw["model"]["noise"]["colour"] = "red"
    with pytest.raises(ValidationError, match="colour"):
        parse_config(raw)


def test_theta_half_rejected_with_reason():
    raw = load_raw("linear-ou")
    raw["model"]["noise"]["theta_noise"] = 0.5
    with pytest.raises(ValidationError, match="theta < 1/2"):
        parse_config(raw)


def test_beta0_constraint_rejected():
    raw = load_raw("linear-ou")
    raw["experiments"]["noise-diag"]["beta0"] = 0.5
    with pytest.raises(ValidationError, match="beta0"):
        parse_config(raw)


def test_non_dividing_step_rejected():
    raw = load_raw("allen-cahn-p2")
    raw["experiments"]["couple"]["T"] = 0.50005
    with pytest.raises(ValidationError, match="experiments.couple.T"):
        parse_config(raw)


def test_bad_drift_constants_reported_with_path():
    raw = load_raw("allen-cahn-p2")
    raw["model"]["drift"]["theta_diss"] = 0.4
    with pytest.raises(ConfigurationError, match="^model.drift"):
        parse_config(raw)


def test_hash_ignores_workers_and_tracks_physics():
    raw = load_raw("linear-ou")
    a = parse_config(raw, n_workers=1).config_hash()
    b = parse_config(raw, n_workers=4).config_hash()
    c = parse_config(raw, seed=8).config_hash()
    assert a == b != c


def test_mode_index_checked():
    cfg = load_config("linear-ou")
    with pytest.raises(ConfigurationError):
        cfg.field({65: 1.0})
    assert cfg.field({2: 3.0}).coeffs[1] == 3.0
    with pytest.raises(ConfigurationError):
        cfg.experiment("nothing")


def test_cli_exit_codes(tmp_path, capsys):
    bad = load_raw("linear-ou")
    bad["model"]["noise"]["theta_noise"] = 0.7
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "theta" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert cli.main(["replay", str(junk)]) == cli.EXIT_UNREPLAYABLE


def test_run_writes_outputs_and_replays(tmp_path, capsys):
    raw = shrunken_config("linear-ou")
    path = tmp_path / "ou.yaml"
    path.write_text(yaml.safe_dump(raw))
    out = tmp_path / "run"
    code = cli.main(["simulate", "--config", str(path), "--out", str(out)])
    assert code == cli.EXIT_OK
    doc = json.loads((out / "results.json").read_text())
    assert doc["status"] == "ok" and doc["meta"]["seed"] == 7
    rec = doc["records"][0]
    assert {"quantity", "config_hash", "seed", "version", "wall_clock_s", "timestamp"} <= set(rec)
    assert (out / "summary.txt").exists()
    assert not list(tmp_path.glob(".run.tmp-*"))
    assert cli.main(["replay", str(out / "results.json")]) == cli.EXIT_OK
    assert "match" in capsys.readouterr().out


def test_replay_detects_tampering(tmp_path):
    code, doc, out = cli.run(shrunken_config("linear-ou"), "noise-diag", tmp_path / "nd")
    assert code == cli.EXIT_OK
    doc["records"][0]["passed"] = not doc["records"][0].get("passed", True)
    (out / "results.json").write_text(json.dumps(doc))
    ok, diffs = cli.replay(out / "results.json")
    assert not ok and diffs


def test_default_output_location(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path))
    _, _, out = cli.run(shrunken_config("allen-cahn-p2"), "validate-drift")
    assert out == tmp_path / "allen-cahn-p2-validate-drift"
    assert (out / "results.json").exists()


def test_seed_override_recorded(tmp_path):
    _, doc, _ = cli.run(shrunken_config("linear-ou"), "validate-drift", tmp_path / "v", seed=99)
    assert doc["meta"]["seed"] == 99 and doc["meta"]["config"]["seed"] == 99
