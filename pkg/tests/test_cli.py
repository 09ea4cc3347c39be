import json

import pytest

from skeletonwalk import cli
from skeletonwalk.config import ConfigError, parse_config
from skeletonwalk.runner import CSV_SCHEMAS, run

BASE = "master_seed = 3\nlevels = 2\nT = 1.0\nn_paths = 100\n"


def test_empty_config_lists_required():
    with pytest.raises(ConfigError) as info:
        parse_config("")
    for key in ("master_seed", "levels", "T", "n_paths"):
        assert key in str(info.value)


def test_levels_list():
    assert parse_config("master_seed=1\nlevels=2,3,4\nT=1\nn_paths=5").levels == [2, 3, 4]


@pytest.mark.parametrize("line,field", [
    ("T = -1", "T"), ("n_paths = 0", "n_paths"), ("levels = 2,-1", "levels"),
    ("bins = x", "bins"), ("functional = nope", "functional"), ("n_paths = 2.5", "n_paths"),
    ("antithetic = maybe", "antithetic"), ("colour = red", "colour"),
])
def test_field_level_errors(line, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(BASE + line + "\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="n_paths"):
        parse_config(BASE + "n_paths = 5\n")


def test_defaults_and_sections():
    cfg = parse_config(BASE + "# comment\n[covariation]\nlevels = 2,3  ; inline\nbins = 12\n")
    assert (cfg.z_threshold, cfg.bins, cfg.dt) == (4.0, 10, 1e-5)
    sub = cfg.for_subcommand("covariation")
    assert sub.levels == [2, 3] and sub.bins == 12
    assert cfg.for_subcommand("simulate") is cfg
    with pytest.raises(ConfigError, match="section"):
        parse_config(BASE + "[bogus]\nbins = 3\n")
    with pytest.raises(ConfigError, match="globally"):
        parse_config(BASE + "[simulate]\nmaster_seed = 4\n")
    with pytest.raises(ConfigError, match="bins"):
        parse_config(BASE + "[simulate]\nbins = 2\n")


def test_overrides_win_over_sections():
    cfg = parse_config(BASE + "[simulate]\nlevels = 4\n", {"levels": "3"})
    assert cfg.for_subcommand("simulate").levels == [3]


def test_hash_ignores_output_location():
    a = parse_config(BASE + "output_dir = a\n")
    b = parse_config(BASE + "output_dir = b\nworkers = 2\n")
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != parse_config(BASE.replace("3", "4", 1)).content_hash()


def test_run_simulate_writes_outputs(tmp_path):
    cfg = parse_config(BASE + "n_dump = 2\n")
    res = run("simulate", cfg, tmp_path)
    assert res.status == 0
    names = set(res.files)
    assert {"simulate_levels.csv", "skeleton_k2_p0.csv", "projected_k2_p1.csv",
            "summary.json", "manifest.json"} <= names
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["master_seed"] == 3
    assert set(manifest["file_hashes"]) == names - {"manifest.json"}
    assert manifest["csv_schemas"]["skeleton.csv"] == list(CSV_SCHEMAS["skeleton.csv"])
    header = (tmp_path / "simulate_levels.csv").read_text().splitlines()[0]
    assert header.split(",") == list(CSV_SCHEMAS["simulate_levels.csv"])


def test_cli_martingale_identity_status_zero(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("master_seed = 1\nlevels = 3\nT = 1\nn_paths = 10000\n")
    assert cli.main(["martingale-test", "--config", str(cfg), "--output-dir",
                     str(tmp_path / "o")]) == 0
    assert "PASS [theorem] martingale-test/identity/k=3" in capsys.readouterr().out


def test_cli_counterexample(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("master_seed = 1\nlevels = 2\nT = 1\nn_paths = 6400\n")
    out = tmp_path / "o"
    assert cli.main(["counterexample", "--config", str(cfg), "--output_dir", str(out),
                     "--quiet"]) == 0
    summ = json.loads((out / "summary.json").read_text())
    slope = summ["experiments"]["counterexample"]["k=2"]["slope"]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_cli_failure_status_one(tmp_path):
    # a 0.1-sigma threshold rejects a true martingale: the check machinery reports it
    cfg = tmp_path / "c.ini"
    cfg.write_text("master_seed = 3\nlevels = 2\nT = 1\nn_paths = 2000\nz_threshold = 0.1\n")
    assert cli.main(["martingale-test", "--config", str(cfg), "--output_dir",
                     str(tmp_path / "o"), "--quiet"]) == 1


def test_cli_invalid_config_status_two(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(BASE + "functional = nope\n")
    assert cli.main(["simulate", "--config", str(cfg)]) == 2
    assert "functional" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["jump-bound", "--config", str(tmp_path / "c.ini"),
                     "--functional", "identity", "--dt", "0.01"]) == 2
    assert cli.main(["derivative-rates", "--config", str(tmp_path / "c.ini"),
                     "--functional", "nested_call"]) == 2


def test_env_output_dir_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text(BASE + f"output_dir = {tmp_path / 'from_config'}\nn_dump = 0\n")
    monkeypatch.setenv("SKELETONWALK_OUTPUT_DIR", str(tmp_path / "from_env"))
    assert cli.main(["simulate", "--config", str(cfg), "--quiet"]) == 0
    assert (tmp_path / "from_env" / "manifest.json").exists()
    assert not (tmp_path / "from_config").exists()
    assert cli.main(["simulate", "--config", str(cfg), "--quiet",
                     "--output_dir", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "manifest.json").exists()
