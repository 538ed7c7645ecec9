import json
import os

import pytest

from gmartlab.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, atomic_open, main
from gmartlab.config import ALL_CHECKS, DEFAULT_TOLERANCES, RunConfig, from_mapping, load_config
from gmartlab.errors import ConfigError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.enabled_checks() == list(ALL_CHECKS)
    assert cfg.tol("identity") == 1e-9
    echo = cfg.echo()
    assert echo["ladder"] == [1024, 4096, 16384] and "out" not in echo


@pytest.mark.parametrize("patch, word", [
    ({"sigma_low": 1.0, "sigma_high": 0.5}, "band"),
    ({"T": 0}, "T"),
    ({"paths": 0}, "paths"),
    ({"ladder": [4096, 1024]}, "ladder"),
    ({"epsilons": [0.1, 0.2]}, "epsilons"),
    ({"checks": ["nope"]}, "nope"),
    ({"tolerances": {"bogus": 1}}, "bogus"),
    ({"seed": -1}, "seed"),
])
def test_validation_errors(patch, word):
    with pytest.raises(ConfigError, match=word):
        from_mapping(patch).validate()


def test_unknown_key():
    with pytest.raises(ConfigError, match="wat"):
        from_mapping({"wat": 1})


def test_toml_sections_and_tolerances(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 7\n[band]\nsigma_low = 0.4\n[tolerances]\npde = 0.02\n[verify]\nladder = [8, 16]\n')
    cfg = load_config(p)
    assert (cfg.seed, cfg.sigma_low, cfg.ladder) == (7, 0.4, (8, 16))
    assert cfg.tol("pde") == 0.02 and cfg.tol("abs") == DEFAULT_TOLERANCES["abs"]
    p.write_text("seed = [")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_atomic_open_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "r.json"
    with pytest.raises(RuntimeError):
        with atomic_open(str(target)) as fh:
            fh.write("partial")
            raise RuntimeError
    assert os.listdir(tmp_path) == []


def test_cli_simulate(tmp_path, capsys):
    rc = main(["simulate", "--steps", "16", "--paths", "50", "--seed", "3", "--out", str(tmp_path)])
    assert rc == EXIT_PASS
    data = json.loads((tmp_path / "simulate.json").read_text())
    assert data["config"]["seed"] == 3 and data["config"]["steps"] == 16
    assert data["per_strategy"]["const(1)"]["qv_T"]["mean"] == pytest.approx(1.0)
    assert "bangbang_up" in json.loads(capsys.readouterr().out)


def test_cli_simulate_dump(tmp_path):
    main(["simulate", "--steps", "4", "--paths", "2", "--dump", "--strategy", "const(0.5)", "--out", str(tmp_path)])
    lines = (tmp_path / "paths_const_0.5.csv").read_text().splitlines()
    assert lines[0].startswith("# config: ") and lines[1] == "path_id,step,t,M,qv_exact,sigma"
    assert len(lines) == 2 + 2 * 5


@pytest.mark.parametrize("argv", [
    ["simulate", "--steps", "16"],
    ["simulate", "--steps", "4", "--paths", "2", "--sigma-low", "1", "--sigma-high", "0.5"],
    ["expectation", "bogus"],
    ["verify", "nope"],
    ["simulate", "--bogus-flag"],
    ["simulate", "--steps", "4", "--paths", "2", "--strategy", "nope"],
])
def test_cli_usage_errors(argv, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv + ["--out", str(tmp_path)])
    assert exc.value.code == EXIT_USAGE


def test_cli_error_messages(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--steps", "4", "--paths", "2", "--sigma-low", "1", "--sigma-high", "0.5"])
    assert "band" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["verify", "nope"])
    assert "tanaka" in capsys.readouterr().err


def test_cli_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("GMARTLAB_OUT", str(tmp_path))
    assert main(["expectation", "call(0.2)", "--steps", "16", "--paths", "200"]) == EXIT_PASS
    d = json.loads((tmp_path / "expectation.json").read_text())
    assert d["payoff"] == "call(0.2)" and d["config"]["paths"] == 200


def test_cli_localtime(tmp_path):
    assert main(["localtime", "--steps", "32", "--paths", "20", "--level-span", "1", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "localtime_const_1.csv").read_text().splitlines()
    assert text[1] == "level,time,mean_tanaka,mean_occupation,se"
    assert "at_zero" in json.loads((tmp_path / "localtime.json").read_text())["per_strategy"]["const(1)"]



def _small_config(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(
        "[verify]\nmain_steps = 64\nmain_paths = 400\nfine_steps = 256\nfine_paths = 400\nsub_paths = 300\n"
        "identity_steps = 64\nidentity_paths = 100\nladder = [64, 128, 256]\nqv_ladder = [16, 32, 64]\n"
    )
    return str(p)


def test_cli_verify_subset_exit_codes(tmp_path, capsys):
    cfg = _small_config(tmp_path)
    rc = main(["verify", "identities", "norm_sandwich", "--config", cfg, "--seed", "7", "--out", str(tmp_path)])
    assert rc == EXIT_PASS
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert [c["name"] for c in rep["checks"]] == ["identities", "norm_sandwich"]
    assert rep["seed"] == 7 and rep["status"] == "pass"
    assert "runtime" not in json.dumps(rep)
    assert (tmp_path / "timings.json").exists()
    # the tanaka cross residual cannot reach 0.02 on a 256-step grid
    assert main(["verify", "tanaka", "--config", cfg, "--out", str(tmp_path)]) == EXIT_FAIL
