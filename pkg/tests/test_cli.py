import json
import math

import pytest

from skelstop.cli import (CSV_COLUMNS, OUTPUT_ENV, RunConfig, deterministic_part, emit_config,
                          main, parse_config, parse_config_text, run)
from skelstop.errors import ConfigError


def write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_file_gets_defaults(tmp_path):
    cfg, force = parse_config(["solve", "--config", write(tmp_path, "structure: {kind: constant, value: 2}\npaths: 500\n")])
    assert cfg.paths == 500 and cfg.structure == {"kind": "constant", "value": 2}
    defaults = RunConfig()
    assert (cfg.nodes, cfg.seed, cfg.horizon, cfg.dim) == (defaults.nodes, 0, 1.0, 1)
    assert force is False


def test_flag_overrides_file(tmp_path):
    cfg, _ = parse_config(["solve", "--config", write(tmp_path, "seed: 3\n"), "--seed", "7"])
    assert cfg.seed == 7


def test_negative_paths_names_field(tmp_path, capsys):
    with pytest.raises(ConfigError, match="paths"):
        parse_config(["solve", "--paths", "-3"])
    assert main(["solve", "--paths", "-3", "--output", str(tmp_path)]) == 2
    assert "paths" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path):
    with pytest.raises(ConfigError, match=r"run.yaml:2: unknown key"):
        parse_config(["solve", "--config", write(tmp_path, "seed: 1\nbogus: 2\n")])


def test_malformed_yaml(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(["solve", "--config", write(tmp_path, "seed: [1,\n")])


def test_round_trip():
    cfg = RunConfig(subcommand="converge", epsilon=0.5, paths=123, degree=3, epsilons=[0.5, 0.25],
                    structure={"kind": "constant", "value": 1.5}, itm_only=True)
    assert parse_config_text(emit_config(cfg)) == cfg
    assert parse_config_text(emit_config(RunConfig())) == RunConfig()


def test_plan_row(tmp_path, capsys):
    assert main(["plan", "--e1", "0.45", "--beta", "0.2", "--output", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "2.88" in out and "55" in out
    record = json.loads(next(tmp_path.glob("plan-*.json")).read_text())
    assert record["results"]["k_star"] == pytest.approx(2.88) and record["results"]["periods"] == 55
    header, row = next(tmp_path.glob("plan-*.csv")).read_text().splitlines()
    assert header.split(",") == CSV_COLUMNS and ",55," in row


def test_oracle_two_step_constant(tmp_path):
    cfg, _ = parse_config(["oracle", "--epsilon", str(1 / math.sqrt(2)),
                           "--structure", "{kind: constant, value: 1.25}"])
    record = run(cfg)
    assert record["results"]["oracle_value"] == pytest.approx(1.25, abs=1e-8)
    assert record["rows"][0]["periods"] == 2


def test_converge_two_rows(tmp_path):
    cfg, _ = parse_config(["converge", "--epsilon", str(1 / math.sqrt(3)), "--paths-list", "1000",
                           "10000", "--replications", "4", "--degree", "3", "--seed", "1"])
    record = run(cfg)
    summary = record["results"]["convergence"]
    assert [s["N"] for s in summary] == [1000, 10000]
    assert len(record["rows"]) == 8
    assert summary[1]["mean_abs_error"] < summary[0]["mean_abs_error"]


def test_append_only_and_force(tmp_path, capsys):
    args = ["plan", "--output", str(tmp_path)]
    assert main(args) == 0
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["plan", "--format", "json"]) == 0
    assert len(list((tmp_path / "env").glob("*.json"))) == 1


def test_solve_reproducible_and_traceable(tmp_path):
    args = ["solve", "--epsilon", "0.5", "--paths", "2000", "--fresh-paths", "500", "--degree", "2",
            "--compare-oracle", "--seed", "4"]
    a = run(parse_config(args)[0])
    b = run(parse_config(args + ["--workers", "3"])[0])
    assert deterministic_part(a) == deterministic_part(b)
    row = a["rows"][0]
    assert row["V_hat"] == a["results"]["V_hat"]
    assert row["oracle_value"] == a["results"]["oracle_value"]
    assert row["max_residual"] <= 1e-8


def test_structure_errors_carry_context(capsys, tmp_path):
    assert main(["solve", "--structure", "{kind: nope}", "--output", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("skelstop solve: error:") and "structure" in err


def test_validate_small(tmp_path):
    cfg, _ = parse_config(["validate", "--dim", "2", "--histories", "1", "--draws", "20000"])
    record = run(cfg)
    names = {c["name"] for c in record["results"]["checks"]}
    assert any("chi-square" in n for n in names) and any("mass" in n for n in names)
