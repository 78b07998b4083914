import copy
import json
from pathlib import Path

import pytest

from mesoreduce.cli import main
from mesoreduce.errors import ConfigError
from mesoreduce.runner import OUT_ENV, csv_text, resolve_out_dir, run, verify_manifest, write_outputs
from mesoreduce.scenario import bundled_scenarios, load_scenario, parse_scenario, validate

SCEN = bundled_scenarios()
GOLDEN = Path(__file__).parent / "golden" / "chain_level1.txt"


def raw(name):
    return json.loads((SCEN / f"{name}.json").read_text())


def write(tmp_path, data, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def test_bundled_chain_scenario_loads():
    cfg = load_scenario(SCEN / "eq31_invariance.json")
    assert cfg.engine == "reduce-only"
    assert len(cfg.partitions) == 5


def test_every_bundled_scenario_validates():
    for path in sorted(SCEN.glob("*.json")):
        assert load_scenario(path).name == path.stem


def test_empty_file_reports_byte_offset(tmp_path):
    path = tmp_path / "empty.json"
    path.write_bytes(b"")
    with pytest.raises(ConfigError, match="parse error at byte 0"):
        load_scenario(path)


def test_syntax_error_offset_counts_bytes():
    with pytest.raises(ConfigError, match="byte 9"):
        parse_scenario('{"name": é}'.encode())


def test_negative_gamma_names_the_field():
    data = raw("quantum_dephasing")
    data["operator"]["decoherence"][0][0] = -0.5
    with pytest.raises(ConfigError) as info:
        validate(data)
    assert any(v.startswith("operator/decoherence/0/0") for v in info.value.violations)


def test_all_violations_are_listed():
    data = raw("quantum_dephasing")
    data["hbar"] = -1
    data["grid"]["points"] = 1
    with pytest.raises(ConfigError) as info:
        validate(data)
    paths = {v.split(":")[0] for v in info.value.violations}
    assert {"hbar", "grid/points"} <= paths


def test_inconsistent_partition_chain():
    data = raw("eq31_invariance")
    data["partitions"][1] = [1, 1, 2]
    with pytest.raises(ConfigError, match="inconsistent partition chain"):
        validate(data)


def test_seed_mandatory_for_trajectories():
    data = raw("quantum_unraveling")
    del data["seed"]
    with pytest.raises(ConfigError, match="seed"):
        validate(data)


def test_reduce_prints_golden_text(tmp_path, capsys):
    code = main(["reduce", str(SCEN / "eq31_invariance.json"), "--out", str(tmp_path)])
    assert code == 0
    assert capsys.readouterr().out == GOLDEN.read_text()
    assert (tmp_path / "levels" / "level_1.txt").read_text() == GOLDEN.read_text()


def test_check_reports_depths(tmp_path, capsys):
    assert main(["check", str(SCEN / "eq31_invariance.json"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "pair: 2" in out and "external: 3" in out
    assert main(["check", str(SCEN / "eq31_invariance.json"), "--out", str(tmp_path), "--max-depth", "2"]) == 0
    assert "external: none" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{")
    assert main(["evolve", str(path)]) == 2
    assert "parse error" in capsys.readouterr().err


def test_cfl_violation_exits_3_with_suggestion(tmp_path, capsys):
    code = main(["evolve", str(SCEN / "classical_cfl_violation.json"), "--out", str(tmp_path / "o")])
    assert code == 3
    assert "suggested dt" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_dephasing_run_reports_oracle(tmp_path):
    result = run(load_scenario(SCEN / "quantum_dephasing.json"), "evolve", out=tmp_path)
    assert result.exit_code == 0
    assert result.summary["monitors"]["oracle_deviation"]["value"] <= 1e-8
    names = [f["path"] for f in result.manifest["files"]]
    assert "observables.csv" in names
    assert sum(n.startswith("snapshots/") for n in names) == 2 * 11


def test_invariant_breach_exit_4(tmp_path):
    # stable but coarse step: RK4 error exceeds the oracle monitor limit
    data = raw("quantum_dephasing")
    data["integrator"].update(dt=0.1, steps=10, save_every=5)
    result = run(validate(data), "evolve", out=tmp_path)
    assert result.exit_code == 4
    assert result.summary["breaches"] == ["oracle_deviation"]
    assert json.loads((tmp_path / "summary.json").read_text())["exit_code"] == 4


def test_rerun_is_byte_identical(tmp_path):
    data = raw("quantum_unraveling")
    data["integrator"].update(trajectories=50, steps=40)
    cfg = validate(data)
    a = run(cfg, "evolve", out=tmp_path / "a")
    b = run(cfg, "evolve", out=tmp_path / "b")
    assert a.manifest["files"] == b.manifest["files"]
    c = run(cfg, "evolve", out=tmp_path / "c", seed=7)
    hashes = lambda m: {f["path"]: f["sha256"] for f in m["files"]}
    assert hashes(a.manifest)["unraveling.csv"] != hashes(c.manifest)["unraveling.csv"]


def test_manifest_detects_tampering(tmp_path):
    run(load_scenario(SCEN / "classical_harmonic.json"), "evolve", out=tmp_path)
    assert verify_manifest(tmp_path) == []
    target = next(p for p in tmp_path.glob("*.csv"))
    target.write_text(target.read_text() + "0\n")
    assert verify_manifest(tmp_path) == [target.name]


def test_empty_series_is_header_only(tmp_path):
    manifest = write_outputs({"x.csv": (["t", "value"], [])}, {}, tmp_path)
    assert (tmp_path / "x.csv").read_text() == "t,value\n"
    assert manifest["files"][0]["bytes"] == len("t,value\n")


def test_floats_use_17_significant_digits():
    assert csv_text(["v"], [[0.1]]) == "v\n0.10000000000000001\n"


def test_output_directory_precedence(tmp_path, monkeypatch):
    data = raw("classical_harmonic")
    data["output_dir"] = str(tmp_path / "cfg")
    cfg = validate(data)
    monkeypatch.delenv(OUT_ENV, raising=False)
    assert resolve_out_dir(cfg) == tmp_path / "cfg"
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert resolve_out_dir(cfg) == tmp_path / "env" / cfg.name
    assert resolve_out_dir(cfg, tmp_path / "flag") == tmp_path / "flag"
    plain = copy.deepcopy(data)
    del plain["output_dir"]
    monkeypatch.delenv(OUT_ENV)
    assert resolve_out_dir(validate(plain)) == Path("runs") / cfg.name


def test_env_override_through_cli(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    assert main(["reduce", str(SCEN / "eq31_invariance.json")]) == 0
    assert (tmp_path / "eq31_invariance" / "manifest.json").exists()


def test_compare_subcommand(tmp_path):
    data = raw("compare_harmonic")
    data["grid"]["points"] = 33
    data["integrator"].update(steps=max(1, data["integrator"]["steps"] // 4))
    path = write(tmp_path, data)
    assert main(["compare", str(path), "--out", str(tmp_path / "o")]) == 0
    text = (tmp_path / "o" / "compare.csv").read_text().splitlines()
    assert text[0] == "t,max_abs_diff,rel_diff"
