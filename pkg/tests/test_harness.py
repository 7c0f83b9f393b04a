import json
import os

import pandas
import pytest

from app import cli
from app.harness import runner
from app.harness.config_parser import ConfigParser, ConfigValidationError
from app.harness.persistence import MANIFEST_NAME, RunManifest, RunWriter, load_manifest, verify_manifest

TABULATE = "kind = tabulate-coefficients\n[dims]\nmin = 3\nmax = 9\n"

SMALL_EVOLVE = """kind = evolve
ell = 1
degree = 0
T = 1

[grid]
rmax = 10
npoints = 451

[perturbation]
amplitude = 0.2
center = 3
width = 1

[probes]
radii = 3
cadence = 0.5
"""


def violations_of(text, overrides=None, output_root=None):
    with pytest.raises(ConfigValidationError) as info:
        ConfigParser.parse_config(text, overrides, output_root=output_root)
    return info.value


def test_minimal_shoot_config():
    config = ConfigParser.parse_config("kind = shoot\nell = 2\n")
    assert config.kind == "shoot"
    assert config.seed == 12345
    assert config.get("ell") == 2
    assert config.get("n") == 1
    assert config.params["s_max"] == 40.0
    assert config.output_dir is None


def test_sections_prefix_keys():
    config = ConfigParser.parse_config(
        "[experiment]\nkind = evolve\n[grid]\nrmax = 80 # wider\nnpoints = 4001\n[probes]\nradii = 5, 10\n"
    )
    assert config.grid().r_max == 80.0
    assert config.grid().npoints == 4001
    assert config.probes().radii == (5.0, 10.0)


def test_ell_out_of_range():
    error = violations_of("kind = shoot\nell = 0\n")
    assert error.violations == [(2, "ell", "ell must be ≥ 1, got 0")]
    assert "line 2: ell: ell must be ≥ 1, got 0" in str(error)


def test_cfl_above_stability_limit():
    error = violations_of("kind = evolve\ncfl = 1.5\n")
    [(line, key, message)] = error.violations
    assert (line, key) == (2, "cfl")
    assert "cfl must be ≤ 0.8, got 1.5" in message
    assert "stable" in message


def test_unknown_key_reports_its_line():
    error = violations_of("kind = shoot\n\n# a comment\nfoo = 3\n")
    assert error.violations == [(4, "foo", "unknown key")]


def test_every_violation_is_reported():
    error = violations_of("kind = shoot\nell = 0\nn = -1\nbogus = 1\nT = 3\nell = 2\n")
    keys = sorted(key for _, key, _ in error.violations)
    assert keys == ["T", "bogus", "ell", "ell", "n"]
    messages = " ".join(message for _, _, message in error.violations)
    assert "duplicate key" in messages
    assert "does not apply" in messages


def test_unreadable_value():
    error = violations_of("kind = shoot\nell = one\n")
    assert error.violations[0][:2] == (2, "ell")
    assert "cannot read" in error.violations[0][2]


def test_missing_and_unknown_kind():
    assert violations_of("ell = 1\n").violations == [(None, "kind", "missing experiment kind")]
    assert violations_of("kind = bake\n").violations[0][:2] == (1, "kind")


def test_overrides_win_over_file():
    config = ConfigParser.parse_config("kind = shoot\nell = 1\n", ["ell=3", "n = 2"])
    assert config.get("ell") == 3 and config.get("n") == 2
    error = violations_of("kind = shoot\n", ["ell"])
    assert error.violations[0][0] is None


def test_cross_checks():
    error = violations_of("kind = evolve\nT = 100\n")
    assert [key for _, key, _ in error.violations] == ["grid.rmax"]
    error = violations_of("kind = evolve\n[perturbation]\ncenter = 1.5\n")
    assert [key for _, key, _ in error.violations] == ["perturbation.center"]
    error = violations_of("kind = channels\ndim = 4\nT = 0\n")
    assert sorted(key for _, key, _ in error.violations) == ["T", "dim"]
    error = violations_of("kind = tabulate-coefficients\n[dims]\nmin = 9\nmax = 5\n")
    assert error.violations[0][1] == "dims.max"


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("not a directory")
    error = violations_of(f"kind = shoot\noutput.dir = {blocker / 'run'}\n")
    assert error.violations[0][1] == "output.dir"
    assert "not writable" in error.violations[0][2]


def test_hash_ignores_output_dir(tmp_path):
    a = ConfigParser.parse_config("kind = shoot\noutput.dir = a\n", output_root=str(tmp_path))
    b = ConfigParser.parse_config("kind = shoot\noutput.dir = b\n", output_root=str(tmp_path))
    c = ConfigParser.parse_config("kind = shoot\nell = 2\n")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_text_roundtrip(tmp_path):
    config = ConfigParser.parse_config(SMALL_EVOLVE, ["output.dir=here"], output_root=str(tmp_path))
    again = ConfigParser.parse_config(config.to_text(), output_root=str(tmp_path))
    assert again.params == config.params
    assert again.output_dir == "here"
    assert again.config_hash() == config.config_hash()


def test_from_values_validates():
    config = ConfigParser.from_values("shoot", {"ell": 2, "n": 1})
    assert config.get("ell") == 2
    with pytest.raises(ConfigValidationError):
        ConfigParser.from_values("shoot", {"ell": 0})


def test_tabulate_run_writes_manifest_last(tmp_path):
    config = ConfigParser.parse_config(TABULATE)
    manifest = runner.run(config, output_root=str(tmp_path))
    directory = tmp_path / manifest.run_id
    assert manifest.run_id == f"tabulate-coefficients-{config.config_hash()[:12]}"
    assert sorted(f.path for f in manifest.files) == ["coefficients.csv", "config.cfg"]
    assert (directory / MANIFEST_NAME).exists()
    assert load_manifest(str(directory)) == manifest
    assert verify_manifest(str(directory)) == []
    assert not [name for name in os.listdir(directory) if name.startswith(".tmp-")]

    table = pandas.read_csv(directory / "coefficients.csv")
    c7 = table[(table.d == 7) & (table.family == "c")]
    assert c7[["index", "numerator", "denominator"]].values.tolist() == [[1, 3, 1]]

    (directory / "coefficients.csv").write_text("tampered\n")
    assert verify_manifest(str(directory)) == ["coefficients.csv"]


def test_repeated_runs_have_identical_checksums(tmp_path):
    config = ConfigParser.parse_config(TABULATE)
    first = runner.run(config, output_root=str(tmp_path / "one"))
    second = runner.run(config, output_root=str(tmp_path / "two"))
    assert [(f.path, f.sha256) for f in first.files] == [(f.path, f.sha256) for f in second.files]


def test_failed_run_leaves_nothing(tmp_path, monkeypatch):
    def failing(config, writer):
        writer.write_bytes("partial.csv", b"a,b\n")
        raise RuntimeError("solver blew up")

    monkeypatch.setitem(runner.KIND_HANDLERS, "tabulate-coefficients", failing)
    config = ConfigParser.parse_config(TABULATE)
    with pytest.raises(RuntimeError, match="solver blew up"):
        runner.run(config, output_root=str(tmp_path))
    assert not (tmp_path / runner.run_directory(config, str(tmp_path))).exists()


def test_writer_refuses_escaping_names(tmp_path):
    writer = RunWriter(str(tmp_path / "run"))
    with pytest.raises(ValueError):
        writer.write_bytes("../outside.txt", b"x")


def test_shoot_run(tmp_path, monkeypatch, profile_l1_n1):
    monkeypatch.setattr(runner, "shoot", lambda ell, n, s_max=40.0: profile_l1_n1)
    config = ConfigParser.parse_config("kind = shoot\nell = 1\nn = 1\noutput.dir = shot\n", output_root=str(tmp_path))
    manifest = runner.run(config, output_root=str(tmp_path))
    assert manifest.run_id == "shot"
    summary = json.loads((tmp_path / "shot" / "profile.json").read_text())
    assert summary["alpha0"] == profile_l1_n1.alpha0
    assert summary["energy"] > 0
    table = pandas.read_csv(tmp_path / "shot" / "profile.csv")
    assert list(table.columns) == ["r", "Q", "dQdr"]


def test_evolve_run(tmp_path):
    config = ConfigParser.parse_config(SMALL_EVOLVE)
    manifest = runner.run(config, output_root=str(tmp_path))
    paths = {f.path for f in manifest.files}
    assert {
        "config.cfg", "ledger.csv", "channels.csv", "scattering.csv", "projection.csv", "summary.json",
        "checkpoints/checkpoint_0000.bin",
    } <= paths
    summary = json.loads((tmp_path / manifest.run_id / "summary.json").read_text())
    assert summary["degree_conserved"] is True
    assert summary["final_time"] == pytest.approx(1.0)
    assert summary["core_initial"] > 0
    assert summary["energy_drift"] <= 1e-5


CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def test_shipped_evolve_config_with_off_node_radius(tmp_path):
    with open(os.path.join(CONFIGS, "evolve_l2_n1.cfg")) as handle:
        config = ConfigParser.parse_config(handle.read(), ["T=1.5"], output_root=str(tmp_path))
    manifest = runner.run(config, output_root=str(tmp_path))
    directory = tmp_path / manifest.run_id
    assert verify_manifest(str(directory)) == []
    projection = pandas.read_csv(directory / "projection.csv")
    assert set(projection.R) == {5.0}
    assert len(projection.time.unique()) == 4
    summary = json.loads((directory / "summary.json").read_text())
    assert summary["ell"] == 2 and summary["n"] == 1
    assert summary["degree_conserved"] is True
    assert summary["final_time"] == pytest.approx(1.5)


def test_sweep_cells_are_deduplicated():
    config = ConfigParser.parse_config("kind = sweep\n[sweep]\nell = 1, 1\ndegree = 0\namplitude = 0.3, 0.3\n")
    cells = runner.sweep_cells(config)
    assert len(cells) == 1
    assert cells[0].kind == "evolve"
    assert cells[0].output_dir == f"cell-{cells[0].config_hash()[:12]}"
    assert len(runner.sweep_cells(ConfigParser.parse_config("kind = sweep\n"))) == 4


def test_sweep_isolates_failing_cells(tmp_path, monkeypatch):
    def fake_run(cell, output_root=None):
        if cell.get("ell") == 2:
            raise RuntimeError("no profile")
        directory = os.path.join(output_root, cell.output_dir)
        os.makedirs(directory)
        summary = {"core_initial": 1.0, "core_final": 0.1, "core_decay": 0.1, "energy_drift": 0.0, "degree_conserved": True}
        with open(os.path.join(directory, "summary.json"), "w") as handle:
            json.dump(summary, handle)
        return RunManifest(run_id=cell.output_dir, kind="evolve", config_hash=cell.config_hash(), tool_version="0",
                           started_at="", finished_at="", config="", files=[])

    monkeypatch.setattr(runner, "run", fake_run)
    config = ConfigParser.parse_config("kind = sweep\n[sweep]\nworkers = 1\n")
    writer = RunWriter(str(tmp_path / "sweep"))
    assert runner._sweep(config, writer) == {"cells": 4, "failed": 2}
    frame = pandas.read_csv(tmp_path / "sweep" / "sweep.csv")
    assert sorted(frame.status) == ["failed", "failed", "ok", "ok"]
    assert set(frame[frame.status == "failed"].ell) == {2}


def test_sweep_needs_sweep_config():
    with pytest.raises(ValueError):
        runner.sweep(ConfigParser.parse_config(TABULATE))


def test_cli_rejects_invalid_config(capsys):
    assert cli.main(["shoot", "--set", "ell=0"]) == cli.EXIT_INVALID
    assert "ell must be ≥ 1, got 0" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert cli.main(["shoot", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_INVALID


def test_cli_runs_and_prints_manifest(tmp_path, capsys):
    config_file = tmp_path / "coefficients.cfg"
    config_file.write_text(TABULATE)
    code = cli.main(["tabulate-coefficients", "--config", str(config_file), "--output-root", str(tmp_path / "out")])
    assert code == cli.EXIT_OK
    manifest = RunManifest.model_validate_json(capsys.readouterr().out)
    assert (tmp_path / "out" / manifest.run_id / MANIFEST_NAME).exists()


def test_cli_uses_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EWM_OUTPUT_ROOT", str(tmp_path))
    assert cli.main(["tabulate-coefficients", "--set", "dims.max=5"]) == cli.EXIT_OK
    assert len(os.listdir(tmp_path)) == 1


def test_cli_reports_runtime_failure(tmp_path, monkeypatch):
    def broken(config, output_root=None):
        raise RuntimeError("integrator failed")

    monkeypatch.setattr(cli, "run", broken)
    assert cli.main(["tabulate-coefficients", "--output-root", str(tmp_path)]) == cli.EXIT_FAILED
