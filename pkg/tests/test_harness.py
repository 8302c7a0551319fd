import json

import pytest

from aggrekit.cli import main
from aggrekit.exceptions import ConfigError, ExperimentError
from aggrekit.harness import EXPERIMENTS, ExperimentConfig, emit_csv, read_csv, run_experiment, to_csv_text
from aggrekit.harness.acceptance import SMALL_CONFIGS
from aggrekit.harness.config import parse_grid, parse_ints
from aggrekit.harness.report import ExperimentReport, format_value


def test_parse_grid():
    assert parse_grid("0:0.01:0.06") == (0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
    assert parse_grid("0:0.1:2")[-1] == 2.0 and len(parse_grid("0:0.1:2")) == 21
    assert parse_grid("0.5, 1,2") == (0.5, 1.0, 2.0)
    for bad in ("1:2", "0:-1:3", "3:1:1"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_parse_ints():
    assert parse_ints("0-3,7") == (0, 1, 2, 3, 7)
    assert parse_ints("-2,5") == (-2, 5)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig("veracity_noise_sweep", (0,), {"veracity.nope": "1"})
    with pytest.raises(ConfigError):
        ExperimentConfig("nope")
    with pytest.raises(ConfigError):
        ExperimentConfig("veracity_noise_sweep", ())


def test_config_file_round_trip(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text("[experiment]\nname = mobility_eta_vs_devices\nseeds = 0-2\noutput_dir = out\n\n"
                 "[mobility]\ndevices = 10,20\nrounds = 1\n")
    cfg = ExperimentConfig.from_file(p)
    assert cfg.seeds == (0, 1, 2) and cfg.output_dir == "out"
    assert cfg.get("mobility.devices") == (10, 20) and cfg.get("mobility.rounds") == 1
    assert cfg.get("mobility.alpha") == 0.5
    same = ExperimentConfig.from_file(p)
    assert cfg.digest() == same.digest()
    p.write_text("[experiment]\nname = mobility_eta_vs_devices\n[mobility]\nspeed = 3\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)
    p.write_text("[mobility]\nrounds = 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)


def test_format_value():
    import numpy as np

    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(None) == ""
    assert format_value(np.int64(4)) == "4"
    assert format_value(True) == "true"


def test_emit_csv_with_sidecar(tmp_path):
    rep = ExperimentReport("x", ("a", "b"), [(1, 0.5), (2, None)], {"seeds": [0]})
    path = emit_csv(rep, tmp_path / "sub" / "r.csv")
    assert path.read_text() == "a,b\n1,0.5\n2,\n"
    meta = json.loads((tmp_path / "sub" / "r.csv.json").read_text())
    assert meta["rows"] == 2 and "version" in meta
    assert read_csv(path)[1] == {"a": "2", "b": ""}


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_experiments_run_and_are_deterministic(experiment):
    cfg = ExperimentConfig(experiment, (0, 1), SMALL_CONFIGS[experiment])
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.rows, experiment
    assert to_csv_text(a) == to_csv_text(b)
    seeds = a.column("seed")
    assert seeds == sorted(seeds)
    assert a.provenance["config_sha256"] == cfg.digest()


def test_veracity_rows_schema():
    cfg = ExperimentConfig("veracity_outliers", (0,), SMALL_CONFIGS["veracity_outliers"])
    rep = run_experiment(cfg)
    assert rep.columns == ("seed", "noise_var", "method", "subspace_err", "true_data_err")
    assert {r["method"] for r in rep.records()} == {"robust", "pca"}


def test_federated_schema_without_simulation():
    cfg = ExperimentConfig("federated_tol_vs_delta", (0,), {"federated.simulate": "false",
                                                           "federated.devices": "10",
                                                           "federated.samples_per_device": "300"})
    rep = run_experiment(cfg)
    assert len(rep.rows) == 21
    assert rep.records()[3]["overhead_fraction"] is None


def test_module_failures_are_wrapped(tmp_path, monkeypatch):
    monkeypatch.setenv("AGGREKIT_DATA_DIR", str(tmp_path))
    cfg = ExperimentConfig("federated_overhead", (0,), {"federated.dataset": "file", "federated.path": "missing.log"})
    with pytest.raises(ConfigError):
        run_experiment(cfg)
    bad = ExperimentConfig("federated_overhead", (0,), {"federated.devices": "10",
                                                       "federated.samples_per_device": "100"})
    with pytest.raises(ExperimentError):
        run_experiment(bad)


def test_file_dataset_through_data_dir(tmp_path, monkeypatch):
    from aggrekit.datamodel import physiological_fixture, write_table

    write_table(physiological_fixture(800, seed=1), tmp_path / "subject1.log")
    monkeypatch.setenv("AGGREKIT_DATA_DIR", str(tmp_path))
    cfg = ExperimentConfig("federated_overhead", (0,), {"federated.dataset": "file",
                                                       "federated.path": "subject1.log",
                                                       "federated.devices": "4", "federated.delta": "2"})
    rep = run_experiment(cfg)
    assert 0 < rep.records()[0]["overhead_fraction"] < 1


def test_cli_mobility(tmp_path, capsys):
    assert main(["mobility", "--nodes", "10", "--payload-bytes", "10", "--seeds", "2",
                 "--output-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "mobility_results.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert list(rows[0])[:6] == ["seed", "nodes", "payload_bits", "eta_bits_per_joule", "delivered", "dropped"]
    assert rows[0]["payload_bits"] == "80"


def test_cli_veracity(tmp_path):
    assert main(["veracity", "--dataset", "synthetic", "--k", "2", "--noise-grid", "0,0.01",
                 "--outliers", "0.1", "--seeds", "1", "--methods", "robust,pca",
                 "--output-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "veracity_results.csv")
    assert len(rows) == 4


def test_cli_federated(tmp_path):
    assert main(["federated", "--devices", "5", "--delta", "2.0", "--taps", "4", "--seeds", "1",
                 "--traces", "--output-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "federated_results.csv")
    assert list(rows[0]) == ["seed", "delta", "devices", "overhead_fraction", "tol_f", "norm_tol",
                             "mirsky_lhs", "delta_norm", "eta"]
    assert (tmp_path / "federated_traces.csv").exists()


def test_cli_run_config(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(f"[experiment]\nname = mobility_eta_vs_packet\nseeds = 0\noutput_dir = {tmp_path}\n\n"
                 "[mobility]\ndevices = 10\npayload_bytes = 0,20\n")
    assert main(["run", "--config", str(p)]) == 0
    rows = read_csv(tmp_path / "mobility_eta_vs_packet.csv")
    assert [r["payload_bits"] for r in rows] == ["0", "160"]


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nname = mobility_eta_vs_devices\n[mobility]\nzzz = 1\n")
    assert main(["run", "--config", str(p)]) == 2
    assert "unknown config key" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["nope"])


def test_cli_keys(capsys):
    assert main(["keys"]) == 0
    assert "veracity.noise_grid" in capsys.readouterr().out
