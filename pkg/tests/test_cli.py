import csv
import io
import json
import shutil
import subprocess

import pytest

from gauge_lab.cli import ExperimentConfig, Report, emit, main, render, run, thread_cap
from gauge_lab.errors import ConfigError
from gauge_lab.experiments import KINDS


def write_config(tmp_path, **fields):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(fields), encoding="utf-8")
    return str(path)


def without_wall_time(text):
    data = json.loads(text)
    data.pop("wall_time")
    return data


class TestConfig:
    def test_kind_defaults_fill_in(self):
        cfg = ExperimentConfig.from_dict({"kind": "wilson-covariance"})
        assert cfg.dim == 3 and cfg.n_steps == 2048 and cfg.trials == 20

    def test_unknown_kind_names_the_field(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"kind": "quantum-gravity"})
        assert info.value.field == "kind"

    @pytest.mark.parametrize(
        "fields, bad",
        [
            ({"dim": 0}, "dim"),
            ({"dim": 2.5}, "dim"),
            ({"trials": -1}, "trials"),
            ({"colour": "blue"}, "colour"),
            ({"tolerances": {"relative-deviation": -1.0}}, "tolerances.relative-deviation"),
            ({"tolerances": {"nope": 1.0}}, "tolerances.nope"),
            ({"format": "xml"}, "format"),
        ],
    )
    def test_validation_names_the_field(self, fields, bad):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"kind": "relu-rescale", **fields})
        assert info.value.field == bad

    def test_bridge_layers_must_divide_grid(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"kind": "bridge-diagram", "n_steps": 1000, "layers": 3})
        assert info.value.field == "layers"

    def test_every_kind_has_defaults_that_validate(self):
        for kind in KINDS:
            ExperimentConfig.from_dict({"kind": kind})

    def test_thread_cap(self, monkeypatch):
        monkeypatch.delenv("GAUGE_LAB_THREADS", raising=False)
        assert thread_cap() == 1
        monkeypatch.setenv("GAUGE_LAB_THREADS", "3")
        assert thread_cap() == 3
        monkeypatch.setenv("GAUGE_LAB_THREADS", "zero")
        with pytest.raises(ConfigError):
            thread_cap()


class TestRun:
    def test_relu_suite_passes(self):
        report = run(ExperimentConfig.from_dict({"kind": "relu-rescale", "dim": 3, "seed": 7}))
        assert report.passed and report.seed == 7
        rel = [r.residual for r in report.trials if r.check == "relative-deviation"]
        assert len(rel) == 20 and max(rel) <= 1e-12

    def test_degenerate_bridge(self):
        cfg = ExperimentConfig.from_dict(
            {"kind": "bridge-diagram", "layers": 1, "gauge_amplitude": 0.0, "n_steps": 64, "trials": 2}
        )
        report = run(cfg)
        assert report.passed
        assert all(r.residual <= 1e-12 for r in report.trials)

    def test_every_row_has_tolerance_and_verdict(self):
        report = run(ExperimentConfig.from_dict({"kind": "attention-gauge", "trials": 3}))
        assert report.trials
        assert all(r.verdict in ("pass", "fail") and r.tolerance >= 0 for r in report.trials)

    def test_parallel_run_matches_serial(self):
        cfg = ExperimentConfig.from_dict({"kind": "attention-gauge", "trials": 6, "seed": 3})
        serial = without_wall_time(render(run(cfg, threads=1)))
        parallel = without_wall_time(render(run(cfg, threads=4)))
        assert serial == parallel

    def test_failing_check_fails_report(self):
        cfg = ExperimentConfig.from_dict(
            {"kind": "attention-gauge", "trials": 2, "tolerances": {"softmax-control": 1e6}}
        )
        report = run(cfg)
        assert not report.passed and report.criteria["softmax-control"] == "fail"


class TestEmit:
    def test_empty_report_is_valid_json(self):
        report = run(ExperimentConfig.from_dict({"kind": "relu-rescale", "trials": 0}))
        data = json.loads(render(report, "json"))
        assert data["trials"] == [] and data["passed"] is True

    def test_csv_rows(self):
        report = run(ExperimentConfig.from_dict({"kind": "cnn-rescale", "trials": 3}))
        text = render(report, "csv")
        assert text.endswith("\n")
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0][:4] == ["trial", "residual", "tolerance", "verdict"]
        assert len(rows) == 4

    def test_json_round_trip(self, tmp_path):
        report = run(ExperimentConfig.from_dict({"kind": "relu-rescale", "trials": 2}))
        path = tmp_path / "report.json"
        emit(report, "json", str(path))
        again = Report.from_dict(json.loads(path.read_text(encoding="utf-8")))
        assert again == report


class TestMain:
    def test_pass_exit_code(self, tmp_path, capsys):
        assert main(["run", "--config", write_config(tmp_path, kind="relu-rescale", trials=2)]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True

    def test_flags_override_file(self, tmp_path):
        out = tmp_path / "r.csv"
        cfg = write_config(tmp_path, kind="relu-rescale", trials=1, seed=1)
        assert main(["run", "--config", cfg, "--kind", "cnn-rescale", "--seed", "9", "--format", "csv", "--out", str(out)]) == 0
        assert out.read_text(encoding="utf-8").startswith("trial,residual,tolerance,verdict")

    def test_failure_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, kind="attention-gauge", trials=1, tolerances={"softmax-control": 1e6})
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "r.json")]) == 1

    @pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"kind": "nope"}'])
    def test_config_error_exit_code(self, tmp_path, content, capsys):
        path = tmp_path / "bad.json"
        path.write_text(content, encoding="utf-8")
        assert main(["run", "--config", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2

    def test_bad_arguments(self):
        assert main(["run"]) == 2
        assert main(["fly"]) == 2

    def test_bad_thread_cap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GAUGE_LAB_THREADS", "-2")
        assert main(["run", "--config", write_config(tmp_path, kind="relu-rescale", trials=1)]) == 2

    def test_unwritable_output(self, tmp_path):
        cfg = write_config(tmp_path, kind="relu-rescale", trials=1)
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "no" / "such" / "dir.json")]) == 2


@pytest.mark.skipif(shutil.which("gauge-lab") is None, reason="console script not installed")
def test_console_script_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, kind="attention-gauge", trials=3, seed=11)
    runs = [subprocess.run(["gauge-lab", "run", "--config", cfg], capture_output=True, text=True) for _ in range(2)]
    assert [r.returncode for r in runs] == [0, 0]
    assert without_wall_time(runs[0].stdout) == without_wall_time(runs[1].stdout)
