import json

from src import __version__
from src.cli import cli, exit_code_for
from src.errors import DimensionError, StageError, TrainingError, UsageError
from tests.conftest import CONFIG_DIR

SMALL = str(CONFIG_DIR / "small.json")


def test_usage_errors(capsys):
    assert cli([]) == 1
    assert cli(["train-ae"]) == 1
    assert "--config is required" in capsys.readouterr().err
    assert cli(["frobnicate", "--config", SMALL]) == 1
    assert "error:" in capsys.readouterr().err


def test_version_and_help(capsys):
    assert cli(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
    assert cli(["run-comparison", "--help"]) == 0


def test_data_errors(tmp_path, capsys):
    assert cli(["gen-data", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scene": {"bs_rows": 0}}))
    assert cli(["gen-data", "--config", str(bad), "--out", str(tmp_path / "run")]) == 2
    assert "bs_rows" in capsys.readouterr().err

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert cli(["gen-data", "--config", str(broken)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_corrupt_dataset_is_a_data_error(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli(["gen-data", "--config", SMALL, "--out", str(out)]) == 0
    dataset = out / "dataset.chds"
    dataset.write_bytes(b"XXXX" + dataset.read_bytes()[4:])
    assert cli(["train-ae", "--config", SMALL, "--out", str(out), "--epochs", "1"]) == 2
    assert "byte offset" in capsys.readouterr().err


def test_global_flags_before_or_after_command(tmp_path):
    out = tmp_path / "run"
    assert cli(["--config", SMALL, "--out", str(out), "gen-data"]) == 0
    assert cli(["gen-data", "--config", SMALL, "--out", str(out), "--seed", "3"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["pilots"]["rng_seed"] == 4
    assert manifest["commands"]["gen-data"] == {"dataset": 120, "trajectory": 20}


def test_pipeline_writes_reports(tmp_path):
    out = str(tmp_path / "run")
    args = ["--config", SMALL, "--out", out]
    for command in ["gen-data", "train-ae", "train-tracker", "eval-ls", "run-ablation", "run-comparison"]:
        assert cli([command, *args]) == 0, command
    header = (tmp_path / "run" / "comparison.csv").read_text().splitlines()[0]
    assert header == "t,nmse_ls,nmse_tc,nmse_notc,nmse_direct"
    assert (tmp_path / "run" / "ls.csv").read_text().startswith("t,nmse_ls\n")
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert set(manifest["commands"]) >= {"gen-data", "train-ae", "run-comparison"}
    assert manifest["commands"]["train-tracker"]["tc"]["reused"] is False


def test_reports_are_reproducible(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli(["run-comparison", "--config", SMALL, "--out", str(out), "--epochs", "2"]) == 0
        assert cli(["run-ablation", "--config", SMALL, "--out", str(out), "--epochs", "2"]) == 0
        outputs.append(((out / "comparison.csv").read_bytes(), (out / "ablation.csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_scaling_writes_both_sizes(tmp_path):
    out = tmp_path / "run"
    assert cli(["run-scaling", "--config", SMALL, "--out", str(out), "--epochs", "1"]) == 0
    counts = (out / "parameter_counts.csv").read_text().splitlines()
    assert counts[0] == "n_bs,method,parameters"
    assert (out / "scaling" / "nb16" / "comparison.csv").exists()
    assert (out / "scaling" / "nb36" / "comparison.csv").exists()


def test_grad_check_needs_no_config(capsys):
    assert cli(["grad-check"]) == 0
    assert "loss_tc" in capsys.readouterr().out


def test_grad_check_writes_manifest_with_out(tmp_path):
    assert cli(["grad-check", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["version"].startswith(__version__)
    assert "config" not in manifest
    checks = manifest["commands"]["grad-check"]["checks"]
    assert [c["check"] for c in checks] == ["mlp", "lstm", "loss_ci", "loss_tc", "loss_lstm", "loss_direct"]
    assert all(c["passed"] is True for c in checks)


def test_exit_codes_follow_the_cause():
    assert exit_code_for(UsageError("no command")) == 1
    assert exit_code_for(DimensionError("bad shape")) == 2
    assert exit_code_for(StageError("train-ae", TrainingError("loss diverged", 4))) == 3
    assert exit_code_for(StageError("gen-data", FileNotFoundError("dataset.chds"))) == 2
