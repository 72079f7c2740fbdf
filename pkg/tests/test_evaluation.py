import json

import numpy as np
import pandas as pd
import pytest

import config
from src.errors import DimensionError, DomainError, FormatError, StageError
from src.evaluation import (
    ExperimentRunner,
    eval_ls,
    generate_data,
    nmse_curve,
    nmse_db,
    parameter_counts,
    run_ablation,
    run_comparison,
    run_gradient_suite,
    stage,
    train_autoencoders,
    train_trackers,
    write_manifest,
)
from src.settings import load_config
from tests.conftest import CONFIG_DIR, random_complex


def test_nmse_examples(rng):
    H = random_complex(rng, (4, 2))
    assert nmse_db(H, H) == config.NMSE_FLOOR_DB
    assert nmse_db(np.zeros_like(H), H) == pytest.approx(0.0, abs=1e-12)
    assert nmse_db(2 * H, H) == pytest.approx(0.0, abs=1e-12)
    assert nmse_db(1.1 * H, H) == pytest.approx(-20.0)


def test_nmse_errors(rng):
    H = random_complex(rng, (4, 2))
    with pytest.raises(DomainError):
        nmse_db(H, np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        nmse_db(H, H.T)
    with pytest.raises(DimensionError):
        nmse_curve([H], [])


def test_stage_tags_failures():
    with pytest.raises(StageError) as excinfo:
        with stage("gen-data"):
            raise FormatError("bad magic", offset=0)
    assert excinfo.value.stage == "gen-data"
    assert isinstance(excinfo.value.cause, FormatError)


def test_gradient_suite_passes():
    results = run_gradient_suite()
    assert results["check"].tolist() == ["mlp", "lstm", "loss_ci", "loss_tc", "loss_lstm", "loss_direct"]
    assert results["passed"].all(), results


def test_tracker_size_is_independent_of_array():
    cfg = load_config(CONFIG_DIR / "desk.json")
    counts = parameter_counts(cfg, [(8, 8), (16, 16)])
    assert counts[64]["tracker"] == counts[256]["tracker"]
    assert counts[256]["direct"] >= 3 * counts[64]["direct"]
    assert counts[256]["autoencoder"] > counts[64]["autoencoder"]


def test_pipeline_on_small_config(small_config):
    runner = ExperimentRunner(small_config)
    assert generate_data(runner) == {"dataset": 120, "trajectory": 20}
    assert (runner.out_dir / "dataset.chds").exists()

    trained = train_autoencoders(runner)
    assert set(trained) == {"tc", "notc"} and not trained["tc"]["reused"]
    history = pd.read_csv(runner.out_dir / "ae_notc_history.csv")
    assert (history["loss_tc"] == 0).all()

    assert set(train_trackers(runner)) == {"tc", "notc", "direct"}

    ls = eval_ls(runner)
    assert len(ls) == 20 and np.isfinite(ls["nmse_ls"]).all()

    frame, spearman = run_ablation(runner)
    assert list(frame.columns) == ["t", "dist_no_tc", "dist_tc"]
    assert frame.loc[0, "dist_tc"] == 0.0
    assert set(spearman) == {"dist_no_tc", "dist_tc"}

    report = run_comparison(runner)
    assert report.T == 20
    assert not report.frame.isna().any().any()
    assert np.allclose(report.frame["nmse_ls"], ls["nmse_ls"])
    assert report.metadata["overhead"] == 8

    path = write_manifest(runner.out_dir, "run-comparison", {"overview": report.overview}, runner.cfg)
    manifest = json.loads(path.read_text())
    assert manifest["config"]["scene"]["bs_rows"] == 4
    assert "run-comparison" in manifest["commands"]


def test_runner_reuses_artifacts(small_config):
    first = ExperimentRunner(small_config)
    generate_data(first)
    first.autoencoder("tc")

    again = ExperimentRunner(small_config)
    _, history = again.autoencoder("tc")
    assert history is None
    assert again.dataset() == first.dataset()

    capped = ExperimentRunner(small_config, max_epochs=1)
    _, history = capped.autoencoder("tc")
    assert history is not None and history["epoch"].max() == 1


def test_direct_column_empty_when_disabled(tmp_path):
    path = tmp_path / "cfg.json"
    data = json.loads((CONFIG_DIR / "small.json").read_text())
    data["experiment"]["run_direct"] = False
    path.write_text(json.dumps(data))
    runner = ExperimentRunner(load_config(path, out_dir=tmp_path / "run"), max_epochs=1)
    report = run_comparison(runner)
    assert report.frame["nmse_direct"].isna().all()
    assert not (runner.out_dir / "direct.nnck").exists()


@pytest.mark.slow
def test_distance_loss_orders_latents(tmp_path):
    runner = ExperimentRunner(load_config(CONFIG_DIR / "desk.json", out_dir=tmp_path))
    _, spearman = run_ablation(runner)
    assert spearman["dist_tc"] >= 0.9
    assert spearman["dist_no_tc"] < 0.5


@pytest.mark.slow
def test_tracking_beats_ls_and_untrained_latents(tmp_path):
    runner = ExperimentRunner(load_config(CONFIG_DIR / "desk.json", out_dir=tmp_path))
    assert runner.pilots().overhead == 64
    overview = run_comparison(runner).overview
    assert overview["mean_nmse_tc"] <= overview["mean_nmse_ls"] - 3.0
    assert overview["mean_nmse_tc"] <= overview["mean_nmse_notc"] - 3.0


@pytest.mark.slow
def test_full_config_trains_one_epoch(tmp_path):
    runner = ExperimentRunner(load_config(CONFIG_DIR / "full.json", out_dir=tmp_path), max_epochs=1)
    assert generate_data(runner)["dataset"] == 1111
    assert runner.pilots().observation_dim == 192
    for tag, summary in train_autoencoders(runner).items():
        assert summary["epochs"] == 1
    for tag, summary in train_trackers(runner).items():
        assert summary["epochs"] == 1
