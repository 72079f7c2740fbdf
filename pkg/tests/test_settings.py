import json

import pytest

import config
from src.errors import ConfigError
from src.settings import config_field_names, load_config
from tests.conftest import CONFIG_DIR


def _write(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def test_full_config_dimensions(tmp_path):
    cfg = load_config(CONFIG_DIR / "full.json", out_dir=tmp_path)
    scene = cfg.scene.scene()
    assert scene.channel_shape == (100, 4)
    assert cfg.pilots.m_bs * cfg.pilots.m_ue == 96
    assert cfg.autoencoder.latent_dim == 64
    assert cfg.autoencoder.encoder_widths == [1280, 256]
    assert cfg.autoencoder.decoder_widths == [256, 1280]
    assert (cfg.tracker.num_layers, cfg.tracker.hidden_size) == (3, 64)
    assert cfg.autoencoder.lambda_tc == pytest.approx(0.1)
    assert cfg.out_dir == tmp_path


@pytest.mark.parametrize("name", ["full.json", "desk.json", "small.json"])
def test_bundled_configs_load(name, tmp_path):
    cfg = load_config(CONFIG_DIR / name, out_dir=tmp_path)
    assert cfg.source.endswith(name)
    cfg.scene.region().validate()


def test_defaults_fill_missing_sections(tmp_path):
    cfg = load_config(_write(tmp_path, {"pilots": {"m_bs": 8}}))
    assert cfg.pilots.m_bs == 8
    assert cfg.pilots.m_ue == config.PILOT_DEFAULTS["m_ue"]
    assert cfg.tracker.hidden_size == config.TRACKER_DEFAULTS["hidden_size"]
    assert str(cfg.out_dir) == config.OUTPUT_DIR


def test_out_dir_precedence(tmp_path):
    path = _write(tmp_path, {"out_dir": str(tmp_path / "from_file")})
    assert load_config(path).out_dir == tmp_path / "from_file"
    assert load_config(path, out_dir=tmp_path / "flag").out_dir == tmp_path / "flag"


def test_seed_override_gives_distinct_stage_seeds(tmp_path):
    cfg = load_config(CONFIG_DIR / "small.json", seed=100)
    assert cfg.scene.rng_seed == 100
    assert cfg.pilots.rng_seed == 101
    assert cfg.autoencoder.seed == 102
    assert cfg.tracker.seed == 103


@pytest.mark.parametrize(
    "data",
    [
        {"scnee": {}},
        {"scene": {"bs_row": 4}},
        {"scene": []},
        {"scene": {"bs_rows": 0}},
        {"scene": {"bs_rows": 2.5}},
        {"scene": {"carrier": -1.0}},
        {"scene": {"bs_position": [0.0, 1.0]}},
        {"scene": {"num_paths": 5}},
        {"scene": {"region_low": [10.0, 0.0, 0.0], "region_high": [0.0, 0.0, 0.0]}},
        {"pilots": {"m_bs": True}},
        {"autoencoder": {"batch_size": 1}},
        {"autoencoder": {"encoder_widths": [64, 0]}},
        {"autoencoder": {"lambda_tc": -0.1}},
        {"tracker": {"direct_head_width": 0}},
        {"trajectory": {"dt": 0}},
    ],
)
def test_invalid_configs(tmp_path, data):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, data))


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[]")
    with pytest.raises(ConfigError):
        load_config(listed)


def test_with_bs_size(small_config, tmp_path):
    bigger = small_config.with_bs_size(6, 6, tmp_path / "nb36")
    assert bigger.scene.scene().channel_shape == (36, 2)
    assert bigger.pilots == small_config.pilots
    assert small_config.scene.bs_rows == 4


def test_schema_matches_defaults():
    names = config_field_names()
    for section, defaults in [
        ("scene", config.SCENE_DEFAULTS),
        ("pilots", config.PILOT_DEFAULTS),
        ("autoencoder", config.AUTOENCODER_DEFAULTS),
        ("tracker", config.TRACKER_DEFAULTS),
        ("trajectory", config.TRAJECTORY_DEFAULTS),
        ("experiment", config.EXPERIMENT_DEFAULTS),
    ]:
        assert set(names[section]) == set(defaults)
