"""Shared fixtures: a tiny scene, its pilots and a small experiment config."""

from pathlib import Path

import numpy as np
import pytest

from src.channel import ArrayGeometry, Region, SceneConfig
from src.settings import load_config
from src.signaling import make_pilots

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_scene():
    return SceneConfig(
        bs_geometry=ArrayGeometry(4, 4),
        ue_geometry=ArrayGeometry(1, 2),
        bs_position=(0.0, 0.0, 10.0),
        num_paths=2,
        scatterer_positions=((40.0, -35.0, 5.0),),
        carrier=3.0e7,
        rng_seed=5,
    )


@pytest.fixture
def region():
    return Region((30.0, -20.0, 1.5), (60.0, 10.0, 1.5))


@pytest.fixture
def tiny_pilots(tiny_scene):
    return make_pilots(*tiny_scene.channel_shape, m_bs=4, m_ue=2, seed=9)


@pytest.fixture
def small_config(tmp_path):
    return load_config(CONFIG_DIR / "small.json", out_dir=tmp_path / "run")


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
