"""Experiment configuration: JSON files merged over the defaults in config.py."""

import copy
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import config
from src.channel import ArrayGeometry, Region, SceneConfig
from src.errors import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = {
    "scene": config.SCENE_DEFAULTS,
    "pilots": config.PILOT_DEFAULTS,
    "autoencoder": config.AUTOENCODER_DEFAULTS,
    "tracker": config.TRACKER_DEFAULTS,
    "trajectory": config.TRAJECTORY_DEFAULTS,
    "experiment": config.EXPERIMENT_DEFAULTS,
}


@dataclass(frozen=True)
class SceneSettings:
    bs_rows: int
    bs_cols: int
    ue_rows: int
    ue_cols: int
    element_spacing: float
    bs_position: List[float]
    num_paths: int
    scatterer_positions: List[List[float]]
    carrier: float
    reference_distance: float
    scatter_coefficient: float
    region_low: List[float]
    region_high: List[float]
    num_samples: int
    rng_seed: int

    def scene(self, bs_rows: Optional[int] = None, bs_cols: Optional[int] = None) -> SceneConfig:
        """SceneConfig for these settings, optionally with another BS array size."""
        return SceneConfig(
            bs_geometry=ArrayGeometry(bs_rows or self.bs_rows, bs_cols or self.bs_cols, self.element_spacing),
            ue_geometry=ArrayGeometry(self.ue_rows, self.ue_cols, self.element_spacing),
            bs_position=tuple(self.bs_position),
            num_paths=self.num_paths,
            scatterer_positions=tuple(tuple(p) for p in self.scatterer_positions),
            carrier=self.carrier,
            rng_seed=self.rng_seed,
            reference_distance=self.reference_distance,
            scatter_coefficient=self.scatter_coefficient,
        )

    def region(self) -> Region:
        return Region(tuple(self.region_low), tuple(self.region_high))


@dataclass(frozen=True)
class PilotSettings:
    m_bs: int
    m_ue: int
    amplitude: float
    snr_db: float
    rng_seed: int


@dataclass(frozen=True)
class AutoencoderSettings:
    latent_dim: int
    encoder_widths: List[int]
    decoder_widths: List[int]
    lambda_tc: float
    perturb_std: float
    batch_size: int
    learning_rate: float
    epochs: int
    patience: int
    full_batch_tc: bool
    seed: int


@dataclass(frozen=True)
class TrackerSettings:
    hidden_size: int
    num_layers: int
    head_width: int
    lambda_alpha: float
    lambda_beta: float
    batch_size: int
    learning_rate: float
    epochs: int
    patience: int
    direct_head_width: Optional[int]
    seed: int


@dataclass(frozen=True)
class TrajectorySettings:
    length: int
    dt: float
    num_training: int
    eval_start: List[float]
    eval_velocity: List[float]


@dataclass(frozen=True)
class ExperimentSettings:
    run_direct: bool
    scaling_bs_rows: int
    scaling_bs_cols: int
    log_every: int


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration of one run."""

    scene: SceneSettings
    pilots: PilotSettings
    autoencoder: AutoencoderSettings
    tracker: TrackerSettings
    trajectory: TrajectorySettings
    experiment: ExperimentSettings
    out_dir: Path
    source: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {name: asdict(getattr(self, name)) for name in SECTIONS}
        data["out_dir"] = str(self.out_dir)
        data["source"] = self.source
        return data

    def with_bs_size(self, rows: int, cols: int, out_dir: Path) -> "ExperimentConfig":
        return replace(self, scene=replace(self.scene, bs_rows=rows, bs_cols=cols), out_dir=Path(out_dir))


SECTION_TYPES = {
    "scene": SceneSettings,
    "pilots": PilotSettings,
    "autoencoder": AutoencoderSettings,
    "tracker": TrackerSettings,
    "trajectory": TrajectorySettings,
    "experiment": ExperimentSettings,
}

# Keys that must be >= 1
POSITIVE_COUNTS = {
    "scene": ["bs_rows", "bs_cols", "ue_rows", "ue_cols", "num_paths", "num_samples"],
    "pilots": ["m_bs", "m_ue"],
    "autoencoder": ["latent_dim", "batch_size", "epochs", "patience"],
    "tracker": ["hidden_size", "num_layers", "head_width", "batch_size", "epochs", "patience"],
    "trajectory": ["length", "num_training"],
    "experiment": ["scaling_bs_rows", "scaling_bs_cols"],
}

POSITIVE_REALS = {
    "scene": ["element_spacing", "carrier", "reference_distance"],
    "autoencoder": ["learning_rate"],
    "tracker": ["learning_rate"],
    "trajectory": ["dt"],
}

NON_NEGATIVE_REALS = {
    "scene": ["scatter_coefficient"],
    "autoencoder": ["lambda_tc", "perturb_std"],
    "tracker": ["lambda_alpha", "lambda_beta"],
}

VECTORS = {
    "scene": ["bs_position", "region_low", "region_high"],
    "trajectory": ["eval_start", "eval_velocity"],
}


def _merge(defaults: Dict[str, Any], overrides: Dict[str, Any], section: str) -> Dict[str, Any]:
    unknown = sorted(set(overrides) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    merged = copy.deepcopy(defaults)
    merged.update(copy.deepcopy(overrides))
    return merged


def _check_number(section: str, key: str, value, integer: bool = False) -> float:
    ok_type = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, ok_type):
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{section}.{key} must be {kind}, got {value!r}")
    return value


def _validate(section: str, values: Dict[str, Any]):
    for key in POSITIVE_COUNTS.get(section, []):
        if _check_number(section, key, values[key], integer=True) < 1:
            raise ConfigError(f"{section}.{key} must be at least 1")
    for key in POSITIVE_REALS.get(section, []):
        if _check_number(section, key, values[key]) <= 0:
            raise ConfigError(f"{section}.{key} must be positive")
    for key in NON_NEGATIVE_REALS.get(section, []):
        if _check_number(section, key, values[key]) < 0:
            raise ConfigError(f"{section}.{key} must be non-negative")
    for key in VECTORS.get(section, []):
        vector = values[key]
        if not isinstance(vector, list) or len(vector) != 3:
            raise ConfigError(f"{section}.{key} must be a list of 3 numbers")
        for v in vector:
            _check_number(section, key, v)

    if section == "scene":
        scatterers = values["scatterer_positions"]
        if not isinstance(scatterers, list) or any(not isinstance(p, list) or len(p) != 3 for p in scatterers):
            raise ConfigError("scene.scatterer_positions must be a list of 3-vectors")
        if len(scatterers) < values["num_paths"] - 1:
            raise ConfigError(f"scene.num_paths={values['num_paths']} needs {values['num_paths'] - 1} scatterers")
        if any(h < l for l, h in zip(values["region_low"], values["region_high"])):
            raise ConfigError("scene.region_high must not be below region_low")
    if section == "autoencoder":
        if values["batch_size"] < 2:
            raise ConfigError("autoencoder.batch_size must be at least 2")
        for key in ("encoder_widths", "decoder_widths"):
            widths = values[key]
            if not isinstance(widths, list) or any(isinstance(w, bool) or not isinstance(w, int) or w < 1 for w in widths):
                raise ConfigError(f"autoencoder.{key} must be a list of positive integers")
    if section == "tracker" and values["direct_head_width"] is not None:
        if _check_number(section, "direct_head_width", values["direct_head_width"], integer=True) < 1:
            raise ConfigError("tracker.direct_head_width must be at least 1")


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def load_config(path, seed: Optional[int] = None, out_dir=None) -> ExperimentConfig:
    """
    Load a JSON experiment config.

    Args:
        path: JSON file; missing sections and keys fall back to config.py defaults
        seed: If given, replaces every seed in the config
        out_dir: Output directory; defaults to the file's "out_dir" or CHANTRACK_OUT_DIR

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: on missing files, unknown keys, bad types or out-of-range values
    """
    path = Path(path)
    data = _read_json(path)
    file_out_dir = data.pop("out_dir", None)
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")

    resolved = {}
    for name, defaults in SECTIONS.items():
        overrides = data.get(name, {})
        if not isinstance(overrides, dict):
            raise ConfigError(f"section [{name}] must be a JSON object")
        values = _merge(defaults, overrides, name)
        if seed is not None:
            values = _apply_seed(name, values, seed)
        _validate(name, values)
        resolved[name] = SECTION_TYPES[name](**values)

    out = Path(out_dir or file_out_dir or config.OUTPUT_DIR)
    logger.debug("Loaded config %s (out_dir=%s)", path, out)
    return ExperimentConfig(**resolved, out_dir=out, source=str(path))


def _apply_seed(section: str, values: Dict[str, Any], seed: int) -> Dict[str, Any]:
    """Derive distinct per-stage seeds from one global seed."""
    offsets = {"scene": ("rng_seed", 0), "pilots": ("rng_seed", 1), "autoencoder": ("seed", 2), "tracker": ("seed", 3)}
    if section in offsets:
        key, offset = offsets[section]
        values[key] = int(seed) + offset
    return values


def config_field_names() -> Dict[str, Tuple[str, ...]]:
    """Section -> accepted keys, for the documented schema."""
    return {name: tuple(f.name for f in fields(cls)) for name, cls in SECTION_TYPES.items()}
