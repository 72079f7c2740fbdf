"""Multipath channel synthesis along user positions, plus the dataset file format."""

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError, DomainError, FormatError
from src.linalg import ComplexMatrix, vec, ivec

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# Dataset file layout (little-endian)
DATASET_MAGIC = b"CHDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIQd8x")


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array; spacing in wavelengths."""

    rows: int
    cols: int
    element_spacing: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError(f"array must have at least one element, got {self.rows}x{self.cols}")
        if self.element_spacing <= 0:
            raise DomainError("element spacing must be positive")

    @property
    def num_antennas(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class PathParam:
    """One propagation path: complex gain, arrival and departure (azimuth, elevation)."""

    gain: complex
    aoa: Tuple[float, float]
    aod: Tuple[float, float]


@dataclass
class ChannelSample:
    """Channel matrix H (N_B x N_U) at user position p (meters)."""

    H: ComplexMatrix
    p: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelSample):
            return NotImplemented
        return np.array_equal(self.H, other.H) and np.array_equal(self.p, other.p)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box of user positions."""

    low: Tuple[float, float, float]
    high: Tuple[float, float, float]

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.high, dtype=float) - np.asarray(self.low, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.low, dtype=float) + np.asarray(self.high, dtype=float))

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= np.asarray(self.low) - tol) and np.all(p <= np.asarray(self.high) + tol))

    def validate(self):
        ext = self.extent
        if ext.shape != (3,) or not np.all(np.isfinite(ext)):
            raise DomainError("region bounds must be finite 3-vectors")
        if np.any(ext < 0):
            raise DomainError(f"region high {self.high} is below low {self.low}")
        if not np.any(ext > 0):
            raise DomainError("region has zero extent on every axis")


@dataclass(frozen=True)
class SceneConfig:
    """
    Synthetic single-bounce scene standing in for a ray-traced environment.

    Both arrays face the +x axis. The first path is line of sight; paths 2..L
    bounce once off the first L-1 scatterers.
    """

    bs_geometry: ArrayGeometry
    ue_geometry: ArrayGeometry
    bs_position: Tuple[float, float, float]
    num_paths: int
    scatterer_positions: Tuple[Tuple[float, float, float], ...] = field(default_factory=tuple)
    carrier: float = 3.5e9
    rng_seed: int = 0
    reference_distance: float = 50.0
    scatter_coefficient: float = 0.5

    def __post_init__(self):
        if self.num_paths < 1:
            raise DomainError("num_paths must be at least 1")
        if len(self.scatterer_positions) < self.num_paths - 1:
            raise DomainError(
                f"{self.num_paths} paths need {self.num_paths - 1} scatterers, "
                f"got {len(self.scatterer_positions)}"
            )
        if self.carrier <= 0 or self.reference_distance <= 0:
            raise DomainError("carrier and reference distance must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    @property
    def channel_shape(self) -> Tuple[int, int]:
        return self.bs_geometry.num_antennas, self.ue_geometry.num_antennas


def steering(geom: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """
    Array response with unit-modulus entries.

    Entry (m, n) of the grid has phase 2*pi*spacing*(m*sin(az)*cos(el) + n*sin(el));
    the grid is flattened column-major.
    """
    m = np.arange(geom.rows)[:, None]
    n = np.arange(geom.cols)[None, :]
    phase = 2.0 * np.pi * geom.element_spacing * (
        m * math.sin(azimuth) * math.cos(elevation) + n * math.sin(elevation)
    )
    return vec(np.exp(1j * phase))


def synth_channel(scene: SceneConfig, paths: Sequence[PathParam]) -> ComplexMatrix:
    """H = sqrt(N_B N_U / L) * sum_l gain_l * a_B(aoa_l) a_U(aod_l)^H with unit-norm responses."""
    if not paths:
        raise DomainError("at least one path is required")
    n_bs, n_ue = scene.channel_shape
    H = np.zeros((n_bs, n_ue), dtype=np.complex128)
    for path in paths:
        a_b = steering(scene.bs_geometry, *path.aoa) / math.sqrt(n_bs)
        a_u = steering(scene.ue_geometry, *path.aod) / math.sqrt(n_ue)
        H += path.gain * np.outer(a_b, a_u.conj())
    return math.sqrt(n_bs * n_ue / len(paths)) * H


def _direction(v: np.ndarray) -> Tuple[float, float]:
    """(azimuth, elevation) of a direction in the frame of an array facing +x."""
    r = float(np.linalg.norm(v))
    azimuth = math.atan2(v[1], v[0])
    elevation = math.asin(max(-1.0, min(1.0, v[2] / r)))
    return azimuth, elevation


def paths_from_position(scene: SceneConfig, p) -> List[PathParam]:
    """Line-of-sight path plus one single-bounce path per scatterer, for a user at p."""
    p = np.asarray(p, dtype=float)
    bs = np.asarray(scene.bs_position, dtype=float)
    lam = scene.wavelength
    d_ref = scene.reference_distance

    d_los = float(np.linalg.norm(p - bs))
    if d_los < 1e-9:
        raise DomainError(f"user position {p.tolist()} coincides with the base station")

    paths = [
        PathParam(
            gain=(d_ref / d_los) * np.exp(-2j * np.pi * d_los / lam),
            aoa=_direction(p - bs),
            aod=_direction(bs - p),
        )
    ]
    for s in scene.scatterer_positions[: scene.num_paths - 1]:
        s = np.asarray(s, dtype=float)
        d1 = float(np.linalg.norm(s - bs))
        d2 = float(np.linalg.norm(p - s))
        if d1 < 1e-9 or d2 < 1e-9:
            raise DomainError(f"scatterer {s.tolist()} coincides with a terminal")
        paths.append(
            PathParam(
                gain=scene.scatter_coefficient * d_ref**2 / (d1 * d2)
                * np.exp(-2j * np.pi * (d1 + d2) / lam),
                aoa=_direction(s - bs),
                aod=_direction(s - p),
            )
        )
    return paths


def channel_at(scene: SceneConfig, p) -> ChannelSample:
    """Synthesize the sample for one user position."""
    p = np.asarray(p, dtype=float).copy()
    return ChannelSample(H=synth_channel(scene, paths_from_position(scene, p)), p=p)


def _grid_positions(region: Region, count: int, rng: np.random.Generator) -> np.ndarray:
    """Jittered grid over the active axes of the region, count points."""
    region.validate()
    if count == 1:
        return region.center[None, :]

    low = np.asarray(region.low, dtype=float)
    ext = region.extent
    active = np.flatnonzero(ext > 0)
    per_axis = max(1, math.ceil(count ** (1.0 / active.size)))
    while per_axis ** active.size < count:
        per_axis += 1

    cells = np.sort(rng.choice(per_axis ** active.size, size=count, replace=False))
    idx = np.stack(np.unravel_index(cells, (per_axis,) * active.size), axis=1)
    step = ext[active] / per_axis
    jitter = rng.uniform(-0.4, 0.4, size=idx.shape)

    positions = np.tile(low, (count, 1))
    positions[:, active] = low[active] + (idx + 0.5 + jitter) * step
    return positions


def gen_dataset(scene: SceneConfig, region: Region, K: int) -> List[ChannelSample]:
    """
    K samples on a seeded jittered grid over the region.

    Args:
        scene: Scene to synthesize channels in
        region: Box the user positions are drawn from
        K: Number of samples

    Returns:
        List of ChannelSample, deterministic for a given scene.rng_seed
    """
    if K < 1:
        raise DomainError("dataset size must be at least 1")
    rng = np.random.default_rng(scene.rng_seed)
    positions = _grid_positions(region, K, rng)
    logger.info("Synthesizing %d channels (%dx%d)", K, *scene.channel_shape)
    return [channel_at(scene, p) for p in positions]


def gen_trajectory(
    scene: SceneConfig,
    start,
    velocity,
    T: int,
    dt: float,
    region: Optional[Region] = None,
) -> List[ChannelSample]:
    """Linear motion p(t) = start + t*dt*velocity for t = 0..T-1."""
    if T < 1:
        raise DomainError("trajectory length must be at least 1")
    start = np.asarray(start, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    positions = start + np.arange(T)[:, None] * dt * velocity

    if region is not None:
        for t, p in enumerate(positions):
            if not region.contains(p):
                raise DomainError(f"trajectory leaves the region at t={t}, p={p.tolist()}")
    return [channel_at(scene, p) for p in positions]


def random_trajectories(
    scene: SceneConfig,
    region: Region,
    count: int,
    T: int,
    dt: float,
    seed: int,
) -> List[List[ChannelSample]]:
    """Seeded straight-line trajectories whose start and end both lie in the region."""
    region.validate()
    rng = np.random.default_rng(seed)
    low = np.asarray(region.low, dtype=float)
    ext = region.extent
    trajectories = []
    for _ in range(count):
        start = low + rng.uniform(0.0, 1.0, size=3) * ext
        end = low + rng.uniform(0.0, 1.0, size=3) * ext
        velocity = (end - start) / (max(T - 1, 1) * dt)
        trajectories.append(gen_trajectory(scene, start, velocity, T, dt, region))
    return trajectories


@dataclass(frozen=True)
class DatasetHeader:
    n_bs: int
    n_ue: int
    count: int
    carrier: float
    version: int = DATASET_VERSION


def _record_dtype(n_bs: int, n_ue: int) -> np.dtype:
    return np.dtype([("p", "<f8", (3,)), ("H", "<c16", (n_bs * n_ue,))])


def save_dataset(path, samples: Sequence[ChannelSample], carrier: float) -> Path:
    """Write samples in the CHDS binary format."""
    if not samples:
        raise DomainError("cannot save an empty dataset")
    n_bs, n_ue = samples[0].H.shape
    records = np.zeros(len(samples), dtype=_record_dtype(n_bs, n_ue))
    for k, sample in enumerate(samples):
        if sample.H.shape != (n_bs, n_ue):
            raise DimensionError(f"sample {k} has shape {sample.H.shape}, expected {(n_bs, n_ue)}")
        records[k]["p"] = sample.p
        records[k]["H"] = vec(sample.H)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n_bs, n_ue, len(samples), float(carrier)))
        fh.write(records.tobytes())
    return path


def _parse_header(raw: bytes) -> DatasetHeader:
    if len(raw) < _HEADER.size:
        raise FormatError(f"file too short for header ({len(raw)} bytes)", len(raw))
    magic, version, n_bs, n_ue, count, carrier = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if n_bs < 1 or n_ue < 1:
        raise FormatError(f"invalid dimensions {n_bs}x{n_ue}", 8)
    return DatasetHeader(n_bs=n_bs, n_ue=n_ue, count=count, carrier=carrier, version=version)


def read_dataset_header(path) -> DatasetHeader:
    with open(path, "rb") as fh:
        return _parse_header(fh.read(_HEADER.size))


def load_dataset(path) -> List[ChannelSample]:
    """Read a CHDS file; raises FormatError with the offending byte offset."""
    raw = Path(path).read_bytes()
    header = _parse_header(raw)
    dtype = _record_dtype(header.n_bs, header.n_ue)
    expected = _HEADER.size + header.count * dtype.itemsize
    if len(raw) < expected:
        complete = (len(raw) - _HEADER.size) // dtype.itemsize
        raise FormatError(
            f"truncated payload: {complete} of {header.count} records present",
            _HEADER.size + complete * dtype.itemsize,
        )
    if len(raw) > expected:
        raise FormatError(f"{len(raw) - expected} trailing bytes", expected)

    records = np.frombuffer(raw, dtype=dtype, count=header.count, offset=_HEADER.size)
    return [
        ChannelSample(
            H=ivec(np.array(rec["H"], dtype=np.complex128), header.n_bs, header.n_ue),
            p=np.array(rec["p"], dtype=float),
        )
        for rec in records
    ]
