"""Pilot observation model Y = W^H H F S + N and the least-squares baseline."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.errors import DimensionError, DomainError
from src.linalg import ComplexMatrix, as_matrix, ivec, kron, pinv, vec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PilotConfig:
    """
    Fixed combiner W (N_B x M_B), precoder F (N_U x M_U) and pilot symbols S.

    W and F hold unit-modulus entries (analog phase shifters); G = F S is cached.
    """

    W: ComplexMatrix
    F: ComplexMatrix
    S: ComplexMatrix
    G: ComplexMatrix
    rng_seed: int

    @property
    def n_bs(self) -> int:
        return self.W.shape[0]

    @property
    def n_ue(self) -> int:
        return self.F.shape[0]

    @property
    def m_bs(self) -> int:
        return self.W.shape[1]

    @property
    def m_ue(self) -> int:
        return self.F.shape[1]

    @property
    def overhead(self) -> int:
        """Number of scalar observations per coherence interval."""
        return self.m_bs * self.m_ue

    @property
    def observation_dim(self) -> int:
        return 2 * self.overhead


@dataclass(frozen=True)
class NoiseSpec:
    """
    Circular complex Gaussian noise, variance per complex entry.

    Observations drawn without an explicit generator share one stream per spec,
    so successive intervals get independent noise.
    """

    variance: float
    rng_seed: int = 0
    _stream: Optional[np.random.Generator] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError("noise variance must be non-negative")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)

    def stream(self) -> np.random.Generator:
        if self._stream is None:
            object.__setattr__(self, "_stream", self.generator())
        return self._stream


def make_pilots(
    n_bs: int,
    n_ue: int,
    m_bs: int,
    m_ue: int,
    seed: int,
    amplitude: float = 1.0,
) -> PilotConfig:
    """Random-phase combiner/precoder and S = amplitude * I, deterministic per seed."""
    if min(n_bs, n_ue, m_bs, m_ue) < 1:
        raise DomainError("all pilot dimensions must be at least 1")
    rng = np.random.default_rng(seed)
    W = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(n_bs, m_bs)))
    F = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=(n_ue, m_ue)))
    S = amplitude * np.eye(m_ue, dtype=np.complex128)
    return PilotConfig(W=W, F=F, S=S, G=F @ S, rng_seed=seed)


def _check_channel(H: ComplexMatrix, cfg: PilotConfig) -> ComplexMatrix:
    H = as_matrix(H)
    if H.shape != (cfg.n_bs, cfg.n_ue):
        raise DimensionError(f"channel shape {H.shape} does not match pilots {(cfg.n_bs, cfg.n_ue)}")
    return H


def observe(
    H: ComplexMatrix,
    cfg: PilotConfig,
    noise: NoiseSpec,
    rng: Optional[np.random.Generator] = None,
) -> ComplexMatrix:
    """
    Received pilot matrix Y = W^H H G + N.

    Args:
        H: Channel matrix (N_B x N_U)
        cfg: Pilot configuration
        noise: Noise variance; its own stream is used when no rng is passed
        rng: Generator to draw the noise from

    Returns:
        Y of shape (M_B, M_U)
    """
    H = _check_channel(H, cfg)
    Y = cfg.W.conj().T @ H @ cfg.G
    if noise.variance > 0:
        if rng is None:
            rng = noise.stream()
        scale = np.sqrt(noise.variance / 2.0)
        Y = Y + scale * (rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape))
    return Y


def noise_for_snr(
    channels: Sequence[ComplexMatrix],
    cfg: PilotConfig,
    snr_db: float,
    seed: int = 0,
) -> NoiseSpec:
    """Noise variance giving the requested mean per-entry SNR at the combiner output."""
    if not channels:
        raise DomainError("need at least one reference channel")
    power = np.mean([np.mean(np.abs(cfg.W.conj().T @ H @ cfg.G) ** 2) for H in channels])
    variance = float(power / 10.0 ** (snr_db / 10.0))
    logger.debug("SNR %.1f dB -> noise variance %.4g", snr_db, variance)
    return NoiseSpec(variance=variance, rng_seed=seed)


def flatten_observation(Y: ComplexMatrix) -> np.ndarray:
    """y = [Re vec(Y); Im vec(Y)]."""
    v = vec(Y)
    return np.concatenate([v.real, v.imag])


def unflatten_observation(y, m_bs: int, m_ue: int) -> ComplexMatrix:
    y = np.asarray(y, dtype=float)
    n = m_bs * m_ue
    if y.shape != (2 * n,):
        raise DimensionError(f"observation length {y.shape} does not match {m_bs}x{m_ue}")
    return ivec(y[:n] + 1j * y[n:], m_bs, m_ue)


def measurement_matrix(cfg: PilotConfig) -> ComplexMatrix:
    """M = G^T kron W^H, so vec(W^H H G) = M vec(H)."""
    return kron(cfg.G.T, cfg.W.conj().T)


class LsEstimator:
    """Minimum-norm least-squares estimator with the pseudoinverse computed once."""

    def __init__(self, cfg: PilotConfig, tol: Optional[float] = None):
        self.cfg = cfg
        self.M = measurement_matrix(cfg)
        self.M_pinv = pinv(self.M, tol)

    @property
    def is_determined(self) -> bool:
        return self.cfg.overhead >= self.cfg.n_bs * self.cfg.n_ue

    def estimate(self, Y: ComplexMatrix) -> ComplexMatrix:
        Y = as_matrix(Y)
        if Y.shape != (self.cfg.m_bs, self.cfg.m_ue):
            raise DimensionError(f"observation shape {Y.shape} does not match {(self.cfg.m_bs, self.cfg.m_ue)}")
        return ivec(self.M_pinv @ vec(Y), self.cfg.n_bs, self.cfg.n_ue)


def ls_estimate(Y: ComplexMatrix, cfg: PilotConfig, tol: Optional[float] = None) -> ComplexMatrix:
    """vec(H_hat) = pinv(G^T kron W^H) vec(Y)."""
    return LsEstimator(cfg, tol).estimate(Y)
