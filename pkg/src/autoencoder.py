"""Channel autoencoder: amplitude/phase preprocessing, L_CI and L_TC losses, training."""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

import config
from src.channel import ChannelSample
from src.errors import DimensionError, DomainError, TrainingError
from src.linalg import ComplexMatrix, as_matrix, ivec, vec
from src.networks import (
    Adam,
    Mlp,
    load_checkpoint,
    prefixed,
    read_sidecar,
    save_checkpoint,
    write_sidecar,
    zero_like_grads,
)

logger = logging.getLogger(__name__)


@dataclass
class PreprocResult:
    """Normalized vector v = [amplitude part; phase part] and the amplitude statistics."""

    v: np.ndarray
    alpha: float
    beta: float
    beta_guarded: bool = False


def _guarded_std(x: np.ndarray) -> Tuple[float, bool]:
    sd = float(np.std(x))
    if sd < config.STD_GUARD:
        return 1.0, True
    return sd, False


def preprocess(H: ComplexMatrix) -> PreprocResult:
    """
    f(H): v = [(vec|H| - alpha)/beta ; vec(arg H)/pi].

    alpha and beta are the mean and population std of all amplitudes; a vanishing
    beta is replaced by 1 and flagged.
    """
    H = as_matrix(H)
    amp = np.abs(vec(H))
    phase = np.angle(vec(H))
    phase[phase <= -np.pi] = np.pi

    alpha = float(np.mean(amp))
    beta, guarded = _guarded_std(amp)
    v = np.concatenate([(amp - alpha) / beta, phase / np.pi])
    return PreprocResult(v=v, alpha=alpha, beta=beta, beta_guarded=guarded)


def postprocess(v, alpha: float, beta: float, n_bs: int, n_ue: int) -> ComplexMatrix:
    """f^-1: H = (beta*ivec(v_amp) + alpha) * exp(j*pi*ivec(v_phase)); negative amplitudes pass through."""
    v = np.asarray(v, dtype=float)
    n = n_bs * n_ue
    if v.shape != (2 * n,):
        raise DimensionError(f"vector of length {v.size} does not match a {n_bs}x{n_ue} channel")
    amp = beta * ivec(v[:n], n_bs, n_ue).real + alpha
    phase = np.pi * ivec(v[n:], n_bs, n_ue).real
    return amp * np.exp(1j * phase)


def preprocess_samples(samples: Sequence[ChannelSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack f(H) over samples: (V, alphas, betas, positions)."""
    results = [preprocess(s.H) for s in samples]
    guarded = sum(r.beta_guarded for r in results)
    if guarded:
        logger.warning("%d of %d channels have constant amplitude; beta guard applied", guarded, len(results))
    V = np.stack([r.v for r in results])
    alphas = np.array([r.alpha for r in results])
    betas = np.array([r.beta for r in results])
    P = np.stack([np.asarray(s.p, dtype=float) for s in samples])
    return V, alphas, betas, P


@dataclass
class AeHyper:
    lambda_tc: float = 0.1
    perturb_std: float = 0.05
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 500
    patience: int = 50
    seed: int = 0
    full_batch_tc: bool = False
    log_every: int = 25

    def __post_init__(self):
        if self.lambda_tc < 0 or self.perturb_std < 0:
            raise DomainError("lambda_tc and perturb_std must be non-negative")
        if self.batch_size < 2:
            raise DomainError("batch size must be at least 2 for the distance loss")


class AutoencoderModel:
    """Encoder e: 2*N_B*N_U -> S and decoder d: S -> 2*N_B*N_U."""

    def __init__(self, encoder: Mlp, decoder: Mlp, n_bs: int, n_ue: int):
        if encoder.output_dim != decoder.input_dim:
            raise DimensionError(f"encoder gives {encoder.output_dim} latents, decoder takes {decoder.input_dim}")
        if encoder.input_dim != 2 * n_bs * n_ue or decoder.output_dim != 2 * n_bs * n_ue:
            raise DimensionError(f"networks do not match a {n_bs}x{n_ue} channel")
        self.encoder = encoder
        self.decoder = decoder
        self.n_bs = n_bs
        self.n_ue = n_ue

    @classmethod
    def build(
        cls,
        n_bs: int,
        n_ue: int,
        latent_dim: int,
        encoder_widths: Sequence[int],
        decoder_widths: Sequence[int],
        seed: int = 0,
    ) -> "AutoencoderModel":
        """ReLU hidden layers, linear outputs, Glorot-uniform weights."""
        rng = np.random.default_rng(seed)
        n = 2 * n_bs * n_ue
        encoder = Mlp.build([n, *encoder_widths, latent_dim], rng)
        decoder = Mlp.build([latent_dim, *decoder_widths, n], rng)
        return cls(encoder, decoder, n_bs, n_ue)

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    def parameters(self) -> Dict[str, np.ndarray]:
        return {**prefixed("enc.", self.encoder.parameters()), **prefixed("dec.", self.decoder.parameters())}

    def encode(self, V) -> np.ndarray:
        return self.encoder(V)

    def decode(self, S) -> np.ndarray:
        return self.decoder(S)

    def encode_samples(self, samples: Sequence[ChannelSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Latents s = e(f(H)) with alpha, beta for each sample."""
        V, alphas, betas, _ = preprocess_samples(samples)
        return self.encode(V), alphas, betas

    def reconstruct(self, H: ComplexMatrix, noise: Optional[np.ndarray] = None) -> ComplexMatrix:
        pre = preprocess(H)
        s = self.encode(pre.v)
        if noise is not None:
            s = s + noise
        return postprocess(self.decode(s), pre.alpha, pre.beta, self.n_bs, self.n_ue)

    def save(self, path, meta: Optional[Dict] = None) -> Path:
        path = save_checkpoint(path, self.parameters())
        write_sidecar(path, {
            "n_bs": self.n_bs,
            "n_ue": self.n_ue,
            "latent_dim": self.latent_dim,
            "encoder": self.encoder.spec(),
            "decoder": self.decoder.spec(),
            **(meta or {}),
        })
        return path

    @classmethod
    def load(cls, path) -> "AutoencoderModel":
        tensors = load_checkpoint(path)
        meta = read_sidecar(path)
        encoder = Mlp.from_tensors(tensors, meta["encoder"]["activations"], prefix="enc.")
        decoder = Mlp.from_tensors(tensors, meta["decoder"]["activations"], prefix="dec.")
        return cls(encoder, decoder, meta["n_bs"], meta["n_ue"])


def _ci_arrays(model: AutoencoderModel, V: np.ndarray, noise: np.ndarray):
    s, enc_tape = model.encoder.forward(V)
    y, dec_tape = model.decoder.forward(s + noise)
    diff = y - V
    loss = float(np.sum(diff * diff) / V.shape[0])
    ds, dec_grads = model.decoder.backward(dec_tape, 2.0 * diff / V.shape[0])
    _, enc_grads = model.encoder.backward(enc_tape, ds)
    return loss, {**prefixed("enc.", enc_grads), **prefixed("dec.", dec_grads)}


def loss_ci(
    model: AutoencoderModel,
    batch: Sequence[ChannelSample],
    perturb_std: float,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Reconstruction loss mean_k ||f(H_k) - d(e(f(H_k)) + n_k)||^2.

    n_k ~ N(0, perturb_std^2 I) is drawn per sample and treated as a constant.
    """
    if not batch:
        raise DomainError("empty batch")
    V = preprocess_samples(batch)[0]
    noise = np.zeros((V.shape[0], model.latent_dim))
    if perturb_std > 0:
        rng = rng if rng is not None else np.random.default_rng()
        noise = perturb_std * rng.standard_normal(noise.shape)
    return _ci_arrays(model, V, noise)


def _standardize(x: np.ndarray) -> Tuple[np.ndarray, float, bool]:
    sd, guarded = _guarded_std(x)
    return (x - x.mean()) / sd, sd, guarded


def _standardize_backward(dz: np.ndarray, z: np.ndarray, sd: float, guarded: bool) -> np.ndarray:
    """Gradient through z = (x - mean x) / std x with population statistics."""
    if guarded:
        return dz - dz.mean()
    return (dz - dz.mean() - z * np.mean(dz * z)) / sd


def _tc_arrays(model: AutoencoderModel, V: np.ndarray, P: np.ndarray):
    if V.shape[0] < 2:
        raise DomainError("the distance loss needs at least two samples")
    Z, tape = model.encoder.forward(V)
    D, sd_d, guarded = _standardize(cdist(Z, Z, "sqeuclidean"))
    B, _, _ = _standardize(cdist(P, P, "sqeuclidean"))

    R = D - B
    loss = float(np.sum(R * R))
    dD_bar = _standardize_backward(2.0 * R, D, sd_d, guarded)

    # d/dz_i of ||z_i - z_j||^2 summed over both index roles
    A = dD_bar + dD_bar.T
    dZ = 2.0 * (A.sum(axis=1)[:, None] * Z - A @ Z)
    _, enc_grads = model.encoder.backward(tape, dZ)
    grads = {**prefixed("enc.", enc_grads), **prefixed("dec.", zero_like_grads(model.decoder.parameters()))}
    return loss, grads


def loss_tc(model: AutoencoderModel, batch: Sequence[ChannelSample]) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Distance-matching loss ||D - B||_F^2.

    D and B are the standardized (population mean/std over all K_b^2 entries)
    squared-distance matrices of the latents and of the user positions.
    """
    if len(batch) < 2:
        raise DomainError("the distance loss needs at least two samples")
    V, _, _, P = preprocess_samples(batch)
    return _tc_arrays(model, V, P)


def _add_scaled(total: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], scale: float):
    for k, g in grads.items():
        total[k] += scale * g


def _batches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled near-equal batches, none smaller than batch_size (or the dataset)."""
    order = rng.permutation(count)
    return np.array_split(order, max(1, count // batch_size))


def train_autoencoder(
    dataset: Sequence[ChannelSample],
    hyper: AeHyper,
    model: AutoencoderModel,
) -> Tuple[AutoencoderModel, pd.DataFrame]:
    """
    Minimize L_CI + lambda * L_TC with Adam over shuffled mini-batches.

    Epoch 0 of the returned history evaluates the untrained model on the same
    schedule. Training stops after `patience` epochs without improvement and the
    best parameters are restored.

    Args:
        dataset: Channel samples with positions
        hyper: Loss weights and optimizer settings
        model: Freshly built (or pretrained) autoencoder, updated in place

    Returns:
        (model, history with columns epoch, loss_ci, loss_tc, loss_total)
    """
    if len(dataset) < 2:
        raise DomainError("training needs at least two samples")
    V, _, _, P = preprocess_samples(dataset)
    full_tc = hyper.full_batch_tc and len(dataset) <= 256
    if hyper.full_batch_tc and not full_tc:
        logger.warning("full-batch distance loss is limited to 256 samples; using mini-batches")

    rng = np.random.default_rng(hyper.seed)
    params = model.parameters()
    optimizer = Adam(hyper.learning_rate)
    use_tc = hyper.lambda_tc > 0

    history = []
    best_total, best_epoch = np.inf, 0
    best_params = {k: v.copy() for k, v in params.items()}

    for epoch in range(hyper.epochs + 1):
        sums = {"loss_ci": 0.0, "loss_tc": 0.0}
        batches = _batches(len(dataset), hyper.batch_size, rng)
        for idx in batches:
            noise = hyper.perturb_std * rng.standard_normal((idx.size, model.latent_dim))
            ci, grads = _ci_arrays(model, V[idx], noise)
            tc = 0.0
            if use_tc:
                tc_idx = np.arange(len(dataset)) if full_tc else idx
                tc, tc_grads = _tc_arrays(model, V[tc_idx], P[tc_idx])
                _add_scaled(grads, tc_grads, hyper.lambda_tc)
            if epoch > 0:
                optimizer.step(params, grads)
            sums["loss_ci"] += ci
            sums["loss_tc"] += tc

        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}}
        row["loss_total"] = row["loss_ci"] + hyper.lambda_tc * row["loss_tc"]
        history.append(row)

        if not np.isfinite(row["loss_total"]):
            raise TrainingError("autoencoder loss diverged", epoch)
        if hyper.log_every and epoch % hyper.log_every == 0:
            logger.info(
                "ae epoch %d: L_CI=%.5f L_TC=%.5f total=%.5f",
                epoch, row["loss_ci"], row["loss_tc"], row["loss_total"],
            )

        if row["loss_total"] < best_total:
            best_total, best_epoch = row["loss_total"], epoch
            best_params = {k: v.copy() for k, v in params.items()}
        elif epoch - best_epoch >= hyper.patience:
            logger.info("ae early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    for k, v in params.items():
        v[...] = best_params[k]
    return model, pd.DataFrame(history)


def latent_smoothness(model: AutoencoderModel, trajectory: Sequence[ChannelSample]) -> np.ndarray:
    """d(t) = ||s(t) - s(0)|| normalized by its maximum; all zeros if the latent never moves."""
    if len(trajectory) < 2:
        raise DomainError("trajectory needs at least two samples")
    S, _, _ = model.encode_samples(trajectory)
    d = np.linalg.norm(S - S[0], axis=1)
    peak = d.max()
    if peak <= 0:
        return np.zeros_like(d)
    return d / peak


def hyper_from_settings(settings: Dict, **overrides) -> AeHyper:
    """AeHyper from a settings mapping, ignoring architecture keys."""
    fields = AeHyper.__dataclass_fields__
    values = {k: v for k, v in settings.items() if k in fields}
    values.update(overrides)
    return AeHyper(**values)


def hyper_meta(hyper: AeHyper) -> Dict:
    return {"lambda_tc": hyper.lambda_tc, "perturb_std": hyper.perturb_std, "seed": hyper.seed, "hyper": asdict(hyper)}
