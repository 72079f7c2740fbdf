"""LSTM tracking of autoencoder latents from pilot observations, and the direct baseline."""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.autoencoder import AutoencoderModel, postprocess
from src.channel import ChannelSample
from src.errors import DimensionError, DomainError, TrainingError
from src.linalg import ComplexMatrix, ivec, vec
from src.networks import (
    Adam,
    LstmStack,
    Mlp,
    load_checkpoint,
    parameter_checksum,
    prefixed,
    read_sidecar,
    save_checkpoint,
    write_sidecar,
)
from src.signaling import NoiseSpec, PilotConfig, flatten_observation, observe

logger = logging.getLogger(__name__)


@dataclass
class LatentRecord:
    """Latent state and amplitude normalization scalars for one coherence interval."""

    s: np.ndarray
    alpha: float
    beta: float


@dataclass
class TrainingSequence:
    """
    T observations y(t) with their targets.

    Targets are the frozen encoder's latents and the amplitude statistics; the
    true channels are kept for the direct baseline.
    """

    observations: np.ndarray
    latents: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    channels: Optional[np.ndarray] = None

    def __post_init__(self):
        T = self.observations.shape[0]
        if T < 1 or not (self.latents.shape[0] == self.alphas.shape[0] == self.betas.shape[0] == T):
            raise DimensionError("observations and targets must have equal length T >= 1")

    @property
    def T(self) -> int:
        return self.observations.shape[0]

    @property
    def targets(self) -> List[LatentRecord]:
        return [LatentRecord(s, float(a), float(b)) for s, a, b in zip(self.latents, self.alphas, self.betas)]


@dataclass
class TrackerHyper:
    lambda_alpha: float = 0.1
    lambda_beta: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 16
    patience: int = 30
    seed: int = 0
    log_every: int = 25

    def __post_init__(self):
        if self.lambda_alpha < 0 or self.lambda_beta < 0:
            raise DomainError("lambda_alpha and lambda_beta must be non-negative")


def build_sequences(
    trajectories: Sequence[Sequence[ChannelSample]],
    autoencoder: AutoencoderModel,
    pilots: PilotConfig,
    noise: NoiseSpec,
    T: int,
    rng: Optional[np.random.Generator] = None,
) -> List[TrainingSequence]:
    """
    Cut trajectories into non-overlapping T-length windows of observations and targets.

    Each observation gets freshly drawn noise; targets are e(f(H)) from the frozen encoder.
    """
    if (autoencoder.n_bs, autoencoder.n_ue) != (pilots.n_bs, pilots.n_ue):
        raise DimensionError(
            f"autoencoder is for {autoencoder.n_bs}x{autoencoder.n_ue} channels, "
            f"pilots for {pilots.n_bs}x{pilots.n_ue}"
        )
    if T < 1:
        raise DomainError("sequence length must be at least 1")
    rng = rng if rng is not None else noise.generator()

    sequences = []
    for trajectory in trajectories:
        if len(trajectory) < T:
            raise DomainError(f"trajectory of length {len(trajectory)} is shorter than T={T}")
        for start in range(0, len(trajectory) - T + 1, T):
            window = trajectory[start:start + T]
            obs = np.stack([flatten_observation(observe(s.H, pilots, noise, rng)) for s in window])
            latents, alphas, betas = autoencoder.encode_samples(window)
            sequences.append(TrainingSequence(
                observations=obs,
                latents=latents,
                alphas=alphas,
                betas=betas,
                channels=np.stack([s.H for s in window]),
            ))
    return sequences


@dataclass
class _CoreTape:
    g1: object
    lstm: object
    shape: Tuple[int, int]


class _RecurrentCore:
    """Input head g1 followed by the LSTM stack; shared by both trackers."""

    def __init__(self, g1: Mlp, lstm: LstmStack):
        if g1.output_dim != lstm.input_size:
            raise DimensionError(f"g1 gives {g1.output_dim} features, LSTM takes {lstm.input_size}")
        self.g1 = g1
        self.lstm = lstm

    @property
    def observation_dim(self) -> int:
        return self.g1.input_dim

    def _core_parameters(self) -> Dict[str, np.ndarray]:
        return {**prefixed("g1.", self.g1.parameters()), **prefixed("lstm.", self.lstm.parameters())}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def parameters(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def _as_batch(self, observations) -> Tuple[np.ndarray, bool]:
        X = np.asarray(observations, dtype=float)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.observation_dim:
            raise DimensionError(f"observations of shape {X.shape} do not match width {self.observation_dim}")
        return X, single

    def _hidden(self, X: np.ndarray) -> Tuple[np.ndarray, _CoreTape]:
        """Top hidden states, (B, T, d) -> (T*B, hidden) in time-major row order."""
        B, T, d = X.shape
        u, g1_tape = self.g1.forward(X.transpose(1, 0, 2).reshape(T * B, d))
        hs, _, lstm_tape = self.lstm.run(u.reshape(T, B, -1))
        return hs.reshape(T * B, -1), _CoreTape(g1_tape, lstm_tape, (B, T))

    def _hidden_backward(self, tape: _CoreTape, dh: np.ndarray) -> Dict[str, np.ndarray]:
        B, T = tape.shape
        du, lstm_grads = self.lstm.backward(tape.lstm, dh.reshape(T, B, -1))
        _, g1_grads = self.g1.backward(tape.g1, du.reshape(T * B, -1))
        return {**prefixed("g1.", g1_grads), **prefixed("lstm.", lstm_grads)}

    @staticmethod
    def _batch_major(rows: np.ndarray, B: int, T: int) -> np.ndarray:
        return rows.reshape(T, B, -1).transpose(1, 0, 2)

    @staticmethod
    def _time_major(values: np.ndarray) -> np.ndarray:
        B, T = values.shape[:2]
        return values.transpose(1, 0, 2).reshape(T * B, -1)


@dataclass
class TrackerTape:
    core: _CoreTape
    g2: object
    g3: object


class TrackerModel(_RecurrentCore):
    """
    g1 -> LSTM -> (g2: latent, g3: (alpha, beta)).

    No dimension depends on the antenna counts; only the observation width and
    the latent size enter the constructor.
    """

    def __init__(self, g1: Mlp, lstm: LstmStack, g2: Mlp, g3: Mlp):
        super().__init__(g1, lstm)
        if g2.input_dim != lstm.hidden_size or g3.input_dim != lstm.hidden_size:
            raise DimensionError("output heads must read the LSTM hidden state")
        if g3.output_dim != 2:
            raise DimensionError("g3 must output (alpha, beta)")
        self.g2 = g2
        self.g3 = g3

    @classmethod
    def build(
        cls,
        observation_dim: int,
        latent_dim: int,
        hidden_size: int = 64,
        num_layers: int = 3,
        head_width: int = 128,
        seed: int = 0,
    ) -> "TrackerModel":
        rng = np.random.default_rng(seed)
        g1 = Mlp.build([observation_dim, head_width, hidden_size], rng)
        lstm = LstmStack(hidden_size, hidden_size, num_layers, rng)
        g2 = Mlp.build([hidden_size, head_width, latent_dim], rng)
        g3 = Mlp.build([hidden_size, head_width, 2], rng)
        return cls(g1, lstm, g2, g3)

    @property
    def latent_dim(self) -> int:
        return self.g2.output_dim

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            **self._core_parameters(),
            **prefixed("g2.", self.g2.parameters()),
            **prefixed("g3.", self.g3.parameters()),
        }

    def forward_batch(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, TrackerTape]:
        """(B, T, obs) -> latents (B, T, S), scalars (B, T, 2)."""
        B, T, _ = X.shape
        h, core_tape = self._hidden(X)
        s, g2_tape = self.g2.forward(h)
        ab, g3_tape = self.g3.forward(h)
        return self._batch_major(s, B, T), self._batch_major(ab, B, T), TrackerTape(core_tape, g2_tape, g3_tape)

    def backward_batch(self, tape: TrackerTape, ds: np.ndarray, dab: np.ndarray) -> Dict[str, np.ndarray]:
        dh2, g2_grads = self.g2.backward(tape.g2, self._time_major(ds))
        dh3, g3_grads = self.g3.backward(tape.g3, self._time_major(dab))
        return {
            **self._hidden_backward(tape.core, dh2 + dh3),
            **prefixed("g2.", g2_grads),
            **prefixed("g3.", g3_grads),
        }

    def save(self, path, meta: Optional[Dict] = None) -> Path:
        path = save_checkpoint(path, self.parameters())
        write_sidecar(path, {
            "observation_dim": self.observation_dim,
            "latent_dim": self.latent_dim,
            "hidden_size": self.lstm.hidden_size,
            "num_layers": self.lstm.num_layers,
            "g1": self.g1.spec(),
            "g2": self.g2.spec(),
            "g3": self.g3.spec(),
            **(meta or {}),
        })
        return path

    @classmethod
    def load(cls, path) -> "TrackerModel":
        tensors = load_checkpoint(path)
        meta = read_sidecar(path)
        lstm = LstmStack(meta["hidden_size"], meta["hidden_size"], meta["num_layers"])
        lstm.load_tensors(tensors, prefix="lstm.")
        return cls(
            Mlp.from_tensors(tensors, meta["g1"]["activations"], prefix="g1."),
            lstm,
            Mlp.from_tensors(tensors, meta["g2"]["activations"], prefix="g2."),
            Mlp.from_tensors(tensors, meta["g3"]["activations"], prefix="g3."),
        )


def tracker_forward(model: TrackerModel, observations) -> Tuple[List[LatentRecord], TrackerTape]:
    """
    Causal estimates (s_hat, alpha_hat, beta_hat) for each y(t), states starting at zero.

    Args:
        model: Tracker
        observations: (T, 2*M_B*M_U) array or list of y vectors
    """
    X, _ = model._as_batch(np.asarray(observations, dtype=float))
    if X.shape[0] != 1:
        raise DimensionError("tracker_forward takes one sequence")
    s, ab, tape = model.forward_batch(X)
    records = [LatentRecord(s[0, t].copy(), float(ab[0, t, 0]), float(ab[0, t, 1])) for t in range(X.shape[1])]
    return records, tape


def _stack(sequences: Sequence[TrainingSequence], field: str) -> np.ndarray:
    lengths = {seq.T for seq in sequences}
    if len(lengths) != 1:
        raise DimensionError(f"sequences in a batch must share T, got lengths {sorted(lengths)}")
    return np.stack([getattr(seq, field) for seq in sequences])


def loss_lstm(
    model: TrackerModel,
    seq: Union[TrainingSequence, Sequence[TrainingSequence]],
    hyper: TrackerHyper,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    (1/T) sum_t ||s - s_hat||^2 + la*(alpha - alpha_hat)^2 + lb*(beta - beta_hat)^2.

    A list of sequences averages this over the batch; gradients use full BPTT.
    """
    sequences = [seq] if isinstance(seq, TrainingSequence) else list(seq)
    if not sequences:
        raise DomainError("empty sequence batch")
    X = _stack(sequences, "observations")
    S = _stack(sequences, "latents")
    AB = np.stack([_stack(sequences, "alphas"), _stack(sequences, "betas")], axis=-1)
    if S.shape[2] != model.latent_dim:
        raise DimensionError(f"targets have {S.shape[2]} latents, tracker predicts {model.latent_dim}")

    B, T = X.shape[:2]
    s_hat, ab_hat, tape = model.forward_batch(X)
    weights = np.array([hyper.lambda_alpha, hyper.lambda_beta])
    ds = s_hat - S
    dab = ab_hat - AB
    loss = float((np.sum(ds * ds) + np.sum(weights * dab * dab)) / (B * T))
    grads = model.backward_batch(tape, 2.0 * ds / (B * T), 2.0 * weights * dab / (B * T))
    return loss, grads


LossFn = Callable[[Sequence[TrainingSequence]], Tuple[float, Dict[str, np.ndarray]]]


def _fit(
    model: _RecurrentCore,
    loss_fn: LossFn,
    sequences: Sequence[TrainingSequence],
    hyper: TrackerHyper,
    label: str,
) -> pd.DataFrame:
    """Adam over shuffled sequence batches with early stopping; restores the best parameters."""
    if not sequences:
        raise DomainError("no training sequences")
    rng = np.random.default_rng(hyper.seed)
    params = model.parameters()
    optimizer = Adam(hyper.learning_rate)
    n_batches = max(1, int(np.ceil(len(sequences) / hyper.batch_size)))

    history = []
    best_loss, best_epoch = np.inf, 0
    best_params = {k: v.copy() for k, v in params.items()}
    for epoch in range(hyper.epochs + 1):
        total = 0.0
        for idx in np.array_split(rng.permutation(len(sequences)), n_batches):
            loss, grads = loss_fn([sequences[i] for i in idx])
            if epoch > 0:
                optimizer.step(params, grads)
            total += loss
        loss = total / n_batches
        history.append({"epoch": epoch, "loss": loss})

        if not np.isfinite(loss):
            raise TrainingError(f"{label} loss diverged", epoch)
        if hyper.log_every and epoch % hyper.log_every == 0:
            logger.info("%s epoch %d: loss=%.5f", label, epoch, loss)
        if loss < best_loss:
            best_loss, best_epoch = loss, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        elif epoch - best_epoch >= hyper.patience:
            logger.info("%s early stop at epoch %d (best %d)", label, epoch, best_epoch)
            break

    for k, v in params.items():
        v[...] = best_params[k]
    return pd.DataFrame(history)


def train_tracker(
    sequences: Sequence[TrainingSequence],
    model: TrackerModel,
    hyper: TrackerHyper,
    frozen_decoder: Optional[Mlp] = None,
) -> Tuple[TrackerModel, pd.DataFrame]:
    """
    Train g1, the LSTM, g2 and g3 on L_LSTM; the decoder is never touched.

    Raises:
        TrainingError: on divergence, or if the frozen decoder's checksum changed
    """
    before = parameter_checksum(frozen_decoder.parameters()) if frozen_decoder is not None else None
    history = _fit(model, lambda batch: loss_lstm(model, batch, hyper), sequences, hyper, "tracker")
    if frozen_decoder is not None and parameter_checksum(frozen_decoder.parameters()) != before:
        raise TrainingError("decoder parameters changed during tracker training")
    return model, history


def decode_records(decoder: Mlp, records: Sequence[LatentRecord], shape: Tuple[int, int]) -> List[ComplexMatrix]:
    """H_hat = f^-1(d(s), alpha, beta) for each record."""
    if decoder.output_dim != 2 * shape[0] * shape[1]:
        raise DimensionError(f"decoder output {decoder.output_dim} does not match channel shape {shape}")
    V = decoder(np.stack([r.s for r in records]))
    return [postprocess(v, r.alpha, r.beta, *shape) for v, r in zip(V, records)]


def infer_channels(
    tracker: TrackerModel,
    decoder: Mlp,
    observations,
    shape: Tuple[int, int],
) -> List[ComplexMatrix]:
    """Channel estimates for each interval: tracker, then decoder, then postprocessing."""
    if decoder.input_dim != tracker.latent_dim:
        raise DimensionError(f"decoder takes {decoder.input_dim} latents, tracker gives {tracker.latent_dim}")
    records, _ = tracker_forward(tracker, observations)
    return decode_records(decoder, records, shape)


def flatten_channel(H: ComplexMatrix) -> np.ndarray:
    v = vec(H)
    return np.concatenate([v.real, v.imag])


def unflatten_channel(y: np.ndarray, shape: Tuple[int, int]) -> ComplexMatrix:
    n = shape[0] * shape[1]
    return ivec(y[:n] + 1j * y[n:], *shape)


class DirectTracker(_RecurrentCore):
    """
    Direct channel tracking benchmark: g1 -> LSTM -> head regressing [Re vec H; Im vec H].

    The output head has one hidden layer whose width defaults to the output width,
    so its size grows with the antenna counts.
    """

    def __init__(self, g1: Mlp, lstm: LstmStack, head: Mlp, shape: Tuple[int, int]):
        super().__init__(g1, lstm)
        if head.input_dim != lstm.hidden_size or head.output_dim != 2 * shape[0] * shape[1]:
            raise DimensionError("direct head does not match the LSTM and channel shape")
        self.head = head
        self.shape = tuple(shape)

    @classmethod
    def build(
        cls,
        observation_dim: int,
        shape: Tuple[int, int],
        hidden_size: int = 64,
        num_layers: int = 3,
        head_width: int = 128,
        output_head_width: Optional[int] = None,
        seed: int = 0,
    ) -> "DirectTracker":
        rng = np.random.default_rng(seed)
        out = 2 * shape[0] * shape[1]
        g1 = Mlp.build([observation_dim, head_width, hidden_size], rng)
        lstm = LstmStack(hidden_size, hidden_size, num_layers, rng)
        head = Mlp.build([hidden_size, output_head_width or out, out], rng)
        return cls(g1, lstm, head, shape)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {**self._core_parameters(), **prefixed("head.", self.head.parameters())}

    def forward_batch(self, X: np.ndarray):
        B, T, _ = X.shape
        h, core_tape = self._hidden(X)
        y, head_tape = self.head.forward(h)
        return self._batch_major(y, B, T), (core_tape, head_tape)

    def backward_batch(self, tape, dy: np.ndarray) -> Dict[str, np.ndarray]:
        core_tape, head_tape = tape
        dh, head_grads = self.head.backward(head_tape, self._time_major(dy))
        return {**self._hidden_backward(core_tape, dh), **prefixed("head.", head_grads)}

    def save(self, path, meta: Optional[Dict] = None) -> Path:
        path = save_checkpoint(path, self.parameters())
        write_sidecar(path, {
            "shape": list(self.shape),
            "hidden_size": self.lstm.hidden_size,
            "num_layers": self.lstm.num_layers,
            "g1": self.g1.spec(),
            "head": self.head.spec(),
            **(meta or {}),
        })
        return path

    @classmethod
    def load(cls, path) -> "DirectTracker":
        tensors = load_checkpoint(path)
        meta = read_sidecar(path)
        lstm = LstmStack(meta["hidden_size"], meta["hidden_size"], meta["num_layers"])
        lstm.load_tensors(tensors, prefix="lstm.")
        return cls(
            Mlp.from_tensors(tensors, meta["g1"]["activations"], prefix="g1."),
            lstm,
            Mlp.from_tensors(tensors, meta["head"]["activations"], prefix="head."),
            tuple(meta["shape"]),
        )


def loss_direct(model: DirectTracker, sequences: Sequence[TrainingSequence]) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean over sequences and steps of ||flat(H) - y_hat||^2."""
    X = _stack(sequences, "observations")
    channels = _stack(sequences, "channels")
    B, T = X.shape[:2]
    target = np.stack([[flatten_channel(H) for H in seq] for seq in channels])
    y, tape = model.forward_batch(X)
    diff = y - target
    loss = float(np.sum(diff * diff) / (B * T))
    return loss, model.backward_batch(tape, 2.0 * diff / (B * T))


def train_direct(
    sequences: Sequence[TrainingSequence],
    model: DirectTracker,
    hyper: TrackerHyper,
) -> Tuple[DirectTracker, pd.DataFrame]:
    if any(seq.channels is None for seq in sequences):
        raise DomainError("direct tracking needs the true channels in every sequence")
    history = _fit(model, lambda batch: loss_direct(model, batch), sequences, hyper, "direct")
    return model, history


def infer_direct(model: DirectTracker, observations) -> List[ComplexMatrix]:
    X, _ = model._as_batch(observations)
    y, _ = model.forward_batch(X)
    return [unflatten_channel(row, model.shape) for row in y[0]]


def hyper_from_settings(settings: Dict, **overrides) -> TrackerHyper:
    fields = TrackerHyper.__dataclass_fields__
    values = {k: v for k, v in settings.items() if k in fields}
    values.update(overrides)
    return TrackerHyper(**values)


def tracker_meta(hyper: TrackerHyper, pilot_seed: int) -> Dict:
    return {
        "lambda_alpha": hyper.lambda_alpha,
        "lambda_beta": hyper.lambda_beta,
        "pilot_seed": pilot_seed,
        "hyper": asdict(hyper),
    }
