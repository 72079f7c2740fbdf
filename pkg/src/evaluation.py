"""NMSE metrics, the experiment runner and the recipes behind the CLI subcommands."""

import hashlib
import json
import logging
import math
import subprocess
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import config
from src import __version__
from src.autoencoder import (
    AutoencoderModel,
    hyper_from_settings as ae_hyper_from_settings,
    hyper_meta,
    latent_smoothness,
    loss_ci,
    loss_tc,
    train_autoencoder,
)
from src.channel import (
    ChannelSample,
    gen_dataset,
    gen_trajectory,
    load_dataset,
    random_trajectories,
    read_dataset_header,
    save_dataset,
)
from src.errors import ChantrackError, DimensionError, DomainError, StageError
from src.linalg import ComplexMatrix, as_matrix, fro_norm
from src.networks import LstmStack, Mlp, grad_check, mean_squared, read_sidecar, write_sidecar
from src.report_builder import (
    NmseReport,
    build_frame,
    nmse_report,
    parameter_growth,
    parameter_table,
    spearman_summary,
    write_csv,
    write_history,
)
from src.settings import ExperimentConfig
from src.signaling import (
    LsEstimator,
    NoiseSpec,
    PilotConfig,
    flatten_observation,
    make_pilots,
    noise_for_snr,
    observe,
)
from src.tracker import (
    DirectTracker,
    TrackerHyper,
    TrackerModel,
    TrainingSequence,
    build_sequences,
    hyper_from_settings as tracker_hyper_from_settings,
    infer_channels,
    infer_direct,
    loss_direct,
    loss_lstm,
    tracker_meta,
    train_direct,
    train_tracker,
)

logger = logging.getLogger(__name__)

# Failures that get tagged with the stage they happened in
STAGE_ERRORS = (ChantrackError, OSError)

# Channels used to calibrate the noise variance to the configured SNR
SNR_REFERENCE_SAMPLES = 200

GRADIENT_TOLERANCE = 1e-4


def nmse_db(H_hat: ComplexMatrix, H: ComplexMatrix) -> float:
    """10*log10(||H_hat - H||_F^2 / ||H||_F^2), clamped below at NMSE_FLOOR_DB."""
    H_hat = as_matrix(H_hat)
    H = as_matrix(H)
    if H_hat.shape != H.shape:
        raise DimensionError(f"estimate shape {H_hat.shape} does not match channel {H.shape}")
    power = fro_norm(H) ** 2
    if power == 0:
        raise DomainError("NMSE is undefined for an all-zero channel")
    ratio = fro_norm(H_hat - H) ** 2 / power
    if ratio <= 0:
        return config.NMSE_FLOOR_DB
    return max(10.0 * math.log10(ratio), config.NMSE_FLOOR_DB)


def nmse_curve(estimates: Sequence[ComplexMatrix], truths: Sequence[ChannelSample]) -> np.ndarray:
    if len(estimates) != len(truths):
        raise DimensionError(f"{len(estimates)} estimates for {len(truths)} channels")
    return np.array([nmse_db(H_hat, s.H) for H_hat, s in zip(estimates, truths)])


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag failures inside the block with the stage name."""
    try:
        yield
    except StageError:
        raise
    except STAGE_ERRORS as e:
        raise StageError(name, e) from e


def version_string() -> str:
    """Package version, plus `git describe` when run from a checkout."""
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    tag = described.stdout.strip()
    return f"{__version__}+{tag}" if described.returncode == 0 and tag else __version__


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, Path):
        return str(value)
    return value


class ExperimentRunner:
    """
    Builds, trains and caches every artifact of one experiment directory.

    Datasets (CHDS) and checkpoints (NNCK) are written to the output directory
    with a JSON sidecar holding a digest of the config sections they depend on.
    A later run with a matching digest loads them instead of recomputing, which
    is how the CLI stages compose.
    """

    def __init__(self, cfg: ExperimentConfig, max_epochs: Optional[int] = None):
        self.cfg = cfg
        self.out_dir = Path(cfg.out_dir)
        self.max_epochs = max_epochs
        self.scene = cfg.scene.scene()
        self.region = cfg.scene.region()
        self.region.validate()
        self.shape = self.scene.channel_shape
        self._cache: Dict[str, Any] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _digest(self, *sections: str, **extra) -> str:
        payload = {name: asdict(getattr(self.cfg, name)) for name in sections}
        payload.update(extra)
        encoded = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(encoded).hexdigest()[:16]

    def _is_fresh(self, path: Path, digest: str) -> bool:
        if not path.exists():
            return False
        try:
            meta = read_sidecar(path)
        except (OSError, ValueError):
            return False
        if meta.get("config_digest") != digest:
            logger.warning("%s was built from another config; rebuilding", path)
            return False
        logger.info("Reusing %s", path)
        return True

    def _cached(self, key: str, build: Callable[[], Any]) -> Any:
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def _epochs(self, configured: int) -> int:
        return configured if self.max_epochs is None else min(configured, self.max_epochs)

    # Data

    def _samples(self, name: str, digest: str, make: Callable[[], List[ChannelSample]]) -> List[ChannelSample]:
        path = self.path(name)
        if self._is_fresh(path, digest):
            header = read_dataset_header(path)
            if (header.n_bs, header.n_ue) == self.shape:
                return load_dataset(path)
        samples = make()
        save_dataset(path, samples, self.scene.carrier)
        write_sidecar(path, {"config_digest": digest, "count": len(samples), "shape": list(self.shape)})
        return samples

    def dataset(self) -> List[ChannelSample]:
        def build():
            with stage("gen-data"):
                return self._samples(
                    "dataset.chds",
                    self._digest("scene"),
                    lambda: gen_dataset(self.scene, self.region, self.cfg.scene.num_samples),
                )
        return self._cached("dataset", build)

    def eval_trajectory(self) -> List[ChannelSample]:
        traj = self.cfg.trajectory

        def build():
            with stage("gen-data"):
                return self._samples(
                    "trajectory.chds",
                    self._digest("scene", "trajectory"),
                    lambda: gen_trajectory(
                        self.scene, traj.eval_start, traj.eval_velocity, traj.length, traj.dt, self.region
                    ),
                )
        return self._cached("trajectory", build)

    def training_trajectories(self) -> List[List[ChannelSample]]:
        traj = self.cfg.trajectory

        def build():
            with stage("gen-data"):
                return random_trajectories(
                    self.scene, self.region, traj.num_training, traj.length, traj.dt,
                    seed=self.cfg.scene.rng_seed + 1,
                )
        return self._cached("training_trajectories", build)

    def pilots(self) -> PilotConfig:
        p = self.cfg.pilots
        return self._cached(
            "pilots",
            lambda: make_pilots(*self.shape, p.m_bs, p.m_ue, seed=p.rng_seed, amplitude=p.amplitude),
        )

    def noise(self) -> NoiseSpec:
        """Noise at the configured SNR, calibrated on the first dataset channels."""
        def build():
            reference = [s.H for s in self.dataset()[:SNR_REFERENCE_SAMPLES]]
            return noise_for_snr(reference, self.pilots(), self.cfg.pilots.snr_db, seed=self.cfg.pilots.rng_seed + 1)
        return self._cached("noise", build)

    def eval_observations(self) -> List[ComplexMatrix]:
        """Pilot observations of the evaluation trajectory, shared by every method."""
        def build():
            noise = NoiseSpec(self.noise().variance, rng_seed=self.cfg.pilots.rng_seed + 2)
            rng = noise.generator()
            return [observe(s.H, self.pilots(), noise, rng) for s in self.eval_trajectory()]
        return self._cached("eval_observations", build)

    # Models

    def autoencoder(self, tag: str) -> Tuple[AutoencoderModel, Optional[pd.DataFrame]]:
        """The autoencoder trained with (tag "tc") or without (tag "notc") the distance loss."""
        if tag not in ("tc", "notc"):
            raise DomainError(f"unknown autoencoder variant {tag!r}")
        return self._cached(f"ae_{tag}", lambda: self._train_autoencoder(tag))

    def _train_autoencoder(self, tag: str):
        settings = self.cfg.autoencoder
        path = self.path(f"ae_{tag}.nnck")
        digest = self._digest("scene", "autoencoder", variant=tag, max_epochs=self.max_epochs)
        with stage("train-ae"):
            if self._is_fresh(path, digest):
                return AutoencoderModel.load(path), None
            overrides = {"epochs": self._epochs(settings.epochs), "log_every": self.cfg.experiment.log_every}
            if tag == "notc":
                overrides["lambda_tc"] = 0.0
            hyper = ae_hyper_from_settings(asdict(settings), **overrides)
            model = AutoencoderModel.build(
                *self.shape, settings.latent_dim, settings.encoder_widths, settings.decoder_widths, seed=settings.seed
            )
            logger.info("Training autoencoder %s (lambda_tc=%g)", tag, hyper.lambda_tc)
            model, history = train_autoencoder(self.dataset(), hyper, model)
            model.save(path, {**hyper_meta(hyper), "config_digest": digest})
            write_history(history, self.path(f"ae_{tag}_history.csv"))
            return model, history

    def sequences(self, tag: str) -> List[TrainingSequence]:
        def build():
            ae, _ = self.autoencoder(tag)
            with stage("train-tracker"):
                rng = np.random.default_rng(self.cfg.pilots.rng_seed + 3)
                return build_sequences(
                    self.training_trajectories(), ae, self.pilots(), self.noise(), self.cfg.trajectory.length, rng
                )
        return self._cached(f"sequences_{tag}", build)

    def _tracker_hyper(self):
        settings = self.cfg.tracker
        return tracker_hyper_from_settings(
            asdict(settings), epochs=self._epochs(settings.epochs), log_every=self.cfg.experiment.log_every
        )

    def tracker(self, tag: str) -> Tuple[TrackerModel, Optional[pd.DataFrame]]:
        return self._cached(f"tracker_{tag}", lambda: self._train_tracker(tag))

    def _train_tracker(self, tag: str):
        settings = self.cfg.tracker
        ae, _ = self.autoencoder(tag)
        path = self.path(f"tracker_{tag}.nnck")
        digest = self._digest(
            "scene", "pilots", "autoencoder", "tracker", "trajectory", variant=tag, max_epochs=self.max_epochs
        )
        with stage("train-tracker"):
            if self._is_fresh(path, digest):
                return TrackerModel.load(path), None
            sequences = self.sequences(tag)
            hyper = self._tracker_hyper()
            model = TrackerModel.build(
                self.pilots().observation_dim, ae.latent_dim,
                settings.hidden_size, settings.num_layers, settings.head_width, seed=settings.seed,
            )
            logger.info("Training tracker on %d sequences (%s autoencoder)", len(sequences), tag)
            model, history = train_tracker(sequences, model, hyper, frozen_decoder=ae.decoder)
            model.save(path, {**tracker_meta(hyper, self.cfg.pilots.rng_seed), "config_digest": digest})
            write_history(history, self.path(f"tracker_{tag}_history.csv"))
            return model, history

    def direct(self) -> Tuple[DirectTracker, Optional[pd.DataFrame]]:
        return self._cached("direct", self._train_direct)

    def _train_direct(self):
        settings = self.cfg.tracker
        path = self.path("direct.nnck")
        digest = self._digest(
            "scene", "pilots", "autoencoder", "tracker", "trajectory", variant="direct", max_epochs=self.max_epochs
        )
        with stage("train-tracker"):
            if self._is_fresh(path, digest):
                return DirectTracker.load(path), None
            # Same observations and channels as the proposed tracker's training set
            sequences = self.sequences("tc")
            model = build_direct(self.pilots().observation_dim, self.shape, settings)
            logger.info("Training direct baseline (%d parameters)", model.parameter_count())
            model, history = train_direct(sequences, model, self._tracker_hyper())
            model.save(path, {"config_digest": digest})
            write_history(history, self.path("direct_history.csv"))
            return model, history


def build_direct(observation_dim: int, shape: Tuple[int, int], settings) -> DirectTracker:
    return DirectTracker.build(
        observation_dim, shape, settings.hidden_size, settings.num_layers, settings.head_width,
        output_head_width=settings.direct_head_width, seed=settings.seed,
    )


def generate_data(runner: ExperimentRunner) -> Dict[str, int]:
    return {"dataset": len(runner.dataset()), "trajectory": len(runner.eval_trajectory())}


def train_autoencoders(runner: ExperimentRunner) -> Dict[str, Any]:
    results = {}
    for tag in ("tc", "notc"):
        _, history = runner.autoencoder(tag)
        results[tag] = _history_summary(history)
    return results


def train_trackers(runner: ExperimentRunner) -> Dict[str, Any]:
    results = {}
    for tag in ("tc", "notc"):
        _, history = runner.tracker(tag)
        results[tag] = _history_summary(history)
    if runner.cfg.experiment.run_direct:
        _, history = runner.direct()
        results["direct"] = _history_summary(history)
    return results


def _history_summary(history: Optional[pd.DataFrame]) -> Dict[str, Any]:
    if history is None:
        return {"reused": True}
    last = "loss_total" if "loss_total" in history.columns else "loss"
    return {
        "reused": False,
        "epochs": int(history["epoch"].iloc[-1]),
        "initial_loss": float(history[last].iloc[0]),
        "best_loss": float(history[last].min()),
    }


def eval_ls(runner: ExperimentRunner) -> pd.DataFrame:
    """Independent minimum-norm LS estimation at every step of the evaluation trajectory."""
    with stage("eval"):
        estimator = LsEstimator(runner.pilots())
        if not estimator.is_determined:
            logger.info(
                "Under-determined LS: %d observations for %d unknowns",
                runner.pilots().overhead, runner.shape[0] * runner.shape[1],
            )
        estimates = [estimator.estimate(Y) for Y in runner.eval_observations()]
        frame = build_frame("ls", {"nmse_ls": nmse_curve(estimates, runner.eval_trajectory())})
        write_csv(frame, runner.path("ls.csv"), "ls")
    return frame


def run_ablation(runner: ExperimentRunner) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """
    Normalized latent distance d(t) over the evaluation trajectory for both autoencoders.

    Returns:
        (ablation frame, Spearman correlation of each curve with t)
    """
    trajectory = runner.eval_trajectory()
    ae_notc, _ = runner.autoencoder("notc")
    ae_tc, _ = runner.autoencoder("tc")
    with stage("eval"):
        frame = build_frame("ablation", {
            "dist_no_tc": latent_smoothness(ae_notc, trajectory),
            "dist_tc": latent_smoothness(ae_tc, trajectory),
        })
        write_csv(frame, runner.path("ablation.csv"), "ablation")
        spearman = spearman_summary(frame, ["dist_no_tc", "dist_tc"])
    logger.info("Latent smoothness Spearman: no TC %.3f, TC %.3f", spearman["dist_no_tc"], spearman["dist_tc"])
    return frame, spearman


def run_comparison(runner: ExperimentRunner) -> NmseReport:
    """
    Per-step NMSE of LS, the tracker with and without the distance loss, and the direct baseline.
    """
    started = time.perf_counter()
    trajectory = runner.eval_trajectory()
    ae_tc, _ = runner.autoencoder("tc")
    ae_notc, _ = runner.autoencoder("notc")
    tracker_tc, _ = runner.tracker("tc")
    tracker_notc, _ = runner.tracker("notc")
    direct = runner.direct()[0] if runner.cfg.experiment.run_direct else None

    with stage("eval"):
        observations = runner.eval_observations()
        flat = np.stack([flatten_observation(Y) for Y in observations])
        estimator = LsEstimator(runner.pilots())
        curves = {
            "nmse_ls": nmse_curve([estimator.estimate(Y) for Y in observations], trajectory),
            "nmse_tc": nmse_curve(infer_channels(tracker_tc, ae_tc.decoder, flat, runner.shape), trajectory),
            "nmse_notc": nmse_curve(infer_channels(tracker_notc, ae_notc.decoder, flat, runner.shape), trajectory),
        }
        if direct is not None:
            curves["nmse_direct"] = nmse_curve(infer_direct(direct, flat), trajectory)

        report = nmse_report(curves, metadata={
            "n_bs": runner.shape[0],
            "n_ue": runner.shape[1],
            "overhead": runner.pilots().overhead,
            "noise_variance": runner.noise().variance,
            "runtime_s": round(time.perf_counter() - started, 3),
        })
        write_csv(report.frame, runner.path("comparison.csv"), "comparison")
    logger.info("Mean NMSE: %s", {k: v for k, v in report.overview.items() if k.startswith("mean_")})
    return report


def parameter_counts(cfg: ExperimentConfig, bs_sizes: Sequence[Tuple[int, int]]) -> Dict[int, Dict[str, int]]:
    """Trainable parameters per method for each BS array size, from freshly built models."""
    counts = {}
    obs_dim = 2 * cfg.pilots.m_bs * cfg.pilots.m_ue
    t = cfg.tracker
    a = cfg.autoencoder
    for rows, cols in bs_sizes:
        shape = (rows * cols, cfg.scene.ue_rows * cfg.scene.ue_cols)
        tracker = TrackerModel.build(obs_dim, a.latent_dim, t.hidden_size, t.num_layers, t.head_width, seed=t.seed)
        direct = build_direct(obs_dim, shape, t)
        ae = AutoencoderModel.build(*shape, a.latent_dim, a.encoder_widths, a.decoder_widths, seed=a.seed)
        counts[shape[0]] = {
            "tracker": tracker.parameter_count(),
            "direct": direct.parameter_count(),
            "autoencoder": sum(p.size for p in ae.parameters().values()),
        }
    return counts


def run_scaling(runner: ExperimentRunner) -> Tuple[NmseReport, NmseReport]:
    """
    run_comparison at the configured BS array and at the scaling array, everything else fixed.

    Each size gets its own scaling/nb{N_B} directory; parameter counts go to
    parameter_counts.csv at the top level.
    """
    cfg = runner.cfg
    sizes = [
        (cfg.scene.bs_rows, cfg.scene.bs_cols),
        (cfg.experiment.scaling_bs_rows, cfg.experiment.scaling_bs_cols),
    ]
    table = parameter_table(parameter_counts(cfg, sizes))
    write_csv(table, runner.path("parameter_counts.csv"), "parameter_counts")
    logger.info("Parameter growth with the BS array: %s", parameter_growth(table))

    reports = []
    for rows, cols in sizes:
        sub_dir = runner.out_dir / "scaling" / f"nb{rows * cols}"
        sub = ExperimentRunner(cfg.with_bs_size(rows, cols, sub_dir), max_epochs=runner.max_epochs)
        reports.append(run_comparison(sub))
    return reports[0], reports[1]


def _toy_channels(rng: np.random.Generator, count: int, shape: Tuple[int, int]) -> List[ChannelSample]:
    samples = []
    for _ in range(count):
        H = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        samples.append(ChannelSample(H=H, p=rng.uniform(-5.0, 5.0, size=3)))
    return samples


def run_gradient_suite(seed: int = 0, max_entries: Optional[int] = 12, h: float = 1e-5) -> pd.DataFrame:
    """
    Finite-difference checks of every hand-derived gradient on toy dimensions.

    Returns:
        DataFrame with columns: check, parameters, max_rel_error, passed
    """
    rng = np.random.default_rng(seed)
    checks = []

    mlp = Mlp.build([4, 6, 3], rng)
    x = rng.standard_normal((5, 4))
    target = rng.standard_normal((5, 3))

    def mlp_loss():
        y, tape = mlp.forward(x)
        loss, dy = mean_squared(y, target)
        return loss, mlp.backward(tape, dy)[1]
    checks.append(("mlp", mlp_loss, mlp.parameters()))

    lstm = LstmStack(3, 4, 2, rng)
    xs = rng.standard_normal((5, 2, 3))
    weights = rng.standard_normal((5, 2, 4))

    def lstm_loss():
        hs, _, tape = lstm.run(xs)
        return float(np.sum(hs * weights)), lstm.backward(tape, weights)[1]
    checks.append(("lstm", lstm_loss, lstm.parameters()))

    ae = AutoencoderModel.build(2, 2, 3, [6], [6], seed=seed)
    batch = _toy_channels(rng, 8, (2, 2))
    checks.append(("loss_ci", lambda: loss_ci(ae, batch, 0.05, np.random.default_rng(seed + 1)), ae.parameters()))

    # Shifting every latent leaves the distances unchanged, so the last encoder
    # bias has an exactly-zero gradient and is left out
    last_bias = f"enc.{len(ae.encoder.layers) - 1}.b"
    tc_params = {k: v for k, v in ae.parameters().items() if k != last_bias}
    checks.append(("loss_tc", lambda: loss_tc(ae, batch), tc_params))

    tracker = TrackerModel.build(4, 3, hidden_size=4, num_layers=2, head_width=5, seed=seed)
    sequences = [
        TrainingSequence(
            observations=rng.standard_normal((5, 4)),
            latents=rng.standard_normal((5, 3)),
            alphas=rng.uniform(0.5, 1.5, size=5),
            betas=rng.uniform(0.1, 0.5, size=5),
            channels=rng.standard_normal((5, 2, 1)) + 1j * rng.standard_normal((5, 2, 1)),
        )
        for _ in range(2)
    ]
    hyper = TrackerHyper(lambda_alpha=0.3, lambda_beta=0.2)
    checks.append(("loss_lstm", lambda: loss_lstm(tracker, sequences, hyper), tracker.parameters()))

    direct = DirectTracker.build(4, (2, 1), hidden_size=4, num_layers=2, head_width=5, seed=seed)
    checks.append(("loss_direct", lambda: loss_direct(direct, sequences), direct.parameters()))

    rows = []
    for name, f, params in checks:
        error = grad_check(f, params, h=h, max_entries=max_entries, seed=seed)
        rows.append({
            "check": name,
            "parameters": int(sum(p.size for p in params.values())),
            "max_rel_error": error,
            "passed": bool(error < GRADIENT_TOLERANCE),
        })
        logger.info("grad check %s: %.3g", name, error)
    return pd.DataFrame(rows)


def write_manifest(
    out_dir,
    command: str,
    results: Dict[str, Any],
    cfg: Optional[ExperimentConfig] = None,
) -> Path:
    """
    Record the version, the resolved config (if any) and this command's results in manifest.json.

    Results of earlier commands in the same directory are kept.
    """
    path = Path(out_dir) / "manifest.json"
    manifest: Dict[str, Any] = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            logger.warning("Replacing unreadable manifest %s", path)
    manifest["version"] = version_string()
    if cfg is not None:
        manifest["config"] = cfg.to_dict()
    manifest.setdefault("commands", {})[command] = _json_safe(results)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(manifest), indent=2, sort_keys=True))
    return path
