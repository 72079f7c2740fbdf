import numpy as np
import pytest

from src.autoencoder import (
    AeHyper,
    AutoencoderModel,
    _tc_arrays,
    latent_smoothness,
    loss_ci,
    loss_tc,
    postprocess,
    preprocess,
    preprocess_samples,
    train_autoencoder,
)
from src.channel import ChannelSample, gen_dataset, gen_trajectory
from src.errors import DimensionError, DomainError, TrainingError
from src.networks import DenseLayer, Mlp, grad_check, parameter_checksum
from tests.conftest import random_complex


def _samples(rng, count, shape=(2, 2)):
    return [ChannelSample(H=random_complex(rng, shape), p=rng.uniform(-5.0, 5.0, size=3)) for _ in range(count)]


def test_preprocess_example():
    result = preprocess(np.array([[1.0, 3.0j]]))
    assert result.alpha == pytest.approx(2.0)
    assert result.beta == pytest.approx(1.0)
    assert np.allclose(result.v, [-1.0, 1.0, 0.0, 0.5])
    assert not result.beta_guarded


def test_preprocess_constant_amplitude_is_guarded():
    H = 2.0 * np.exp(1j * np.array([[0.1, 0.7], [-2.0, 3.0]]))
    result = preprocess(H)
    assert result.beta_guarded
    assert np.allclose(result.v[:4], 0.0)


def test_preprocess_round_trip(rng):
    for _ in range(1000):
        H = random_complex(rng, (4, 3))
        pre = preprocess(H)
        assert np.all(np.abs(pre.v[12:]) <= 1.0)
        H_back = postprocess(pre.v, pre.alpha, pre.beta, 4, 3)
        assert np.linalg.norm(H_back - H) / np.linalg.norm(H) < 1e-12


def test_postprocess_examples():
    assert np.allclose(postprocess(np.zeros(4), 1.0, 7.0, 2, 1), np.ones((2, 1)))
    H = postprocess(np.array([-3.0, 0.0, 0.25, 0.0]), 1.0, 1.0, 2, 1)
    assert np.isclose(H[0, 0], -2.0 * np.exp(1j * np.pi / 4))
    with pytest.raises(DimensionError):
        postprocess(np.zeros(5), 1.0, 1.0, 2, 1)


def _identity_autoencoder(n_bs, n_ue):
    n = 2 * n_bs * n_ue
    identity = lambda: Mlp([DenseLayer(np.eye(n), np.zeros(n))])
    return AutoencoderModel(identity(), identity(), n_bs, n_ue)


def test_loss_ci_zero_for_identity_networks(rng):
    model = _identity_autoencoder(2, 2)
    loss, _ = loss_ci(model, _samples(rng, 5), perturb_std=0.0)
    assert loss == pytest.approx(0.0, abs=1e-20)


def test_loss_ci_matches_per_sample_recomputation(rng):
    model = AutoencoderModel.build(2, 2, 3, [6], [6], seed=1)
    batch = _samples(rng, 4)
    loss, _ = loss_ci(model, batch, perturb_std=0.0)
    expected = np.mean([np.sum((model.decode(model.encode(preprocess(s.H).v)) - preprocess(s.H).v) ** 2) for s in batch])
    assert loss == pytest.approx(expected, rel=1e-12)


def test_loss_gradients(rng):
    model = AutoencoderModel.build(2, 2, 3, [6], [6], seed=2)
    batch = _samples(rng, 8)
    ci = grad_check(lambda: loss_ci(model, batch, 0.05, np.random.default_rng(3)), model.parameters(), max_entries=15)
    assert ci < 1e-4

    # The last encoder bias only shifts every latent, which the loss ignores
    params = {k: v for k, v in model.parameters().items() if k != "enc.1.b"}
    assert grad_check(lambda: loss_tc(model, batch), params, max_entries=15) < 1e-4


def test_loss_tc_two_samples_is_zero(rng):
    model = AutoencoderModel.build(2, 2, 3, [6], [6], seed=3)
    loss, _ = loss_tc(model, _samples(rng, 2))
    assert loss < 1e-10


def test_loss_tc_zero_for_similarity_transform_of_positions(rng):
    c = 2.5
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    offset = rng.standard_normal(3)
    encoder = Mlp([DenseLayer(np.vstack([c * q.T, np.zeros((1, 3))]), offset)])
    decoder = Mlp([DenseLayer(rng.standard_normal((3, 4)), np.zeros(4))])
    model = AutoencoderModel(encoder, decoder, 2, 1)

    P = rng.uniform(-10.0, 10.0, size=(8, 3))
    V = np.hstack([P, np.zeros((8, 1))])
    loss, _ = _tc_arrays(model, V, P)
    assert loss < 1e-10


def test_loss_tc_invariances(rng):
    model = AutoencoderModel.build(2, 2, 3, [6], [6], seed=4)
    batch = _samples(rng, 6)
    loss, _ = loss_tc(model, batch)

    scaled = Mlp(model.encoder.layers + [DenseLayer(3.0 * np.eye(3), np.array([1.0, -2.0, 0.5]))])
    wrapped = AutoencoderModel(scaled, model.decoder, 2, 2)
    assert loss_tc(wrapped, batch)[0] == pytest.approx(loss, rel=1e-9)

    order = rng.permutation(len(batch))
    assert loss_tc(model, [batch[i] for i in order])[0] == pytest.approx(loss, rel=1e-9)


def test_loss_tc_needs_two_samples(rng):
    model = AutoencoderModel.build(2, 2, 3, [6], [6])
    with pytest.raises(DomainError):
        loss_tc(model, _samples(rng, 1))


def test_hyper_validation():
    with pytest.raises(DomainError):
        AeHyper(lambda_tc=-0.1)
    with pytest.raises(DomainError):
        AeHyper(batch_size=1)


@pytest.fixture
def tiny_dataset(tiny_scene, region):
    return gen_dataset(tiny_scene, region, 48)


def _tiny_model(tiny_scene, seed=0):
    return AutoencoderModel.build(*tiny_scene.channel_shape, 6, [32], [32], seed=seed)


def test_training_reduces_reconstruction_loss(tiny_scene, tiny_dataset):
    hyper = AeHyper(lambda_tc=0.0, batch_size=16, epochs=30, learning_rate=3e-3, log_every=0)
    _, history = train_autoencoder(tiny_dataset, hyper, _tiny_model(tiny_scene))
    assert list(history.columns) == ["epoch", "loss_ci", "loss_tc", "loss_total"]
    assert history["epoch"].iloc[0] == 0
    assert history["loss_ci"].iloc[1:].min() < history["loss_ci"].iloc[0]
    assert (history["loss_tc"] == 0).all()


def test_training_is_deterministic(tiny_scene, tiny_dataset):
    hyper = AeHyper(batch_size=16, epochs=3, log_every=0)
    a, history_a = train_autoencoder(tiny_dataset, hyper, _tiny_model(tiny_scene))
    b, history_b = train_autoencoder(tiny_dataset, hyper, _tiny_model(tiny_scene))
    assert parameter_checksum(a.parameters()) == parameter_checksum(b.parameters())
    assert history_a.equals(history_b)


def test_full_batch_distance_loss(tiny_scene, tiny_dataset):
    hyper = AeHyper(batch_size=16, epochs=2, full_batch_tc=True, log_every=0)
    _, history = train_autoencoder(tiny_dataset, hyper, _tiny_model(tiny_scene))
    assert (history["loss_tc"] > 0).all()


def test_divergence_reports_epoch(tiny_scene, tiny_dataset):
    model = _tiny_model(tiny_scene)
    model.encoder.layers[0].W[0, 0] = np.nan
    with pytest.raises(TrainingError) as excinfo:
        train_autoencoder(tiny_dataset, AeHyper(batch_size=16, epochs=2, log_every=0), model)
    assert excinfo.value.epoch == 0


def test_save_and_load(tiny_scene, tiny_dataset, tmp_path):
    model = _tiny_model(tiny_scene, seed=7)
    path = model.save(tmp_path / "ae.nnck", {"lambda_tc": 0.1})
    loaded = AutoencoderModel.load(path)
    assert loaded.latent_dim == 6
    V = preprocess_samples(tiny_dataset)[0]
    assert np.array_equal(loaded.encode(V), model.encode(V))
    assert np.array_equal(loaded.decode(model.encode(V)), model.decode(model.encode(V)))


def test_latent_smoothness(tiny_scene, region):
    model = _tiny_model(tiny_scene)
    moving = gen_trajectory(tiny_scene, (35.0, -15.0, 1.5), (2.0, 2.0, 0.0), 10, 0.1, region)
    d = latent_smoothness(model, moving)
    assert d[0] == 0.0
    assert d.max() == pytest.approx(1.0)

    still = gen_trajectory(tiny_scene, (35.0, -15.0, 1.5), (0.0, 0.0, 0.0), 5, 0.1)
    assert np.array_equal(latent_smoothness(model, still), np.zeros(5))
    with pytest.raises(DomainError):
        latent_smoothness(model, moving[:1])
