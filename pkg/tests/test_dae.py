import math

import numpy as np
import pytest

from lissense.dae import (
    DaeModel,
    TrainConfig,
    denoise,
    forward,
    init_model,
    load_dae_model,
    loss_gradients,
    mse_loss,
    save_dae_model,
    save_loss_curve,
    train,
)


def manual_forward(model, x):
    """Loop-based reimplementation of the network arithmetic."""
    latent = np.empty(model.latent_dim)
    for i in range(model.latent_dim):
        z = model.encoder_bias[i]
        for j in range(model.input_dim):
            z += model.encoder_weights[i, j] * x[j]
        latent[i] = z if z > 0 else model.hidden_slope * z
    out = np.empty(model.input_dim)
    for j in range(model.input_dim):
        z = model.decoder_bias[j]
        for i in range(model.latent_dim):
            z += model.decoder_weights[j, i] * latent[i]
        out[j] = 1.0 / (1.0 + math.exp(-z))
    return latent, out


class TestForward:
    def test_all_zero_weights_give_half(self):
        model = DaeModel(
            encoder_weights=np.zeros((4, 9)),
            encoder_bias=np.zeros(4),
            decoder_weights=np.zeros((9, 4)),
            decoder_bias=np.zeros(9),
        )
        _, recon = forward(model, np.random.default_rng(0).uniform(0, 1, 9))
        np.testing.assert_allclose(recon, 0.5)

    def test_linear_identity_configuration(self):
        # slope 1 hidden and identity weights make the pre-output equal the
        # input; checked through the logistic to avoid a special test path
        model = DaeModel(
            encoder_weights=np.eye(5),
            encoder_bias=np.zeros(5),
            decoder_weights=np.eye(5),
            decoder_bias=np.zeros(5),
            hidden_slope=1.0,
        )
        x = np.linspace(0.1, 0.9, 5)
        _, recon = forward(model, x)
        np.testing.assert_allclose(recon, 1 / (1 + np.exp(-x)), rtol=1e-15)

    def test_matches_manual_arithmetic(self):
        model = init_model(9, 4, seed=3)
        x = np.random.default_rng(4).uniform(0, 1, 9)
        latent, recon = forward(model, x)
        want_latent, want_recon = manual_forward(model, x)
        np.testing.assert_allclose(latent, want_latent, rtol=1e-12)
        np.testing.assert_allclose(recon, want_recon, rtol=1e-12)

    def test_batch_and_single_agree(self):
        # BLAS may pick different kernels per shape, so equality is only up
        # to a few ulp
        model = init_model(6, 3, seed=5)
        batch = np.random.default_rng(6).uniform(0, 1, (4, 6))
        _, recon_batch = forward(model, batch)
        for i in range(4):
            _, single = forward(model, batch[i])
            np.testing.assert_allclose(single, recon_batch[i], rtol=0, atol=1e-12)

    def test_output_always_in_unit_interval(self):
        model = init_model(8, 2, seed=7)
        wild = np.random.default_rng(8).normal(0, 50, (10, 8))
        out = denoise(model, wild)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestLoss:
    def test_perfect_reconstruction_is_zero(self):
        t = np.random.default_rng(0).uniform(0, 1, 7)
        assert mse_loss(t, t) == 0.0

    def test_all_ones_vs_all_zeros(self):
        assert mse_loss(np.ones(5), np.zeros(5)) == 1.0

    def test_matches_elementwise_arithmetic(self):
        rng = np.random.default_rng(1)
        t, r = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
        assert mse_loss(t, r) == pytest.approx(float(np.sum((t - r) ** 2) / 5), rel=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mse_loss(np.ones(3), np.ones(4))


class TestGradients:
    def test_analytic_matches_central_differences(self):
        model = init_model(16, 4, seed=11)
        rng = np.random.default_rng(12)
        x = rng.uniform(0, 1, (3, 16))
        t = rng.uniform(0, 1, (3, 16))
        _, grads = loss_gradients(model, x, t)
        step = 1e-5
        for name, grad in grads.items():
            tensor = getattr(model, name)
            flat = tensor.reshape(-1)
            numeric = np.empty_like(flat)
            for idx in range(flat.size):
                keep = flat[idx]
                flat[idx] = keep + step
                up, _ = loss_gradients(model, x, t)
                flat[idx] = keep - step
                down, _ = loss_gradients(model, x, t)
                flat[idx] = keep
                numeric[idx] = (up - down) / (2 * step)
            scale = np.maximum(np.abs(numeric), 1e-8)
            rel = np.abs(grad.reshape(-1) - numeric) / scale
            assert rel.max() <= 1e-4, f"{name}: worst rel err {rel.max():.2e}"


class TestTraining:
    def test_identity_task_loss_drops(self):
        # low-rank data fits through the bottleneck, so reproducing the
        # input is achievable and the loss must collapse
        rng = np.random.default_rng(13)
        basis = rng.uniform(0, 1, (4, 25))
        data = np.clip(rng.uniform(0.2, 1.0, (64, 4)) @ basis / 2.5, 0, 1)
        config = TrainConfig(epochs=200, batch_size=4, seed=0)
        _, losses = train(data, data, config, latent_dim=8)
        assert losses[-1] < 0.1 * losses[0]

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(14)
        data = rng.uniform(0, 1, (32, 16))
        config = TrainConfig(epochs=20, batch_size=8, seed=21)
        model_a, losses_a = train(data, data, config, latent_dim=4)
        model_b, losses_b = train(data, data, config, latent_dim=4)
        assert losses_a == losses_b
        for name, value in model_a.parameters().items():
            np.testing.assert_array_equal(value, model_b.parameters()[name])

    def test_loss_curve_settles(self):
        # 10-epoch moving average of the identity task should not rise more
        # than once per hundred epochs
        rng = np.random.default_rng(15)
        data = rng.uniform(0, 1, (64, 25))
        config = TrainConfig(epochs=100, batch_size=16, seed=2)
        _, losses = train(data, data, config, latent_dim=8)
        window = np.convolve(losses, np.ones(10) / 10, mode="valid")
        rises = int(np.sum(np.diff(window) > 0))
        assert rises <= 1

    def test_synthetic_denoising_improves_inputs(self):
        # clean low-rank patterns corrupted by clipped noise: the network
        # must land reconstructions closer to the clean target than the
        # corrupted input started
        rng = np.random.default_rng(16)
        basis = rng.uniform(0, 1, (4, 36))
        weights = rng.uniform(0.2, 1.0, (80, 4))
        clean = np.clip(weights @ basis / 2.5, 0, 1)
        noisy = np.clip(clean + rng.normal(0, 0.15, clean.shape), 0, 1)
        config = TrainConfig(epochs=300, batch_size=16, seed=3)
        model, _ = train(noisy[:64], clean[:64], config, latent_dim=6)
        test_in, test_clean = noisy[64:], clean[64:]
        recon = denoise(model, test_in)
        assert mse_loss(test_clean, recon) < mse_loss(test_clean, test_in)

    def test_non_finite_loss_aborts(self):
        data = np.full((8, 4), np.inf)
        with pytest.raises(RuntimeError):
            train(data, data, TrainConfig(epochs=2, batch_size=4, seed=0), latent_dim=2)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            train(np.ones((4, 3)), np.ones((4, 5)), TrainConfig(epochs=1))


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path):
        model = init_model(12, 5, seed=17, hidden_slope=0.2)
        path = tmp_path / "dae.bin"
        save_dae_model(model, str(path))
        again = load_dae_model(str(path))
        assert again.hidden_slope == model.hidden_slope
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(value, again.parameters()[name])
        x = np.random.default_rng(18).uniform(0, 1, 12)
        np.testing.assert_array_equal(denoise(model, x), denoise(again, x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXXXXXX" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_dae_model(str(path))

    def test_loss_csv(self, tmp_path):
        path = tmp_path / "loss.csv"
        save_loss_curve([0.5, 0.25, 0.125], str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,mean_loss"
        assert len(lines) == 4
