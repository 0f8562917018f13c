"""Dense denoising autoencoder mapping corrupted radio images toward clean targets.

One leaky-rectifier hidden layer encodes the image into a small latent
vector; a logistic output layer decodes it back into [0, 1] pixels. Training
minimizes per-image mean squared pixel error with Adam; gradients are
analytic and checked against finite differences in the tests.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0


@dataclass
class DaeModel:
    """Encoder/decoder weights; latent_dim x input_dim and back."""

    encoder_weights: np.ndarray
    encoder_bias: np.ndarray
    decoder_weights: np.ndarray
    decoder_bias: np.ndarray
    hidden_slope: float = 0.2

    def __post_init__(self):
        l, r = self.encoder_weights.shape
        if self.encoder_bias.shape != (l,):
            raise ValueError("encoder bias shape mismatch")
        if self.decoder_weights.shape != (r, l):
            raise ValueError("decoder weight shape mismatch")
        if self.decoder_bias.shape != (r,):
            raise ValueError("decoder bias shape mismatch")
        for arr in (self.encoder_weights, self.encoder_bias,
                    self.decoder_weights, self.decoder_bias):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.encoder_weights.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder_weights.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "encoder_weights": self.encoder_weights,
            "encoder_bias": self.encoder_bias,
            "decoder_weights": self.decoder_weights,
            "decoder_bias": self.decoder_bias,
        }


def init_model(
    input_dim: int,
    latent_dim: int = 16,
    seed: int = 0,
    hidden_slope: float = 0.2,
) -> DaeModel:
    """Seeded uniform fan-in initialization, zero biases."""
    rng = np.random.default_rng(seed)
    enc_bound = 1.0 / math.sqrt(input_dim)
    dec_bound = 1.0 / math.sqrt(latent_dim)
    return DaeModel(
        encoder_weights=rng.uniform(-enc_bound, enc_bound, (latent_dim, input_dim)),
        encoder_bias=np.zeros(latent_dim),
        decoder_weights=rng.uniform(-dec_bound, dec_bound, (input_dim, latent_dim)),
        decoder_bias=np.zeros(input_dim),
        hidden_slope=hidden_slope,
    )


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def forward(model: DaeModel, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(latent, reconstruction) for one image or a batch of images."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    pre_latent = x @ model.encoder_weights.T + model.encoder_bias
    latent = _leaky(pre_latent, model.hidden_slope)
    recon = expit(latent @ model.decoder_weights.T + model.decoder_bias)
    if np.ndim(inputs) == 1:
        return latent[0], recon[0]
    return latent, recon


def denoise(model: DaeModel, inputs: np.ndarray) -> np.ndarray:
    """Decoder output only; values always land in [0, 1]."""
    return forward(model, inputs)[1]


def mse_loss(targets: np.ndarray, recon: np.ndarray) -> float:
    """Per-image sum of squared pixel errors over the pixel count, batch-averaged."""
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    r = np.atleast_2d(np.asarray(recon, dtype=float))
    if t.shape != r.shape:
        raise ValueError("target and reconstruction shapes differ")
    per_image = ((t - r) ** 2).sum(axis=1) / t.shape[1]
    return float(per_image.mean())


def loss_gradients(
    model: DaeModel,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch loss and analytic gradients for every parameter tensor."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    batch, dim = x.shape
    pre_latent = x @ model.encoder_weights.T + model.encoder_bias
    latent = _leaky(pre_latent, model.hidden_slope)
    pre_out = latent @ model.decoder_weights.T + model.decoder_bias
    recon = expit(pre_out)

    loss = float(((t - recon) ** 2).sum(axis=1).mean() / dim)
    d_recon = 2.0 * (recon - t) / (dim * batch)
    d_pre_out = d_recon * recon * (1.0 - recon)
    grad_dec_w = d_pre_out.T @ latent
    grad_dec_b = d_pre_out.sum(axis=0)
    d_latent = d_pre_out @ model.decoder_weights
    d_pre_latent = d_latent * np.where(pre_latent > 0, 1.0, model.hidden_slope)
    grad_enc_w = d_pre_latent.T @ x
    grad_enc_b = d_pre_latent.sum(axis=0)
    return loss, {
        "encoder_weights": grad_enc_w,
        "encoder_bias": grad_enc_b,
        "decoder_weights": grad_dec_w,
        "decoder_bias": grad_dec_b,
    }


def train(
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig | None = None,
    model: DaeModel | None = None,
    latent_dim: int = 16,
) -> tuple[DaeModel, list[float]]:
    """Adam over shuffled mini-batches; returns the model and per-epoch mean loss.

    Batch order is drawn from the seeded generator, so identical data, seed
    and config reproduce identical weights. Aborts on non-finite loss.
    """
    config = config or TrainConfig()
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if x.shape != t.shape:
        raise ValueError("inputs and targets must share a shape")
    if model is None:
        model = init_model(x.shape[1], latent_dim, seed=config.seed)
    params = model.parameters()
    first_moment = {k: np.zeros_like(v) for k, v in params.items()}
    second_moment = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(config.seed)
    step = 0
    epoch_losses: list[float] = []
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_gradients(model, x[batch], t[batch])
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}, step {step}: loss={loss}"
                )
            batch_losses.append(loss)
            step += 1
            correction1 = 1.0 - config.beta1**step
            correction2 = 1.0 - config.beta2**step
            for key, grad in grads.items():
                first_moment[key] = config.beta1 * first_moment[key] + (1 - config.beta1) * grad
                second_moment[key] = (
                    config.beta2 * second_moment[key] + (1 - config.beta2) * grad * grad
                )
                m_hat = first_moment[key] / correction1
                v_hat = second_moment[key] / correction2
                params[key] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        epoch_losses.append(float(np.mean(batch_losses)))
    return model, epoch_losses


# ---------------------------------------------------------------------------
# persistence

_MAGIC = b"LISDAE\x00\x01"


def save_dae_model(model: DaeModel, path: str) -> None:
    """Flat binary checkpoint: dims and slope header, then row-major float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IId", model.input_dim, model.latent_dim, model.hidden_slope))
        for arr in model.parameters().values():
            fh.write(arr.astype("<f8").tobytes())


def load_dae_model(path: str) -> DaeModel:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a DAE checkpoint")
        input_dim, latent_dim, slope = struct.unpack("<IId", fh.read(16))
        shapes = [
            (latent_dim, input_dim),
            (latent_dim,),
            (input_dim, latent_dim),
            (input_dim,),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            arrays.append(
                np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
            )
    return DaeModel(
        encoder_weights=arrays[0],
        encoder_bias=arrays[1],
        decoder_weights=arrays[2],
        decoder_bias=arrays[3],
        hidden_slope=slope,
    )


def save_loss_curve(losses: list[float], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for i, value in enumerate(losses):
            writer.writerow([i, repr(value)])
