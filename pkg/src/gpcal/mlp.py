"""Feedforward neural-network baseline for the pixel-to-3D mapping.

A fully-connected net (default hidden sizes 128, 128, 64) with leaky-ReLU
activations and dropout after every hidden layer, trained on standardized
inputs/targets by minimizing mean squared error with Adam.  Written in plain
numpy so gradients are checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CorrespondenceSet
from .errors import InsufficientDataError, TrainingDivergedError

FULL_BATCH_LIMIT = 256  # below this many samples, train full-batch


def _mean_scale(values: np.ndarray, axis=0):
    """Zero-mean unit-variance parameters; constant columns get scale 1."""
    mean = values.mean(axis=axis)
    scale = values.std(axis=axis)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple = (128, 128, 64)
    output_dim: int = 3
    negative_slope: float = 0.01
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def layer_dims(self) -> list:
        return [self.input_dim, *self.hidden, self.output_dim]


@dataclass
class MlpConfig:
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int | None = None  # None: full batch below FULL_BATCH_LIMIT
    seed: int = 0


@dataclass
class MlpModel:
    spec: MlpSpec
    config: MlpConfig
    weights: list
    biases: list
    input_means: np.ndarray
    input_scales: np.ndarray
    target_means: np.ndarray
    target_scales: np.ndarray
    loss_history: np.ndarray = field(default=None)

    def predict(self, pixels) -> np.ndarray:
        """Forward pass with dropout disabled; returns (m, 3) in mm."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
        if pixels.shape[1] != self.spec.input_dim:
            raise ValueError(f"observation length {pixels.shape[1]} != {self.spec.input_dim}")
        X = (pixels - self.input_means) / self.input_scales
        out = _forward(self.weights, self.biases, X, self.spec)[-1]
        return out * self.target_scales + self.target_means


def _leaky_relu(z, slope):
    return np.where(z > 0, z, slope * z)


def _leaky_relu_grad(z, slope):
    return np.where(z > 0, 1.0, slope)


def _init_params(spec: MlpSpec, rng: np.random.Generator):
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, X, spec: MlpSpec, dropout_masks=None):
    """Returns the list of layer activations, input first, output last."""
    acts = [X]
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        if i < last:
            h = _leaky_relu(z, spec.negative_slope)
            if dropout_masks is not None:
                h = h * dropout_masks[i]
        else:
            h = z
        acts.append(h)
    return acts


def _loss_and_grads(weights, biases, X, Y, spec: MlpSpec, dropout_masks=None):
    """MSE loss (mean over samples and output dims) and parameter gradients.

    Backpropagation through the linear layers and leaky-ReLU; dropout masks,
    when given, are the inverted-dropout scale factors used in the forward pass.
    """
    n = X.shape[0]
    acts = [X]
    pre = []
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        pre.append(z)
        if i < last:
            h = _leaky_relu(z, spec.negative_slope)
            if dropout_masks is not None:
                h = h * dropout_masks[i]
        else:
            h = z
        acts.append(h)

    diff = acts[-1] - Y
    loss = float(np.mean(diff**2))
    delta = 2.0 * diff / (n * Y.shape[1])

    grads_W = [None] * len(weights)
    grads_b = [None] * len(biases)
    for i in range(last, -1, -1):
        grads_W[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i].T
            if dropout_masks is not None:
                delta = delta * dropout_masks[i - 1]
            delta = delta * _leaky_relu_grad(pre[i - 1], spec.negative_slope)
    return loss, grads_W, grads_b


def mlp_train(
    data: CorrespondenceSet,
    spec: MlpSpec | None = None,
    config: MlpConfig = MlpConfig(),
) -> MlpModel:
    """Train on standardized correspondences; deterministic under the seed."""
    n = len(data)
    if n < 2:
        raise InsufficientDataError(f"MLP training needs at least 2 samples, got {n}")
    spec = spec or MlpSpec(input_dim=2 * data.camera_count)
    if spec.input_dim != data.pixels.shape[1]:
        raise ValueError(f"spec input_dim {spec.input_dim} != data width {data.pixels.shape[1]}")

    in_mean, in_scale = _mean_scale(data.pixels)
    out_mean, out_scale = _mean_scale(data.points)
    X = (data.pixels - in_mean) / in_scale
    Y = (data.points - out_mean) / out_scale

    rng = np.random.default_rng(config.seed)
    weights, biases = _init_params(spec, rng)

    batch = config.batch_size
    if batch is None:
        batch = n if n < FULL_BATCH_LIMIT else FULL_BATCH_LIMIT
    batch = min(batch, n)

    # Adam state
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_W = [np.zeros_like(W) for W in weights]
    v_W = [np.zeros_like(W) for W in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    step = 0

    hidden_count = len(spec.hidden)
    losses = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            masks = None
            if spec.dropout_rate > 0.0:
                keep = 1.0 - spec.dropout_rate
                masks = [
                    (rng.random((idx.size, h)) < keep) / keep
                    for h in spec.hidden
                ]
            loss, gW, gb = _loss_and_grads(weights, biases, X[idx], Y[idx], spec, masks)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
            epoch_loss += loss * idx.size
            step += 1
            lr_t = config.learning_rate * np.sqrt(1 - beta2**step) / (1 - beta1**step)
            for i in range(hidden_count + 1):
                m_W[i] = beta1 * m_W[i] + (1 - beta1) * gW[i]
                v_W[i] = beta2 * v_W[i] + (1 - beta2) * gW[i] ** 2
                weights[i] -= lr_t * m_W[i] / (np.sqrt(v_W[i]) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * gb[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * gb[i] ** 2
                biases[i] -= lr_t * m_b[i] / (np.sqrt(v_b[i]) + eps)
        losses[epoch] = epoch_loss / n

    return MlpModel(
        spec=spec,
        config=config,
        weights=weights,
        biases=biases,
        input_means=in_mean,
        input_scales=in_scale,
        target_means=out_mean,
        target_scales=out_scale,
        loss_history=losses,
    )


def mlp_predict(model: MlpModel, obs) -> np.ndarray:
    """Predict the world point (3,) for one pixel observation."""
    obs = np.asarray(obs, dtype=float).ravel()
    return model.predict(obs[None, :])[0]
