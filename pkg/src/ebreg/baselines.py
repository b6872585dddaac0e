"""Explicit baselines: direct MSE regression, mixture density heads,
and a brute-force nearest-neighbor memorizer."""
from __future__ import annotations

import numpy as np

from .base import as_rng
from .net import AdamState, Mlp, adam_step
from .training import TrainConfig, exponential_lr

LOG_STD_MIN = np.log(1e-4)
LOG_STD_MAX = np.log(1e2)
LOG_2PI = np.log(2.0 * np.pi)


def train_mse(model: Mlp, x, y, cfg: TrainConfig, rng):
    """Minimize mean squared error with Adam and the shared lr schedule."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = as_rng(rng)
    state = AdamState.for_model(model)
    losses = np.zeros(cfg.train_iterations)
    for step in range(cfg.train_iterations):
        idx = rng.integers(0, x.shape[0], size=cfg.batch_size)
        xb, yb = x[idx], y[idx]
        out, cache = model.forward_cached(
            xb, train_mode=model.dropout_rate > 0.0, rng=rng
        )
        err = out - yb
        loss = float(np.mean(np.sum(err**2, axis=1)))
        if not np.isfinite(loss):
            raise FloatingPointError(f"mse training diverged at step {step}")
        grads, _ = model.backward(cache, 2.0 * err / cfg.batch_size)
        adam_step(model, state, grads, exponential_lr(step, cfg))
        losses[step] = loss
    return model, losses


# -- mixture density heads ---------------------------------------------


def mdn_split(raw, n_components: int, y_dim: int):
    """Split raw head outputs into (logits, means, log_stds).

    Log-stds are clamped to keep every component's scale in
    [1e-4, 1e2]; shapes are (B, K), (B, K, n), (B, K, n).
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    expected = n_components * (1 + 2 * y_dim)
    if raw.shape[1] != expected:
        raise ValueError(f"head output dim {raw.shape[1]}, expected {expected}")
    k, n = n_components, y_dim
    logits = raw[:, :k]
    means = raw[:, k : k + k * n].reshape(-1, k, n)
    log_stds = np.clip(raw[:, k + k * n :].reshape(-1, k, n), LOG_STD_MIN, LOG_STD_MAX)
    return logits, means, log_stds


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mdn_loss(raw, y, n_components: int, train_temperature: float = 1.0) -> float:
    """Mean negative log-likelihood of a diagonal-Gaussian mixture.

    The mixture logits are divided by the training temperature before
    the softmax; log-sum-exp keeps everything stable.
    """
    loss, _ = mdn_loss_and_grad(raw, y, n_components, train_temperature)
    return loss


def mdn_loss_and_grad(raw, y, n_components: int, train_temperature: float = 1.0):
    """NLL plus its gradient w.r.t. the raw head outputs."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    k, n = n_components, y.shape[1]
    logits, means, log_stds = mdn_split(raw, k, n)
    clipped = (raw[:, k + k * n :].reshape(-1, k, n) < LOG_STD_MIN) | (
        raw[:, k + k * n :].reshape(-1, k, n) > LOG_STD_MAX
    )
    stds = np.exp(log_stds)
    z = (y[:, None, :] - means) / stds
    log_comp = -0.5 * np.sum(z**2, axis=2) - np.sum(log_stds, axis=2) - 0.5 * n * LOG_2PI
    log_w = _log_softmax(logits / train_temperature)
    joint = log_w + log_comp
    m = joint.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(joint - m).sum(axis=1))
    nll = float(np.mean(-lse))

    batch = raw.shape[0]
    resp = np.exp(joint - lse[:, None])  # posterior responsibilities
    pi = np.exp(log_w)
    d_logits = (pi - resp) / train_temperature / batch
    d_means = resp[:, :, None] * (means - y[:, None, :]) / stds**2 / batch
    d_log_stds = resp[:, :, None] * (1.0 - z**2) / batch
    d_log_stds[clipped] = 0.0
    d_raw = np.concatenate(
        [d_logits, d_means.reshape(batch, k * n), d_log_stds.reshape(batch, k * n)],
        axis=1,
    )
    return nll, d_raw


def mdn_sample(raw_row, n_components: int, y_dim: int, rng,
               test_temperature: float = 1.0, variance_exponent: float = 1.0):
    """Draw one target: pick a component by tempered logits, then a
    Gaussian whose std is raised to the variance exponent."""
    logits, means, log_stds = mdn_split(raw_row, n_components, y_dim)
    weights = np.exp(_log_softmax(logits[0] / max(test_temperature, 1e-12)))
    weights = weights / weights.sum()
    comp = rng.choice(n_components, p=weights)
    std = np.exp(log_stds[0, comp]) ** variance_exponent
    return means[0, comp] + std * rng.standard_normal(y_dim)


def train_mdn(model: Mlp, x, y, n_components: int, cfg: TrainConfig, rng,
              train_temperature: float = 1.0):
    """Fit an MLP-backed mixture head by NLL."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = as_rng(rng)
    state = AdamState.for_model(model)
    losses = np.zeros(cfg.train_iterations)
    for step in range(cfg.train_iterations):
        idx = rng.integers(0, x.shape[0], size=cfg.batch_size)
        xb, yb = x[idx], y[idx]
        raw, cache = model.forward_cached(
            xb, train_mode=model.dropout_rate > 0.0, rng=rng
        )
        loss, d_raw = mdn_loss_and_grad(raw, yb, n_components, train_temperature)
        if not np.isfinite(loss):
            raise FloatingPointError(f"mdn training diverged at step {step}")
        grads, _ = model.backward(cache, d_raw)
        adam_step(model, state, grads, exponential_lr(step, cfg))
        losses[step] = loss
    return model, losses


# -- nearest neighbor ---------------------------------------------------


class NeighborIndex:
    """Memorizes the training pairs; lookup is an exact L2 scan."""

    def __init__(self, x, y):
        self.x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("inputs and outputs must pair up")
        if self.x.shape[0] == 0:
            raise ValueError("empty index")
        self._sq_norms = np.sum(self.x**2, axis=1)

    def predict(self, queries, chunk: int = 256):
        """Output of the L2-nearest stored input; ties to the lowest index."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out = np.empty((queries.shape[0], self.y.shape[1]))
        for start in range(0, queries.shape[0], chunk):
            q = queries[start : start + chunk]
            # ||q - x||^2 = ||q||^2 - 2 q.x + ||x||^2; ||q||^2 constant per row.
            d2 = self._sq_norms[None, :] - 2.0 * (q @ self.x.T)
            out[start : start + chunk] = self.y[np.argmin(d2, axis=1)]
        return out
