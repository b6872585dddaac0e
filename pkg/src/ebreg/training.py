"""Contrastive training of energy models.

The loss treats the true target as the positive against sampled
counter-examples: softmax cross-entropy over negated energies,
estimating the partition function from the negatives. Counter-examples
are drawn fresh every step, either uniformly inside the target bounds
or by running Langevin chains against the current model (with an
optional hinge penalty on the energy gradient at the final chain step).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import as_rng
from .inference import langevin_chain, poly_decay
from .net import AdamState, Grads, Mlp, adam_step

COUNTEREXAMPLE_MODES = ("uniform", "langevin")
GRADIENT_PENALTY_MODES = ("none", "final_step_only")


@dataclass
class TrainConfig:
    """Training knobs; names mirror the snake_case config-file fields."""

    train_iterations: int = 2000
    batch_size: int = 128
    learning_rate: float = 1e-3
    learning_rate_decay: float = 0.99
    learning_rate_decay_steps: int = 100
    train_counter_examples: int = 64
    action_boundary_buffer: float = 0.05
    counterexample_mode: str = "uniform"
    gradient_penalty: str = "none"
    gradient_margin: float = 1.0
    langevin_iterations: int = 50
    langevin_learning_rate_init: float = 0.1
    langevin_learning_rate_final: float = 1e-5
    langevin_polynomial_decay_power: float = 2.0
    langevin_delta_action_clip: float = 0.1
    langevin_noise_scale: float = 1.0

    def __post_init__(self):
        if self.train_counter_examples < 1:
            raise ValueError("need at least one counter-example per sample")
        if not 0.0 < self.learning_rate_decay <= 1.0:
            raise ValueError("learning_rate_decay must be in (0, 1]")
        if self.action_boundary_buffer < 0:
            raise ValueError("action_boundary_buffer must be >= 0")
        if self.counterexample_mode not in COUNTEREXAMPLE_MODES:
            raise ValueError(f"counterexample_mode must be one of {COUNTEREXAMPLE_MODES}")
        if self.gradient_penalty not in GRADIENT_PENALTY_MODES:
            raise ValueError(f"gradient_penalty must be one of {GRADIENT_PENALTY_MODES}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def exponential_lr(step: int, cfg: TrainConfig) -> float:
    """lr * decay^(step / decay_steps) with a real-valued exponent."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.learning_rate * cfg.learning_rate_decay ** (step / cfg.learning_rate_decay_steps)


def sample_uniform_negatives(rng, n_neg: int, y_min, y_max, batch: int | None = None):
    """i.i.d. uniform counter-examples inside the bounds box."""
    lo = np.asarray(y_min, dtype=np.float64)
    hi = np.asarray(y_max, dtype=np.float64)
    if np.any(lo > hi):
        raise ValueError("invalid bounds: y_min > y_max")
    size = (n_neg, lo.shape[0]) if batch is None else (batch, n_neg, lo.shape[0])
    return rng.uniform(lo, hi, size=size)


def info_nce_loss(e_positive: float, e_negatives) -> float:
    """Cross-entropy of picking the true target among the counter-examples.

    -log( exp(-E+) / (exp(-E+) + sum_j exp(-E_j)) ), stabilized through
    log-sum-exp.
    """
    e_negatives = np.asarray(e_negatives, dtype=np.float64)
    if e_negatives.size < 1:
        raise ValueError("need at least one negative energy")
    logits = np.concatenate([[-float(e_positive)], -e_negatives.ravel()])
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[0])


def info_nce_batch(e_pos: np.ndarray, e_neg: np.ndarray):
    """Vectorized loss plus gradients w.r.t. every energy.

    Returns (mean loss, dL/dE+ (B,), dL/dE- (B, K)) where L is the mean
    of the per-sample losses.
    """
    batch = e_pos.shape[0]
    logits = np.concatenate([-e_pos[:, None], -e_neg], axis=1)
    m = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - m)
    z = w.sum(axis=1, keepdims=True)
    p = w / z
    losses = (m[:, 0] + np.log(z[:, 0])) - logits[:, 0]
    # d loss / d logit_j = p_j - [j == 0]; logits are negated energies.
    d_pos = (1.0 - p[:, 0]) / batch
    d_neg = -p[:, 1:] / batch
    return float(losses.mean()), d_pos, d_neg


def gradient_penalty_value(model: Mlp, x, negatives, margin: float) -> float:
    """Hinge penalty on the max-abs energy gradient at the given points."""
    b, k, n = negatives.shape
    rows_x = np.repeat(np.asarray(x, dtype=np.float64), k, axis=0)
    g = model.grad_y(rows_x, negatives.reshape(b * k, n))
    norms = np.max(np.abs(g), axis=-1)
    return float(np.sum(np.maximum(norms - margin, 0.0) ** 2))


def gradient_penalty_with_grads(model: Mlp, x, negatives, margin: float):
    """Penalty value and its parameter gradients (double backprop)."""
    b, k, n = negatives.shape
    rows_x = np.repeat(np.asarray(x, dtype=np.float64), k, axis=0)
    xy = np.concatenate([rows_x, negatives.reshape(b * k, n)], axis=1)
    g_full, cache = model.input_gradient_cached(xy)
    gy = g_full[:, -n:]
    norms = np.max(np.abs(gy), axis=-1)
    hinge = np.maximum(norms - margin, 0.0)
    value = float(np.sum(hinge**2))
    grad_wrt_g = np.zeros_like(g_full)
    rows = np.arange(gy.shape[0])
    cols = np.argmax(np.abs(gy), axis=-1)
    grad_wrt_g[rows, xy.shape[1] - n + cols] = 2.0 * hinge * np.sign(gy[rows, cols])
    return value, model.input_gradient_backward(cache, grad_wrt_g)


def sample_langevin_negatives(model: Mlp, x, rng, cfg: TrainConfig, n_neg: int | None = None):
    """Counter-examples mined by Langevin chains in the [-1, 1] box.

    Chains start uniform and run ``langevin_iterations`` steps with the
    polynomial step-size schedule. The result is plain data; no
    gradient information survives the chain.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    batch = x.shape[0]
    k = cfg.train_counter_examples if n_neg is None else n_neg
    n = model.input_dim - x.shape[1]
    steps = cfg.langevin_iterations
    y0 = rng.uniform(-1.0, 1.0, size=(batch * k, n))
    x_rows = np.repeat(x, k, axis=0)

    def schedule(step):
        return poly_decay(
            step,
            steps,
            cfg.langevin_learning_rate_init,
            cfg.langevin_learning_rate_final,
            cfg.langevin_polynomial_decay_power,
        )

    y = langevin_chain(
        model, x_rows, y0, steps, schedule,
        cfg.langevin_delta_action_clip, cfg.langevin_noise_scale,
        lambda _k: rng.standard_normal((batch * k, n)),
    )
    return y.reshape(batch, k, n)


def train_energy_model(model: Mlp, x, y, bounds, cfg: TrainConfig, rng):
    """Contrastive training loop; returns the per-step loss trace.

    Inputs and targets must already be normalized; ``bounds`` is the
    counter-example box in that normalized space ([-1, 1] for Langevin
    mode). Each step samples a batch, draws fresh negatives per sample,
    applies an Adam update with the exponential learning-rate schedule,
    and (for spectral-norm models) re-normalizes the weights.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = as_rng(rng)
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    n_samples = x.shape[0]
    k = cfg.train_counter_examples
    state = AdamState.for_model(model)
    losses = np.zeros(cfg.train_iterations)
    for step in range(cfg.train_iterations):
        idx = rng.integers(0, n_samples, size=cfg.batch_size)
        xb, yb = x[idx], y[idx]
        if cfg.counterexample_mode == "uniform":
            negatives = sample_uniform_negatives(rng, k, lo, hi, batch=cfg.batch_size)
        else:
            negatives = sample_langevin_negatives(model, xb, rng, cfg)
        rows_x = np.concatenate([xb, np.repeat(xb, k, axis=0)], axis=0)
        rows_y = np.concatenate([yb, negatives.reshape(-1, yb.shape[1])], axis=0)
        rows = np.concatenate([rows_x, rows_y], axis=1)
        train_mode = model.dropout_rate > 0.0
        out, cache = model.forward_cached(rows, train_mode=train_mode, rng=rng)
        energies = out[:, 0]
        e_pos = energies[: cfg.batch_size]
        e_neg = energies[cfg.batch_size :].reshape(cfg.batch_size, k)
        loss, d_pos, d_neg = info_nce_batch(e_pos, e_neg)
        grad_out = np.concatenate([d_pos, d_neg.ravel()])[:, None]
        grads, _ = model.backward(cache, grad_out)
        if cfg.gradient_penalty == "final_step_only":
            pval, pgrads = gradient_penalty_with_grads(
                model, xb, negatives, cfg.gradient_margin
            )
            loss += pval / cfg.batch_size
            grads.add_(pgrads, scale=1.0 / cfg.batch_size)
        if not np.isfinite(loss):
            raise FloatingPointError(f"training diverged at step {step} (loss={loss})")
        adam_step(model, state, grads, exponential_lr(step, cfg))
        if model.spectral_norm:
            model.apply_spectral_norm(power_iters=1)
        losses[step] = loss
    return model, losses


def train_autoregressive_ensemble(models, x, y, bounds, cfg: TrainConfig, rng):
    """Train one prefix-conditioned energy model per target dimension.

    Model j scores (x, y[:, :j+1]); its counter-examples keep the true
    prefix and replace only coordinate j with uniform draws from that
    coordinate's bounds, so each model learns the conditional energy of
    its coordinate given the ground-truth prefix.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = as_rng(rng)
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    n = y.shape[1]
    if len(models) != n:
        raise ValueError(f"need {n} models, got {len(models)}")
    traces = []
    for j, model in enumerate(models):
        xj = np.concatenate([x, y[:, :j]], axis=1)
        yj = y[:, j : j + 1]
        _, trace = train_energy_model(
            model, xj, yj, (lo[j : j + 1], hi[j : j + 1]), cfg, rng
        )
        traces.append(trace)
    return models, np.stack(traces)
