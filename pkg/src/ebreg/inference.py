"""Argmin-over-targets inference engines for trained energy models.

Three engines: an iterative sample/score/resample/perturb search, an
autoregressive per-coordinate version of it backed by one model per
target dimension, and noisy gradient descent (Langevin chains) with a
second refinement chain.

All engines are deterministic given (model, input, rng streams) and are
offered in batched form: ``B`` independent inferences run in lockstep,
each consuming noise from its own generator, so batched and one-at-a-time
execution produce identical answers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import as_rng
from .net import Mlp

VARIANTS = ("dfo", "autoregressive_dfo", "langevin")


@dataclass
class InferenceConfig:
    """Sampler choice plus that sampler's full knob set.

    Field names mirror the snake_case hyperparameter vocabulary used in
    config files (``langevin_delta_action_clip`` etc.).
    """

    variant: str = "dfo"
    n_samples: int = 16384
    n_iters: int = 3
    sigma_init: float = 0.33
    shrink_k: float = 0.5
    langevin_iterations: int = 50
    langevin_learning_rate_init: float = 0.1
    langevin_learning_rate_final: float = 1e-5
    langevin_polynomial_decay_power: float = 2.0
    langevin_delta_action_clip: float = 0.1
    langevin_noise_scale: float = 1.0
    langevin_second_chain_learning_rate: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 < self.shrink_k <= 1.0:
            raise ValueError("shrink_k must be in (0, 1]")
        if self.langevin_learning_rate_final > self.langevin_learning_rate_init:
            raise ValueError("langevin final learning rate must not exceed init")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "InferenceConfig":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def poly_decay(step: int, total: int, lr_init: float, lr_final: float, power: float) -> float:
    """Polynomially decaying step size from lr_init (step 0) to lr_final."""
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    frac = 1.0 - step / total
    return lr_final + (lr_init - lr_final) * frac**power


def multinomial_resample(rng, probs, values):
    """Draw len(values) i.i.d. rows from ``values`` by the given weights."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise ValueError("negative probabilities")
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {total}, expected 1")
    values = np.asarray(values)
    idx = rng.choice(len(probs), size=len(probs), replace=True, p=probs / total)
    return values[idx]


def _stable_softmax_neg(energies: np.ndarray) -> np.ndarray:
    """softmax(-E) row-wise with max subtraction for stability."""
    z = -energies
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _tiled_energy(model: Mlp, x: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Energies for (B, S, n) samples against (B, m) inputs, one call."""
    b, s, n = samples.shape
    rows_x = np.repeat(x, s, axis=0)
    e = model.energy(rows_x, samples.reshape(b * s, n))
    return e.reshape(b, s)


# -- derivative-free optimizer ----------------------------------------


def optimize_dfo_batch(model: Mlp, x, bounds, cfg: InferenceConfig, rngs) -> np.ndarray:
    """Iterative sample/score/resample/perturb search, B inferences at once.

    Per iteration: score all samples, softmax of negative energy,
    resample with replacement, add Gaussian noise of scale sigma, clip
    to bounds, shrink sigma by K. The update block is skipped on the
    final iteration; the answer is the sample with the highest final
    probability (ties to the lowest sample index).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    batch, n = x.shape[0], lo.shape[0]
    s = cfg.n_samples
    samples = np.stack([rngs[b].uniform(lo, hi, size=(s, n)) for b in range(batch)])
    sigma = cfg.sigma_init
    probs = np.full((batch, s), 1.0 / s)
    for it in range(1, cfg.n_iters + 1):
        energies = _tiled_energy(model, x, samples)
        probs = _stable_softmax_neg(energies)
        if it < cfg.n_iters:
            for b in range(batch):
                idx = rngs[b].choice(s, size=s, replace=True, p=probs[b])
                samples[b] = samples[b][idx]
            noise = np.stack([rngs[b].standard_normal((s, n)) for b in range(batch)])
            samples = np.clip(samples + sigma * noise, lo, hi)
            sigma *= cfg.shrink_k
    best = probs.argmax(axis=1)
    return samples[np.arange(batch), best]


def optimize_dfo(model: Mlp, x, bounds, cfg: InferenceConfig, rng) -> np.ndarray:
    out = optimize_dfo_batch(model, np.atleast_2d(x), bounds, cfg, [as_rng(rng)])
    return out[0]


# -- autoregressive derivative-free optimizer --------------------------


def optimize_autoregressive_batch(models, x, bounds, cfg: InferenceConfig, rngs) -> np.ndarray:
    """Coordinate-descent variant: model j scores the prefix y[:, :j+1].

    Inside each iteration the dimensions are swept in order; each sweep
    scores prefixes with that dimension's model, resamples the prefix
    block (columns up to j) by those scores while later coordinates
    stay in place to preserve their diversity, and perturbs only the
    current coordinate. Sigma shrinks once per outer iteration.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    batch, n = x.shape[0], lo.shape[0]
    if len(models) != n:
        raise ValueError(f"need {n} per-dimension models, got {len(models)}")
    s = cfg.n_samples
    samples = np.stack([rngs[b].uniform(lo, hi, size=(s, n)) for b in range(batch)])
    sigma = cfg.sigma_init
    probs = np.full((batch, s), 1.0 / s)
    for it in range(1, cfg.n_iters + 1):
        for j in range(n):
            energies = _tiled_energy(models[j], x, samples[:, :, : j + 1])
            probs = _stable_softmax_neg(energies)
            if it < cfg.n_iters:
                for b in range(batch):
                    idx = rngs[b].choice(s, size=s, replace=True, p=probs[b])
                    samples[b, :, : j + 1] = samples[b, idx, : j + 1]
                    samples[b, :, j] += sigma * rngs[b].standard_normal(s)
                samples[:, :, j] = np.clip(samples[:, :, j], lo[j], hi[j])
        if it < cfg.n_iters:
            sigma *= cfg.shrink_k
    best = probs.argmax(axis=1)
    return samples[np.arange(batch), best]


def optimize_autoregressive(models, x, bounds, cfg: InferenceConfig, rng) -> np.ndarray:
    out = optimize_autoregressive_batch(models, np.atleast_2d(x), bounds, cfg, [as_rng(rng)])
    return out[0]


# -- Langevin chains ----------------------------------------------------


def langevin_chain(
    model: Mlp,
    x_rows: np.ndarray,
    y: np.ndarray,
    steps: int,
    step_size,
    delta_clip: float,
    noise_scale: float,
    noise_source,
    return_trace: bool = False,
):
    """Noisy gradient descent on the energy, in the [-1, 1] box.

    Update: y <- y - lr * (0.5 * dE/dy + noise), with the combined step
    clipped per-dimension to +-delta_clip and samples clipped to the
    box. ``step_size`` is either a scalar or a function of the step
    index; ``noise_source(k)`` must return standard normal draws of
    y's shape (scaled here by noise_scale). Gradients never flow back
    through the chain: callers treat the result as plain data.
    """
    y = np.array(y, dtype=np.float64)
    trace = [y.copy()] if return_trace else None
    for k in range(steps):
        lr = step_size(k) if callable(step_size) else step_size
        g = model.grad_y(x_rows, y)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite energy gradient at chain step {k}")
        noise = noise_scale * noise_source(k)
        delta = -lr * (0.5 * g + noise)
        delta = np.clip(delta, -delta_clip, delta_clip)
        y = np.clip(y + delta, -1.0, 1.0)
        if return_trace:
            trace.append(y.copy())
    return (y, trace) if return_trace else y


def optimize_langevin_batch(model: Mlp, x, cfg: InferenceConfig, rngs, return_population=False):
    """Langevin inference: scheduled chain, then a refinement chain.

    Chain 1 runs ``langevin_iterations`` steps with the polynomial
    step-size schedule. Chain 2 runs the same number of steps at the
    constant second-chain rate (skipped when that rate is None, in
    which case chain 1 covers twice the steps so the inference chain is
    always twice the training chain). The lowest-energy sample of the
    final population wins, ties to the lowest index.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    batch = x.shape[0]
    n = model.input_dim - x.shape[1]
    s = cfg.n_samples
    it = cfg.langevin_iterations
    y = np.stack([rngs[b].uniform(-1.0, 1.0, size=(s, n)) for b in range(batch)])
    y = y.reshape(batch * s, n)
    x_rows = np.repeat(x, s, axis=0)

    def noise_source(_k):
        draws = [rngs[b].standard_normal((s, n)) for b in range(batch)]
        return np.concatenate(draws, axis=0)

    second_lr = cfg.langevin_second_chain_learning_rate
    first_steps = it if second_lr is not None else 2 * it

    def schedule(k):
        return poly_decay(
            k,
            first_steps,
            cfg.langevin_learning_rate_init,
            cfg.langevin_learning_rate_final,
            cfg.langevin_polynomial_decay_power,
        )

    y = langevin_chain(
        model, x_rows, y, first_steps, schedule,
        cfg.langevin_delta_action_clip, cfg.langevin_noise_scale, noise_source,
    )
    if second_lr is not None:
        y = langevin_chain(
            model, x_rows, y, it, second_lr,
            cfg.langevin_delta_action_clip, cfg.langevin_noise_scale, noise_source,
        )
    energies = model.energy(x_rows, y).reshape(batch, s)
    y = y.reshape(batch, s, n)
    best = energies.argmin(axis=1)
    result = y[np.arange(batch), best]
    if return_population:
        return result, y, energies
    return result


def optimize_langevin(model: Mlp, x, cfg: InferenceConfig, rng) -> np.ndarray:
    out = optimize_langevin_batch(model, np.atleast_2d(x), cfg, [as_rng(rng)])
    return out[0]
