"""Scikit-learn style estimators wrapping the trainers and samplers.

Every estimator implements ``fit(X, Y)`` / ``predict(X)`` and the
``get_params``/``set_params`` protocol. ``decide(X, rngs)`` is the
policy entry point used by closed-loop evaluation: one independent
noise stream per row, so batched rollouts replay identically when run
one episode at a time.
"""
from __future__ import annotations

import numpy as np

from .base import BaseEstimator, as_rng, check_X_y, check_array, check_is_fitted, derived_rng
from .baselines import NeighborIndex, mdn_sample, train_mdn, train_mse
from .data import Normalizer, RegressionDataset, compute_bounds
from .inference import (
    InferenceConfig,
    optimize_autoregressive_batch,
    optimize_dfo_batch,
    optimize_langevin_batch,
)
from .net import Mlp, model_from_json, model_to_json
from .training import TrainConfig, train_autoregressive_ensemble, train_energy_model

PREDICT_STREAM = 104729  # namespace tag for predict()-derived rng streams


class _RegressorMixin:
    def decide(self, X, rngs=None) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        X = check_array(X)
        seed = getattr(self, "random_state", 0) or 0
        rngs = [derived_rng(PREDICT_STREAM, seed, i) for i in range(X.shape[0])]
        return self.decide(X, rngs)


def _train_config_from(est, **overrides) -> TrainConfig:
    fields = {
        name: getattr(est, name)
        for name in TrainConfig.__dataclass_fields__
        if hasattr(est, name)
    }
    fields.update(overrides)
    return TrainConfig(**fields)


class EnergyRegressor(BaseEstimator, _RegressorMixin):
    """Regression by argmin over a learned scalar energy.

    ``variant`` picks both the counter-example scheme and the inference
    engine: "dfo" (uniform counter-examples, sampling search),
    "autoregressive_dfo" (one energy model per target dimension), or
    "langevin" (chain-mined counter-examples, gradient-based inference,
    spectral norm + gradient penalty on by default).

    Inputs are z-scored. Targets are z-scored for the derivative-free
    variants and mapped onto [-1, 1] over the buffered target bounds
    for Langevin, which also constrains its chains to that box.
    """

    def __init__(
        self,
        variant: str = "dfo",
        width: int = 64,
        depth: int = 4,
        train_iterations: int = 2000,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        learning_rate_decay: float = 0.99,
        learning_rate_decay_steps: int = 100,
        train_counter_examples: int = 64,
        action_boundary_buffer: float = 0.05,
        gradient_penalty: str = "auto",
        gradient_margin: float = 1.0,
        langevin_iterations: int = 50,
        langevin_learning_rate_init: float = 0.1,
        langevin_learning_rate_final: float = 1e-5,
        langevin_polynomial_decay_power: float = 2.0,
        langevin_delta_action_clip: float = 0.1,
        langevin_noise_scale: float = 1.0,
        langevin_second_chain_learning_rate: float | None = None,
        spectral_norm: str | bool = "auto",
        dropout_rate: float = 0.0,
        residual: bool = False,
        n_samples: int = 1024,
        n_iters: int = 3,
        sigma_init: float = 0.33,
        shrink_k: float = 0.5,
        env_limits=None,
        random_state: int = 0,
    ):
        self.variant = variant
        self.width = width
        self.depth = depth
        self.train_iterations = train_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.learning_rate_decay = learning_rate_decay
        self.learning_rate_decay_steps = learning_rate_decay_steps
        self.train_counter_examples = train_counter_examples
        self.action_boundary_buffer = action_boundary_buffer
        self.gradient_penalty = gradient_penalty
        self.gradient_margin = gradient_margin
        self.langevin_iterations = langevin_iterations
        self.langevin_learning_rate_init = langevin_learning_rate_init
        self.langevin_learning_rate_final = langevin_learning_rate_final
        self.langevin_polynomial_decay_power = langevin_polynomial_decay_power
        self.langevin_delta_action_clip = langevin_delta_action_clip
        self.langevin_noise_scale = langevin_noise_scale
        self.langevin_second_chain_learning_rate = langevin_second_chain_learning_rate
        self.spectral_norm = spectral_norm
        self.dropout_rate = dropout_rate
        self.residual = residual
        self.n_samples = n_samples
        self.n_iters = n_iters
        self.sigma_init = sigma_init
        self.shrink_k = shrink_k
        self.env_limits = env_limits
        self.random_state = random_state

    def _resolved_flags(self):
        # "auto" keeps spectral norm off: normalizing every layer to
        # sigma=1 caps the energy's slope at 1 and the basin minima
        # cannot be placed precisely enough (the gradient penalty also
        # never fires under that cap). The penalty alone stabilizes
        # Langevin chains at this scale; spectral norm stays available
        # by passing True.
        is_langevin = self.variant == "langevin"
        spectral = False if self.spectral_norm == "auto" else bool(self.spectral_norm)
        penalty = (
            ("final_step_only" if is_langevin else "none")
            if self.gradient_penalty == "auto"
            else self.gradient_penalty
        )
        return spectral, penalty

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y)
        if self.variant not in ("dfo", "autoregressive_dfo", "langevin"):
            raise ValueError(f"unknown variant {self.variant!r}")
        dataset = RegressionDataset(X, Y)
        compute_bounds(dataset, self.action_boundary_buffer, self.env_limits)
        spectral, penalty = self._resolved_flags()
        self.x_normalizer_ = Normalizer("zscore").fit(X)
        x_norm = self.x_normalizer_.transform(X)
        mode = "langevin" if self.variant == "langevin" else "uniform"
        cfg = _train_config_from(self, counterexample_mode=mode, gradient_penalty=penalty)
        rng = as_rng(self.random_state)
        n = Y.shape[1]

        if self.variant == "langevin":
            self.y_normalizer_ = Normalizer("unit_range").fit(
                Y, interval=(dataset.y_min, dataset.y_max)
            )
            y_norm = self.y_normalizer_.transform(Y)
            bounds = (-np.ones(n), np.ones(n))
        else:
            self.y_normalizer_ = Normalizer("zscore").fit(Y)
            y_norm = self.y_normalizer_.transform(Y)
            bounds = (
                self.y_normalizer_.transform(dataset.y_min),
                self.y_normalizer_.transform(dataset.y_max),
            )
        self.bounds_ = bounds

        m = X.shape[1]
        if self.variant == "autoregressive_dfo":
            models = [
                Mlp.create(
                    m + j + 1, 1, self.width, self.depth,
                    seed=int(rng.integers(2**31)),
                    spectral_norm=spectral, dropout_rate=self.dropout_rate,
                    residual=self.residual,
                )
                for j in range(n)
            ]
            self.models_, self.loss_trace_ = train_autoregressive_ensemble(
                models, x_norm, y_norm, bounds, cfg, rng
            )
        else:
            model = Mlp.create(
                m + n, 1, self.width, self.depth,
                seed=int(rng.integers(2**31)),
                spectral_norm=spectral, dropout_rate=self.dropout_rate,
                residual=self.residual,
            )
            model, self.loss_trace_ = train_energy_model(
                model, x_norm, y_norm, bounds, cfg, rng
            )
            self.models_ = [model]
        self.y_dim_ = n
        return self

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(
            variant=self.variant,
            n_samples=self.n_samples,
            n_iters=self.n_iters,
            sigma_init=self.sigma_init,
            shrink_k=self.shrink_k,
            langevin_iterations=self.langevin_iterations,
            langevin_learning_rate_init=self.langevin_learning_rate_init,
            langevin_learning_rate_final=self.langevin_learning_rate_final,
            langevin_polynomial_decay_power=self.langevin_polynomial_decay_power,
            langevin_delta_action_clip=self.langevin_delta_action_clip,
            langevin_noise_scale=self.langevin_noise_scale,
            langevin_second_chain_learning_rate=self.langevin_second_chain_learning_rate,
        )

    def decide(self, X, rngs=None) -> np.ndarray:
        check_is_fitted(self, "models_")
        X = check_array(X)
        if rngs is None:
            return self.predict(X)
        x_norm = self.x_normalizer_.transform(X)
        cfg = self.inference_config()
        if self.variant == "dfo":
            y_norm = optimize_dfo_batch(self.models_[0], x_norm, self.bounds_, cfg, rngs)
        elif self.variant == "autoregressive_dfo":
            y_norm = optimize_autoregressive_batch(self.models_, x_norm, self.bounds_, cfg, rngs)
        else:
            y_norm = optimize_langevin_batch(self.models_[0], x_norm, cfg, rngs)
        return self.y_normalizer_.inverse_transform(y_norm)

    def energy(self, X, Y) -> np.ndarray:
        """Learned energy at raw-space (input, target) pairs."""
        check_is_fitted(self, "models_")
        X, Y = check_X_y(X, Y)
        x_norm = self.x_normalizer_.transform(X)
        y_norm = self.y_normalizer_.transform(Y)
        if self.variant == "autoregressive_dfo":
            return self.models_[-1].energy(x_norm, y_norm)
        return self.models_[0].energy(x_norm, y_norm)


class MseRegressor(BaseEstimator, _RegressorMixin):
    """Plain feed-forward regression trained on mean squared error."""

    def __init__(
        self,
        width: int = 64,
        depth: int = 4,
        train_iterations: int = 2000,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        learning_rate_decay: float = 0.99,
        learning_rate_decay_steps: int = 100,
        dropout_rate: float = 0.1,
        residual: bool = False,
        random_state: int = 0,
    ):
        self.width = width
        self.depth = depth
        self.train_iterations = train_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.learning_rate_decay = learning_rate_decay
        self.learning_rate_decay_steps = learning_rate_decay_steps
        self.dropout_rate = dropout_rate
        self.residual = residual
        self.random_state = random_state

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y)
        self.x_normalizer_ = Normalizer("zscore").fit(X)
        self.y_normalizer_ = Normalizer("zscore").fit(Y)
        rng = as_rng(self.random_state)
        self.model_ = Mlp.create(
            X.shape[1], Y.shape[1], self.width, self.depth,
            seed=int(rng.integers(2**31)),
            dropout_rate=self.dropout_rate, residual=self.residual,
        )
        cfg = _train_config_from(self)
        _, self.loss_trace_ = train_mse(
            self.model_,
            self.x_normalizer_.transform(X),
            self.y_normalizer_.transform(Y),
            cfg,
            rng,
        )
        return self

    def decide(self, X, rngs=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X)
        out = self.model_.forward(self.x_normalizer_.transform(X))
        return self.y_normalizer_.inverse_transform(out)

    def predict(self, X) -> np.ndarray:
        return self.decide(X)


class MdnRegressor(BaseEstimator, _RegressorMixin):
    """Mixture density network: MLP head over Gaussian mixture params.

    ``predict`` draws a sample from the tempered mixture (matching how
    such policies act); ``predict_mean`` gives the max-weight
    component's mean for deterministic use.
    """

    def __init__(
        self,
        n_components: int = 8,
        width: int = 64,
        depth: int = 4,
        train_iterations: int = 2000,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        learning_rate_decay: float = 0.99,
        learning_rate_decay_steps: int = 100,
        dropout_rate: float = 0.1,
        training_temperature: float = 1.0,
        test_temperature: float = 1.0,
        test_variance_exponent: float = 1.0,
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.width = width
        self.depth = depth
        self.train_iterations = train_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.learning_rate_decay = learning_rate_decay
        self.learning_rate_decay_steps = learning_rate_decay_steps
        self.dropout_rate = dropout_rate
        self.training_temperature = training_temperature
        self.test_temperature = test_temperature
        self.test_variance_exponent = test_variance_exponent
        self.random_state = random_state

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y)
        self.x_normalizer_ = Normalizer("zscore").fit(X)
        self.y_normalizer_ = Normalizer("zscore").fit(Y)
        self.y_dim_ = Y.shape[1]
        rng = as_rng(self.random_state)
        self.model_ = Mlp.create(
            X.shape[1],
            self.n_components * (1 + 2 * self.y_dim_),
            self.width,
            self.depth,
            seed=int(rng.integers(2**31)),
            dropout_rate=self.dropout_rate,
        )
        cfg = _train_config_from(self)
        _, self.loss_trace_ = train_mdn(
            self.model_,
            self.x_normalizer_.transform(X),
            self.y_normalizer_.transform(Y),
            self.n_components,
            cfg,
            rng,
            train_temperature=self.training_temperature,
        )
        return self

    def head_outputs(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.model_.forward(self.x_normalizer_.transform(X))

    def decide(self, X, rngs=None) -> np.ndarray:
        raw = self.head_outputs(X)
        if rngs is None:
            seed = self.random_state or 0
            rngs = [derived_rng(PREDICT_STREAM, seed, i) for i in range(raw.shape[0])]
        out = np.stack(
            [
                mdn_sample(
                    raw[i : i + 1], self.n_components, self.y_dim_, rngs[i],
                    test_temperature=self.test_temperature,
                    variance_exponent=self.test_variance_exponent,
                )
                for i in range(raw.shape[0])
            ]
        )
        return self.y_normalizer_.inverse_transform(out)


class NearestNeighborRegressor(BaseEstimator, _RegressorMixin):
    """Memorizes the training pairs and replays the closest one."""

    def __init__(self):
        pass

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y)
        self.index_ = NeighborIndex(X, Y)
        return self

    def decide(self, X, rngs=None) -> np.ndarray:
        check_is_fitted(self, "index_")
        return self.index_.predict(check_array(X))

    def predict(self, X) -> np.ndarray:
        return self.decide(X)
