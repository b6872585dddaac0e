"""Energy-based implicit regression and behavioral cloning.

Train a scalar energy over (input, target) pairs with a contrastive
loss and predict by minimizing it, via derivative-free sampling,
autoregressive coordinate search, or Langevin chains; explicit MSE,
mixture-density, and nearest-neighbor baselines ride along, plus the
N-D particle benchmark and 1-D function suites they are compared on.
"""
from .base import BaseEstimator, NotFittedError
from .baselines import NeighborIndex, mdn_loss, mdn_sample, train_mdn, train_mse
from .data import (
    Normalizer,
    RegressionDataset,
    Trajectory,
    compute_bounds,
    flatten_trajectories,
    load_trajectories,
    rwr_filter,
    save_trajectories,
)
from .envs import (
    FUNCTION_KINDS,
    ParticleEnv,
    argmin_grid,
    distance_to_graph,
    make_function_task,
)
from .estimators import (
    EnergyRegressor,
    MdnRegressor,
    MseRegressor,
    NearestNeighborRegressor,
)
from .inference import (
    InferenceConfig,
    multinomial_resample,
    optimize_autoregressive,
    optimize_dfo,
    optimize_langevin,
    poly_decay,
)
from .net import AdamState, Mlp, adam_step, model_from_json, model_to_json
from .training import (
    TrainConfig,
    info_nce_loss,
    sample_langevin_negatives,
    sample_uniform_negatives,
    train_energy_model,
)

__version__ = "0.1.0"
