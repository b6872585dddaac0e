"""Estimator base class and input validation helpers.

The estimators in this package follow the scikit-learn protocol
(``fit``/``predict``, ``get_params``/``set_params``) without depending on
scikit-learn itself, so they compose with pipelines, ``clone()`` and
grid-search tooling via duck typing.
"""
from __future__ import annotations

import inspect

import numpy as np


class NotFittedError(RuntimeError):
    """Raised when predict-like methods are called before fit."""


class BaseEstimator:
    """Minimal scikit-learn-compatible base: introspective get/set params.

    Subclasses must accept all hyperparameters as explicit keyword
    arguments of ``__init__`` and store them under the same attribute
    names, as scikit-learn estimators do.
    """

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, key, value)
        return self

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({params})"


def check_array(arr, *, name: str = "X", ndim: int = 2, allow_1d: bool = False) -> np.ndarray:
    """Coerce to a finite float64 array of the expected rank.

    1-D input is promoted to a single-column 2-D array when ``allow_1d``
    is set, matching what scikit-learn's ``check_array`` does for targets.
    """
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim == 1 and allow_1d and ndim == 2:
        out = out[:, None]
    if out.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {out.shape}")
    if out.size and not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return out


def check_X_y(X, Y):
    """Validate a paired (inputs, targets) design matrix set."""
    X = check_array(X, name="X")
    Y = check_array(Y, name="Y", allow_1d=True)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(
            f"X and Y have inconsistent sample counts: {X.shape[0]} vs {Y.shape[0]}"
        )
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return X, Y


def check_is_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a Generator, or None (fresh entropy)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derived_rng(*keys) -> np.random.Generator:
    """Deterministic child stream from integer keys (tuples flatten).

    Used to give every (episode, step) or (grid point) its own
    independent stream so batched and sequential evaluation see
    identical noise.
    """
    flat = []
    for key in keys:
        if isinstance(key, (tuple, list)):
            flat.extend(int(k) for k in key)
        else:
            flat.append(int(key))
    return np.random.default_rng(np.random.SeedSequence(flat))
