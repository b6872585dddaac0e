"""Datasets, target bounds, normalization, and trajectory persistence.

Trajectories are stored as JSON lines, one record per episode:
``{"observations": [[...], ...], "actions": [[...], ...], "return": r,
"success": bool}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .base import check_X_y


@dataclass
class Trajectory:
    """One episode of (observation, action) pairs with its outcome."""

    observations: np.ndarray  # (T, m)
    actions: np.ndarray  # (T, n)
    ret: float = 0.0
    success: bool = False

    def __len__(self):
        return self.observations.shape[0]


@dataclass
class RegressionDataset:
    """Sample pairs plus the target bounds used to draw counter-examples."""

    x: np.ndarray  # (N, m)
    y: np.ndarray  # (N, n)
    y_min: np.ndarray | None = None
    y_max: np.ndarray | None = None
    trajectory_returns: list | None = None
    degenerate_dims: np.ndarray | None = None

    def __post_init__(self):
        self.x, self.y = check_X_y(self.x, self.y)

    @property
    def n_samples(self):
        return self.x.shape[0]

    @property
    def x_dim(self):
        return self.x.shape[1]

    @property
    def y_dim(self):
        return self.y.shape[1]


def compute_bounds(dataset: RegressionDataset, buffer: float, env_limits=None):
    """Per-dimension target bounds: data min/max, buffered, then clipped.

    ``buffer`` is a fraction of the per-dimension data range added on
    each side. Degenerate dimensions (min == max) are expanded by a
    fixed 1e-6 and flagged on the dataset. Bounds are stored on the
    dataset and returned.
    """
    if dataset.n_samples == 0:
        raise ValueError("empty dataset")
    if buffer < 0:
        raise ValueError("buffer must be >= 0")
    lo = dataset.y.min(axis=0)
    hi = dataset.y.max(axis=0)
    span = hi - lo
    degenerate = span == 0.0
    lo = lo - buffer * span
    hi = hi + buffer * span
    lo[degenerate] -= 1e-6
    hi[degenerate] += 1e-6
    if env_limits is not None:
        env_lo = np.asarray(env_limits[0], dtype=np.float64)
        env_hi = np.asarray(env_limits[1], dtype=np.float64)
        lo = np.maximum(lo, env_lo)
        hi = np.minimum(hi, env_hi)
    if np.any(lo >= hi):
        raise ValueError("bounds collapsed after clipping to env limits")
    dataset.y_min, dataset.y_max = lo, hi
    dataset.degenerate_dims = degenerate
    return lo, hi


class Normalizer:
    """Invertible per-dimension affine map, z-score or unit-range.

    ``mode="zscore"`` maps to zero mean / unit variance (zero-variance
    dimensions get unit scale and are flagged). ``mode="unit_range"``
    maps a reference interval per dimension onto [-1, 1]; by default the
    interval is the data min/max, but training passes the buffered
    target bounds.
    """

    def __init__(self, mode: str = "zscore"):
        if mode not in ("zscore", "unit_range"):
            raise ValueError(f"unknown normalizer mode {mode!r}")
        self.mode = mode

    def fit(self, values, interval=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] == 0:
            raise ValueError("cannot fit a normalizer on an empty array")
        if self.mode == "zscore":
            self.shift_ = values.mean(axis=0)
            scale = values.std(axis=0)
            self.flat_dims_ = scale == 0.0
            scale = np.where(self.flat_dims_, 1.0, scale)
            self.scale_ = scale
        else:
            if interval is None:
                lo, hi = values.min(axis=0), values.max(axis=0)
            else:
                lo = np.asarray(interval[0], dtype=np.float64)
                hi = np.asarray(interval[1], dtype=np.float64)
            span = hi - lo
            self.flat_dims_ = span == 0.0
            span = np.where(self.flat_dims_, 1.0, span)
            # [lo, hi] -> [-1, 1]
            self.shift_ = (lo + hi) / 2.0
            self.scale_ = span / 2.0
        return self

    def transform(self, values):
        values = np.asarray(values, dtype=np.float64)
        return (values - self.shift_) / self.scale_

    def inverse_transform(self, values):
        values = np.asarray(values, dtype=np.float64)
        return values * self.scale_ + self.shift_

    def to_dict(self):
        return {
            "mode": self.mode,
            "shift": self.shift_.tolist(),
            "scale": self.scale_.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        norm = cls(doc["mode"])
        norm.shift_ = np.asarray(doc["shift"], dtype=np.float64)
        norm.scale_ = np.asarray(doc["scale"], dtype=np.float64)
        norm.flat_dims_ = np.zeros_like(norm.shift_, dtype=bool)
        return norm


def rwr_filter(trajectories: list, keep_fraction: float = 0.5) -> list:
    """Keep the top fraction of trajectories by return.

    Ties are broken in favor of earlier trajectory index, so with all
    returns equal the first half survives. Returns the kept
    trajectories in their original order.
    """
    if not trajectories:
        raise ValueError("no trajectories to filter")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    returns = [t.ret for t in trajectories]
    if any(r is None for r in returns):
        raise ValueError("trajectories lack returns; cannot reward-filter")
    n_keep = max(1, int(round(keep_fraction * len(trajectories))))
    # Sort by (-return, index): equal returns keep earliest first.
    order = sorted(range(len(trajectories)), key=lambda i: (-returns[i], i))
    kept = sorted(order[:n_keep])
    return [trajectories[i] for i in kept]


def flatten_trajectories(trajectories: list) -> RegressionDataset:
    """Concatenate episodes into a flat (observation, action) dataset."""
    if not trajectories:
        raise ValueError("no trajectories")
    x = np.concatenate([t.observations for t in trajectories], axis=0)
    y = np.concatenate([t.actions for t in trajectories], axis=0)
    return RegressionDataset(x, y, trajectory_returns=[t.ret for t in trajectories])


def stack_history(trajectories: list, history: int = 1) -> list:
    """Optionally stack the last ``history`` observations per step.

    The earliest frames repeat at episode starts. ``history=1`` is the
    identity.
    """
    if history < 1:
        raise ValueError("history must be >= 1")
    if history == 1:
        return trajectories
    out = []
    for t in trajectories:
        obs = t.observations
        frames = []
        for lag in range(history - 1, -1, -1):
            idx = np.maximum(np.arange(len(t)) - lag, 0)
            frames.append(obs[idx])
        out.append(
            Trajectory(np.concatenate(frames, axis=1), t.actions, t.ret, t.success)
        )
    return out


def save_trajectories(path, trajectories: list):
    with open(path, "w") as fh:
        for t in trajectories:
            record = {
                "observations": t.observations.tolist(),
                "actions": t.actions.tolist(),
                "return": float(t.ret),
                "success": bool(t.success),
            }
            fh.write(json.dumps(record) + "\n")


def load_trajectories(path) -> list:
    trajectories = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            trajectories.append(
                Trajectory(
                    np.asarray(record["observations"], dtype=np.float64),
                    np.asarray(record["actions"], dtype=np.float64),
                    float(record.get("return", 0.0)),
                    bool(record.get("success", False)),
                )
            )
    if not trajectories:
        raise ValueError(f"no trajectories found in {path}")
    return trajectories
