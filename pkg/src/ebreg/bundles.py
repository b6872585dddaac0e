"""Saving and loading trained policies as single JSON documents.

A bundle carries the method name, constructor params, fitted
normalizers/bounds, and the serialized network(s). Nearest-neighbor
policies store a reference to the demos file they memorized instead of
inlining the arrays.
"""
from __future__ import annotations

import json

import numpy as np

from .data import Normalizer, load_trajectories
from .estimators import EnergyRegressor, MdnRegressor, MseRegressor, NearestNeighborRegressor
from .harness import demos_to_dataset
from .net import model_from_json, model_to_json


def _json_safe(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (tuple, list)):
        return [_json_safe(v) for v in value]
    return value


def save_policy(path, estimator, method: str, *, history: int = 1,
                demos_path: str | None = None, rwr_fraction: float | None = None):
    params = {k: _json_safe(v) for k, v in estimator.get_params().items()}
    doc = {"format": "ebreg-policy-v1", "method": method, "params": params,
           "history": history, "rwr_fraction": rwr_fraction}
    if method == "nn":
        if demos_path is None:
            raise ValueError("nearest-neighbor bundles need the demos path")
        doc["demos_path"] = str(demos_path)
    else:
        doc["x_normalizer"] = estimator.x_normalizer_.to_dict()
        doc["y_normalizer"] = estimator.y_normalizer_.to_dict()
        if method == "ebm":
            doc["bounds"] = [estimator.bounds_[0].tolist(), estimator.bounds_[1].tolist()]
            doc["y_dim"] = estimator.y_dim_
            doc["models"] = [json.loads(model_to_json(m)) for m in estimator.models_]
        elif method == "mdn":
            doc["y_dim"] = estimator.y_dim_
            doc["models"] = [json.loads(model_to_json(estimator.model_))]
        else:
            doc["models"] = [json.loads(model_to_json(estimator.model_))]
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_policy(path, demos_path: str | None = None):
    """Rebuild the estimator; returns (estimator, method, history)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "ebreg-policy-v1":
        raise ValueError(f"{path} is not a policy bundle")
    method = doc["method"]
    params = doc["params"]
    if method == "nn":
        est = NearestNeighborRegressor(**params)
        source = demos_path or doc["demos_path"]
        dataset = demos_to_dataset(
            load_trajectories(source),
            history=doc.get("history", 1),
            rwr_fraction=doc.get("rwr_fraction"),
        )
        est.fit(dataset.x, dataset.y)
        return est, method, doc.get("history", 1)
    if params.get("env_limits") is not None:
        params["env_limits"] = tuple(np.asarray(v) for v in params["env_limits"])
    if method == "ebm":
        est = EnergyRegressor(**params)
        est.bounds_ = (
            np.asarray(doc["bounds"][0], dtype=np.float64),
            np.asarray(doc["bounds"][1], dtype=np.float64),
        )
        est.y_dim_ = doc["y_dim"]
        est.models_ = [model_from_json(json.dumps(m)) for m in doc["models"]]
    elif method == "mse":
        est = MseRegressor(**params)
        est.model_ = model_from_json(json.dumps(doc["models"][0]))
    elif method == "mdn":
        est = MdnRegressor(**params)
        est.y_dim_ = doc["y_dim"]
        est.model_ = model_from_json(json.dumps(doc["models"][0]))
    else:
        raise ValueError(f"unknown method {method!r}")
    est.x_normalizer_ = Normalizer.from_dict(doc["x_normalizer"])
    est.y_normalizer_ = Normalizer.from_dict(doc["y_normalizer"])
    return est, method, doc.get("history", 1)
