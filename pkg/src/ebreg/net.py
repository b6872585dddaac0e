"""Dense ReLU networks with hand-rolled reverse-mode gradients.

Everything is float64 numpy. The topology is fixed (stack of dense
layers, ReLU hidden activations, linear head) which keeps backprop a
short explicit loop instead of a general autodiff graph. Three gradient
paths are provided:

* ``backward``            — d(loss)/d(parameters) and d(loss)/d(input)
* ``input_gradient``      — d(scalar output)/d(input), used by Langevin
                            sampling on energy models
* ``input_gradient_backward`` — d(penalty)/d(parameters) where the
                            penalty is a function of the input gradient
                            (reverse-over-reverse; ReLU masks are
                            piecewise constant so they are held fixed,
                            which is exact almost everywhere)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def relu(z):
    return np.maximum(z, 0.0)


@dataclass
class Grads:
    """Parameter gradients, shaped like the model's weights/biases."""

    weights: list
    biases: list

    def add_(self, other: "Grads", scale: float = 1.0):
        for i in range(len(self.weights)):
            self.weights[i] += scale * other.weights[i]
            self.biases[i] += scale * other.biases[i]
        return self

    def scale_(self, factor: float):
        for i in range(len(self.weights)):
            self.weights[i] *= factor
            self.biases[i] *= factor
        return self

    @staticmethod
    def zeros_like(model: "Mlp") -> "Grads":
        return Grads(
            [np.zeros_like(w) for w in model.weights],
            [np.zeros_like(b) for b in model.biases],
        )


@dataclass
class AdamState:
    """Adam moments; beta1/beta2 are the standard defaults and fixed."""

    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_model(model: "Mlp") -> "AdamState":
        return AdamState(
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def adam_step(model: "Mlp", state: AdamState, grads: Grads, lr: float):
    """One Adam update with bias correction; mutates model and state."""
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i in range(len(model.weights)):
        for p, g, m, v in (
            (model.weights[i], grads.weights[i], state.m_w[i], state.v_w[i]),
            (model.biases[i], grads.biases[i], state.m_b[i], state.v_b[i]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return model, state


class Mlp:
    """Feed-forward ReLU network: input -> [width]*depth -> output.

    ``depth`` counts hidden layers; ``depth == 0`` degenerates to a
    single linear map (useful for closed-form tests). Optional
    per-layer spectral normalization (persistent power-iteration
    vectors), inverted dropout, and identity skip connections between
    equal-width hidden layers.
    """

    def __init__(
        self,
        weights,
        biases,
        *,
        dropout_rate: float = 0.0,
        spectral_norm: bool = False,
        residual: bool = False,
        u_vectors=None,
    ):
        if len(weights) != len(biases):
            raise ValueError("weights and biases must pair up")
        for k in range(len(weights) - 1):
            if weights[k].shape[1] != weights[k + 1].shape[0]:
                raise ValueError(
                    f"layer {k} output dim {weights[k].shape[1]} does not "
                    f"match layer {k + 1} input dim {weights[k + 1].shape[0]}"
                )
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.dropout_rate = float(dropout_rate)
        self.spectral_norm = bool(spectral_norm)
        self.residual = bool(residual)
        if u_vectors is None:
            u_vectors = [None] * len(self.weights)
        self.u_vectors = list(u_vectors)

    # -- construction ------------------------------------------------

    @classmethod
    def create(
        cls,
        input_dim: int,
        output_dim: int,
        width: int,
        depth: int,
        seed: int,
        *,
        spectral_norm: bool = False,
        dropout_rate: float = 0.0,
        residual: bool = False,
    ) -> "Mlp":
        """Seeded He-uniform initialization (biases zero).

        Same seed gives bit-identical parameters. He-uniform draws
        U(-sqrt(6/fan_in), +sqrt(6/fan_in)), so the per-layer weight
        variance is 2/fan_in.
        """
        if input_dim < 1 or output_dim < 1:
            raise ValueError("input_dim and output_dim must be positive")
        if width < 1 or depth < 1:
            raise ValueError("width and depth must be >= 1")
        rng = np.random.default_rng(seed)
        dims = [input_dim] + [width] * depth + [output_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        model = cls(
            weights,
            biases,
            dropout_rate=dropout_rate,
            spectral_norm=spectral_norm,
            residual=residual,
        )
        if spectral_norm:
            model._init_u_vectors(rng)
            model.apply_spectral_norm(power_iters=20)
        return model

    def _init_u_vectors(self, rng):
        self.u_vectors = []
        for w in self.weights:
            u = rng.standard_normal(w.shape[1])
            self.u_vectors.append(u / np.linalg.norm(u))

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            dropout_rate=self.dropout_rate,
            spectral_norm=self.spectral_norm,
            residual=self.residual,
            u_vectors=[None if u is None else u.copy() for u in self.u_vectors],
        )

    # -- shape metadata ----------------------------------------------

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def depth(self) -> int:
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        return self.weights[0].shape[1] if self.depth > 0 else self.output_dim

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        was_1d = x.ndim == 1
        if was_1d:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of dim {self.input_dim}, got shape {x.shape}"
            )
        return x, was_1d

    # -- forward / backward ------------------------------------------

    def forward(self, x, train_mode: bool = False, rng=None):
        out, _ = self._forward_impl(x, train_mode, rng, keep_cache=False)
        return out

    def forward_cached(self, x, train_mode: bool = False, rng=None):
        return self._forward_impl(x, train_mode, rng, keep_cache=True)

    def _forward_impl(self, x, train_mode, rng, keep_cache):
        x, was_1d = self._check_input(x)
        use_dropout = train_mode and self.dropout_rate > 0.0
        if use_dropout and rng is None:
            raise ValueError("train_mode forward with dropout needs an rng")
        h = x
        inputs, masks, dropmasks = [], [], []
        for k in range(self.depth):
            inputs.append(h)
            z = h @ self.weights[k] + self.biases[k]
            mask = z > 0.0
            a = np.where(mask, z, 0.0)
            if self.residual and k >= 1:
                a = a + h
            if use_dropout:
                keep = rng.random(a.shape) >= self.dropout_rate
                a = a * keep / (1.0 - self.dropout_rate)
                dropmasks.append(keep)
            else:
                dropmasks.append(None)
            masks.append(mask)
            h = a
        inputs.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        cache = None
        if keep_cache:
            cache = {"inputs": inputs, "masks": masks, "dropmasks": dropmasks, "was_1d": was_1d}
        return (out[0] if was_1d else out), cache

    def backward(self, cache, grad_out):
        """Backprop a loss gradient on the output to params and input."""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 1:
            grad_out = grad_out[None, :]
        inputs, masks, dropmasks = cache["inputs"], cache["masks"], cache["dropmasks"]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        gw[-1] = inputs[-1].T @ grad_out
        gb[-1] = grad_out.sum(axis=0)
        d_h = grad_out @ self.weights[-1].T
        for k in range(self.depth - 1, -1, -1):
            if dropmasks[k] is not None:
                d_h = d_h * dropmasks[k] / (1.0 - self.dropout_rate)
            d_z = d_h * masks[k]
            gw[k] = inputs[k].T @ d_z
            gb[k] = d_z.sum(axis=0)
            d_prev = d_z @ self.weights[k].T
            if self.residual and k >= 1:
                d_prev = d_prev + d_h
            d_h = d_prev
        grad_x = d_h[0] if cache["was_1d"] else d_h
        return Grads(gw, gb), grad_x

    # -- gradient w.r.t. the input (dropout off) ----------------------

    def input_gradient(self, x):
        g, _ = self.input_gradient_cached(x, keep_cache=False)
        return g

    def input_gradient_cached(self, x, keep_cache: bool = True):
        """d(sum of outputs)/d(input); requires output_dim == 1."""
        if self.output_dim != 1:
            raise ValueError("input_gradient requires a scalar-output model")
        x, was_1d = self._check_input(x)
        h = x
        masks = []
        for k in range(self.depth):
            z = h @ self.weights[k] + self.biases[k]
            mask = z > 0.0
            a = np.where(mask, z, 0.0)
            if self.residual and k >= 1:
                a = a + h
            masks.append(mask)
            h = a
        batch = x.shape[0]
        # d(out)/d(h_last) is the final weight column, same for every row.
        d_h = np.broadcast_to(self.weights[-1][:, 0], (batch, self.weights[-1].shape[0])).copy()
        d_hs = [None] * (self.depth + 1)
        d_zs = [None] * self.depth
        d_hs[self.depth] = d_h
        for k in range(self.depth - 1, -1, -1):
            d_z = d_hs[k + 1] * masks[k]
            d_zs[k] = d_z
            d_prev = d_z @ self.weights[k].T
            if self.residual and k >= 1:
                d_prev = d_prev + d_hs[k + 1]
            d_hs[k] = d_prev
        g = d_hs[0]
        cache = None
        if keep_cache:
            cache = {"masks": masks, "d_hs": d_hs, "d_zs": d_zs, "was_1d": was_1d}
        return (g[0] if was_1d else g), cache

    def input_gradient_backward(self, cache, grad_wrt_g) -> Grads:
        """Params gradient of a scalar that depends on the input gradient.

        Reverse pass over the input-gradient computation with ReLU masks
        frozen (exact a.e. since relu'' == 0). Bias gradients are zero
        on this path.
        """
        grad_wrt_g = np.asarray(grad_wrt_g, dtype=np.float64)
        if grad_wrt_g.ndim == 1:
            grad_wrt_g = grad_wrt_g[None, :]
        masks, d_hs, d_zs = cache["masks"], cache["d_hs"], cache["d_zs"]
        gw = [np.zeros_like(w) for w in self.weights]
        gb = [np.zeros_like(b) for b in self.biases]
        # gamma_h[k] accumulates dP/d(d_hs[k]); march up the chain.
        gamma_h = grad_wrt_g
        for k in range(self.depth):
            # d_hs[k] = d_zs[k] @ W_k.T (+ d_hs[k+1] if residual skip)
            gw[k] += gamma_h.T @ d_zs[k]
            gamma_z = gamma_h @ self.weights[k]
            gamma_next = gamma_z * masks[k]
            if self.residual and k >= 1:
                gamma_next = gamma_next + gamma_h
            gamma_h = gamma_next
        # d_hs[depth] = ones(batch, 1) @ W_last.T
        gw[-1] += gamma_h.sum(axis=0)[:, None]
        return Grads(gw, gb)

    # -- energy-model conveniences ------------------------------------

    def energy(self, x, y, train_mode: bool = False, rng=None):
        """E(x, y) for scalar-output models; inputs are concatenated."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        xy = np.concatenate([x, y], axis=-1)
        out = self.forward(xy, train_mode=train_mode, rng=rng)
        return out[..., 0]

    def grad_y(self, x, y):
        """d E(x, y) / d y, dropout off."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = y.shape[-1]
        xy = np.concatenate([x, y], axis=-1)
        g = self.input_gradient(xy)
        return g[..., -n:]

    # -- spectral normalization ---------------------------------------

    def apply_spectral_norm(self, power_iters: int = 1, tol: float = 1e-7):
        """Divide each weight matrix by its estimated top singular value.

        Runs ``power_iters`` refinement steps, then keeps iterating until
        the estimate stabilizes to ``tol`` relative change (power iteration
        systematically underestimates sigma, and dividing by an
        underestimate would leave sigma slightly above 1). The
        power-iteration vector per layer persists across calls, so warm
        calls converge almost immediately.
        """
        if not self.spectral_norm:
            raise ValueError("model was not built with spectral_norm enabled")
        if power_iters < 1:
            raise ValueError("power_iters must be >= 1")
        if any(u is None for u in self.u_vectors):
            self._init_u_vectors(np.random.default_rng(0))
        eps = 1e-12
        for k, w in enumerate(self.weights):
            u = self.u_vectors[k]
            sigma = 0.0
            for step in range(max(power_iters, 2) + 1000):
                v = w @ u
                v /= np.linalg.norm(v) + eps
                u = w.T @ v
                u /= np.linalg.norm(u) + eps
                new_sigma = float(v @ (w @ u))
                converged = abs(new_sigma - sigma) <= tol * max(new_sigma, eps)
                sigma = new_sigma
                if step + 1 >= power_iters and converged:
                    break
            self.u_vectors[k] = u
            if sigma > eps:
                self.weights[k] = w / sigma
        return self


# -- JSON serialization (bit-exact for float64) -----------------------


def _fmt(values: np.ndarray) -> list:
    # 17 significant digits round-trips any IEEE double exactly.
    return [float(f"{v:.17g}") for v in np.asarray(values, dtype=np.float64).ravel()]


def model_to_json(model: Mlp) -> str:
    doc = {
        "kind": "mlp",
        "layer_dims": [[int(w.shape[0]), int(w.shape[1])] for w in model.weights],
        "dropout_rate": model.dropout_rate,
        "spectral_norm": model.spectral_norm,
        "residual": model.residual,
        "weights": [_fmt(w) for w in model.weights],
        "biases": [_fmt(b) for b in model.biases],
        "u_vectors": [None if u is None else _fmt(u) for u in model.u_vectors],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> Mlp:
    doc = json.loads(text)
    if doc.get("kind") != "mlp":
        raise ValueError("not a serialized mlp document")
    weights, biases = [], []
    for (rows, cols), flat_w, flat_b in zip(doc["layer_dims"], doc["weights"], doc["biases"]):
        weights.append(np.asarray(flat_w, dtype=np.float64).reshape(rows, cols))
        biases.append(np.asarray(flat_b, dtype=np.float64))
    u_vectors = [
        None if u is None else np.asarray(u, dtype=np.float64)
        for u in doc["u_vectors"]
    ]
    return Mlp(
        weights,
        biases,
        dropout_rate=doc["dropout_rate"],
        spectral_norm=doc["spectral_norm"],
        residual=doc["residual"],
        u_vectors=u_vectors,
    )
