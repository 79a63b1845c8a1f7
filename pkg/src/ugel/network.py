"""Minimal fully-connected regression network with swappable output heads.

Three head kinds are supported:

* ``dbr``            -- two outputs squashed to a beta-prediction (mu, nu),
* ``der``            -- four outputs mapped to an evidential tuple
                        (gamma, upsilon, alpha, beta) with upsilon > 0,
                        alpha > 1, beta > 0,
* ``scalar_dropout`` -- one output squashed to (0, 1), trained and scored
                        with dropout active.

Everything is plain numpy with explicit reverse-mode gradients; all
operations are deterministic functions of their inputs and seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .betadist import BetaPrediction

__all__ = [
    "ArchSpec",
    "ModelParams",
    "DerPrediction",
    "ScalarPrediction",
    "HEAD_KINDS",
    "MU_EPS",
    "NU_FLOOR",
    "DER_FLOOR",
    "init_model",
    "forward",
    "forward_cached",
    "backward_from_raw",
    "sample_dropout_masks",
    "flatten_params",
    "unflatten_params",
    "rng_from_keys",
]

HEAD_KINDS = ("dbr", "der", "scalar_dropout")
_HEAD_WIDTH = {"dbr": 2, "der": 4, "scalar_dropout": 1}

# Mean predictions are kept strictly inside (0, 1) and precisions strictly
# positive; softplus underflows to 0 below roughly -745, so floors guard
# the downstream divisions and log-gamma calls.
MU_EPS = 1e-6
NU_FLOOR = 1e-4
DER_FLOOR = 1e-6

# Fresh models start at nu = softplus(2.2) + floor ~ 2.3 for every sample:
# above the uniform distribution's nu = 2, where entropy decreases
# monotonically in nu.  Scores of an untrained model then start tied
# instead of keying on initialisation noise around the entropy peak.
NU_BIAS_INIT = 2.2


def rng_from_keys(*keys: int) -> np.random.Generator:
    """Deterministic generator derived from a tuple of integer keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(keys))))


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    head_kind: str = "dbr"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.hidden_dims) == 0 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    @property
    def head_width(self) -> int:
        return _HEAD_WIDTH[self.head_kind]

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.head_width]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ModelParams:
    arch: ArchSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.init_seed,
        )


@dataclass(frozen=True)
class DerPrediction:
    """Evidential head output (gamma, upsilon, alpha, beta)."""

    gamma: np.ndarray
    upsilon: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.upsilon) <= 0.0):
            raise ValueError("upsilon must be > 0")
        if np.any(np.asarray(self.alpha) <= 1.0):
            raise ValueError("alpha must be > 1")
        if np.any(np.asarray(self.beta) <= 0.0):
            raise ValueError("beta must be > 0")

    @property
    def point(self):
        return self.gamma


@dataclass(frozen=True)
class ScalarPrediction:
    yhat: np.ndarray

    @property
    def point(self):
        return self.yhat


def init_model(arch: ArchSpec, seed: int) -> ModelParams:
    """He-initialised hidden layers; near-zero head layer.

    Deterministic given (arch, seed); the small head initialisation makes a
    fresh model start close to mu = 0.5 / nu = log 2 regardless of seed.
    """
    rng = rng_from_keys(seed)
    weights, biases = [], []
    layer_dims = arch.layer_dims
    for i, (fan_in, fan_out) in enumerate(layer_dims):
        is_head = i == len(layer_dims) - 1
        std = 0.01 if is_head else np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        bias = np.zeros(fan_out)
        if is_head and arch.head_kind == "dbr":
            bias[1] = NU_BIAS_INIT
        biases.append(bias)
    return ModelParams(arch, weights, biases, int(seed))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sample_dropout_masks(arch: ArchSpec, n: int, rng: np.random.Generator):
    """Inverted-dropout masks, one per hidden layer, or None when disabled."""
    if arch.dropout_rate <= 0.0:
        return None
    keep = 1.0 - arch.dropout_rate
    return [
        (rng.random((n, h)) < keep).astype(np.float64) / keep
        for h in arch.hidden_dims
    ]


def forward_cached(model: ModelParams, x: np.ndarray, masks=None):
    """Forward pass keeping the per-layer cache needed for backprop.

    Returns (output object, cache).  ``masks`` is a list of dropout masks as
    produced by :func:`sample_dropout_masks` (None means no dropout).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"input dim {x.shape[1]} does not match arch {model.arch.input_dim}"
        )
    acts = [x]
    pre_acts = []
    h = x
    n_hidden = len(model.arch.hidden_dims)
    for i in range(n_hidden):
        z = h @ model.weights[i] + model.biases[i]
        pre_acts.append(z)
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[i]
        acts.append(h)
    raw = h @ model.weights[-1] + model.biases[-1]
    output, head_aux = _transform_head(model.arch.head_kind, raw)
    cache = {
        "acts": acts,
        "pre_acts": pre_acts,
        "raw": raw,
        "head_aux": head_aux,
        "masks": masks,
        "n": x.shape[0],
    }
    return output, cache


def forward(model: ModelParams, x: np.ndarray, dropout_rng=None):
    """Forward pass; stochastic iff a dropout rng is supplied and the
    architecture has a positive dropout rate."""
    masks = None
    if dropout_rng is not None and model.arch.dropout_rate > 0.0:
        xa = np.asarray(x)
        n = 1 if xa.ndim == 1 else xa.shape[0]
        masks = sample_dropout_masks(model.arch, n, dropout_rng)
    output, _ = forward_cached(model, x, masks)
    return output


def _transform_head(head_kind: str, raw: np.ndarray):
    if head_kind == "dbr":
        s = _sigmoid(raw[:, 0])
        mu = np.clip(s, MU_EPS, 1.0 - MU_EPS)
        nu = _softplus(raw[:, 1]) + NU_FLOOR
        aux = {
            "d_mu": np.where((s > MU_EPS) & (s < 1.0 - MU_EPS), s * (1.0 - s), 0.0),
            "d_nu": _sigmoid(raw[:, 1]),
        }
        return BetaPrediction(mu, nu), aux
    if head_kind == "der":
        gamma = raw[:, 0]
        upsilon = _softplus(raw[:, 1]) + DER_FLOOR
        alpha = 1.0 + _softplus(raw[:, 2]) + DER_FLOOR
        beta = _softplus(raw[:, 3]) + DER_FLOOR
        aux = {
            "d_upsilon": _sigmoid(raw[:, 1]),
            "d_alpha": _sigmoid(raw[:, 2]),
            "d_beta": _sigmoid(raw[:, 3]),
        }
        return DerPrediction(gamma, upsilon, alpha, beta), aux
    s = _sigmoid(raw[:, 0])
    yhat = np.clip(s, MU_EPS, 1.0 - MU_EPS)
    aux = {"d_yhat": np.where((s > MU_EPS) & (s < 1.0 - MU_EPS), s * (1.0 - s), 0.0)}
    return ScalarPrediction(yhat), aux


def head_grads_to_raw(head_kind: str, cache, d_outputs) -> np.ndarray:
    """Chain gradients w.r.t. the transformed head outputs back to raw
    pre-transform outputs.  ``d_outputs`` is a tuple matching the head's
    output channels (see the head docstrings)."""
    aux = cache["head_aux"]
    n = cache["n"]
    if head_kind == "dbr":
        d_mu, d_nu = d_outputs
        d_raw = np.zeros((n, 2))
        d_raw[:, 0] = d_mu * aux["d_mu"]
        d_raw[:, 1] = d_nu * aux["d_nu"]
        return d_raw
    if head_kind == "der":
        d_gamma, d_upsilon, d_alpha, d_beta = d_outputs
        d_raw = np.zeros((n, 4))
        d_raw[:, 0] = d_gamma
        d_raw[:, 1] = d_upsilon * aux["d_upsilon"]
        d_raw[:, 2] = d_alpha * aux["d_alpha"]
        d_raw[:, 3] = d_beta * aux["d_beta"]
        return d_raw
    (d_yhat,) = d_outputs
    return (d_yhat * aux["d_yhat"])[:, None]


def backward_from_raw(model: ModelParams, cache, d_raw: np.ndarray):
    """Reverse-mode gradients of a scalar loss given dL/d(raw head outputs).

    Returns (grad_weights, grad_biases), lists aligned with the model's
    parameter lists.
    """
    acts = cache["acts"]
    pre_acts = cache["pre_acts"]
    masks = cache["masks"]
    n_layers = len(model.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    delta = d_raw
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (pre_acts[i - 1] > 0.0)
    return grad_w, grad_b


def flatten_params(model: ModelParams) -> np.ndarray:
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def unflatten_params(model: ModelParams, flat: np.ndarray) -> ModelParams:
    out = model.copy()
    pos = 0
    for i, (w, b) in enumerate(zip(out.weights, out.biases)):
        out.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
        pos += w.size
        out.biases[i] = flat[pos : pos + b.size].reshape(b.shape).copy()
        pos += b.size
    if pos != flat.size:
        raise ValueError("flat parameter vector has the wrong length")
    return out
