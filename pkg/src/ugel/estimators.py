"""Uncertainty estimators behind a single contract.

Each estimator maps (model, sample) -> scalar uncertainty and keeps a
counter of model forward evaluations it has performed, which is the basis
of the per-round cost accounting:

* ``dbr`` -- differential entropy of the predicted beta distribution,
             one forward pass per sample;
* ``mcd`` -- population variance over P stochastic dropout passes,
             P forward passes per sample;
* ``der`` -- aleatoric + epistemic evidential uncertainty
             beta/(alpha-1) + beta/(upsilon*(alpha-1)), one pass;
* ``ran`` -- a constant (ties are broken uniformly at random by the
             selection layer), zero passes.

Counters are plain integers; estimators scoring disjoint shards in
parallel would need to merge counters per shard, but runs here are
single-threaded.
"""

from __future__ import annotations

import numpy as np

from .betadist import beta_entropy
from .network import ModelParams, forward

__all__ = [
    "ESTIMATOR_KINDS",
    "UncertaintyEstimator",
    "DbrUncertainty",
    "McdUncertainty",
    "DerUncertainty",
    "RanUncertainty",
    "mcd_mean_variance",
    "make_estimator",
]

ESTIMATOR_KINDS = ("dbr", "mcd", "der", "ran")


def mcd_mean_variance(pass_values: np.ndarray):
    """Mean and population variance across stochastic passes.

    ``pass_values`` has shape (P,) or (P, n); statistics are taken over the
    first axis with the 1/P normaliser.
    """
    v = np.asarray(pass_values, dtype=np.float64)
    if v.shape[0] < 2:
        raise ValueError("need at least two passes")
    mean = v.mean(axis=0)
    var = np.mean((v - mean) ** 2, axis=0)
    return mean, var


class UncertaintyEstimator:
    """Base contract: batched scoring plus a forward-pass counter."""

    kind: str = ""
    required_head: str | None = None

    def __init__(self):
        self.passes = 0

    def _check_head(self, model: ModelParams):
        if self.required_head is not None and model.arch.head_kind != self.required_head:
            raise ValueError(
                f"{self.kind} estimator requires a {self.required_head} head, "
                f"got {model.arch.head_kind}"
            )

    def score_pool(self, model: ModelParams, x: np.ndarray, rng=None) -> np.ndarray:
        raise NotImplementedError

    def score(self, model: ModelParams, x: np.ndarray, rng=None) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.score_pool(model, x[None, :], rng)[0])

    def reset_passes(self):
        self.passes = 0


class DbrUncertainty(UncertaintyEstimator):
    kind = "dbr"
    required_head = "dbr"

    def score_pool(self, model, x, rng=None):
        self._check_head(model)
        pred = forward(model, x)
        self.passes += x.shape[0]
        return np.asarray(beta_entropy(pred.mu, pred.nu))


class McdUncertainty(UncertaintyEstimator):
    kind = "mcd"
    required_head = "scalar_dropout"

    def __init__(self, n_passes: int = 10):
        super().__init__()
        if n_passes < 2:
            raise ValueError("mcd needs at least 2 passes")
        self.n_passes = int(n_passes)

    def mean_and_uncertainty(self, model, x, rng):
        self._check_head(model)
        if rng is None:
            raise ValueError("mcd scoring needs an rng for the dropout draws")
        x = np.asarray(x, dtype=np.float64)
        stack = np.empty((self.n_passes, x.shape[0]))
        for p in range(self.n_passes):
            stack[p] = forward(model, x, dropout_rng=rng).yhat
        self.passes += self.n_passes * x.shape[0]
        return mcd_mean_variance(stack)

    def score_pool(self, model, x, rng=None):
        _, var = self.mean_and_uncertainty(model, x, rng)
        return var


class DerUncertainty(UncertaintyEstimator):
    kind = "der"
    required_head = "der"

    def score_pool(self, model, x, rng=None):
        self._check_head(model)
        pred = forward(model, x)
        self.passes += x.shape[0]
        return pred.beta / (pred.alpha - 1.0) + pred.beta / (
            pred.upsilon * (pred.alpha - 1.0)
        )


class RanUncertainty(UncertaintyEstimator):
    """Constant uncertainty; selection's random tie-break does the sampling."""

    kind = "ran"
    required_head = None

    def score_pool(self, model, x, rng=None):
        return np.zeros(np.asarray(x).shape[0])


def make_estimator(kind: str, mcd_passes: int = 10) -> UncertaintyEstimator:
    if kind == "dbr":
        return DbrUncertainty()
    if kind == "mcd":
        return McdUncertainty(mcd_passes)
    if kind == "der":
        return DerUncertainty()
    if kind == "ran":
        return RanUncertainty()
    raise ValueError(f"unknown estimator kind {kind!r}")
