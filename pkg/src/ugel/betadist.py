"""Closed-form beta-regression math in the mean-precision parameterisation.

A prediction is a pair (mu, nu) with mu in (0, 1) and nu > 0, equivalent to
shape parameters alpha = mu * nu and beta = (1 - mu) * nu.  This module
provides the density, negative log-likelihood, differential entropy (the
uncertainty score), the analytic NLL gradients, and the supervised loss that
combines RMSE with the NLL.

All density work happens in the log domain; nu in the hundreds would
overflow the gamma function directly.  Targets are clamped away from {0, 1}
before any log(y) / log(1-y) evaluation, while RMSE always sees the raw
targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import digamma, ln_beta, ln_gamma

__all__ = [
    "BetaPrediction",
    "LossWeights",
    "ENTROPY_FLOOR",
    "DEFAULT_EPS_CLAMP",
    "clamp_unit",
    "beta_log_pdf",
    "beta_pdf",
    "beta_nll",
    "beta_entropy",
    "beta_entropy_shape",
    "grad_nll",
    "rmse",
    "combined_supervised_loss",
]

# Saturation value standing in for -inf so that argmin/argmax over scores
# stays total.
ENTROPY_FLOOR = -1e12

DEFAULT_EPS_CLAMP = 1e-6


def _validate_mu_nu(mu, nu) -> None:
    mu_arr = np.asarray(mu, dtype=np.float64)
    nu_arr = np.asarray(nu, dtype=np.float64)
    if not (np.all(np.isfinite(mu_arr)) and np.all(np.isfinite(nu_arr))):
        raise ValueError("beta prediction must be finite")
    if np.any(mu_arr <= 0.0) or np.any(mu_arr >= 1.0):
        raise ValueError("mu must lie strictly in (0, 1)")
    if np.any(nu_arr <= 0.0):
        raise ValueError("nu must be > 0")


@dataclass(frozen=True)
class BetaPrediction:
    """Mean-precision beta parameters; fields may be scalars or arrays."""

    mu: float | np.ndarray
    nu: float | np.ndarray

    def __post_init__(self):
        _validate_mu_nu(self.mu, self.nu)

    @property
    def alpha(self):
        return self.mu * self.nu

    @property
    def beta(self):
        return (1.0 - self.mu) * self.nu

    @property
    def point(self):
        """The scalar prediction: the beta mean itself."""
        return self.mu

    def pdf(self, y, eps: float = DEFAULT_EPS_CLAMP):
        return beta_pdf(y, self.mu, self.nu, eps)

    def nll(self, y, eps: float = DEFAULT_EPS_CLAMP):
        return beta_nll(self.mu, self.nu, y, eps)

    def entropy(self):
        return beta_entropy(self.mu, self.nu)

    def grad_nll(self, y, eps: float = DEFAULT_EPS_CLAMP):
        return grad_nll(self.mu, self.nu, y, eps)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite training loss.

    nll_weight scales the beta NLL against the RMSE term in the supervised
    loss; consistency_weight scales the twin-prediction RMSE term;
    eps_clamp is the distance targets are kept from {0, 1} in log terms.
    """

    nll_weight: float = 1.0
    consistency_weight: float = 0.0
    eps_clamp: float = DEFAULT_EPS_CLAMP

    def __post_init__(self):
        if self.nll_weight < 0.0:
            raise ValueError("nll_weight must be >= 0")
        if self.consistency_weight < 0.0:
            raise ValueError("consistency_weight must be >= 0")
        if not 0.0 < self.eps_clamp < 0.5:
            raise ValueError("eps_clamp must lie in (0, 0.5)")


def clamp_unit(y, eps: float = DEFAULT_EPS_CLAMP):
    """Clip targets into [eps, 1 - eps]."""
    return np.clip(y, eps, 1.0 - eps)


def beta_log_pdf(y, mu, nu, eps: float = DEFAULT_EPS_CLAMP):
    _validate_mu_nu(mu, nu)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    alpha = mu * nu
    beta = (1.0 - mu) * nu
    yc = clamp_unit(np.asarray(y, dtype=np.float64), eps)
    return (
        -ln_beta(alpha, beta)
        + (alpha - 1.0) * np.log(yc)
        + (beta - 1.0) * np.log1p(-yc)
    )


def beta_pdf(y, mu, nu, eps: float = DEFAULT_EPS_CLAMP):
    """Density of the (mu, nu) beta distribution at y (clamped into (0,1))."""
    return np.exp(beta_log_pdf(y, mu, nu, eps))


def beta_nll(mu, nu, y, eps: float = DEFAULT_EPS_CLAMP):
    """Per-sample negative log-likelihood -log p(y | mu, nu)."""
    return -beta_log_pdf(y, mu, nu, eps)


def beta_entropy(mu, nu):
    """Differential entropy of the (mu, nu) beta distribution, in nats.

    The value lies in (-inf, 0] with its maximum 0 at the uniform
    distribution (mu=0.5, nu=2).  Overflow toward -inf (extreme nu) is
    saturated at ENTROPY_FLOOR; the result is never NaN.
    """
    _validate_mu_nu(mu, nu)
    mu_arr, nu_arr = np.broadcast_arrays(
        np.asarray(mu, dtype=np.float64), np.asarray(nu, dtype=np.float64)
    )
    scalar = mu_arr.ndim == 0
    mu_arr = np.atleast_1d(mu_arr).ravel()
    nu_arr = np.atleast_1d(nu_arr).ravel()
    alpha = mu_arr * nu_arr
    beta = (1.0 - mu_arr) * nu_arr
    stacked = np.concatenate([alpha, beta, nu_arr])
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lg = ln_gamma(stacked)
        dg = digamma(stacked)
        n = alpha.shape[0]
        h = (
            lg[:n]
            + lg[n : 2 * n]
            - lg[2 * n :]
            + (nu_arr - 2.0) * dg[2 * n :]
            - (alpha - 1.0) * dg[:n]
            - (beta - 1.0) * dg[n : 2 * n]
        )
    h = np.where(np.isfinite(h), h, ENTROPY_FLOOR)
    h = np.maximum(h, ENTROPY_FLOOR)
    if scalar:
        return float(h[0])
    return h.reshape(np.broadcast(np.asarray(mu), np.asarray(nu)).shape)


def beta_entropy_shape(alpha, beta):
    """Differential entropy written in shape parameters (alpha, beta).

    Algebraically identical to :func:`beta_entropy` with alpha = mu*nu,
    beta = (1-mu)*nu; kept as a separately-arranged formula so the two
    routes can be checked against each other.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(alpha <= 0.0) or np.any(beta <= 0.0):
        raise ValueError("shape parameters must be > 0")
    total = alpha + beta
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        h = (
            ln_beta(alpha, beta)
            - (alpha - 1.0) * (digamma(alpha) - digamma(total))
            - (beta - 1.0) * (digamma(beta) - digamma(total))
        )
    h = np.where(np.isfinite(h), h, ENTROPY_FLOOR)
    h = np.maximum(h, ENTROPY_FLOOR)
    if np.ndim(alpha) == 0 and np.ndim(beta) == 0:
        return float(h)
    return h


def grad_nll(mu, nu, y, eps: float = DEFAULT_EPS_CLAMP):
    """Analytic gradient of the per-sample NLL with respect to (mu, nu)."""
    _validate_mu_nu(mu, nu)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    yc = clamp_unit(np.asarray(y, dtype=np.float64), eps)
    alpha = mu * nu
    beta = (1.0 - mu) * nu
    log_y = np.log(yc)
    log_1my = np.log1p(-yc)
    dg_a = digamma(alpha)
    dg_b = digamma(beta)
    dg_n = digamma(nu)
    d_mu = nu * (dg_a - dg_b) - nu * log_y + nu * log_1my
    d_nu = mu * dg_a + (1.0 - mu) * dg_b - dg_n - mu * log_y - (1.0 - mu) * log_1my
    return d_mu, d_nu


def rmse(preds, targets):
    """Root mean squared error between two equal-length sequences."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("rmse of empty sequences is undefined")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def combined_supervised_loss(mu, nu, targets, weights: LossWeights):
    """RMSE of the mean predictions plus nll_weight times the mean beta NLL.

    RMSE is evaluated against the raw targets; only the NLL sees the
    clamped ones.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    nu = np.atleast_1d(np.asarray(nu, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    if not (mu.shape == nu.shape == t.shape):
        raise ValueError("mu, nu and targets must have matching lengths")
    if t.size == 0:
        raise ValueError("empty batch")
    loss = rmse(mu, t)
    if weights.nll_weight > 0.0:
        loss += weights.nll_weight * float(
            np.mean(beta_nll(mu, nu, t, weights.eps_clamp))
        )
    return loss
