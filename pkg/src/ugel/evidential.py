"""Normal-Inverse-Gamma training loss for the evidential regression head.

The head predicts (gamma, upsilon, alpha, beta) with upsilon > 0, alpha > 1,
beta > 0.  Training minimises the marginal (Student-t) negative
log-likelihood plus an evidence regulariser |y - gamma| * (2*upsilon +
alpha), scaled by ``DER_REG_COEF``.  Gradients are written out analytically
so the network backprop stays exact.
"""

from __future__ import annotations

import numpy as np

from .special import digamma, ln_gamma

__all__ = ["DER_REG_COEF", "nig_nll", "der_supervised_loss_and_grads"]

DER_REG_COEF = 0.01

_LOG_PI = float(np.log(np.pi))


def nig_nll(y, gamma, upsilon, alpha, beta):
    """Per-sample NIG negative log-likelihood (no regulariser)."""
    y = np.asarray(y, dtype=np.float64)
    omega = 2.0 * beta * (1.0 + upsilon)
    s = upsilon * (y - gamma) ** 2 + omega
    return (
        0.5 * (_LOG_PI - np.log(upsilon))
        - alpha * np.log(omega)
        + (alpha + 0.5) * np.log(s)
        + ln_gamma(alpha)
        - ln_gamma(alpha + 0.5)
    )


def der_supervised_loss_and_grads(pred, y):
    """Mean NIG NLL plus evidence regulariser, with per-sample gradients.

    Returns (loss, (d_gamma, d_upsilon, d_alpha, d_beta)) where the gradient
    arrays are d(loss)/d(parameter_i) including the 1/n batch factor.
    """
    y = np.asarray(y, dtype=np.float64)
    gamma, upsilon, alpha, beta = pred.gamma, pred.upsilon, pred.alpha, pred.beta
    n = y.shape[0]
    resid = y - gamma
    omega = 2.0 * beta * (1.0 + upsilon)
    s = upsilon * resid**2 + omega

    nll = (
        0.5 * (_LOG_PI - np.log(upsilon))
        - alpha * np.log(omega)
        + (alpha + 0.5) * np.log(s)
        + ln_gamma(alpha)
        - ln_gamma(alpha + 0.5)
    )
    reg = np.abs(resid) * (2.0 * upsilon + alpha)
    loss = float(np.mean(nll) + DER_REG_COEF * np.mean(reg))

    a_half = alpha + 0.5
    d_gamma = -2.0 * upsilon * a_half * resid / s
    d_upsilon = -0.5 / upsilon - 2.0 * alpha * beta / omega + a_half * (
        resid**2 + 2.0 * beta
    ) / s
    d_alpha = -np.log(omega) + np.log(s) + digamma(alpha) - digamma(a_half)
    d_beta = 2.0 * (1.0 + upsilon) * (a_half / s - alpha / omega)

    sign = np.sign(resid)
    d_gamma = d_gamma + DER_REG_COEF * (-sign * (2.0 * upsilon + alpha))
    d_upsilon = d_upsilon + DER_REG_COEF * 2.0 * np.abs(resid)
    d_alpha = d_alpha + DER_REG_COEF * np.abs(resid)

    scale = 1.0 / n
    return loss, (
        d_gamma * scale,
        d_upsilon * scale,
        d_alpha * scale,
        d_beta * scale,
    )
