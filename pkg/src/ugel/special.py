"""Scalar special functions (log-gamma, digamma, log-beta).

Everything downstream (beta density, likelihoods, entropies) is built on
these three functions, so they are implemented here once, dependency-free,
and vectorised over numpy arrays.  Accuracy targets: absolute error below
1e-12 for ``ln_gamma`` and 1e-10 for ``digamma`` on positive arguments
(up to float64 representability of the result itself).
"""

from __future__ import annotations

import numpy as np

__all__ = ["ln_gamma", "digamma", "ln_beta"]

_HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))

# Lanczos coefficients, g = 7, n = 9 (Godfrey's tabulation).
_LANCZOS_G = 7.0
_LANCZOS_C = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)

# B_{2n}/(2n) for the digamma asymptotic tail, n = 1..6.
_PSI_TAIL = (
    1.0 / 12.0,
    1.0 / 120.0,
    1.0 / 252.0,
    1.0 / 240.0,
    1.0 / 132.0,
    691.0 / 32760.0,
)

# Arguments are recurrence-shifted above this point before applying the
# asymptotic series; tail truncation error is then < 2e-14.
_PSI_SHIFT = 8.0


def _as_positive_array(x, name: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: argument must be finite")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name}: argument must be > 0")
    return arr, arr.ndim == 0


def _ln_gamma_core(z: np.ndarray) -> np.ndarray:
    """Lanczos evaluation, valid for z >= 0.5."""
    zm1 = z - 1.0
    acc = np.full_like(zm1, _LANCZOS_C[0])
    for i in range(1, 9):
        acc += _LANCZOS_C[i] / (zm1 + i)
    t = zm1 + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (zm1 + 0.5) * np.log(t) - t + np.log(acc)


def ln_gamma(x):
    """Natural log of the gamma function for x > 0.

    Scalars in, scalar out; arrays in, array out.  Raises ``ValueError``
    for non-positive or non-finite arguments.
    """
    arr, scalar = _as_positive_array(x, "ln_gamma")
    z = np.atleast_1d(arr)
    small = z < 0.5
    if small.any():
        # ln Gamma(z) = ln Gamma(z+1) - ln z keeps the Lanczos sum
        # well-conditioned near zero.
        out = np.empty_like(z)
        out[~small] = _ln_gamma_core(z[~small])
        out[small] = _ln_gamma_core(z[small] + 1.0) - np.log(z[small])
    else:
        out = _ln_gamma_core(z)
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def digamma(x):
    """Digamma psi(x) for x > 0, via recurrence shift plus asymptotic series."""
    arr, scalar = _as_positive_array(x, "digamma")
    z = np.atleast_1d(arr).copy()
    acc = np.zeros_like(z)
    while True:
        mask = z < _PSI_SHIFT
        if not mask.any():
            break
        acc[mask] -= 1.0 / z[mask]
        z[mask] += 1.0
    w = 1.0 / (z * z)
    c1, c2, c3, c4, c5, c6 = _PSI_TAIL
    tail = w * (c1 - w * (c2 - w * (c3 - w * (c4 - w * (c5 - w * c6)))))
    out = acc + np.log(z) - 0.5 / z - tail
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)


def ln_beta(a, b):
    """ln B(a, b) = ln Gamma(a) + ln Gamma(b) - ln Gamma(a+b), for a, b > 0."""
    a_arr, a_scalar = _as_positive_array(a, "ln_beta")
    b_arr, b_scalar = _as_positive_array(b, "ln_beta")
    out = ln_gamma(a_arr) + ln_gamma(b_arr) - ln_gamma(a_arr + b_arr)
    if a_scalar and b_scalar:
        return float(out)
    return out
