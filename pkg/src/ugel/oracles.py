"""Independent oracles for the closed-form math and the gradient engine.

These routines deliberately avoid the code paths they are checking:

* the entropy oracle integrates -p log p by adaptive quadrature (QUADPACK's
  algebraic/log singular-weight rules, so endpoint mass at small shape
  parameters is captured) and never touches the digamma-based closed form;
* gradient checks use central finite differences of the loss values;
* the Wilcoxon checks pin hand-enumerable exact p-values and bridge the
  exact path against the normal approximation.

``run_all`` prints one PASS/FAIL line per suite and is what the ``verify``
CLI subcommand executes.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.integrate import quad

from .betadist import beta_entropy, beta_nll, grad_nll
from .network import rng_from_keys
from .special import ln_gamma
from .stats import wilcoxon_signed_rank

__all__ = [
    "entropy_quadrature",
    "central_difference",
    "gradient_max_relative_error",
    "check_entropy_quadrature",
    "check_nll_gradients",
    "check_network_gradients",
    "check_wilcoxon",
    "check_ln_gamma_quadrature",
    "run_all",
]


def entropy_quadrature(mu: float, nu: float) -> float:
    """-integral of p log p for the (mu, nu) beta density, by quadrature.

    Writes -log p = log B - (alpha-1) log y - (beta-1) log(1-y) and
    integrates each piece against the singular weight y^(alpha-1) *
    (1-y)^(beta-1) with the appropriate QUADPACK rule ('alg', 'alg-loga',
    'alg-logb').  The normaliser B itself is obtained by quadrature, so the
    whole value is quadrature-derived.
    """
    alpha = mu * nu
    beta = (1.0 - mu) * nu
    one = lambda y: 1.0  # noqa: E731 - the weight carries all structure
    b_quad, _ = quad(one, 0.0, 1.0, weight="alg", wvar=(alpha - 1.0, beta - 1.0))
    log_y, _ = quad(one, 0.0, 1.0, weight="alg-loga", wvar=(alpha - 1.0, beta - 1.0))
    log_1my, _ = quad(one, 0.0, 1.0, weight="alg-logb", wvar=(alpha - 1.0, beta - 1.0))
    return float(
        np.log(b_quad)
        - (alpha - 1.0) * log_y / b_quad
        - (beta - 1.0) * log_1my / b_quad
    )


def central_difference(f, x0: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    indices = list(range(x0.size)) if indices is None else list(indices)
    grads = np.zeros(len(indices))
    for k, i in enumerate(indices):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        grads[k] = (f(xp) - f(xm)) / (2.0 * h)
    return grads


def gradient_max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error between two gradient vectors."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_entropy_quadrature(n: int = 1000, seed: int = 101, tol: float = 1e-6) -> dict:
    """Closed-form beta entropy vs the quadrature oracle on random (mu, nu)."""
    rng = rng_from_keys(seed)
    mus = rng.uniform(0.01, 0.99, size=n)
    nus = rng.uniform(0.5, 50.0, size=n)
    worst = 0.0
    worst_at = (None, None)
    for mu, nu in zip(mus, nus):
        err = abs(beta_entropy(mu, nu) - entropy_quadrature(mu, nu))
        if err > worst:
            worst, worst_at = err, (float(mu), float(nu))
    return {
        "name": "entropy-vs-quadrature",
        "n": n,
        "max_abs_error": worst,
        "worst_at": worst_at,
        "tolerance": tol,
        "passed": worst <= tol,
    }


def check_nll_gradients(n: int = 500, seed: int = 202, tol: float = 1e-4, h: float = 1e-5) -> dict:
    """Analytic (d_mu, d_nu) of the beta NLL vs central differences."""
    rng = rng_from_keys(seed)
    worst = 0.0
    for _ in range(n):
        mu = rng.uniform(0.05, 0.95)
        nu = rng.uniform(0.2, 80.0)
        y = rng.uniform(0.02, 0.98)
        d_mu, d_nu = grad_nll(mu, nu, y)
        fd_mu = (beta_nll(mu + h, nu, y) - beta_nll(mu - h, nu, y)) / (2 * h)
        fd_nu = (beta_nll(mu, nu + h, y) - beta_nll(mu, nu - h, y)) / (2 * h)
        err = gradient_max_relative_error(
            np.array([d_mu, d_nu]), np.array([fd_mu, fd_nu])
        )
        worst = max(worst, err)
    return {
        "name": "nll-gradients-vs-finite-differences",
        "n": n,
        "max_rel_error": worst,
        "tolerance": tol,
        "passed": worst <= tol,
    }


def _flatten_grads(grads) -> np.ndarray:
    # Interleave (w, b) per layer, matching flatten_params order.
    grad_w, grad_b = grads
    parts = []
    for gw, gb in zip(grad_w, grad_b):
        parts.append(gw.ravel())
        parts.append(gb.ravel())
    return np.concatenate(parts)


def _random_gradient_case(case_rng: np.random.Generator):
    """Tiny random gradient cases covering all heads and loss terms.

    Returns a list of (loss_of, analytic_gradient, flat0) sub-cases.  For
    the live joint consistency the loss is a single function of both
    models' parameters; for the frozen cross variant each model has its own
    stop-gradient objective, checked separately against the value function
    with the peer contributions held constant.
    """
    from .betadist import LossWeights
    from .network import ArchSpec, flatten_params, init_model, unflatten_params
    from .training import _joint_step_loss_and_grads

    head = ("dbr", "der", "scalar_dropout")[int(case_rng.integers(3))]
    use_twin = bool(case_rng.integers(2))
    input_dim = int(case_rng.integers(3, 6))
    hidden = tuple(int(h) for h in case_rng.integers(2, 4, size=2))
    arch = ArchSpec(input_dim, hidden, head, 0.0)

    def random_model(seed_lo, seed_hi):
        m = init_model(arch, int(case_rng.integers(seed_lo, seed_hi)))
        # Random (not near-zero) parameters exercise generic positions.
        return unflatten_params(
            m, case_rng.normal(0.0, 0.7, size=flatten_params(m).size)
        )

    primary = random_model(0, 10_000)
    twin = random_model(10_000, 20_000) if use_twin else None
    cross = bool(case_rng.integers(2)) and use_twin
    n_sup = int(case_rng.integers(2, 4))
    n_pseudo = int(case_rng.integers(0, 3)) if use_twin else 0
    x = case_rng.normal(0.0, 1.0, size=(n_sup + n_pseudo, input_dim))
    y = case_rng.uniform(0.05, 0.95, size=n_sup)
    weights = LossWeights(
        nll_weight=float(case_rng.uniform(0.0, 2.0)),
        consistency_weight=float(case_rng.uniform(0.5, 3.0)) if use_twin else 0.0,
        eps_clamp=1e-6,
    )
    frozen = None
    if cross:
        frozen = (
            case_rng.uniform(0.1, 0.9, size=n_pseudo),
            case_rng.uniform(0.1, 0.9, size=n_pseudo),
        )

    if not cross:

        def loss_of(flat: np.ndarray) -> float:
            p_size = flatten_params(primary).size
            p = unflatten_params(primary, flat[:p_size])
            t = unflatten_params(twin, flat[p_size:]) if twin is not None else None
            value, _, _ = _joint_step_loss_and_grads(
                p, t, x, y, n_sup, weights, None, None
            )
            return value

        def analytic_grad() -> np.ndarray:
            _, grads_p, grads_t = _joint_step_loss_and_grads(
                primary, twin, x, y, n_sup, weights, None, None
            )
            parts = [_flatten_grads(grads_p)]
            if grads_t is not None:
                parts.append(_flatten_grads(grads_t))
            return np.concatenate(parts)

        flat0 = flatten_params(primary)
        if twin is not None:
            flat0 = np.concatenate([flat0, flatten_params(twin)])
        return [(loss_of, analytic_grad, flat0)]

    # Frozen-cross: per-model stop-gradient objectives.
    from .network import forward
    from .training import supervised_loss_value

    pts_p0 = np.asarray(forward(primary, x).point)
    pts_t0 = np.asarray(forward(twin, x).point)
    tau = weights.consistency_weight
    target_p = np.concatenate([pts_t0[:n_sup], frozen[0]])
    target_t = np.concatenate([pts_p0[:n_sup], frozen[1]])

    def own_objective(model_template, target):
        def f(flat: np.ndarray) -> float:
            from .betadist import rmse

            m = unflatten_params(model_template, flat)
            out = forward(m, x)
            sup = supervised_loss_value(
                _slice(out, n_sup), y, weights
            )
            return sup + tau * rmse(np.asarray(out.point), target)

        return f

    def _slice(out, n):
        from .training import _slice_output

        return _slice_output(out, n)

    _, grads_p, grads_t = _joint_step_loss_and_grads(
        primary, twin, x, y, n_sup, weights, None, None, frozen
    )
    return [
        (own_objective(primary, target_p), lambda: _flatten_grads(grads_p),
         flatten_params(primary)),
        (own_objective(twin, target_t), lambda: _flatten_grads(grads_t),
         flatten_params(twin)),
    ]


def check_network_gradients(
    n_cases: int = 60, seed: int = 303, tol: float = 1e-4, h: float = 1e-5
) -> dict:
    """Reverse-mode network gradients vs central differences, random cases."""
    rng = rng_from_keys(seed)
    worst = 0.0
    for _ in range(n_cases):
        for loss_of, analytic_grad, flat0 in _random_gradient_case(rng):
            ana = analytic_grad()
            # Probing every parameter is wasteful; a random subset per case
            # still covers every layer over many cases.
            n_probe = min(12, flat0.size)
            idx = rng.choice(flat0.size, size=n_probe, replace=False)
            fd = central_difference(loss_of, flat0, h, idx)
            scale = max(np.max(np.abs(ana)), np.max(np.abs(fd)), 1e-8)
            err = float(np.max(np.abs(ana[idx] - fd)) / scale)
            worst = max(worst, err)
    return {
        "name": "network-gradients-vs-finite-differences",
        "n": n_cases,
        "max_rel_error": worst,
        "tolerance": tol,
        "passed": worst <= tol,
    }


def check_wilcoxon(seed: int = 404, bridge_trials: int = 200) -> dict:
    """Exact-path knowns plus the exact/normal bridge at n = 12."""
    r1 = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 1, 2, 3, 4])
    exact_known = abs(r1.p_value - 0.0625) < 1e-12 and r1.method == "exact"
    r2 = wilcoxon_signed_rank([0.3] * 6, [0.3] * 6)
    degenerate_known = r2.p_value == 1.0 and r2.degenerate
    rng = rng_from_keys(seed)
    worst_gap = 0.0
    for _ in range(bridge_trials):
        a = rng.normal(0.0, 1.0, size=12)
        b = a + rng.normal(0.2, 0.8, size=12)
        exact = wilcoxon_signed_rank(a, b).p_value
        approx = wilcoxon_signed_rank(a, b, exact_limit=0).p_value
        worst_gap = max(worst_gap, abs(exact - approx))
    passed = exact_known and degenerate_known and worst_gap <= 0.02
    return {
        "name": "wilcoxon-exact-and-bridge",
        "exact_known": exact_known,
        "degenerate_known": degenerate_known,
        "max_bridge_gap": worst_gap,
        "tolerance": 0.02,
        "passed": passed,
    }


def check_ln_gamma_quadrature(tol: float = 1e-8, n: int = 40, seed: int = 505) -> dict:
    """ln_gamma vs log of the direct gamma integral on [0.5, 20]."""
    rng = rng_from_keys(seed)
    xs = np.concatenate([[0.5, 1.0, 2.0, 20.0], rng.uniform(0.5, 20.0, size=n)])
    worst = 0.0
    for x in xs:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            val, _ = quad(
                lambda t: t ** (x - 1.0) * np.exp(-t),
                0.0,
                np.inf,
                epsabs=1e-12,
                epsrel=1e-12,
                limit=200,
            )
        worst = max(worst, abs(np.log(val) - ln_gamma(float(x))))
    return {
        "name": "ln-gamma-vs-quadrature",
        "n": len(xs),
        "max_abs_error": worst,
        "tolerance": tol,
        "passed": worst <= tol,
    }


def run_all(verbose: bool = True, fast: bool = False) -> bool:
    """Run every oracle suite; returns True iff all passed."""
    suites = [
        check_entropy_quadrature(200 if fast else 1000),
        check_nll_gradients(200 if fast else 500),
        check_network_gradients(30 if fast else 60),
        check_wilcoxon(bridge_trials=50 if fast else 200),
        check_ln_gamma_quadrature(),
    ]
    all_ok = True
    for s in suites:
        all_ok &= s["passed"]
        if verbose:
            status = "PASS" if s["passed"] else "FAIL"
            detail = {
                k: v for k, v in s.items() if k not in ("name", "passed")
            }
            print(f"[{status}] {s['name']}: {detail}")
    return all_ok
