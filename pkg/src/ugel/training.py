"""Joint retraining of the primary/twin model pair on the composite loss.

The per-step loss is

    L = L_s(primary on labelled batch)
      + L_s(twin on labelled batch)                    (when a twin is used)
      + consistency_weight * RMSE(primary points, twin points)

where the consistency RMSE runs over the labelled batch plus the pseudo
batch, comparing the two models' scalar predictions.  The supervised loss
depends on the head: beta heads use RMSE + nll_weight * beta NLL, scalar
heads plain RMSE, evidential heads the NIG likelihood with its evidence
regulariser.  All three terms are applied jointly at every optimisation
step; gradients are exact reverse-mode, and both models are updated
simultaneously from the same loss evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .betadist import BetaPrediction, LossWeights, grad_nll, rmse
from .evidential import DER_REG_COEF, der_supervised_loss_and_grads, nig_nll
from .network import (
    DerPrediction,
    ModelParams,
    ScalarPrediction,
    backward_from_raw,
    forward_cached,
    head_grads_to_raw,
    rng_from_keys,
    sample_dropout_masks,
)
from .optim import adam_init, adam_step

__all__ = [
    "TrainResult",
    "supervised_loss_value",
    "round_loss",
    "train_pair",
]

# Stream tags keep every random component on its own seed lane, so that
# disabling one component (e.g. the twin) cannot shift another's draws.
TAG_BATCH = 11
TAG_DROPOUT_PRIMARY = 12
TAG_DROPOUT_TWIN = 13


@dataclass
class TrainResult:
    primary: ModelParams
    twin: ModelParams | None
    loss_trace: list
    forward_samples: dict = field(default_factory=dict)


def _rmse_value_grad(preds: np.ndarray, targets: np.ndarray):
    n = preds.shape[0]
    diff = preds - targets
    value = float(np.sqrt(np.mean(diff**2)))
    if value == 0.0:
        return 0.0, np.zeros_like(preds)
    return value, diff / (n * value)


def supervised_loss_value(output, y, weights: LossWeights) -> float:
    """Head-appropriate supervised loss of a batch of predictions."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(output, BetaPrediction):
        value = rmse(output.mu, y)
        if weights.nll_weight > 0.0:
            value += weights.nll_weight * float(
                np.mean(output.nll(y, weights.eps_clamp))
            )
        return value
    if isinstance(output, ScalarPrediction):
        return rmse(output.yhat, y)
    if isinstance(output, DerPrediction):
        nll = nig_nll(y, output.gamma, output.upsilon, output.alpha, output.beta)
        reg = np.abs(y - output.gamma) * (2.0 * output.upsilon + output.alpha)
        return float(np.mean(nll) + DER_REG_COEF * np.mean(reg))
    raise TypeError(f"unsupported head output {type(output)!r}")


def _supervised_grads(output, y, weights: LossWeights):
    """Loss value plus gradients w.r.t. each head output channel."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(output, BetaPrediction):
        n = y.shape[0]
        value, d_mu = _rmse_value_grad(np.asarray(output.mu), y)
        d_nu = np.zeros(n)
        if weights.nll_weight > 0.0:
            g_mu, g_nu = grad_nll(output.mu, output.nu, y, weights.eps_clamp)
            value += weights.nll_weight * float(
                np.mean(output.nll(y, weights.eps_clamp))
            )
            d_mu = d_mu + weights.nll_weight * g_mu / n
            d_nu = d_nu + weights.nll_weight * g_nu / n
        return value, (d_mu, d_nu)
    if isinstance(output, ScalarPrediction):
        value, d_yhat = _rmse_value_grad(np.asarray(output.yhat), y)
        return value, (d_yhat,)
    if isinstance(output, DerPrediction):
        return der_supervised_loss_and_grads(output, y)
    raise TypeError(f"unsupported head output {type(output)!r}")


def _slice_output(output, n: int):
    if isinstance(output, BetaPrediction):
        return BetaPrediction(np.asarray(output.mu)[:n], np.asarray(output.nu)[:n])
    if isinstance(output, DerPrediction):
        return DerPrediction(
            output.gamma[:n], output.upsilon[:n], output.alpha[:n], output.beta[:n]
        )
    return ScalarPrediction(output.yhat[:n])


def _zeros_like_channels(output):
    if isinstance(output, BetaPrediction):
        n = np.asarray(output.mu).shape[0]
        return [np.zeros(n), np.zeros(n)]
    if isinstance(output, DerPrediction):
        return [np.zeros(output.gamma.shape[0]) for _ in range(4)]
    return [np.zeros(output.yhat.shape[0])]


def round_loss(
    primary_out,
    twin_out,
    labels,
    primary_pseudo_points,
    twin_pseudo_points,
    weights: LossWeights,
) -> float:
    """Three-term composite loss of one round, as a pure value.

    ``primary_out`` / ``twin_out`` are head outputs on the full labelled
    set; the pseudo points are the models' scalar predictions on the
    most-certain subset.  With no twin the supervised term of the primary is
    all there is.
    """
    labels = np.asarray(labels, dtype=np.float64)
    total = supervised_loss_value(primary_out, labels, weights)
    if twin_out is None:
        return total
    total += supervised_loss_value(twin_out, labels, weights)
    if weights.consistency_weight > 0.0:
        pts_p = np.concatenate(
            [np.asarray(primary_out.point), np.asarray(primary_pseudo_points)]
        )
        pts_t = np.concatenate(
            [np.asarray(twin_out.point), np.asarray(twin_pseudo_points)]
        )
        total += weights.consistency_weight * rmse(pts_p, pts_t)
    return total


def _joint_step_loss_and_grads(
    primary: ModelParams,
    twin: ModelParams | None,
    x_joint: np.ndarray,
    y_sup: np.ndarray,
    n_sup: int,
    weights: LossWeights,
    masks_p,
    masks_t,
    frozen_pseudo: tuple | None = None,
):
    """One evaluation of the composite loss with gradients for both models.

    Returns (loss, grads_primary, grads_twin_or_None).  Both gradient sets
    are taken at the models' current parameters, so callers can apply the
    two updates simultaneously.

    With ``frozen_pseudo=None`` the consistency term compares the two
    models' live predictions over the whole joint batch (the literal
    single-loss form).  With ``frozen_pseudo=(targets_for_primary,
    targets_for_twin)`` -- the pseudo-labels the *previous* (pre-round)
    models emitted on the pseudo batch -- each model's pseudo-batch
    predictions are instead pulled toward the other's frozen labels
    (cross pseudo supervision).  Freshly re-initialised models only receive
    knowledge from the previous round through these frozen targets.
    """
    out_p, cache_p = forward_cached(primary, x_joint, masks_p)
    sup_value_p, sup_grads_p = _supervised_grads(
        _slice_output(out_p, n_sup), y_sup, weights
    )
    channels_p = _zeros_like_channels(out_p)
    for ch, g in zip(channels_p, sup_grads_p):
        ch[:n_sup] += g
    loss = sup_value_p

    grads_t = None
    if twin is not None:
        out_t, cache_t = forward_cached(twin, x_joint, masks_t)
        sup_value_t, sup_grads_t = _supervised_grads(
            _slice_output(out_t, n_sup), y_sup, weights
        )
        channels_t = _zeros_like_channels(out_t)
        for ch, g in zip(channels_t, sup_grads_t):
            ch[:n_sup] += g
        loss += sup_value_t

        if weights.consistency_weight > 0.0:
            tau = weights.consistency_weight
            pts_p = np.asarray(out_p.point)
            pts_t = np.asarray(out_t.point)
            if frozen_pseudo is None:
                cons_value, d_pts_p = _rmse_value_grad(pts_p, pts_t)
                loss += tau * cons_value
                # The scalar prediction is channel 0 for every head kind.
                channels_p[0] = channels_p[0] + tau * d_pts_p
                channels_t[0] = channels_t[0] - tau * d_pts_p
            else:
                # One directional term per model, each weighted tau, so a
                # model's gradient scale matches the joint form (where the
                # single tau-weighted term reaches both models).
                frozen_for_p, frozen_for_t = frozen_pseudo
                target_p = np.concatenate([pts_t[:n_sup], frozen_for_p])
                target_t = np.concatenate([pts_p[:n_sup], frozen_for_t])
                r_p, d_pts_p = _rmse_value_grad(pts_p, target_p)
                r_t, d_pts_t = _rmse_value_grad(pts_t, target_t)
                loss += tau * (r_p + r_t)
                channels_p[0] = channels_p[0] + tau * d_pts_p
                channels_t[0] = channels_t[0] + tau * d_pts_t

        d_raw_t = head_grads_to_raw(twin.arch.head_kind, cache_t, tuple(channels_t))
        grads_t = backward_from_raw(twin, cache_t, d_raw_t)

    d_raw_p = head_grads_to_raw(primary.arch.head_kind, cache_p, tuple(channels_p))
    grads_p = backward_from_raw(primary, cache_p, d_raw_p)
    return loss, grads_p, grads_t


def train_pair(
    primary: ModelParams,
    twin: ModelParams | None,
    x_labelled: np.ndarray,
    y_labelled: np.ndarray,
    x_pseudo: np.ndarray | None,
    weights: LossWeights,
    epochs: int,
    learning_rate: float,
    batch_size: int | None,
    seed,
    pseudo_targets_primary: np.ndarray | None = None,
    pseudo_targets_twin: np.ndarray | None = None,
) -> TrainResult:
    """Retrain the pair for ``epochs`` passes over the labelled data.

    Each step draws a labelled mini-batch and a proportional slice of the
    pseudo set, evaluates the composite loss once, and applies one Adam
    update to each model.  ``batch_size=None`` means full batch.

    When pseudo targets are given (the pre-round models' frozen
    pseudo-labels, crosswise: the primary is pulled toward the old twin's
    labels and vice versa), the consistency term uses them on the pseudo
    batch; otherwise it compares the two live models.  Deterministic given
    the seed; raises ``RuntimeError`` (with the epoch index) if the loss
    goes non-finite.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    x_labelled = np.asarray(x_labelled, dtype=np.float64)
    y_labelled = np.asarray(y_labelled, dtype=np.float64)
    if x_labelled.shape[0] == 0:
        raise ValueError("labelled data must be nonempty")
    n_lab = x_labelled.shape[0]
    if x_pseudo is None:
        x_pseudo = np.zeros((0, x_labelled.shape[1]))
    x_pseudo = np.asarray(x_pseudo, dtype=np.float64)
    n_pse = x_pseudo.shape[0]
    use_frozen = pseudo_targets_primary is not None
    if use_frozen and twin is not None:
        pseudo_targets_primary = np.asarray(pseudo_targets_primary, dtype=np.float64)
        pseudo_targets_twin = np.asarray(pseudo_targets_twin, dtype=np.float64)
        if (
            pseudo_targets_primary.shape[0] != n_pse
            or pseudo_targets_twin.shape[0] != n_pse
        ):
            raise ValueError("pseudo targets must match the pseudo set")

    batch_rng = rng_from_keys(seed, TAG_BATCH)
    drop_rng_p = rng_from_keys(seed, TAG_DROPOUT_PRIMARY)
    drop_rng_t = rng_from_keys(seed, TAG_DROPOUT_TWIN)

    opt_p = adam_init(primary, learning_rate)
    opt_t = adam_init(twin, learning_rate) if twin is not None else None

    effective_batch = n_lab if batch_size is None else min(batch_size, n_lab)
    n_steps = ceil(n_lab / effective_batch)

    trace = []
    fwd = {"primary": 0, "twin": 0}
    for epoch in range(epochs):
        perm_lab = batch_rng.permutation(n_lab)
        perm_pse = batch_rng.permutation(n_pse) if n_pse else np.array([], dtype=int)
        lab_batches = np.array_split(perm_lab, n_steps)
        pse_batches = (
            np.array_split(perm_pse, n_steps) if n_pse else [perm_pse] * n_steps
        )
        epoch_losses = []
        for lab_idx, pse_idx in zip(lab_batches, pse_batches):
            xb = x_labelled[lab_idx]
            yb = y_labelled[lab_idx]
            n_sup = xb.shape[0]
            x_joint = np.concatenate([xb, x_pseudo[pse_idx]]) if pse_idx.size else xb
            n_joint = x_joint.shape[0]

            masks_p = (
                sample_dropout_masks(primary.arch, n_joint, drop_rng_p)
                if primary.arch.dropout_rate > 0.0
                else None
            )
            masks_t = (
                sample_dropout_masks(twin.arch, n_joint, drop_rng_t)
                if twin is not None and twin.arch.dropout_rate > 0.0
                else None
            )
            frozen = None
            if use_frozen and twin is not None:
                frozen = (
                    pseudo_targets_primary[pse_idx],
                    pseudo_targets_twin[pse_idx],
                )
            loss, grads_p, grads_t = _joint_step_loss_and_grads(
                primary, twin, x_joint, yb, n_sup, weights, masks_p, masks_t, frozen
            )
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            primary, opt_p = adam_step(primary, grads_p, opt_p)
            fwd["primary"] += n_joint
            if twin is not None:
                twin, opt_t = adam_step(twin, grads_t, opt_t)
                fwd["twin"] += n_joint
            epoch_losses.append(loss)
        trace.append(float(np.mean(epoch_losses)))
    return TrainResult(primary, twin, trace, fwd)
