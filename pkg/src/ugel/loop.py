"""The uncertainty-guided round engine.

One round, in order: score the whole unlabelled pool with the primary
model's uncertainty estimator; pick the most-uncertain subset (size b_u,
sent to the labelling oracle) and the most-certain subset (size b_c,
pseudo-labelled by both models); append the newly labelled samples;
re-initialise both models with fresh round seeds and retrain them jointly
on the composite loss; drop the labelled subset from the pool; evaluate
test RMSE.  Rounds repeat while the pool can still supply b_u samples.

Setting b_c to zero with the consistency weight at zero and the twin
disabled reduces the engine to plain uncertainty-based active learning
(`run_uncertainty_al` is an independently-written loop used to check that
identity); b_c = "all_remaining" reproduces the
use-every-pseudo-label variant.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .betadist import LossWeights, rmse
from .estimators import ESTIMATOR_KINDS, make_estimator
from .network import ArchSpec, ModelParams, forward, init_model, rng_from_keys
from .training import TrainResult, train_pair

__all__ = [
    "B_C_POLICIES",
    "UgelConfig",
    "PoolState",
    "RoundRecord",
    "TWIN_SEED_OFFSET",
    "select_uncertain",
    "select_certain",
    "oracle_label",
    "pseudo_label",
    "make_pool_state",
    "ugel_round",
    "run_ugel",
    "run_uncertainty_al",
]

B_C_POLICIES = ("equal_d", "fixed", "all_remaining", "zero")

TWIN_SEED_OFFSET = 1_000_003

# Seed-lane tags (see training.py for the training-side tags).
TAG_SELECT = 21
TAG_SCORE = 22
TAG_TRAIN = 23


@dataclass(frozen=True)
class UgelConfig:
    m_init: int = 12
    b_u: int = 6
    b_c_policy: str = "equal_d"
    b_c_fixed: int = 0
    tau: float = 2.0
    nll_weight: float = 1.0
    epochs: int = 12
    learning_rate: float = 0.001
    batch_size: int | None = 6
    estimator: str = "dbr"
    mcd_passes: int = 10
    rounds: int = 10
    base_seed: int = 0
    twin_enabled: bool = True
    hidden_dims: tuple = (64, 32)
    dropout_rate: float | None = None  # None -> head-appropriate default
    eps_clamp: float = 1e-6
    head_kind: str | None = None  # None -> estimator-appropriate default
    # "cross": the pre-round models' pseudo-labels supervise the fresh pair
    # crosswise as constants (knowledge survives re-initialisation).
    # "joint": single live consistency term between the two fresh models.
    consistency_mode: str = "cross"

    def __post_init__(self):
        if self.b_c_policy not in B_C_POLICIES:
            raise ValueError(f"unknown b_c policy {self.b_c_policy!r}")
        if self.consistency_mode not in ("cross", "joint"):
            raise ValueError(f"unknown consistency mode {self.consistency_mode!r}")
        if self.estimator not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.b_u < 0 or self.m_init < 1 or self.rounds < 0:
            raise ValueError("m_init >= 1, b_u >= 0, rounds >= 0 required")
        if not self.twin_enabled and self.tau != 0.0:
            raise ValueError("a disabled twin requires tau = 0")
        if self.tau < 0 or self.nll_weight < 0:
            raise ValueError("loss weights must be >= 0")

    @property
    def resolved_head(self) -> str:
        if self.head_kind is not None:
            return self.head_kind
        return {"dbr": "dbr", "ran": "dbr", "der": "der", "mcd": "scalar_dropout"}[
            self.estimator
        ]

    def arch_for(self, input_dim: int) -> ArchSpec:
        head = self.resolved_head
        rate = self.dropout_rate
        if rate is None:
            rate = 0.2 if head == "scalar_dropout" else 0.0
        return ArchSpec(input_dim, tuple(self.hidden_dims), head, rate)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.nll_weight, self.tau, self.eps_clamp)


@dataclass
class PoolState:
    """Labelled set, unlabelled pool and test split.

    Pool targets are hidden: nothing in the engine reads ``pool[i].y``
    except :func:`oracle_label`, which also counts its accesses.
    """

    labelled_x: np.ndarray
    labelled_y: np.ndarray
    labelled_ids: np.ndarray
    pool: list
    pool_x: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    test_ids: np.ndarray
    round_index: int = 0
    oracle_reads: int = 0

    @property
    def n_labelled(self) -> int:
        return int(self.labelled_y.shape[0])

    @property
    def n_pool(self) -> int:
        return len(self.pool)

    def check_disjoint(self) -> None:
        pool_ids = {p.id for p in self.pool}
        lab = set(self.labelled_ids.tolist())
        test = set(self.test_ids.tolist())
        if lab & pool_ids or lab & test or pool_ids & test:
            raise ValueError("labelled / pool / test splits overlap")


def _patch_features(patch) -> np.ndarray:
    return np.asarray(patch.pixels, dtype=np.float64).ravel()


def make_pool_state(splits) -> PoolState:
    """Build the engine state from dataset splits (labelled, pool, test)."""
    lab_x = np.stack([_patch_features(p) for p in splits.labelled])
    lab_y = np.array([p.y for p in splits.labelled], dtype=np.float64)
    lab_ids = np.array([p.id for p in splits.labelled], dtype=np.int64)
    pool_x = (
        np.stack([_patch_features(p) for p in splits.pool])
        if splits.pool
        else np.zeros((0, lab_x.shape[1]))
    )
    test_x = (
        np.stack([_patch_features(p) for p in splits.test])
        if splits.test
        else np.zeros((0, lab_x.shape[1]))
    )
    test_y = np.array([p.y for p in splits.test], dtype=np.float64)
    test_ids = np.array([p.id for p in splits.test], dtype=np.int64)
    state = PoolState(
        lab_x, lab_y, lab_ids, list(splits.pool), pool_x, test_x, test_y, test_ids
    )
    state.check_disjoint()
    return state


@dataclass
class RoundRecord:
    round_index: int
    test_rmse: float
    selected_uncertain: list  # patch ids, most uncertain first
    selected_certain: list  # patch ids, most certain first
    b_c: int
    oracle_reads: int
    loss_trace: list
    passes: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "round_index": self.round_index,
            "test_rmse": self.test_rmse,
            "selected_uncertain": list(self.selected_uncertain),
            "selected_certain": list(self.selected_certain),
            "b_c": self.b_c,
            "oracle_reads": self.oracle_reads,
            "loss_trace": list(self.loss_trace),
            "passes": dict(sorted(self.passes.items())),
        }
        if include_timing:
            out["wall_times"] = dict(sorted(self.wall_times.items()))
        return out


def _ranked_indices(scores: np.ndarray, rng: np.random.Generator, largest: bool):
    """Indices sorted by score with uniform-random tie-breaking.

    A random permutation is applied first; the stable sort then leaves tied
    entries in permuted (uniformly random) order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    perm = rng.permutation(scores.shape[0])
    key = -scores[perm] if largest else scores[perm]
    order = np.argsort(key, kind="stable")
    return perm[order]


def select_uncertain(scores, b_u: int, rng: np.random.Generator) -> np.ndarray:
    """Positions of the b_u largest scores (most uncertain first)."""
    scores = np.asarray(scores, dtype=np.float64)
    if b_u > scores.shape[0]:
        raise ValueError(f"b_u={b_u} exceeds pool size {scores.shape[0]}")
    return _ranked_indices(scores, rng, largest=True)[:b_u]


def select_certain(scores, b_c: int, excluded, rng: np.random.Generator) -> np.ndarray:
    """Positions of the b_c smallest scores outside ``excluded``."""
    scores = np.asarray(scores, dtype=np.float64)
    excluded = np.asarray(list(excluded), dtype=int)
    if b_c > scores.shape[0] - excluded.shape[0]:
        raise ValueError(
            f"b_c={b_c} exceeds remaining pool "
            f"({scores.shape[0]} - {excluded.shape[0]} excluded)"
        )
    ranked = _ranked_indices(scores, rng, largest=False)
    if excluded.size:
        mask = ~np.isin(ranked, excluded)
        ranked = ranked[mask]
    return ranked[:b_c]


def oracle_label(state: PoolState, positions) -> np.ndarray:
    """Reveal the hidden targets of pool positions.

    This is the only operation allowed to read a pool patch's target; every
    read is counted on ``state.oracle_reads``.
    """
    ys = []
    for i in positions:
        y = state.pool[i].y
        if y is None or not np.isfinite(y):
            raise ValueError(f"pool patch {state.pool[i].id} has no groundtruth")
        ys.append(float(y))
    state.oracle_reads += len(ys)
    return np.asarray(ys, dtype=np.float64)


def pseudo_label(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Deterministic scalar predictions used as pseudo-labels."""
    if x.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(forward(model, x).point)


def _resolve_b_c(cfg: UgelConfig, state: PoolState) -> int:
    available = state.n_pool - cfg.b_u
    if cfg.b_c_policy == "zero":
        return 0
    if cfg.b_c_policy == "fixed":
        wanted = cfg.b_c_fixed
    elif cfg.b_c_policy == "equal_d":
        wanted = state.n_labelled
    else:  # all_remaining
        wanted = available
    return max(0, min(wanted, available))


def _evaluate_rmse(model: ModelParams, state: PoolState) -> float:
    if state.test_x.shape[0] == 0:
        return float("nan")
    points = np.asarray(forward(model, state.test_x).point)
    return rmse(points, state.test_y)


def ugel_round(state: PoolState, primary, twin, cfg: UgelConfig, estimator):
    """Run one full round; returns (state, primary, twin, record).

    ``state`` is updated in place (labelled grows by b_u, pool shrinks by
    b_u); the returned models are freshly initialised and retrained.
    """
    if state.n_pool < cfg.b_u:
        raise ValueError("pool too small for another round")
    rnd = state.round_index + 1
    passes = {}
    times = {}

    t0 = time.perf_counter()
    score_rng = rng_from_keys(cfg.base_seed, rnd, TAG_SCORE)
    before = estimator.passes
    scores = estimator.score_pool(primary, state.pool_x, score_rng)
    passes["scoring"] = estimator.passes - before
    times["scoring"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sel_rng = rng_from_keys(cfg.base_seed, rnd, TAG_SELECT)
    b_c = _resolve_b_c(cfg, state)
    t_u = select_uncertain(scores, cfg.b_u, sel_rng)
    t_c = select_certain(scores, b_c, t_u, sel_rng)

    oracle_before = state.oracle_reads
    y_u = oracle_label(state, t_u)
    x_c = state.pool_x[t_c] if b_c else np.zeros((0, state.pool_x.shape[1]))
    pseudo_primary = pseudo_label(primary, x_c)
    n_pseudo_passes = x_c.shape[0]
    pseudo_twin = None
    if twin is not None:
        pseudo_twin = pseudo_label(twin, x_c)
        n_pseudo_passes *= 2
    passes["pseudo_label"] = n_pseudo_passes
    times["labelling"] = time.perf_counter() - t0

    # Expand the labelled set with the oracle's answers.
    state.labelled_x = np.concatenate([state.labelled_x, state.pool_x[t_u]])
    state.labelled_y = np.concatenate([state.labelled_y, y_u])
    state.labelled_ids = np.concatenate(
        [state.labelled_ids, np.array([state.pool[i].id for i in t_u], dtype=np.int64)]
    )

    t0 = time.perf_counter()
    arch = primary.arch
    primary = init_model(arch, cfg.base_seed + rnd)
    twin = init_model(arch, cfg.base_seed + rnd + TWIN_SEED_OFFSET) if cfg.twin_enabled else None
    use_cross = cfg.consistency_mode == "cross" and twin is not None
    result: TrainResult = train_pair(
        primary,
        twin,
        state.labelled_x,
        state.labelled_y,
        x_c,
        cfg.loss_weights(),
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size,
        seed=(cfg.base_seed, rnd, TAG_TRAIN),
        # Crosswise: the fresh primary learns the old twin's labels.
        pseudo_targets_primary=pseudo_twin if use_cross else None,
        pseudo_targets_twin=pseudo_primary if use_cross else None,
    )
    primary, twin = result.primary, result.twin
    passes["training_primary"] = result.forward_samples["primary"]
    passes["training_twin"] = result.forward_samples["twin"]
    passes["training_total"] = (
        result.forward_samples["primary"] + result.forward_samples["twin"]
    )
    times["training"] = time.perf_counter() - t0

    selected_uncertain_ids = [int(state.pool[i].id) for i in t_u]
    selected_certain_ids = [int(state.pool[i].id) for i in t_c]

    keep = np.ones(state.n_pool, dtype=bool)
    keep[t_u] = False
    state.pool = [p for p, k in zip(state.pool, keep) if k]
    state.pool_x = state.pool_x[keep]
    state.round_index = rnd

    t0 = time.perf_counter()
    test_rmse = _evaluate_rmse(primary, state)
    passes["evaluation"] = int(state.test_x.shape[0])
    times["evaluation"] = time.perf_counter() - t0

    record = RoundRecord(
        round_index=rnd,
        test_rmse=test_rmse,
        selected_uncertain=selected_uncertain_ids,
        selected_certain=selected_certain_ids,
        b_c=b_c,
        oracle_reads=state.oracle_reads - oracle_before,
        loss_trace=result.loss_trace,
        passes=passes,
        wall_times=times,
    )
    return state, primary, twin, record


def _pretrain(state: PoolState, cfg: UgelConfig):
    """Round 0: supervised-only training of the fresh pair on the initial
    labelled set."""
    arch = cfg.arch_for(state.labelled_x.shape[1])
    primary = init_model(arch, cfg.base_seed)
    twin = init_model(arch, cfg.base_seed + TWIN_SEED_OFFSET) if cfg.twin_enabled else None
    weights = LossWeights(cfg.nll_weight, 0.0, cfg.eps_clamp)
    result = train_pair(
        primary,
        twin,
        state.labelled_x,
        state.labelled_y,
        None,
        weights,
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size,
        seed=(cfg.base_seed, 0, TAG_TRAIN),
    )
    return result


def run_ugel(cfg: UgelConfig, splits) -> list[RoundRecord]:
    """Round-0 pretraining followed by up to cfg.rounds full rounds.

    Stops early (cleanly) once the pool cannot supply b_u more samples.
    """
    state = make_pool_state(splits)
    if state.n_labelled != cfg.m_init:
        raise ValueError(
            f"dataset provides {state.n_labelled} initial labels, "
            f"config wants m_init={cfg.m_init}"
        )
    estimator = make_estimator(cfg.estimator, cfg.mcd_passes)

    t0 = time.perf_counter()
    result = _pretrain(state, cfg)
    primary, twin = result.primary, result.twin
    train_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    test_rmse = _evaluate_rmse(primary, state)
    records = [
        RoundRecord(
            round_index=0,
            test_rmse=test_rmse,
            selected_uncertain=[],
            selected_certain=[],
            b_c=0,
            oracle_reads=0,
            loss_trace=result.loss_trace,
            passes={
                "scoring": 0,
                "pseudo_label": 0,
                "training_primary": result.forward_samples["primary"],
                "training_twin": result.forward_samples["twin"],
                "training_total": result.forward_samples["primary"]
                + result.forward_samples["twin"],
                "evaluation": int(state.test_x.shape[0]),
            },
            wall_times={
                "scoring": 0.0,
                "labelling": 0.0,
                "training": train_time,
                "evaluation": time.perf_counter() - t0,
            },
        )
    ]
    for _ in range(cfg.rounds):
        if state.n_pool < cfg.b_u or cfg.b_u == 0 and state.n_pool == 0:
            break
        state, primary, twin, record = ugel_round(state, primary, twin, cfg, estimator)
        records.append(record)
    return records


def run_uncertainty_al(cfg: UgelConfig, splits) -> list[dict]:
    """Plain uncertainty-based active learning, written as its own loop.

    Used as the independent reference for the reduction identity: with
    b_c = 0, tau = 0 and the twin disabled, the round engine must follow
    exactly this trajectory.  Returns one dict per round with the selected
    patch ids, the flattened trained parameters, and the test RMSE.
    """
    state = make_pool_state(splits)
    estimator = make_estimator(cfg.estimator, cfg.mcd_passes)
    arch = cfg.arch_for(state.labelled_x.shape[1])
    weights = LossWeights(cfg.nll_weight, 0.0, cfg.eps_clamp)

    model = init_model(arch, cfg.base_seed)
    result = train_pair(
        model,
        None,
        state.labelled_x,
        state.labelled_y,
        None,
        weights,
        cfg.epochs,
        cfg.learning_rate,
        cfg.batch_size,
        seed=(cfg.base_seed, 0, TAG_TRAIN),
    )
    model = result.primary
    out = [
        {
            "round_index": 0,
            "selected": [],
            "params": model,
            "test_rmse": _evaluate_rmse(model, state),
        }
    ]
    for rnd in range(1, cfg.rounds + 1):
        if state.n_pool < cfg.b_u:
            break
        score_rng = rng_from_keys(cfg.base_seed, rnd, TAG_SCORE)
        scores = estimator.score_pool(model, state.pool_x, score_rng)
        sel_rng = rng_from_keys(cfg.base_seed, rnd, TAG_SELECT)
        t_u = select_uncertain(scores, cfg.b_u, sel_rng)
        select_certain(scores, 0, t_u, sel_rng)
        y_u = oracle_label(state, t_u)
        selected_ids = [int(state.pool[i].id) for i in t_u]

        state.labelled_x = np.concatenate([state.labelled_x, state.pool_x[t_u]])
        state.labelled_y = np.concatenate([state.labelled_y, y_u])
        state.labelled_ids = np.concatenate(
            [
                state.labelled_ids,
                np.array(selected_ids, dtype=np.int64),
            ]
        )
        keep = np.ones(state.n_pool, dtype=bool)
        keep[t_u] = False
        state.pool = [p for p, k in zip(state.pool, keep) if k]
        state.pool_x = state.pool_x[keep]

        model = init_model(arch, cfg.base_seed + rnd)
        result = train_pair(
            model,
            None,
            state.labelled_x,
            state.labelled_y,
            None,
            weights,
            cfg.epochs,
            cfg.learning_rate,
            cfg.batch_size,
            seed=(cfg.base_seed, rnd, TAG_TRAIN),
        )
        model = result.primary
        out.append(
            {
                "round_index": rnd,
                "selected": selected_ids,
                "params": model,
                "test_rmse": _evaluate_rmse(model, state),
            }
        )
    return out
