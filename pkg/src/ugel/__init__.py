"""Uncertainty-guided edge learning with deep beta regression, desk scale."""

from .betadist import (
    BetaPrediction,
    LossWeights,
    beta_entropy,
    beta_entropy_shape,
    beta_nll,
    beta_pdf,
    combined_supervised_loss,
    grad_nll,
    rmse,
)
from .estimators import make_estimator
from .harness import ExperimentPlan, emit_report, load_matrix, run_plan, summarize
from .loop import PoolState, RoundRecord, UgelConfig, run_ugel, ugel_round
from .network import ArchSpec, ModelParams, forward, init_model
from .special import digamma, ln_beta, ln_gamma
from .stats import wilcoxon_signed_rank
from .synthdata import (
    LabelDistribution,
    Patch,
    load_dataset,
    make_dataset,
    render_patch,
    sample_targets,
    save_dataset,
)

__version__ = "0.1.0"
