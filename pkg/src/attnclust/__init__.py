"""Attention heads as quantizers of mixture models.

Modules: mixtures (data), moments (Gaussian moment identities and Monte
Carlo), attention (predictors), risk (closed forms and oracles), optimize
(projected gradient methods), metrics (recovery distances) and harness
(command line experiments).
"""
from .attention import HeadBank, PredictorKind, first_row_batch, predictor_forward
from .errors import (
    AttnClustError, ConfigurationError, DimensionError, DomainError, EmptySequenceError, StepError,
)
from .metrics import RecoveryReport, dist_signed, dist_up_to_sign_perm, minimal_rmse, recovery_report
from .mixtures import (
    MixtureKind, MixtureSpec, TokenBatch, TokenSequence, interference, make_orthonormal_centroids,
    sample_batch, sample_incontext_sequence, sample_sequence,
)
from .moments import MCEstimate, mc_estimate
from .optimize import (
    OptimizerConfig, TrainTrace, euclidean_step, per_sample_gradient, pgd_heads_run, pgd_run, psgd_run,
    psgd_soft_run, riemannian_step,
)
from .risk import (
    closed_form_risk_gaussian_general, closed_form_risk_gaussian_manifold, ctx_statistics, empirical_risk,
    exact_risk_dirac, lambda_star, lambda_star_degenerate, lambda_star_infinite, oracle_risk, reparam,
    risk_coefficients,
)

__version__ = "0.1.0"
