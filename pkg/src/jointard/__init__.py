"""Joint automatic relevance determination for Bayesian linear regression.

Per-weight precisions and per-sample noise variances are learned together
by maximizing the marginal likelihood, giving fits that are sparse in the
features and robust to corrupted samples.
"""

__version__ = "0.1.0"

from .errors import InputError, JointArdError, NumericalError
from .model import (
    ArdState,
    Dataset,
    Heteroscedastic,
    Homoscedastic,
    Mean,
    Prediction,
    TrimmedMean,
    WeightPosterior,
    compute_posterior,
    lambda_base,
    nll_dual,
    nll_grad,
    nll_primal,
    predict,
)
from .optimizers import (
    EM,
    AdmmConfig,
    FitConfig,
    FitResult,
    Gradient,
    L1Irls,
    L2Irls,
    MacKay,
    fit,
)

__all__ = [
    "AdmmConfig", "ArdState", "Dataset", "EM", "FitConfig", "FitResult", "Gradient",
    "Heteroscedastic", "Homoscedastic", "InputError", "JointArdError", "L1Irls", "L2Irls",
    "MacKay", "Mean", "NumericalError", "Prediction", "TrimmedMean", "WeightPosterior",
    "compute_posterior", "fit", "lambda_base", "nll_dual", "nll_grad", "nll_primal", "predict",
]
