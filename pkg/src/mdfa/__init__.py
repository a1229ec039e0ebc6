"""Matrix decomposition factor analysis."""

from .errors import (
    DimensionError,
    EvalError,
    InvalidInput,
    InvalidSpec,
    MDFAError,
    NotIdentifiable,
    NotIdentified,
    NotPsd,
    RankDeficient,
    SingularHessian,
    TooFewRows,
)
from .estimator import (
    FitOptions,
    FitResult,
    concentrated_loss,
    fit_mdfa,
    fit_mdfa_cov,
    fit_ols,
    fit_pca,
    joint_loss,
    update_params,
    update_scores,
)
from .model import (
    Bounds,
    CovarianceEstimate,
    Denominator,
    FactorParams,
    ScoreMatrix,
    ThetaVector,
    check_scores,
    covariance,
    phi_to_theta,
    theta_to_phi,
)
from .population import population_loss

__version__ = "0.1.0"


def example_data_path():
    """Path of the bundled 100 x 6 example data set."""
    from importlib.resources import files

    return files(__name__) / "data" / "example_100x6.csv"
