"""tensordi: diffusion-index forecasting from tensor-valued time series.

A CP tensor factor model estimated by iterated simultaneous orthogonalization
of contemporary covariances, with analytic prediction intervals, thresholded
high-dimensional error-covariance estimation, a factor-augmented sparse
regression pipeline, and a Monte-Carlo experiment harness.
"""

from ._kernels import backend_name
from .errors import DataError, DimensionError, NumericalError, TensorDiError
from .tensor import (
    Tensor,
    TensorSeries,
    khatri_rao,
    kr_chain,
    mode_k_product,
    multi_mode_contract,
    outer_product,
    read_series_csv,
    read_series_dir,
    unfold,
    vectorize,
    write_series_csv,
)
from .cpfactor import (
    CcIsoConfig,
    CpFit,
    b_matrix,
    cc_iso,
    initialize_loadings,
    residual_tensors,
    select_rank,
)
from .regression import (
    DiffusionFit,
    PredictionInterval,
    fit_ols,
    forecast,
    normal_quantile,
    prediction_interval,
)
from .covariance import (
    ThresholdRule,
    ThresholdedCov,
    apply_threshold,
    gamma1_diagonal,
    gamma2_from_residuals,
    gamma2_thresholded,
    hac_gamma,
    kron_toeplitz_autocov,
    threshold_covariance,
)
from .baselines import PcaFit, pca_fit, pca_prediction_interval
from .sparse import (
    LassoConfig,
    LassoFit,
    MsFasrFit,
    PdLassoState,
    lasso,
    ms_fasr,
    nodewise_precision,
    pd_lasso_interval,
    tune_lambda_ev,
)
from .dgp import DgpConfig, ErrorSpec, FactorSpec, HdSpec, RegressionSpec, Truth, generate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
