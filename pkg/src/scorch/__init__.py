"""Self-concordant smoothing and proximal Newton-type solvers for composite problems."""

import os as _os

# SCORCH_THREADS caps BLAS/OpenMP threads; it only takes effect if set
# before numpy is first imported.
_threads = _os.environ.get("SCORCH_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "BLIS_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .exceptions import (  # noqa: E402
    ConfigError,
    DataError,
    DomainError,
    GroupStructureError,
    MetricError,
    NumericError,
    ParameterError,
    ParseError,
    ScorchError,
    UnknownKernelError,
    UnsupportedPenaltyError,
)
from .kernels import (  # noqa: E402
    KERNEL_NAMES,
    SeparableKernel,
    SmoothedRegularizer,
    SmoothingKernel,
    catalog_kernel,
    infconv_oracle,
    self_concordance_check,
    smooth_l1,
    smooth_l2_groups,
    smooth_lower_bound,
    smoothing_constant,
)
from .prox import (  # noqa: E402
    DiagonalMetric,
    PenaltySpec,
    prox_group_l2_scaled,
    prox_l1_scaled,
    prox_oracle,
    prox_penalty,
    prox_sparse_group,
)
from .problems import (  # noqa: E402
    AugmentedJacobian,
    CompositeProblem,
    ResidualModel,
    build_augmented_jacobian,
    least_squares_problem,
    logistic_problem,
    subgradient_residual,
)
from .solvers import (  # noqa: E402
    SolverConfig,
    SolverState,
    TraceRecord,
    diagnostics_omega_d,
    solve,
    step_length,
)
from .data import Dataset, GroundTruth, gen_deconvolution, gen_group_lasso, gen_logistic, parse_libsvm, write_libsvm  # noqa: E402

__version__ = "0.1.0"
