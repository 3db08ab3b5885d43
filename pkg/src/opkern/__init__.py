"""Finite-scale calculus for operator-valued positive-definite kernels."""

from .errors import (
    GramMismatch,
    InternalInvariantViolation,
    InvalidKernel,
    LabelError,
    NotDominated,
    NotEquivalent,
    NotInvertible,
    NotPositiveDefinite,
    NotStrictContraction,
    OpKernError,
    ShapeError,
    SingularL,
    SingularSystem,
    SpectrumOutOfRange,
)
from .kernels import (
    HERMITIAN_RTOL,
    PD_RTOL,
    RANK_RTOL,
    LabelSet,
    OperatorKernelTable,
    PDReport,
    constant_kernel,
    cp_contraction_kernel,
    flatten,
    has_unit_diagonal,
    identity_kernel,
    is_positive_definite,
    kernel_leq,
    neumann_series_kernel,
    normalize_diagonal,
    random_pd_kernel,
    scalar_kernel,
    zero_kernel,
)
from .dilation import (
    FeatureSystem,
    adjoint_apply,
    embed,
    kolmogorov_factorize,
    minimal_dilation_dim,
    projection_chain,
)
from .transfer import (
    RealizationReport,
    RNDerivative,
    RNTransferReport,
    SignedKernelSystem,
    TransferRealization,
    construct_partial_isometry,
    generate_valid_system,
    radon_nikodym,
    transfer_function,
    transitive_action_check,
    validate_system,
    verify_realization,
    verify_rn_transfer_identity,
)
from .gaussian import (
    CondCovComparison,
    ConditionalLaw,
    ConditionalMcReport,
    GaussianSampler,
    JointKernel,
    PathBatch,
    assemble_joint,
    condition,
    conditional_cov_equal,
    draw_paths,
    empirical_covariance,
    make_sampler,
    mc_verify_conditional,
    sample_joint,
    standard_normal_rows,
)
from .regression import (
    DesignMatrices,
    RegressionFit,
    TrainingSet,
    design_matrices,
    gp_posterior_mean,
    krr_fit,
    objective_value,
    predict,
)

__version__ = "0.1.0"
