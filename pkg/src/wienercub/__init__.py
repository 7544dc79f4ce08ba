"""Cubature on Wiener space: high-order weak approximation of Stratonovich
SDEs by deterministic trees of ODE flows.

The pipeline: a truncated tensor/Lie algebra carries path signatures, a
cubature formula matches the expected Brownian signature up to a degree,
and the solver pushes an initial state through the formula's paths on a
time partition whose steps shrink toward the horizon.
"""
from .tensor_algebra import (
    GradedTensor,
    AlgebraError,
    all_words,
    graded_degree,
)
from .lie_structures import (
    LiePolynomial,
    NotLieElement,
    bracket,
    dynkin_map,
    dynkin_defect,
    dynkin_is_lie,
    is_lie_element,
    certify,
    bch,
)
from .path_signature import (
    PiecewiseLinearPath,
    concat,
    signature,
    log_signature,
    brownian_rescale,
    brownian_expected_signature,
    monte_carlo_expected_signature,
)
from .cubature import (
    CubatureFormula,
    CubatureLoadError,
    ValidationReport,
    validate,
    degree3,
    degree5_d1,
    rescale,
    lie_form,
    to_file,
    from_file,
)
from .vector_fields import (
    AffineField,
    GenericField,
    VectorFieldSystem,
    FlowConfig,
    FlowDivergence,
    bracket_field,
    combine_fields,
    gbm,
    ou,
    affine_from_file,
    nested_bracket_field,
    gamma_field,
    affine_flow_exact,
    flow_exp,
    flow_along_path,
)
from .operator_calculus import (
    MultiPoly,
    lie_derivative,
    word_operator,
    taylor_operator,
    flow_tensor_gap,
    remainder_box_bound,
)
from .klv_solver import (
    Partition,
    gamma_partition,
    SolverConfig,
    SolverResult,
    LeafCapExceeded,
    klv_full,
    klv_sampled,
    kusuoka_step,
    euler_mc,
)

__version__ = "0.1.0"

__all__ = [
    "GradedTensor",
    "AlgebraError",
    "all_words",
    "graded_degree",
    "LiePolynomial",
    "NotLieElement",
    "bracket",
    "dynkin_map",
    "dynkin_defect",
    "dynkin_is_lie",
    "is_lie_element",
    "certify",
    "bch",
    "PiecewiseLinearPath",
    "concat",
    "signature",
    "log_signature",
    "brownian_rescale",
    "brownian_expected_signature",
    "monte_carlo_expected_signature",
    "CubatureFormula",
    "CubatureLoadError",
    "ValidationReport",
    "validate",
    "degree3",
    "degree5_d1",
    "rescale",
    "lie_form",
    "to_file",
    "from_file",
    "AffineField",
    "GenericField",
    "VectorFieldSystem",
    "FlowConfig",
    "FlowDivergence",
    "bracket_field",
    "combine_fields",
    "gbm",
    "ou",
    "affine_from_file",
    "nested_bracket_field",
    "gamma_field",
    "affine_flow_exact",
    "flow_exp",
    "flow_along_path",
    "MultiPoly",
    "lie_derivative",
    "word_operator",
    "taylor_operator",
    "flow_tensor_gap",
    "remainder_box_bound",
    "Partition",
    "gamma_partition",
    "SolverConfig",
    "SolverResult",
    "LeafCapExceeded",
    "klv_full",
    "klv_sampled",
    "kusuoka_step",
    "euler_mc",
    "__version__",
]
