"""Eigenvalues and resonances of finitely perturbed coined walks on Z^2."""

from .lattice import (
    CHIRALITIES,
    CHIRALITY_NAMES,
    DOWN,
    LEFT,
    RIGHT,
    STEPS,
    UP,
    CoinField,
    WalkOperator,
    WalkState,
    apply_walk,
    coin_field_from_json,
    coin_field_to_json,
    evolve,
    random_coin_field,
    random_unitary_coin,
    unitarity_residual,
)
from .translation import (
    OutgoingReport,
    OutgoingState,
    apply_T_theta,
    apply_U_theta,
    translation_weight,
    verify_outgoing,
)
from .spectral import (
    DeterminantFamily,
    KappaRect,
    NumericalFailure,
    Root,
    default_strip,
    det_value,
    locate_roots,
    projection_element,
    resolvent_apply,
    resolvent_kernel_entry,
    resolvent_matrix_element,
    winding_number,
)
from .elastic import (
    ClosedOrbit,
    Escaped,
    PermutationCoin,
    TrappingReport,
    build_orbit_eigenfunction,
    classify_trapping,
    qc_spectrum,
    random_permutation_coin,
    trace_trajectory,
)
from .barrier import (
    TRIVIAL_WALL_COIN,
    BarrierSpec,
    ContourLoop,
    InteriorSpectrum,
    NonPenetrableWalk,
    build_nonpenetrable,
    exterior_escape_check,
    green_apply,
    interior_pairs,
    interior_spectrum,
    norm_on_loop,
    pinned_rows,
    wall_sites,
)
from .shape import (
    CORNER_PRESETS,
    ConditionCReport,
    CornerFamily,
    CornerMode,
    MigrationRow,
    PerturbationReport,
    QuantizationData,
    ShapeFamily,
    SiteDeterminants,
    circulation_factor,
    circulation_slots,
    closed_spectrum_phases,
    condition_c_check,
    corner_permutation_field,
    corner_quantization,
    corner_sites,
    elastic_corner_coins,
    make_corner_family,
    make_shape_family,
    migration_scan,
    perturbation_identities,
    projection_difference,
    rebuild_family,
)

__version__ = "0.1.0"

__all__ = [
    "CHIRALITIES",
    "CHIRALITY_NAMES",
    "LEFT",
    "RIGHT",
    "DOWN",
    "UP",
    "STEPS",
    "CoinField",
    "WalkOperator",
    "WalkState",
    "apply_walk",
    "coin_field_from_json",
    "coin_field_to_json",
    "evolve",
    "random_coin_field",
    "random_unitary_coin",
    "unitarity_residual",
    "OutgoingReport",
    "OutgoingState",
    "apply_T_theta",
    "apply_U_theta",
    "translation_weight",
    "verify_outgoing",
    "DeterminantFamily",
    "KappaRect",
    "NumericalFailure",
    "Root",
    "default_strip",
    "det_value",
    "locate_roots",
    "projection_element",
    "resolvent_apply",
    "resolvent_kernel_entry",
    "resolvent_matrix_element",
    "winding_number",
    "ClosedOrbit",
    "Escaped",
    "PermutationCoin",
    "TrappingReport",
    "build_orbit_eigenfunction",
    "classify_trapping",
    "qc_spectrum",
    "random_permutation_coin",
    "trace_trajectory",
    "TRIVIAL_WALL_COIN",
    "BarrierSpec",
    "ContourLoop",
    "InteriorSpectrum",
    "NonPenetrableWalk",
    "build_nonpenetrable",
    "exterior_escape_check",
    "green_apply",
    "interior_pairs",
    "interior_spectrum",
    "norm_on_loop",
    "pinned_rows",
    "wall_sites",
    "CORNER_PRESETS",
    "ConditionCReport",
    "CornerFamily",
    "CornerMode",
    "MigrationRow",
    "PerturbationReport",
    "QuantizationData",
    "ShapeFamily",
    "SiteDeterminants",
    "circulation_factor",
    "circulation_slots",
    "closed_spectrum_phases",
    "condition_c_check",
    "corner_permutation_field",
    "corner_quantization",
    "corner_sites",
    "elastic_corner_coins",
    "make_corner_family",
    "make_shape_family",
    "migration_scan",
    "perturbation_identities",
    "projection_difference",
    "rebuild_family",
    "__version__",
]
