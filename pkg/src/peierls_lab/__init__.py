"""Lattice laboratory for causal Green functions and the Peierls bracket.

The package discretizes linear classical field theories on a finite
spacetime lattice (bounded time axis, periodic space) and checks the
covariant phase space machinery on them: causal Green functions and
their exact sequences, constraint and gauge operator diagrams,
hyperbolization identities, and the equivalence of the Peierls bracket
with the inverse of the covariant symplectic form.
"""

from .lattice import (
    Lattice,
    BundleDescriptor,
    LatticeSection,
    delta_section,
    pairing,
    random_section,
    zero_section,
)
from .causal import ConeStencil, AdaptedPartition, influence, chronal_precedes, spacelike_separated
from .diffop import (
    CapacityError,
    FactorizationObstruction,
    LinOp,
    SolutionPreconditionError,
    SubspaceBasis,
    cutoff_commutator,
    diagonal_operator,
    factor_through,
    identity_operator,
    masked_residual,
    masked_section_max,
    stencil_operator,
    subspace,
    zero_operator,
)
from .green import (
    GreenHyperbolicityError,
    MarchingForm,
    SequenceReport,
    SolvabilityError,
    adjoint_identity_check,
    dense_causal_solve,
    green_pairing,
    green_pairing_forms,
    section_heatmap_csv,
    solve_constrained,
    verify_cone,
    verify_exact_sequence,
)

__all__ = [
    "Lattice",
    "BundleDescriptor",
    "LatticeSection",
    "delta_section",
    "pairing",
    "random_section",
    "zero_section",
    "ConeStencil",
    "AdaptedPartition",
    "influence",
    "chronal_precedes",
    "spacelike_separated",
    "CapacityError",
    "FactorizationObstruction",
    "LinOp",
    "SolutionPreconditionError",
    "SubspaceBasis",
    "cutoff_commutator",
    "diagonal_operator",
    "factor_through",
    "identity_operator",
    "masked_residual",
    "masked_section_max",
    "stencil_operator",
    "subspace",
    "zero_operator",
    "GreenHyperbolicityError",
    "MarchingForm",
    "SequenceReport",
    "SolvabilityError",
    "adjoint_identity_check",
    "dense_causal_solve",
    "green_pairing",
    "green_pairing_forms",
    "section_heatmap_csv",
    "solve_constrained",
    "verify_cone",
    "verify_exact_sequence",
]

__version__ = "0.1.0"
