"""Finite-sample inference for sparsely permuted (shuffled) linear regression.

Model: ``Y = Pi0 X beta0 + sigma0 u`` with ``Pi0`` moving at most ``k`` rows.
The package localises ``Pi0`` to a small candidate set with repro samples,
tests the sparsity of the mismatch by conditional Monte Carlo, and builds
union confidence regions for ``beta0``.  The computational engine is a
score-weighted linear assignment problem solved by the Hungarian method.
"""

__version__ = "0.1.0"

from .assignment import hungarian_solve, repro_objective, surrogate_argmin
from .candidates import (
    CandidateSet,
    DesignVariant,
    ReproConfig,
    generate_candidates,
    localized_null,
    matching_fraction,
    oracle_recover,
)
from .errors import PermregError
from .inference import (
    ConfidenceRegion,
    Ellipsoid,
    SparsityTestConfig,
    SparsityTestReport,
    coef_region,
    coef_region_membership,
    partial_coef_region,
    region_volume_mc,
    sparsity_test,
)
from .numerics import RngStream
from .permutations import PermutationClass, SparsePermutation, count_class, enumerate_class
from .simulate import ScenarioConfig, run_scenario
from .tuning import select_lambdas

__all__ = [
    "CandidateSet",
    "ConfidenceRegion",
    "DesignVariant",
    "Ellipsoid",
    "PermregError",
    "PermutationClass",
    "ReproConfig",
    "RngStream",
    "ScenarioConfig",
    "SparsePermutation",
    "SparsityTestConfig",
    "SparsityTestReport",
    "coef_region",
    "coef_region_membership",
    "count_class",
    "enumerate_class",
    "generate_candidates",
    "hungarian_solve",
    "localized_null",
    "matching_fraction",
    "oracle_recover",
    "partial_coef_region",
    "region_volume_mc",
    "repro_objective",
    "run_scenario",
    "select_lambdas",
    "sparsity_test",
    "surrogate_argmin",
]
