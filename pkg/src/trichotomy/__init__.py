"""Exponential trichotomies of linear difference equations and their perturbations."""

from .certify import (
    ContinuityReport,
    RateParams,
    TrichotomyCertificate,
    certify,
    measure_kappa,
    projector_continuity,
)
from .errors import NumericalFailure, ValidationError
from .howland import (
    FamilySplitting,
    PeriodicSystem,
    evolution,
    floquet_split,
    lift,
    perturb_periodic,
    random_periodic,
)
from .linops import Splitting, eigensplit, random_perturbation, random_trichotomic
from .seqspace import EvolutionTriple, PerturbationBudget, apply_J, bound_C, compute_budget
from .solver import (
    PerturbationProblem,
    SolveReport,
    closed_form_projectors,
    fit_rates,
    perturbed_projectors,
    solve_perturbed,
)
from .verify import VerifyReport, check_bounds, check_structure, oracle_compare, verify_all

__version__ = "0.1.0"

__all__ = [
    "ContinuityReport",
    "EvolutionTriple",
    "FamilySplitting",
    "NumericalFailure",
    "PerturbationBudget",
    "PerturbationProblem",
    "PeriodicSystem",
    "RateParams",
    "SolveReport",
    "Splitting",
    "TrichotomyCertificate",
    "ValidationError",
    "VerifyReport",
    "apply_J",
    "bound_C",
    "certify",
    "check_bounds",
    "check_structure",
    "closed_form_projectors",
    "compute_budget",
    "eigensplit",
    "evolution",
    "fit_rates",
    "floquet_split",
    "lift",
    "measure_kappa",
    "oracle_compare",
    "perturb_periodic",
    "perturbed_projectors",
    "projector_continuity",
    "random_perturbation",
    "random_periodic",
    "random_trichotomic",
    "solve_perturbed",
    "verify_all",
]
