"""Picard iteration for the perturbed evolution families and their projectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .certify import RateParams, TrichotomyCertificate
from .errors import BudgetError, ConsistencyError, ParameterError, StructureError
from .linops import Splitting, as_matrix, format_matrix, op_norm, real_if_close, stack_norms
from .seqspace import EvolutionTriple, FixedPointMap, PerturbationBudget, compute_budget


def guard_band(rates: RateParams, rho0: float, rho: float, tail_tol: float) -> int:
    q = math.exp(-min(rates.rho_hat - rho0, rho - rates.rho0_hat))
    return max(1, math.ceil(math.log(tail_tol * (1.0 - q)) / math.log(q)))


@dataclass(frozen=True)
class PerturbationProblem:
    matrix_a: np.ndarray
    cert: TrichotomyCertificate
    matrix_b: np.ndarray
    rates: RateParams
    horizon: int = 80
    fp_tol: float = 1e-12
    tail_tol: float = 1e-13
    max_iter: int = 10_000

    def __post_init__(self):
        A = as_matrix(self.matrix_a, "matrix_a")
        B = as_matrix(self.matrix_b, "matrix_b")
        if A.shape != B.shape or A.shape != self.cert.matrix.shape:
            raise ParameterError("matrix_a, matrix_b and the certificate disagree in shape")
        if not np.allclose(A, self.cert.matrix, rtol=0.0, atol=1e-14 * max(1.0, op_norm(A))):
            raise ParameterError("certificate was issued for a different matrix")
        if self.horizon < 1:
            raise ParameterError("horizon must be at least 1")
        self.rates.check_against(self.cert)

    @property
    def delta(self) -> float:
        return op_norm(self.matrix_b)

    def budget(self) -> PerturbationBudget:
        return compute_budget(self.cert, self.rates, self.matrix_b)

    def guard_band(self) -> int:
        """Extra indices solved beyond the reported horizon.

        Truncating the infinite sums perturbs the last stored entries by a
        relative O(|B|) amount; that error decays inward at least like
        ``q = exp(-min(rho_hat - rho0, rho - rho0_hat))``.  The band makes
        ``q^pad / (1 - q) <= tail_tol``.
        """
        return guard_band(self.rates, self.cert.rho0, self.cert.rho, self.tail_tol)

    def padded_horizon(self) -> int:
        return self.horizon + self.guard_band()

    def echo(self) -> dict:
        return {
            "matrix_a": format_matrix(self.matrix_a),
            "matrix_b": format_matrix(self.matrix_b),
            "kappa": self.cert.kappa,
            "rho0": self.cert.rho0,
            "rho": self.cert.rho,
            "alpha": self.cert.alpha,
            "rho0_hat": self.rates.rho0_hat,
            "rho_hat": self.rates.rho_hat,
            "horizon": self.horizon,
            "fp_tol": self.fp_tol,
            "tail_tol": self.tail_tol,
            "max_iter": self.max_iter,
        }


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual: float
    accumulated_tail: float
    converged: bool
    padded_horizon: int
    contraction: float
    budget: PerturbationBudget
    history: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "accumulated_tail": self.accumulated_tail,
            "converged": self.converged,
            "padded_horizon": self.padded_horizon,
            "contraction": self.contraction,
            "budget": self.budget.to_dict(),
        }


def solve_perturbed(p: PerturbationProblem, check_budget: bool = True) -> tuple[EvolutionTriple, SolveReport]:
    """Iterate ``Z <- Z0 + J(Z)`` from ``Z0`` until successive iterates agree to ``fp_tol``.

    The iteration runs on the padded window and the returned triple is cut
    back to ``p.horizon``.  ``accumulated_tail`` estimates the truncation
    error at the reported window: one-step tail bound divided by ``1 - C delta``.
    """
    budget = p.budget()
    if check_budget and not budget.admissible:
        raise BudgetError(
            f"|B| = {budget.delta:.6g} is not below delta_max = {budget.delta_max:.6g}"
        )
    L = p.padded_horizon()
    if L > p.cert.horizon:
        raise ParameterError(
            f"certificate checked up to {p.cert.horizon} but the solve needs {L}; "
            "certify with a longer horizon"
        )
    F = FixedPointMap(p.cert, p.matrix_b, p.rates, L)
    z0 = F.z0()
    Z = z0
    residual = math.inf
    history = []
    converged = False
    it = 0
    while it < p.max_iter:
        it += 1
        J = F.apply_arrays(*Z)
        Zn = tuple(a + b for a, b in zip(z0, J))
        residual = max(F.norms(*(a - b for a, b in zip(Zn, Z))))
        history.append(residual)
        Z = Zn
        if residual <= p.fp_tol:
            converged = True
            break
    contraction = budget.contraction_C * budget.delta
    znorm = max(F.norms(*Z))
    one, two = F.tail_profile(znorm)
    N = p.horizon
    tail_now = max(one[N], two[L + N])
    accumulated = tail_now / (1.0 - contraction) if contraction < 1.0 else math.inf
    full = EvolutionTriple.from_arrays(*Z, p.rates.rho_hat, p.rates.rho0_hat)
    report = SolveReport(
        iterations=it,
        final_residual=residual,
        accumulated_tail=accumulated,
        converged=converged,
        padded_horizon=L,
        contraction=contraction,
        budget=budget,
        history=tuple(history),
    )
    return full.window(N), report


def fixed_point_residual(p: PerturbationProblem, Z: EvolutionTriple) -> float:
    """Weighted norm of ``Z - Z0 - J(Z)`` on ``Z``'s own window (no guard band)."""
    F = FixedPointMap(p.cert, p.matrix_b, p.rates, Z.horizon)
    J = F.apply_arrays(*(np.asarray(a, dtype=complex) for a in Z.arrays()))
    diff = [z - z0 - j for z, z0, j in zip(Z.arrays(), F.z0(), J)]
    return max(F.norms(*diff))


def perturbed_projectors(Z: EvolutionTriple, alpha: float = float("nan"), fp_tol: float = 1e-12) -> Splitting:
    """The index-zero terms of the three families, checked to form a splitting."""
    split = Splitting(
        real_if_close(Z.es[0]),
        real_if_close(Z.ec[0]),
        real_if_close(Z.eu[0]),
        alpha,
    )
    scale = max(1.0, *(op_norm(P) for P in split.projectors().values())) ** 2
    worst = max(split.residuals().values())
    if worst > 100.0 * fp_tol * scale:
        raise StructureError(f"projector residual {worst:.3e} exceeds {100 * fp_tol * scale:.3e}")
    return split


def closed_form_projectors(p: PerturbationProblem, Z: EvolutionTriple, tol: float | None = None) -> Splitting:
    """Evaluate the explicit series for the three projectors term by term.

    This is an independent, loop-by-loop evaluation of the index-zero rows
    of the fixed-point system and is compared against ``E^k_0``.
    """
    parts = p.cert.parts
    N = Z.horizon
    B = np.asarray(p.matrix_b, dtype=complex)
    Ps = parts.table("s", N + 1)
    Pu = parts.table("u", N + 1)
    Pc = parts.central_table(N + 1)
    K = N + 1
    es, eu, ec = (np.asarray(a, dtype=complex) for a in Z.arrays())

    def c(n):
        return ec[N + n]

    pis = parts.pi_s.copy()
    piu = parts.pi_u.copy()
    pic = parts.pi_c.copy()
    for m in range(N + 1):
        if m + 1 <= N:
            pis -= Ps[m] @ B @ (eu[m + 1] + c(-m - 1))
            pic -= Pc[K + m] @ B @ eu[m + 1]
            piu += (Ps[m] + Pc[K + m]) @ B @ eu[m + 1]
            pic += Ps[m] @ B @ c(-m - 1)
        pis -= (Pu[m + 1] + Pc[K - m - 1]) @ B @ es[m]
        piu += Pu[m + 1] @ B @ (es[m] + c(m))
        pic += Pc[K - m - 1] @ B @ es[m]
        pic -= Pu[m + 1] @ B @ c(m)
    split = Splitting(real_if_close(pis), real_if_close(pic), real_if_close(piu), p.cert.alpha)
    if tol is not None:
        gap = max(split.distance(perturbed_projectors(Z, p.cert.alpha, 1.0)).values())
        if gap > tol:
            raise ConsistencyError(f"explicit series and fixed point differ by {gap:.3e}")
    return split


def fit_rates(Z: EvolutionTriple, window: tuple[int, int] | None = None) -> RateParams:
    """Fit exponential rates of the computed families over ``window = (lo, hi)``.

    ``rho_hat`` is the smaller of the stable and unstable decay rates (families
    that vanish identically are skipped).  ``rho0_hat`` is the pooled slope of
    ``log |E^c_n|`` against ``|n|``.  ``kappa_hat`` is the least constant making
    the fitted envelopes hold on the window.
    """
    lo, hi = window if window is not None else (0, Z.horizon)
    if not 0 <= lo < hi <= Z.horizon or hi - lo + 1 < 3:
        raise ParameterError(f"window {window} must hold at least 3 indices inside the horizon")
    n = np.arange(lo, hi + 1)
    tiny = 1e-300

    def slope(x, y):
        return float(np.polyfit(x, np.log(np.maximum(y, tiny)), 1)[0])

    s_norm = stack_norms(Z.es.terms[lo : hi + 1])
    u_norm = stack_norms(Z.eu.terms[lo : hi + 1])
    rates = []
    for prof in (s_norm, u_norm):
        if np.all(prof > 0):
            rates.append(-slope(n, prof))
    rho_hat = min(rates) if rates else math.inf

    N = Z.ec.horizon
    idx = np.concatenate([-n[::-1], n]) if lo > 0 else np.concatenate([-n[:0:-1], n])
    c_norm = stack_norms(Z.ec.terms[N + idx])
    rho0_hat = slope(np.abs(idx), c_norm) if np.all(c_norm > 0) else 0.0

    kap = 0.0
    if math.isfinite(rho_hat):
        for prof in (s_norm, u_norm):
            if np.all(prof > 0):
                kap = max(kap, float(np.max(prof * np.exp(rho_hat * n))))
    if np.all(c_norm > 0):
        kap = max(kap, float(np.max(c_norm * np.exp(-rho0_hat * np.abs(idx)))))
    return RateParams(rho0_hat, rho_hat, kap)


def family_norms(Z: EvolutionTriple) -> dict[str, np.ndarray]:
    return {
        "stable": stack_norms(Z.es.terms),
        "unstable": stack_norms(Z.eu.terms),
        "central": stack_norms(Z.ec.terms),
    }
