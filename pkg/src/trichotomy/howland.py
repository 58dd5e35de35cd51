"""Periodic difference equations x(n+1) = A_n x(n) and their lift to one block operator.

For period ``T`` and dimension ``d`` the lift acts on ``T`` stacked copies of
the state, ``(Lu)_k = A_{k-1} u_{k-1}`` with indices mod ``T``.  Its ``k``-th
power has nonzero blocks ``(j, j-k mod T)`` equal to ``U(j, j-k)``, which is
how per-time evolution families are read back from a lifted solve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .certify import RateParams, TrichotomyCertificate, kappa_profile
from .errors import (
    DimensionError,
    NotInvertibleError,
    ParameterError,
    RateInfeasibleError,
    ValidationError,
)
from .linops import (
    Splitting,
    _interval,
    as_matrix,
    eigensplit,
    format_matrix,
    norm2,
    op_norm,
    parse_matrix,
    range_basis,
    real_if_close,
    similarity,
)
from .seqspace import EvolutionTriple, PerturbationBudget
from .solver import (
    PerturbationProblem,
    SolveReport,
    guard_band,
    perturbed_projectors,
    solve_perturbed,
)
from .verify import CheckResult, VerifyReport, _ratio, check_bounds, check_structure


@dataclass(frozen=True)
class PeriodicSystem:
    blocks: tuple
    perturbation: tuple | None = None

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ParameterError("period must be at least 1")
        mats = tuple(as_matrix(b, f"block {i}") for i, b in enumerate(self.blocks))
        d = mats[0].shape[0]
        if any(m.shape != (d, d) for m in mats):
            raise DimensionError("all blocks must share one dimension")
        object.__setattr__(self, "blocks", mats)
        if self.perturbation is not None:
            pert = tuple(as_matrix(b, f"perturbation {i}") for i, b in enumerate(self.perturbation))
            if len(pert) != len(mats) or any(m.shape != (d, d) for m in pert):
                raise DimensionError("perturbation must match period and dimension")
            object.__setattr__(self, "perturbation", pert)

    @property
    def period(self) -> int:
        return len(self.blocks)

    @property
    def dimension(self) -> int:
        return self.blocks[0].shape[0]

    def block(self, n: int) -> np.ndarray:
        return self.blocks[n % self.period]

    def to_dict(self) -> dict:
        out = {
            "period": self.period,
            "dimension": self.dimension,
            "blocks": [format_matrix(b) for b in self.blocks],
        }
        if self.perturbation is not None:
            out["perturbation"] = [format_matrix(b) for b in self.perturbation]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicSystem":
        if "blocks" not in data:
            raise ValidationError("periodic system needs 'blocks'")
        blocks = tuple(parse_matrix(b) for b in data["blocks"])
        pert = data.get("perturbation")
        sys = cls(blocks, tuple(parse_matrix(b) for b in pert) if pert is not None else None)
        if "period" in data and int(data["period"]) != sys.period:
            raise ValidationError("'period' does not match the number of blocks")
        if "dimension" in data and int(data["dimension"]) != sys.dimension:
            raise ValidationError("'dimension' does not match the block size")
        return sys

    @classmethod
    def from_json(cls, text: str) -> "PeriodicSystem":
        return cls.from_dict(json.loads(text))


def evolution(sys: PeriodicSystem, n: int, m: int) -> np.ndarray:
    """``U(n, m) = A_{n-1} ... A_m`` for ``n >= m``; the identity when ``n == m``."""
    if n < m:
        raise ParameterError(f"evolution needs n >= m, got n={n}, m={m}")
    U = np.eye(sys.dimension, dtype=np.result_type(*sys.blocks))
    for k in range(m, n):
        U = sys.block(k) @ U
    return U


@dataclass(frozen=True)
class FamilySplitting:
    """Per-time projector triples for ``n = 0..T-1`` with envelope constants."""

    splittings: tuple
    kappa: float
    rho0: float
    rho: float

    @property
    def period(self) -> int:
        return len(self.splittings)

    def at(self, n: int) -> Splitting:
        return self.splittings[n % self.period]

    def structure_residual(self) -> float:
        return max(max(s.residuals().values()) for s in self.splittings)

    def intertwining_residual(self, blocks) -> float:
        """Largest ``|P_{n+1} A_n - A_n P_n|`` over times and the three groups."""
        worst = 0.0
        for n in range(self.period):
            A = blocks[n % len(blocks)]
            here, nxt = self.at(n).projectors(), self.at(n + 1).projectors()
            for k in "scu":
                worst = max(worst, op_norm(nxt[k] @ A - A @ here[k]))
        return worst

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "rho0": self.rho0,
            "rho": self.rho,
            "projectors": [
                {k: format_matrix(P) for k, P in s.projectors().items()} for s in self.splittings
            ],
        }


def lift_matrix(blocks) -> np.ndarray:
    """Block matrix with block ``(k, k-1 mod T)`` equal to ``blocks[k-1]``."""
    T = len(blocks)
    d = blocks[0].shape[0]
    out = np.zeros((T * d, T * d), dtype=np.result_type(*blocks))
    for k in range(T):
        j = (k - 1) % T
        out[k * d : (k + 1) * d, j * d : (j + 1) * d] += blocks[j]
    return out


def lift(sys: PeriodicSystem, family: FamilySplitting | None = None) -> tuple[np.ndarray, Splitting | None]:
    """Lifted operator and, when ``family`` is given, the block-diagonal lifted projectors."""
    L = lift_matrix(sys.blocks)
    if family is None:
        return L, None
    if family.period != sys.period:
        raise DimensionError("family period differs from the system period")
    projs = [sla.block_diag(*(s.projectors()[k] for s in family.splittings)) for k in "scu"]
    return L, Splitting(*projs, family.at(0).alpha)


def block_of(M: np.ndarray, d: int, i: int, j: int) -> np.ndarray:
    return M[i * d : (i + 1) * d, j * d : (j + 1) * d]


def off_diagonal_norm(M: np.ndarray, d: int) -> float:
    T = M.shape[0] // d
    return max(
        (norm2(block_of(M, d, i, j)) for i in range(T) for j in range(T) if i != j),
        default=0.0,
    )


def _restricted_invertible(A, P_from, P_to, tol=1e-10) -> bool:
    V, W = range_basis(P_from), range_basis(P_to)
    if V.shape[1] != W.shape[1]:
        return False
    if V.shape[1] == 0:
        return True
    sv = np.linalg.svd(W.conj().T @ A @ V, compute_uv=False)
    return bool(sv[-1] > tol * max(1.0, sv[0]))


def lift_certificate(sys: PeriodicSystem, family: FamilySplitting, N: int) -> TrichotomyCertificate:
    """Certificate for the lift with the family's block-diagonal projectors, checked to ``N``."""
    L, split = lift(sys, family)
    prof = kappa_profile(L, split, family.rho0, family.rho, N)
    if prof.infeasible:
        raise RateInfeasibleError(f"lift does not attain the rates: {', '.join(prof.infeasible)}")
    return TrichotomyCertificate(L, split, prof.kappa, family.rho0, family.rho, N)


def floquet_split(sys: PeriodicSystem, alpha: float, rho0: float, rho: float, N: int) -> FamilySplitting:
    """Projector families from the shifted monodromies ``U(n+T, n)`` split at ``alpha^T``.

    ``Pi_n`` is the spectral projector of ``U(n+T, n)``, which coincides with
    ``U(n,0) Pi_0 U(n,0)^{-1}`` wherever that conjugation makes sense but does
    not need ``A_n`` to be invertible on the stable part.  The central and
    unstable restrictions of every ``A_n`` must be invertible.  ``kappa`` is
    measured on the lift, whose powers hold exactly the evolution operators.
    """
    T = sys.period
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    splits = []
    for n in range(T):
        s = eigensplit(evolution(sys, n + T, n), alpha**T)
        splits.append(Splitting(s.pi_s, s.pi_c, s.pi_u, float(alpha)))
    for n in range(T):
        here, nxt = splits[n].projectors(), splits[(n + 1) % T].projectors()
        for key, name in (("c", "central"), ("u", "unstable")):
            if not _restricted_invertible(sys.block(n), here[key], nxt[key]):
                raise NotInvertibleError(f"A_{n} is not invertible between the {name} ranges")
    draft = FamilySplitting(tuple(splits), 1.0, float(rho0), float(rho))
    cert = lift_certificate(sys, draft, N)
    return FamilySplitting(tuple(splits), cert.kappa, float(rho0), float(rho))


@dataclass
class PeriodicResult:
    """Output of :func:`perturb_periodic`.

    ``families`` maps ``"s"``, ``"u"``, ``"c"`` to arrays indexed
    ``[lag, time]`` holding ``U_hat(time, time - lag)`` restricted to the
    group; unstable lags are negative (backward evolution) and central lags
    run over ``-N..N``.
    """

    family: FamilySplitting
    perturbed: FamilySplitting
    families: dict
    report: VerifyReport
    solve_report: SolveReport
    budget: PerturbationBudget
    certificate: TrichotomyCertificate = field(repr=False)
    lifted: EvolutionTriple = field(repr=False)


def _by_lag(E: np.ndarray, lags, T: int, d: int) -> np.ndarray:
    out = np.empty((len(lags), T, d, d), dtype=E.dtype)
    for i, k in enumerate(lags):
        for j in range(T):
            out[i, j] = block_of(E[i], d, j, (j - k) % T)
    return out


def _off_pattern(E: np.ndarray, lags, T: int, d: int) -> float:
    worst = 0.0
    for i, k in enumerate(lags):
        for j in range(T):
            for l in range(T):
                if l != (j - k) % T:
                    worst = max(worst, norm2(block_of(E[i], d, j, l)))
    return worst


def perturb_periodic(
    sys: PeriodicSystem,
    Bseq,
    rates: RateParams,
    alpha: float,
    rho0: float,
    rho: float,
    horizon: int = 80,
    fp_tol: float = 1e-12,
    tail_tol: float = 1e-13,
    max_iter: int = 10_000,
    tol: float = 1e-8,
) -> PeriodicResult:
    """Certify the lift, solve the lifted fixed-point problem and read back per-time data.

    The report holds these checks:

    * ``block_diagonal``: off-diagonal blocks of the perturbed lifted projectors;
    * ``intertwining`` and ``family_structure`` for the diagonal blocks and ``A_n + B_n``;
    * ``shift_pattern``: lifted families vanish outside blocks ``(j, j-k)``;
    * ``estimate_s/u/c``: per-time evolution differences against
      ``kappa delta / (delta0 - delta)`` times the rate envelope, as ratios;
    * the autonomous structure and bound checks on the lift, prefixed ``lift_``.
    """
    T, d = sys.period, sys.dimension
    Bs = tuple(as_matrix(b, "perturbation block") for b in Bseq)
    if len(Bs) != T or any(b.shape != (d, d) for b in Bs):
        raise DimensionError("perturbation sequence must match period and dimension")
    L_needed = horizon + guard_band(rates, rho0, rho, tail_tol)
    family = floquet_split(sys, alpha, rho0, rho, L_needed)
    cert = lift_certificate(sys, family, L_needed)
    Lmat = cert.matrix
    Bmat = lift_matrix(Bs)
    p = PerturbationProblem(Lmat, cert, Bmat, rates, horizon, fp_tol, tail_tol, max_iter)
    Z, srep = solve_perturbed(p)
    budget = srep.budget
    lifted_hat = perturbed_projectors(Z, cert.alpha, fp_tol)

    rep = VerifyReport()
    off = max(off_diagonal_norm(np.asarray(P), d) for P in lifted_hat.projectors().values())
    rep.checks["block_diagonal"] = CheckResult(off, tol, None)

    per_time = []
    for n in range(T):
        diag = [real_if_close(block_of(np.asarray(P), d, n, n)) for P in lifted_hat.projectors().values()]
        per_time.append(Splitting(*diag, float(alpha)))
    fam_hat = FamilySplitting(tuple(per_time), cert.kappa, float(rho0), float(rho))
    perturbed_blocks = [sys.blocks[n] + Bs[n] for n in range(T)]
    rep.checks["intertwining"] = CheckResult(fam_hat.intertwining_residual(perturbed_blocks), tol, None)
    rep.checks["family_structure"] = CheckResult(fam_hat.structure_residual(), tol, None)

    N = horizon
    es, eu, ec = (np.asarray(a) for a in Z.arrays())
    parts = cert.parts
    ref = {"s": parts.table("s", N), "u": parts.table("u", N), "c": parts.central_table(N)}
    lags = {
        "s": list(range(N + 1)),
        "u": [-k for k in range(N + 1)],
        "c": list(range(-N, N + 1)),
    }
    lifted = {"s": es, "u": eu, "c": ec}
    off_pattern = max(_off_pattern(lifted[k], lags[k], T, d) for k in "suc")
    rep.checks["shift_pattern"] = CheckResult(off_pattern, tol, None)

    bound = budget.distance_bound(cert.kappa)
    families = {k: _by_lag(lifted[k], lags[k], T, d) for k in "suc"}
    violations = 0
    for k in "suc":
        diff = np.linalg.norm(families[k] - _by_lag(ref[k], lags[k], T, d), ord=2, axis=(-2, -1))
        lag = np.abs(np.array(lags[k], dtype=float))
        rate = rates.rho0_hat if k == "c" else -rates.rho_hat
        rhs = (bound * np.exp(rate * lag))[:, None]
        ratio = _ratio(diff, np.broadcast_to(rhs, diff.shape))
        violations += int(np.sum(ratio > 1.0))
        i, j = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        rep.checks[f"estimate_{k}"] = CheckResult(float(ratio[i, j]), 1.0, (int(lags[k][i]), int(j)))
    rep.info["estimate_violations"] = violations
    rep.info["distance_bound"] = bound
    rep.info["kappa"] = cert.kappa
    rep.merge(check_structure(Z, Lmat, Bmat, tol), prefix="lift_")
    rep.merge(check_bounds(p, Z, budget), prefix="lift_")
    return PeriodicResult(family, fam_hat, families, rep, srep, budget, cert, Z)


def random_periodic(
    period: int,
    dims: tuple[int, int, int],
    moduli,
    seed: int,
    cond: float = 1.0,
) -> PeriodicSystem:
    """Periodic system ``A_k = Q_{k+1} D_k Q_k^{-1}`` with ``Q_T = Q_0``.

    Each ``D_k`` is diagonal with moduli drawn from the three intervals and
    random signs, so per-step factors, monodromy and lift share one grouping
    of growth rates.
    """
    if period < 1:
        raise ParameterError("period must be at least 1")
    if len(dims) != 3 or len(moduli) != 3:
        raise ParameterError("need three group sizes and three modulus intervals")
    rng = np.random.default_rng(seed)
    ivals = [_interval(m) for m in moduli]
    d = sum(dims)
    Qs = [np.linalg.qr(rng.standard_normal((d, d)))[0] @ similarity(d, cond, rng) for _ in range(period)]
    blocks = []
    for k in range(period):
        diag = []
        for (lo, hi), n in zip(ivals, dims):
            diag.extend(rng.uniform(lo, hi, n) * rng.choice([-1.0, 1.0], n))
        blocks.append(Qs[(k + 1) % period] @ np.diag(diag) @ np.linalg.inv(Qs[k]))
    return PeriodicSystem(tuple(blocks))
