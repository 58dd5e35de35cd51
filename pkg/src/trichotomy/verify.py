"""Residual checks on a computed evolution triple."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .certify import SQRT2_M1, projector_continuity
from .errors import AmbiguousSplittingError, NumericalFailure, ParameterError
from .linops import as_matrix, eigensplit, op_norm, stack_norms
from .seqspace import EvolutionTriple, PerturbationBudget
from .solver import PerturbationProblem


@dataclass(frozen=True)
class CheckResult:
    max_residual: float
    threshold: float
    witness_index: int | tuple | None = None

    @property
    def passed(self) -> bool:
        return bool(self.max_residual <= self.threshold)

    def to_dict(self) -> dict:
        w = self.witness_index
        if isinstance(w, tuple):
            w = [int(i) for i in w]
        elif w is not None:
            w = int(w)
        return {
            "max_residual": self.max_residual,
            "threshold": self.threshold,
            "pass": self.passed,
            "witness_index": w,
        }


@dataclass
class VerifyReport:
    checks: dict[str, CheckResult] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def merge(self, other: "VerifyReport", prefix: str = "") -> "VerifyReport":
        for k, v in other.checks.items():
            self.checks[prefix + k] = v
        for k, v in other.info.items():
            self.info[prefix + k] = v
        return self

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "info": self.info,
        }


def _worst(values: np.ndarray, index) -> tuple[float, object]:
    if values.size == 0:
        return 0.0, None
    i = int(np.argmax(values))
    return float(values[i]), index[i]


def _record(report, name, values, index, threshold):
    res, w = _worst(np.asarray(values, dtype=float), index)
    report.checks[name] = CheckResult(res, threshold, w)


def check_structure(Z: EvolutionTriple, A, B, tol: float = 1e-8, scale: float = 1.0) -> VerifyReport:
    """Semigroup, orthogonality, identity, forward, inverse and commutation residuals.

    Index ranges stay inside the stored window; central semigroup products use
    ``n, p`` in ``[-N/2, N/2]``.  Every threshold is ``tol * scale``.
    """
    A = as_matrix(A)
    B = as_matrix(B, "perturbation")
    if A.shape != B.shape or A.shape[0] != Z.dim:
        raise ParameterError("matrices do not match the triple's dimension")
    thr = tol * scale
    N = Z.horizon
    if N < 2:
        raise ParameterError("structure checks need a horizon of at least 2")
    AB = (A + B).astype(complex)
    es, eu, ec = (np.asarray(a, dtype=complex) for a in Z.arrays())
    rep = VerifyReport()

    def c(n):
        return ec[N + n]

    for name, E in (("s", es), ("u", eu)):
        vals, idx = [], []
        for n in range(N + 1):
            r = stack_norms(E[n] @ E[: N - n + 1] - E[n:])
            vals.append(r)
            idx.extend((n, p) for p in range(N - n + 1))
        _record(rep, f"semigroup_{name}", np.concatenate(vals), idx, thr)

    h = N // 2
    vals, idx = [], []
    window = ec[N - h : N + h + 1]
    for n in range(-h, h + 1):
        vals.append(stack_norms(c(n) @ window - ec[N + n - h : N + n + h + 1]))
        idx.extend((n, p) for p in range(-h, h + 1))
    _record(rep, "semigroup_c", np.concatenate(vals), idx, thr)

    fams = {"s": (es, range(N + 1)), "u": (eu, range(N + 1)), "c": (ec, range(-N, N + 1))}
    for k, (Ek, rk) in fams.items():
        for l, (El, rl) in fams.items():
            if k == l:
                continue
            vals, idx = [], []
            rl_list = list(rl)
            for i, n in enumerate(rk):
                vals.append(stack_norms(Ek[i] @ El))
                idx.extend((n, p) for p in rl_list)
            _record(rep, f"orthogonal_{k}{l}", np.concatenate(vals), idx, thr)

    eye = np.eye(Z.dim)
    pis, piu, pic = es[0], eu[0], c(0)
    rep.checks["identity_sum"] = CheckResult(op_norm(pis + piu + pic - eye), thr, 0)

    _record(rep, "forward_s", stack_norms(es[1:] - AB @ es[:-1]), list(range(N)), thr)
    _record(rep, "forward_c", stack_norms(ec[1:] - AB @ ec[:-1]), list(range(-N, N)), thr)
    _record(rep, "unstable_inverse", stack_norms(AB @ eu[1:] - eu[:-1]), list(range(N)), thr)

    # (A+B)^n restricted to the central range, re-projected each step so
    # rounding errors in the unstable directions cannot grow
    Mn = pic.copy()
    res = [op_norm(c(0) @ Mn - pic)]
    for n in range(1, N + 1):
        Mn = pic @ (AB @ Mn)
        res.append(op_norm(c(-n) @ Mn - pic))
    _record(rep, "central_invertibility", res, list(range(N + 1)), thr)

    for k, P in (("s", pis), ("c", pic), ("u", piu)):
        rep.checks[f"commutation_{k}"] = CheckResult(op_norm(AB @ P - P @ AB), thr, 0)
    return rep


def _ratio(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    out = np.zeros_like(lhs, dtype=float)
    pos = rhs > 0
    out[pos] = lhs[pos] / rhs[pos]
    out[~pos & (lhs > 0)] = math.inf
    return out


def check_bounds(p: PerturbationProblem, Z: EvolutionTriple, budget: PerturbationBudget) -> VerifyReport:
    """Evolution-difference envelopes and projector distances against ``kappa delta / (delta0 - delta)``.

    Each check reports the largest ratio of left side to right side, so a
    value at most 1 means the bound holds; ``1 - ratio`` is the slack.
    """
    kappa = p.cert.kappa
    bound = budget.distance_bound(kappa)
    N = Z.horizon
    parts = p.cert.parts
    Ps = parts.table("s", N)
    Pu = parts.table("u", N)
    Pc = parts.central_table(N)
    h, h0 = p.rates.rho_hat, p.rates.rho0_hat
    n = np.arange(N + 1)
    nc = np.arange(-N, N + 1)
    es, eu, ec = (np.asarray(a, dtype=complex) for a in Z.arrays())
    rep = VerifyReport()
    env = bound * np.exp(-h * n)
    rs = _ratio(stack_norms(es - Ps), env)
    ru = _ratio(stack_norms(eu - Pu), env)
    rc = _ratio(stack_norms(ec - Pc), bound * np.exp(h0 * np.abs(nc)))
    _record(rep, "envelope_s", rs, list(n), 1.0)
    _record(rep, "envelope_u", ru, list(n), 1.0)
    _record(rep, "envelope_c", rc, list(nc), 1.0)
    dist = {
        "s": op_norm(es[0] - parts.pi_s),
        "c": op_norm(ec[N] - parts.pi_c),
        "u": op_norm(eu[0] - parts.pi_u),
    }
    for k, v in dist.items():
        r = _ratio(np.array([v]), np.array([bound]))[0]
        rep.checks[f"projector_distance_{k}"] = CheckResult(float(r), 1.0, 0)
    rep.checks["bound_below_delta0"] = CheckResult(bound / budget.delta0, 1.0, None)
    rep.checks["delta0_below_sqrt2_minus_1"] = CheckResult(budget.delta0 / SQRT2_M1, 1.0 - 1e-15, None)
    rep.info.update(
        distance_bound=bound,
        projector_distances=dist,
        envelope_slack=1.0 - max(float(np.max(rs)), float(np.max(ru)), float(np.max(rc))),
    )
    return rep


def oracle_compare(p: PerturbationProblem, Z: EvolutionTriple, tol: float = 1e-8) -> VerifyReport:
    """Compare ``E^k_0`` with the eigenvalue projectors of ``A + B`` and run projector continuity."""
    rep = VerifyReport()
    AB = np.asarray(p.matrix_a) + np.asarray(p.matrix_b)
    try:
        oracle = eigensplit(AB, p.cert.alpha)
    except (AmbiguousSplittingError, NumericalFailure) as exc:
        rep.info["oracle_available"] = False
        rep.info["oracle_error"] = str(exc)
        return rep
    rep.info["oracle_available"] = True
    N = Z.horizon
    fixed = {"s": Z.es[0], "c": Z.ec.terms[N], "u": Z.eu[0]}
    orig = p.cert.splitting.projectors()
    for k, P in oracle.projectors().items():
        rep.checks[f"oracle_{k}"] = CheckResult(op_norm(fixed[k] - P), tol, 0)
        cr = projector_continuity(orig[k], fixed[k])
        rep.info[f"continuity_{k}"] = cr.to_dict()
        if cr.guaranteed:
            excess = cr.inverse_norm - cr.bound if cr.invertible else math.inf
            rev = cr.reverse_inverse_norm - cr.bound if cr.reverse_invertible else math.inf
            rep.checks[f"continuity_{k}"] = CheckResult(max(excess, rev), 1e-8, 0)
    return rep


def verify_all(p: PerturbationProblem, Z: EvolutionTriple, budget: PerturbationBudget, tol: float = 1e-8, scale: float = 1.0) -> VerifyReport:
    rep = check_structure(Z, p.matrix_a, p.matrix_b, tol, scale)
    rep.merge(check_bounds(p, Z, budget))
    rep.merge(oracle_compare(p, Z, tol))
    return rep
