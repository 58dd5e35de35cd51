"""Trichotomy certificates: measured constants for a splitting, and projector continuity."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import NotInvertibleError, ParameterError, RateInfeasibleError, ValidationError
from .linops import (
    Splitting,
    as_matrix,
    eigensplit,
    format_matrix,
    norm2,
    op_norm,
    parse_matrix,
    part_in,
    range_basis,
    stack_norms,
)

SLOPE_TOL = 1e-3
SQRT2_M1 = math.sqrt(2.0) - 1.0


@dataclass(frozen=True)
class PartOperators:
    """The parts of A on each spectral subspace, kept in factored form.

    For each generator the zero-extended operator is ``V G W`` with ``V`` an
    orthonormal basis of the range, ``G`` the restricted map (or its inverse)
    and ``W = V^H P``.  Powers are ``V G^k W``: only the small restricted
    matrix is multiplied repeatedly, so rounding never leaks into the
    complementary subspaces through the ill-conditioned projectors.
    """

    pi_s: np.ndarray
    pi_c: np.ndarray
    pi_u: np.ndarray
    factors: dict
    radii: dict = field(default_factory=dict)

    @classmethod
    def build(cls, M, split: Splitting) -> "PartOperators":
        A = as_matrix(M).astype(complex)
        P = {k: np.asarray(v, dtype=complex) for k, v in split.projectors().items()}
        radii = {}
        factors = {}
        for key in ("s", "c", "u"):
            V, S = part_in(A, P[key])
            W = V.conj().T @ P[key]
            if key == "s":
                factors["s"] = (V, S, W)
                radii["s"] = _radius(S)
                continue
            if S.shape[0]:
                sv = np.linalg.svd(S, compute_uv=False)
                if sv[-1] <= 1e-12 * max(1.0, sv[0]):
                    raise NotInvertibleError(f"part of the matrix on the {key} subspace is singular")
                Sinv = np.linalg.inv(S)
            else:
                Sinv = S
            if key == "c":
                factors["c+"] = (V, S, W)
                factors["c-"] = (V, Sinv, W)
                radii["c"] = _radius(S)
                radii["c_inv"] = _radius(Sinv)
            else:
                factors["u"] = (V, Sinv, W)
                radii["u_inv"] = _radius(Sinv)
        return cls(P["s"], P["c"], P["u"], factors, radii)

    def generator(self, which: str) -> np.ndarray:
        """The zero-extended operator, e.g. ``A_s Pi_s`` for ``"s"``."""
        V, G, W = self.factors[which]
        return V @ G @ W

    def table(self, which: str, n: int) -> np.ndarray:
        """Stack ``[G^0 P, G^1 P, ..., G^n P]`` for the generator named ``which``.

        ``which`` is ``"s"`` (A_s), ``"c+"`` (A_c), ``"c-"`` (A_c^{-1}) or
        ``"u"`` (A_u^{-1}).  The zeroth entry is the projector itself.
        """
        V, G, W = self.factors[which]
        P = {"s": self.pi_s, "c+": self.pi_c, "c-": self.pi_c, "u": self.pi_u}[which]
        d, r = P.shape[0], G.shape[0]
        out = np.empty((n + 1, d, d), dtype=complex)
        out[0] = P
        if n == 0:
            return out
        powers = np.empty((n, r, r), dtype=complex)
        Gk = np.eye(r, dtype=complex)
        for k in range(n):
            Gk = G @ Gk
            powers[k] = Gk
        out[1:] = (V @ powers) @ W
        return out

    def central_table(self, n: int) -> np.ndarray:
        """A_c^k Pi_c for k = -n..n, stored at offset n."""
        fwd = self.table("c+", n)
        bwd = self.table("c-", n)
        return np.concatenate([bwd[:0:-1], fwd])


def _radius(S: np.ndarray) -> float:
    if S.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(S))))


@dataclass(frozen=True)
class TrichotomyCertificate:
    """A splitting of ``matrix`` with envelope constants checked up to ``horizon``."""

    matrix: np.ndarray
    splitting: Splitting
    kappa: float
    rho0: float
    rho: float
    horizon: int

    @property
    def alpha(self) -> float:
        return self.splitting.alpha

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def parts(self) -> PartOperators:
        return PartOperators.build(self.matrix, self.splitting)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "rho0": self.rho0,
            "rho": self.rho,
            "horizon": self.horizon,
            "alpha": self.alpha,
            "matrix": format_matrix(self.matrix),
            "pi_s": format_matrix(self.splitting.pi_s),
            "pi_c": format_matrix(self.splitting.pi_c),
            "pi_u": format_matrix(self.splitting.pi_u),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "TrichotomyCertificate":
        try:
            split = Splitting(
                parse_matrix(data["pi_s"]),
                parse_matrix(data["pi_c"]),
                parse_matrix(data["pi_u"]),
                float(data["alpha"]),
            )
            return cls(
                parse_matrix(data["matrix"]),
                split,
                float(data["kappa"]),
                float(data["rho0"]),
                float(data["rho"]),
                int(data["horizon"]),
            )
        except KeyError as exc:
            raise ValidationError(f"certificate is missing key {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "TrichotomyCertificate":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RateParams:
    """Target rates for the perturbed system; ``kappa_hat`` is filled in a posteriori."""

    rho0_hat: float
    rho_hat: float
    kappa_hat: float | None = None

    def check_against(self, cert: TrichotomyCertificate) -> None:
        if not (0.0 < cert.rho0 < self.rho0_hat < self.rho_hat < cert.rho):
            raise ParameterError(
                "rates must satisfy 0 < rho0 < rho0_hat < rho_hat < rho, got "
                f"{cert.rho0}, {self.rho0_hat}, {self.rho_hat}, {cert.rho}"
            )


@dataclass(frozen=True)
class KappaProfile:
    """Envelope-normalised part norms over the checked horizon."""

    kappa: float
    stable: np.ndarray
    unstable: np.ndarray
    central: np.ndarray
    infeasible: tuple[str, ...]

    @property
    def feasible(self) -> bool:
        return not self.infeasible


def _tail_slope(profile: np.ndarray) -> float:
    """Least-squares slope of log(profile) over the last quarter of the indices."""
    n = len(profile)
    if n < 8:
        return 0.0
    tail = profile[-max(4, n // 4):]
    if np.any(tail <= 0):
        return 0.0
    x = np.arange(len(tail), dtype=float)
    return float(np.polyfit(x, np.log(tail), 1)[0])


def kappa_profile(
    M, split: Splitting, rho0: float, rho: float, N: int, slope_tol: float = SLOPE_TOL
) -> KappaProfile:
    """Normalised norms ``|A_s^n Pi_s| e^{rho n}``, ``|A_u^{-n} Pi_u| e^{rho n}``
    and ``|A_c^n Pi_c| e^{-rho0 |n|}`` for ``|n| <= N``.

    A family is flagged infeasible when its normalised profile still grows at
    the end of the window (slope above ``slope_tol``) and the spectral radius
    of the part confirms that the requested rate is not beaten asymptotically.
    """
    if not rho > rho0 > 0:
        raise ParameterError(f"need 0 < rho0 < rho, got rho0={rho0}, rho={rho}")
    if N < 0:
        raise ParameterError("horizon must be non-negative")
    parts = PartOperators.build(M, split)
    n = np.arange(N + 1)
    stable = stack_norms(parts.table("s", N)) * np.exp(rho * n)
    unstable = stack_norms(parts.table("u", N)) * np.exp(rho * n)
    cen = stack_norms(parts.central_table(N))
    central = cen * np.exp(-rho0 * np.abs(np.arange(-N, N + 1)))

    infeasible = []
    r = parts.radii
    checks = (
        ("stable", stable, r["s"] * math.exp(rho)),
        ("unstable", unstable, r["u_inv"] * math.exp(rho)),
        ("central_forward", central[N:], r["c"] * math.exp(-rho0)),
        ("central_backward", central[N::-1], r["c_inv"] * math.exp(-rho0)),
    )
    for name, prof, growth in checks:
        if growth >= 1.0 - 1e-9 and _tail_slope(prof) > slope_tol:
            infeasible.append(name)
    kappa = max(1.0, *(float(np.max(a)) for a in (stable, unstable, central)))
    return KappaProfile(kappa, stable, unstable, central, tuple(infeasible))


def measure_kappa(M, split: Splitting, rho0: float, rho: float, N: int) -> float:
    """Smallest kappa >= 1 for which the three envelopes hold on ``|n| <= N``.

    Emits a ``RuntimeWarning`` when the rates are not attained by the parts.
    """
    prof = kappa_profile(M, split, rho0, rho, N)
    if prof.infeasible:
        warnings.warn(
            f"rate-infeasible envelopes: {', '.join(prof.infeasible)}", RuntimeWarning, stacklevel=2
        )
    return prof.kappa


def certify(M, alpha: float, rho0: float, rho: float, N: int) -> TrichotomyCertificate:
    A = as_matrix(M)
    split = eigensplit(A, alpha)
    prof = kappa_profile(A, split, rho0, rho, N)
    if prof.infeasible:
        raise RateInfeasibleError(
            f"rates rho0={rho0}, rho={rho} are not attained: {', '.join(prof.infeasible)}"
        )
    return TrichotomyCertificate(A, split, prof.kappa, float(rho0), float(rho), int(N))


@dataclass(frozen=True)
class ContinuityReport:
    delta: float
    guaranteed: bool
    invertible: bool
    inverse_norm: float
    bound: float
    reverse_invertible: bool
    reverse_inverse_norm: float
    residual: float

    @property
    def bound_holds(self) -> bool:
        return self.invertible and self.inverse_norm <= self.bound

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "guaranteed": self.guaranteed,
            "invertible": self.invertible,
            "inverse_norm": self.inverse_norm,
            "bound": self.bound,
            "bound_holds": self.bound_holds,
            "reverse_invertible": self.reverse_invertible,
            "reverse_inverse_norm": self.reverse_inverse_norm,
            "residual": self.residual,
        }


def _restricted_inverse(P, V_from, V_to, threshold) -> tuple[bool, float, float]:
    """Invert ``P`` as a map range(V_from) -> range(V_to) by least squares."""
    if V_from.shape[1] != V_to.shape[1]:
        return False, math.inf, math.inf
    k = V_from.shape[1]
    if k == 0:
        return True, 1.0, 0.0
    G = V_to.conj().T @ P @ V_from
    X, *_ = np.linalg.lstsq(G, np.eye(k), rcond=None)
    residual = op_norm(G @ X - np.eye(k))
    # the restricted map is also required to land in range(V_to)
    leak = norm2(P @ V_from - V_to @ G)
    ok = residual <= threshold and leak <= threshold * max(1.0, op_norm(P))
    return ok, (op_norm(X) if ok else math.inf), residual


def projector_continuity(P, Phat, threshold: float = 1e-10) -> ContinuityReport:
    """Invertibility of ``P`` from range(Phat) onto range(P), and the reverse.

    ``delta = |P - Phat|``; when ``delta < sqrt(2) - 1`` the inverse norm is
    bounded by ``1 / (1 - delta)``.  For larger ``delta`` the check is still
    attempted and ``guaranteed`` is false.
    """
    P = as_matrix(P, "P").astype(complex)
    Q = as_matrix(Phat, "Phat").astype(complex)
    if P.shape != Q.shape:
        raise ParameterError("projectors have different shapes")
    for name, R in (("P", P), ("Phat", Q)):
        s = max(1.0, op_norm(R))
        if op_norm(R @ R - R) > 1e-8 * s * s:
            raise ValidationError(f"{name} is not idempotent")
    delta = op_norm(P - Q)
    V, Vh = range_basis(P), range_basis(Q)
    ok, inv_norm, res = _restricted_inverse(P, Vh, V, threshold)
    rok, rinv, rres = _restricted_inverse(Q, V, Vh, threshold)
    bound = 1.0 / (1.0 - delta) if delta < 1.0 else math.inf
    return ContinuityReport(
        delta=delta,
        guaranteed=delta < SQRT2_M1,
        invertible=ok,
        inverse_norm=inv_norm,
        bound=bound,
        reverse_invertible=rok,
        reverse_inverse_norm=rinv,
        residual=max(res, rres),
    )
