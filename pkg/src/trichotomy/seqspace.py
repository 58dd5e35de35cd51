"""Weighted operator sequences and the affine fixed-point map on evolution triples.

One-sided sequences live on ``n = 0..N`` with norm ``sup e^{eta n} |u_n|``
(positive ``eta`` forces decay, negative ``eta`` allows growth).  Two-sided
sequences live on ``n = -N..N`` with norm ``sup e^{-eta |n|} |v_n|``.
Entries outside a stored window are treated as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .certify import PartOperators, RateParams, SQRT2_M1, TrichotomyCertificate
from .errors import DimensionError, ParameterError, SummabilityError
from .linops import as_matrix, op_norm, stack_norms

BUDGET_MARGIN = 1e-3


@dataclass(frozen=True)
class OpSeqOneSided:
    terms: np.ndarray
    weight: float
    tail: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.terms)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[0] < 1:
            raise DimensionError(f"one-sided terms must have shape (N+1, d, d), got {t.shape}")

    @property
    def horizon(self) -> int:
        return self.terms.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.terms.shape[1]

    def indices(self) -> np.ndarray:
        return np.arange(self.horizon + 1)

    def profile(self) -> np.ndarray:
        """Weighted norms ``e^{eta n} |u_n|``."""
        return stack_norms(self.terms) * np.exp(self.weight * self.indices())

    def __getitem__(self, n: int) -> np.ndarray:
        return self.terms[n]


@dataclass(frozen=True)
class OpSeqTwoSided:
    terms: np.ndarray
    weight: float
    tail: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.terms)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[0] % 2 != 1:
            raise DimensionError(f"two-sided terms must have shape (2N+1, d, d), got {t.shape}")

    @property
    def horizon(self) -> int:
        return (self.terms.shape[0] - 1) // 2

    @property
    def dim(self) -> int:
        return self.terms.shape[1]

    def indices(self) -> np.ndarray:
        N = self.horizon
        return np.arange(-N, N + 1)

    def profile(self) -> np.ndarray:
        return stack_norms(self.terms) * np.exp(-self.weight * np.abs(self.indices()))

    def __getitem__(self, n: int) -> np.ndarray:
        return self.terms[n + self.horizon]


@dataclass(frozen=True)
class EvolutionTriple:
    """Stable, unstable and central families ``(E^s, E^u, E^c)``."""

    es: OpSeqOneSided
    eu: OpSeqOneSided
    ec: OpSeqTwoSided

    @property
    def horizon(self) -> int:
        return self.es.horizon

    @property
    def dim(self) -> int:
        return self.es.dim

    @classmethod
    def from_arrays(cls, es, eu, ec, rho_hat: float, rho0_hat: float) -> "EvolutionTriple":
        return cls(
            OpSeqOneSided(np.asarray(es), rho_hat),
            OpSeqOneSided(np.asarray(eu), rho_hat),
            OpSeqTwoSided(np.asarray(ec), rho0_hat),
        )

    def arrays(self):
        return self.es.terms, self.eu.terms, self.ec.terms

    def window(self, N: int) -> "EvolutionTriple":
        """Restrict to indices ``0..N`` (central ``-N..N``)."""
        L = self.horizon
        if not 0 <= N <= L:
            raise ParameterError(f"window {N} outside horizon {L}")
        return EvolutionTriple(
            OpSeqOneSided(self.es.terms[: N + 1], self.es.weight),
            OpSeqOneSided(self.eu.terms[: N + 1], self.eu.weight),
            OpSeqTwoSided(self.ec.terms[L - N : L + N + 1], self.ec.weight),
        )

    def combine(self, other: "EvolutionTriple", a: complex = 1.0, b: complex = 1.0) -> "EvolutionTriple":
        """Linear combination ``a * self + b * other``."""
        return EvolutionTriple.from_arrays(
            a * self.es.terms + b * other.es.terms,
            a * self.eu.terms + b * other.eu.terms,
            a * self.ec.terms + b * other.ec.terms,
            self.es.weight,
            self.ec.weight,
        )


Sequence_ = Union[OpSeqOneSided, OpSeqTwoSided]


def weighted_norm(seq) -> float:
    if isinstance(seq, EvolutionTriple):
        return max(weighted_norm(seq.es), weighted_norm(seq.eu), weighted_norm(seq.ec))
    return float(np.max(seq.profile()))


def _check_dims(C, seq) -> np.ndarray:
    C = as_matrix(C)
    if C.shape[0] != seq.dim:
        raise DimensionError(f"operator is {C.shape[0]}x{C.shape[0]}, sequence has d={seq.dim}")
    return C.astype(complex)


def _powers(C: np.ndarray, n: int) -> np.ndarray:
    d = C.shape[0]
    out = np.empty((n + 1, d, d), dtype=complex)
    out[0] = np.eye(d)
    for k in range(1, n + 1):
        out[k] = C @ out[k - 1]
    return out


def conv_phi(C, u: OpSeqOneSided) -> OpSeqOneSided:
    """``result[n] = sum_{m=0}^{n-1} C^m u[n-1-m]``; ``result[0] = 0``."""
    C = _check_dims(C, u)
    N = u.horizon
    Cp = _powers(C, N)
    x = np.asarray(u.terms, dtype=complex)
    out = np.zeros_like(x)
    for m in range(N):
        out[m + 1 :] += Cp[m] @ x[: N - m]
    return OpSeqOneSided(out, u.weight)


def tail_theta(C, u: Sequence_, decay_rate: float, tail_tol: float = 1e-13, kappa: float = 1.0) -> Sequence_:
    """``result[n] = sum_{m>=0} C^m u[n+m]`` truncated at the last stored index.

    ``decay_rate`` is ``q`` in the envelope ``|C^m| <= kappa q^m``.  The
    recorded per-index tail bound, in the weighted norm of ``u``, is
    ``kappa (q g)^(K+1) / (1 - q g) |u|`` where ``K`` is the last in-window
    offset and ``g`` is the per-step growth allowed by the weight.
    Entries where that bound exceeds ``tail_tol (1 + |u|)`` are the ones a
    caller must keep away from (see the solver's guard band).
    """
    C = _check_dims(C, u)
    if isinstance(u, OpSeqOneSided):
        g = math.exp(-u.weight)
    else:
        g = math.exp(u.weight)
    qg = decay_rate * g
    if not qg < 1.0:
        raise SummabilityError(f"q*g = {qg:.6g} >= 1: series not summable")
    x = np.asarray(u.terms, dtype=complex)
    n_terms = x.shape[0]
    Cp = _powers(C, n_terms - 1)
    out = np.zeros_like(x)
    for m in range(n_terms):
        out[: n_terms - m] += Cp[m] @ x[m:]
    unorm = weighted_norm(u)
    K = (n_terms - 1) - np.arange(n_terms)
    tail = kappa * qg ** (K + 1) / (1.0 - qg) * unorm
    cls = type(u)
    return cls(out, u.weight, tail)


def shift_and_restrict(kind: str, seq: Sequence_) -> Sequence_:
    """``S_minus`` (left shift), ``chi_plus`` (n >= 0 half) or ``chi_minus`` (index negation).

    ``S_minus`` shortens the window by one.  The restriction maps turn a
    two-sided sequence with growth weight ``eta`` into a one-sided one with
    weight ``-eta``, so the weighted norms agree.
    """
    x = seq.terms
    if kind == "S_minus":
        if isinstance(seq, OpSeqOneSided):
            if seq.horizon < 1:
                raise ParameterError("cannot shift a single-term sequence")
            return OpSeqOneSided(x[1:], seq.weight)
        N = seq.horizon
        if N < 1:
            raise ParameterError("cannot shift a single-term sequence")
        return OpSeqTwoSided(x[2:], seq.weight)
    if kind in ("chi_plus", "chi_minus"):
        if not isinstance(seq, OpSeqTwoSided):
            raise ParameterError(f"{kind} acts on two-sided sequences")
        N = seq.horizon
        part = x[N:] if kind == "chi_plus" else x[N::-1]
        return OpSeqOneSided(part, -seq.weight)
    raise ParameterError(f"unknown shift kind {kind!r}")


# Operators built from the parts of a certified matrix.

def central_convolution(parts: PartOperators, v: OpSeqTwoSided) -> OpSeqTwoSided:
    """Two-sided convolution: forward sum for ``n > 0``, backward for ``n < 0``."""
    N = v.horizon
    x = np.asarray(v.terms, dtype=complex)
    Pc = parts.central_table(N + 1)
    K = N + 1
    out = np.zeros_like(x)
    for m in range(N):
        out[N + m + 1 :] += Pc[K : K + N - m] @ x[N + m]
    for i in range(-N, 0):
        out[: N + i + 1] -= Pc[K - N - i - 1 : K] @ x[N + i]
    return OpSeqTwoSided(out, v.weight)


def split_tail(parts: PartOperators, v: OpSeqTwoSided) -> OpSeqTwoSided:
    """``-sum A_u^{-m-1} Pi_u v[n+m] + sum A_s^m Pi_s v[n-1-m]`` on the window."""
    N = v.horizon
    x = np.asarray(v.terms, dtype=complex)
    Pu = parts.table("u", 2 * N + 2)
    Ps = parts.table("s", 2 * N + 2)
    out = np.zeros_like(x)
    for i in range(-N, N + 1):
        out[: N + i + 1] -= Pu[i + N + 1 : 0 : -1] @ x[N + i]
        out[N + i + 1 :] += Ps[0 : N - i] @ x[N + i]
    return OpSeqTwoSided(out, v.weight)


def part_series_at_zero(table: np.ndarray, v: OpSeqOneSided) -> np.ndarray:
    """``sum_m table[m] v[m]`` over the stored window (a single matrix)."""
    x = np.asarray(v.terms, dtype=complex)
    return np.einsum("nij,njk->ik", table[: x.shape[0]], x)


@dataclass(frozen=True)
class LemmaBounds:
    """Norm bounds of the building blocks of the fixed-point map."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]


def lemma_bounds(cert: TrichotomyCertificate, rates: RateParams) -> LemmaBounds:
    """Operator-norm bounds for the convolution, tail and shift operators.

    ``central_conv`` is the bound usually quoted for the two-sided central
    convolution; ``central_conv_full`` carries the extra ``e^{rho0}`` that the
    backward half actually needs and is what :func:`bound_C` uses.
    """
    rates.check_against(cert)
    k, r0, r = cert.kappa, cert.rho0, cert.rho
    h0, h = rates.rho0_hat, rates.rho_hat
    e = math.exp
    cc = k / (1.0 - e(r0 - h0))
    return LemmaBounds(
        {
            "stable_conv": k * e(h) / (1.0 - e(h - r)),
            "unstable_conv": k * e(h) / (1.0 - e(h - r)),
            "tail_cu": k / (1.0 - e(r0 - h)) + k / (1.0 - e(-(r + h))),
            "tail_sc": k / (1.0 - e(-(r + h))) + k / (1.0 - e(r0 - h)),
            "central_conv": cc,
            "central_conv_full": cc * e(r0),
            "split_tail": (k * e(h) + k * e(-h)) / (1.0 - e(h0 - h)),
            "stable_series_growth": k / (1.0 - e(h0 - r)),
            "unstable_series_growth": k / (1.0 - e(h0 - r)),
            "stable_series_decay": k / (1.0 - e(-h - r)),
            "unstable_series_decay": k / (1.0 - e(-h - r)),
            "shift_one_sided": 1.0,
            "shift_two_sided": e(h0),
            "restrict": 1.0,
        }
    )


def bound_C(cert: TrichotomyCertificate, rates: RateParams) -> float:
    """Row-sum assembly of block bounds; ``|J Z| <= C |B| |Z|``.

    Blocks that vanish identically because they pass through a product of
    complementary projectors are omitted.
    """
    b = lemma_bounds(cert, rates)
    k, r0, r = cert.kappa, cert.rho0, cert.rho
    e = math.exp
    inv_u = k * e(-r)
    inv_cu = k * e(-r) + k * e(r0)
    row_s = (
        k * b["stable_series_decay"]
        + k * b["stable_series_growth"] * b["shift_two_sided"]
        + b["stable_conv"]
        + b["tail_cu"] * inv_cu
    )
    row_u = (
        k * b["unstable_series_decay"] * inv_u
        + k * b["unstable_series_growth"] * inv_u
        + b["unstable_conv"] * inv_u
        + b["tail_sc"]
    )
    row_c = (
        k * b["tail_sc"]
        + k * b["tail_cu"] * inv_cu
        + b["central_conv_full"]
        + b["split_tail"]
    )
    return max(row_s, row_u, row_c)


@dataclass(frozen=True)
class PerturbationBudget:
    contraction_C: float
    delta0: float
    delta_max: float
    delta: float

    @property
    def admissible(self) -> bool:
        return self.delta < self.delta_max

    def distance_bound(self, kappa: float) -> float:
        """``kappa delta / (delta0 - delta)``."""
        return kappa * self.delta / (self.delta0 - self.delta)

    def to_dict(self) -> dict:
        return {
            "contraction_C": self.contraction_C,
            "delta0": self.delta0,
            "delta_max": self.delta_max,
            "delta": self.delta,
            "admissible": self.admissible,
        }


def budget_from_constants(C: float, kappa: float, delta: float, margin: float = BUDGET_MARGIN) -> PerturbationBudget:
    caps = [1.0 / C, SQRT2_M1]
    if C > 1.0:
        ic = 1.0 / C
        caps.append((1.0 - ic) / (6.0 * kappa**3 + 1.0 - ic))
    delta0 = (1.0 - margin) * min(caps)
    delta_max = delta0**2 / (kappa + delta0)
    return PerturbationBudget(C, delta0, delta_max, float(delta))


def compute_budget(cert: TrichotomyCertificate, rates: RateParams, B) -> PerturbationBudget:
    B = as_matrix(B, "perturbation")
    if B.shape != cert.matrix.shape:
        raise DimensionError("perturbation and matrix shapes differ")
    return budget_from_constants(bound_C(cert, rates), cert.kappa, op_norm(B))


class FixedPointMap:
    """The affine map ``Z -> Z0 + J(Z)`` on a window of length ``L``.

    Every sum of the fixed-point system is evaluated as a loop over the
    input index, each step one batched product of a slice of a precomputed
    power table with a single ``d x d`` matrix.  Inputs outside the window
    count as zero.
    """

    def __init__(self, cert: TrichotomyCertificate, B, rates: RateParams, L: int):
        rates.check_against(cert)
        B = as_matrix(B, "perturbation")
        if B.shape != cert.matrix.shape:
            raise DimensionError("perturbation and matrix shapes differ")
        if L < 1:
            raise ParameterError("window must contain at least two indices")
        self.cert, self.rates, self.L = cert, rates, int(L)
        self.B = B.astype(complex)
        self.delta = op_norm(B)
        parts = cert.parts
        K = 2 * L + 2
        self.K = K
        self.Ps = parts.table("s", K)
        self.Pu = parts.table("u", K)
        self.Pc = parts.central_table(K)
        # Q(k) = A_u^{-k} Pi_u + A_c^{-k} Pi_c and R(k) = A_s^k Pi_s + A_c^k Pi_c
        self.Q = self.Pu + self.Pc[K::-1]
        self.R = self.Ps + self.Pc[K:]
        # tables flattened to (rows * d, d) so each product is one 2-D GEMM
        d = self.B.shape[0]

        def flat(T):
            return np.ascontiguousarray(T).reshape(-1, d)

        self.Ps2, self.Pu2, self.Pc2, self.R2 = (flat(T) for T in (self.Ps, self.Pu, self.Pc, self.R))
        self.Qr2, self.Pur2, self.Rr2 = (flat(T[::-1]) for T in (self.Q, self.Pu, self.R))
        self.tail_rate = math.exp(-min(rates.rho_hat - cert.rho0, cert.rho - rates.rho0_hat))

    def z0(self):
        L, K = self.L, self.K
        return (
            self.Ps[: L + 1].copy(),
            self.Pu[: L + 1].copy(),
            self.Pc[K - L : K + L + 1].copy(),
        )

    def z0_triple(self) -> EvolutionTriple:
        return EvolutionTriple.from_arrays(*self.z0(), self.rates.rho_hat, self.rates.rho0_hat)

    def apply_arrays(self, es, eu, ec):
        """Return ``J(Z)`` for raw arrays of shapes (L+1,d,d), (L+1,d,d), (2L+1,d,d)."""
        L, K, d = self.L, self.K, self.B.shape[0]
        B = self.B
        bes, beu, bec = B @ es, B @ eu, B @ ec
        Ps, Pu, Pc, R = self.Ps2, self.Pu2, self.Pc2, self.R2
        Qr, Pur, Rr = self.Qr2, self.Pur2, self.Rr2
        out_s = np.zeros(((L + 1) * d, d), dtype=complex)
        out_u = np.zeros_like(out_s)
        out_c = np.zeros(((2 * L + 1) * d, d), dtype=complex)

        def rows(a, b):
            return slice(a * d, b * d)

        # stable row, n = 0..L
        for j in range(1, L + 1):
            out_s -= Ps[rows(j - 1, j + L)] @ (beu[j] + bec[L - j])
        for m in range(L):
            out_s[rows(m + 1, L + 1)] += Ps[rows(0, L - m)] @ bes[m]
        for j in range(L + 1):
            # Q[j+1], Q[j], ..., Q[1]
            out_s[rows(0, j + 1)] -= Qr[rows(K - j - 1, K)] @ bes[j]

        # unstable row, n = 0..L
        for m in range(L + 1):
            out_u += Pu[rows(m + 1, m + L + 2)] @ (bes[m] + bec[L + m])
        for j in range(1, L + 1):
            out_u[rows(j, L + 1)] -= Pu[rows(1, L - j + 2)] @ beu[j]
            # R[j-1], ..., R[0]
            out_u[rows(0, j)] += Rr[rows(K - j + 1, K + 1)] @ beu[j]

        # central row, n = -L..L
        for j in range(1, L + 1):
            out_c -= Pc[rows(K + j - 1 - L, K + j + L)] @ beu[j]
        for m in range(L + 1):
            out_c += Pc[rows(K - m - 1 - L, K - m + L)] @ bes[m]
        for i in range(-L, L + 1):
            x = bec[L + i]
            # Q (or Pu) at i+L+1 down to 1
            if i < 0:
                out_c[rows(0, L + i + 1)] -= Qr[rows(K - i - L - 1, K)] @ x
                out_c[rows(L + i + 1, 2 * L + 1)] += Ps[rows(0, L - i)] @ x
            else:
                out_c[rows(0, L + i + 1)] -= Pur[rows(K - i - L - 1, K)] @ x
                if i < L:
                    out_c[rows(L + i + 1, 2 * L + 1)] += R[rows(0, L - i)] @ x
        return (
            out_s.reshape(L + 1, d, d),
            out_u.reshape(L + 1, d, d),
            out_c.reshape(2 * L + 1, d, d),
        )

    def norms(self, es, eu, ec) -> tuple[float, float, float]:
        L = self.L
        n = np.arange(L + 1)
        w1 = np.exp(self.rates.rho_hat * n)
        w2 = np.exp(-self.rates.rho0_hat * np.abs(np.arange(-L, L + 1)))
        return (
            float(np.max(stack_norms(es) * w1)),
            float(np.max(stack_norms(eu) * w1)),
            float(np.max(stack_norms(ec) * w2)),
        )

    def tail_profile(self, znorm: float) -> tuple[np.ndarray, np.ndarray]:
        """Weighted truncation bounds per index for one application of ``J``.

        Each truncated sum is geometric with ratio at most ``q``; the constant
        ``4 kappa e^{rho}`` dominates the prefactors of all of them.
        """
        L, q = self.L, self.tail_rate
        c = 4.0 * self.cert.kappa * math.exp(self.cert.rho) * self.delta * znorm / (1.0 - q)
        one = c * q ** (L - np.arange(L + 1))
        two = c * q ** (L - np.abs(np.arange(-L, L + 1)))
        return one, two

    def apply(self, Z: EvolutionTriple, tail_tol: float = 1e-13) -> EvolutionTriple:
        if Z.horizon != self.L or Z.dim != self.B.shape[0]:
            raise DimensionError("triple does not match the map's window or dimension")
        s, u, c = self.apply_arrays(*(np.asarray(a, dtype=complex) for a in Z.arrays()))
        one, two = self.tail_profile(max(self.norms(*Z.arrays())))
        h, h0 = self.rates.rho_hat, self.rates.rho0_hat
        return EvolutionTriple(
            OpSeqOneSided(s, h, one),
            OpSeqOneSided(u, h, one),
            OpSeqTwoSided(c, h0, two),
        )


def apply_J(
    cert: TrichotomyCertificate,
    B,
    rates: RateParams,
    Z: EvolutionTriple,
    tail_tol: float = 1e-13,
) -> EvolutionTriple:
    """Linear part ``J(Z)`` of the fixed-point system, with per-index truncation tails."""
    return FixedPointMap(cert, B, rates, Z.horizon).apply(Z, tail_tol)
