"""Dense matrix helpers, the eigenvalue splitting oracle and instance generators.

All computations run in complex arithmetic with the spectral norm.  When every
input is real, results whose imaginary part is negligible are returned as real
arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    AmbiguousSplittingError,
    DimensionError,
    NotInvariantError,
    NumericalFailure,
    ParameterError,
    ValidationError,
)

GAP_TOL = 1e-8
PROJECTOR_NORM_LIMIT = 1e8
IMAG_TOL = 1e-10


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Validate a square finite matrix and return it as an ndarray."""
    A = np.asarray(M)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    if A.dtype.kind not in "biufc":
        raise ValidationError(f"{name} must be numeric")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} has non-finite entries")
    return A


def real_if_close(M: np.ndarray, tol: float = IMAG_TOL) -> np.ndarray:
    """Drop a negligible imaginary part, otherwise return ``M`` unchanged."""
    M = np.asarray(M)
    if np.iscomplexobj(M):
        scale = max(1.0, float(np.max(np.abs(M.real), initial=0.0)))
        if np.max(np.abs(M.imag), initial=0.0) <= tol * scale:
            return np.ascontiguousarray(M.real)
    return M


def op_norm(M) -> float:
    """Spectral norm (largest singular value)."""
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def norm2(M) -> float:
    """Spectral norm of a possibly rectangular matrix."""
    M = np.asarray(M)
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def stack_norms(stack: np.ndarray) -> np.ndarray:
    """Spectral norms of a stack of matrices with shape ``(k, d, d)``."""
    stack = np.asarray(stack)
    if stack.shape[0] == 0:
        return np.zeros(0)
    if stack.shape[-1] == 0:
        return np.zeros(stack.shape[0])
    return np.linalg.norm(stack, ord=2, axis=(-2, -1))


def spectral_radius(M) -> float:
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    try:
        lam = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue solver did not converge: {exc}") from exc
    return float(np.max(np.abs(lam)))


@dataclass(frozen=True)
class Splitting:
    """Stable, central and unstable projectors with the splitting threshold."""

    pi_s: np.ndarray
    pi_c: np.ndarray
    pi_u: np.ndarray
    alpha: float

    @property
    def dim(self) -> int:
        return self.pi_s.shape[0]

    def projectors(self) -> dict[str, np.ndarray]:
        return {"s": self.pi_s, "c": self.pi_c, "u": self.pi_u}

    def ranks(self) -> dict[str, int]:
        return {k: int(round(np.trace(P).real)) for k, P in self.projectors().items()}

    def residuals(self) -> dict[str, float]:
        """Idempotency, pairwise orthogonality and identity-sum residuals."""
        P = self.projectors()
        eye = np.eye(self.dim)
        out = {f"idempotent_{k}": op_norm(Q @ Q - Q) for k, Q in P.items()}
        for a in "scu":
            for b in "scu":
                if a != b:
                    out[f"orthogonal_{a}{b}"] = op_norm(P[a] @ P[b])
        out["identity_sum"] = op_norm(P["s"] + P["c"] + P["u"] - eye)
        return out

    def distance(self, other: "Splitting") -> dict[str, float]:
        return {
            k: op_norm(P - Q)
            for (k, P), Q in zip(self.projectors().items(), other.projectors().values())
        }


def _group_projector(M: np.ndarray, select) -> np.ndarray:
    """Spectral projector onto the eigenvalues picked by ``select``.

    A sorted complex Schur form moves the selected eigenvalues to the leading
    block; a Sylvester solve decouples the two diagonal blocks.
    """
    n = M.shape[0]
    T, U, k = sla.schur(M, output="complex", sort=select)
    if k == 0:
        return np.zeros((n, n), dtype=complex)
    if k == n:
        return np.eye(n, dtype=complex)
    T11, T12, T22 = T[:k, :k], T[:k, k:], T[k:, k:]
    X = sla.solve_sylvester(T11, -T22, -T12)
    W = np.zeros((n, n), dtype=complex)
    W[:k, :k] = np.eye(k)
    W[:k, k:] = -X
    return U @ W @ U.conj().T


def eigensplit(M, alpha: float, gap_tol: float = GAP_TOL) -> Splitting:
    """Group eigenvalues into |z| <= alpha, alpha < |z| < 1/alpha, |z| >= 1/alpha.

    Raises :class:`AmbiguousSplittingError` when a modulus lies within
    ``gap_tol * alpha`` of ``alpha`` (or ``gap_tol / alpha`` of ``1/alpha``) and
    :class:`NumericalFailure` when a projector norm exceeds 1e8, which happens
    for nearly defective clusters straddling a group boundary.
    """
    A = as_matrix(M)
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    n = A.shape[0]
    Ac = A.astype(complex)
    lo, hi = alpha, 1.0 / alpha
    if n:
        try:
            lam = sla.eigvals(Ac)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"eigenvalue solver did not converge: {exc}") from exc
        mod = np.abs(lam)
        close = (np.abs(mod - lo) <= gap_tol * lo) | (np.abs(mod - hi) <= gap_tol * hi)
        if np.any(close):
            raise AmbiguousSplittingError(
                f"eigenvalue moduli {mod[close]} lie within gap_tol of the "
                f"thresholds {lo} / {hi}"
            )
    pi_s = _group_projector(Ac, lambda z: abs(z) <= lo)
    pi_u = _group_projector(Ac, lambda z: abs(z) >= hi)
    pi_c = np.eye(n, dtype=complex) - pi_s - pi_u
    for name, P in (("stable", pi_s), ("central", pi_c), ("unstable", pi_u)):
        norm = op_norm(P)
        if not np.isfinite(norm) or norm > PROJECTOR_NORM_LIMIT:
            raise NumericalFailure(
                f"{name} projector norm {norm:.3e} exceeds {PROJECTOR_NORM_LIMIT:.0e}"
            )
    if not np.iscomplexobj(A):
        projs = [real_if_close(P) for P in (pi_s, pi_c, pi_u)]
        for P in projs:
            if np.iscomplexobj(P):
                raise NumericalFailure("projector of a real matrix is not real")
        pi_s, pi_c, pi_u = projs
    return Splitting(pi_s, pi_c, pi_u, float(alpha))


def range_basis(P) -> np.ndarray:
    """Orthonormal basis of range(P) for a projector P.

    Nonzero singular values of a projector are at least one, so the rank
    cut at 0.5 is robust.
    """
    P = np.asarray(P)
    if P.shape[0] == 0:
        return np.zeros((0, 0), dtype=complex)
    U, sig, _ = np.linalg.svd(P)
    r = int(np.sum(sig > 0.5))
    return U[:, :r].astype(complex)


def part_in(M, P, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Restriction of ``M`` to the invariant subspace range(P).

    Returns ``(basis, restricted)`` with orthonormal ``basis`` so that
    ``M @ basis == basis @ restricted`` up to ``tol`` relative to ``|M|``.
    """
    A = as_matrix(M)
    P = as_matrix(P, "projector")
    if P.shape != A.shape:
        raise DimensionError("matrix and projector shapes differ")
    scale = max(1.0, op_norm(P))
    if op_norm(P @ P - P) > tol * scale * scale:
        raise ValidationError("argument is not a projector")
    V = range_basis(P)
    S = V.conj().T @ A @ V
    res = norm2(A @ V - V @ S)
    if res > tol * max(1.0, op_norm(A)):
        raise NotInvariantError(f"range is not invariant: residual {res:.3e}")
    return V, S


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _interval(spec) -> tuple[float, float]:
    if np.isscalar(spec):
        lo = hi = float(spec)
    else:
        vals = [float(v) for v in spec]
        if len(vals) == 1:
            vals = vals * 2
        if len(vals) != 2:
            raise ParameterError(f"modulus interval must have one or two entries: {spec}")
        lo, hi = vals
    if not (0.0 < lo <= hi) or not math.isfinite(hi):
        raise ParameterError(f"invalid modulus interval {spec}")
    return lo, hi


def _block(k: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """Real normal block of size k whose eigenvalue moduli lie in [lo, hi]."""
    blocks = []
    for _ in range(k // 2):
        r = rng.uniform(lo, hi)
        theta = rng.uniform(0.1, math.pi - 0.1)
        blocks.append(r * rotation(theta))
    if k % 2:
        blocks.append(np.array([[rng.uniform(lo, hi)]]))
    return sla.block_diag(*blocks) if blocks else np.zeros((0, 0))


def similarity(d: int, cond: float, rng: np.random.Generator) -> np.ndarray:
    """Random real matrix with 2-norm condition number ``cond``."""
    if cond < 1.0:
        raise ParameterError("condition number must be at least 1")
    if d == 0 or cond == 1.0:
        return np.eye(d)
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sig = np.logspace(0.0, math.log10(cond), d)
    return U @ np.diag(sig) @ V.T


def random_trichotomic(
    dim_s: int,
    dim_c: int,
    dim_u: int,
    moduli: Sequence,
    seed: int,
    cond: float = 1.0,
) -> tuple[np.ndarray, Splitting]:
    """Real matrix Q diag(S, C, U) Q^{-1} with prescribed eigenvalue moduli.

    ``moduli`` gives three intervals (or single values) for the stable,
    central and unstable blocks.  Complex-conjugate pairs are realised as
    scaled rotations, a leftover dimension as a positive scalar.  ``cond``
    is the condition number of the similarity ``Q``; ``cond=1`` gives Q = I.
    Only intervals of nonempty groups constrain the threshold.
    """
    dims = (int(dim_s), int(dim_c), int(dim_u))
    if min(dims) < 0 or sum(dims) < 1:
        raise ParameterError(f"invalid dimensions {dims}")
    if len(moduli) != 3:
        raise ParameterError("moduli must list three intervals")
    (s_lo, s_hi), (c_lo, c_hi), (u_lo, u_hi) = (_interval(m) for m in moduli)
    if dims[0] and s_hi >= 1.0 or dims[2] and u_lo <= 1.0:
        raise ParameterError("stable moduli must be < 1 and unstable moduli > 1")
    if not (s_hi < c_lo and c_hi < u_lo):
        raise ParameterError(f"modulus intervals overlap or are out of order: {moduli}")
    lower = max([s_hi] * bool(dims[0]) + [1.0 / u_lo] * bool(dims[2]), default=None)
    upper = min([c_lo, 1.0 / c_hi] * bool(dims[1]) + [1.0], default=1.0)
    if lower is None:
        lower = 0.5 * upper
    if not lower < upper:
        raise ParameterError(f"no threshold separates the intervals {moduli}")
    alpha = math.sqrt(lower * upper)

    rng = np.random.default_rng(seed)
    D = sla.block_diag(
        _block(dims[0], s_lo, s_hi, rng),
        _block(dims[1], c_lo, c_hi, rng),
        _block(dims[2], u_lo, u_hi, rng),
    )
    d = sum(dims)
    Q = similarity(d, cond, rng)
    Qinv = np.linalg.inv(Q)
    M = Q @ D @ Qinv
    bounds = np.cumsum((0,) + dims)
    projs = []
    for g in range(3):
        ind = np.zeros(d)
        ind[bounds[g]:bounds[g + 1]] = 1.0
        projs.append(Q @ np.diag(ind) @ Qinv)
    return M, Splitting(projs[0], projs[1], projs[2], alpha)


def random_perturbation(d: int, norm: float, seed: int) -> np.ndarray:
    """Real Gaussian matrix rescaled to the given spectral norm."""
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((d, d))
    n = op_norm(G)
    return G * (norm / n) if n > 0 else G


# Matrix text format: "n n" header, then n rows of "re im" pairs.

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_matrix(M) -> str:
    A = as_matrix(M)
    n = A.shape[0]
    lines = [f"{n} {n}"]
    Ac = A.astype(complex)
    for row in Ac:
        lines.append(" ".join(f"{_fmt(z.real)} {_fmt(z.imag)}" for z in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    """Inverse of :func:`format_matrix`; real dtype when all imaginary parts vanish."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty matrix text")
    head = lines[0].split()
    if len(head) != 2:
        raise ValidationError("matrix header must be 'n n'")
    try:
        r, c = int(head[0]), int(head[1])
    except ValueError as exc:
        raise ValidationError(f"bad matrix header {lines[0]!r}") from exc
    if r != c or r < 0:
        raise DimensionError(f"matrix must be square, header says {r}x{c}")
    if len(lines) - 1 != r:
        raise ValidationError(f"expected {r} rows, found {len(lines) - 1}")
    out = np.zeros((r, r), dtype=complex)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != 2 * r:
            raise ValidationError(f"row {i} has {len(parts)} numbers, expected {2 * r}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ValidationError(f"row {i} is not numeric") from exc
        out[i] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    if not np.all(np.isfinite(out)):
        raise ValidationError("matrix has non-finite entries")
    if np.all(out.imag == 0):
        return out.real.copy()
    return out


def read_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return parse_matrix(fh.read())


def write_matrix(path, M) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix(M))
