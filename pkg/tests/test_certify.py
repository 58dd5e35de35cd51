import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from trichotomy.certify import (
    RateParams,
    TrichotomyCertificate,
    certify,
    kappa_profile,
    measure_kappa,
    projector_continuity,
)
from trichotomy.errors import NotInvertibleError, ParameterError, RateInfeasibleError
from trichotomy.linops import Splitting, eigensplit, op_norm, random_trichotomic, rotation

MODULI = ([0.2, 0.4], [0.9, 1.1], [2.5, 4.0])
DIAG = np.diag([0.5, 1.0, 2.0])


def test_kappa_diagonal_is_one():
    split = eigensplit(DIAG, 0.6)
    assert measure_kappa(DIAG, split, 0.01, math.log(2), 50) == pytest.approx(1.0)


def test_kappa_defective_stable_block_matches_brute_force():
    As = np.array([[0.5, 10.0], [0.0, 0.5]])
    M = sla.block_diag(As, [[1.0]], [[2.0]])
    rho, rho0, N = math.log(2) - 0.05, 0.01, 100
    split = eigensplit(M, 0.6)
    kappa = measure_kappa(M, split, rho0, rho, N)
    brute = max(
        0.5**n * op_norm(np.array([[1.0, 20.0 * n], [0.0, 1.0]])) * math.exp(rho * n) for n in range(N + 1)
    )
    assert kappa == pytest.approx(brute, rel=1e-10)


def test_kappa_pure_unstable():
    M = np.array([[2.0]])
    split = eigensplit(M, 0.6)
    assert split.ranks() == {"s": 0, "c": 0, "u": 1}
    assert measure_kappa(M, split, 0.01, math.log(2), 30) == pytest.approx(1.0)


def test_infeasible_rates_flagged():
    split = eigensplit(DIAG, 0.6)
    with pytest.warns(RuntimeWarning, match="stable"):
        measure_kappa(DIAG, split, 0.01, 1.0, 60)
    with pytest.raises(RateInfeasibleError):
        certify(DIAG, 0.6, 0.01, 1.0, 60)


def test_singular_central_part():
    M = np.diag([0.0, 1.0])
    # zero eigenvalue forced into the central group by a hand-made splitting
    split = Splitting(np.zeros((2, 2)), np.eye(2), np.zeros((2, 2)), 0.6)
    with pytest.raises(NotInvertibleError):
        measure_kappa(M, split, 0.01, 0.5, 10)


def test_certify_examples():
    c = certify(DIAG, 0.6, 0.01, 0.69, 64)
    assert c.kappa == pytest.approx(1.0)
    M, s = random_trichotomic(2, 2, 2, MODULI, 0, cond=5.0)
    c = certify(M, s.alpha, 0.15, 0.9, 64)
    assert 1.0 <= c.kappa < math.inf
    c = certify(rotation(0.4), 0.5, 0.01, 0.5, 64)
    assert c.kappa == pytest.approx(1.0)
    np.testing.assert_allclose(c.splitting.pi_c, np.eye(2), atol=1e-14)


def test_certify_rejects_bad_rates():
    with pytest.raises(ParameterError):
        certify(DIAG, 0.6, 0.5, 0.4, 10)


def test_kappa_monotone_in_horizon_and_rho0():
    M, s = random_trichotomic(2, 2, 2, MODULI, 3, cond=20.0)
    split = eigensplit(M, s.alpha)
    ks = [measure_kappa(M, split, 0.15, 0.9, N) for N in (0, 5, 20, 60, 120)]
    assert all(a <= b for a, b in zip(ks, ks[1:]))
    kr = [measure_kappa(M, split, r0, 0.9, 60) for r0 in (0.1, 0.15, 0.3, 0.5)]
    assert all(a >= b for a, b in zip(kr, kr[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_kappa_envelopes_hold_on_rescan(seed):
    M, s = random_trichotomic(2, 2, 2, MODULI, seed, cond=50.0)
    N, rho0, rho = 80, 0.15, 0.9
    c = certify(M, s.alpha, rho0, rho, N)
    # independent oracle: eigendecomposition, powers taken on eigenvalues only
    lam, V = np.linalg.eig(M)
    Vi = np.linalg.inv(V)
    mod = np.abs(lam)
    groups = {"s": mod <= s.alpha, "u": mod >= 1 / s.alpha}
    groups["c"] = ~(groups["s"] | groups["u"])

    def part_power(k, n):
        return V @ np.diag(np.where(groups[k], lam.astype(complex) ** n, 0)) @ Vi

    k = c.kappa * (1 + 1e-8)
    for n in range(N + 1):
        assert op_norm(part_power("s", n)) <= k * math.exp(-rho * n)
        assert op_norm(part_power("u", -n)) <= k * math.exp(-rho * n)
        assert op_norm(part_power("c", n)) <= k * math.exp(rho0 * n)
        assert op_norm(part_power("c", -n)) <= k * math.exp(rho0 * n)


def test_certify_round_trip_over_100_instances():
    violations = 0
    for seed in range(100):
        M, s = random_trichotomic(2, 2, 2, MODULI, seed, cond=5.0)
        c = certify(M, s.alpha, 0.15, 0.9, 64)
        prof = kappa_profile(M, c.splitting, 0.15, 0.9, 64)
        for arr in (prof.stable, prof.unstable, prof.central):
            violations += int(np.sum(arr > c.kappa * (1 + 1e-12)))
    assert violations == 0


def test_certificate_json_round_trip():
    M, s = random_trichotomic(2, 1, 2, MODULI, 5, cond=3.0)
    c = certify(M, s.alpha, 0.15, 0.9, 40)
    back = TrichotomyCertificate.from_json(c.to_json())
    assert back.kappa == c.kappa and back.horizon == c.horizon and back.alpha == c.alpha
    np.testing.assert_array_equal(back.matrix, c.matrix)
    for a, b in zip(back.splitting.projectors().values(), c.splitting.projectors().values()):
        np.testing.assert_array_equal(a, b)


def test_rate_interlacing():
    c = certify(DIAG, 0.6, 0.05, 0.6, 20)
    RateParams(0.2, 0.5).check_against(c)
    for bad in (RateParams(0.01, 0.5), RateParams(0.5, 0.2), RateParams(0.2, 0.7)):
        with pytest.raises(ParameterError):
            bad.check_against(c)


def test_continuity_identity():
    P = np.diag([1.0, 0.0])
    r = projector_continuity(P, P)
    assert r.delta == 0 and r.invertible and r.inverse_norm == pytest.approx(1.0)
    assert r.bound_holds


def test_continuity_oblique_example():
    t = 0.3
    P = np.diag([1.0, 0.0])
    Phat = np.array([[1.0, 0.0], [t, 0.0]])
    r = projector_continuity(P, Phat)
    assert r.delta == pytest.approx(0.3)
    assert r.guaranteed and r.invertible
    assert r.inverse_norm == pytest.approx(math.sqrt(1 + t * t))
    assert r.inverse_norm <= 1 / 0.7


def test_continuity_disjoint_ranges():
    r = projector_continuity(np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))
    assert r.delta == pytest.approx(1.0)
    assert not r.guaranteed
    assert not r.invertible


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.4))
def test_continuity_inverse_composes_to_identity(seed, delta):
    rng = np.random.default_rng(seed)
    d, k = 5, 2
    X = rng.standard_normal((d, d)) + 2 * np.eye(d)
    P = X @ np.diag([1.0] * k + [0.0] * (d - k)) @ np.linalg.inv(X)
    K = rng.standard_normal((d, d))
    Phat = P
    # rotate P along a one-parameter similarity until the distance is delta
    for s in np.linspace(0, 1, 200)[1:]:
        G = sla.expm(s * K)
        cand = G @ P @ np.linalg.inv(G)
        if op_norm(cand - P) >= delta:
            break
        Phat = cand
    r = projector_continuity(P, Phat)
    if r.guaranteed:
        assert r.invertible and r.residual <= 1e-10
        assert r.inverse_norm <= r.bound + 1e-8
