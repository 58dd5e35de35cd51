import math

import numpy as np
import pytest

from _instances import DIAG, DIAG_RATES, RATES, diag_cert, diag_delta_max, instance, solved
from trichotomy.certify import RateParams, certify
from trichotomy.errors import BudgetError, ParameterError, StructureError
from trichotomy.linops import eigensplit, op_norm
from trichotomy.seqspace import EvolutionTriple
from trichotomy.solver import (
    PerturbationProblem,
    closed_form_projectors,
    family_norms,
    fit_rates,
    fixed_point_residual,
    guard_band,
    perturbed_projectors,
    solve_perturbed,
)


def diag_problem(b, horizon=80):
    return PerturbationProblem(DIAG, diag_cert(), np.diag(b), DIAG_RATES, horizon=horizon)


def scalar_families(b, N):
    n = np.arange(N + 1)
    nc = np.arange(-N, N + 1).astype(float)
    e = np.eye(3)
    es = ((0.5 + b[0]) ** n)[:, None, None] * np.outer(e[0], e[0])
    eu = ((2.0 + b[2]) ** -n.astype(float))[:, None, None] * np.outer(e[2], e[2])
    ec = ((1.0 + b[1]) ** nc)[:, None, None] * np.outer(e[1], e[1])
    return es, eu, ec


def test_zero_perturbation_is_exact():
    p = diag_problem([0.0, 0.0, 0.0])
    Z, rep = solve_perturbed(p)
    assert rep.iterations == 1 and rep.converged and rep.final_residual == 0.0
    for got, want in zip(Z.arrays(), scalar_families([0, 0, 0], 80)):
        assert np.max(np.abs(got - want)) <= 1e-12


def test_zero_perturbation_on_random_instance():
    M, _, cert, _ = instance(0)
    p = PerturbationProblem(M, cert, np.zeros_like(M), RATES, horizon=40)
    Z, rep = solve_perturbed(p)
    assert rep.iterations == 1
    np.testing.assert_allclose(Z.es[0], cert.splitting.pi_s, atol=1e-14)
    np.testing.assert_allclose(Z.eu[0], cert.splitting.pi_u, atol=1e-14)


@pytest.mark.parametrize("b", [(1e-4, -2e-4, 3e-4), (0.0, 5e-4, 0.0), (-3e-4, 0.0, -1e-4)])
def test_diagonal_closed_form(b):
    assert max(abs(x) for x in b) < diag_delta_max()
    p = diag_problem(list(b))
    Z, rep = solve_perturbed(p)
    assert rep.converged
    for got, want in zip(Z.arrays(), scalar_families(b, 80)):
        assert np.max(np.abs(got - want)) <= 1e-10


def test_oracle_agreement():
    p, Z, rep = solved(3, 0.5)
    assert rep.converged
    oracle = eigensplit(p.matrix_a + p.matrix_b, p.cert.alpha)
    assert op_norm(Z.es[0] - oracle.pi_s) <= 1e-8
    assert op_norm(Z.eu[0] - oracle.pi_u) <= 1e-8
    assert op_norm(Z.ec[0] - oracle.pi_c) <= 1e-8


def test_fixed_point_residual_and_iterations():
    p, Z, rep = solved(5, 0.75)
    assert fixed_point_residual(p, Z) <= 1e-10
    c = rep.contraction
    assert c < 1
    # a contraction with constant c from Z0 reaches fp_tol within this many steps
    z1 = rep.history[0]
    bound = 1 + math.ceil(math.log(p.fp_tol / z1) / math.log(c)) if z1 > p.fp_tol else 1
    assert rep.iterations <= bound + 1
    h = np.array(rep.history)
    assert np.all(h[1:] <= h[:-1] * max(c, 1e-300) * (1 + 1e-6) + 1e-15)


def test_solve_is_deterministic():
    p, Z, _ = solved(2, 0.5)
    Z2, _ = solve_perturbed(p)
    for a, b in zip(Z.arrays(), Z2.arrays()):
        np.testing.assert_array_equal(a, b)


def test_budget_error():
    M, _, cert, dmax = instance(0)
    B = np.eye(6) * dmax * 1.5
    p = PerturbationProblem(M, cert, B, RATES)
    with pytest.raises(BudgetError):
        solve_perturbed(p)


def test_short_certificate_horizon_rejected():
    cert = certify(DIAG, 0.6, 0.05, 0.6, 30)
    p = PerturbationProblem(DIAG, cert, np.zeros((3, 3)), DIAG_RATES, horizon=80)
    with pytest.raises(ParameterError, match="certif"):
        solve_perturbed(p)


def test_problem_validation():
    cert = diag_cert()
    with pytest.raises(ParameterError):
        PerturbationProblem(DIAG * 1.01, cert, np.zeros((3, 3)), DIAG_RATES)
    with pytest.raises(ParameterError):
        PerturbationProblem(DIAG, cert, np.zeros((2, 2)), DIAG_RATES)
    with pytest.raises(ParameterError):
        PerturbationProblem(DIAG, cert, np.zeros((3, 3)), RateParams(0.5, 0.2))
    with pytest.raises(ParameterError):
        PerturbationProblem(DIAG, cert, np.zeros((3, 3)), DIAG_RATES, horizon=0)


def test_guard_band_examples():
    r = RateParams(0.2, 0.5)
    q = math.exp(-0.4)
    pad = guard_band(r, 0.05, 0.6, 1e-13)
    assert q**pad / (1 - q) <= 1e-13 < q ** (pad - 1) / (1 - q)
    assert guard_band(r, 0.05, 0.6, 1e-6) < pad


def test_perturbed_projectors():
    p, Z, _ = solved(1, 0.25)
    split = perturbed_projectors(Z, p.cert.alpha)
    assert max(split.residuals().values()) <= 1e-10
    np.testing.assert_allclose(split.pi_s + split.pi_c + split.pi_u, np.eye(6), atol=1e-10)


def test_perturbed_projectors_structure_error():
    es = np.repeat(np.diag([1.0, 0.0])[None], 3, axis=0)
    eu = np.repeat(np.diag([0.0, 0.5])[None], 3, axis=0)
    ec = np.zeros((5, 2, 2))
    Z = EvolutionTriple.from_arrays(es, eu, ec, 0.5, 0.1)
    with pytest.raises(StructureError):
        perturbed_projectors(Z)


def test_closed_form_projectors_match_fixed_point():
    p, Z, _ = solved(4, 0.5)
    cf = closed_form_projectors(p, Z, tol=1e-10)
    fp = perturbed_projectors(Z, p.cert.alpha)
    assert max(cf.distance(fp).values()) <= 1e-10


def test_closed_form_projectors_diagonal():
    b = [2e-4, -1e-4, 1e-4]
    p = diag_problem(b)
    Z, _ = solve_perturbed(p)
    cf = closed_form_projectors(p, Z)
    np.testing.assert_allclose(cf.pi_s, np.diag([1.0, 0, 0]), atol=1e-12)
    np.testing.assert_allclose(cf.pi_c, np.diag([0, 1.0, 0]), atol=1e-12)
    np.testing.assert_allclose(cf.pi_u, np.diag([0, 0, 1.0]), atol=1e-12)


def test_fit_rates_diagonal():
    Z, _ = solve_perturbed(diag_problem([0.0, 0.0, 0.0]))
    r = fit_rates(Z)
    assert r.rho_hat == pytest.approx(math.log(2))
    assert r.rho0_hat == pytest.approx(0.0, abs=1e-12)
    assert r.kappa_hat == pytest.approx(1.0)


def test_fit_rates_scalar_perturbation():
    Z, _ = solve_perturbed(diag_problem([0.1 * 1e-3, 0.0, 0.0]))
    r = fit_rates(Z, (5, 60))
    assert r.rho_hat == pytest.approx(-math.log(0.5 + 1e-4), rel=1e-9)


def test_fit_rates_window_check():
    Z, _ = solve_perturbed(diag_problem([0.0, 0.0, 0.0], horizon=10))
    with pytest.raises(ParameterError):
        fit_rates(Z, (5, 6))
    with pytest.raises(ParameterError):
        fit_rates(Z, (0, 11))


def test_family_norms_shapes():
    _, Z, _ = solved(0, 0.1)
    norms = family_norms(Z)
    N = Z.horizon
    assert norms["stable"].shape == (N + 1,) and norms["central"].shape == (2 * N + 1,)
    assert norms["stable"][0] == pytest.approx(op_norm(Z.es[0]))
