import json
import math

import numpy as np
import pytest

from _instances import DIAG, DIAG_RATES, RATES, diag_cert, instance, solved
from trichotomy.errors import ParameterError
from trichotomy.linops import random_perturbation
from trichotomy.seqspace import EvolutionTriple
from trichotomy.solver import PerturbationProblem, solve_perturbed
from trichotomy.verify import CheckResult, check_bounds, check_structure, oracle_compare, verify_all


def test_zero_perturbation_residuals_vanish():
    p = PerturbationProblem(DIAG, diag_cert(), np.zeros((3, 3)), DIAG_RATES)
    Z, rep = solve_perturbed(p)
    v = verify_all(p, Z, rep.budget)
    assert v.passed
    for name, c in v.checks.items():
        if name.startswith(("semigroup", "orthogonal", "identity", "forward", "unstable", "central", "commutation")):
            assert c.max_residual <= 1e-14, name
        if name.startswith(("envelope", "projector_distance")):
            assert c.max_residual == 0.0, name


@pytest.mark.parametrize("fraction", [0.25, 0.9])
def test_random_instance_passes(fraction):
    p, Z, rep = solved(7, fraction)
    v = verify_all(p, Z, rep.budget)
    assert v.passed, v.failures()
    assert v.checks["bound_below_delta0"].max_residual < 1
    assert 0 <= v.info["envelope_slack"] <= 1


def test_bound_checks_are_ratios():
    p, Z, rep = solved(8, 0.5)
    b = check_bounds(p, Z, rep.budget)
    bound = rep.budget.distance_bound(p.cert.kappa)
    assert b.info["distance_bound"] == pytest.approx(bound)
    d = b.info["projector_distances"]["s"]
    assert b.checks["projector_distance_s"].max_residual == pytest.approx(d / bound)


def test_oracle_compare_zero_discrepancy_for_unperturbed():
    M, _, cert, _ = instance(0)
    p = PerturbationProblem(M, cert, np.zeros_like(M), RATES, horizon=20)
    Z, _ = solve_perturbed(p)
    o = oracle_compare(p, Z)
    assert o.info["oracle_available"]
    for k in "scu":
        assert o.checks[f"oracle_{k}"].max_residual <= 1e-14


def test_corrupted_triple_fails():
    p, Z, rep = solved(9, 0.5)
    es, eu, ec = (a.copy() for a in Z.arrays())
    es[3] += 1e-5
    bad = EvolutionTriple.from_arrays(es, eu, ec, Z.es.weight, Z.ec.weight)
    s = check_structure(bad, p.matrix_a, p.matrix_b)
    assert not s.passed
    assert "semigroup_s" in s.failures() and "forward_s" in s.failures()
    w = s.checks["forward_s"].witness_index
    assert w in (2, 3)


@pytest.mark.parametrize("cond", [100.0, 1000.0])
def test_ill_conditioned_instances_pass_with_scaled_threshold(cond):
    M, _, cert, dmax = instance(0, cond)
    B = random_perturbation(6, 0.5 * dmax, 1000)
    p = PerturbationProblem(M, cert, B, RATES)
    Z, rep = solve_perturbed(p)
    v = verify_all(p, Z, rep.budget, scale=cond)
    assert v.passed, v.failures()


def test_structure_dimension_checks():
    _, Z, _ = solved(0, 0.1)
    with pytest.raises(ParameterError):
        check_structure(Z, np.eye(3), np.zeros((3, 3)))
    small = Z.window(1)
    with pytest.raises(ParameterError):
        check_structure(small, np.eye(6), np.zeros((6, 6)))


def test_report_serialises():
    p, Z, rep = solved(1, 0.5)
    d = verify_all(p, Z, rep.budget).to_dict()
    text = json.dumps(d, allow_nan=True)
    assert json.loads(text)["pass"] is True
    assert isinstance(d["checks"]["semigroup_c"]["witness_index"], list)


def test_check_result_threshold():
    assert CheckResult(1e-9, 1e-8).passed
    assert not CheckResult(1e-7, 1e-8).passed
    assert not CheckResult(math.inf, 1.0).passed
