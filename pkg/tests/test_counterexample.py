import numpy as np
import pytest

from cqqkey.counterexample import (DEFAULT_GRID, FLAT, PI, build_counterexample, continuity_f, counterexample_state,
                                   default_grid, distance_bound_check, no_smi_gap_demo, pi_branch_protocol,
                                   smi_capacity_protocol, symmetry_identity_check)
from cqqkey.exceptions import ValidationError
from cqqkey.linalg import binary_entropy, partial_trace
from cqqkey.protocol import Protocol, evaluate_protocol
from cqqkey.rates import optimize_k1
from cqqkey.source import coherify


def test_marginals_at_pi():
    s = counterexample_state(PI)
    assert np.allclose(s.p, 0.25)
    rho = coherify(s)
    assert np.allclose(partial_trace(rho, [1]).data, np.kron(FLAT, FLAT))


def test_every_member_is_a_state():
    for s in build_counterexample(default_grid(7)).states:
        assert np.trace(coherify(s).data).real == pytest.approx(1.0)


def test_default_grid():
    assert default_grid(5) == [(0.5, 0.5), (0.3, 0.7), (0.7, 0.3), (0.1, 0.9), (0.9, 0.1)]
    with pytest.raises(ValidationError):
        default_grid(1)
    with pytest.raises(ValidationError):
        build_counterexample([(0.3, 0.7), (0.9, 0.1)])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_smi_protocol_is_perfect(n):
    smi, report = smi_capacity_protocol(n, DEFAULT_GRID)
    assert smi.M == 2 ** n
    for r in report.members:
        assert r.error_prob <= 1e-12
        assert r.security_index <= 1e-9
        assert r.log_m == n


def test_blind_protocol():
    blind = pi_branch_protocol(1)
    demo = no_smi_gap_demo(blind, DEFAULT_GRID)
    rows = {r.p: r for r in demo["rows"]}
    assert rows[(0.5, 0.5)].security_index <= 1e-9
    assert rows[(0.3, 0.7)].security_index == pytest.approx(1.0, abs=1e-9)
    assert demo["max_other_security_index"] >= 0.9
    assert demo["chain_holds"]


def test_constant_blind_protocol_has_no_gap():
    const = Protocol(1, 4, np.ones((4, 1, 1)), np.ones((1, 1, 4)), diagonal=True)
    demo = no_smi_gap_demo(const, DEFAULT_GRID)
    assert demo["worst_case"] == pytest.approx(0.0, abs=1e-12)
    assert demo["chain_holds"]


def test_rate_equals_one():
    assert optimize_k1(build_counterexample(), restarts=4).value == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("p", [(0.3, 0.7), (0.9, 0.1), (0.6, 0.4)])
def test_invariants(n, p):
    proto = pi_branch_protocol(n)
    assert symmetry_identity_check(proto, p)["holds"]
    assert distance_bound_check(proto, p)["holds"]


def test_continuity_function():
    assert continuity_f(0.0, 3.0) == 0.0
    assert continuity_f(0.1, 3.0) == pytest.approx(0.4 * 3 + 2 * binary_entropy(0.1))
    assert continuity_f(5.0, 3.0) == continuity_f(0.5, 3.0)


def test_branch_roles():
    # at p != pi the receiver reads the second qubit, so the pi-branch decoder learns nothing
    blind = pi_branch_protocol(1)
    r = evaluate_protocol(blind, counterexample_state((0.3, 0.7)))
    assert r.error_prob == pytest.approx(0.5, abs=1e-12)
