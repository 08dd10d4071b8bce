import numpy as np
import pytest

from cqqkey.linalg import random_state
from cqqkey.source import CompoundSource, CqqState, product_channel

P0, P1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
PLUS = np.full((2, 2), 0.5)
TRIVIAL = np.eye(1)


def basis_source(p=(0.5, 0.5), b_copy=True, e_copy=False) -> CompoundSource:
    """Binary X; B and E each get |x><x| or nothing."""
    b = [P0, P1] if b_copy else [TRIVIAL, TRIVIAL]
    e = [P0, P1] if e_copy else [TRIVIAL, TRIVIAL]
    return CompoundSource([CqqState(np.asarray(p, float), product_channel(b, e))])


def random_qubit_source(rng, members=1, alphabet=2, shared_p=False) -> CompoundSource:
    p = rng.dirichlet(np.ones(alphabet))
    states = []
    for _ in range(members):
        q = p if shared_p else rng.dirichlet(np.ones(alphabet))
        b = [random_state(2, rng).data for _ in range(alphabet)]
        e = [random_state(2, rng).data for _ in range(alphabet)]
        states.append(CqqState(q, product_channel(b, e)))
    return CompoundSource(states)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
