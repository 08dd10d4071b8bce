"""An irregular compound source whose key capacity depends on sender marginal knowledge.

The sender letter is a pair a = (x, y) encoded as a = 2x + y.  Each receiver
holds two qubits, and W1(x) = |x><x| (x) Pi, W2(y) = Pi (x) |y><y| with Pi the
flat qubit state.

* At the uniform marginal pi the weights are 1/4 and B gets W1(x), E gets W2(y).
* At every other p the weights are p(x)/2 and the roles swap: B gets W2(y),
  E gets W1(x).

Knowing which case holds, the parties share a perfect key bit per letter (x
at pi, y elsewhere).  A protocol that does not know it must work for
marginals arbitrarily close to pi, where the eavesdropper holds what the
receiver would use at pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .exceptions import ValidationError
from .linalg import binary_entropy, check_distribution, projector, shannon_entropy, unnormalized_entropy_diag
from .protocol import (Protocol, ProtocolReport, SmiProtocol, _diag_of, evaluate_on_source,
                       evaluate_protocol, product_distribution, sequences, word_diagonals)
from .source import CompoundSource, CqChannel, CqqState

PI = np.array([0.5, 0.5])
FLAT = np.eye(2) / 2
DEFAULT_GRID = ((0.5, 0.5), (0.3, 0.7), (0.9, 0.1), (0.6, 0.4))


def w1(x: int) -> np.ndarray:
    return np.kron(projector(x, 2), FLAT)


def w2(y: int) -> np.ndarray:
    return np.kron(FLAT, projector(y, 2))


def is_uniform(p, tol: float = 1e-12) -> bool:
    return bool(np.abs(np.asarray(p, dtype=float) - PI).sum() <= tol)


def _member(weights, b_of, e_of) -> CqqState:
    outs = [np.kron(b_of(a // 2, a % 2), e_of(a // 2, a % 2)) for a in range(4)]
    return CqqState(np.asarray(weights, dtype=float), CqChannel(np.stack(outs), (4, 4), check=False))


def counterexample_state(p) -> CqqState:
    p = check_distribution(p)
    if p.size != 2:
        raise ValidationError("counterexample marginals live on {0, 1}")
    if is_uniform(p):
        return _member(np.full(4, 0.25), lambda x, y: w1(x), lambda x, y: w2(y))
    weights = [p[a // 2] / 2 for a in range(4)]
    return _member(weights, lambda x, y: w2(y), lambda x, y: w1(x))


def symmetric_state(p) -> CqqState:
    """rho~_p: weights p(x)/2, B and E both get W1(x)."""
    p = check_distribution(p)
    weights = [p[a // 2] / 2 for a in range(4)]
    return _member(weights, lambda x, y: w1(x), lambda x, y: w1(x))


def default_grid(g: int) -> list[tuple[float, float]]:
    """pi followed by g - 1 points 0.5 +- 0.4 j / J, J = ceil((g - 1) / 2), interleaved."""
    if g < 2:
        raise ValidationError("the grid needs pi and at least one other point")
    J = math.ceil((g - 1) / 2)
    pts = [(0.5, 0.5)]
    j = 1
    while len(pts) < g:
        for sign in (-1, 1):
            if len(pts) < g:
                q = round(0.5 + sign * 0.4 * j / J, 12)
                pts.append((q, round(1 - q, 12)))
        j += 1
    return pts


def build_counterexample(p_grid: Sequence[Sequence[float]] = DEFAULT_GRID) -> CompoundSource:
    grid = [check_distribution(p) for p in p_grid]
    if not any(is_uniform(p) for p in grid):
        raise ValidationError("the grid must contain the uniform marginal pi")
    if len(grid) < 2:
        raise ValidationError("the grid needs at least one point besides pi")
    return CompoundSource(tuple(counterexample_state(p) for p in grid))


# -- protocols ---------------------------------------------------------------------

def _shared_decoders(n: int) -> np.ndarray:
    """D_{0,m} reads the first qubit of every letter, D_{1,m} the second (diagonals)."""
    keys = sequences(2, n)
    dec = np.zeros((2, 2 ** n, 4 ** n))
    for l in range(2):
        for m, bits in enumerate(keys):
            per_letter = []
            for b in bits:
                v = np.zeros(4)
                for q in range(4):
                    v[q] = float((q // 2 if l == 0 else q % 2) == b)
                per_letter.append(v)
            dec[l, m] = reduce(np.kron, per_letter)
    return dec


def _branch(n: int, case: int) -> Protocol:
    """case 0: key = x-part, public l = 0; case 1: key = y-part, l = 1."""
    words = sequences(4, n)
    part = words // 2 if case == 0 else words % 2
    m = part @ (2 ** np.arange(n - 1, -1, -1))
    t = np.zeros((4 ** n, 2, 2 ** n))
    t[np.arange(4 ** n), case, m] = 1.0
    return Protocol(n, 4, t, _shared_decoders(n), diagonal=True,
                    log=(f"case {'pi' if case == 0 else 'other'}: key = {'x' if case == 0 else 'y'}^n",))


def pi_branch_protocol(n: int) -> Protocol:
    return _branch(n, 0)


def smi_capacity_protocol(n: int, p_grid: Sequence[Sequence[float]] = DEFAULT_GRID) -> tuple[SmiProtocol, ProtocolReport]:
    """The SMI protocol: a perfect key bit per letter in every case, M = 2^n."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    source = build_counterexample(p_grid)
    pi_proto, other = _branch(n, 0), _branch(n, 1)
    family = tuple((s.p, pi_proto if is_uniform(x_marginal(s)) else other) for s in source.states)
    smi = SmiProtocol(family)
    return smi, evaluate_on_source(smi, source)


def x_marginal(s: CqqState) -> np.ndarray:
    """The marginal p on {0,1} that generated a member (x-part of its weights)."""
    return np.array([s.p[0] + s.p[1], s.p[2] + s.p[3]])


# -- the gap ----------------------------------------------------------------------

def continuity_f(a: float, log_dim: float) -> float:
    """f(a) = 4 min(a, 1/2) log dim + 2 h(min(a, 1/2))."""
    a = min(max(a, 0.0), 0.5)
    return 4 * a * log_dim + 2 * binary_entropy(a)


@dataclass
class GapRow:
    p: tuple[float, float]
    branch: str
    error_prob: float
    security_index: float
    distance: float
    bound: float | None


def no_smi_gap_demo(blind: Protocol, p_grid: Sequence[Sequence[float]] = DEFAULT_GRID, n: int | None = None) -> dict:
    """Run one protocol on every grid member and instantiate the chain of inequalities.

    For p != pi the value mu log M + h(mu) + mu + 2 f(n ||p - pi||_1), with mu
    the worst case over the grid, must dominate log M.
    """
    if not isinstance(blind, Protocol):
        raise ValidationError("the blind protocol must be a single Protocol")
    if n is not None and n != blind.n:
        raise ValidationError(f"protocol blocklength {blind.n} differs from n={n}")
    grid = [check_distribution(p) for p in p_grid]
    source = build_counterexample(grid)
    n = blind.n
    reports = [evaluate_protocol(blind, s, member=i) for i, s in enumerate(source.states)]
    mu = max(r.worst for r in reports)
    log_m = math.log2(blind.M)
    log_dim = math.log2(blind.M * blind.L * 4 ** n)
    fano = binary_entropy(min(mu, 0.5))
    rows = []
    for p, r in zip(grid, reports):
        dist = float(np.abs(p - PI).sum())
        bound = None if is_uniform(p) else mu * log_m + fano + mu + 2 * continuity_f(n * dist, log_dim)
        rows.append(GapRow((float(p[0]), float(p[1])), "pi" if is_uniform(p) else "other",
                           r.error_prob, r.security_index, dist, bound))
    bounds = [r.bound for r in rows if r.bound is not None]
    return {
        "n": n, "log_m": log_m, "worst_case": mu,
        "rows": rows,
        "chain_holds": all(log_m <= b + 1e-9 for b in bounds),
        "max_other_security_index": max(r.security_index for r in rows if r.branch == "other"),
    }


def gap_rows_json(demo: dict) -> dict:
    out = {k: v for k, v in demo.items() if k != "rows"}
    out["rows"] = [{"p": list(r.p), "branch": r.branch, "error_prob": r.error_prob,
                    "security_index": r.security_index, "distance": r.distance, "bound": r.bound}
                   for r in demo["rows"]]
    return out


# -- invariants of the construction ----------------------------------------------------

def key_register_blocks(protocol: Protocol, s: CqqState, side: int) -> np.ndarray:
    """Diagonals of sum_x p^n(x) T(l,m|x) V_side^n(x) for each (l, m)."""
    joint = product_distribution(s.p, protocol.n)[:, None, None] * protocol.t_matrix
    ch = s.channel.factor(side)
    return np.einsum("xlm,xi->lmi", joint, word_diagonals(_diag_of(ch), protocol.n))


def key_information(blocks: np.ndarray) -> float:
    """I(K; Lambda X) from the diagonal blocks of a classical-quantum (Lambda, K, X) state."""
    key = blocks.sum(axis=(0, 2))
    h_k = shannon_entropy(key / key.sum())
    return h_k + float(unnormalized_entropy_diag(blocks.sum(axis=1)).sum() - unnormalized_entropy_diag(blocks).sum())


def symmetry_identity_check(protocol: Protocol, p) -> dict:
    """I(K; Lambda E^n) under rho_p against I(K; Lambda B^n) under rho~_p."""
    lhs = key_information(key_register_blocks(protocol, counterexample_state(p), 1))
    rhs = key_information(key_register_blocks(protocol, symmetric_state(p), 0))
    return {"p": list(map(float, p)), "eve_information": lhs, "symmetric_bob_information": rhs,
            "holds": abs(lhs - rhs) <= 1e-9}


def distance_bound_check(protocol: Protocol, p) -> dict:
    """||rho_{K Lambda B^n, pi} - rho~_{K Lambda B^n, p}||_1 <= n ||p - pi||_1."""
    a = key_register_blocks(protocol, counterexample_state(PI), 0)
    b = key_register_blocks(protocol, symmetric_state(p), 0)
    dist = float(np.abs(a - b).sum())
    bound = protocol.n * float(np.abs(check_distribution(p) - PI).sum())
    return {"p": list(map(float, p)), "distance": dist, "bound": bound, "holds": dist <= bound + 1e-9}
