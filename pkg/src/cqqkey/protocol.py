"""Exact small-blocklength evaluation of one-way secret-key protocols.

A protocol at blocklength n is a stochastic map T: X^n -> [L] x [M] (public
message l, key m) together with, for each l, a complete measurement
{D_lm}_m on B^n.  Sequences are indexed by their base-|X| digits with the
first letter most significant, matching Kronecker-product order.

Both the key and the public message are classical, so every quantity needed
for the security index is assembled from the blocks

    omega_lm = sum_x p^n(x) T(l,m|x) V_E^n(x)

and the key pair distribution from tr(D_lm' V_B^n(x)); the joint state of
B^n and E^n is never formed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from ._rng import stream
from .exceptions import ResourceError, ValidationError
from .linalg import (Povm, check_distribution, shannon_entropy, unnormalized_entropy,
                     unnormalized_entropy_diag)
from .source import DEFAULT_GROUP_TOL, CompoundSource, CqChannel, CqqState, holevo_chi
from .typicality import TAIL_CONSTANT, TypeClass, enumerate_types, type_class_size

STATE_BUDGET = 2 ** 24
PGM_CUTOFF = 1e-12


# -- sequences and word outputs ------------------------------------------------

def sequences(alphabet_size: int, n: int) -> np.ndarray:
    """All of X^n as an (|X|^n, n) array in index order."""
    return np.array(list(itertools.product(range(alphabet_size), repeat=n)), dtype=np.int64).reshape(-1, n)


def sequence_index(seqs: np.ndarray, alphabet_size: int) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.int64)
    weights = alphabet_size ** np.arange(seqs.shape[-1] - 1, -1, -1, dtype=np.int64)
    return seqs @ weights


def product_distribution(p, n: int) -> np.ndarray:
    return reduce(np.kron, [np.asarray(p, dtype=float)] * n)


def word_outputs(outputs: np.ndarray, n: int) -> np.ndarray:
    """V^{(x)n}(x^n) for every x^n, shape (|X|^n, d^n, d^n)."""
    out = outputs
    for _ in range(n - 1):
        a, d = out.shape[0], out.shape[1]
        k, e = outputs.shape[0], outputs.shape[1]
        out = np.einsum("aij,bkl->abikjl", out, outputs).reshape(a * k, d * e, d * e)
    return out


def word_diagonals(diag: np.ndarray, n: int) -> np.ndarray:
    """Diagonals of V^{(x)n}(x^n) for a diagonal channel, shape (|X|^n, d^n)."""
    out = diag
    for _ in range(n - 1):
        out = np.einsum("ai,bj->abij", out, diag).reshape(out.shape[0] * diag.shape[0], -1)
    return out


def _diag_of(ch: CqChannel) -> np.ndarray:
    return np.real(np.einsum("xii->xi", ch.outputs))


# -- protocols ---------------------------------------------------------------------

@dataclass(frozen=True)
class Protocol:
    """t_matrix[x, l, m] = T(l, m | x); decoders[l, m] = D_lm (diagonal vectors if ``diagonal``)."""

    n: int
    alphabet_size: int
    t_matrix: np.ndarray
    decoders: np.ndarray
    diagonal: bool = False
    log: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        t = np.asarray(self.t_matrix, dtype=float)
        d = np.asarray(self.decoders, dtype=float if self.diagonal else complex)
        object.__setattr__(self, "t_matrix", t)
        object.__setattr__(self, "decoders", d)
        if self.n < 1:
            raise ValidationError("blocklength must be >= 1")
        if t.ndim != 3 or t.shape[0] != self.alphabet_size ** self.n:
            raise ValidationError(f"t_matrix must have shape (|X|^n, L, M) = ({self.alphabet_size ** self.n}, L, M)")
        if np.any(t < -1e-12) or np.max(np.abs(t.sum(axis=(1, 2)) - 1.0)) > 1e-10:
            raise ValidationError("t_matrix rows must be probability distributions over (l, m)")
        if d.shape[:2] != t.shape[1:]:
            raise ValidationError(f"decoders indexed by {d.shape[:2]}, t_matrix by {t.shape[1:]}")
        dim = d.shape[2]
        if self.diagonal:
            if d.ndim != 3 or np.any(d < -1e-9) or np.any(d > 1 + 1e-9):
                raise ValidationError("diagonal decoder effects must lie in [0, 1]")
            if np.max(np.abs(d.sum(axis=1) - 1.0)) > 1e-9:
                raise ValidationError("decoders are not complete for some public message l")
        else:
            if d.ndim != 4 or d.shape[3] != dim:
                raise ValidationError("decoders must be square matrices")
            if np.max(np.abs(d.sum(axis=1) - np.eye(dim))) > 1e-9:
                raise ValidationError("decoders are not complete for some public message l")

    @property
    def L(self) -> int:
        return self.t_matrix.shape[1]

    @property
    def M(self) -> int:
        return self.t_matrix.shape[2]

    @property
    def dim_b(self) -> int:
        return self.decoders.shape[2]

    def povm(self, l: int) -> Povm:
        d = self.decoders[l]
        effects = [np.diag(e).astype(complex) for e in d] if self.diagonal else list(d)
        return Povm(effects)


@dataclass(frozen=True)
class SmiProtocol:
    """A protocol per sender marginal: ``family`` is a sequence of (p, Protocol)."""

    family: tuple[tuple[np.ndarray, Protocol], ...]

    def __post_init__(self):
        fam = tuple((check_distribution(p), proto) for p, proto in self.family)
        object.__setattr__(self, "family", fam)
        if not fam:
            raise ValidationError("an SMI protocol needs at least one branch")
        n, m = fam[0][1].n, fam[0][1].M
        for p, proto in fam:
            if proto.n != n or proto.M != m:
                raise ValidationError("all SMI branches must share blocklength and key size")

    @property
    def n(self) -> int:
        return self.family[0][1].n

    @property
    def M(self) -> int:
        return self.family[0][1].M

    def branch(self, p, tol: float = DEFAULT_GROUP_TOL) -> Protocol:
        p = np.asarray(p, dtype=float)
        for q, proto in self.family:
            if q.size == p.size and np.abs(q - p).sum() <= tol:
                return proto
        raise ValidationError(f"no protocol branch for sender marginal {np.round(p, 6).tolist()}")


# -- evaluation ----------------------------------------------------------------

@dataclass
class MemberReport:
    member: int
    error_prob: float
    security_index: float
    key_marginal: np.ndarray
    log_m: float
    key_entropy: float
    key_leakage: float
    branch: int | None = None

    @property
    def worst(self) -> float:
        return max(self.error_prob, self.security_index)

    def to_json(self) -> dict:
        out = {
            "member": self.member,
            "error_prob": self.error_prob,
            "security_index": self.security_index,
            "log_m": self.log_m,
            "key_entropy": self.key_entropy,
            "key_leakage": self.key_leakage,
            "key_marginal": self.key_marginal.tolist(),
        }
        if self.branch is not None:
            out["branch"] = self.branch
        return out


@dataclass
class ProtocolReport:
    members: list[MemberReport]

    @property
    def worst_case(self) -> float:
        return max(r.worst for r in self.members)

    def to_json(self) -> dict:
        return {"worst_case": self.worst_case, "members": [r.to_json() for r in self.members]}

    def csv_rows(self) -> tuple[list[str], list[list]]:
        return (["member", "error_prob", "security_index"],
                [[r.member, r.error_prob, r.security_index] for r in self.members])


def _check_budget(protocol: Protocol, s: CqqState, budget: int) -> None:
    words = s.alphabet_size ** protocol.n
    db, de = s.dim_b ** protocol.n, s.dim_e ** protocol.n
    need = words * protocol.L * protocol.M + protocol.L * protocol.M * de * de
    need += words * (db if protocol.diagonal else db * db) + words * de * de
    need += protocol.decoders.size
    if need > budget:
        raise ResourceError(f"exact evaluation needs about {need} amplitudes, budget is {budget}")


def evaluate_protocol(protocol: Protocol, s: CqqState, member: int = 0,
                      budget: int = STATE_BUDGET) -> MemberReport:
    """Error probability and security index of ``protocol`` on the i.i.d. source ``s``."""
    if protocol.alphabet_size != s.alphabet_size:
        raise ValidationError("protocol and state alphabets differ")
    if protocol.dim_b != s.dim_b ** protocol.n:
        raise ValidationError(f"decoders act on dimension {protocol.dim_b}, B^n has {s.dim_b ** protocol.n}")
    _check_budget(protocol, s, budget)
    n = protocol.n
    joint = product_distribution(s.p, n)[:, None, None] * protocol.t_matrix  # P(x, l, m)

    vb, ve = s.channel.b, s.channel.e
    if protocol.diagonal:
        hit = np.einsum("lmi,xi->xlm", protocol.decoders, word_diagonals(_diag_of(vb), n))
    else:
        hit = np.real(np.einsum("lmij,xji->xlm", protocol.decoders, word_outputs(vb.outputs, n)))
    p_kk = np.einsum("xlm,xlk->mk", joint, hit)  # P_{KK'}(m, m')
    error = float(min(1.0, max(0.0, 1.0 - np.trace(p_kk))))

    if ve.is_diagonal():
        omega = np.einsum("xlm,xi->lmi", joint, word_diagonals(_diag_of(ve), n))
        s_lm = unnormalized_entropy_diag(omega).sum()
        s_l = unnormalized_entropy_diag(omega.sum(axis=1)).sum()
    else:
        omega = np.einsum("xlm,xij->lmij", joint, word_outputs(ve.outputs, n))
        s_lm = unnormalized_entropy(omega).sum()
        s_l = unnormalized_entropy(omega.sum(axis=1)).sum()
    # I(K; Lambda E^n) = H(K) + sum_l S~(omega_l) - sum_lm S~(omega_lm)
    key = joint.sum(axis=(0, 1))
    h_k = shannon_entropy(key / key.sum())
    leak = max(0.0, h_k + float(s_l - s_lm))
    log_m = math.log2(protocol.M)
    index = log_m - h_k + leak
    return MemberReport(member, error, float(index), key, log_m, h_k, leak)


def evaluate_on_source(protocol, source: CompoundSource, budget: int = STATE_BUDGET,
                       group_tol: float = DEFAULT_GROUP_TOL) -> ProtocolReport:
    """Per-member reports; an SMI protocol uses the branch matching each member's marginal."""
    reports = []
    for i, s in enumerate(source.states):
        if isinstance(protocol, SmiProtocol):
            proto = protocol.branch(s.p, group_tol)
            branch = next(j for j, (q, pr) in enumerate(protocol.family) if pr is proto)
        else:
            proto, branch = protocol, None
        rep = evaluate_protocol(proto, s, member=i, budget=budget)
        rep.branch = branch
        reports.append(rep)
    return ProtocolReport(reports)


def key_pair_distribution(protocol: Protocol, s: CqqState) -> np.ndarray:
    """P_{KK'}(m, m') = sum_l sum_x p^n(x) T(l,m|x) tr(D_lm' V_B^n(x))."""
    joint = product_distribution(s.p, protocol.n)[:, None, None] * protocol.t_matrix
    if protocol.diagonal:
        hit = np.einsum("lmi,xi->xlm", protocol.decoders, word_diagonals(_diag_of(s.channel.b), protocol.n))
    else:
        hit = np.real(np.einsum("lmij,xji->xlm", protocol.decoders, word_outputs(s.channel.b.outputs, protocol.n)))
    return np.einsum("xlm,xlk->mk", joint, hit)


def full_protocol_state(protocol: Protocol, s: CqqState) -> tuple[np.ndarray, tuple[int, ...]]:
    """The classical-quantum state of (Lambda, K, E^n) as a dense matrix, for cross-checks."""
    n = protocol.n
    joint = product_distribution(s.p, n)[:, None, None] * protocol.t_matrix
    ve = word_outputs(s.channel.e.outputs, n)
    omega = np.einsum("xlm,xij->lmij", joint, ve)
    L, M, d = protocol.L, protocol.M, ve.shape[1]
    data = np.zeros((L, M, d, L, M, d), dtype=complex)
    for l in range(L):
        for m in range(M):
            data[l, m, :, l, m, :] = omega[l, m]
    return data.reshape(L * M * d, L * M * d), (L, M, d)


def induced_preprocessings(protocol, source: CompoundSource, group_tol: float = DEFAULT_GROUP_TOL) -> dict:
    """Chain U = (l, m), T = l induced by a blocklength-k protocol on I^{(x)k}, per group."""
    from .rates import MarkovPreprocessing, _pad

    groups = source.groups(group_tol)
    protos = [protocol.branch(g.p, group_tol) if isinstance(protocol, SmiProtocol) else protocol
              for g in groups]
    z = max(p.L * p.M for p in protos)
    zt = max(p.L for p in protos)
    out = {}
    for gi, proto in enumerate(protos):
        if proto.alphabet_size ** proto.n != source.alphabet_size:
            raise ValidationError("protocol blocklength does not match the extension order")
        L, M = proto.L, proto.M
        uy = proto.t_matrix.reshape(-1, L * M).T
        tu = np.kron(np.eye(L), np.ones((1, M)))
        out[gi] = [_pad(MarkovPreprocessing(uy, tu), z, zt)]
    return out


# -- pretty good measurement ----------------------------------------------------

def pgm_effects(states: np.ndarray, cutoff: float = PGM_CUTOFF) -> np.ndarray:
    """Square-root measurement for a stack of (unnormalised) states plus a remainder effect."""
    states = np.asarray(states, dtype=complex)
    d = states.shape[1]
    total = states.sum(axis=0)
    w, v = np.linalg.eigh((total + total.conj().T) / 2)
    keep = w > cutoff
    inv_sqrt = (v[:, keep] / np.sqrt(w[keep])) @ v[:, keep].conj().T
    effects = np.einsum("ij,kjl,lm->kim", inv_sqrt, states, inv_sqrt)
    effects = (effects + np.conj(np.transpose(effects, (0, 2, 1)))) / 2
    remainder = np.eye(d) - v[:, keep] @ v[:, keep].conj().T
    return np.concatenate([effects, remainder[None]], axis=0)


def pgm_effects_diag(states: np.ndarray, cutoff: float = PGM_CUTOFF) -> np.ndarray:
    """Diagonal-case PGM: D_k = rho_k / S on the support of S, remainder off it."""
    states = np.asarray(states, dtype=float)
    total = states.sum(axis=0)
    keep = total > cutoff
    safe = np.where(keep, total, 1.0)
    effects = np.where(keep, states / safe, 0.0)
    return np.concatenate([effects, (~keep).astype(float)[None]], axis=0)


def pgm_povm(codebook: Sequence[Sequence[int]], channel: CqChannel, n: int | None = None,
             cutoff: float = PGM_CUTOFF) -> Povm:
    """PGM for the output states of ``codebook`` words; the last effect is the remainder."""
    codebook = [tuple(int(a) for a in w) for w in codebook]
    if not codebook:
        raise ValidationError("codebook must be nonempty")
    n = len(codebook[0]) if n is None else n
    if any(len(w) != n for w in codebook):
        raise ValidationError(f"all codewords must have length {n}")
    if channel.dim ** (2 * n) * len(codebook) > STATE_BUDGET:
        raise ResourceError("codebook output states exceed the state budget")
    states = np.stack([channel.word(w) for w in codebook])
    return Povm(list(pgm_effects(states, cutoff)))


def average_error(povm: Povm, states: Sequence[np.ndarray]) -> float:
    """1 - (1/K) sum_k tr(D_k rho_k) for the first K effects."""
    hits = [np.real(np.trace(povm.effects[k] @ rho)) for k, rho in enumerate(states)]
    return float(1.0 - np.mean(hits))


def helstrom_error(rho0: np.ndarray, rho1: np.ndarray, prior0: float = 0.5) -> float:
    """Minimum error for discriminating two states: (1 - ||p0 rho0 - p1 rho1||_1) / 2."""
    diff = prior0 * np.asarray(rho0) - (1 - prior0) * np.asarray(rho1)
    return float(0.5 * (1.0 - np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2)).sum()))


# -- random binning over type classes ---------------------------------------------

@dataclass
class BinningParams:
    n: int
    delta: float
    eta: float
    rate: float
    chi_n: float
    types: list[tuple[int, ...]]
    chi_b: list[float]
    chi_e: list[float]
    L: list[int]
    S: list[int]
    M: int
    log: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n, "delta": self.delta, "eta": self.eta, "rate": self.rate, "chi_n": self.chi_n,
            "m": self.M,
            "types": [{"counts": list(t), "chi_b": cb, "chi_e": ce, "l": l, "s": s}
                      for t, cb, ce, l, s in zip(self.types, self.chi_b, self.chi_e, self.L, self.S)],
            "log": list(self.log),
        }


def cartesian_family(source: CompoundSource, group_tol: float = DEFAULT_GROUP_TOL):
    """(Q, V): distinct sender marginals and distinct channels of the source."""
    qs = [g.p for g in source.groups(group_tol)]
    chans: list[CqChannel] = []
    for s in source.states:
        if not any(np.allclose(s.channel.outputs, c.outputs, atol=1e-12) for c in chans):
            chans.append(s.channel)
    return qs, chans


def _chi_b(lam, chans) -> float:
    return min(holevo_chi(lam, c.b) for c in chans)


def _chi_e(lam, chans) -> float:
    return max(holevo_chi(lam, c.e) for c in chans)


def binning_parameters(source: CompoundSource, n: int, delta: float, eta: float) -> BinningParams:
    """Type set within eta of Q and the per-type list sizes L, S and the key size M."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    if not 0 <= eta <= 2:
        raise ValidationError("eta must lie in [0, 2]")
    qs, chans = cartesian_family(source)
    rate = min(_chi_b(q, chans) - _chi_e(q, chans) for q in qs)
    types = [t for t in enumerate_types(n, source.alphabet_size)
             if min(np.abs(t.distribution - q).sum() for q in qs) <= eta + 1e-12]
    log = []
    if not types:
        raise ValidationError(f"no type of length {n} lies within eta={eta} of the sender marginals")
    cb = [_chi_b(t.distribution, chans) for t in types]
    ce = [_chi_e(t.distribution, chans) for t in types]
    chi = [b - e for b, e in zip(cb, ce)]
    chi_n = min(chi)
    M = math.floor(2.0 ** (n * (rate - delta))) if rate - delta > 0 else 1
    M = max(M, 1)
    Ls, Ss = [], []
    for t, b, e, c in zip(types, cb, ce, chi):
        h = shannon_entropy(t.distribution)
        Ls.append(max(1, math.floor(2.0 ** (n * (h - b + 0.75 * delta)))))
        Ss.append(max(1, math.ceil(2.0 ** (n * (e + c - chi_n + 0.75 * delta)))))
    if rate - delta <= 0:
        log.append(f"rate {rate:.6g} does not exceed delta; key size set to 1")
    return BinningParams(n, float(delta), float(eta), float(rate), float(chi_n),
                         [t.counts for t in types], cb, ce, Ls, Ss, M, log)


def _uniform_on_type(counts: Sequence[int], size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` i.i.d. words uniform on the type class, as (size, n) letter arrays."""
    base = np.repeat(np.arange(len(counts)), counts)
    return rng.permuted(np.tile(base, (size, 1)), axis=1)


def random_binning_protocol(source: CompoundSource, n: int, delta: float, eta: float | None = None,
                            seed: int = 0, budget: int = STATE_BUDGET) -> tuple[Protocol, BinningParams]:
    """Random binning over type classes with PGM decoding of each (type, l) sub-codebook.

    The public message is (type, l); codewords U_lms are uniform on the type
    class, the sender picks uniformly among the cells containing its word and
    forgets s.  Words without a cell, and words whose type is not retained,
    go to the first public message with key 1.  The decoder for (type, l) is
    the PGM of all (m, s) codewords under the average B channel, with effects
    summed over s and the remainder effect attached to key 1.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    eta = default_eta(n) if eta is None else float(eta)
    params = binning_parameters(source, n, delta, eta)
    a = source.alphabet_size
    words = a ** n
    _, chans = cartesian_family(source)
    Ltot, M = sum(params.L), params.M
    diagonal = all(c.b.is_diagonal() for c in chans)
    db = source.dim_b ** n
    need = words * Ltot * M + Ltot * M * (db if diagonal else db * db)
    if need > budget:
        raise ResourceError(f"binning protocol needs about {need} amplitudes, budget is {budget}")

    counts = np.zeros((Ltot, M, words))
    offset = 0
    for j, (tc, Lj, Sj) in enumerate(zip(params.types, params.L, params.S)):
        rng = stream(seed, "random_binning", j)
        size = Lj * M * Sj
        cw = sequence_index(_uniform_on_type(tc, size, rng), a).reshape(Lj, M, Sj)
        for l in range(Lj):
            for m in range(M):
                counts[offset + l, m] += np.bincount(cw[l, m], minlength=words)
        offset += Lj

    total = counts.sum(axis=(0, 1))
    t = np.zeros((words, Ltot, M))
    covered = total > 0
    t[covered] = np.transpose(counts[:, :, covered], (2, 0, 1)) / total[covered, None, None]
    t[~covered, 0, 0] = 1.0
    retained = set(params.types)
    all_types = [tuple(np.bincount(w, minlength=a)) for w in sequences(a, n)]
    empty = sum(1 for x in range(words) if not covered[x] and all_types[x] in retained)
    params.log.append(f"{empty} words of retained types fall in empty cells and go to (l, m) = (1, 1)")
    params.log.append(f"{int(sum(1 for x in range(words) if all_types[x] not in retained))} words of other types go to (l, m) = (1, 1)")
    params.log.append("decoders: per-(type, l) PGM with effects summed over s")

    if diagonal:
        wb = np.mean([word_diagonals(_diag_of(c.b), n) for c in chans], axis=0)
        dec = np.zeros((Ltot, M, db))
        for l in range(Ltot):
            rho_m = counts[l] @ wb  # sum over s of codeword states for each key m
            eff = pgm_effects_diag(rho_m)
            dec[l] = eff[:M]
            dec[l, 0] += eff[M]
    else:
        wb = np.mean([word_outputs(c.b.outputs, n) for c in chans], axis=0)
        dec = np.zeros((Ltot, M, db, db), dtype=complex)
        for l in range(Ltot):
            rho_m = np.einsum("mx,xij->mij", counts[l], wb)
            eff = pgm_effects(rho_m)
            dec[l] = eff[:M]
            dec[l, 0] += eff[M]
    proto = Protocol(n, a, t, dec, diagonal=diagonal, log=tuple(params.log))
    return proto, params


def default_eta(n: int) -> float:
    """Smallest blow-up radius allowed at blocklength n (1/n <= 2 eta)."""
    return 1.0 / (2 * n)


# -- constant composition -----------------------------------------------------------

def constant_composition_convert(codebook, lam, theta: float) -> dict:
    """Keep the first M codewords of type ``lam`` out of an i.i.d. codebook.

    M = floor(theta (n+1)^{-|X|} M'), guarded to at least 1.  When fewer than
    M codewords have the type, the codebook is filled with a fixed word of
    that type and ``fallback`` is set.
    """
    if not 0 < theta < 1:
        raise ValidationError("theta must lie in (0, 1)")
    cb = np.asarray(codebook, dtype=np.int64)
    if cb.ndim != 2:
        raise ValidationError("codebook must be a 2-d array of letters")
    m_prime, n = cb.shape
    counts = _type_counts(lam, n)
    a = len(counts)
    raw = math.floor(theta * (n + 1) ** (-a) * m_prime)
    M = max(1, raw)
    typical = np.all(np.stack([np.sum(cb == x, axis=1) for x in range(a)], axis=1) == np.asarray(counts), axis=1)
    kept = cb[typical]
    fallback = kept.shape[0] < M
    if fallback:
        filler = np.repeat(np.arange(a), counts)
        out = np.tile(filler, (M, 1))
    else:
        out = kept[:M]
    return {"codebook": out, "m": M, "m_unguarded": raw, "typical_count": int(typical.sum()), "fallback": bool(fallback)}


def _type_counts(lam, n: int) -> tuple[int, ...]:
    if isinstance(lam, TypeClass):
        return lam.counts
    lam = np.asarray(lam, dtype=float)
    counts = np.rint(lam * n).astype(int)
    if np.max(np.abs(counts - lam * n)) > 1e-9 or counts.sum() != n:
        raise ValidationError(f"{lam.tolist()} is not a type of length {n}")
    return tuple(int(c) for c in counts)


def constant_composition_fallback_rate(lam, n: int, m_prime: int, theta: float, seeds: int = 100,
                                       seed: int = 0) -> dict:
    """Fraction of i.i.d. lam^n codebooks for which the conversion falls back."""
    lam_arr = np.asarray(lam, dtype=float)
    _type_counts(lam_arr, n)
    falls = 0
    last = None
    for i in range(seeds):
        rng = stream(seed, "constant_composition", i)
        cb = rng.choice(lam_arr.size, size=(m_prime, n), p=lam_arr)
        last = constant_composition_convert(cb, lam_arr, theta)
        falls += last["fallback"]
    return {"m": last["m"], "m_unguarded": last["m_unguarded"], "seeds": seeds, "fallback_rate": falls / seeds}


# -- two-phase protocol -----------------------------------------------------------

def estimation_split(n: int) -> tuple[int, int]:
    a = math.isqrt(n - 1) + 1 if n > 0 else 0  # ceil(sqrt(n))
    return a, n - a


def classify_type(dist: np.ndarray, cells: Sequence[np.ndarray]) -> int:
    """Nearest cell in l1 distance; ties go to the lowest index."""
    d = [np.abs(dist - c).sum() for c in cells]
    return int(np.argmin(d))


def two_phase_protocol(source: CompoundSource, n: int, per_cell: Sequence[Protocol],
                       cells: Sequence[np.ndarray] | None = None) -> Protocol:
    """Estimate the marginal on the first ceil(sqrt n) letters, then run that cell's protocol.

    ``cells`` defaults to the source's group marginals; ``per_cell[c]`` must be
    a protocol at blocklength n - ceil(sqrt n) and all must share M.  The
    public message is (cell, l).
    """
    if n < 4:
        raise ValidationError("two-phase protocols need n >= 4")
    a_n, b_n = estimation_split(n)
    cells = [g.p for g in source.groups()] if cells is None else [np.asarray(c, float) for c in cells]
    if len(per_cell) != len(cells):
        raise ValidationError(f"{len(cells)} cells but {len(per_cell)} protocols")
    k = source.alphabet_size
    reach = {classify_type(t.distribution, cells) for t in enumerate_types(a_n, k)}
    for c in reach:
        if per_cell[c] is None:
            raise ValidationError(f"cell {c} is reachable but has no protocol")
    protos = [p for p in per_cell if p is not None]
    M = protos[0].M
    if any(p.n != b_n or p.M != M or p.alphabet_size != k for p in protos):
        raise ValidationError(f"every cell protocol must have blocklength {b_n}, common M and alphabet {k}")
    diagonal = all(p.diagonal for p in protos)
    Lmax = max(p.L for p in protos)
    C = len(cells)
    first = sequences(k, a_n)
    labels = np.array([classify_type(np.bincount(w, minlength=k) / a_n, cells) for w in first])
    wb = protos[0].dim_b
    t = np.zeros((k ** a_n, k ** b_n, C * Lmax, M))
    for c in range(C):
        if per_cell[c] is None:
            continue
        rows = labels == c
        t[rows, :, c * Lmax:c * Lmax + per_cell[c].L, :] = per_cell[c].t_matrix[None]
    t = t.reshape(k ** n, C * Lmax, M)
    da = source.dim_b ** a_n
    if diagonal:
        dec = np.zeros((C * Lmax, M, da * wb))
        dec[:, 0] = 1.0
        for c in range(C):
            if per_cell[c] is None:
                continue
            for l in range(per_cell[c].L):
                dec[c * Lmax + l] = np.kron(np.ones(da), per_cell[c].decoders[l])
    else:
        eye = np.eye(da * wb)
        dec = np.zeros((C * Lmax, M, da * wb, da * wb), dtype=complex)
        dec[:, 0] = eye
        for c in range(C):
            if per_cell[c] is None:
                continue
            d = per_cell[c].decoders if not per_cell[c].diagonal else np.einsum(
                "lmi,ij->lmij", per_cell[c].decoders, np.eye(wb))
            for l in range(per_cell[c].L):
                dec[c * Lmax + l] = np.stack([np.kron(np.eye(da), d[l, m]) for m in range(M)])
    log = (f"estimation on a_n={a_n} letters, protocol on b_n={b_n} letters", f"{C} cells")
    return Protocol(n, k, t, dec, diagonal=diagonal, log=log)


def misclassification_check(cells: Sequence[np.ndarray], n: int) -> list[dict]:
    """Exact probability that the first ceil(sqrt n) letters are assigned to a wrong cell.

    Ties count as errors.  The bound is the typical-set tail 2^(-a_n c d^2)
    with d = (min distance to another cell) / (2|X|): a wrong assignment
    needs some letter frequency to move by at least d.
    """
    a_n, _ = estimation_split(n)
    cells = [np.asarray(c, dtype=float) for c in cells]
    k = cells[0].size
    out = []
    for ci, p in enumerate(cells):
        others = [np.abs(p - q).sum() for j, q in enumerate(cells) if j != ci]
        d = min(others) / (2 * k) if others else math.inf
        prob = 0.0
        for t in enumerate_types(a_n, k):
            dists = [np.abs(t.distribution - q).sum() for q in cells]
            mine = dists[ci]
            if any(dj <= mine + 1e-12 for j, dj in enumerate(dists) if j != ci):
                prob += t.probability(p)
        bound = 2.0 ** (-a_n * TAIL_CONSTANT * d * d) if others else 0.0
        out.append({"cell": ci, "a_n": a_n, "misclassification": prob, "bound": bound, "holds": prob <= bound + 1e-15})
    return out


# -- Chernov experiments ------------------------------------------------------------

def matrix_chernov_experiment(w: CqChannel, lam, n: int, m_list: Sequence[int], eps: float,
                              trials: int, seed: int = 0, delta: float = 0.0,
                              budget: int = STATE_BUDGET) -> dict:
    """Empirical Pr(||(1/M) sum_m W^n(U_m) - sigma||_1 >= eps) for U_m uniform on T_lam^n.

    The bound 2 dim^n 2^(-M Delta_n eps) is reported with Delta_n exactly as
    printed (negative, which makes the bound vacuous) and with the sign
    corrected; both are reported as log2 values and as probabilities clipped
    to 1.
    """
    counts = _type_counts(lam, n)
    lam = np.asarray(counts, dtype=float) / n
    if eps <= 0 or trials < 1 or any(int(m) < 1 for m in m_list):
        raise ValidationError("need eps > 0, trials >= 1 and every M >= 1")
    members = sequences(w.alphabet_size, n)
    members = members[np.all(np.stack([np.sum(members == x, axis=1) for x in range(len(counts))], 1)
                             == np.asarray(counts), axis=1)]
    idx = sequence_index(members, w.alphabet_size)
    d = w.dim ** n
    diagonal = w.is_diagonal()
    if len(idx) * (d if diagonal else d * d) > budget:
        raise ResourceError("type-class output states exceed the state budget")
    if diagonal:
        states = word_diagonals(_diag_of(w), n)[idx]
    else:
        states = np.stack([w.word(s) for s in members])
    sigma = states.mean(axis=0)
    chi = holevo_chi(lam, w)
    delta_n = -(1.0 / (288 * math.log(2))) * 2.0 ** (-n * (chi - delta))
    rows = []
    for mi, M in enumerate(int(m) for m in m_list):
        rng = stream(seed, "matrix_chernov", mi)
        hits = 0
        for _ in range(trials):
            pick = np.bincount(rng.integers(0, len(idx), size=M), minlength=len(idx)) / M
            if diagonal:
                dev = np.abs(pick @ states - sigma).sum()
            else:
                diff = np.einsum("k,kij->ij", pick, states) - sigma
                dev = np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2)).sum()
            hits += dev >= eps
        log2_printed = 1 + n * math.log2(w.dim) - M * delta_n * eps
        log2_fixed = 1 + n * math.log2(w.dim) + M * delta_n * eps
        rows.append({
            "m": M, "empirical": float(hits / trials),
            "log2_bound_printed": log2_printed, "bound_printed": min(1.0, 2.0 ** min(log2_printed, 1.0)),
            "log2_bound_corrected": log2_fixed, "bound_corrected": min(1.0, 2.0 ** min(log2_fixed, 1.0)),
        })
    emp = [r["empirical"] for r in rows]
    return {"n": n, "eps": eps, "trials": trials, "chi": chi, "delta": delta, "delta_n": delta_n,
            "rows": rows, "nonincreasing": all(a >= b for a, b in zip(emp, emp[1:]))}


def classical_chernov_experiment(n: int, delta: float, mean: float, trials: int, seed: int = 0) -> dict:
    """Bernoulli(mean) samples: empirical Pr(average <= (1 - delta) mean) vs 2^(-n delta^2 mean^2 / ln 2)."""
    if n < 1 or trials < 1 or delta < 0 or not 0 <= mean <= 1:
        raise ValidationError("need n >= 1, trials >= 1, delta >= 0 and mean in [0, 1]")
    rng = stream(seed, "classical_chernov")
    sums = rng.binomial(n, mean, size=trials)
    threshold = n * (1 - delta) * mean
    empirical = float(np.mean(sums <= threshold + 1e-9))
    bound = 2.0 ** (-n * delta ** 2 * mean ** 2 / math.log(2))
    return {"n": n, "delta": delta, "mean": mean, "trials": trials, "empirical": empirical,
            "bound": bound, "holds": empirical <= bound}
