"""The single-letter key-rate functional K^(1) and its optimisation.

For a compound source the functional is

    min over sender marginals p of
        sup over chains T <- U <- Y of
            min_{members} I(U;B|T) - max_{members} I(U;E|T)

The inner min/max run over the finite group of members sharing p; the sup
over stochastic matrices is searched by multi-start coordinate ascent.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._rng import stream
from .exceptions import ValidationError
from .linalg import (DensityMatrix, _trusted, binary_entropy, unnormalized_entropy,
                     unnormalized_entropy_diag)
from .source import (DEFAULT_GROUP_TOL, CompoundSource, CqqState, MarginalGroup, holevo_chi,
                     tensor_extension)

MAX_DETERMINISTIC_STARTS = 256
MAX_CLIMBED_STRUCTURED = 32


@dataclass(frozen=True)
class MarkovPreprocessing:
    """Column-stochastic matrices P_{U|Y} (z x |Y|) and P_{T|U} (z' x z)."""

    p_u_given_y: np.ndarray
    p_t_given_u: np.ndarray

    def __post_init__(self):
        uy = np.asarray(self.p_u_given_y, dtype=float)
        tu = np.asarray(self.p_t_given_u, dtype=float)
        object.__setattr__(self, "p_u_given_y", uy)
        object.__setattr__(self, "p_t_given_u", tu)
        for name, m in (("P_U|Y", uy), ("P_T|U", tu)):
            if m.ndim != 2:
                raise ValidationError(f"{name} must be a matrix")
            if np.any(m < -1e-12) or np.max(np.abs(m.sum(axis=0) - 1.0)) > 1e-10:
                raise ValidationError(f"{name} columns must be probability vectors")
        if tu.shape[1] != uy.shape[0]:
            raise ValidationError(f"P_T|U expects {tu.shape[1]} U letters, P_U|Y produces {uy.shape[0]}")

    @property
    def z(self) -> int:
        return self.p_u_given_y.shape[0]

    @property
    def z_prime(self) -> int:
        return self.p_t_given_u.shape[0]

    @property
    def input_size(self) -> int:
        return self.p_u_given_y.shape[1]

    def joint_weights(self, p) -> np.ndarray:
        """w[t, u, y] = P(t|u) P(u|y) p(y)."""
        return self.p_t_given_u[:, :, None] * self.p_u_given_y[None, :, :] * np.asarray(p)[None, None, :]

    def to_json(self) -> dict:
        return {"p_u_given_y": self.p_u_given_y.tolist(), "p_t_given_u": self.p_t_given_u.tolist()}

    @classmethod
    def identity(cls, size: int, z_prime: int = 1) -> "MarkovPreprocessing":
        tu = np.zeros((z_prime, size))
        tu[0] = 1.0
        return cls(np.eye(size), tu)

    def tensor(self, other: "MarkovPreprocessing") -> "MarkovPreprocessing":
        """Product chain acting letter-wise on Y1 x Y2 (first letter most significant)."""
        return MarkovPreprocessing(np.kron(self.p_u_given_y, other.p_u_given_y),
                                   np.kron(self.p_t_given_u, other.p_t_given_u))


def apply_preprocessing(s: CqqState, gamma: MarkovPreprocessing) -> DensityMatrix:
    """sum_{t,u,y} P(t|u) P(u|y) p(y) |t><t| (x) |u><u| (x) V(y) on (T, U, B, E)."""
    if gamma.input_size != s.alphabet_size:
        raise ValidationError(f"preprocessing expects {gamma.input_size} letters, state has {s.alphabet_size}")
    w = gamma.joint_weights(s.p)
    zt, zu, d = gamma.z_prime, gamma.z, s.channel.dim
    blocks = np.einsum("tuy,yij->tuij", w, s.channel.outputs)
    data = np.zeros((zt, zu, d, zt, zu, d), dtype=complex)
    for t in range(zt):
        for u in range(zu):
            data[t, u, :, t, u, :] = blocks[t, u]
    n = zt * zu * d
    return _trusted(data.reshape(n, n), (zt, zu, s.dim_b, s.dim_e))


def _entropy_sum(blocks: np.ndarray, diagonal: bool) -> np.ndarray:
    return unnormalized_entropy_diag(blocks) if diagonal else unnormalized_entropy(blocks)


def _plogp(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log2(np.where(x > 0, x, 1.0)), 0.0)


class _GroupEvaluator:
    """Vectorised I(U;B|T) and I(U;E|T) for every member of one group.

    With w[t,u,y] the chain weights and rho_tu = sum_y w[t,u,y] V(y),

        I(U;X|T) = H(U|T) + sum_t S~(rho_t) - sum_{t,u} S~(rho_tu)

    where S~(A) = -tr A log A on unnormalised blocks.
    """

    def __init__(self, source: CompoundSource, group: MarginalGroup):
        self.p = np.asarray(group.p, dtype=float)
        self.sides = []
        for side in (0, 1):
            chans = [source.states[i].channel.factor(side) for i in group.members]
            diagonal = all(c.is_diagonal() for c in chans)
            outs = np.stack([c.outputs for c in chans])
            if diagonal:
                outs = np.real(np.einsum("kyii->kyi", outs))
            self.sides.append((outs, diagonal))
        self.evaluations = 0

    def informations(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """w has shape (C, z', z, Y); returns (C, K) arrays for the B and E sides."""
        self.evaluations += w.shape[0]
        p_tu = w.sum(axis=-1)
        p_t = p_tu.sum(axis=-1)
        h_u_given_t = -_plogp(p_tu).sum(axis=(-1, -2)) + _plogp(p_t).sum(axis=-1)
        out = []
        for outs, diagonal in self.sides:
            if diagonal:
                rho_tu = np.einsum("ctuy,kyi->cktui", w, outs)
            else:
                rho_tu = np.einsum("ctuy,kyij->cktuij", w, outs)
            rho_t = rho_tu.sum(axis=3)
            s_tu = _entropy_sum(rho_tu, diagonal).sum(axis=(-1, -2))
            s_t = _entropy_sum(rho_t, diagonal).sum(axis=-1)
            out.append(h_u_given_t[:, None] + s_t - s_tu)
        return out[0], out[1]

    def objective(self, w: np.ndarray) -> np.ndarray:
        ib, ie = self.informations(w)
        return ib.min(axis=1) - ie.max(axis=1)

    def upper_bound(self) -> float:
        """min over members of chi(p, V_B): no chain can beat it."""
        w = np.diag(self.p)[None, None]  # U = Y, T trivial
        return float(self.informations(w)[0].min())


def conditional_information(p, outputs: np.ndarray, gamma: MarkovPreprocessing) -> float:
    """I(U;X|T) of the preprocessed cq state sum_y p(y)|y><y| (x) V(y)."""
    outs = np.asarray(outputs, dtype=complex)
    w = gamma.joint_weights(np.asarray(p, dtype=float))
    rho_tu = np.einsum("tuy,yij->tuij", w, outs)
    p_tu = w.sum(axis=-1)
    h = -_plogp(p_tu).sum() + _plogp(p_tu.sum(axis=1)).sum()
    return float(h + unnormalized_entropy(rho_tu.sum(axis=1)).sum() - unnormalized_entropy(rho_tu).sum())


def group_objective(source: CompoundSource, group: MarginalGroup, gamma: MarkovPreprocessing) -> float:
    ev = _GroupEvaluator(source, group)
    if gamma.input_size != ev.p.size:
        raise ValidationError("preprocessing input size does not match the source alphabet")
    return float(ev.objective(gamma.joint_weights(ev.p)[None])[0])


def group_informations(source: CompoundSource, group: MarginalGroup,
                       gamma: MarkovPreprocessing) -> tuple[np.ndarray, np.ndarray]:
    """Per-member I(U;B|T) and I(U;E|T) arrays."""
    ev = _GroupEvaluator(source, group)
    ib, ie = ev.informations(gamma.joint_weights(ev.p)[None])
    return ib[0], ie[0]


# -- optimiser ---------------------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    n = v.shape[0]
    u = -np.sort(-v, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, n + 1)[:, None]
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(v.shape[1])] / (rho + 1)
    w = np.maximum(v - theta, 0.0)
    return w[:, 0] if squeeze else w


def _deterministic(size_in: int, size_out: int, assignment: Sequence[int]) -> np.ndarray:
    m = np.zeros((size_out, size_in))
    m[np.asarray(assignment), np.arange(size_in)] = 1.0
    return m


def structured_starts(alphabet: int, z: int, z_prime: int, rng: np.random.Generator) -> list[MarkovPreprocessing]:
    """Identity-like and deterministic chains, each with a constant T."""
    t_const = _deterministic(z, z_prime, [0] * z)
    starts = [MarkovPreprocessing(_deterministic(alphabet, z, [y % z for y in range(alphabet)]), t_const)]
    total = z ** alphabet
    if total <= MAX_DETERMINISTIC_STARTS:
        maps = itertools.product(range(z), repeat=alphabet)
    else:
        maps = (tuple(rng.integers(0, z, size=alphabet)) for _ in range(MAX_DETERMINISTIC_STARTS))
    for a in maps:
        if len(set(a)) < 2:
            continue  # a constant U carries nothing
        starts.append(MarkovPreprocessing(_deterministic(alphabet, z, a), t_const))
    if z_prime > 1:
        t_id = _deterministic(z, z_prime, [u % z_prime for u in range(z)])
        starts.append(MarkovPreprocessing(starts[0].p_u_given_y, t_id))
    return starts


def random_start(alphabet: int, z: int, z_prime: int, rng: np.random.Generator) -> MarkovPreprocessing:
    uy = rng.dirichlet(np.ones(z), size=alphabet).T
    tu = rng.dirichlet(np.ones(z_prime), size=z).T
    return MarkovPreprocessing(uy, tu)


@dataclass
class AscentLog:
    start: str
    initial: float
    final: float
    sweeps: int


def coordinate_ascent(ev: _GroupEvaluator, gamma: MarkovPreprocessing, *, step: float = 0.5,
                      min_step: float = 1.0 / 64, tol: float = 1e-7, max_sweeps: int = 500,
                      budget: list | None = None) -> tuple[MarkovPreprocessing, float, int]:
    """Block coordinate ascent over the columns of both stochastic matrices.

    Each column is moved by transferring mass ``step`` between two letters and
    projecting back onto the simplex; all candidates of a column are scored in
    one batch and the best one is kept if it improves.  The step halves when a
    sweep gains less than ``tol``.
    """
    uy = gamma.p_u_given_y.copy()
    tu = gamma.p_t_given_u.copy()
    p = ev.p
    value = float(ev.objective((tu[:, :, None] * uy[None] * p)[None])[0])
    sweeps = 0
    while sweeps < max_sweeps and step >= min_step:
        if budget is not None and budget[0] <= 0:
            break
        sweeps += 1
        start_value = value
        for which, mat in (("uy", uy), ("tu", tu)):
            rows, cols = mat.shape
            if rows < 2:
                continue
            pairs = [(i, j) for i in range(rows) for j in range(rows) if i != j]
            for col in range(cols):
                cands = []
                for i, j in pairs:
                    c = mat[:, col].copy()
                    c[i] += step
                    c[j] -= step
                    cands.append(project_simplex(c))
                cands = np.array(cands)
                if which == "uy":
                    uys = np.repeat(uy[None], len(cands), axis=0)
                    uys[:, :, col] = cands
                    w = tu[None, :, :, None] * uys[:, None, :, :] * p
                else:
                    tus = np.repeat(tu[None], len(cands), axis=0)
                    tus[:, :, col] = cands
                    w = tus[:, :, :, None] * uy[None, None] * p
                vals = ev.objective(w)
                if budget is not None:
                    budget[0] -= len(cands)
                k = int(np.argmax(vals))
                if vals[k] > value + 1e-15:
                    value = float(vals[k])
                    mat[:, col] = cands[k]
        if value - start_value < tol:
            step /= 2
    return MarkovPreprocessing(uy, tu), value, sweeps


@dataclass
class GroupResult:
    p: np.ndarray
    members: tuple[int, ...]
    value: float
    raw_value: float
    best: MarkovPreprocessing
    upper_bound: float
    trace: list[AscentLog] = field(default_factory=list)


@dataclass
class RateResult:
    """Outcome of a K^(1) search; ``value`` is the min over groups, clamped at 0."""

    value: float
    per_group: list[GroupResult]
    converged: bool
    evaluations: int
    k: int = 1

    @property
    def best_preprocessing(self) -> MarkovPreprocessing:
        return min(self.per_group, key=lambda g: g.value).best

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "k": self.k,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "best_preprocessing": self.best_preprocessing.to_json(),
            "per_group": [
                {
                    "p": g.p.tolist(),
                    "members": list(g.members),
                    "value": g.value,
                    "raw_value": g.raw_value,
                    "upper_bound": g.upper_bound,
                    "best_preprocessing": g.best.to_json(),
                    "optimizer_trace": [
                        {"start": t.start, "initial": t.initial, "final": t.final, "sweeps": t.sweeps}
                        for t in g.trace
                    ],
                }
                for g in self.per_group
            ],
        }


def _optimize_group(source: CompoundSource, group: MarginalGroup, gidx: int, z: int, z_prime: int,
                    restarts: int, seed: int, budget: int | None, extra: Sequence[MarkovPreprocessing],
                    max_sweeps: int, tol: float, n_jobs: int | None) -> tuple[GroupResult, bool, int]:
    ev = _GroupEvaluator(source, group)
    alphabet = ev.p.size
    ub = float(ev.upper_bound())
    rng0 = stream(seed, f"optimize_k1/structured/{gidx}")
    starts: list[tuple[str, MarkovPreprocessing]] = [(f"init{i}", g) for i, g in enumerate(extra)]
    starts += [(f"structured{i}", g) for i, g in enumerate(structured_starts(alphabet, z, z_prime, rng0))]
    starts += [(f"random{r}", random_start(alphabet, z, z_prime, stream(seed, f"optimize_k1/restart/{gidx}", r)))
               for r in range(restarts)]
    for name, g in starts:
        if g.z != z or g.z_prime != z_prime or g.input_size != alphabet:
            raise ValidationError(f"start {name} has sizes ({g.z}, {g.z_prime}) but the search uses ({z}, {z_prime})")

    # score every start, then climb from each in schedule order.  Results are
    # folded in start order whatever the worker count, so early stopping and the
    # evaluation budget give the same answer for every schedule.
    w0 = np.stack([g.joint_weights(ev.p) for _, g in starts])
    initial = ev.objective(w0)
    scored = len(starts)
    # climb only from the best-scoring structured starts (stable, so ties keep their order)
    structured = [i for i, (name, _) in enumerate(starts) if name.startswith("structured")]
    if len(structured) > MAX_CLIMBED_STRUCTURED:
        ranked = sorted(structured, key=lambda i: -initial[i])[:MAX_CLIMBED_STRUCTURED]
        drop = set(structured) - set(ranked)
        keep = [i for i in range(len(starts)) if i not in drop]
        starts = [starts[i] for i in keep]
        initial = initial[keep]
    best_val, best_g = -math.inf, starts[0][1]
    trace: list[AscentLog] = []
    converged = True

    def climb(i):
        name, g = starts[i]
        # the group evaluator is stateless apart from a counter
        local = _GroupEvaluator.__new__(_GroupEvaluator)
        local.__dict__.update(ev.__dict__)
        local.evaluations = 0
        bud = [budget] if budget is not None else None
        g2, v2, sweeps = coordinate_ascent(local, g, tol=tol, max_sweeps=max_sweeps, budget=bud)
        return i, name, g2, v2, sweeps, local.evaluations

    jobs = 1 if n_jobs in (None, 1) else ((os.cpu_count() or 1) if n_jobs == -1 else int(n_jobs))
    chunk = max(1, 2 * jobs)
    evals, used_total, pos, stop = scored, 0, 0, False
    while pos < len(starts) and not stop:
        idx = range(pos, min(pos + chunk, len(starts)))
        pos = idx.stop
        if jobs == 1:
            results = [climb(i) for i in idx]
        else:
            results = Parallel(n_jobs=jobs, prefer="threads")(delayed(climb)(i) for i in idx)
        for i, name, g2, v2, sweeps, used in results:
            if best_val >= ub - 1e-12:
                stop = True  # already at the data-processing bound
                break
            if budget is not None and used_total >= budget:
                converged, stop = False, True
                break
            evals += used
            used_total += used
            trace.append(AscentLog(name, float(initial[i]), float(v2), sweeps))
            if v2 > best_val:
                best_val, best_g = v2, g2
    raw = float(best_val)
    return GroupResult(np.asarray(group.p), group.members, max(0.0, raw), raw, best_g, ub, trace), converged, evals


def optimize_k1(source: CompoundSource, z: int | None = None, z_prime: int = 2, restarts: int = 64,
                budget: int | None = None, seed: int = 0, init=None, max_sweeps: int = 500,
                tol: float = 1e-7, group_tol: float = DEFAULT_GROUP_TOL, n_jobs: int | None = None) -> RateResult:
    """Lower-bound K^(1) of a finite compound source for alphabet sizes (z, z').

    ``init`` adds starting chains: a list used for every group or a dict
    mapping group index to a list.
    """
    z = source.alphabet_size if z is None else int(z)
    if z < 1 or z_prime < 1:
        raise ValidationError("z and z' must be >= 1")
    if restarts < 0:
        raise ValidationError("restarts must be >= 0")
    groups = source.groups(group_tol)
    per_group, converged, evals = [], True, 0
    for gi, group in enumerate(groups):
        if isinstance(init, dict):
            extra = init.get(gi, [])
        else:
            extra = list(init or [])
        res, ok, used = _optimize_group(source, group, gi, z, z_prime, restarts, seed, budget, extra,
                                        max_sweeps, tol, n_jobs)
        per_group.append(res)
        converged &= ok
        evals += used
    value = min(g.value for g in per_group)
    return RateResult(value, per_group, converged, evals)


def multi_letter_rate(source: CompoundSource, k: int = 1, z: int | None = None, z_prime: int = 2,
                      restarts: int = 64, seed: int = 0, embed: RateResult | None = None,
                      max_dim: int = 4096, **kwargs) -> RateResult:
    """(1/k) K^(1)(I^{(x)k}).

    With ``embed`` (a k=1 result) each group's search also starts from the
    k-fold product of that group's best chain; this needs z >= z1^k and
    z' >= z1'^k, padded with unused letters otherwise.
    """
    if k not in (1, 2, 3):
        raise ValidationError("multi_letter_rate supports k in {1, 2, 3}")
    ext = tensor_extension(source, k, max_dim=max_dim)
    z = ext.alphabet_size if z is None else z
    init = kwargs.pop("init", None)
    if embed is not None and k > 1:
        init = dict(init or {})
        for gi, g in enumerate(embed.per_group):
            prod = g.best
            for _ in range(k - 1):
                prod = prod.tensor(g.best)
            init.setdefault(gi, []).append(_pad(prod, z, z_prime))
    res = optimize_k1(ext, z=z, z_prime=z_prime, restarts=restarts, seed=seed, init=init, **kwargs)
    scaled = [GroupResult(g.p, g.members, g.value / k, g.raw_value / k, g.best, g.upper_bound / k, g.trace)
              for g in res.per_group]
    return RateResult(res.value / k, scaled, res.converged, res.evaluations, k=k)


def _pad(gamma: MarkovPreprocessing, z: int, z_prime: int) -> MarkovPreprocessing:
    if gamma.z > z or gamma.z_prime > z_prime:
        raise ValidationError(f"cannot embed a ({gamma.z}, {gamma.z_prime}) chain into ({z}, {z_prime})")
    uy = np.zeros((z, gamma.input_size))
    uy[:gamma.z] = gamma.p_u_given_y
    tu = np.zeros((z_prime, z))
    tu[:gamma.z_prime, :gamma.z] = gamma.p_t_given_u
    tu[0, gamma.z:] = 1.0
    return MarkovPreprocessing(uy, tu)


def fano_term(mu: float) -> float:
    """h evaluated on [0, 1/2], extended by its maximum beyond."""
    return binary_entropy(min(max(mu, 0.0), 0.5))


def converse_value(source: CompoundSource, k: int, mu: float, log_m: float | None = None,
                   protocol=None, restarts: int = 4, seed: int = 0, rate: RateResult | None = None,
                   **kwargs) -> float:
    """K^(1)(I^{(x)k}) + 2 mu + mu log M + h(mu).

    A protocol at blocklength k with worst-case performance mu must satisfy
    ``log M <= converse_value``.  When ``protocol`` is given the search also
    starts from the chain it induces (U = (public message, key), T = public
    message), which is the chain the converse argument itself uses.
    """
    if mu < 0:
        raise ValidationError("mu must be nonnegative")
    if log_m is None:
        log_m = math.log2(protocol.M) if protocol is not None else 0.0
    if rate is None:
        ext = tensor_extension(source, k)
        if protocol is not None:
            from .protocol import induced_preprocessings
            init = induced_preprocessings(protocol, ext)
            any_g = next(iter(init.values()))[0]
            rate = optimize_k1(ext, z=any_g.z, z_prime=any_g.z_prime, restarts=restarts, seed=seed,
                               init=init, **kwargs)
        else:
            rate = optimize_k1(ext, restarts=restarts, seed=seed, **kwargs)
    return rate.value + 2 * mu + mu * log_m + fano_term(mu)


class KeyRateEstimator(BaseEstimator):
    """Estimator-style wrapper around :func:`optimize_k1` / :func:`multi_letter_rate`.

    ``fit(source)`` stores ``result_`` and ``value_``; ``score(source)``
    refits and returns the rate.
    """

    def __init__(self, z=None, z_prime=2, k=1, restarts=64, budget=None, max_sweeps=500, tol=1e-7,
                 group_tol=DEFAULT_GROUP_TOL, seed=0, n_jobs=None):
        self.z = z
        self.z_prime = z_prime
        self.k = k
        self.restarts = restarts
        self.budget = budget
        self.max_sweeps = max_sweeps
        self.tol = tol
        self.group_tol = group_tol
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, source: CompoundSource, y=None):
        from .validation import check_source

        source = check_source(source)
        self.result_ = multi_letter_rate(source, k=self.k, z=self.z, z_prime=self.z_prime,
                                         restarts=self.restarts, seed=self.seed, budget=self.budget,
                                         max_sweeps=self.max_sweeps, tol=self.tol,
                                         group_tol=self.group_tol, n_jobs=self.n_jobs)
        self.value_ = self.result_.value
        self.best_preprocessing_ = self.result_.best_preprocessing
        return self

    def score(self, source: CompoundSource, y=None) -> float:
        return self.fit(source).value_
