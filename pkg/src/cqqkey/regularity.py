"""Hausdorff distances between finite sets of states and regularity diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._rng import stream
from .exceptions import ResourceError, ValidationError
from .linalg import (DensityMatrix, _data, binary_entropy, conditional_entropy, random_state, state)
from .source import (DEFAULT_DIM_CAP, DEFAULT_GROUP_TOL, CompoundSource, CqChannel, coherify,
                     holevo_chi, marginal_sets)


def _stack(states) -> np.ndarray:
    return np.stack([_data(s) for s in states]).astype(complex)


def pairwise_trace_distances(a, b) -> np.ndarray:
    """D[i, j] = ||a_i - b_j||_1."""
    sa, sb = _stack(a), _stack(b)
    if sa.shape[1:] != sb.shape[1:]:
        raise ValidationError(f"dimension mismatch: {sa.shape[1]} vs {sb.shape[1]}")
    diff = sa[:, None] - sb[None]
    diff = (diff + np.conj(np.swapaxes(diff, -1, -2))) / 2
    return np.abs(np.linalg.eigvalsh(diff)).sum(axis=-1)


@dataclass(frozen=True)
class HausdorffReport:
    distance: float
    witness_pair: tuple[int, int]
    directed: tuple[float, float]


def hausdorff_distance(a, b) -> HausdorffReport:
    """max(sup_a inf_b, sup_b inf_a) of trace-norm distances; the witness attains the max-min."""
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("Hausdorff distance needs two nonempty sets")
    d = pairwise_trace_distances(a, b)
    ab_i = int(np.argmax(d.min(axis=1)))
    ba_j = int(np.argmax(d.min(axis=0)))
    ab, ba = float(d.min(axis=1)[ab_i]), float(d.min(axis=0)[ba_j])
    if ab >= ba:
        witness = (ab_i, int(np.argmin(d[ab_i])))
    else:
        witness = (int(np.argmin(d[:, ba_j])), ba_j)
    return HausdorffReport(max(ab, ba), witness, (ab, ba))


def _group_sets(source: CompoundSource, group_tol: float):
    groups = source.groups(group_tol)
    return groups, [marginal_sets(source, g) for g in groups]


def regularity_modulus(source: CompoundSource, delta_grid: Sequence[float],
                       group_tol: float = DEFAULT_GROUP_TOL) -> list[dict]:
    """For each delta: sup over group pairs with ||p - q||_1 < delta of d_H(AB) + d_H(AE)."""
    groups, sets = _group_sets(source, group_tol)
    pairs = []
    for i in range(len(groups)):
        for j in range(i, len(groups)):
            dist = float(np.abs(groups[i].p - groups[j].p).sum())
            if i == j:
                value = 0.0
            else:
                value = (hausdorff_distance(sets[i][0], sets[j][0]).distance
                         + hausdorff_distance(sets[i][1], sets[j][1]).distance)
            pairs.append((dist, value, i, j))
    rows = []
    for delta in delta_grid:
        cand = [(v, i, j) for dist, v, i, j in pairs if dist < delta]
        best = max(cand, default=(0.0, None, None))
        rows.append({"delta": float(delta), "modulus": best[0],
                     "witness": None if best[1] is None else [best[1], best[2]]})
    return rows


def parse_grid(spec: str) -> list[float]:
    """'a:b:k' -> k evenly spaced values from a to b inclusive."""
    try:
        a, b, k = spec.split(":")
        a, b, k = float(a), float(b), int(k)
    except ValueError:
        raise ValidationError(f"grid '{spec}' must look like start:stop:count") from None
    if k < 1:
        raise ValidationError("grid count must be ≥ 1")
    if k == 1:
        return [a]
    return [round(float(x), 12) for x in np.linspace(a, b, k)]


def _power(rho, n: int) -> np.ndarray:
    return reduce(np.kron, [_data(rho)] * n)


def tensor_power_hausdorff_check(a, b, n: int, max_dim: int = DEFAULT_DIM_CAP) -> dict:
    """d_H(a^{(x)n}, b^{(x)n}) <= n d_H(a, b) with powers taken element-wise."""
    d = _data(a[0]).shape[0]
    if d ** n > max_dim:
        raise ResourceError(f"dimension {d ** n} exceeds cap {max_dim}")
    base = hausdorff_distance(a, b).distance
    power = hausdorff_distance([_power(x, n) for x in a], [_power(x, n) for x in b]).distance
    return {"n": n, "distance": base, "power_distance": power, "bound": n * base,
            "holds": bool(power <= n * base + 1e-12)}


# -- cube covering ------------------------------------------------------------------

def real_embedding(rho) -> np.ndarray:
    m = _data(rho)
    return np.concatenate([m.real.ravel(), m.imag.ravel()])


@dataclass
class CubeCovering:
    delta: float
    cell_width: float
    n_axes: int
    assignment: dict[int, int]
    subfamilies: dict[int, tuple[int, ...]]
    cells: dict[int, frozenset]

    def to_json(self) -> dict:
        return {"delta": self.delta, "cell_width": self.cell_width, "n_axes": self.n_axes,
                "assignment": {str(k): v for k, v in self.assignment.items()},
                "subfamilies": {str(k): list(v) for k, v in self.subfamilies.items()}}


def cube_cover_decompose(source: CompoundSource, delta: float,
                         group_tol: float = DEFAULT_GROUP_TOL) -> CubeCovering:
    """Split the source into subfamilies whose groups occupy the same set of cubes.

    States are embedded in R^N by the real and imaginary parts of the
    coherified density matrix, and R^N is tiled by half-open cubes of side
    delta / N anchored at the componentwise minimum.  A cube has l1 diameter
    delta, which bounds the trace distance of two states inside it, so two
    groups hitting the same cubes are within delta in Hausdorff distance.
    """
    if delta <= 0:
        raise ValidationError("delta must be positive")
    emb = np.stack([real_embedding(coherify(s)) for s in source.states])
    n_axes = emb.shape[1]
    width = delta / n_axes
    origin = emb.min(axis=0)
    cell_of = [tuple(np.floor((v - origin) / width).astype(np.int64)) for v in emb]
    groups = source.groups(group_tol)
    cellsets: dict[frozenset, int] = {}
    assignment, subfamilies, cells = {}, {}, {}
    for g in groups:
        key = frozenset(cell_of[i] for i in g.members)
        sid = cellsets.setdefault(key, len(cellsets))
        cells[sid] = key
        for i in g.members:
            assignment[i] = sid
        subfamilies[sid] = tuple(sorted(subfamilies.get(sid, ()) + g.members))
    return CubeCovering(float(delta), width, n_axes, assignment, subfamilies, cells)


def covering_regularity(source: CompoundSource, covering: CubeCovering,
                        group_tol: float = DEFAULT_GROUP_TOL) -> list[dict]:
    """Per subfamily: the largest d_H(I_t, I_t') and d_H(AB) + d_H(AE) over group pairs."""
    out = []
    for sid, members in covering.subfamilies.items():
        sub = CompoundSource(tuple(source.states[i] for i in members))
        groups, sets = _group_sets(sub, group_tol)
        full = [[coherify(sub.states[i]) for i in g.members] for g in groups]
        worst_full = worst_sum = 0.0
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                worst_full = max(worst_full, hausdorff_distance(full[i], full[j]).distance)
                worst_sum = max(worst_sum, hausdorff_distance(sets[i][0], sets[j][0]).distance
                                + hausdorff_distance(sets[i][1], sets[j][1]).distance)
        out.append({"subfamily": sid, "members": list(members), "max_hausdorff": worst_full,
                    "max_marginal_sum": worst_sum,
                    "holds": bool(worst_full <= 2 * covering.delta + 1e-12 and worst_sum <= 4 * covering.delta + 1e-12)})
    return out


class CubeCover(BaseEstimator):
    """Estimator wrapper: ``fit(source)`` stores ``covering_``; ``predict`` returns subfamily labels."""

    def __init__(self, delta=0.1, group_tol=DEFAULT_GROUP_TOL):
        self.delta = delta
        self.group_tol = group_tol

    def fit(self, source, y=None):
        from .validation import check_source

        self.covering_ = cube_cover_decompose(check_source(source), self.delta, self.group_tol)
        return self

    def predict(self, source=None) -> np.ndarray:
        a = self.covering_.assignment
        return np.array([a[i] for i in range(len(a))])


# -- channel nets ------------------------------------------------------------------

def channel_distance(v: CqChannel, w: CqChannel) -> float:
    """max_x ||V(x) - W(x)||_1."""
    return float(pairwise_trace_distances(v.outputs, w.outputs).diagonal().max())


def greedy_net(v_set: Sequence[CqChannel], alpha: float) -> list[int]:
    """Farthest-point selection until every channel is within alpha of the net."""
    k = len(v_set)
    dist = np.array([[channel_distance(v_set[i], v_set[j]) if i != j else 0.0 for j in range(k)] for i in range(k)])
    net = [0]
    nearest = dist[0].copy()
    while nearest.max() > alpha:
        nxt = int(np.argmax(nearest))
        net.append(nxt)
        nearest = np.minimum(nearest, dist[nxt])
    return net


def channel_net(v_set: Sequence[CqChannel], alpha: float, n_check: int = 2, samples: int = 20,
                seed: int = 0) -> dict:
    """Greedy alpha-net of a finite channel set with the three net conditions checked."""
    if not 0 < alpha < 1 / math.e:
        raise ValidationError("alpha must lie in (0, 1/e)")
    if not v_set:
        raise ValidationError("channel set must be nonempty")
    a, dim = v_set[0].alphabet_size, v_set[0].dim
    net = greedy_net(v_set, alpha)
    log_card_bound = 2 * a * dim ** 2 * math.log2(6 / alpha)
    cond1 = bool(math.log2(len(net)) <= log_card_bound)

    rng = stream(seed, "channel_net")
    worst2 = 0.0
    for _ in range(samples):
        xs = rng.integers(0, a, size=n_check)
        for v in v_set:
            best = min(float(np.abs(np.linalg.eigvalsh(v.word(xs) - v_set[j].word(xs))).sum()) for j in net)
            worst2 = max(worst2, best)
    cond2 = bool(worst2 <= 2 * n_check * alpha + 1e-12)

    chi_gap = 0.0
    for _ in range(samples):
        p = rng.dirichlet(np.ones(a))
        full = min(holevo_chi(p, v) for v in v_set)
        sub = min(holevo_chi(p, v_set[j]) for j in net)
        chi_gap = max(chi_gap, abs(sub - full))
    chi_bound = 2 * alpha * math.log2(dim / (2 * alpha))
    cond3 = bool(chi_gap <= chi_bound + 1e-12)
    return {"net": net, "alpha": alpha, "size": len(net), "log2_size_bound": log_card_bound,
            "cardinality_ok": cond1, "max_word_distance": worst2, "word_bound": 2 * n_check * alpha,
            "word_ok": cond2, "max_chi_gap": chi_gap, "chi_bound": chi_bound, "chi_ok": cond3,
            "holds": bool(cond1 and cond2 and cond3)}


class ChannelNet(BaseEstimator, TransformerMixin):
    """``fit(channels)`` picks the net; ``transform(channels)`` gives distances to the nearest net element."""

    def __init__(self, alpha=0.1, n_check=2, samples=20, seed=0):
        self.alpha = alpha
        self.n_check = n_check
        self.samples = samples
        self.seed = seed

    def fit(self, channels, y=None):
        channels = list(channels)
        self.report_ = channel_net(channels, self.alpha, self.n_check, self.samples, self.seed)
        self.net_ = [channels[j] for j in self.report_["net"]]
        return self

    def transform(self, channels) -> np.ndarray:
        return np.array([[min(channel_distance(v, w) for w in self.net_)] for v in channels])


# -- continuity bounds ------------------------------------------------------------

def _h(eps: float) -> float:
    return binary_entropy(min(max(eps, 0.0), 0.5))


def _near(rho: np.ndarray, rng, scale: float) -> np.ndarray:
    tau = random_state(rho.shape[0], rng).data
    t = scale * rng.random()
    return (1 - t) * rho + t * tau


def _random_channel(a: int, d: int, rng) -> np.ndarray:
    return np.stack([random_state(d, rng).data for _ in range(a)])


def _l1_hausdorff(qs, qs2) -> float:
    d = np.array([[np.abs(q - r).sum() for r in qs2] for q in qs])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _set_rate(qs, chans_b, chans_e) -> float:
    return min(min(holevo_chi(q, c) for c in chans_b) - max(holevo_chi(q, c) for c in chans_e) for q in qs)


def alicki_fannes_instance(rng, da: int = 2, db: int = 2, near: bool = False) -> dict:
    rho = random_state(da * db, rng).data
    sigma = _near(rho, rng, 0.2) if near else random_state(da * db, rng).data
    eps = float(np.abs(np.linalg.eigvalsh(rho - sigma)).sum())
    lhs = abs(conditional_entropy(state(rho, (da, db)), [0], [1]) - conditional_entropy(state(sigma, (da, db)), [0], [1]))
    rhs = 4 * eps * math.log2(da) + 2 * _h(eps)
    return {"eps": eps, "lhs": lhs, "rhs": rhs}


def holevo_bound_1_instance(rng, a: int = 2, d: int = 2, near: bool = False) -> dict:
    v = CqChannel(_random_channel(a, d, rng), check=False)
    p = rng.dirichlet(np.ones(a))
    if near:
        q = (1 - 0.2 * rng.random()) * p + 0.2 * rng.random() * rng.dirichlet(np.ones(a))
        q = q / q.sum()
    else:
        q = rng.dirichlet(np.ones(a))
    eps = float(np.abs(p - q).sum())
    lhs = abs(holevo_chi(p, v) - holevo_chi(q, v))
    return {"eps": eps, "lhs": lhs, "rhs": 6 * eps * math.log2(d) + 2 * _h(eps)}


def holevo_bound_2_instance(rng, a: int = 2, db: int = 2, de: int = 2, near: bool = False) -> dict:
    from .source import CqChannel as _C

    chans = [_random_channel(a, db * de, rng) for _ in range(int(rng.integers(1, 4)))]
    cb, ce = [], []
    for c in chans:
        t = c.reshape(a, db, de, db, de)
        cb.append(_C(np.einsum("xiaja->xij", t), check=False))
        ce.append(_C(np.einsum("xaiaj->xij", t), check=False))
    qs = [rng.dirichlet(np.ones(a)) for _ in range(int(rng.integers(1, 4)))]
    if near:
        qs2 = []
        for q in qs:
            r = q + 0.1 * rng.normal(size=a) * rng.random()
            r = np.clip(r, 1e-9, None)
            qs2.append(r / r.sum())
    else:
        qs2 = [rng.dirichlet(np.ones(a)) for _ in range(int(rng.integers(1, 4)))]
    eps = _l1_hausdorff(qs, qs2)
    lhs = abs(_set_rate(qs, cb, ce) - _set_rate(qs2, cb, ce))
    return {"eps": eps, "lhs": lhs, "rhs": 6 * eps * math.log2(db * de) + 4 * _h(eps)}


def fannes_cont_mut_instance(rng, a: int = 2, d: int = 2, z: int = 2, zt: int = 2, near: bool = False) -> dict:
    from .rates import MarkovPreprocessing, conditional_information

    p = rng.dirichlet(np.ones(a))
    v = _random_channel(a, d, rng)
    if near:
        t = 0.2 * rng.random()
        q = (1 - t) * p + t * rng.dirichlet(np.ones(a))
        w = np.stack([_near(v[y], rng, 0.2) for y in range(a)])
    else:
        q = rng.dirichlet(np.ones(a))
        w = _random_channel(a, d, rng)
    gamma = MarkovPreprocessing(rng.dirichlet(np.ones(z), size=a).T, rng.dirichlet(np.ones(zt), size=z).T)
    delta = float(sum(np.abs(np.linalg.eigvalsh(p[y] * v[y] - q[y] * w[y])).sum() for y in range(a)))
    lhs = abs(conditional_information(p, v, gamma) - conditional_information(q, w, gamma))
    rhs = 8 * delta * math.log2(z * d) + 6 * _h(delta)
    return {"eps": delta, "lhs": lhs, "rhs": rhs}


CONTINUITY_CHECKS = {
    "alicki_fannes": alicki_fannes_instance,
    "holevo_bound_1": holevo_bound_1_instance,
    "holevo_bound_2": holevo_bound_2_instance,
    "fannes_cont_mut": fannes_cont_mut_instance,
}


def continuity_checks(samples: int | dict = 1000, seed: int = 0, checks: Sequence[str] | None = None) -> list[dict]:
    """Monte-Carlo sweep of the continuity bounds; violations are counted, never raised.

    Half of the instances are independent random pairs, the other half small
    perturbations, where the bounds are tightest.
    """
    names = list(CONTINUITY_CHECKS) if checks is None else list(checks)
    rows = []
    for name in names:
        if name not in CONTINUITY_CHECKS:
            raise ValidationError(f"unknown continuity check '{name}'")
        count = samples[name] if isinstance(samples, dict) else samples
        if count < 1:
            raise ValidationError("sample counts must be ≥ 1")
        worst_slack, violations = math.inf, 0
        for i in range(count):
            inst = CONTINUITY_CHECKS[name](stream(seed, f"continuity/{name}", i), near=bool(i % 2))
            slack = float(inst["rhs"] - inst["lhs"])
            worst_slack = min(worst_slack, slack)
            violations += int(slack < -1e-9)
        rows.append({"check": name, "samples": count, "violations": violations, "min_slack": worst_slack,
                     "holds": violations == 0})
    return rows
