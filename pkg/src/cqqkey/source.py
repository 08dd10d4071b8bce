"""cqq states, compound sources and their marginals."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .exceptions import ResourceError, ValidationError
from .linalg import (DensityMatrix, _trusted, check_distribution, entropy_of_spectrum,
                     is_hermitian, spectrum, von_neumann_entropy)

DEFAULT_GROUP_TOL = 1e-9
DEFAULT_DIM_CAP = 4096


def _partial_trace_stack(stack: np.ndarray, dims: tuple[int, int], keep: int) -> np.ndarray:
    """Trace one factor out of a stack of bipartite operators."""
    n, d0, d1 = stack.shape[0], dims[0], dims[1]
    t = stack.reshape(n, d0, d1, d0, d1)
    if keep == 0:
        return np.einsum("xaibi->xab", t)
    return np.einsum("xaiaj->xij", t)


@dataclass(frozen=True)
class CqChannel:
    """Letter-wise output states ``outputs[x]`` on a space with factor ``dims``."""

    outputs: np.ndarray
    dims: tuple[int, ...] = ()
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        out = np.asarray(self.outputs, dtype=complex)
        if out.ndim != 3 or out.shape[1] != out.shape[2]:
            raise ValidationError("channel outputs must be a stack of square matrices")
        object.__setattr__(self, "outputs", out)
        dims = tuple(int(d) for d in self.dims) if self.dims else (out.shape[1],)
        object.__setattr__(self, "dims", dims)
        if int(np.prod(dims)) != out.shape[1]:
            raise ValidationError(f"output dims {dims} do not multiply to {out.shape[1]}")
        if self.check:
            for x, rho in enumerate(out):
                if not is_hermitian(rho) or abs(np.trace(rho) - 1) > 1e-10 or spectrum(rho).min() < -1e-10:
                    raise ValidationError(f"channel output for letter {x} is not a density matrix")

    @property
    def alphabet_size(self) -> int:
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.outputs.shape[1]

    def factor(self, which: int) -> "CqChannel":
        """Reduced channel on one factor of a bipartite output (0 = B, 1 = E)."""
        if len(self.dims) != 2:
            raise ValidationError("factor() needs a bipartite output")
        red = _partial_trace_stack(self.outputs, self.dims, which)
        return CqChannel(red, (self.dims[which],), check=False)

    @property
    def b(self) -> "CqChannel":
        return self.factor(0)

    @property
    def e(self) -> "CqChannel":
        return self.factor(1)

    def is_diagonal(self, tol: float = 1e-14) -> bool:
        off = self.outputs.copy()
        idx = np.arange(self.dim)
        off[:, idx, idx] = 0
        return bool(np.abs(off).max(initial=0.0) <= tol)

    def word(self, xs: Sequence[int]) -> np.ndarray:
        """Product output V(x1) (x) ... (x) V(xn) for a single-factor channel."""
        return reduce(np.kron, [self.outputs[x] for x in xs])


def channel(outputs, dims: Sequence[int] | None = None) -> CqChannel:
    return CqChannel(np.asarray(outputs, dtype=complex), tuple(dims) if dims else ())


@dataclass(frozen=True)
class CqqState:
    """Sender distribution ``p`` with a cq channel to the joint (B, E) system."""

    p: np.ndarray
    channel: CqChannel

    def __post_init__(self):
        p = check_distribution(self.p)
        object.__setattr__(self, "p", p)
        if p.size != self.channel.alphabet_size:
            raise ValidationError(
                f"distribution has {p.size} letters, channel has {self.channel.alphabet_size}")
        if len(self.channel.dims) != 2:
            raise ValidationError("cqq states need a bipartite (B, E) channel output")

    @property
    def alphabet_size(self) -> int:
        return self.p.size

    @property
    def dim_b(self) -> int:
        return self.channel.dims[0]

    @property
    def dim_e(self) -> int:
        return self.channel.dims[1]


def coherify(s: CqqState) -> DensityMatrix:
    """sum_x p(x) |x><x| (x) V(x) on subsystems (A, B, E)."""
    k, d = s.alphabet_size, s.channel.dim
    data = np.zeros((k, d, k, d), dtype=complex)
    for x in range(k):
        data[x, :, x, :] = s.p[x] * s.channel.outputs[x]
    return _trusted(data.reshape(k * d, k * d), (k, s.dim_b, s.dim_e))


def cq_state(p, v: CqChannel) -> DensityMatrix:
    """sum_x p(x) |x><x| (x) V(x) for a channel with a single output factor."""
    p = np.asarray(p, dtype=float)
    k, d = p.size, v.dim
    data = np.zeros((k, d, k, d), dtype=complex)
    for x in range(k):
        data[x, :, x, :] = p[x] * v.outputs[x]
    return _trusted(data.reshape(k * d, k * d), (k,) + v.dims)


def holevo_chi(p, v: CqChannel) -> float:
    """chi(p, V) = S(sum_x p(x) V(x)) - sum_x p(x) S(V(x))."""
    p = check_distribution(p)
    if p.size != v.alphabet_size:
        raise ValidationError(f"distribution has {p.size} letters, channel has {v.alphabet_size}")
    avg = np.einsum("x,xij->ij", p, v.outputs)
    spec = spectrum(v.outputs)
    inner = sum(px * entropy_of_spectrum(w) for px, w in zip(p, spec) if px > 0)
    return von_neumann_entropy(avg) - inner


@dataclass(frozen=True)
class MarginalGroup:
    p: np.ndarray
    members: tuple[int, ...]


@dataclass(frozen=True)
class CompoundSource:
    """A finite list of cqq states sharing alphabet and (dim_B, dim_E)."""

    states: tuple[CqqState, ...]

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise ValidationError("a compound source needs at least one state")
        first = states[0]
        for i, s in enumerate(states):
            if s.alphabet_size != first.alphabet_size:
                raise ValidationError(f"state {i}: alphabet size {s.alphabet_size} != {first.alphabet_size}")
            if s.channel.dims != first.channel.dims:
                raise ValidationError(f"state {i}: output dims {s.channel.dims} != {first.channel.dims}")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, i: int) -> CqqState:
        return self.states[i]

    @property
    def alphabet_size(self) -> int:
        return self.states[0].alphabet_size

    @property
    def dim_b(self) -> int:
        return self.states[0].dim_b

    @property
    def dim_e(self) -> int:
        return self.states[0].dim_e

    def groups(self, tol: float = DEFAULT_GROUP_TOL) -> list[MarginalGroup]:
        return group_by_sender_marginal(self, tol)


def group_by_sender_marginal(source: CompoundSource, tol: float = DEFAULT_GROUP_TOL) -> list[MarginalGroup]:
    """Partition members by sender marginal.

    A member joins the first group whose every member is within ``tol`` in
    l1 distance, so pairwise distances inside a group never exceed ``tol``.
    """
    if tol < 0:
        raise ValidationError("grouping tolerance must be nonnegative")
    buckets: list[list[int]] = []
    for i, s in enumerate(source.states):
        for bucket in buckets:
            if all(np.abs(s.p - source.states[j].p).sum() <= tol for j in bucket):
                bucket.append(i)
                break
        else:
            buckets.append([i])
    return [MarginalGroup(source.states[b[0]].p, tuple(b)) for b in buckets]


def marginal_sets(source: CompoundSource, group: MarginalGroup) -> tuple[list[DensityMatrix], list[DensityMatrix]]:
    """The sets I_p^{AB} and I_p^{AE} of a group."""
    ab, ae = [], []
    for i in group.members:
        s = source.states[i]
        ab.append(cq_state(s.p, s.channel.b))
        ae.append(cq_state(s.p, s.channel.e))
    return ab, ae


def _reorder_bipartite_power(out: np.ndarray, db: int, de: int, k: int) -> np.ndarray:
    """(B1 E1 B2 E2 ...) -> (B1 B2 ... E1 E2 ...) for a single operator."""
    t = out.reshape([db, de] * k * 2)
    rows = [2 * i for i in range(k)] + [2 * i + 1 for i in range(k)]
    perm = rows + [2 * k + r for r in rows]
    d = (db * de) ** k
    return t.transpose(perm).reshape(d, d)


def tensor_extension(source: CompoundSource, k: int, max_dim: int = DEFAULT_DIM_CAP) -> CompoundSource:
    """Replace each member by its k-fold power: alphabet X^k, p^k, V^k."""
    if k < 1:
        raise ValidationError("tensor_extension needs k >= 1")
    if k == 1:
        return source
    a, db, de = source.alphabet_size, source.dim_b, source.dim_e
    total = (a * db * de) ** k
    if total > max_dim:
        raise ResourceError(f"k={k} extension has total dimension {total} > cap {max_dim}")
    words = list(itertools.product(range(a), repeat=k))
    new_states = []
    for s in source.states:
        p = np.array([np.prod([s.p[x] for x in w]) for w in words])
        outs = np.stack([
            _reorder_bipartite_power(reduce(np.kron, [s.channel.outputs[x] for x in w]), db, de, k)
            for w in words])
        new_states.append(CqqState(p / p.sum(), CqChannel(outs, (db ** k, de ** k), check=False)))
    return CompoundSource(tuple(new_states))


# -- JSON ------------------------------------------------------------------

SOURCE_SCHEMA = {
    "type": "object",
    "required": ["alphabet", "dimB", "dimE", "states"],
    "properties": {
        "alphabet": {"type": "integer", "minimum": 1},
        "dimB": {"type": "integer", "minimum": 1},
        "dimE": {"type": "integer", "minimum": 1},
        "states": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["p", "V"],
                "properties": {
                    "p": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    "V": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["re"],
                            "properties": {
                                "re": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                                "im": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                            },
                        },
                    },
                },
            },
        },
    },
}


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def matrix_from_json(obj: dict) -> np.ndarray:
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
    if re.shape != im.shape:
        raise ValidationError("re and im parts have different shapes")
    return re + 1j * im


def source_to_json(source: CompoundSource) -> dict:
    return {
        "alphabet": source.alphabet_size,
        "dimB": source.dim_b,
        "dimE": source.dim_e,
        "states": [
            {"p": s.p.tolist(), "V": [matrix_to_json(v) for v in s.channel.outputs]}
            for s in source.states
        ],
    }


def source_from_json(obj: dict) -> CompoundSource:
    """Parse and validate; the error names the first violated invariant."""
    import jsonschema

    try:
        jsonschema.validate(obj, SOURCE_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ValidationError(f"schema violation at {path}: {exc.message}") from None
    k, db, de = obj["alphabet"], obj["dimB"], obj["dimE"]
    d = db * de
    states = []
    for i, entry in enumerate(obj["states"]):
        where = f"states/{i}"
        if len(entry["p"]) != k:
            raise ValidationError(f"{where}/p: expected {k} entries, got {len(entry['p'])}")
        if len(entry["V"]) != k:
            raise ValidationError(f"{where}/V: expected {k} matrices, got {len(entry['V'])}")
        outs = []
        for x, mat in enumerate(entry["V"]):
            try:
                m = matrix_from_json(mat)
            except ValidationError as exc:
                raise ValidationError(f"{where}/V/{x}: {exc}") from None
            if m.shape != (d, d):
                raise ValidationError(f"{where}/V/{x}: expected shape {(d, d)}, got {m.shape}")
            outs.append(m)
        try:
            states.append(CqqState(np.asarray(entry["p"], dtype=float), CqChannel(np.stack(outs), (db, de))))
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
    return CompoundSource(tuple(states))


def load_source(path) -> CompoundSource:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return source_from_json(obj)


def product_channel(b_outputs, e_outputs) -> CqChannel:
    """V(x) = V_B(x) (x) V_E(x)."""
    b = np.asarray(b_outputs, dtype=complex)
    e = np.asarray(e_outputs, dtype=complex)
    outs = np.stack([np.kron(vb, ve) for vb, ve in zip(b, e)])
    return CqChannel(outs, (b.shape[1], e.shape[1]))
