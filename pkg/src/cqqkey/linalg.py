"""Dense Hermitian linear algebra and entropic functionals (all logs base 2)."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ValidationError

HERMITIAN_TOL = 1e-10
JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100


def _as_square(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    return m


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def hermitian_eig(m, method: str = "jacobi") -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix.

    Returns ``(w, v)`` with ``w`` sorted in descending order and the
    corresponding eigenvectors as the columns of the unitary ``v``.

    ``method="jacobi"`` runs cyclic complex Jacobi rotations until the
    off-diagonal Frobenius norm drops below ``1e-13`` (relative to the
    matrix norm, at least absolute) or 100 sweeps have been made.
    ``method="lapack"`` defers to :func:`numpy.linalg.eigh`.
    """
    a = _as_square(m)
    if not is_hermitian(a, 1e-8):
        raise ValidationError("matrix is not Hermitian within 1e-8")
    if method == "lapack":
        w, v = np.linalg.eigh(a)
        return w[::-1].copy(), v[:, ::-1].copy()
    if method != "jacobi":
        raise ValidationError(f"unknown eigensolver {method!r}")

    a = 0.5 * (a + a.conj().T)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(1.0, float(np.linalg.norm(a)))
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < JACOBI_TOL * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                b = abs(apq)
                if b < 1e-300:
                    continue
                phase = apq / b
                app, aqq = a[p, p].real, a[q, q].real
                tau = (aqq - app) / (2.0 * b)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # U = diag(1, conj(phase)) @ [[c, s], [-s, c]] on the (p, q) plane
                upp, upq = c, s
                uqp, uqq = -s * phase.conjugate(), c * phase.conjugate()
                colp, colq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = upp * colp + uqp * colq
                a[:, q] = upq * colp + uqq * colq
                rowp, rowq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = np.conj(upp) * rowp + np.conj(uqp) * rowq
                a[q, :] = np.conj(upq) * rowp + np.conj(uqq) * rowq
                a[p, q] = a[q, p] = 0.0
                a[p, p], a[q, q] = a[p, p].real, a[q, q].real
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = upp * vp + uqp * vq
                v[:, q] = upq * vp + uqq * vq
    w = np.diag(a).real
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def spectrum(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of one Hermitian matrix or a stack of them (LAPACK)."""
    return np.linalg.eigvalsh(m)


def entropy_of_spectrum(w) -> float:
    w = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
    w = w[w > 0]
    return float(-np.sum(w * np.log2(w)))


def unnormalized_entropy(stack: np.ndarray) -> np.ndarray:
    """-tr(A log A) for each PSD matrix in a stack, without renormalising.

    For ``A = P * rho`` this equals ``P * S(rho) - P log P``.
    """
    w = np.clip(np.linalg.eigvalsh(stack), 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log2(np.where(w > 0, w, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def unnormalized_entropy_diag(diag: np.ndarray) -> np.ndarray:
    w = np.clip(diag, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log2(np.where(w > 0, w, 1.0)), 0.0)
    return -terms.sum(axis=-1)


@dataclass(frozen=True)
class DensityMatrix:
    """A validated quantum state with explicit tensor-factor dimensions."""

    data: np.ndarray
    dims: tuple[int, ...] = field(default=())
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", data)
        dims = tuple(int(d) for d in self.dims) if self.dims else (data.shape[0],)
        object.__setattr__(self, "dims", dims)
        if self.check:
            validate_state(data, dims)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.clip(spectrum(self.data), 0.0, 1.0)

    def __matmul__(self, other: "DensityMatrix") -> "DensityMatrix":
        return tensor(self, other)


def validate_state(data: np.ndarray, dims: Sequence[int], tol: float = HERMITIAN_TOL) -> None:
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ValidationError(f"state must be square, got {data.shape}")
    if any(d < 1 for d in dims) or int(np.prod(dims)) != data.shape[0]:
        raise ValidationError(f"subsystem dims {tuple(dims)} do not multiply to {data.shape[0]}")
    if not is_hermitian(data, tol):
        raise ValidationError("state is not Hermitian")
    tr = np.trace(data)
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"state trace {tr.real:.3g} differs from 1")
    if spectrum(data).min() < -tol:
        raise ValidationError("state has a negative eigenvalue")


def state(data, dims: Sequence[int] | None = None) -> DensityMatrix:
    return DensityMatrix(np.asarray(data, dtype=complex), tuple(dims) if dims else ())


def _trusted(data: np.ndarray, dims: Sequence[int]) -> DensityMatrix:
    return DensityMatrix(data, tuple(dims), check=False)


def _data(rho) -> np.ndarray:
    return rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def projector(index: int, dim: int) -> np.ndarray:
    m = np.zeros((dim, dim), dtype=complex)
    m[index, index] = 1.0
    return m


def pure(vec) -> DensityMatrix:
    v = np.asarray(vec, dtype=complex)
    v = v / np.linalg.norm(v)
    return state(np.outer(v, v.conj()))


def maximally_mixed(dim: int) -> DensityMatrix:
    return state(np.eye(dim) / dim)


def von_neumann_entropy(rho) -> float:
    if isinstance(rho, DensityMatrix):
        return entropy_of_spectrum(rho.eigenvalues())
    data = _as_square(rho)
    return entropy_of_spectrum(spectrum(data))


def trace_norm(m) -> float:
    """Unhalved trace norm of a Hermitian matrix."""
    return float(np.sum(np.abs(spectrum(_as_square(m)))))


def trace_norm_distance(a, b) -> float:
    da, db = _data(a), _data(b)
    if da.shape != db.shape:
        raise ValidationError(f"dimension mismatch {da.shape} vs {db.shape}")
    return trace_norm(da - db)


def _check_indices(indices: Iterable[int], n: int, what: str) -> tuple[int, ...]:
    idx = tuple(sorted(set(int(i) for i in indices)))
    if any(i < 0 or i >= n for i in idx):
        raise ValidationError(f"{what}: subsystem index out of range 0..{n - 1}")
    return idx


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    dims = rho.dims
    keep = _check_indices(keep, len(dims), "partial_trace")
    if not keep:
        raise ValidationError("partial_trace needs at least one kept subsystem")
    if len(keep) == len(dims):
        return rho
    n = len(dims)
    t = rho.data.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n > len(letters):
        raise ValidationError("too many subsystems")
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    kd = tuple(dims[i] for i in keep)
    d = int(np.prod(kd))
    return _trusted(reduced.reshape(d, d), kd)


def tensor(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    return _trusted(np.kron(a.data, b.data), a.dims + b.dims)


def tensor_power(a: DensityMatrix, k: int) -> DensityMatrix:
    if k < 1:
        raise ValidationError("tensor_power needs k >= 1")
    return reduce(tensor, [a] * k)


def _marginal_entropy(rho: DensityMatrix, subsystems: Sequence[int]) -> float:
    if not subsystems:
        return 0.0
    return von_neumann_entropy(partial_trace(rho, subsystems))


def conditional_entropy(rho: DensityMatrix, a: Iterable[int], b: Iterable[int]) -> float:
    """S(A|B) = S(AB) - S(B) for a bipartition of all subsystems."""
    n = len(rho.dims)
    a = _check_indices(a, n, "conditional_entropy")
    b = _check_indices(b, n, "conditional_entropy")
    if set(a) & set(b):
        raise ValidationError("conditional_entropy: partitions overlap")
    if set(a) | set(b) != set(range(n)):
        raise ValidationError("conditional_entropy: partitions must cover every subsystem")
    return von_neumann_entropy(rho) - _marginal_entropy(rho, b)


def _mi(rho: DensityMatrix, a: tuple[int, ...], b: tuple[int, ...]) -> float:
    ab = tuple(sorted(a + b))
    return _marginal_entropy(rho, a) + _marginal_entropy(rho, b) - _marginal_entropy(rho, ab)


def mutual_information(rho: DensityMatrix, a: Iterable[int], b: Iterable[int],
                       conditioning: int | None = None) -> float:
    """I(A;B) or, with a classical ``conditioning`` subsystem X, I(A;B|X)."""
    n = len(rho.dims)
    a = _check_indices(a, n, "mutual_information")
    b = _check_indices(b, n, "mutual_information")
    if set(a) & set(b) or not a or not b:
        raise ValidationError("mutual_information: need nonempty disjoint partitions")
    if conditioning is None:
        return _mi(rho, a, b)
    c = int(conditioning)
    if c in a or c in b or not 0 <= c < n:
        raise ValidationError("conditioning subsystem must be distinct from A and B")
    keep = tuple(sorted(set(a) | set(b) | {c}))
    sub = partial_trace(rho, keep)
    pos = keep.index(c)
    dims = sub.dims
    # move the classical factor to the front
    order = [pos] + [i for i in range(len(dims)) if i != pos]
    rest = tuple(dims[i] for i in order[1:])
    dr = int(np.prod(rest))
    t = sub.data.reshape(dims + dims).transpose(order + [len(dims) + i for i in order])
    blocks = t.reshape(dims[pos], dr, dims[pos], dr)
    off = blocks.copy()
    for x in range(dims[pos]):
        off[x, :, x, :] = 0.0
    if np.abs(off).sum() > HERMITIAN_TOL:
        raise ValidationError("conditioning subsystem is not classical")
    new_index = {old: i for i, old in enumerate(order[1:])}
    a2 = tuple(new_index[keep.index(i)] for i in a)
    b2 = tuple(new_index[keep.index(i)] for i in b)
    total = 0.0
    for x in range(dims[pos]):
        block = blocks[x, :, x, :]
        px = float(np.trace(block).real)
        if px <= 1e-15:
            continue
        total += px * _mi(_trusted(block / px, rest), a2, b2)
    return total


def shannon_entropy(p) -> float:
    p = check_distribution(p)
    return entropy_of_spectrum(p)


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"binary entropy argument {x} outside [0, 1]")
    if x in (0.0, 1.0):
        return 0.0
    return float(-x * np.log2(x) - (1 - x) * np.log2(1 - x))


def check_distribution(p, tol: float = 1e-12) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("a distribution must be a nonempty 1-d array")
    if np.any(p < 0):
        raise ValidationError("distribution has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise ValidationError(f"distribution sums to {p.sum():.15g}, not 1")
    return p


@dataclass(frozen=True)
class Povm:
    """A finite family of effects 0 <= E <= 1; ``complete`` demands they sum to 1."""

    effects: np.ndarray
    complete: bool = True

    def __post_init__(self):
        eff = np.asarray(self.effects, dtype=complex)
        if eff.ndim != 3 or eff.shape[1] != eff.shape[2]:
            raise ValidationError("POVM effects must be a stack of square matrices")
        object.__setattr__(self, "effects", eff)
        w = spectrum(eff)
        if w.min() < -HERMITIAN_TOL or w.max() > 1 + HERMITIAN_TOL:
            raise ValidationError("POVM effect outside [0, 1]")
        total = eff.sum(axis=0)
        eye = np.eye(eff.shape[1])
        if self.complete and np.max(np.abs(total - eye)) > HERMITIAN_TOL:
            raise ValidationError("POVM effects do not sum to the identity")
        if not self.complete and spectrum(eye - total).min() < -HERMITIAN_TOL:
            raise ValidationError("sub-normalised POVM sums above the identity")

    def probabilities(self, rho) -> np.ndarray:
        return np.real(np.einsum("kij,ji->k", self.effects, _data(rho)))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (g + g.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """exp(iH) for a random Hermitian H, built from its eigen-decomposition."""
    w, v = hermitian_eig(random_hermitian(dim, rng), method="lapack")
    return (v * np.exp(1j * w)) @ v.conj().T


def random_state(dim: int, rng: np.random.Generator, rank: int | None = None,
                 dims: Sequence[int] | None = None) -> DensityMatrix:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    m = 0.5 * (m + m.conj().T) / np.trace(m).real
    return state(m, dims)


def mix(weights: Sequence[float], states: Sequence[DensityMatrix]) -> DensityMatrix:
    data = sum(w * s.data for w, s in zip(weights, states))
    return _trusted(data, states[0].dims)
