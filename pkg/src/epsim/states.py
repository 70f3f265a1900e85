"""States and operators on composite truncated Hilbert spaces.

Everything is dense.  A "space" is an ordered tuple of mode dimensions; the
ordering is fixed once (by the device mode list or by the caller) and every
index set refers to positions in that ordering.  Values are immutable after
construction and safe to share between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    SpaceMismatchError,
    StateValidationError,
    ZeroProbabilityError,
)

__all__ = [
    "MAX_TOTAL_DIM",
    "PureState",
    "DensityMatrix",
    "tensor",
    "tensor_many",
    "partial_trace",
    "state_fidelity",
    "negativity",
    "bell_weights",
    "bell_state",
    "bell_basis",
    "embed_operator",
    "basis_ket",
]

# Cap on the total composite dimension for dense construction.  Functions
# that build product spaces take an override for deliberate large runs.
MAX_TOTAL_DIM = 4096

# Trace / Hermiticity / positivity tolerances for DensityMatrix.
_TRACE_TOL = 1e-8
_HERM_TOL = 1e-10
_EIG_TOL = -1e-8
_NORM_TOL = 1e-10


def _as_space(dims) -> tuple[int, ...]:
    space = tuple(int(d) for d in dims)
    if any(d < 1 for d in space):
        raise StateValidationError(f"invalid mode dimensions {space}")
    return space


@dataclass(frozen=True)
class PureState:
    """Normalized state vector over an ordered list of mode dimensions."""

    amplitudes: np.ndarray = field(repr=False)
    space: tuple[int, ...]

    def __post_init__(self):
        vec = np.asarray(self.amplitudes, dtype=complex).ravel()
        space = _as_space(self.space)
        if vec.size != math.prod(space):
            raise SpaceMismatchError(
                f"vector length {vec.size} != product of dims {space}"
            )
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > _NORM_TOL:
            raise StateValidationError(f"state norm {norm} deviates from 1")
        vec = vec.copy()
        vec.flags.writeable = False
        object.__setattr__(self, "amplitudes", vec)
        object.__setattr__(self, "space", space)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.space)

    def overlap(self, other: "PureState") -> complex:
        if self.space != other.space:
            raise SpaceMismatchError(f"spaces differ: {self.space} vs {other.space}")
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class DensityMatrix:
    """Trace-one Hermitian positive-semidefinite matrix over a mode space.

    Construction validates trace (1e-8), Hermiticity (1e-10 elementwise) and
    the smallest eigenvalue (>= -1e-8).  Violations raise rather than being
    repaired: a non-physical state signals an integrator or algebra bug.
    """

    matrix: np.ndarray = field(repr=False)
    space: tuple[int, ...]

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        space = _as_space(self.space)
        d = math.prod(space)
        if mat.shape != (d, d):
            raise SpaceMismatchError(f"matrix shape {mat.shape} != ({d}, {d}) for dims {space}")
        tr = np.trace(mat)
        if abs(tr - 1.0) > _TRACE_TOL:
            raise StateValidationError(f"trace {tr} deviates from 1 beyond {_TRACE_TOL}")
        herm_err = np.max(np.abs(mat - mat.conj().T))
        if herm_err > _HERM_TOL:
            raise StateValidationError(f"Hermiticity violation {herm_err:.3e}")
        lo = float(np.linalg.eigvalsh(mat)[0])
        if lo < _EIG_TOL:
            raise StateValidationError(f"negative eigenvalue {lo:.3e} below tolerance")
        mat = mat.copy()
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "space", space)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def expectation(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.matrix))

    def condition(self, projector: np.ndarray) -> tuple["DensityMatrix", float]:
        """Project onto ``projector``, renormalize; returns (state, probability)."""
        sub = projector @ self.matrix @ projector.conj().T
        p = float(np.real(np.trace(sub)))
        if p <= 1e-14:
            raise ZeroProbabilityError("conditioning on an outcome of probability ~0")
        return DensityMatrix(sub / p, self.space), p


# ---------------------------------------------------------------------------
# construction helpers


def basis_ket(space, occupations) -> PureState:
    """Product basis state |n_0, n_1, ...> on the given mode space."""
    space = _as_space(space)
    occ = tuple(int(n) for n in occupations)
    if len(occ) != len(space):
        raise SpaceMismatchError("one occupation number per mode required")
    if any(not 0 <= n < d for n, d in zip(occ, space)):
        raise StateValidationError(f"occupations {occ} outside dims {space}")
    vec = np.zeros(math.prod(space), dtype=complex)
    vec[int(np.ravel_multi_index(occ, space))] = 1.0
    return PureState(vec, space)


_BELL_LABELS = ("psi+", "psi-", "phi+", "phi-")


def bell_state(kind: str = "psi+") -> PureState:
    """Two-qubit Bell state; |0> is the qubit ground state.

    ``psi+/-`` are (|01> +- |10>)/sqrt(2); ``phi+/-`` are (|00> +- |11>)/sqrt(2).
    """
    if kind not in _BELL_LABELS:
        raise ValueError(f"unknown Bell label {kind!r}; use one of {_BELL_LABELS}")
    v = np.zeros(4, dtype=complex)
    s = 1.0 if kind.endswith("+") else -1.0
    if kind.startswith("psi"):
        v[1], v[2] = 1.0, s
    else:
        v[0], v[3] = 1.0, s
    return PureState(v / np.sqrt(2.0), (2, 2))


def bell_basis() -> np.ndarray:
    """4x4 matrix whose columns are |psi+>, |psi->, |phi+>, |phi->."""
    return np.column_stack([bell_state(k).amplitudes for k in _BELL_LABELS])


# ---------------------------------------------------------------------------
# algebra


def tensor(a: DensityMatrix, b: DensityMatrix, max_dim: int | None = None) -> DensityMatrix:
    """Tensor product; the result space is the concatenation of the inputs'."""
    cap = MAX_TOTAL_DIM if max_dim is None else max_dim
    total = a.dim * b.dim
    if total > cap:
        raise DimensionError(f"composite dimension {total} exceeds cap {cap}")
    return DensityMatrix(np.kron(a.matrix, b.matrix), a.space + b.space)


def tensor_many(*states: DensityMatrix, max_dim: int | None = None) -> DensityMatrix:
    out = states[0]
    for s in states[1:]:
        out = tensor(out, s, max_dim=max_dim)
    return out


def _partial_trace_array(mat: np.ndarray, space: tuple[int, ...], keep: tuple[int, ...]) -> np.ndarray:
    n = len(space)
    traced = [i for i in range(n) if i not in keep]
    tens = mat.reshape(space + space)
    # contract each traced mode's row index with its column index
    for k, mode in enumerate(sorted(traced, reverse=True)):
        m = tens.ndim // 2
        tens = np.trace(tens, axis1=mode, axis2=m + mode)
    d_keep = math.prod(space[i] for i in keep)
    return tens.reshape(d_keep, d_keep)


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Trace out all modes not in ``keep``; kept modes stay in original order."""
    keep = tuple(sorted(set(int(i) for i in keep)))
    if not keep:
        raise SpaceMismatchError("keep set must be nonempty")
    if any(i < 0 or i >= len(rho.space) for i in keep):
        raise SpaceMismatchError(f"keep indices {keep} out of range for space {rho.space}")
    out = _partial_trace_array(rho.matrix, rho.space, keep)
    return DensityMatrix(out, tuple(rho.space[i] for i in keep))


def state_fidelity(rho: DensityMatrix, psi: PureState) -> float:
    """Pure-target fidelity <psi|rho|psi>, clipped to [0, 1]."""
    if rho.space != psi.space:
        raise SpaceMismatchError(f"spaces differ: {rho.space} vs {psi.space}")
    val = complex(psi.amplitudes.conj() @ (rho.matrix @ psi.amplitudes))
    if abs(val.imag) > 1e-10:
        raise StateValidationError(f"fidelity has imaginary residue {val.imag:.3e}")
    return float(min(1.0, max(0.0, val.real)))


def _partial_transpose(mat: np.ndarray, space: tuple[int, ...], part: tuple[int, ...]) -> np.ndarray:
    n = len(space)
    tens = mat.reshape(space + space)
    axes = list(range(2 * n))
    for i in part:
        axes[i], axes[n + i] = axes[n + i], axes[i]
    d = math.prod(space)
    return tens.transpose(axes).reshape(d, d)


def negativity(rho: DensityMatrix, partition) -> float:
    """Entanglement negativity (||rho^{T_A}||_1 - 1)/2 across ``partition``."""
    part = tuple(sorted(set(int(i) for i in partition)))
    if not part or len(part) >= len(rho.space):
        raise SpaceMismatchError("partition must be a nonempty proper subset of modes")
    if any(i < 0 or i >= len(rho.space) for i in part):
        raise SpaceMismatchError(f"partition {part} out of range for space {rho.space}")
    pt = _partial_transpose(rho.matrix, rho.space, part)
    eigs = np.linalg.eigvalsh(pt)
    return float(max(0.0, (np.sum(np.abs(eigs)) - 1.0) / 2.0))


def bell_weights(rho: DensityMatrix) -> tuple[np.ndarray, float]:
    """Diagonal weights of a two-qubit state in the Bell basis.

    Returns ``(w, coherence_residual)`` where ``w`` is ordered
    (psi+, psi-, phi+, phi-) and the residual is the Frobenius norm of the
    discarded off-diagonal Bell-basis block.
    """
    if rho.space != (2, 2):
        raise SpaceMismatchError(f"bell_weights needs a (2, 2) space, got {rho.space}")
    basis = bell_basis()
    in_bell = basis.conj().T @ rho.matrix @ basis
    w = np.real(np.diag(in_bell)).copy()
    off = in_bell - np.diag(np.diag(in_bell))
    return w, float(np.linalg.norm(off))


# ---------------------------------------------------------------------------
# operator embedding


def embed_operator(op: np.ndarray, space, modes) -> np.ndarray:
    """Embed an operator acting on ``modes`` (in that order) into the full space.

    ``op`` must have shape (prod(dims of modes), same) with its indices in the
    order given by ``modes``; the result acts as identity elsewhere.
    """
    space = _as_space(space)
    modes = tuple(int(m) for m in modes)
    if len(set(modes)) != len(modes):
        raise SpaceMismatchError("modes must be distinct")
    sub = tuple(space[m] for m in modes)
    d_sub = math.prod(sub)
    op = np.asarray(op, dtype=complex)
    if op.shape != (d_sub, d_sub):
        raise SpaceMismatchError(f"operator shape {op.shape} != ({d_sub}, {d_sub})")
    n = len(space)
    rest = [i for i in range(n) if i not in modes]
    d_rest = math.prod(space[i] for i in rest) if rest else 1
    full = np.kron(op, np.eye(d_rest, dtype=complex))
    # current axis order: modes..., rest... ; permute back to 0..n-1
    order = list(modes) + rest
    perm = [order.index(i) for i in range(n)]
    dims_now = sub + tuple(space[i] for i in rest)
    tens = full.reshape(dims_now + dims_now)
    tens = tens.transpose(perm + [n + p for p in perm])
    d = math.prod(space)
    return np.ascontiguousarray(tens.reshape(d, d))


def number_op(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def lowering_op(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """(1/2)||a - b||_1 for states on the same space."""
    if a.space != b.space:
        raise SpaceMismatchError(f"spaces differ: {a.space} vs {b.space}")
    eigs = np.linalg.eigvalsh(a.matrix - b.matrix)
    return float(0.5 * np.sum(np.abs(eigs)))
