"""Bosonic qubit encodings and photon-loss error detection.

Two encodings are supported: the trivial Fock encoding {|0>, |1>} and the
lowest-order binomial code |0L> = (|0> + |4>)/sqrt(2), |1L> = |2>.  The
binomial code words share the same mean photon number (2), so a single
photon loss moves the state to odd photon parity where it can be flagged
and discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EncodingError, StateValidationError, ZeroProbabilityError
from .states import DensityMatrix, PureState

__all__ = ["Encoding", "ParityOutcome", "encode", "detect_error", "decode", "parity_projector"]


@dataclass(frozen=True)
class Encoding:
    """A logical qubit embedded in one cavity mode."""

    kind: str
    logical_zero: np.ndarray = field(repr=False)
    logical_one: np.ndarray = field(repr=False)
    dim: int

    def __post_init__(self):
        z = np.asarray(self.logical_zero, dtype=complex).copy()
        o = np.asarray(self.logical_one, dtype=complex).copy()
        if z.shape != (self.dim,) or o.shape != (self.dim,):
            raise EncodingError("logical states must be vectors of the cavity dimension")
        for v in (z, o):
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise EncodingError("logical states must be normalized")
        if abs(np.vdot(z, o)) > 1e-12:
            raise EncodingError("logical states must be orthogonal")
        z.flags.writeable = False
        o.flags.writeable = False
        object.__setattr__(self, "logical_zero", z)
        object.__setattr__(self, "logical_one", o)

    @classmethod
    def fock(cls, dim: int = 6) -> "Encoding":
        if dim < 2:
            raise EncodingError("fock encoding needs at least two levels")
        z = np.zeros(dim, dtype=complex)
        o = np.zeros(dim, dtype=complex)
        z[0] = 1.0
        o[1] = 1.0
        return cls("fock", z, o, dim)

    @classmethod
    def binomial(cls, dim: int = 6) -> "Encoding":
        if dim < 5:
            raise EncodingError("binomial code needs cavity truncation >= 5")
        z = np.zeros(dim, dtype=complex)
        o = np.zeros(dim, dtype=complex)
        z[0] = z[4] = 1.0 / np.sqrt(2.0)
        o[2] = 1.0
        return cls("binomial", z, o, dim)

    @classmethod
    def make(cls, kind: str, dim: int = 6) -> "Encoding":
        if kind == "fock":
            return cls.fock(dim)
        if kind == "binomial":
            return cls.binomial(dim)
        raise EncodingError(f"unknown encoding kind {kind!r}")

    @property
    def parity_detectable(self) -> bool:
        """Whether a single photon loss leaves the code space detectably."""
        return self.kind == "binomial"

    def code_projector(self) -> np.ndarray:
        z, o = self.logical_zero, self.logical_one
        return np.outer(z, z.conj()) + np.outer(o, o.conj())

    def pauli(self, which: str) -> np.ndarray:
        """Logical Pauli operator embedded in the cavity (zero outside code)."""
        z, o = self.logical_zero, self.logical_one
        if which == "x":
            return np.outer(z, o.conj()) + np.outer(o, z.conj())
        if which == "y":
            return -1j * np.outer(z, o.conj()) + 1j * np.outer(o, z.conj())
        if which == "z":
            return np.outer(z, z.conj()) - np.outer(o, o.conj())
        raise ValueError(f"unknown Pauli {which!r}")


@dataclass(frozen=True)
class ParityOutcome:
    """Result of a photon-number parity measurement."""

    outcome: str  # "even" | "odd"
    probability: float
    detectable: bool = True

    def __post_init__(self):
        if self.outcome not in ("even", "odd"):
            raise StateValidationError(f"invalid parity outcome {self.outcome!r}")
        if not -1e-9 <= self.probability <= 1.0 + 1e-9:
            raise StateValidationError(f"probability {self.probability} outside [0, 1]")


def encode(qubit_state, enc: Encoding) -> PureState:
    """Map a normalized qubit amplitude pair onto the cavity code space."""
    q = np.asarray(qubit_state, dtype=complex).ravel()
    if q.shape != (2,):
        raise EncodingError("qubit state must have two amplitudes")
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise EncodingError("qubit state must be normalized")
    return PureState(q[0] * enc.logical_zero + q[1] * enc.logical_one, (enc.dim,))


def parity_projector(dim: int, parity: str) -> np.ndarray:
    n = np.arange(dim)
    sel = (n % 2 == 0) if parity == "even" else (n % 2 == 1)
    return np.diag(sel.astype(complex))


def _embed_single(op: np.ndarray, space: tuple[int, ...], mode: int) -> np.ndarray:
    full = np.eye(1, dtype=complex)
    for k, d in enumerate(space):
        full = np.kron(full, op if k == mode else np.eye(d, dtype=complex))
    return full


def detect_error(
    rho: DensityMatrix, cavity: int, enc: Encoding
) -> tuple[DensityMatrix, ParityOutcome]:
    """Ideal parity measurement on one cavity; keep the even branch.

    Returns the normalized even-parity projection together with the outcome
    record.  Detection-and-discard only: no recovery is applied.  For the
    Fock encoding parity carries logical information, so the state is
    returned untouched with a not-detectable flag.
    """
    if not enc.parity_detectable:
        return rho, ParityOutcome("even", 1.0, detectable=False)
    space = rho.space
    if not 0 <= cavity < len(space):
        raise StateValidationError(f"cavity index {cavity} out of range for {space}")
    p_even_op = _embed_single(parity_projector(space[cavity], "even"), space, cavity)
    p_even = float(np.real(np.trace(p_even_op @ rho.matrix)))
    if p_even <= 1e-14:
        raise ZeroProbabilityError("even-parity projection has zero probability")
    kept = p_even_op @ rho.matrix @ p_even_op
    return (
        DensityMatrix(kept / p_even, space),
        ParityOutcome("even", p_even),
    )


def decode(rho_cavity: DensityMatrix, enc: Encoding) -> tuple[np.ndarray, float]:
    """Project a single-cavity state onto the code space.

    Returns the raw (subnormalized) 2x2 logical block and the leakage weight
    1 - Tr(P_code rho).  The block is not renormalized so that leakage is
    visible to the caller.
    """
    if rho_cavity.space != (enc.dim,):
        raise StateValidationError(
            f"state space {rho_cavity.space} does not match encoding dim {enc.dim}"
        )
    z, o = enc.logical_zero, enc.logical_one
    block = np.empty((2, 2), dtype=complex)
    block[0, 0] = z.conj() @ rho_cavity.matrix @ z
    block[0, 1] = z.conj() @ rho_cavity.matrix @ o
    block[1, 0] = o.conj() @ rho_cavity.matrix @ z
    block[1, 1] = o.conj() @ rho_cavity.matrix @ o
    leakage = float(1.0 - np.real(block[0, 0] + block[1, 1]))
    return block, max(0.0, leakage)
