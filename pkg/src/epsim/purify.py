"""Purification algebra: Werner/Bell-diagonal recurrences and the exact
density-matrix purification step.

Conventions: Bell weights are ordered (psi+, psi-, phi+, phi-) with
psi+- = (|01> +- |10>)/sqrt(2) and phi+- = (|00> +- |11>)/sqrt(2).  A Werner
state of fidelity F puts weight F on psi+ and (1-F)/3 on each of the rest.

In the two-pair step, pair A (the stored pair, to be kept) acts as the
control of both CNOTs; pair B (the freshly generated pair) is the target and
is measured.  The pair is kept when both measurement outcomes agree, or in
the experimentally used variant, only on the gg outcome, which halves the
success probability of Bell-diagonal inputs without changing the kept state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codes import Encoding
from .errors import StateValidationError, ZeroProbabilityError
from .gates import logical_cnot
from .states import (
    DensityMatrix,
    bell_basis,
    bell_weights,
    embed_operator,
    partial_trace,
)

__all__ = [
    "BellDiagonal",
    "ErrorBudget",
    "recurrence_werner",
    "f_limit",
    "bell_step",
    "dejmps_twirl",
    "werner_ratio",
    "ratio_to_fidelity",
    "budget_product",
    "dm_purify_step",
    "pump_curve",
]


@dataclass(frozen=True)
class BellDiagonal:
    """Four Bell-basis weights (psi+, psi-, phi+, phi-), summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).copy()
        if w.shape != (4,):
            raise StateValidationError("BellDiagonal needs exactly four weights")
        if np.any(w < -1e-12):
            raise StateValidationError(f"negative Bell weight in {w}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise StateValidationError(f"Bell weights sum to {w.sum()}, not 1")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @classmethod
    def werner(cls, fidelity: float) -> "BellDiagonal":
        rest = (1.0 - fidelity) / 3.0
        return cls(np.array([fidelity, rest, rest, rest]))

    @classmethod
    def from_dm(cls, rho: DensityMatrix, tol: float = 1e-9) -> "BellDiagonal":
        w, residual = bell_weights(rho)
        if residual > tol:
            raise StateValidationError(
                f"state has Bell-basis coherences of norm {residual:.3e}"
            )
        return cls(np.clip(w, 0.0, None) / np.clip(w, 0.0, None).sum())

    @property
    def fidelity(self) -> float:
        """Weight on the target state psi+."""
        return float(self.w[0])

    def to_dm(self) -> DensityMatrix:
        basis = bell_basis()
        mat = (basis * self.w) @ basis.conj().T
        return DensityMatrix(mat, (2, 2))


# ---------------------------------------------------------------------------
# scalar Werner algebra


def recurrence_werner(f_a: float, f_b: float) -> tuple[float, float]:
    """One purification step on two Werner inputs.

    Returns ``(f_new, p_pass)`` where ``p_pass`` is the probability that the
    two measured qubits agree.
    """
    for f in (f_a, f_b):
        if not 0.0 <= f <= 1.0:
            raise StateValidationError(f"fidelity {f} outside [0, 1]")
    ea, eb = (1.0 - f_a) / 3.0, (1.0 - f_b) / 3.0
    num = f_a * f_b + ea * eb
    denom = f_a * f_b + f_a * eb + ea * f_b + 5.0 * ea * eb
    return num / denom, denom


def f_limit(f_b: float) -> float:
    """Fixed point of the pumping recurrence for a given fresh-pair fidelity.

    Pumping a stored pair with fresh pairs of fidelity ``f_b`` raises its
    fidelity when below this value and lowers it when above.
    """
    if f_b <= 0.25:
        raise StateValidationError("f_limit requires f_b > 0.25")
    disc = 28.0 * f_b * f_b - 26.0 * f_b + 7.0
    return (3.0 * (2.0 * f_b - 1.0) + math.sqrt(disc)) / (2.0 * (4.0 * f_b - 1.0))


def bell_step(a: BellDiagonal, b: BellDiagonal) -> tuple[BellDiagonal, float]:
    """Purification step on Bell-diagonal inputs (keep equal target outcomes).

    Reduces to :func:`recurrence_werner` on Werner inputs.  The measured
    target-pair parity equals the psi/phi parity of the stored pair XOR that
    of the fresh pair; phase bits of kept terms add modulo two.
    """
    ap, am, bp_, bm = a.w[0], a.w[1], a.w[2], a.w[3]
    qp, qm, rp, rm = b.w[0], b.w[1], b.w[2], b.w[3]
    new = np.array(
        [
            ap * qp + am * qm,  # psi+
            ap * qm + am * qp,  # psi-
            bp_ * rp + bm * rm,  # phi+
            bp_ * rm + bm * rp,  # phi-
        ]
    )
    p_pass = float(new.sum())
    if p_pass <= 0.0:
        raise ZeroProbabilityError("purification step has zero success probability")
    return BellDiagonal(new / p_pass), p_pass


def dejmps_twirl(s: BellDiagonal) -> BellDiagonal:
    """Local x-rotations by +-pi/2 on the two halves: swaps psi- and phi-."""
    w = s.w
    return BellDiagonal(np.array([w[0], w[3], w[2], w[1]]))


def pump_curve(f0: float, f_b: float, rounds: int) -> list[tuple[float, float]]:
    """Iterate the Werner recurrence; returns [(fidelity, p_pass), ...].

    Entry 0 is ``(f0, 1.0)``; each later entry is one pumping round with a
    fresh pair at ``f_b``.
    """
    out = [(f0, 1.0)]
    f = f0
    for _ in range(rounds):
        f, p = recurrence_werner(f, f_b)
        out.append((f, p))
    return out


# ---------------------------------------------------------------------------
# depolarizing-ratio bookkeeping


def werner_ratio(fidelity: float) -> float:
    """Depolarizing ratio x = (4F - 1)/3 of a Werner state."""
    if not 0.25 <= fidelity <= 1.0:
        raise StateValidationError(f"fidelity {fidelity} outside [0.25, 1]")
    return (4.0 * fidelity - 1.0) / 3.0

def ratio_to_fidelity(x: float) -> float:
    return (3.0 * x + 1.0) / 4.0


@dataclass(frozen=True)
class BudgetEntry:
    label: str
    fidelity: float
    ratio: float

    def __post_init__(self):
        if abs(self.ratio - werner_ratio(self.fidelity)) > 1e-9:
            raise StateValidationError(
                f"budget entry {self.label!r}: ratio {self.ratio} inconsistent with "
                f"fidelity {self.fidelity}"
            )


@dataclass(frozen=True)
class ErrorBudget:
    """Independent error contributions, each a (fidelity, ratio) pair."""

    entries: tuple[BudgetEntry, ...]

    @classmethod
    def from_fidelities(cls, items: "list[tuple[str, float]]") -> "ErrorBudget":
        return cls(tuple(BudgetEntry(lb, f, werner_ratio(f)) for lb, f in items))

    @classmethod
    def from_ratios(cls, items: "list[tuple[str, float]]") -> "ErrorBudget":
        return cls(tuple(BudgetEntry(lb, ratio_to_fidelity(x), x) for lb, x in items))


def budget_product(budget: ErrorBudget) -> float:
    """Combined depolarizing ratio of independent error sources."""
    out = 1.0
    for e in budget.entries:
        out *= e.ratio
    return out


# ---------------------------------------------------------------------------
# exact density-matrix purification step


def dm_purify_step(
    rho4: DensityMatrix,
    keep: str = "gg",
    encodings: "tuple[Encoding, Encoding] | None" = None,
) -> tuple[DensityMatrix, float, dict]:
    """Bilateral CNOT, measurement of the fresh pair, and post-selection.

    ``rho4`` lives on modes (S1, S3, Y1, Y2): the stored pair first (the
    CNOT controls), the fresh communication pair second (targets, measured
    in the energy basis).  ``keep`` selects ``"gg"`` (experimental choice)
    or ``"gg-or-ee"`` (keep equal outcomes).  Returns the renormalized
    stored-pair state, the success probability, and all outcome
    probabilities.
    """
    if keep not in ("gg", "gg-or-ee"):
        raise StateValidationError(f"unknown keep rule {keep!r}")
    space = rho4.space
    if len(space) != 4 or space[2] != 2 or space[3] != 2:
        raise StateValidationError(
            f"expected (storage, storage, qubit, qubit) space, got {space}"
        )
    if encodings is None:
        encodings = (Encoding.fock(space[0]), Encoding.fock(space[1]))
    u1 = embed_operator(logical_cnot(encodings[0]), space, (0, 2))
    u2 = embed_operator(logical_cnot(encodings[1]), space, (1, 3))
    u = u2 @ u1
    mat = u @ rho4.matrix @ u.conj().T

    d_st = space[0] * space[1]
    blocks = mat.reshape(d_st, 2, 2, d_st, 2, 2)
    outcome_probs = {}
    kept = np.zeros((d_st, d_st), dtype=complex)
    keep_set = {"gg": ("gg",), "gg-or-ee": ("gg", "ee")}[keep]
    for q1, name1 in enumerate("ge"):
        for q2, name2 in enumerate("ge"):
            name = name1 + name2
            block = blocks[:, q1, q2, :, q1, q2]
            outcome_probs[name] = float(np.real(np.trace(block)))
            if name in keep_set:
                kept += block
    p_success = float(sum(outcome_probs[k] for k in keep_set))
    if p_success <= 1e-14:
        raise ZeroProbabilityError(f"post-selection on {keep} has zero probability")
    rho2 = DensityMatrix(kept / p_success, (space[0], space[1]))
    return rho2, p_success, outcome_probs
