"""Time evolution: Hamiltonians, master-equation integration, idle channels.

Internal units are radians/nanosecond for energies and nanoseconds for time.
Couplings and drive amplitudes enter in MHz (the quoted lab quantity); the
conversion factor is ``2*pi*1e-3``.

The static part of every Hamiltonian built here (Kerr, cross-Kerr, drive
detunings, conditional frequency shifts) is diagonal in the product Fock
basis.  Integration therefore works in the interaction picture of that
diagonal part: the fast ladder phases are handled exactly and the fixed-step
integrator only resolves the slow drive and dissipation terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .device import DeviceGraph, ModeSpec
from .errors import IntegratorError, SpaceMismatchError, StateValidationError
from .states import DensityMatrix, PureState, lowering_op, number_op

__all__ = [
    "MHZ_TO_RAD_NS",
    "Drive",
    "HamiltonianSpec",
    "IntegratorConfig",
    "build_hamiltonian",
    "lindblad_evolve",
    "idle_channel",
    "idle_all",
    "collapse_operators",
]

MHZ_TO_RAD_NS = 2.0 * math.pi * 1e-3
US_TO_NS = 1e3


@dataclass(frozen=True)
class Drive:
    """Classical drive on one mode, in the frame rotating at the drive tone.

    ``envelope`` maps time in ns to a (possibly complex) amplitude in MHz;
    ``detuning_mhz`` is the mode-minus-drive frequency difference.
    """

    mode: str
    envelope: Callable[[float], complex]
    detuning_mhz: float = 0.0


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian over an ordered subset of device modes.

    ``shifts_mhz`` adds a static, per-mode frequency offset (used for
    photon-number-conditioned qubit shifts).  Drive mode labels must appear
    in ``active``.
    """

    device: DeviceGraph
    active: tuple[str, ...]
    drives: tuple[Drive, ...] = ()
    shifts_mhz: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(self.active))
        object.__setattr__(self, "drives", tuple(self.drives))
        for d in self.drives:
            if d.mode not in self.active:
                raise SpaceMismatchError(f"drive mode {d.mode!r} not in active modes")
        if len({d.mode for d in self.drives}) != len(self.drives):
            raise SpaceMismatchError("at most one drive per mode")
        for lb in self.shifts_mhz:
            if lb not in self.active:
                raise SpaceMismatchError(f"shift mode {lb!r} not in active modes")

    @property
    def space(self) -> tuple[int, ...]:
        return self.device.dims(self.active)

    # -- static (diagonal) part -------------------------------------------

    def static_energies(self) -> np.ndarray:
        """Diagonal of the static Hamiltonian over the product basis, rad/ns."""
        dims = self.space
        n_axes = [np.arange(d, dtype=float) for d in dims]
        total = np.zeros(dims, dtype=float)
        detuning = {d.mode: d.detuning_mhz for d in self.drives}
        for i, lb in enumerate(self.active):
            spec = self.device.mode(lb)
            ni = n_axes[i].reshape([-1 if k == i else 1 for k in range(len(dims))])
            coeff = detuning.get(lb, 0.0) + self.shifts_mhz.get(lb, 0.0)
            total = total + MHZ_TO_RAD_NS * coeff * ni
            if spec.self_kerr_mhz and dims[i] > 2:
                total = total + MHZ_TO_RAD_NS * spec.self_kerr_mhz * ni * (ni - 1.0)
        for i in range(len(dims)):
            for j in range(i + 1, len(dims)):
                chi = self.device.chi_mhz(self.active[i], self.active[j])
                if chi == 0.0:
                    continue
                ni = n_axes[i].reshape([-1 if k == i else 1 for k in range(len(dims))])
                nj = n_axes[j].reshape([-1 if k == j else 1 for k in range(len(dims))])
                total = total + MHZ_TO_RAD_NS * chi * ni * nj
        return total.ravel()

    def drive_terms(self) -> list[tuple[np.ndarray, Callable[[float], complex]]]:
        """List of (lowering operator embedded in the full space, envelope in MHz).

        The Hamiltonian contribution of each term is
        ``conj(eps(t)) * A + eps(t) * A_dagger`` with eps in rad/ns.
        """
        dims = self.space
        out = []
        for d in self.drives:
            i = self.active.index(d.mode)
            ops = [np.eye(dim, dtype=complex) for dim in dims]
            ops[i] = lowering_op(dims[i])
            full = ops[0]
            for o in ops[1:]:
                full = np.kron(full, o)
            out.append((full, d.envelope))
        return out


def build_hamiltonian(spec: HamiltonianSpec, t_ns: float) -> np.ndarray:
    """Dense Hermitian Hamiltonian at one instant, in rad/ns."""
    h = np.diag(spec.static_energies()).astype(complex)
    for a_op, env in spec.drive_terms():
        eps = MHZ_TO_RAD_NS * complex(env(t_ns))
        h = h + eps * a_op.conj().T + np.conj(eps) * a_op
    return h


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step or adaptive master-equation integration settings.

    ``dt_ns`` is the step for driven evolution; ``dt_idle_ns`` is used when
    no drives are present.  ``max_step_error`` feeds the adaptive method's
    tolerance and the trace-drift guard.
    """

    dt_ns: float = 0.125
    dt_idle_ns: float = 10.0
    method: str = "fixed"
    max_step_error: float = 1e-9

    def __post_init__(self):
        if self.dt_ns <= 0 or self.dt_idle_ns <= 0:
            raise StateValidationError("integrator steps must be positive")
        if self.method not in ("fixed", "adaptive"):
            raise StateValidationError(f"unknown integrator method {self.method!r}")


# ---------------------------------------------------------------------------
# collapse operators


def _mode_rates_per_ns(spec: ModeSpec) -> list[tuple[float, str]]:
    """(rate, kind) pairs with kind in {down, up, dephase}, rates in 1/ns."""
    g1 = 1e-3 / spec.t1_us
    gphi = 1e-3 * spec.dephasing_rate_per_us
    out = [((1.0 + spec.n_th) * g1, "down")]
    if spec.n_th > 0:
        out.append((spec.n_th * g1, "up"))
    if gphi > 0:
        out.append((2.0 * gphi, "dephase"))
    return out


def _single_mode_collapse(spec: ModeSpec, dim: int) -> list[np.ndarray]:
    """Collapse operators sqrt(rate)*L for one mode, rates in 1/ns."""
    a = lowering_op(dim)
    n = number_op(dim)
    kinds = {"down": a, "up": a.conj().T, "dephase": n}
    return [math.sqrt(rate) * kinds[kind] for rate, kind in _mode_rates_per_ns(spec)]


def collapse_operators(device: DeviceGraph, active: Sequence[str]) -> list[np.ndarray]:
    """Embedded collapse operators for every active mode, rates folded in."""
    active = tuple(active)
    dims = device.dims(active)
    ops = []
    for i, lb in enumerate(active):
        for op in _single_mode_collapse(device.mode(lb), dims[i]):
            full = np.eye(1, dtype=complex)
            for k, d in enumerate(dims):
                full = np.kron(full, op if k == i else np.eye(d, dtype=complex))
            ops.append(full)
    return ops


# ---------------------------------------------------------------------------
# master-equation integration


class _InteractionFrame:
    """RHS of the master equation in the diagonal interaction picture."""

    def __init__(
        self,
        spec: HamiltonianSpec,
        decoherence: bool,
        drop_jump_modes: tuple[str, ...] = (),
    ):
        self.energies = spec.static_energies()
        self.drives = [(op, env) for op, env in spec.drive_terms()]
        self.collapse = []
        d = self.energies.size
        gamma = np.zeros(d)
        if decoherence:
            dims = spec.space
            for i, lb in enumerate(spec.active):
                mspec = spec.device.mode(lb)
                for (rate, kind), op in zip(
                    _mode_rates_per_ns(mspec), _single_mode_collapse(mspec, dims[i])
                ):
                    full = np.eye(1, dtype=complex)
                    for k, dk in enumerate(dims):
                        full = np.kron(full, op if k == i else np.eye(dk, dtype=complex))
                    gamma += np.real(np.diag(full.conj().T @ full))
                    # off-diagonal jumps of dropped modes dephase out of
                    # cross-sector blocks; keep only their no-jump damping
                    if lb in drop_jump_modes and kind != "dephase":
                        continue
                    self.collapse.append(full)
        self.gamma = gamma

    def phases(self, t: float) -> np.ndarray:
        return np.exp(1j * self.energies * t)

    def masked(self, op: np.ndarray, p: np.ndarray) -> np.ndarray:
        return (p[:, None] * op) * p.conj()[None, :]

    def rho_dot(self, t: float, rho: np.ndarray) -> np.ndarray:
        p = self.phases(t)
        out = np.zeros_like(rho)
        for a_op, env in self.drives:
            eps = MHZ_TO_RAD_NS * complex(env(t))
            v = self.masked(eps * a_op.conj().T + np.conj(eps) * a_op, p)
            out += -1j * (v @ rho - rho @ v)
        if self.collapse:
            out -= 0.5 * (self.gamma[:, None] + self.gamma[None, :]) * rho
            for L in self.collapse:
                Lt = self.masked(L, p)
                out += Lt @ rho @ Lt.conj().T
        return out

    def psi_dot(self, t: float, psi: np.ndarray) -> np.ndarray:
        p = self.phases(t)
        out = np.zeros_like(psi)
        for a_op, env in self.drives:
            eps = MHZ_TO_RAD_NS * complex(env(t))
            v = self.masked(eps * a_op.conj().T + np.conj(eps) * a_op, p)
            out += -1j * (v @ psi)
        return out


def _rk4(rhs, y0: np.ndarray, duration: float, dt: float) -> np.ndarray:
    steps = max(1, int(math.ceil(duration / dt - 1e-12)))
    h = duration / steps
    y = y0
    t = 0.0
    for _ in range(steps):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return y


def _adaptive(rhs, y0: np.ndarray, duration: float, tol: float) -> np.ndarray:
    from scipy.integrate import solve_ivp

    shape = y0.shape

    def f(t, y):
        return rhs(t, y.reshape(shape)).ravel()

    sol = solve_ivp(
        f, (0.0, duration), y0.ravel(), method="DOP853", rtol=tol, atol=tol, dense_output=False
    )
    if not sol.success:
        raise IntegratorError(f"adaptive integration failed: {sol.message}")
    return sol.y[:, -1].reshape(shape)


def evolve_blocks(
    blocks: np.ndarray,
    spec: HamiltonianSpec,
    duration_ns: float,
    cfg: IntegratorConfig,
    decoherence: bool = True,
    drop_jump_modes: tuple[str, ...] = (),
) -> np.ndarray:
    """Evolve a stack of operator blocks (…, d, d) under one generator.

    Plumbing shared by :func:`lindblad_evolve` and the echoed-gate machinery.
    ``drop_jump_modes`` removes the jump sandwich terms of the named modes'
    collapse operators (keeping their no-jump damping); used for
    cross-sector coherence blocks where those jumps carry fast phases that
    average away.
    """
    if duration_ns <= 0:
        return blocks.copy()
    frame = _InteractionFrame(spec, decoherence, drop_jump_modes)
    dt = cfg.dt_ns if spec.drives else cfg.dt_idle_ns
    if cfg.method == "adaptive":
        out = _adaptive(frame.rho_dot, blocks.astype(complex), duration_ns, cfg.max_step_error)
    else:
        out = _rk4(frame.rho_dot, blocks.astype(complex), duration_ns, dt)
    # undo the interaction-picture rotation
    p = frame.phases(duration_ns).conj()
    return (p[:, None] * out) * p.conj()[None, :]


def evolve_pure(
    psi: np.ndarray,
    spec: HamiltonianSpec,
    duration_ns: float,
    cfg: IntegratorConfig,
) -> np.ndarray:
    """Unitary evolution of state-vector columns (d,) or (d, batch)."""
    frame = _InteractionFrame(spec, decoherence=False)
    if duration_ns <= 0:
        return psi.copy()
    dt = cfg.dt_ns if spec.drives else cfg.dt_idle_ns
    if cfg.method == "adaptive":
        out = _adaptive(frame.psi_dot, psi.astype(complex), duration_ns, cfg.max_step_error)
    else:
        out = _rk4(frame.psi_dot, psi.astype(complex), duration_ns, dt)
    p = frame.phases(duration_ns).conj()
    return out * (p[:, None] if out.ndim == 2 else p)


def lindblad_evolve(
    rho: DensityMatrix,
    spec: HamiltonianSpec,
    duration_ns: float,
    cfg: IntegratorConfig | None = None,
    decoherence: bool = True,
) -> DensityMatrix:
    """Integrate the Lindblad master equation for ``duration_ns``.

    Collapse operators per mode are sqrt((1+n_th)/T1) a, sqrt(n_th/T1) a+,
    and sqrt(2 gamma_phi) a+a with gamma_phi = 1/T2 - 1/(2 T1).  Raises
    :class:`IntegratorError` if the trace drifts by more than 1e-6.
    """
    cfg = cfg or IntegratorConfig()
    if rho.space != spec.space:
        raise SpaceMismatchError(f"state space {rho.space} != spec space {spec.space}")
    if duration_ns < 0:
        raise StateValidationError("duration must be non-negative")
    if duration_ns == 0:
        return rho
    out = evolve_blocks(rho.matrix, spec, duration_ns, cfg, decoherence=decoherence)
    drift = abs(np.trace(out) - 1.0)
    if drift > 1e-6:
        raise IntegratorError(f"trace drifted by {drift:.3e} during evolution")
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(out / np.real(np.trace(out)), rho.space)


# ---------------------------------------------------------------------------
# closed-form idle channel

_IDLE_CACHE: dict = {}


def _idle_superop(spec: ModeSpec, dim: int, duration_ns: float) -> np.ndarray:
    """exp(G t) for the single-mode idle Liouvillian, as a (d,d,d,d) tensor.

    Index convention: out[i,j] = sum_kl S[i,j,k,l] rho[k,l].
    """
    key = (dim, spec.t1_us, spec.t2_us, spec.n_th, round(float(duration_ns), 6))
    hit = _IDLE_CACHE.get(key)
    if hit is not None:
        return hit
    eye = np.eye(dim, dtype=complex)
    gen = np.zeros((dim, dim, dim, dim), dtype=complex)
    for L in _single_mode_collapse(spec, dim):
        LdL = L.conj().T @ L
        gen += np.einsum("ik,jl->ijkl", L, L.conj())
        gen -= 0.5 * np.einsum("ik,jl->ijkl", LdL, eye)
        gen -= 0.5 * np.einsum("ik,jl->ijkl", eye, LdL.conj())
    sop = scipy.linalg.expm(gen.reshape(dim * dim, dim * dim) * duration_ns)
    sop = sop.reshape(dim, dim, dim, dim)
    _IDLE_CACHE[key] = sop
    return sop


def idle_channel(
    rho: DensityMatrix, mode: int, duration_us: float, spec: ModeSpec
) -> DensityMatrix:
    """Closed-form decoherence of one mode over an undriven wait.

    Amplitude damping, thermal excitation and pure dephasing with the
    parameters of ``spec``; equal to :func:`lindblad_evolve` under a zero
    Hamiltonian, but evaluated by exponentiating the single-mode Liouvillian
    once (cached) instead of stepping.
    """
    if duration_us < 0:
        raise StateValidationError("duration must be non-negative")
    if duration_us == 0:
        return rho
    dims = rho.space
    if not 0 <= mode < len(dims):
        raise SpaceMismatchError(f"mode index {mode} out of range for space {dims}")
    d = dims[mode]
    if d != spec.dim and spec.dim != d:
        raise SpaceMismatchError(f"mode dim {d} != spec dim {spec.dim}")
    sop = _idle_superop(spec, d, duration_us * US_TO_NS)
    pre = math.prod(dims[:mode]) if mode > 0 else 1
    post = math.prod(dims[mode + 1:]) if mode + 1 < len(dims) else 1
    r6 = rho.matrix.reshape(pre, d, post, pre, d, post)
    out = np.einsum("ijkl,pkqrls->piqrjs", sop, r6, optimize=True)
    d_tot = rho.dim
    out = out.reshape(d_tot, d_tot)
    out = 0.5 * (out + out.conj().T)
    return DensityMatrix(out, dims)


def idle_all(
    rho: DensityMatrix, duration_us: float, device: DeviceGraph, labels: Sequence[str]
) -> DensityMatrix:
    """Apply :func:`idle_channel` to every mode of the state, in order."""
    if len(labels) != len(rho.space):
        raise SpaceMismatchError("one label per mode required")
    out = rho
    for i, lb in enumerate(labels):
        out = idle_channel(out, i, duration_us, device.mode(lb))
    return out
