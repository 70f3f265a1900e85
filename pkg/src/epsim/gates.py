"""Gate set: rotations, dispersive CZ/CNOT, qubit-cavity transfer, and the
echoed cavity-induced-phase (CIP) re-entangling gate.

The CIP gate drives the shared bus cavity off-resonantly with a Gaussian
envelope.  Each two-qubit branch sees a different bus detuning through the
dispersive shifts, traverses a branch-dependent loop in phase space, and
acquires a geometric phase; the branch-phase combination that survives the
echo is an effective ZZ rotation.  Two identical CIP segments with
simultaneous qubit flips in between cancel the phases contributed by storage
photons dispersively coupled to the qubits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .codes import Encoding
from .device import DeviceGraph
from .dynamics import (
    MHZ_TO_RAD_NS,
    Drive,
    HamiltonianSpec,
    IntegratorConfig,
    _rk4,
    evolve_blocks,
    evolve_pure,
    lindblad_evolve,
)
from .errors import CalibrationError, EncodingError, StateValidationError
from .states import (
    DensityMatrix,
    PureState,
    basis_ket,
    embed_operator,
    lowering_op,
    number_op,
)

__all__ = [
    "rotation",
    "phase_gate",
    "dispersive_cz",
    "cz_duration_ns",
    "logical_cnot",
    "swap_qubit_cavity",
    "encode_unitary",
    "CipParams",
    "EchoResult",
    "gaussian_envelope",
    "cip_evolve",
    "echoed_cip",
    "cip_branch_phases",
    "calibrate_echo",
    "CalibrationResult",
    "EchoedCipChannel",
]


# ---------------------------------------------------------------------------
# single- and two-mode unitaries


def rotation(axis: str, angle: float, dim: int = 2, encoding: Encoding | None = None) -> np.ndarray:
    """Bloch rotation exp(-i*angle/2 * sigma_axis) on a qubit or a code space.

    For ``dim == 2`` this is the bare qubit rotation.  For a cavity a
    declared encoding is required; the rotation acts within the code space
    and as identity on its complement.
    """
    if axis not in ("x", "y"):
        raise StateValidationError(f"rotation axis must be 'x' or 'y', got {axis!r}")
    if dim == 2 and encoding is None:
        c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
        if axis == "x":
            return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
        return np.array([[c, -s], [s, c]], dtype=complex)
    if encoding is None:
        raise EncodingError(f"rotation on a {dim}-level mode requires a declared encoding")
    if encoding.dim != dim:
        raise EncodingError(f"encoding dim {encoding.dim} != mode dim {dim}")
    sigma = encoding.pauli(axis)
    proj = encoding.code_projector()
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    return np.eye(dim, dtype=complex) + (c - 1.0) * proj - 1j * s * sigma


def phase_gate(phi: float) -> np.ndarray:
    """diag(1, e^{i phi}) on a qubit."""
    return np.diag([1.0, np.exp(1j * phi)]).astype(complex)


def dispersive_cz(chi_mhz: float, duration_ns: float, cavity_dim: int) -> np.ndarray:
    """Conditional-phase unitary exp(-i chi n |e><e| T) on (cavity, qubit).

    Diagonal in the product basis: the |n, e> level acquires phase
    ``-chi * n * T`` with chi in rad/ns internally.
    """
    if chi_mhz <= 0:
        raise StateValidationError("dispersive CZ needs chi > 0")
    chi = MHZ_TO_RAD_NS * chi_mhz
    n = np.arange(cavity_dim, dtype=float)
    phases = np.stack([np.zeros(cavity_dim), -chi * n * duration_ns], axis=1)
    return np.diag(np.exp(1j * phases.ravel()))


_CZ_PHOTON_PHASE = {"fock": math.pi, "binomial": math.pi / 2.0}


def cz_duration_ns(chi_mhz: float, encoding_kind: str) -> float:
    """CZ gate duration for an encoding: the per-photon phase times 1/chi.

    The binomial code words differ by two photons, so half the per-photon
    phase of the Fock encoding suffices.
    """
    if encoding_kind not in _CZ_PHOTON_PHASE:
        raise EncodingError(f"no CZ duration rule for encoding {encoding_kind!r}")
    return _CZ_PHOTON_PHASE[encoding_kind] / (MHZ_TO_RAD_NS * chi_mhz)


def logical_cnot(encoding: Encoding) -> np.ndarray:
    """CNOT with the encoded cavity as control, the qubit as target.

    Composition: x-rotations by +-pi/2 around the dispersive CZ, with a
    fixed z-phase (S) frame correction on the qubit so the code-basis truth
    table is exactly CNOT.  Outside the code space the CZ phases are the
    physical dispersive ones, so error states see a partial rotation.
    """
    dim = encoding.dim
    phi = _CZ_PHOTON_PHASE[encoding.kind]
    n = np.arange(dim, dtype=float)
    cz = np.diag(np.exp(1j * np.stack([np.zeros(dim), -phi * n], axis=1).ravel()))
    s = phase_gate(math.pi / 2.0)
    pre = rotation("x", math.pi / 2.0) @ s
    post = s.conj().T @ rotation("x", -math.pi / 2.0)
    eye = np.eye(dim, dtype=complex)
    return np.kron(eye, post) @ cz @ np.kron(eye, pre)


def swap_qubit_cavity(encoding: Encoding) -> np.ndarray:
    """Swap of qubit {g,e} with cavity logical {0L,1L}, on (cavity, qubit).

    Acts as the 2x2 SWAP on the code-space square and as identity on the
    out-of-code complement.
    """
    dim = encoding.dim
    g = np.array([1.0, 0.0], dtype=complex)
    e = np.array([0.0, 1.0], dtype=complex)
    x = np.kron(encoding.logical_zero, e)
    y = np.kron(encoding.logical_one, g)
    u = np.eye(2 * dim, dtype=complex)
    u -= np.outer(x, x.conj()) + np.outer(y, y.conj())
    u += np.outer(x, y.conj()) + np.outer(y, x.conj())
    return u


def encode_unitary(encoding: Encoding) -> np.ndarray:
    """Unitary taking (|vac> cavity) x (qubit) to (code state) x |g>.

    |0,g> -> |0L,g> and |0,e> -> |1L,g>; the action on the orthogonal
    complement is a deterministic completion.  For the Fock encoding this
    coincides with :func:`swap_qubit_cavity` on vacuum-start states.
    """
    dim = encoding.dim
    g = np.array([1.0, 0.0], dtype=complex)
    e = np.array([0.0, 1.0], dtype=complex)
    vac = np.zeros(dim, dtype=complex)
    vac[0] = 1.0
    sources = [np.kron(vac, g), np.kron(vac, e)]
    targets = [np.kron(encoding.logical_zero, g), np.kron(encoding.logical_one, g)]

    def completed_basis(cols):
        d = 2 * dim
        m = np.column_stack(cols + [np.eye(d, dtype=complex)])
        q = np.linalg.qr(m)[0][:, :d]
        for k, c in enumerate(cols):
            ph = np.vdot(q[:, k], c)
            q[:, k] = q[:, k] * (ph / abs(ph))
        return q

    qs = completed_basis(sources)
    qt = completed_basis(targets)
    return qt @ qs.conj().T


# ---------------------------------------------------------------------------
# CIP gate


@dataclass(frozen=True)
class CipParams:
    """Drive parameters of one CIP segment.

    ``delta_mhz`` is the bus-minus-drive detuning, ``amp_mhz`` the Gaussian
    peak amplitude, ``tau_ns`` the segment duration (the echoed gate runs
    two segments).
    """

    delta_mhz: float
    amp_mhz: float
    tau_ns: float
    bus_mode: str = "S2"

    def __post_init__(self):
        if self.delta_mhz == 0:
            raise StateValidationError("CIP detuning must be nonzero")
        if self.tau_ns <= 0:
            raise StateValidationError("CIP duration must be positive")
        if self.amp_mhz < 0:
            raise StateValidationError("CIP amplitude must be non-negative")


@dataclass(frozen=True)
class EchoResult:
    """Diagnostics of an echoed-CIP run.

    ``phases`` are the single-segment branch phases (Phi1, Phi2, Phi3) of
    the ge, eg and ee branches relative to gg; ``p_gg`` is the population
    the calibration sequence would return for these phases; the gate is
    adiabatic when the mean leftover bus photon number stays below 1%.
    """

    phases: tuple[float, float, float]
    p_gg: float
    residual_photons: float
    adiabatic: bool = True

    def __post_init__(self):
        if not -1e-9 <= self.p_gg <= 1.0 + 1e-9:
            raise StateValidationError(f"p_gg {self.p_gg} outside [0, 1]")
        if self.residual_photons < -1e-9:
            raise StateValidationError("residual photon number must be >= 0")

    @property
    def phase_condition(self) -> float:
        """Phi1 + Phi2 - Phi3, wrapped to (-pi, pi]."""
        s = self.phases[0] + self.phases[1] - self.phases[2]
        return float((s + math.pi) % (2.0 * math.pi) - math.pi)


ADIABATIC_THRESHOLD = 0.01


def gaussian_envelope(amp_mhz: float, tau_ns: float):
    """Gaussian pulse amp*exp(-8 (t - tau/2)^2 / tau^2), truncated to [0, tau].

    The truncation leaves a finite amplitude step at the edges; the
    calibration scan lands on durations where the two edge kicks cancel.
    """

    def env(t: float) -> float:
        x = (t - 0.5 * tau_ns) / tau_ns
        return amp_mhz * math.exp(-8.0 * x * x)

    return env


def _cip_spec(
    device: DeviceGraph,
    params: CipParams,
    modes: tuple[str, str, str],
    storage_shifts_mhz: tuple[float, float] = (0.0, 0.0),
) -> HamiltonianSpec:
    q1, bus, q2 = modes
    if bus != params.bus_mode:
        raise StateValidationError(f"bus mode {bus!r} != params.bus_mode {params.bus_mode!r}")
    shifts = {}
    if storage_shifts_mhz[0]:
        shifts[q1] = storage_shifts_mhz[0]
    if storage_shifts_mhz[1]:
        shifts[q2] = storage_shifts_mhz[1]
    drive = Drive(bus, gaussian_envelope(params.amp_mhz, params.tau_ns), params.delta_mhz)
    return HamiltonianSpec(device, active=modes, drives=(drive,), shifts_mhz=shifts)


def bus_dim_for_drive(amp_mhz: float, delta_mhz: float, minimum: int = 15) -> int:
    """Bus truncation that comfortably holds the driven coherent state."""
    peak = (amp_mhz / delta_mhz) ** 2
    return max(minimum, int(math.ceil(peak + 4.0 * math.sqrt(peak) + 3.0)))


def cip_evolve(
    state,
    device: DeviceGraph,
    params: CipParams,
    cfg: IntegratorConfig | None = None,
    modes: tuple[str, str, str] = ("Y1", "S2", "Y2"),
    storage_shifts_mhz: tuple[float, float] = (0.0, 0.0),
    decoherence: bool = True,
) -> "DensityMatrix | PureState":
    """One CIP segment on a (qubit, bus, qubit) state.

    ``storage_shifts_mhz`` adds the photon-number-conditioned frequency
    offsets of the two qubits (chi times the storage occupation), which is
    how spectator storage cavities in definite Fock states enter the
    reduced three-mode simulation.
    """
    cfg = cfg or IntegratorConfig()
    spec = _cip_spec(device, params, modes, storage_shifts_mhz)
    if isinstance(state, PureState):
        psi = evolve_pure(state.amplitudes, spec, params.tau_ns, cfg)
        return PureState(psi / np.linalg.norm(psi), state.space)
    return lindblad_evolve(state, spec, params.tau_ns, cfg, decoherence=decoherence)


def _flip_both(space: tuple[int, ...]) -> np.ndarray:
    x = rotation("x", math.pi)
    u = embed_operator(x, space, (0,))
    return embed_operator(x, space, (2,)) @ u


def _apply_unitary(state, u: np.ndarray):
    if isinstance(state, PureState):
        return PureState(u @ state.amplitudes, state.space)
    return DensityMatrix(u @ state.matrix @ u.conj().T, state.space)


def _mean_bus_photons(state, space: tuple[int, ...]) -> float:
    n_op = embed_operator(number_op(space[1]), space, (1,))
    if isinstance(state, PureState):
        return float(np.real(state.amplitudes.conj() @ n_op @ state.amplitudes))
    return float(np.real(np.trace(n_op @ state.matrix)))


def cip_branch_phases(
    device: DeviceGraph,
    params: CipParams,
    cfg: IntegratorConfig | None = None,
    modes: tuple[str, str, str] = ("Y1", "S2", "Y2"),
    storage_shifts_mhz: tuple[float, float] = (0.0, 0.0),
) -> tuple[float, float, float]:
    """Single-segment branch phases (Phi1, Phi2, Phi3) relative to gg.

    Phi1 belongs to the ge branch (second qubit excited), Phi2 to eg,
    Phi3 to ee.  Extracted from a decoherence-free run on the equal
    superposition of all four branches with the bus in vacuum.
    """
    cfg = cfg or IntegratorConfig()
    space = device.dims(modes)
    psi0 = basis_ket(space, (0, 0, 0)).amplitudes
    plus = rotation("y", math.pi / 2.0)
    u = embed_operator(plus, space, (0,)) @ embed_operator(plus, space, (2,))
    psi0 = u @ psi0
    spec = _cip_spec(device, params, modes, storage_shifts_mhz)
    psi = evolve_pure(psi0, spec, params.tau_ns, cfg)
    amps = psi.reshape(space)[:, 0, :]  # bus back in vacuum
    c_gg, c_ge, c_eg, c_ee = amps[0, 0], amps[0, 1], amps[1, 0], amps[1, 1]
    ref = np.angle(c_gg)
    wrap = lambda x: float((x + math.pi) % (2.0 * math.pi) - math.pi)
    return (
        wrap(np.angle(c_ge) - ref),
        wrap(np.angle(c_eg) - ref),
        wrap(np.angle(c_ee) - ref),
    )


def _pgg_from_phase(phase_condition: float) -> float:
    return 0.5 * (1.0 + math.sin(phase_condition))


def echoed_cip(
    state,
    device: DeviceGraph,
    params: CipParams,
    cfg: IntegratorConfig | None = None,
    modes: tuple[str, str, str] = ("Y1", "S2", "Y2"),
    storage_shifts_mhz: tuple[float, float] = (0.0, 0.0),
    decoherence: bool = True,
) -> tuple["DensityMatrix | PureState", EchoResult]:
    """CIP, simultaneous qubit flips, CIP.

    The flips invert which branch accumulates the storage-conditioned
    single-qubit phases, so those phases cancel between the segments while
    the ZZ phase survives.
    """
    cfg = cfg or IntegratorConfig()
    space = device.dims(modes)
    mid = cip_evolve(state, device, params, cfg, modes, storage_shifts_mhz, decoherence)
    mid = _apply_unitary(mid, _flip_both(space))
    out = cip_evolve(mid, device, params, cfg, modes, storage_shifts_mhz, decoherence)
    phases = cip_branch_phases(device, params, cfg, modes, storage_shifts_mhz)
    residual = _mean_bus_photons(out, space)
    cond = (sum(phases[:2]) - phases[2] + math.pi) % (2 * math.pi) - math.pi
    result = EchoResult(
        phases=phases,
        p_gg=_pgg_from_phase(cond),
        residual_photons=residual,
        adiabatic=residual <= ADIABATIC_THRESHOLD,
    )
    return out, result


# ---------------------------------------------------------------------------
# echo calibration


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of the echoed-CIP calibration scan."""

    tau_ns: float
    amp_mhz: float
    p_gg: float
    residual_photons: float
    phases: tuple[float, float, float]
    surface: np.ndarray = field(repr=False)  # columns: tau_ns, amp_mhz, p_gg, residual


def _calibration_sequence_pgg(
    device: DeviceGraph,
    params: CipParams,
    cfg: IntegratorConfig,
    modes: tuple[str, str, str],
) -> tuple[float, float]:
    """P(gg) and residual photons of the echo-calibration pulse sequence."""
    space = device.dims(modes)
    psi = basis_ket(space, (0, 0, 0)).amplitudes
    psi = embed_operator(rotation("y", math.pi / 2.0), space, (2,)) @ psi
    spec = _cip_spec(device, params, modes)
    psi = evolve_pure(psi, spec, params.tau_ns, cfg)
    psi = _flip_both(space) @ psi
    psi = evolve_pure(psi, spec, params.tau_ns, cfg)
    close = embed_operator(rotation("x", math.pi), space, (0,))
    close = embed_operator(rotation("x", -math.pi / 2.0), space, (2,)) @ close
    psi = close @ psi
    amps = psi.reshape(space)
    p_gg = float(np.sum(np.abs(amps[0, :, 0]) ** 2))
    n_bus = float(np.sum(np.arange(space[1]) * np.sum(np.abs(amps) ** 2, axis=(0, 2))))
    return p_gg, n_bus


def calibrate_echo(
    device: DeviceGraph,
    delta_mhz: float,
    tau_grid_ns,
    amp_grid_mhz,
    cfg: IntegratorConfig | None = None,
    modes: tuple[str, str, str] = ("Y1", "S2", "Y2"),
    bus_mode: str = "S2",
    residual_threshold: float = ADIABATIC_THRESHOLD,
    threads: int = 1,
) -> CalibrationResult:
    """Scan (tau, amp), maximizing the gg return of the calibration sequence.

    The sequence prepares a superposition on the second qubit, runs the
    echoed gate, and closes with rotations that map the state back to gg
    exactly when the surviving phase combination is pi/2.  Points whose
    leftover bus photon number exceeds ``residual_threshold`` are excluded
    from the argmax; ties break toward shorter tau, then smaller amplitude.
    The bus truncation adapts to the strongest drive in the grid.
    """
    cfg = cfg or IntegratorConfig()
    taus = [float(t) for t in tau_grid_ns]
    amps = [float(a) for a in amp_grid_mhz]
    if not taus or not amps:
        raise CalibrationError("calibration grids must be nonempty")
    need = bus_dim_for_drive(max(amps), delta_mhz, minimum=device.mode(bus_mode).dim)
    dev = device.with_mode(bus_mode, dim=need) if need != device.mode(bus_mode).dim else device

    def scan_tau(tau):
        rows = []
        for amp in amps:
            params = CipParams(delta_mhz, amp, tau, bus_mode)
            p_gg, resid = _calibration_sequence_pgg(dev, params, cfg, modes)
            rows.append((tau, amp, p_gg, resid))
        return rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_tau = list(pool.map(scan_tau, taus))
    else:
        per_tau = [scan_tau(t) for t in taus]
    surface = np.array([row for rows in per_tau for row in rows])

    ok = surface[:, 3] <= residual_threshold
    if not np.any(ok):
        raise CalibrationError(
            f"all {len(surface)} grid points leave more than "
            f"{residual_threshold:.2%} residual bus photons"
        )
    cand = surface[ok]
    order = np.lexsort((cand[:, 1], cand[:, 0], -cand[:, 2]))
    tau_star, amp_star, p_best, resid_best = cand[order[0]]
    phases = cip_branch_phases(dev, CipParams(delta_mhz, amp_star, tau_star, bus_mode), cfg, modes)
    return CalibrationResult(
        tau_ns=float(tau_star),
        amp_mhz=float(amp_star),
        p_gg=float(p_best),
        residual_photons=float(resid_best),
        phases=phases,
        surface=surface,
    )


# ---------------------------------------------------------------------------
# storage-conditioned echoed-CIP channel

_BRANCH_E1 = np.array([0.0, 0.0, 1.0, 1.0])  # first qubit excited per branch
_BRANCH_E2 = np.array([0.0, 1.0, 0.0, 1.0])
_FLIP = np.array([3, 2, 1, 0])  # both-qubit flip permutation of branches


class EchoedCipChannel:
    """Re-entangling channel on the communication qubits, conditioned on the
    storage photon numbers.

    The gate Hamiltonian commutes with both storage photon numbers: a
    storage Fock pair (n1, n3) only shifts the two qubit frequencies by
    chi(S1,Y1)*n1 and chi(S3,Y2)*n3, adding diagonal branch phases on top
    of the vacuum-sector gate map.  The full storage-correlated output can
    therefore be assembled from a handful of evolved branch components,
    with no per-sector integration.

    With decoherence on, cross-sector coherence blocks evolve with the
    qubit jump sandwiches removed (their sector-relative phases rotate many
    radians over the gate and average away).  This truncation is itself an
    exact Lindblad evolution whose qubit jump operators are dephased across
    storage sectors, so the assembled output is a completely positive
    channel result.  Diagonal sectors keep the untruncated generator.

    Every branch leaves each qubit excited for exactly one segment of the
    echo, so the storage also acquires a deterministic, state-independent
    dispersive phase exp(-i chi tau n); like the self-Kerr phases it is
    treated as a tracked software frame and compensated in the output.

    The channel includes the qubit superposition preparation before the
    echoed gate and the closing x-rotation on the first qubit, i.e. it maps
    (storage state) x |gg><gg| to the re-entangled joint state with the bus
    traced out.
    """

    def __init__(
        self,
        device: DeviceGraph,
        params: CipParams,
        cfg: IntegratorConfig | None = None,
        comm: tuple[str, str] = ("Y1", "Y2"),
        bus: str = "S2",
        storage: tuple[str, str] = ("S1", "S3"),
        decoherence: bool = True,
    ):
        cfg = cfg or IntegratorConfig()
        self.device = device
        self.params = params
        self.cfg = cfg
        self.comm = comm
        self.bus = bus
        self.storage = storage
        self.decoherence = decoherence
        self.modes = (comm[0], bus, comm[1])
        self.space3 = device.dims(self.modes)
        self.chi_per_photon_mhz = (
            device.chi_mhz(storage[0], comm[0]),
            device.chi_mhz(storage[1], comm[1]),
        )
        self.duration_ns = 2.0 * params.tau_ns
        self.vacuum_phases = cip_branch_phases(device, params, cfg, self.modes)
        self._build()

    # -- branch-resolved bus dynamics ---------------------------------------

    def _branch_energies(self) -> np.ndarray:
        """E[b, n]: static bus-ladder energies per qubit branch, rad/ns."""
        db = self.space3[1]
        n = np.arange(db, dtype=float)
        bus_spec = self.device.mode(self.bus)
        chi1 = self.device.chi_mhz(self.comm[0], self.bus)
        chi2 = self.device.chi_mhz(self.bus, self.comm[1])
        chi_qq = self.device.chi_mhz(self.comm[0], self.comm[1])
        detuning = (
            self.params.delta_mhz + _BRANCH_E1[:, None] * chi1 + _BRANCH_E2[:, None] * chi2
        )
        e = detuning * n[None, :] + bus_spec.self_kerr_mhz * (n * (n - 1.0))[None, :]
        e = e + (chi_qq * _BRANCH_E1 * _BRANCH_E2)[:, None]
        return MHZ_TO_RAD_NS * e

    def _bus_collapse(self) -> list[np.ndarray]:
        from .dynamics import _single_mode_collapse

        return _single_mode_collapse(self.device.mode(self.bus), self.space3[1])

    def _qubit_nojump(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-branch no-jump rate and per-(b,b') dephasing sandwich rate."""
        from .dynamics import _mode_rates_per_ns

        gamma_b = np.zeros(4)
        deph = np.zeros((4, 4))
        for which, exc in ((0, _BRANCH_E1), (1, _BRANCH_E2)):
            spec = self.device.mode(self.comm[which])
            for rate, kind in _mode_rates_per_ns(spec):
                if kind == "down":
                    gamma_b += rate * exc
                elif kind == "up":
                    gamma_b += rate * (1.0 - exc)
                else:  # dephase: L = n, L+L = n, sandwich couples e-branches
                    gamma_b += rate * exc
                    deph += rate * np.outer(exc, exc)
        return gamma_b, deph

    def _qubit_jump_transfers(self, left: np.ndarray, right: np.ndarray):
        """Jump-sandwich transfer table for the sixteen-block stack.

        A qubit jump is identity on the bus, so in the branch-block picture
        its sandwich moves block (b, b') to the jumped pair with an
        elementwise interaction-frame phase.  Entries: (target index,
        source index, rate, left frequency vector, right frequency vector).
        """
        from .dynamics import _mode_rates_per_ns

        energies = self._branch_energies()
        key = {(int(l), int(r)): k for k, (l, r) in enumerate(zip(left, right))}
        excited = (_BRANCH_E1, _BRANCH_E2)
        transfers = []
        for which in (0, 1):
            bit = 2 - which  # branch index bit of this qubit
            spec = self.device.mode(self.comm[which])
            for rate, kind in _mode_rates_per_ns(spec):
                if kind == "dephase":
                    continue  # handled as a block-local rate
                src_excited = 1.0 if kind == "down" else 0.0
                for k, (b, bp) in enumerate(zip(left, right)):
                    if excited[which][b] != src_excited or excited[which][bp] != src_excited:
                        continue
                    tb = b ^ bit if True else b
                    tb = b ^ (2 if which == 0 else 1)
                    tbp = bp ^ (2 if which == 0 else 1)
                    kt = key.get((tb, tbp))
                    if kt is None:
                        continue
                    wl = energies[tb] - energies[b]
                    wr = energies[tbp] - energies[bp]
                    transfers.append((kt, k, rate, wl, wr))
        return transfers

    def _evolve_bus_blocks(
        self,
        blocks: np.ndarray,
        left: np.ndarray,
        right: np.ndarray,
        qubit_jumps: bool = False,
    ):
        """Evolve bus blocks (k, B, B) with per-block branch indices.

        Bus drive and dissipation are exact; qubit channels enter through
        no-jump damping, the dephasing sandwich, and (optionally) the
        jump-transfer terms between blocks.  Works in the interaction
        picture of the per-branch bus ladders.
        """
        tau = self.params.tau_ns
        env = gaussian_envelope(self.params.amp_mhz, tau)
        energies = self._branch_energies()
        db = self.space3[1]
        x_op = lowering_op(db) + lowering_op(db).conj().T
        collapse = self._bus_collapse() if self.decoherence else []
        gamma_bus = np.zeros(db)
        for L in collapse:
            gamma_bus += np.real(np.diag(L.conj().T @ L))
        gamma_q, deph = self._qubit_nojump() if self.decoherence else (np.zeros(4), np.zeros((4, 4)))
        el, er = energies[left], energies[right]  # (k, B)
        damp = 0.5 * (gamma_bus[None, :, None] + gamma_bus[None, None, :]) + 0.5 * (
            gamma_q[left] + gamma_q[right]
        )[:, None, None] - deph[left, right][:, None, None]
        transfers = self._qubit_jump_transfers(left, right) if (qubit_jumps and self.decoherence) else []

        def rhs(t, y):
            pl = np.exp(1j * el * t)
            pr = np.exp(1j * er * t)
            eps = MHZ_TO_RAD_NS * env(t)
            xl = (pl[:, :, None] * x_op[None, :, :]) * pl.conj()[:, None, :]
            xr = (pr[:, :, None] * x_op[None, :, :]) * pr.conj()[:, None, :]
            out = -1j * eps * (xl @ y - y @ xr)
            if collapse:
                out -= damp * y
                for L in collapse:
                    ll = (pl[:, :, None] * L[None, :, :]) * pl.conj()[:, None, :]
                    lr = (pr[:, :, None] * L[None, :, :]) * pr.conj()[:, None, :]
                    out += ll @ y @ lr.conj().transpose(0, 2, 1)
            elif self.decoherence:
                out -= damp * y
            for kt, k, rate, wl, wr in transfers:
                phase = np.exp(1j * wl * t)[:, None] * np.exp(-1j * wr * t)[None, :]
                out[kt] += rate * phase * y[k]
            return out

        out = _rk4(rhs, blocks.astype(complex), tau, self.cfg.dt_ns)
        pl = np.exp(-1j * el * tau)
        pr = np.exp(-1j * er * tau)
        return (pl[:, :, None] * out) * pr.conj()[:, None, :]

    def _evolve_bus_columns(self, cols: np.ndarray, branch: np.ndarray) -> np.ndarray:
        """Unitary bus evolution of per-branch state columns (k, B)."""
        tau = self.params.tau_ns
        env = gaussian_envelope(self.params.amp_mhz, tau)
        energies = self._branch_energies()
        db = self.space3[1]
        x_op = lowering_op(db) + lowering_op(db).conj().T
        e = energies[branch]  # (k, B)

        def rhs(t, y):
            p = np.exp(1j * e * t)
            eps = MHZ_TO_RAD_NS * env(t)
            return -1j * eps * (p * (x_op @ (p.conj() * y).T).T)

        out = _rk4(rhs, cols.astype(complex), tau, self.cfg.dt_ns)
        return np.exp(-1j * e * tau) * out

    # -- cache construction ---------------------------------------------------

    def _branch_block(self, mat: np.ndarray, b: int, bp: int) -> np.ndarray:
        d1, db, d2 = self.space3
        t = mat.reshape(d1, db, d2, d1, db, d2)
        return t[b // 2, :, b % 2, bp // 2, :, bp % 2]

    def _build(self):
        db = self.space3[1]
        n_bus = np.arange(db, dtype=float)
        if not self.decoherence:
            # pure path: four branch columns, amplitudes 1/2 each
            cols = np.zeros((4, db), dtype=complex)
            cols[:, 0] = 0.5
            mid = self._evolve_bus_columns(cols, np.arange(4))
            out = self._evolve_bus_columns(mid[_FLIP], np.arange(4))
            self._w_cross = np.einsum("bn,cn->bc", out, out.conj())
            self._wn_cross = np.einsum("bn,n,bn->b", out.conj(), n_bus, out).real
            self._w_full = None
            self._vectors = out
            return
        # cross variant: sixteen branch blocks, bus-local generator
        left = np.repeat(np.arange(4), 4)
        right = np.tile(np.arange(4), 4)
        blocks = np.zeros((16, db, db), dtype=complex)
        blocks[:, 0, 0] = 0.25
        mid = self._evolve_bus_blocks(blocks, left, right)
        flip_index = 4 * _FLIP[left] + _FLIP[right]
        mid = mid[flip_index]
        out = self._evolve_bus_blocks(mid, left, right)
        self._w_cross = np.trace(out, axis1=1, axis2=2).reshape(4, 4)
        self._wn_cross = np.einsum("knn,n->k", out, n_bus).reshape(4, 4).diagonal().real.copy()

        # full variant: qubit jumps included, sixty-dimensional blocks
        space = self.space3
        spec = _cip_spec(self.device, self.params, self.modes)
        psi = basis_ket(space, (0, 0, 0)).amplitudes
        plus = rotation("y", math.pi / 2.0)
        prep = embed_operator(plus, space, (0,)) @ embed_operator(plus, space, (2,))
        psi = prep @ psi
        b0 = np.outer(psi, psi.conj())
        flip = _flip_both(space)
        a1 = evolve_blocks(b0, spec, self.params.tau_ns, self.cfg, decoherence=True)
        c = flip @ a1 @ flip.conj().T
        parts = np.zeros((16,) + b0.shape, dtype=complex)
        for b in range(4):
            for bp in range(4):
                block = np.zeros_like(b0)
                t = block.reshape(space + space)
                t[b // 2, :, b % 2, bp // 2, :, bp % 2] = self._branch_block(c, b, bp)
                parts[4 * b + bp] = block
        evolved = evolve_blocks(parts, spec, self.params.tau_ns, self.cfg, decoherence=True)
        w = np.zeros((4, 4, 4, 4), dtype=complex)
        wn = np.zeros((4, 4, 4, 4), dtype=complex)
        for b in range(4):
            for bp in range(4):
                m = evolved[4 * b + bp]
                for a in range(4):
                    for ap in range(4):
                        bus_block = self._branch_block(m, a, ap)
                        w[b, bp, a, ap] = np.trace(bus_block)
                        wn[b, bp, a, ap] = np.sum(n_bus * np.diag(bus_block))
        self._w_full = w
        self._wn_full = wn

    # -- assembly ------------------------------------------------------------

    def _sector_thetas(self, d1: int, d3: int) -> np.ndarray:
        """theta[s, b]: branch-b phase of sector s over one segment, radians."""
        u = MHZ_TO_RAD_NS * self.chi_per_photon_mhz[0] * np.arange(d1, dtype=float)
        v = MHZ_TO_RAD_NS * self.chi_per_photon_mhz[1] * np.arange(d3, dtype=float)
        us = np.repeat(u, d3)
        vs = np.tile(v, d1)
        return self.params.tau_ns * (
            us[:, None] * _BRANCH_E1[None, :] + vs[:, None] * _BRANCH_E2[None, :]
        )

    def qubit_maps(self, d1: int, d3: int) -> np.ndarray:
        """Y[s, s', 4, 4]: communication-qubit output block per sector pair.

        Sector index s = n1 * d3 + n3 runs over storage Fock pairs.  The
        deterministic storage frame phase is already compensated.
        """
        ns = d1 * d3
        y = np.broadcast_to(self._w_cross[None, None, :, :], (ns, ns, 4, 4)).copy()
        if self._w_full is not None:
            theta = self._sector_thetas(d1, d3)
            ex = np.exp(1j * theta)  # (ns, 4)
            yd = np.einsum("sb,sc,bcad->sad", ex, ex.conj(), self._w_full, optimize=True)
            yd *= ex.conj()[:, :, None] * ex[:, None, :]
            idx = np.arange(ns)
            y[idx, idx] = yd
        close = rotation("x", -math.pi / 2.0)
        close2 = np.kron(close, np.eye(2, dtype=complex))
        return np.einsum("ij,stjk,lk->stil", close2, y, close2.conj(), optimize=True)

    def residual_photons(self, storage_weights: np.ndarray, d1: int, d3: int) -> float:
        if self._w_full is None:
            return float(np.sum(storage_weights) * np.sum(self._wn_cross))
        theta = self._sector_thetas(d1, d3)
        ex = np.exp(1j * theta)
        per_sector = np.einsum("sb,sc,bcaa->s", ex, ex.conj(), self._wn_full, optimize=True)
        return float(np.real(np.sum(storage_weights * per_sector)))

    def apply(self, rho4: DensityMatrix) -> tuple[DensityMatrix, EchoResult]:
        """Re-entangle the communication pair of a (S1, S3, Y1, Y2) state.

        The qubits must be in their ground states (the protocol resets them
        before each pumping cycle); storage decoherence over the gate
        duration is the caller's responsibility.
        """
        d1, d3, q1, q2 = rho4.space
        if (q1, q2) != (2, 2):
            raise StateValidationError(f"expected two qubit modes last, got space {rho4.space}")
        mat = rho4.matrix.reshape(d1 * d3, 4, d1 * d3, 4)
        gg = mat[:, 0, :, 0]
        weight_gg = float(np.real(np.trace(gg)))
        if abs(weight_gg - 1.0) > 1e-7:
            raise StateValidationError(
                f"communication qubits are not reset (gg weight {weight_gg:.6f})"
            )
        y = self.qubit_maps(d1, d3)
        joint = gg[:, :, None, None].transpose(0, 2, 1, 3) * y.transpose(0, 2, 1, 3)
        d_tot = d1 * d3 * 4
        joint = joint.reshape(d_tot, d_tot)
        joint = 0.5 * (joint + joint.conj().T)
        out = DensityMatrix(joint / np.real(np.trace(joint)), (d1, d3, 2, 2))
        resid = self.residual_photons(np.real(np.diag(gg)), d1, d3)
        phases = self.vacuum_phases
        cond = (phases[0] + phases[1] - phases[2] + math.pi) % (2 * math.pi) - math.pi
        result = EchoResult(
            phases=phases,
            p_gg=_pgg_from_phase(cond),
            residual_photons=resid,
            adiabatic=resid <= ADIABATIC_THRESHOLD,
        )
        return out, result
