import math

import numpy as np
import pytest

from epsim.device import DeviceGraph, ModeSpec, default_device
from epsim.dynamics import (
    MHZ_TO_RAD_NS,
    Drive,
    HamiltonianSpec,
    IntegratorConfig,
    build_hamiltonian,
    idle_all,
    idle_channel,
    lindblad_evolve,
)
from epsim.errors import StateValidationError
from epsim.states import DensityMatrix, basis_ket


def single_mode_device(label="Q", dim=2, t1=80.0, t2=None, n_th=0.0, kerr=0.0):
    spec = ModeSpec(label, dim, t1, 2 * t1 if t2 is None else t2, n_th, kerr)
    return DeviceGraph((spec,), np.zeros((1, 1)))


class TestBuildHamiltonian:
    def test_zero_case(self):
        dev = DeviceGraph(
            (ModeSpec("A", 2, 50, 50), ModeSpec("B", 3, 50, 50)), np.zeros((2, 2))
        )
        h = build_hamiltonian(HamiltonianSpec(dev, ("A", "B")), 0.0)
        assert np.max(np.abs(h)) == 0.0

    def test_hand_constructed_driven_system(self):
        # two qubits + bus with cross couplings and a detuned bus drive,
        # compared elementwise against an explicitly assembled operator
        chi = np.zeros((3, 3))
        chi[0, 1] = chi[1, 0] = 1.433
        chi[1, 2] = chi[2, 1] = 0.711
        dev = DeviceGraph(
            (
                ModeSpec("Y1", 2, 65, 30, 0.0),
                ModeSpec("S2", 4, 258, 516, 0.0, 0.0),
                ModeSpec("Y2", 2, 100, 85, 0.0),
            ),
            chi,
        )
        amp, delta = 5.0, 10.0
        spec = HamiltonianSpec(
            dev, ("Y1", "S2", "Y2"), drives=(Drive("S2", lambda t: amp, delta),)
        )
        t = 3.7
        got = build_hamiltonian(spec, t)

        n_q = np.diag([0.0, 1.0])
        n_b = np.diag(np.arange(4.0))
        a_b = np.diag(np.sqrt(np.arange(1, 4)), 1)
        eye2, eye4 = np.eye(2), np.eye(4)
        k = MHZ_TO_RAD_NS
        expected = k * delta * np.kron(eye2, np.kron(n_b, eye2))
        expected = expected + k * 1.433 * np.kron(n_q, np.kron(n_b, eye2))
        expected = expected + k * 0.711 * np.kron(eye2, np.kron(n_b, n_q))
        expected = expected + k * amp * np.kron(eye2, np.kron(a_b + a_b.T, eye2))
        assert np.max(np.abs(got - expected)) < 1e-12
        assert np.max(np.abs(got - got.conj().T)) < 1e-12

    def test_dispersive_ladder_spectrum(self):
        chi = np.array([[0.0, 1.0], [1.0, 0.0]])
        dev = DeviceGraph(
            (ModeSpec("Q", 2, 50, 30), ModeSpec("C", 6, 200, 400)), chi
        )
        h = build_hamiltonian(HamiltonianSpec(dev, ("Q", "C")), 0.0)
        evals = np.sort(np.linalg.eigvalsh(h)) / MHZ_TO_RAD_NS
        assert np.allclose(evals, [0] * 6 + [0, 1, 2, 3, 4, 5], atol=1e-10)


class TestLindbladEvolve:
    def test_qubit_t1_decay(self):
        dev = single_mode_device(t1=80.0)
        rho = basis_ket((2,), (1,)).density()
        out = lindblad_evolve(rho, HamiltonianSpec(dev, ("Q",)), 80_000.0)
        assert np.real(out.matrix[1, 1]) == pytest.approx(math.exp(-1), abs=1e-4)

    def test_pure_dephasing(self):
        dev = single_mode_device(t1=80.0, t2=40.0)
        plus = DensityMatrix(np.full((2, 2), 0.5, dtype=complex), (2,))
        out = lindblad_evolve(plus, HamiltonianSpec(dev, ("Q",)), 40_000.0)
        assert abs(out.matrix[0, 1]) == pytest.approx(0.5 * math.exp(-1), abs=1e-4)

    def test_cavity_single_photon_decay(self):
        dev = single_mode_device(dim=6, t1=261.0)
        rho = basis_ket((6,), (1,)).density()
        out = lindblad_evolve(rho, HamiltonianSpec(dev, ("Q",)), 100_000.0)
        assert np.real(out.matrix[1, 1]) == pytest.approx(math.exp(-100 / 261), abs=1e-4)

    def test_zero_duration_identity(self):
        dev = single_mode_device()
        rho = basis_ket((2,), (1,)).density()
        assert lindblad_evolve(rho, HamiltonianSpec(dev, ("Q",)), 0.0) is rho

    def test_unitary_purity_conserved(self):
        dev = DeviceGraph(
            (ModeSpec("Q", 2, 50, 30), ModeSpec("C", 5, 200, 400)),
            np.array([[0.0, 1.2], [1.2, 0.0]]),
        )
        spec = HamiltonianSpec(dev, ("Q", "C"), drives=(Drive("C", lambda t: 2.0, 8.0),))
        psi = basis_ket((2, 5), (1, 0))
        rho = psi.density()
        out = lindblad_evolve(rho, spec, 500.0, decoherence=False)
        assert out.purity() == pytest.approx(1.0, abs=1e-8)
        assert abs(np.trace(out.matrix) - 1.0) < 1e-8

    def test_trace_and_hermiticity_preserved(self):
        dev = default_device()
        spec = HamiltonianSpec(
            dev.subgraph(("Y1", "S2", "Y2")),
            ("Y1", "S2", "Y2"),
            drives=(Drive("S2", lambda t: 4.0, -10.0),),
        )
        rho = basis_ket(dev.dims(("Y1", "S2", "Y2")), (0, 0, 0)).density()
        out = lindblad_evolve(rho, spec, 300.0)
        assert abs(np.trace(out.matrix) - 1.0) < 1e-8
        assert np.max(np.abs(out.matrix - out.matrix.conj().T)) < 1e-9

    def test_adaptive_matches_fixed(self):
        dev = single_mode_device(dim=4, t1=100.0, t2=150.0, n_th=0.02)
        spec = HamiltonianSpec(dev, ("Q",), drives=(Drive("Q", lambda t: 1.0, 5.0),))
        rho = basis_ket((4,), (0,)).density()
        fixed = lindblad_evolve(rho, spec, 400.0, IntegratorConfig(method="fixed"))
        adaptive = lindblad_evolve(rho, spec, 400.0, IntegratorConfig(method="adaptive"))
        assert np.max(np.abs(fixed.matrix - adaptive.matrix)) < 1e-7

    def test_dt_halving_convergence(self):
        # driven CIP-strength evolution: halving the default step moves the
        # final state by less than 1e-6 elementwise
        dev = default_device()
        sub = dev.subgraph(("Y1", "S2", "Y2"))
        def env(t):
            x = (t - 700.0) / 1400.0
            return 10.9 * math.exp(-8.0 * x * x)
        spec = HamiltonianSpec(sub, ("Y1", "S2", "Y2"), drives=(Drive("S2", env, -10.0),))
        rho = basis_ket(sub.dims(("Y1", "S2", "Y2")), (1, 0, 1)).density()
        base = lindblad_evolve(rho, spec, 1400.0, IntegratorConfig(dt_ns=0.25))
        half = lindblad_evolve(rho, spec, 1400.0, IntegratorConfig(dt_ns=0.125))
        assert np.max(np.abs(base.matrix - half.matrix)) < 1e-6

    def test_negative_duration_rejected(self):
        dev = single_mode_device()
        rho = basis_ket((2,), (0,)).density()
        with pytest.raises(StateValidationError):
            lindblad_evolve(rho, HamiltonianSpec(dev, ("Q",)), -1.0)


class TestIdleChannel:
    def test_zero_duration(self):
        spec = ModeSpec("C", 6, 256, 512)
        rho = basis_ket((6,), (3,)).density()
        assert idle_channel(rho, 0, 0.0, spec) is rho

    def test_coherence_decay_rate(self):
        # |e><g| coherence decays at 1/(2 T1) under pure damping
        t1 = 60.0
        spec = ModeSpec("Q", 2, t1, 2 * t1)
        mat = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
        out = idle_channel(DensityMatrix(mat, (2,)), 0, 30.0, spec)
        assert abs(out.matrix[1, 0]) == pytest.approx(0.5 * math.exp(-30 / (2 * t1)), abs=1e-10)

    def test_fock4_binomial_loss_distribution(self):
        t1, t = 256.0, 20.0
        spec = ModeSpec("C", 6, t1, 2 * t1)
        out = idle_channel(basis_ket((6,), (4,)).density(), 0, t, spec)
        eta = math.exp(-t / t1)
        probs = [math.comb(4, k) * eta ** (4 - k) * (1 - eta) ** k for k in range(5)]
        got = np.real(np.diag(out.matrix))[:5]
        assert np.max(np.abs(got - np.array(probs)[::-1])) < 1e-12

    def test_matches_lindblad_zero_hamiltonian(self):
        spec = ModeSpec("C", 5, 100.0, 120.0, 0.03)
        dev = DeviceGraph((spec,), np.zeros((1, 1)))
        rho = basis_ket((5,), (3,)).density()
        via_idle = idle_channel(rho, 0, 25.0, spec)
        via_lindblad = lindblad_evolve(rho, HamiltonianSpec(dev, ("C",)), 25_000.0)
        assert np.max(np.abs(via_idle.matrix - via_lindblad.matrix)) < 1e-6

    def test_semigroup_composition(self):
        spec = ModeSpec("C", 6, 256.0, 300.0, 0.02)
        rho = basis_ket((6,), (4,)).density()
        a = idle_channel(idle_channel(rho, 0, 7.0, spec), 0, 5.0, spec)
        b = idle_channel(rho, 0, 12.0, spec)
        assert np.max(np.abs(a.matrix - b.matrix)) < 1e-8

    def test_multimode_targeting(self):
        dev = default_device()
        labels = ("S1", "Y1")
        rho = basis_ket(dev.dims(labels), (1, 1)).density()
        out = idle_all(rho, 5.0, dev, labels)
        # both excitations decay by their own rates
        p_s1 = np.real(np.trace(out.matrix.reshape(6, 2, 6, 2)[1, :, 1, :]))
        p_y1 = np.real(np.trace(out.matrix.reshape(6, 2, 6, 2)[:, 1, :, 1]))
        assert p_s1 == pytest.approx(math.exp(-5 / 261) * (1 + 0.03 * 0), abs=2e-3)
        assert p_y1 < p_s1  # transmon decays much faster
