import math

import numpy as np
import pytest

from epsim.codes import Encoding, decode, detect_error, encode, parity_projector
from epsim.device import ModeSpec
from epsim.dynamics import idle_channel
from epsim.errors import EncodingError
from epsim.states import DensityMatrix, basis_ket


class TestEncoding:
    def test_binomial_code_words(self):
        enc = Encoding.binomial(6)
        z = np.zeros(6)
        z[0] = z[4] = 1 / math.sqrt(2)
        assert np.allclose(enc.logical_zero, z)
        o = np.zeros(6)
        o[2] = 1
        assert np.allclose(enc.logical_one, o)

    def test_orthonormal(self):
        for enc in (Encoding.fock(6), Encoding.binomial(6)):
            assert abs(np.vdot(enc.logical_zero, enc.logical_one)) < 1e-12
            assert abs(np.linalg.norm(enc.logical_zero) - 1) < 1e-12

    def test_equal_mean_photon_number(self):
        # both binomial code words average two photons, which is what makes
        # a single loss detectable without revealing the logical state
        enc = Encoding.binomial(6)
        n = np.arange(6)
        n_zero = np.sum(n * np.abs(enc.logical_zero) ** 2)
        n_one = np.sum(n * np.abs(enc.logical_one) ** 2)
        assert abs(n_zero - n_one) < 1e-12
        assert n_zero == pytest.approx(2.0, abs=1e-12)

    def test_truncation_guard(self):
        with pytest.raises(EncodingError):
            Encoding.binomial(4)


class TestEncode:
    def test_logical_zero(self):
        psi = encode((1.0, 0.0), Encoding.binomial(6))
        assert np.allclose(psi.amplitudes, Encoding.binomial(6).logical_zero)

    def test_plus_state_linearity(self):
        s = 1 / math.sqrt(2)
        psi = encode((s, s), Encoding.binomial(6))
        expected = np.zeros(6)
        expected[0] = 0.5
        expected[2] = s
        expected[4] = 0.5
        assert np.allclose(psi.amplitudes, expected)

    def test_fock_one(self):
        psi = encode((0.0, 1.0), Encoding.fock(6))
        assert np.allclose(psi.amplitudes, basis_ket((6,), (1,)).amplitudes)


class TestDetectError:
    def test_fresh_state_even(self):
        enc = Encoding.binomial(6)
        rho = encode((1.0, 0.0), enc).density()
        kept, outcome = detect_error(rho, 0, enc)
        assert outcome.outcome == "even"
        assert outcome.probability == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(kept.matrix, rho.matrix)

    def test_single_loss_is_odd(self):
        # a |1_L> = sqrt(2)|1>: fully odd parity
        enc = Encoding.binomial(6)
        rho = basis_ket((6,), (1,)).density()
        p_even_op = parity_projector(6, "even")
        assert np.real(np.trace(p_even_op @ rho.matrix)) == pytest.approx(0.0, abs=1e-12)

    def test_damped_plus_state_odd_weight(self):
        # closed-form Kraus expansion of amplitude damping on the encoded
        # |+L>, summed over odd Fock states
        enc = Encoding.binomial(6)
        t1, t = 256.0, 10.0
        eta = math.exp(-t / t1)
        gam = 1.0 - eta
        spec = ModeSpec("C", 6, t1, 2 * t1, 0.0)
        s = 1 / math.sqrt(2)
        rho = encode((s, s), enc).density()
        damped = idle_channel(rho, 0, t, spec)
        # populations 1/4 (n=0), 1/2 (n=2), 1/4 (n=4)
        p1 = 0.5 * math.comb(2, 1) * eta * gam + 0.25 * math.comb(4, 3) * eta * gam**3
        p3 = 0.25 * math.comb(4, 3) * eta**3 * gam
        p_odd_expected = p1 + p3
        kept, outcome = detect_error(damped, 0, enc)
        assert outcome.probability == pytest.approx(1.0 - p_odd_expected, abs=1e-9)
        # idempotent: detecting again keeps the state and gives p(even)=1
        kept2, outcome2 = detect_error(kept, 0, enc)
        assert outcome2.probability == pytest.approx(1.0, abs=1e-10)
        assert np.max(np.abs(kept2.matrix - kept.matrix)) < 1e-12

    def test_fock_flagged_unsupported(self):
        enc = Encoding.fock(6)
        rho = encode((0.0, 1.0), enc).density()
        kept, outcome = detect_error(rho, 0, enc)
        assert not outcome.detectable
        assert outcome.probability == 1.0
        assert kept is rho


class TestDecode:
    def test_roundtrip(self):
        enc = Encoding.binomial(6)
        q = np.array([0.6, 0.8j])
        rho = encode(q, enc).density()
        block, leakage = decode(rho, enc)
        assert leakage == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(block, np.outer(q, q.conj()), atol=1e-12)

    def test_full_leakage(self):
        enc = Encoding.binomial(6)
        rho = basis_ket((6,), (1,)).density()
        block, leakage = decode(rho, enc)
        assert leakage == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(block)) < 1e-12

    def test_damped_leakage_matches_kraus(self):
        enc = Encoding.binomial(6)
        t1, t = 256.0, 10.0
        spec = ModeSpec("C", 6, t1, 2 * t1, 0.0)
        s = 1 / math.sqrt(2)
        damped = idle_channel(encode((s, s), enc).density(), 0, t, spec)
        eta = math.exp(-t / t1)
        gam = 1.0 - eta
        # Kraus expansion oracle: propagate each loss order, project on code
        z, o = enc.logical_zero, enc.logical_one
        psi = (z + o) / math.sqrt(2)
        dim = 6
        a_op = np.diag(np.sqrt(np.arange(1, dim)), 1)
        in_code = 0.0
        for k in range(dim):
            ek = np.zeros((dim, dim))
            for n in range(k, dim):
                amp = math.sqrt(math.comb(n, k)) * eta ** ((n - k) / 2) * gam ** (k / 2)
                ek[n - k, n] = amp
            branch = ek @ psi
            in_code += abs(np.vdot(z, branch)) ** 2 + abs(np.vdot(o, branch)) ** 2
        _, leakage = decode(damped, enc)
        assert leakage == pytest.approx(1.0 - in_code, abs=1e-9)
