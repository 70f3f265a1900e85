import numpy as np
import pytest

from epsim.errors import (
    DimensionError,
    SpaceMismatchError,
    StateValidationError,
    ZeroProbabilityError,
)
from epsim.states import (
    DensityMatrix,
    PureState,
    basis_ket,
    bell_basis,
    bell_state,
    bell_weights,
    embed_operator,
    negativity,
    partial_trace,
    state_fidelity,
    tensor,
    trace_distance,
)
from epsim.purify import BellDiagonal


def random_density(rng, dims):
    d = int(np.prod(dims))
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho), dims)


def random_pure(rng, dims):
    d = int(np.prod(dims))
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return PureState(v / np.linalg.norm(v), dims)


def haar_unitary(rng, d):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


class TestConstruction:
    def test_density_invariants_enforced(self):
        with pytest.raises(StateValidationError):
            DensityMatrix(np.eye(4), (2, 2))  # trace 4
        bad = np.diag([1.5, -0.5]).astype(complex)
        with pytest.raises(StateValidationError):
            DensityMatrix(bad, (2,))
        nonherm = np.array([[0.5, 0.3], [0.1, 0.5]], dtype=complex)
        with pytest.raises(StateValidationError):
            DensityMatrix(nonherm, (2,))

    def test_pure_norm_enforced(self):
        with pytest.raises(StateValidationError):
            PureState(np.array([1.0, 1.0]), (2,))

    def test_space_length_must_match(self):
        with pytest.raises(SpaceMismatchError):
            PureState(np.array([1.0, 0.0, 0.0]), (2, 2))

    def test_immutability(self):
        rho = bell_state("psi+").density()
        with pytest.raises(ValueError):
            rho.matrix[0, 0] = 5.0


class TestTensor:
    def test_basis_product(self):
        g = basis_ket((2,), (0,)).density()
        out = tensor(g, g)
        expected = np.zeros((4, 4))
        expected[0, 0] = 1.0
        assert out.space == (2, 2)
        assert np.allclose(out.matrix, expected)

    def test_partial_trace_recovers_factor(self):
        rng = np.random.default_rng(3)
        a = random_density(rng, (2, 3))
        ident = DensityMatrix(np.eye(4) / 4.0, (4,))
        joint = tensor(a, ident)
        back = partial_trace(joint, (0, 1))
        assert np.max(np.abs(back.matrix - a.matrix)) < 1e-10

    def test_bell_times_bell_rank_one(self):
        # oracle: direct outer product of the four-qubit amplitude vector
        psi = bell_state("psi+").amplitudes
        vec = np.kron(psi, psi)
        expected = np.outer(vec, vec.conj())
        got = tensor(bell_state("psi+").density(), bell_state("psi+").density())
        assert got.matrix.shape == (16, 16)
        assert np.max(np.abs(got.matrix - expected)) < 1e-12
        assert abs(np.trace(got.matrix) - 1.0) < 1e-12
        assert np.linalg.matrix_rank(got.matrix, tol=1e-10) == 1

    def test_dimension_cap(self):
        big = DensityMatrix(np.eye(64) / 64.0, (64,))
        with pytest.raises(DimensionError):
            tensor(big, big, max_dim=1000)


class TestPartialTrace:
    def test_maximally_entangled_marginal(self):
        rho = bell_state("psi+").density()
        marg = partial_trace(rho, (0,))
        assert np.allclose(marg.matrix, np.eye(2) / 2.0, atol=1e-12)

    def test_brute_force_oracle_three_modes(self):
        rng = np.random.default_rng(11)
        dims = (2, 3, 2)
        rho = random_density(rng, dims)
        keep = (0, 2)
        # oracle: explicit index summation
        t = rho.matrix.reshape(dims + dims)
        expected = np.zeros((4, 4), dtype=complex)
        for i in range(2):
            for k in range(2):
                for ip in range(2):
                    for kp in range(2):
                        val = sum(t[i, j, k, ip, j, kp] for j in range(3))
                        expected[i * 2 + k, ip * 2 + kp] = val
        got = partial_trace(rho, keep)
        assert np.max(np.abs(got.matrix - expected)) < 1e-12
        assert abs(np.trace(got.matrix) - 1.0) < 1e-10

    def test_tensor_then_trace_roundtrip(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = random_density(rng, (2, 2))
            b = random_density(rng, (3,))
            joint = tensor(a, b)
            assert np.max(np.abs(partial_trace(joint, (0, 1)).matrix - a.matrix)) < 1e-10

    def test_empty_keep_rejected(self):
        rho = bell_state("psi+").density()
        with pytest.raises(SpaceMismatchError):
            partial_trace(rho, ())


class TestFidelity:
    def test_self_fidelity(self):
        psi = bell_state("psi+")
        assert state_fidelity(psi.density(), psi) == pytest.approx(1.0, abs=1e-12)

    def test_maximally_mixed(self):
        rho = DensityMatrix(np.eye(4) / 4.0, (2, 2))
        assert state_fidelity(rho, bell_state("psi+")) == pytest.approx(0.25, abs=1e-12)

    def test_werner_by_construction(self):
        rho = BellDiagonal.werner(0.8).to_dm()
        # oracle: direct matrix element
        psi = bell_state("psi+").amplitudes
        direct = np.real(psi.conj() @ rho.matrix @ psi)
        assert state_fidelity(rho, bell_state("psi+")) == pytest.approx(direct, abs=1e-14)
        assert direct == pytest.approx(0.8, abs=1e-12)

    def test_space_mismatch(self):
        rho = DensityMatrix(np.eye(4) / 4.0, (4,))
        with pytest.raises(SpaceMismatchError):
            state_fidelity(rho, bell_state("psi+"))


class TestNegativity:
    def test_bell_state(self):
        assert negativity(bell_state("psi+").density(), (0,)) == pytest.approx(0.5, abs=1e-10)

    def test_maximally_mixed(self):
        rho = DensityMatrix(np.eye(4) / 4.0, (2, 2))
        assert negativity(rho, (0,)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("f", [0.3, 0.5, 0.75, 0.9, 1.0])
    def test_werner_analytic(self, f):
        # analytic partial-transpose eigenvalues give max(0, (2F-1)/2)
        rho = BellDiagonal.werner(f).to_dm()
        assert negativity(rho, (0,)) == pytest.approx(max(0.0, (2 * f - 1) / 2), abs=1e-10)

    def test_local_unitary_invariance(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            rho = random_density(rng, (2, 2))
            u = np.kron(haar_unitary(rng, 2), haar_unitary(rng, 2))
            rotated = DensityMatrix(u @ rho.matrix @ u.conj().T, (2, 2))
            assert abs(negativity(rho, (0,)) - negativity(rotated, (0,))) < 1e-8

    def test_bad_partition(self):
        rho = bell_state("psi+").density()
        with pytest.raises(SpaceMismatchError):
            negativity(rho, (0, 1))


class TestBellWeights:
    def test_pure_bell(self):
        w, resid = bell_weights(bell_state("psi+").density())
        assert np.allclose(w, [1, 0, 0, 0], atol=1e-12)
        assert resid < 1e-12

    @pytest.mark.parametrize("f", [0.25, 0.6, 0.923])
    def test_werner_quadruple_exact(self, f):
        w, resid = bell_weights(BellDiagonal.werner(f).to_dm())
        rest = (1 - f) / 3.0
        assert np.max(np.abs(w - np.array([f, rest, rest, rest]))) < 1e-12
        assert resid < 1e-12

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            rho = random_density(rng, (2, 2))
            w, _ = bell_weights(rho)
            assert abs(w.sum() - 1.0) < 1e-10

    def test_bell_basis_unitary(self):
        b = bell_basis()
        assert np.allclose(b.conj().T @ b, np.eye(4), atol=1e-12)

    def test_rejects_non_two_qubit(self):
        rho = DensityMatrix(np.eye(4) / 4.0, (4,))
        with pytest.raises(SpaceMismatchError):
            bell_weights(rho)


class TestEmbedOperator:
    def test_single_mode_embedding(self):
        x = np.array([[0, 1], [1, 0]], dtype=complex)
        full = embed_operator(x, (2, 3, 2), (2,))
        expected = np.kron(np.eye(6), x)
        assert np.allclose(full, expected)

    def test_two_mode_order_matters(self):
        rng = np.random.default_rng(2)
        op = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        # acting on modes (1, 0) of a (2, 3, 2) space with op on (mode1 x mode0)
        full = embed_operator(op, (2, 3, 2), (1, 0))
        # oracle: permute the operator to (mode0 x mode1) order and embed as (0, 1)
        op_sw = op.reshape(3, 2, 3, 2).transpose(1, 0, 3, 2).reshape(6, 6)
        full2 = embed_operator(op_sw, (2, 3, 2), (0, 1))
        assert np.allclose(full, full2)

    def test_condition_and_zero_probability(self):
        rho = bell_state("psi+").density()
        proj = embed_operator(np.diag([1.0, 0.0]).astype(complex), (2, 2), (0,))
        cond, p = rho.condition(proj)
        assert p == pytest.approx(0.5, abs=1e-12)
        proj_none = np.zeros((4, 4), dtype=complex)
        with pytest.raises(ZeroProbabilityError):
            rho.condition(proj_none)


def test_trace_distance_basic():
    a = bell_state("psi+").density()
    b = bell_state("psi-").density()
    assert trace_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert trace_distance(a, b) == pytest.approx(1.0, abs=1e-10)
