import numpy as np
import pytest

from epsim.codes import Encoding
from epsim.errors import StateValidationError
from epsim.purify import (
    BellDiagonal,
    ErrorBudget,
    bell_step,
    budget_product,
    dejmps_twirl,
    dm_purify_step,
    f_limit,
    pump_curve,
    ratio_to_fidelity,
    recurrence_werner,
    werner_ratio,
)
from epsim.states import bell_weights, tensor


class TestRecurrence:
    def test_perfect_inputs(self):
        assert recurrence_werner(1.0, 1.0) == (1.0, 1.0)

    def test_known_point(self):
        # frozen from direct evaluation, cross-checked against the
        # density-matrix step below
        f_new, p = recurrence_werner(0.8, 0.8)
        assert f_new == pytest.approx(0.838150289017341, abs=1e-12)
        assert p == pytest.approx(0.768888888888889, abs=1e-12)

    def test_fixed_point_bracketing(self):
        for f_b in (0.8, 0.9, 0.923, 0.99):
            lim = f_limit(f_b)
            for f_a in np.arange(0.5, 0.995, 0.01):
                f_new, _ = recurrence_werner(float(f_a), f_b)
                if f_a < lim - 1e-9:
                    assert f_new > f_a
                elif f_a > lim + 1e-9:
                    assert f_new < f_a

    def test_monotone_in_fa(self):
        for f_b in (0.8, 0.9, 0.99):
            grid = np.linspace(0.5, 1.0, 51)
            values = [recurrence_werner(float(f), f_b)[0] for f in grid]
            assert all(b > a for a, b in zip(values, values[1:]))


class TestFLimit:
    def test_perfect_fresh_pair(self):
        assert f_limit(1.0) == pytest.approx(1.0, abs=1e-12)

    def test_paper_operating_point(self):
        assert f_limit(0.923) == pytest.approx(0.9577, abs=5e-5)

    @pytest.mark.parametrize("f_b", [0.5, 0.8, 0.9, 0.923, 0.99])
    def test_fixed_point_residual(self, f_b):
        lim = f_limit(f_b)
        f_new, _ = recurrence_werner(lim, f_b)
        assert abs(f_new - lim) < 1e-9

    def test_domain(self):
        with pytest.raises(StateValidationError):
            f_limit(0.2)


class TestPumpCurve:
    def test_converges_to_limit(self):
        f_b = 0.923
        lim = f_limit(f_b)
        for f0 in (0.55, 0.7, 0.85, 0.94):
            fids = [f for f, _ in pump_curve(f0, f_b, 50)]
            # strictly increasing until the last 1e-9 of convergence
            for a, b in zip(fids, fids[1:]):
                if abs(a - lim) > 1e-9:
                    assert b > a
            assert abs(fids[-1] - lim) < 1e-6

    def test_entry_zero_is_start(self):
        curve = pump_curve(0.7, 0.9, 3)
        assert curve[0] == (0.7, 1.0)
        assert len(curve) == 4


class TestBellStep:
    def test_pure_psi_plus(self):
        pure = BellDiagonal(np.array([1.0, 0, 0, 0]))
        out, p = bell_step(pure, pure)
        assert np.allclose(out.w, [1, 0, 0, 0])
        assert p == pytest.approx(1.0)

    def test_reduces_to_werner_recurrence(self):
        a, b = BellDiagonal.werner(0.8), BellDiagonal.werner(0.8)
        out, p = bell_step(a, b)
        f_new, p_ref = recurrence_werner(0.8, 0.8)
        assert out.w[0] == pytest.approx(f_new, abs=1e-12)
        assert p == pytest.approx(p_ref, abs=1e-12)

    def test_matches_dm_step_on_random_weights(self):
        rng = np.random.default_rng(42)
        for _ in range(120):
            a = BellDiagonal(rng.dirichlet(np.ones(4)))
            b = BellDiagonal(rng.dirichlet(np.ones(4)))
            expected, p_expected = bell_step(a, b)
            rho4 = tensor(a.to_dm(), b.to_dm())
            got, p_got, _stats = dm_purify_step(
                rho4, keep="gg-or-ee", encodings=(Encoding.fock(2), Encoding.fock(2))
            )
            w, resid = bell_weights(got)
            assert resid < 1e-10
            assert np.max(np.abs(w - expected.w)) < 1e-10
            assert abs(p_got - p_expected) < 1e-10


class TestTwirl:
    def test_definition(self):
        s = BellDiagonal(np.array([0.7, 0.2, 0.05, 0.05]))
        assert np.allclose(dejmps_twirl(s).w, [0.7, 0.05, 0.05, 0.2])

    def test_werner_invariant(self):
        w = BellDiagonal.werner(0.8)
        assert np.allclose(dejmps_twirl(w).w, w.w)

    def test_involution(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = BellDiagonal(rng.dirichlet(np.ones(4)))
            assert np.allclose(dejmps_twirl(dejmps_twirl(s)).w, s.w, atol=1e-15)


class TestRatios:
    def test_known_values(self):
        assert werner_ratio(0.882) == pytest.approx(0.843, abs=1e-3)
        assert werner_ratio(0.25) == pytest.approx(0.0, abs=1e-12)
        assert ratio_to_fidelity(werner_ratio(0.7)) == pytest.approx(0.7, abs=1e-12)

    def test_budget_product(self):
        budget = ErrorBudget.from_ratios(
            [("re-entangle", 0.948), ("qubit decoherence", 0.925), ("cavity decay", 0.965)]
        )
        assert budget_product(budget) == pytest.approx(0.846, abs=1e-3)

    def test_entry_consistency_enforced(self):
        from epsim.purify import BudgetEntry

        with pytest.raises(StateValidationError):
            BudgetEntry("bad", 0.9, 0.5)


class TestDmPurifyStep:
    def test_gg_only_halves_success(self):
        rng = np.random.default_rng(7)
        encs = (Encoding.fock(2), Encoding.fock(2))
        for _ in range(30):
            a = BellDiagonal(rng.dirichlet(np.ones(4)))
            b = BellDiagonal(rng.dirichlet(np.ones(4)))
            rho4 = tensor(a.to_dm(), b.to_dm())
            _, p_both, stats = dm_purify_step(rho4, keep="gg-or-ee", encodings=encs)
            kept, p_gg, _ = dm_purify_step(rho4, keep="gg", encodings=encs)
            assert abs(stats["gg"] - stats["ee"]) < 1e-10
            assert abs(p_gg - p_both / 2.0) < 1e-10

    def test_pure_psi_plus_truth_table(self):
        pure = bell_like = BellDiagonal(np.array([1.0, 0, 0, 0])).to_dm()
        rho4 = tensor(bell_like, bell_like)
        kept, p, stats = dm_purify_step(
            rho4, keep="gg", encodings=(Encoding.fock(2), Encoding.fock(2))
        )
        w, _ = bell_weights(kept)
        assert np.allclose(w, [1, 0, 0, 0], atol=1e-10)
        assert p == pytest.approx(0.5, abs=1e-12)

    def test_outcome_probs_sum_to_one(self):
        rng = np.random.default_rng(9)
        a = BellDiagonal(rng.dirichlet(np.ones(4)))
        b = BellDiagonal(rng.dirichlet(np.ones(4)))
        rho4 = tensor(a.to_dm(), b.to_dm())
        _, _, stats = dm_purify_step(rho4, keep="gg", encodings=(Encoding.fock(2), Encoding.fock(2)))
        assert sum(stats.values()) == pytest.approx(1.0, abs=1e-10)
