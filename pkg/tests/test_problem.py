"""Problem definitions, control sets, feedback controls and the assumption audit."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpsmp import get_benchmark, list_benchmarks
from jumpsmp.forward import StatePath
from jumpsmp.problem import (AffineStructure, ControlPath, ControlSet, LinearFeedback, ThresholdFeedback,
                             realize_control, validate)


def affine(**kw):
    base = dict(a=0.3, bu=1.0, sx=0.2, su=0.3, gamma=(0.3,), eta=(1.0,), qf=1.0, r=0.5, gT=1.0)
    base.update(kw)
    return AffineStructure(**base).to_problem(1.0, ControlSet.interval(-5, 5))


class TestControlSet:
    def test_finite(self):
        U = ControlSet.finite([1, -1])
        assert U.is_finite and U.values == (-1.0, 1.0)
        assert U.contains([-1.0, 0.0, 1.0]).tolist() == [True, False, True]

    def test_interval(self):
        U = ControlSet.interval(-2, 2, 5)
        np.testing.assert_allclose(U.grid(), [-2, -1, 0, 1, 2])
        assert U.bound() == 2.0

    @pytest.mark.parametrize("make", [lambda: ControlSet.finite([]), lambda: ControlSet.interval(1, 0)])
    def test_rejects(self, make):
        with pytest.raises(ValueError):
            make()

    def test_control_path_check(self):
        with pytest.raises(ValueError, match="outside"):
            ControlPath(np.array([0.0, 3.0])).check(ControlSet.interval(-1, 1))
        with pytest.raises(ValueError):
            ControlPath(np.zeros(3), np.zeros(2))


class TestFeedback:
    @given(k=st.floats(-3, 3), kj=st.floats(-3, 3), x=st.floats(-10, 10))
    def test_linear(self, k, kj, x):
        c = LinearFeedback(k, jump_gain=kj, offset=0.5)
        assert c(0.0, x) == pytest.approx(-k * x + 0.5)
        assert c.at_jump(0.0, x) == pytest.approx(-kj * x + 0.5)
        s = c.scaled(2.0)
        assert s(0.0, x) == pytest.approx(-2 * k * x + 0.5)

    def test_time_dependent_gain(self):
        c = LinearFeedback(lambda t: 1 + t)
        np.testing.assert_allclose(c(np.array([0.0, 1.0]), np.array([1.0, 1.0])), [-1.0, -2.0])

    def test_threshold(self):
        c = ThresholdFeedback(0.2)
        assert c(0, np.array([0.1, 0.2, 0.3])).tolist() == [1.0, 1.0, -1.0]

    def test_realize_uses_pre_jump_state_on_graph(self):
        post = np.array([1.0, 2.0, 5.0])
        left = np.array([1.0, 2.0, 3.0])
        state = StatePath(post=post, left=left)
        u = realize_control(LinearFeedback(1.0), state, np.array([0.0, 0.5, 1.0]))
        np.testing.assert_allclose(u.values, -post)
        np.testing.assert_allclose(u.jump_values, -left)


class TestValidate:
    @pytest.mark.parametrize("name", ["lq_jump", "bangbang", "deterministic_adjoint", "nonlinear_jump"])
    def test_benchmarks_pass(self, name):
        rep = validate(get_benchmark(name).problem)
        assert rep.passed, rep.failures()

    def test_registry_complete(self):
        assert set(list_benchmarks()) >= {"lq_jump", "bangbang", "deterministic_adjoint", "nonlinear_jump"}

    def test_superlinear_drift_flagged(self):
        p = affine()
        bad = p.replace(b=lambda t, x, u: x * np.abs(x), b_x=lambda t, x, u: 2 * np.abs(x))
        rep = validate(bad)
        assert not rep.clauses["linear_growth"]
        assert not rep.clauses["bounded:b_x"]

    def test_wrong_derivative_flagged(self):
        bad = affine().replace(sigma_x=lambda t, x, u: np.full_like(np.asarray(x, float), 0.7))
        assert "derivative:sigma_x" in validate(bad).failures()

    def test_non_finite_fails_clause(self):
        bad = affine().replace(f_xx=lambda t, x, u: np.full_like(np.asarray(x, float), np.nan))
        rep = validate(bad)
        assert not rep.passed and "finite:f_xx" in rep.failures()
