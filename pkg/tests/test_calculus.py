"""Pathwise integrals against B, N and the compensated measure."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpsmp.calculus import (bracket_of_jump_integral, compensated_jump_integral, compensator,
                              graph_indicator, ito_integral, jump_integral_N, jump_of_integral)
from jumpsmp.noise import MarkSpace, NoisePath, SeedSpec, refine_grid, sample_noise

from conftest import se


def hand_path():
    grid = refine_grid(np.linspace(0, 1, 5), [0.3, 0.6], [0, 1])
    return NoisePath(grid, np.array([0.1, -0.2, 0.05, 0.3, -0.1, 0.2]), MarkSpace((1.0, 2.0)), 4)


class TestHandComputed:
    def test_ito_left_point(self):
        p = hand_path()
        H = np.arange(7.0)
        expected = np.concatenate([[0], np.cumsum(H[:-1] * p.brownian_increments)])
        np.testing.assert_allclose(ito_integral(H, p), expected)

    def test_counting_integral(self):
        p = hand_path()
        H = np.zeros((7, 2))
        H[2, 0], H[3, 1], H[3, 0] = 5.0, 7.0, 100.0
        # only (node 2, mark 0) and (node 4, mark 1) lie on the graph
        out = jump_integral_N(H, p)
        assert out[-1] == 5.0
        H[4, 1] = 3.0
        assert jump_integral_N(H, p)[-1] == 8.0

    def test_compensator_left_riemann(self):
        p = hand_path()
        ms = p.mark_space
        comp = compensator(1.0, ms, p.grid)
        np.testing.assert_allclose(comp[-1], 3.0)
        np.testing.assert_allclose(comp, 3.0 * p.grid.times)

    def test_jump_of_integral(self):
        p = hand_path()
        H = np.full((7, 2), 2.0)
        H[4, 1] = -1.5
        assert jump_of_integral(H, p, 0.6) == -1.5
        assert jump_of_integral(H, p, 0.5) == 0.0

    def test_predictable_version_checked(self):
        p = hand_path()
        H = np.ones((7, 2))
        with pytest.raises(ValueError, match="disagree"):
            compensated_jump_integral(H, 2 * H, p, p.mark_space)

    def test_bad_shape(self):
        p = hand_path()
        with pytest.raises(ValueError):
            ito_integral(np.ones(3), p)
        with pytest.raises(ValueError):
            jump_integral_N(np.ones((3, 2)), p)


class TestIdentities:
    @given(index=st.integers(0, 200), scale=st.floats(-3, 3))
    @settings(max_examples=30, deadline=None)
    def test_jump_and_bracket(self, index, scale):
        ms = MarkSpace((1.5, 0.5))
        p = sample_noise(SeedSpec(31, index), ms, 1.0, 16)
        rng = np.random.default_rng(index)
        H = scale * rng.standard_normal((p.grid.times.size, 2))
        I = compensated_jump_integral(H, H, p, ms)
        for t, e in p.jump_events:
            i = p.grid.index_of(t)
            # the compensator has no atoms, so the jump of I at T_n is H(T_n, e_n)
            comp = compensator(H, ms, p.grid)
            assert (I[i] + comp[i]) - (I[i - 1] + comp[i - 1]) == pytest.approx(H[i, e], abs=1e-12)
            assert jump_of_integral(H, p, t, ms) == H[i, e]
        np.testing.assert_allclose(bracket_of_jump_integral(H, p, ms)[-1],
                                   sum(H[p.grid.index_of(t), e] ** 2 for t, e in p.jump_events))

    @given(index=st.integers(0, 200))
    @settings(max_examples=30, deadline=None)
    def test_vanishing_on_graph_gives_zero(self, index):
        ms = MarkSpace((2.0,))
        p = sample_noise(SeedSpec(32, index), ms, 1.0, 16)
        H = 1.0 - graph_indicator(p, 1)
        # off-graph values are invisible to N; taking the predictable version zero as well
        # the compensated integral vanishes identically
        np.testing.assert_array_equal(jump_integral_N(H, p, ms), 0.0)
        np.testing.assert_array_equal(compensated_jump_integral(H, np.zeros_like(H), p, ms), 0.0)

    @given(index=st.integers(0, 200))
    @settings(max_examples=20, deadline=None)
    def test_graph_indicator_counts_jumps(self, index):
        ms = MarkSpace((1.0, 1.0))
        p = sample_noise(SeedSpec(33, index), ms, 1.0, 8)
        assert jump_integral_N(graph_indicator(p, 2), p, ms)[-1] == p.jump_count()

    def test_linearity(self, noise_path, two_marks):
        rng = np.random.default_rng(0)
        n = noise_path.grid.times.size
        H1, H2 = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        lhs = compensated_jump_integral(2 * H1 - H2, 2 * H1 - H2, noise_path, two_marks)
        rhs = 2 * compensated_jump_integral(H1, H1, noise_path, two_marks) \
            - compensated_jump_integral(H2, H2, noise_path, two_marks)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.fixture(scope="module")
def paths():
    ms = MarkSpace((1.0, 2.0))
    return ms, [sample_noise(SeedSpec(40, i), ms, 1.0, 32) for i in range(3000)]


class TestStatistical:

    def test_ito_isometry(self, paths):
        _, ps = paths
        vals, sq = [], []
        for p in ps:
            H = np.cos(p.brownian_path)  # adapted, left-evaluated
            I = ito_integral(H, p)[-1]
            vals.append(I ** 2 - np.sum(H[:-1] ** 2 * p.grid.dt))
            sq.append(I)
        assert abs(np.mean(sq)) <= 4 * se(sq)
        assert abs(np.mean(vals)) <= 4 * se(vals)

    def test_compensated_integral_is_centered(self, paths):
        ms, ps = paths
        vals, brk = [], []
        for p in ps:
            H = 1.0 + 0.5 * np.sin(p.brownian_path)[:, None] * np.array([1.0, -2.0])
            I = compensated_jump_integral(H, H, p, ms, check=False)[-1]
            vals.append(I)
            brk.append(I ** 2 - bracket_of_jump_integral(H, p, ms)[-1])
        assert abs(np.mean(vals)) <= 4 * se(vals)
        assert abs(np.mean(brk)) <= 4 * se(brk)
