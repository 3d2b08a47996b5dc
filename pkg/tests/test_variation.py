"""Spike controls, variational equations and order fits."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jumpsmp.forward import cost
from jumpsmp.variation import (LEMMA_KEYS, SpikeSpec, base_solution, fit_moments, fit_order, lemma_samples,
                               naive_spike_control, run_spike, spike_control, state_difference_samples,
                               summarize_lemmas, window_jump_fraction)

EPS = (1 / 8, 1 / 16, 1 / 32, 1 / 64)


@pytest.fixture(scope="module")
def lq_base(lq):
    batch = lq.batch(400, seed=9, base_steps=64)
    state, u = base_solution(lq.problem, lq.reference_control, batch)
    return batch, state, u


class TestSpikeControls:
    def test_window_is_half_open(self):
        spec = SpikeSpec(0.25, 0.25, 1.0)
        t = np.array([0.0, 0.25, 0.4, 0.5, 0.75])
        assert spec.window(t).tolist() == [False, True, True, False, False]

    def test_rejects_bad_specs(self, lq_base):
        batch, state, u = lq_base
        with pytest.raises(ValueError):
            SpikeSpec(-0.1, 0.1)
        with pytest.raises(ValueError):
            spike_control(u, SpikeSpec(0.9, 0.2, 1.0), batch)
        with pytest.raises(ValueError):
            spike_control(u, SpikeSpec(0.1, 0.1, lambda x: x), batch)

    def test_graph_control_untouched(self, lq_base):
        batch, state, u = lq_base
        spec = SpikeSpec(0.25, 0.125, 3.0)
        ue = spike_control(u, spec, batch)
        mask = spec.window(batch.times)
        np.testing.assert_array_equal(ue.jump_values, u.jump_values)
        assert np.all(ue.values[mask] == 3.0)
        np.testing.assert_array_equal(ue.values[~mask], u.values[~mask])
        naive = naive_spike_control(u, spec, batch)
        assert np.all(naive.jump_values[mask] == 3.0)

    def test_state_dependent_value(self, lq_base):
        batch, state, u = lq_base
        ue = spike_control(u, SpikeSpec(0.25, 0.125, lambda x: -x), batch, state)
        i = batch.base_index[:, 16]  # node of t = 0.25
        x_bar = state.post[np.arange(batch.n_paths), i]
        np.testing.assert_allclose(ue.values[np.arange(batch.n_paths), i], -x_bar)

    def test_window_jump_fraction(self, lq):
        batch = lq.batch(4000, seed=10, base_steps=32)
        eps = 0.125
        f = window_jump_fraction(SpikeSpec(0.25, eps, 1.0), batch)
        expected = 1 - np.exp(-lq.mark_space.total_mass * eps)
        assert abs(f - expected) <= 4 * np.sqrt(expected * (1 - expected) / 4000)


class TestAffineExactness:
    """Affine coefficients: the first variation is the state difference, the second vanishes."""

    @pytest.mark.parametrize("eps", EPS)
    def test_state_expansion_exact(self, lq, lq_base, eps):
        batch, state, u = lq_base
        run = run_spike(lq.problem, SpikeSpec(0.25, eps, 2.0), batch, state, u)
        np.testing.assert_allclose(run.x_eps.post - state.post, run.x_hat.post, atol=1e-12)
        np.testing.assert_array_equal(run.y_hat.post, 0.0)

    def test_cost_expansion_exact(self, lq, lq_base):
        batch, state, u = lq_base
        s = lemma_samples(lq.problem, u, batch, 0.25, 2.0, EPS)
        np.testing.assert_allclose(s["cost_residual"], 0.0, atol=1e-10)
        np.testing.assert_allclose(s["state_residual"], 0.0, atol=1e-18)

    def test_naive_gap_is_a_compensated_integral(self, lq):
        # naive minus graph-avoiding: forced by eta (v - u) on the graph minus its
        # compensator, so mean zero with second moment of order eps
        batch = lq.batch(3000, seed=12, base_steps=64)
        state, u = base_solution(lq.problem, lq.reference_control, batch)
        gaps, ms = [], []
        for eps in EPS:
            spec = SpikeSpec(0.25, eps, 2.0)
            a = run_spike(lq.problem, spec, batch, state, u, variations=False).x_eps.post[:, -1]
            b = run_spike(lq.problem, spec, batch, state, u, naive=True, variations=False).x_eps.post[:, -1]
            d = b - a
            gaps.append(abs(d.mean()) / (d.std(ddof=1) / np.sqrt(d.size)))
            ms.append(np.mean(d ** 2))
        assert max(gaps) <= 4
        assert 0.7 <= fit_order(EPS, ms).slope <= 1.3

    def test_zero_width_spike(self, lq, lq_base):
        batch, state, u = lq_base
        sups = state_difference_samples(lq.problem, u, batch, 0.25, 2.0, [0.0])
        np.testing.assert_array_equal(sups, 0.0)


class TestOrderFit:
    @given(slope=st.floats(0.5, 4), scale=st.floats(1e-3, 1e3))
    def test_exact_power_law(self, slope, scale):
        eps = 2.0 ** -np.arange(3, 9)
        fit = fit_order(eps, scale * eps ** slope)
        assert fit.slope == pytest.approx(slope, abs=1e-9)
        assert fit.r2 == pytest.approx(1.0)

    @pytest.mark.parametrize("eps,m", [([0.1, 0.2, 0.3, 0.4], [1, 1, 1, 1]),
                                       ([0.4, 0.3, 0.2], [1, 1, 1]),
                                       ([0.4, 0.3, 0.2, 0.1], [1, 0, 1, 1])])
    def test_rejects(self, eps, m):
        with pytest.raises(ValueError):
            fit_order(eps, m)

    def test_fit_moments(self):
        eps = np.array([0.4, 0.2, 0.1, 0.05])
        sups = np.sqrt(eps)[:, None] * np.linspace(0.5, 1.5, 20)
        fits = fit_moments(eps, sups, (2, 4))
        assert fits[2].slope == pytest.approx(1.0) and fits[4].slope == pytest.approx(2.0)


class TestNonlinearOrders:
    def test_variation_orders(self):
        from jumpsmp import get_benchmark
        inst = get_benchmark("nonlinear_jump")
        batch = inst.batch(600, seed=3, base_steps=512)
        eps = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
        s = lemma_samples(inst.problem, inst.reference_control, batch, 0.25, 1.0, eps)
        assert set(s) == set(LEMMA_KEYS) and s["x_hat"].shape == (4, 600)
        out = summarize_lemmas(eps, s)
        assert 0.8 <= out["x_hat"].slope <= 1.3
        assert 1.7 <= out["y_hat"].slope <= 2.6
        assert out["state_residual"].shrink < 1
