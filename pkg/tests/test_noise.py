"""Noise generation: grid refinement, reproducibility and distributional checks."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from jumpsmp.noise import (NO_JUMP, MarkSpace, NoiseBatch, SeedSpec, TimeGrid, coarsen, refine_grid,
                           sample_batch, sample_noise)


class TestMarkSpace:
    def test_probabilities_normalized(self, two_marks):
        assert two_marks.total_mass == pytest.approx(3.5)
        np.testing.assert_allclose(two_marks.probabilities, [1 / 3.5, 2.5 / 3.5])

    @pytest.mark.parametrize("weights", [(0.0,), (-1.0, 1.0), (np.inf,), (np.nan,)])
    def test_rejects_bad_weights(self, weights):
        with pytest.raises(ValueError):
            MarkSpace(weights)

    def test_empty_has_zero_mass(self):
        assert MarkSpace.empty().total_mass == 0.0


class TestGrid:
    def test_refine_inserts_jump_nodes(self):
        g = refine_grid(np.linspace(0, 1, 5), [0.3, 0.5], [1, 0])
        np.testing.assert_allclose(g.times, [0, 0.25, 0.3, 0.5, 0.75, 1.0])
        assert g.jump_marks.tolist() == [NO_JUMP, NO_JUMP, 1, 0, NO_JUMP, NO_JUMP]

    @pytest.mark.parametrize("jumps", [[0.0], [1.5], [0.3, 0.3]])
    def test_refine_rejects(self, jumps):
        with pytest.raises(ValueError):
            refine_grid(np.linspace(0, 1, 5), jumps)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 0.5, 0.5]), np.full(3, NO_JUMP))
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 1.0]), np.array([0, NO_JUMP]))

    def test_index_of(self):
        g = refine_grid(np.linspace(0, 1, 3), [0.7])
        assert g.index_of(0.7) == 2
        with pytest.raises(ValueError):
            g.index_of(0.6)


class TestSampling:
    def test_reproducible(self, two_marks):
        a = sample_noise(SeedSpec(3, 4), two_marks, 1.0, 16)
        b = sample_noise(SeedSpec(3, 4), two_marks, 1.0, 16)
        np.testing.assert_array_equal(a.grid.times, b.grid.times)
        np.testing.assert_array_equal(a.brownian_increments, b.brownian_increments)

    def test_streams_independent_of_order_and_threads(self, two_marks):
        full = sample_batch(9, two_marks, 1.0, 16, 30)
        part = sample_batch(9, two_marks, 1.0, 16, 10, first_index=20, threads=3)
        p = part.path(0)
        q = full.path(20)
        np.testing.assert_array_equal(p.grid.times, q.grid.times)
        np.testing.assert_array_equal(p.brownian_increments, q.brownian_increments)

    def test_jump_times_are_nodes(self, noise_path):
        for t, e in noise_path.jump_events:
            i = noise_path.grid.index_of(t)
            assert noise_path.grid.jump_marks[i] == e

    def test_base_brownian_path_ignores_jumps(self, two_marks):
        # the base-mesh Brownian path is drawn before the jumps
        p = sample_noise(SeedSpec(1, 2), two_marks, 1.0, 32)
        base = np.linspace(0, 1, 33)
        B = p.brownian_path[np.searchsorted(p.grid.times, base)]
        rng = SeedSpec(1, 2).generator()
        expected = np.concatenate([[0.0], np.cumsum(rng.standard_normal(32) * np.sqrt(1 / 32))])
        np.testing.assert_allclose(B, expected, atol=1e-12)

    @pytest.mark.parametrize("horizon,steps", [(0.0, 4), (-1.0, 4), (np.inf, 4), (1.0, 0)])
    def test_rejects_bad_inputs(self, two_marks, horizon, steps):
        with pytest.raises(ValueError):
            sample_noise(SeedSpec(0, 0), two_marks, horizon, steps)

    def test_jump_count_poisson(self, two_marks):
        batch = sample_batch(21, two_marks, 2.0, 8, 4000)
        counts = batch.jump_flags.sum(axis=1)
        lam = two_marks.total_mass * 2.0
        assert abs(counts.mean() - lam) <= 4 * np.sqrt(lam / counts.size)
        assert abs(counts.var(ddof=1) / lam - 1) < 0.1

    def test_marks_follow_weights(self, two_marks):
        batch = sample_batch(22, two_marks, 1.0, 8, 3000)
        m = batch.marks[batch.jump_flags]
        frac = np.mean(m == 1)
        p = two_marks.probabilities[1]
        assert abs(frac - p) <= 4 * np.sqrt(p * (1 - p) / m.size)

    def test_brownian_increments_gaussian(self, two_marks):
        batch = sample_batch(23, two_marks, 1.0, 16, 2000)
        # W(T) over all paths, bridge splits included
        WT = batch.dB.sum(axis=1)
        assert stats.kstest(WT, "norm").pvalue > 1e-3
        z = batch.dB[batch.dt > 0] / np.sqrt(batch.dt[batch.dt > 0])
        assert stats.kstest(z, "norm").pvalue > 1e-3

    def test_zero_intensity_has_no_jumps(self):
        p = sample_noise(SeedSpec(0, 0), MarkSpace.empty(), 1.0, 8)
        assert p.jump_count() == 0 and p.grid.times.size == 9


class TestBatch:
    def test_padding_is_inert(self, small_batch):
        for p in range(small_batch.n_paths):
            n = small_batch.n_nodes[p]
            assert np.all(small_batch.times[p, n:] == small_batch.horizon)
            assert np.all(small_batch.dB[p, n - 1:] == 0)
            assert np.all(small_batch.marks[p, n:] == NO_JUMP)

    def test_roundtrip_paths(self, small_batch):
        again = NoiseBatch.from_paths([small_batch.path(p) for p in range(small_batch.n_paths)],
                                      small_batch.mark_space)
        np.testing.assert_array_equal(again.times, small_batch.times)
        np.testing.assert_array_equal(again.base_index, small_batch.base_index)

    def test_subset(self, small_batch):
        sub = small_batch.subset([3, 5])
        np.testing.assert_array_equal(sub.dB[1], small_batch.dB[5])


class TestCoarsen:
    @given(factor=st.sampled_from([1, 2, 4, 8]), index=st.integers(0, 50))
    @settings(max_examples=25, deadline=None)
    def test_keeps_path_and_jumps(self, factor, index):
        ms = MarkSpace((2.0,))
        p = sample_noise(SeedSpec(5, index), ms, 1.0, 16)
        c = coarsen(p, 16, factor)
        assert c.jump_events == p.jump_events
        assert c.brownian_path[-1] == pytest.approx(p.brownian_path[-1], abs=1e-12)
        np.testing.assert_allclose(c.brownian_path, p.brownian_path[np.isin(p.grid.times, c.grid.times)],
                                   atol=1e-12)

    def test_rejects_non_divisor(self, noise_path):
        with pytest.raises(ValueError):
            coarsen(noise_path, 64, 3)

    def test_batch_coarsen(self, small_batch):
        c = small_batch.coarsen(2)
        assert c.base_index.shape[1] == 17
        np.testing.assert_allclose(c.dB.sum(axis=1), small_batch.dB.sum(axis=1), atol=1e-12)
