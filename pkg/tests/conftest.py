"""Shared fixtures: small mark spaces, seeded ensembles and benchmark instances."""
import numpy as np
import pytest

from jumpsmp import get_benchmark
from jumpsmp.noise import MarkSpace, SeedSpec, sample_batch, sample_noise


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical test")


@pytest.fixture(scope="session")
def two_marks():
    return MarkSpace((1.0, 2.5))


@pytest.fixture(scope="session")
def noise_path(two_marks):
    return sample_noise(SeedSpec(7, 0), two_marks, 1.0, 64)


@pytest.fixture(scope="session")
def small_batch(two_marks):
    return sample_batch(11, two_marks, 1.0, 32, 200)


@pytest.fixture(scope="session")
def lq():
    return get_benchmark("lq_jump")


@pytest.fixture(scope="session")
def det():
    return get_benchmark("deterministic_adjoint")


@pytest.fixture(scope="session")
def lq_batch(lq):
    return lq.batch(2000, seed=5, base_steps=64)


def se(x, axis=0):
    x = np.asarray(x, dtype=float)
    return x.std(axis=axis, ddof=1) / np.sqrt(x.shape[axis])


def second_moment_rate(p, k, kj):
    """d/dt E X^2 = L E X^2 under u = -k X off the graph and -kj X- on it."""
    jumps = sum(w * (g - e * kj) ** 2 for w, g, e in zip(p["weights"], p["gamma"], p["eta"]))
    return 2 * (p["a"] - p["b"] * k) + (p["c"] - p["d"] * k) ** 2 + jumps


def linear_feedback_cost(p, k, kj):
    """Exact cost of a constant linear feedback from the second-moment ODE."""
    L = second_moment_rate(p, k, kj)
    T, x0 = p["T"], p["x0"]
    integral = T if L == 0 else np.expm1(L * T) / L
    return x0 ** 2 * ((p["qf"] + p["r"] * k * k) * integral + p["gT"] * np.exp(L * T))
