"""Registry of benchmark problems with independently computed reference controls.

Reference controls come from numerical searches with common random numbers
(``scripts/compute_oracles.py``); their outputs are stored, together with the
seeds and path counts that produced them, in ``data/oracles.json``.  The
stationary Riccati solution of the jump LQ problem is kept here only as an
analytic cross-check of that search.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .forward import expected_cost
from .noise import MarkSpace, NoiseBatch, sample_batch
from .problem import (AffineStructure, ControlSet, FeedbackControl, LinearFeedback, ProblemDef,
                      ThresholdFeedback)


@dataclass(frozen=True)
class BenchmarkInstance:
    """A problem, its noise law and a reference control with its expected cost.

    ``defaults`` holds per-benchmark experiment settings (spike time, spike
    value, scan grid, adjoint backend, base mesh); ``negative_control`` is a
    deliberately suboptimal control used to demonstrate test power.
    """

    name: str
    description: str
    problem: ProblemDef
    mark_space: MarkSpace
    horizon: float
    reference_control: FeedbackControl
    reference_cost: float
    reference_cost_se: float
    reference_seed: int
    reference_paths: int
    provenance: str
    negative_control: FeedbackControl | None = None
    oracle: dict = field(default_factory=dict)
    defaults: dict = field(default_factory=dict)

    @property
    def base_steps(self) -> int:
        return int(self.defaults.get("base_steps", 512))

    def batch(self, n_paths: int, seed: int, base_steps: int | None = None,
              first_index: int = 0, threads: int = 1) -> NoiseBatch:
        steps = self.base_steps if base_steps is None else int(base_steps)
        return sample_batch(seed, self.mark_space, self.horizon, steps, n_paths,
                            first_index=first_index, threads=threads)


_REGISTRY: dict[str, Callable[..., BenchmarkInstance]] = {}


def register(name: str):
    def wrap(builder):
        _REGISTRY[name] = builder
        return builder
    return wrap


def list_benchmarks() -> list[str]:
    return sorted(_REGISTRY)


def get_benchmark(name: str, **params) -> BenchmarkInstance:
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; known: {', '.join(list_benchmarks())}") from None
    return builder(**params)


@lru_cache(maxsize=1)
def stored_oracles() -> dict:
    path = resources.files("jumpsmp").joinpath("data", "oracles.json")
    if not path.is_file():
        return {}
    return json.loads(path.read_text())


def _stored(name: str, params: dict) -> dict | None:
    entry = stored_oracles().get(name)
    if entry is None or not _same_params(entry.get("params", {}), params):
        return None
    return entry


def _same_params(a: dict, b: dict) -> bool:
    if set(a) != set(b):
        return False
    return all(np.allclose(np.asarray(a[k], float), np.asarray(b[k], float), rtol=1e-12, atol=0)
               for k in a)


# --------------------------------------------------------------------------- numerical oracles

def mc_cost(problem: ProblemDef, control, batch: NoiseBatch) -> tuple[float, float]:
    """Mean and standard error of the cost on one noise ensemble."""
    c = expected_cost(problem, control, batch)
    return c.mean(), c.se()


def chunked_cost(problem: ProblemDef, control, mark_space: MarkSpace, horizon: float, base_steps: int,
                 seed: int, n_paths: int, chunk: int = 10_000) -> tuple[float, float]:
    """Mean and standard error of the cost over paths 0..n_paths-1, in chunks.

    The result does not depend on ``chunk`` beyond floating-point summation order.
    """
    totals = []
    for start in range(0, int(n_paths), int(chunk)):
        n = min(int(chunk), int(n_paths) - start)
        batch = sample_batch(seed, mark_space, horizon, base_steps, n, first_index=start)
        totals.append(expected_cost(problem, control, batch).total)
    x = np.concatenate(totals)
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(x.size))


def search_linear_gains(problem: ProblemDef, batch: NoiseBatch, gain_bounds=(0.0, 4.0),
                        jump_gain_bounds=(-1.0, 1.0), xtol: float = 1e-3) -> dict:
    """Nested one-dimensional searches over time-constant gains.

    The outer search is over the Lebesgue gain, the inner one over the gain on
    the jump graph; every evaluation reuses ``batch`` (common random numbers).
    """
    evals = [0]

    def cost_at(kc, kj):
        evals[0] += 1
        return mc_cost(problem, LinearFeedback(kc, jump_gain=kj), batch)[0]

    inner_best = {}

    def outer(kc):
        res = minimize_scalar(lambda kj: cost_at(kc, kj), bounds=jump_gain_bounds,
                              method="bounded", options={"xatol": xtol})
        inner_best[kc] = res.x
        return res.fun

    res = minimize_scalar(outer, bounds=gain_bounds, method="bounded", options={"xatol": xtol})
    kc = float(res.x)
    kj = float(inner_best.get(res.x, minimize_scalar(lambda kj: cost_at(kc, kj), bounds=jump_gain_bounds,
                                                     method="bounded", options={"xatol": xtol}).x))
    return {"gain": kc, "jump_gain": kj, "cost": float(res.fun), "evaluations": evals[0]}


def _per_path_cost(problem, control, batch):
    return expected_cost(problem, control, batch).total


def gain_covariance(problem: ProblemDef, batch: NoiseBatch, gain: float, jump_gain: float,
                    h: float = 0.05) -> np.ndarray:
    """Sampling covariance of the searched gains by the delta method.

    The per-path cost is differentiated by central differences on common
    noise; cov(gains) = H^-1 cov(grad) H^-1 / n with H the mean Hessian.
    """
    k = np.array([gain, jump_gain])
    steps = np.eye(2) * h

    def J(v):
        return _per_path_cost(problem, LinearFeedback(v[0], jump_gain=v[1]), batch)

    j0 = J(k)
    jp = [J(k + s) for s in steps]
    jm = [J(k - s) for s in steps]
    grad = np.stack([(jp[i] - jm[i]) / (2 * h) for i in range(2)], axis=1)
    H = np.empty((2, 2))
    for i in range(2):
        H[i, i] = np.mean(jp[i] - 2 * j0 + jm[i]) / h ** 2
    jpp = J(k + steps[0] + steps[1])
    jmm = J(k - steps[0] - steps[1])
    H[0, 1] = H[1, 0] = np.mean(jpp - jp[0] - jp[1] + 2 * j0 - jm[0] - jm[1] + jmm) / (2 * h ** 2)
    Hi = np.linalg.inv(H)
    return Hi @ np.cov(grad, rowvar=False) @ Hi / batch.n_paths


def search_threshold(problem: ProblemDef, batch: NoiseBatch, bounds=(-0.5, 0.5), n_grid: int = 21,
                     xtol: float = 1e-3, low: float = -1.0, high: float = 1.0) -> dict:
    """Grid scan of the threshold followed by a bounded search around the best cell."""
    grid = np.linspace(*bounds, n_grid)
    costs = [mc_cost(problem, ThresholdFeedback(th, low, high), batch)[0] for th in grid]
    i = int(np.argmin(costs))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    res = minimize_scalar(lambda th: mc_cost(problem, ThresholdFeedback(th, low, high), batch)[0],
                          bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    theta, best = (float(res.x), float(res.fun)) if res.fun <= costs[i] else (float(grid[i]), float(costs[i]))
    return {"theta": theta, "cost": best, "scan": {"theta": grid.tolist(), "cost": [float(c) for c in costs]}}


# --------------------------------------------------------------------------- analytic LQ cross-check

def lq_jump_gain(gamma, eta, weights) -> float:
    """Gain on the jump graph minimizing sum_e lambda_e (gamma_e - eta_e k)^2."""
    gamma, eta, lam = (np.asarray(v, float) for v in (gamma, eta, weights))
    den = float(np.sum(lam * eta ** 2))
    return float(np.sum(lam * gamma * eta)) / den if den > 0 else 0.0


def _lq_jump_rate(gamma, eta, weights) -> float:
    gamma, eta, lam = (np.asarray(v, float) for v in (gamma, eta, weights))
    C = gamma - eta * lq_jump_gain(gamma, eta, weights)
    return float(np.sum(lam * C ** 2))


def lq_stationary_riccati(a, b, c, d, gamma, eta, qf, r, weights) -> tuple[float, float, float]:
    """(Pi, kappa, kappa_jump) at the stationary point of the jump Riccati equation.

    0 = L Pi + qf - Pi^2 (b + c d)^2 / (r + Pi d^2),
    L = 2a + c^2 + sum_e lambda_e (gamma_e - eta_e kappa_jump)^2.
    """
    L = 2 * a + c * c + _lq_jump_rate(gamma, eta, weights)
    B = b + c * d

    def F(P):
        return L * P + qf - P * P * B * B / (r + P * d * d)

    hi = 1.0
    while F(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("no stationary Riccati solution")
    Pi = brentq(F, 0.0, hi, xtol=1e-14) if qf > 0 else 0.0
    return Pi, Pi * B / (r + Pi * d * d), lq_jump_gain(gamma, eta, weights)


def lq_riccati(a, b, c, d, gamma, eta, qf, r, gT, weights, horizon) -> tuple[Callable, Callable]:
    """Time-dependent Riccati solution; returns (Pi(t), kappa(t))."""
    L = 2 * a + c * c + _lq_jump_rate(gamma, eta, weights)
    B = b + c * d

    def rhs(t, P):
        return -(L * P + qf - P * P * B * B / (r + P * d * d))

    sol = solve_ivp(rhs, (horizon, 0.0), [gT], dense_output=True, rtol=1e-11, atol=1e-13)

    def Pi(t):
        return sol.sol(np.asarray(t, float))[0]

    def kappa(t):
        P = Pi(t)
        return P * B / (r + P * d * d)

    return Pi, kappa


# --------------------------------------------------------------------------- instances

LQ_DEFAULTS = dict(a=0.3, b=1.0, c=0.2, d=0.3, gamma=(0.3, -0.4), eta=(1.0, 0.1), qf=1.0, r=0.5,
                   gT=None, weights=(1.0, 2.5), T=1.0, x0=1.0)


def _lq_params(params: dict) -> dict:
    p = dict(LQ_DEFAULTS)
    unknown = set(params) - set(p)
    if unknown:
        raise ValueError(f"unknown lq_jump parameters: {sorted(unknown)}")
    p.update(params)
    p["gamma"], p["eta"], p["weights"] = (tuple(float(x) for x in p[k]) for k in ("gamma", "eta", "weights"))
    if not p["r"] > 0:
        raise ValueError("lq_jump needs r > 0")
    if p["gT"] is None:
        p["gT"] = lq_stationary_riccati(p["a"], p["b"], p["c"], p["d"], p["gamma"], p["eta"],
                                        p["qf"], p["r"], p["weights"])[0]
    return p


def lq_problem(**params) -> tuple[ProblemDef, MarkSpace, dict]:
    p = _lq_params(params)
    if p["qf"] < 0 or p["gT"] < 0:
        raise ValueError("lq_jump needs qf >= 0 and gT >= 0")
    if not (len(p["gamma"]) == len(p["eta"]) == len(p["weights"])):
        raise ValueError("gamma, eta and weights need one entry per mark")
    if not (np.isfinite(p["T"]) and p["T"] > 0):
        raise ValueError("horizon must be finite and positive")
    s = AffineStructure(a=p["a"], bu=p["b"], sx=p["c"], su=p["d"], gamma=p["gamma"], eta=p["eta"],
                        qf=p["qf"], r=p["r"], gT=p["gT"])
    problem = s.to_problem(p["x0"], ControlSet.interval(-50.0, 50.0), "lq_jump")
    return problem, MarkSpace(p["weights"]), p


@register("lq_jump")
def lq_jump(**params) -> BenchmarkInstance:
    """Affine dynamics with jumps and quadratic cost.

    dX = (aX + bu) dt + (cX + du) dB + int (gamma X- + eta u) N~(dt, de),
    J = E[int (qf X^2 + r u^2) dt + gT X_T^2].  With the default terminal
    weight gT equal to the stationary Riccati value the optimal gains are
    constant in time.
    """
    problem, ms, p = lq_problem(**params)
    entry = _stored("lq_jump", p)
    if entry is None:
        raise LookupError("no stored oracle for these lq_jump parameters; run scripts/compute_oracles.py")
    ref = LinearFeedback(entry["gain"], jump_gain=entry["jump_gain"], name="oracle")
    neg = ref.scaled(1.25)
    return BenchmarkInstance(
        name="lq_jump", description="linear-quadratic control with controlled jumps",
        problem=problem, mark_space=ms, horizon=p["T"], reference_control=ref,
        reference_cost=entry["reference_cost"], reference_cost_se=entry["reference_cost_se"],
        reference_seed=entry["reference_seed"], reference_paths=entry["reference_paths"],
        provenance=entry["provenance"], negative_control=neg, oracle=entry,
        defaults=dict(base_steps=entry["base_steps"], t_bar=0.25, v=1.0, v_grid=(-50.0, 50.0, 201),
                      backend="closed_form", order_control=(1.0, 0.5)),
    )


BANGBANG_DEFAULTS = dict(a=0.2, b=1.0, s=0.5, gamma=(0.3, -0.3), weights=(1.0, 1.0), qf=1.0, gT=1.0,
                         T=1.0, x0=0.5)


def bangbang_problem(**params) -> tuple[ProblemDef, MarkSpace, dict]:
    p = dict(BANGBANG_DEFAULTS)
    unknown = set(params) - set(p)
    if unknown:
        raise ValueError(f"unknown bangbang parameters: {sorted(unknown)}")
    p.update(params)
    p["gamma"], p["weights"] = tuple(map(float, p["gamma"])), tuple(map(float, p["weights"]))
    s = AffineStructure(a=p["a"], bu=p["b"], su=p["s"], gamma=p["gamma"], qf=p["qf"], gT=p["gT"])
    problem = s.to_problem(p["x0"], ControlSet.finite([-1.0, 1.0]), "bangbang")
    return problem, MarkSpace(p["weights"]), p


@register("bangbang")
def bangbang(**params) -> BenchmarkInstance:
    """U = {-1, +1}, dX = (aX + bu) dt + s u dB + int gamma X- N~(dt, de).

    The diffusion depends on the control only, so switching u changes sigma
    by 2s and the second-order term of the inequality is active.  The
    reference is the best threshold policy u = +1 on {X <= theta}; the
    negative control is the same threshold with the two values swapped.
    """
    problem, ms, p = bangbang_problem(**params)
    entry = _stored("bangbang", p)
    if entry is None:
        raise LookupError("no stored oracle for these bangbang parameters; run scripts/compute_oracles.py")
    ref = ThresholdFeedback(entry["theta"], -1.0, 1.0, name="oracle")
    neg = ThresholdFeedback(entry["theta"], 1.0, -1.0, name="flipped")
    return BenchmarkInstance(
        name="bangbang", description="two-point control set with control-dependent diffusion",
        problem=problem, mark_space=ms, horizon=p["T"], reference_control=ref,
        reference_cost=entry["reference_cost"], reference_cost_se=entry["reference_cost_se"],
        reference_seed=entry["reference_seed"], reference_paths=entry["reference_paths"],
        provenance=entry["provenance"], negative_control=neg, oracle=entry,
        defaults=dict(base_steps=entry["base_steps"], t_bar=0.25, v=-1.0, v_grid=(-1.0, 1.0, 2),
                      backend="regression"),
    )


DETERMINISTIC_DEFAULTS = dict(b0=0.2, bu=1.0, s0=0.3, su=0.2, c0=(0.2, -0.1), eta=(0.3, 0.2),
                              weights=(1.0, 2.5), r=1.0, G=0.5, T=1.0, x0=0.0)


def deterministic_optimal_control(p: dict) -> Callable:
    """u*(t) = -bu (G + T - t) / (2 r), the pointwise minimizer of p b + r u^2."""
    return lambda t: -p["bu"] * (p["G"] + p["T"] - np.asarray(t, float)) / (2 * p["r"])


def deterministic_cost(p: dict, offset: Callable) -> float:
    """Exact J for the open-loop control ``offset``; the noise enters only as zero-mean terms."""
    T, G = p["T"], p["G"]
    drift = quad(lambda s: (p["b0"] + p["bu"] * offset(s)) * (G + T - s), 0.0, T, epsabs=1e-13)[0]
    effort = quad(lambda s: p["r"] * offset(s) ** 2, 0.0, T, epsabs=1e-13)[0]
    return p["x0"] * (T + G) + drift + effort


@register("deterministic_adjoint")
def deterministic_adjoint(**params) -> BenchmarkInstance:
    """State-independent coefficients, f = x + r u^2, g = G x.

    The first adjoint is deterministic, p_t = G + (T - t), with q = k = 0 and
    a vanishing second adjoint; the optimal control is open loop.
    """
    p = dict(DETERMINISTIC_DEFAULTS)
    unknown = set(params) - set(p)
    if unknown:
        raise ValueError(f"unknown deterministic_adjoint parameters: {sorted(unknown)}")
    p.update(params)
    if not p["r"] > 0:
        raise ValueError("deterministic_adjoint needs r > 0")
    s = AffineStructure(b0=p["b0"], bu=p["bu"], s0=p["s0"], su=p["su"], gamma=(0.0,) * len(p["c0"]),
                        eta=tuple(p["eta"]), c0=tuple(p["c0"]), r=p["r"], l=1.0, G=p["G"])
    problem = s.to_problem(p["x0"], ControlSet.interval(-2.0, 2.0), "deterministic_adjoint")
    u_star = deterministic_optimal_control(p)
    ref = LinearFeedback(0.0, offset=u_star, name="open-loop optimum")
    neg = LinearFeedback(0.0, offset=lambda t: -u_star(t), name="reversed")
    return BenchmarkInstance(
        name="deterministic_adjoint", description="state-independent dynamics with a closed-form adjoint",
        problem=problem, mark_space=MarkSpace(tuple(p["weights"])), horizon=p["T"], reference_control=ref,
        reference_cost=deterministic_cost(p, u_star), reference_cost_se=0.0, reference_seed=0,
        reference_paths=0,
        provenance="exact: the expected cost is linear in E X, computed by quadrature",
        negative_control=neg, oracle={"params": p},
        defaults=dict(base_steps=512, t_bar=0.25, v=1.0, v_grid=(-2.0, 2.0, 81), backend="closed_form"),
    )


NONLINEAR_Z = (1.0, -0.8)


def nonlinear_problem(x0: float = 0.5) -> ProblemDef:
    """Bounded nonlinear coefficients with nonzero second x-derivatives."""
    z = NONLINEAR_Z
    th = np.tanh

    def sech2(x):
        return 1.0 - np.tanh(x) ** 2

    return ProblemDef(
        x0=x0,
        b=lambda t, x, u: -x + 0.5 * np.sin(x) + u,
        b_x=lambda t, x, u: -1.0 + 0.5 * np.cos(x),
        b_xx=lambda t, x, u: -0.5 * np.sin(x),
        sigma=lambda t, x, u: 0.3 + 0.5 * u + 0.4 * u * th(x),
        sigma_x=lambda t, x, u: 0.4 * u * sech2(x),
        sigma_xx=lambda t, x, u: -0.8 * u * sech2(x) * th(x),
        c=lambda t, x, u, e: z[e] * (0.3 * np.sin(x) + 0.4 * u),
        c_x=lambda t, x, u, e: z[e] * 0.3 * np.cos(x),
        c_xx=lambda t, x, u, e: -z[e] * 0.3 * np.sin(x),
        f=lambda t, x, u: x * x + 0.5 * u * u,
        f_x=lambda t, x, u: 2.0 * x,
        f_xx=lambda t, x, u: 2.0 + 0.0 * x,
        g=lambda x: x * x,
        g_x=lambda x: 2.0 * x,
        g_xx=lambda x: 2.0 + 0.0 * x,
        control_set=ControlSet.interval(-2.0, 2.0),
        n_marks=2,
        name="nonlinear_jump",
    )


@register("nonlinear_jump")
def nonlinear_jump() -> BenchmarkInstance:
    """Nonlinear coefficients under a fixed linear feedback (not optimized).

    Used where second derivatives must not vanish: the second variation and
    the expansion residuals are trivial on affine problems.
    """
    entry = stored_oracles().get("nonlinear_jump")
    if entry is None:
        raise LookupError("no stored reference cost for nonlinear_jump; run scripts/compute_oracles.py")
    ref = LinearFeedback(0.8, jump_gain=0.4, name="fixed feedback")
    return BenchmarkInstance(
        name="nonlinear_jump", description="nonlinear jump-diffusion with a fixed feedback",
        problem=nonlinear_problem(), mark_space=MarkSpace((1.0, 2.5)), horizon=1.0, reference_control=ref,
        reference_cost=entry["reference_cost"], reference_cost_se=entry["reference_cost_se"],
        reference_seed=entry["reference_seed"], reference_paths=entry["reference_paths"],
        provenance=entry["provenance"], oracle=entry,
        defaults=dict(base_steps=2048, t_bar=0.25, v=1.0, v_grid=(-2.0, 2.0, 81), backend="regression"),
    )
