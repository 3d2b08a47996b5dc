"""Spike variations that avoid the jump graph, the variational equations, and
the expansion residuals measured along a ladder of spike widths.

A spike acts on the grid nodes ``t_bar <= t_i < t_bar + eps``: because
``values[i]`` drives the interval (t_i, t_{i+1}], that is exactly the Lebesgue
window (t_bar, t_bar + eps] when both ends are base nodes.  The graph-avoiding
spike changes only the Lebesgue part of the control; the value on the jump
graph (``jump_values``) keeps the unperturbed control, so the jump integrand
c(u^eps) - c(u) vanishes on the graph and so does its compensated integral.
The naive spike perturbs the jump-graph value too.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .forward import (StatePath, as_batch, compensator_rate, cost, jump_sizes,
                      solve_forward, time_sum, _guard, _squeeze)
from .noise import NoiseBatch
from .problem import ControlPath, FeedbackControl, ProblemDef


@dataclass(frozen=True)
class SpikeSpec:
    """Spike of width ``epsilon`` starting at ``t_bar`` with value ``v``.

    ``v`` is a constant or a bounded function of the state at ``t_bar``.
    """

    t_bar: float
    epsilon: float
    v: float | Callable = 0.0

    def __post_init__(self):
        if self.t_bar < 0 or self.epsilon < 0:
            raise ValueError("t_bar and epsilon must be non-negative")

    def window(self, times: np.ndarray) -> np.ndarray:
        """Boolean mask of the nodes whose interval lies in the spike window."""
        return (times >= self.t_bar) & (times < self.t_bar + self.epsilon)

    def value(self, x_at_tbar: np.ndarray) -> np.ndarray:
        if callable(self.v):
            return np.asarray(self.v(x_at_tbar), dtype=float)
        return np.full(np.shape(x_at_tbar), float(self.v))


def _check_spec(spec: SpikeSpec, batch: NoiseBatch):
    if spec.t_bar + spec.epsilon > batch.horizon * (1 + 1e-12):
        raise ValueError("spike window extends past the horizon")


def _spike_value(spec: SpikeSpec, batch: NoiseBatch, state: StatePath | None):
    P = batch.n_paths
    if not callable(spec.v):
        return np.full(P, float(spec.v))
    if state is None:
        raise ValueError("a state-dependent spike value needs the base state")
    post = np.atleast_2d(state.post)
    # last node at or before t_bar (the grid contains t_bar when it is a base node)
    idx = np.sum(batch.times <= spec.t_bar, axis=1) - 1
    return spec.value(post[np.arange(P), idx])


def spike_control(u: ControlPath, spec: SpikeSpec, noise, state: StatePath | None = None) -> ControlPath:
    """Spike that leaves the control on the jump graph untouched."""
    batch, single = as_batch(noise)
    _check_spec(spec, batch)
    mask = spec.window(batch.times)
    v = _spike_value(spec, batch, state)[:, None]
    values = np.where(mask, v, np.atleast_2d(u.values))
    return ControlPath(_squeeze(values, single), u.jump_values)


def naive_spike_control(u: ControlPath, spec: SpikeSpec, noise, state: StatePath | None = None) -> ControlPath:
    """Plain spike: v on the whole window, jump-graph values included."""
    batch, single = as_batch(noise)
    _check_spec(spec, batch)
    mask = spec.window(batch.times)
    v = _spike_value(spec, batch, state)[:, None]
    values = np.where(mask, v, np.atleast_2d(u.values))
    jumps = np.where(mask, v, np.atleast_2d(u.jump_values))
    return ControlPath(_squeeze(values, single), _squeeze(jumps, single))


def solve_first_variation(problem: ProblemDef, u: ControlPath, u_eps: ControlPath,
                          base_state: StatePath, noise) -> StatePath:
    """Euler solve of the first variational equation on the base noise.

    Coefficients are evaluated along (t, X, u); forcing is (delta b, delta sigma)
    from the Lebesgue part of the two controls.  The jump term uses the
    jump-graph control and the pre-jump state.
    """
    batch, single = as_batch(noise)
    X = np.atleast_2d(base_state.post)
    XL = np.atleast_2d(base_state.left)
    U, UE = np.atleast_2d(u.values), np.atleast_2d(u_eps.values)
    UJ = np.atleast_2d(u.jump_values)
    weights = batch.mark_space.weights
    P, K = batch.n_paths, batch.n_steps
    post = np.zeros((P, K + 1))
    left = np.zeros((P, K + 1))
    xh = np.zeros(P)
    for i in range(K):
        t, x, ui, uj = batch.times[:, i], X[:, i], U[:, i], UJ[:, i]
        db = problem.b(t, x, UE[:, i]) - problem.b(t, x, ui)
        ds = problem.sigma(t, x, UE[:, i]) - problem.sigma(t, x, ui)
        drift = problem.b_x(t, x, ui) * xh + db
        if weights:
            drift = drift - compensator_rate(problem.c_x, t, x, uj, weights) * xh
        xm = xh + drift * batch.dt[:, i] + (problem.sigma_x(t, x, ui) * xh + ds) * batch.dB[:, i]
        mk = batch.marks[:, i + 1]
        if np.any(mk >= 0):
            cx = jump_sizes(problem.c_x, batch.times[:, i + 1], XL[:, i + 1], UJ[:, i + 1], mk, len(weights))
            xh = xm + cx * xm
        else:
            xh = xm
        _guard(xh, i + 1)
        left[:, i + 1] = xm
        post[:, i + 1] = xh
    return StatePath(_squeeze(post, single), _squeeze(left, single))


def solve_second_variation(problem: ProblemDef, u: ControlPath, u_eps: ControlPath,
                           base_state: StatePath, x_hat: StatePath, noise) -> StatePath:
    """Euler solve of the second variational equation.

    Sources: b_xx X^2 / 2 in the drift, sigma_xx X^2 / 2 + delta sigma_x X in the
    diffusion, c_xx X_-^2 / 2 in the jump part (with its compensator).
    """
    batch, single = as_batch(noise)
    X = np.atleast_2d(base_state.post)
    XL = np.atleast_2d(base_state.left)
    XH = np.atleast_2d(x_hat.post)
    XHL = np.atleast_2d(x_hat.left)
    U, UE = np.atleast_2d(u.values), np.atleast_2d(u_eps.values)
    UJ = np.atleast_2d(u.jump_values)
    weights = batch.mark_space.weights
    P, K = batch.n_paths, batch.n_steps
    post = np.zeros((P, K + 1))
    left = np.zeros((P, K + 1))
    yh = np.zeros(P)
    for i in range(K):
        t, x, ui, uj, xh = batch.times[:, i], X[:, i], U[:, i], UJ[:, i], XH[:, i]
        dsx = problem.sigma_x(t, x, UE[:, i]) - problem.sigma_x(t, x, ui)
        drift = problem.b_x(t, x, ui) * yh + 0.5 * problem.b_xx(t, x, ui) * xh * xh
        if weights:
            drift = drift - (compensator_rate(problem.c_x, t, x, uj, weights) * yh
                             + 0.5 * compensator_rate(problem.c_xx, t, x, uj, weights) * xh * xh)
        vol = problem.sigma_x(t, x, ui) * yh + 0.5 * problem.sigma_xx(t, x, ui) * xh * xh + dsx * xh
        ym = yh + drift * batch.dt[:, i] + vol * batch.dB[:, i]
        mk = batch.marks[:, i + 1]
        if np.any(mk >= 0):
            tn, xl, ujn, xhl = batch.times[:, i + 1], XL[:, i + 1], UJ[:, i + 1], XHL[:, i + 1]
            cx = jump_sizes(problem.c_x, tn, xl, ujn, mk, len(weights))
            cxx = jump_sizes(problem.c_xx, tn, xl, ujn, mk, len(weights))
            yh = ym + cx * ym + 0.5 * cxx * xhl * xhl
        else:
            yh = ym
        _guard(yh, i + 1)
        left[:, i + 1] = ym
        post[:, i + 1] = yh
    return StatePath(_squeeze(post, single), _squeeze(left, single))


# --------------------------------------------------------------------------- order fits

@dataclass(frozen=True)
class OrderFit:
    epsilons: np.ndarray
    moments: np.ndarray
    slope: float
    intercept: float
    r2: float
    standard_errors: np.ndarray | None = None


def fit_order(epsilons: Sequence[float], moments: Sequence[float],
              standard_errors: Sequence[float] | None = None) -> OrderFit:
    """Least-squares slope of log(moment) against log(epsilon)."""
    eps = np.asarray(epsilons, dtype=float)
    m = np.asarray(moments, dtype=float)
    if eps.size < 4 or eps.shape != m.shape:
        raise ValueError("need at least four (epsilon, moment) pairs")
    if not np.all(np.diff(eps) < 0):
        raise ValueError("epsilons must be strictly decreasing")
    if not np.all(m > 0) or not np.all(np.isfinite(m)):
        raise ValueError("moments must be finite and positive")
    lx, ly = np.log(eps), np.log(m)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    se = None if standard_errors is None else np.asarray(standard_errors, dtype=float)
    return OrderFit(eps, m, float(slope), float(intercept), float(r2), se)


def _moment(samples: np.ndarray):
    s = np.asarray(samples, dtype=float)
    se = float(np.std(s, ddof=1) / np.sqrt(s.size)) if s.size > 1 else 0.0
    return float(np.mean(s)), se


def _sup_abs(path: StatePath) -> np.ndarray:
    return np.maximum(np.abs(np.atleast_2d(path.post)).max(axis=1),
                      np.abs(np.atleast_2d(path.left)).max(axis=1))


# --------------------------------------------------------------------------- ladder experiments

@dataclass
class SpikeRun:
    """Everything solved for one spike on one ensemble (common random numbers)."""

    spec: SpikeSpec
    base: StatePath
    u: ControlPath
    u_eps: ControlPath
    x_eps: StatePath
    x_hat: StatePath
    y_hat: StatePath


def base_solution(problem: ProblemDef, control, noise) -> tuple[StatePath, ControlPath]:
    state = solve_forward(problem, control, noise)
    return state, (state.control if state.control is not None else control)


def run_spike(problem: ProblemDef, spec: SpikeSpec, noise, base: StatePath, u: ControlPath,
              naive: bool = False, variations: bool = True) -> SpikeRun:
    make = naive_spike_control if naive else spike_control
    ue = make(u, spec, noise, base)
    x_eps = solve_forward(problem, ue, noise, check_controls=False)
    if variations:
        xh = solve_first_variation(problem, u, ue, base, noise)
        yh = solve_second_variation(problem, u, ue, base, xh, noise)
    else:
        xh = yh = None
    return SpikeRun(spec, base, u, ue, x_eps, xh, yh)


def window_jump_fraction(spec: SpikeSpec, noise) -> float:
    """Fraction of paths with at least one jump inside the spike window."""
    batch, _ = as_batch(noise)
    t = batch.times
    inside = (t > spec.t_bar) & (t <= spec.t_bar + spec.epsilon) & (batch.marks >= 0)
    return float(np.mean(inside.any(axis=1)))


def state_difference_samples(problem, control, noise, t_bar, v, epsilons,
                             naive: bool = False) -> np.ndarray:
    """Per-path sup|X^eps - X| for each epsilon, shape (n_eps, P)."""
    base, u = base_solution(problem, control, noise)
    out = []
    for eps in epsilons:
        run = run_spike(problem, SpikeSpec(t_bar, eps, v), noise, base, u, naive, variations=False)
        out.append(np.maximum(np.abs(np.atleast_2d(run.x_eps.post) - np.atleast_2d(base.post)).max(axis=1),
                              np.abs(np.atleast_2d(run.x_eps.left) - np.atleast_2d(base.left)).max(axis=1)))
    return np.asarray(out)


def fit_moments(epsilons, sup_samples: np.ndarray, p_list=(2, 4)) -> dict:
    """{p: OrderFit of E sup^p against epsilon} from per-path sup samples."""
    out = {}
    for p in p_list:
        ms = [_moment(row ** p) for row in sup_samples]
        out[p] = fit_order(epsilons, [m for m, _ in ms], [s for _, s in ms])
    return out


def state_difference_moments(problem, control, noise, t_bar, v, epsilons, p_list=(2, 4),
                             naive: bool = False) -> dict:
    """E sup|X^eps - X|^p per epsilon, for one kind of spike."""
    sups = state_difference_samples(problem, control, noise, t_bar, v, epsilons, naive)
    return fit_moments(epsilons, sups, p_list)


def variation_moments(problem, control, noise, t_bar, v, epsilons) -> dict:
    """E sup|X_hat|^2 and E sup|Y_hat|^2 per epsilon."""
    base, u = base_solution(problem, control, noise)
    xs, ys, xse, yse = [], [], [], []
    for eps in epsilons:
        run = run_spike(problem, SpikeSpec(t_bar, eps, v), noise, base, u)
        m, s = _moment(_sup_abs(run.x_hat) ** 2)
        xs.append(m)
        xse.append(s)
        m, s = _moment(_sup_abs(run.y_hat) ** 2)
        ys.append(m)
        yse.append(s)
    return {"x_hat": fit_order(epsilons, xs, xse), "y_hat": fit_order(epsilons, ys, yse)}


@dataclass(frozen=True)
class ResidualLadder:
    epsilons: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray

    @property
    def shrink(self) -> float:
        """Value at the smallest epsilon over value at the largest."""
        return float(abs(self.values[-1]) / abs(self.values[0])) if self.values[0] else np.inf


def expansion_residual(problem, control, noise, t_bar, v, epsilons) -> ResidualLadder:
    """E sup|X^eps - X - X_hat - Y_hat|^2 / eps^2 along the ladder."""
    base, u = base_solution(problem, control, noise)
    vals, ses = [], []
    for eps in epsilons:
        run = run_spike(problem, SpikeSpec(t_bar, eps, v), noise, base, u)
        r_post = np.atleast_2d(run.x_eps.post) - np.atleast_2d(base.post) \
            - np.atleast_2d(run.x_hat.post) - np.atleast_2d(run.y_hat.post)
        r_left = np.atleast_2d(run.x_eps.left) - np.atleast_2d(base.left) \
            - np.atleast_2d(run.x_hat.left) - np.atleast_2d(run.y_hat.left)
        sup = np.maximum(np.abs(r_post).max(axis=1), np.abs(r_left).max(axis=1))
        m, s = _moment(sup ** 2 / eps ** 2)
        vals.append(m)
        ses.append(s)
    return ResidualLadder(np.asarray(epsilons, float), np.asarray(vals), np.asarray(ses))


def cost_expansion_samples(problem: ProblemDef, run: SpikeRun, noise) -> np.ndarray:
    """Per-path J_hat integrand (left-Riemann in time), adjoint-free form."""
    batch, _ = as_batch(noise)
    t = batch.times[:, :-1]
    X = np.atleast_2d(run.base.post)
    U = np.atleast_2d(run.u.values)
    UE = np.atleast_2d(run.u_eps.values)
    XH = np.atleast_2d(run.x_hat.post)
    YH = np.atleast_2d(run.y_hat.post)
    x, u, ue, xh, yh = X[:, :-1], U[:, :-1], UE[:, :-1], XH[:, :-1], YH[:, :-1]
    df = problem.f(t, x, ue) - problem.f(t, x, u)
    run_int = problem.f_x(t, x, u) * (xh + yh) + 0.5 * problem.f_xx(t, x, u) * xh * xh + df
    running = time_sum(run_int * batch.dt)
    xT, xhT, yhT = X[:, -1], XH[:, -1], YH[:, -1]
    terminal = problem.g_x(xT) * (xhT + yhT) + 0.5 * problem.g_xx(xT) * xhT * xhT
    return running + terminal


def cost_expansion(problem, control, noise, t_bar, v, epsilons) -> dict:
    """J_hat and the residual (J(u^eps) - J(u) - J_hat) / eps along the ladder."""
    base, u = base_solution(problem, control, noise)
    base_cost = cost(problem, base, u, noise).total
    jhat, jse, res, rse = [], [], [], []
    for eps in epsilons:
        run = run_spike(problem, SpikeSpec(t_bar, eps, v), noise, base, u)
        jh = cost_expansion_samples(problem, run, noise)
        diff = cost(problem, run.x_eps, run.u_eps, noise).total - base_cost
        m, s = _moment(jh)
        jhat.append(m)
        jse.append(s)
        m, s = _moment((diff - jh) / eps)
        res.append(m)
        rse.append(s)
    eps = np.asarray(epsilons, float)
    return {"j_hat": ResidualLadder(eps, np.asarray(jhat), np.asarray(jse)),
            "residual": ResidualLadder(eps, np.asarray(res), np.asarray(rse))}


LEMMA_KEYS = ("x_hat", "y_hat", "state_residual", "cost_residual", "j_hat")


def lemma_samples(problem, control, noise, t_bar, v, epsilons) -> dict:
    """Per-path samples of every lemma diagnostic, each of shape (n_eps, P).

    ``x_hat``, ``y_hat``: sup of the variations squared; ``state_residual``:
    sup|X^eps - X - X_hat - Y_hat|^2 / eps^2; ``cost_residual``: the cost
    difference minus J_hat, over eps; ``j_hat``: J_hat itself.
    """
    base, u = base_solution(problem, control, noise)
    base_cost = cost(problem, base, u, noise).total
    acc = {k: [] for k in LEMMA_KEYS}
    for eps in epsilons:
        run = run_spike(problem, SpikeSpec(t_bar, eps, v), noise, base, u)
        acc["x_hat"].append(_sup_abs(run.x_hat) ** 2)
        acc["y_hat"].append(_sup_abs(run.y_hat) ** 2)
        res = StatePath(
            np.atleast_2d(run.x_eps.post) - np.atleast_2d(base.post)
            - np.atleast_2d(run.x_hat.post) - np.atleast_2d(run.y_hat.post),
            np.atleast_2d(run.x_eps.left) - np.atleast_2d(base.left)
            - np.atleast_2d(run.x_hat.left) - np.atleast_2d(run.y_hat.left))
        acc["state_residual"].append(_sup_abs(res) ** 2 / eps ** 2)
        jh = cost_expansion_samples(problem, run, noise)
        diff = cost(problem, run.x_eps, run.u_eps, noise).total - base_cost
        acc["j_hat"].append(jh)
        acc["cost_residual"].append((diff - jh) / eps)
    return {k: np.asarray(v_) for k, v_ in acc.items()}


def summarize_lemmas(epsilons, samples: dict) -> dict:
    """Order fits for the variations and residual ladders for the rest."""
    eps = np.asarray(epsilons, float)
    out = {}
    for k in LEMMA_KEYS:
        ms = [_moment(row) for row in samples[k]]
        vals, ses = np.array([m for m, _ in ms]), np.array([s for _, s in ms])
        out[k] = fit_order(eps, vals, ses) if k in ("x_hat", "y_hat") else ResidualLadder(eps, vals, ses)
    return out


def lemma_ladder(problem, control, noise, t_bar, v, epsilons) -> dict:
    """All expansion diagnostics from one spike solve per epsilon.

    Returns order fits for E sup|X_hat|^2 and E sup|Y_hat|^2, the second-order
    state residual E sup|X^eps - X - X_hat - Y_hat|^2 / eps^2 and the cost
    residual (J(u^eps) - J(u) - J_hat) / eps.
    """
    return summarize_lemmas(epsilons, lemma_samples(problem, control, noise, t_bar, v, epsilons))
