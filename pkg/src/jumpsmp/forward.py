"""Euler scheme for the controlled jump SDE, the cost functional, and the
Picard / L^p-estimate harnesses for uncontrolled jump SDEs.

One step over (t_i, t_{i+1}]::

    x- = x_i + [b(t_i, x_i, u_i) - sum_e c(t_i, x_i, uJ_i, e) lam_e] dt_i + sigma(t_i, x_i, u_i) dB_i
    x_{i+1} = x- + c(t_{i+1}, x-, uJ_{i+1}, e)   if t_{i+1} is a jump node with mark e
    x_{i+1} = x-                                 otherwise

where u is the control off the jump graph and uJ its value on the graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .noise import MarkSpace, NoiseBatch, NoisePath
from .problem import ControlPath, FeedbackControl, ProblemDef

DIVERGENCE_BOUND = 1e12


class DivergenceError(ArithmeticError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"state left the finite range at step {step}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class StatePath:
    """Post-jump values and left limits at every node (equal off jump nodes)."""

    post: np.ndarray
    left: np.ndarray
    control: ControlPath | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.post[..., -1]

    def sup_abs(self) -> np.ndarray:
        return np.maximum(np.abs(self.post).max(axis=-1), np.abs(self.left).max(axis=-1))


@dataclass(frozen=True)
class CostSample:
    running: np.ndarray
    terminal: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.running + self.terminal

    def mean(self) -> float:
        return float(np.mean(self.total))

    def se(self) -> float:
        tot = np.atleast_1d(self.total)
        return float(np.std(tot, ddof=1) / np.sqrt(tot.size)) if tot.size > 1 else 0.0


def as_batch(noise, mark_space: MarkSpace | None = None) -> tuple[NoiseBatch, bool]:
    """View a single path as a one-row batch; the flag says whether it was one."""
    if isinstance(noise, NoiseBatch):
        return noise, False
    if isinstance(noise, NoisePath):
        ms = mark_space or noise.mark_space
        if ms is None:
            if noise.jump_count():
                raise ValueError("a path with jumps needs its mark space")
            ms = MarkSpace.empty()
        return NoiseBatch.from_paths([noise], ms), True
    raise TypeError(f"expected NoisePath or NoiseBatch, got {type(noise).__name__}")


def time_sum(values: np.ndarray) -> np.ndarray:
    """Sum over the last (time) axis in node order.

    Padding contributes exact zeros at the end, so the result does not depend
    on how far a path is padded (``np.sum`` pairs terms by array length).
    """
    return np.cumsum(values, axis=-1)[..., -1]


def _squeeze(arr, single):
    return arr[0] if single else arr


def _guard(x, step):
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > DIVERGENCE_BOUND):
        bad = np.flatnonzero(~np.isfinite(x) | (np.abs(x) > DIVERGENCE_BOUND))
        raise DivergenceError(step, f"paths {bad[:5].tolist()}")


def jump_sizes(fun: Callable, t, x, u, marks, n_marks: int) -> np.ndarray:
    """Evaluate ``fun(t, x, u, e)`` at the rows carrying mark e, zero elsewhere."""
    out = np.zeros_like(x)
    for e in range(n_marks):
        rows = marks == e
        if rows.any():
            out[rows] = fun(t[rows], x[rows], u[rows], e)
    return out


def compensator_rate(fun: Callable, t, x, u, weights) -> np.ndarray:
    out = np.zeros_like(x)
    for e, lam in enumerate(weights):
        out = out + lam * fun(t, x, u, e)
    return out


def solve_forward(problem: ProblemDef, control, noise, check_controls: bool = True) -> StatePath:
    """Euler solution of the controlled jump SDE on each path's own grid.

    ``control`` is a realized :class:`ControlPath` (open loop) or a
    :class:`FeedbackControl`; in the latter case the realized control is
    attached to the returned state.
    """
    batch, single = as_batch(noise)
    weights = batch.mark_space.weights
    P, K = batch.n_paths, batch.n_steps
    times, dts, dB, marks = batch.times, batch.dt, batch.dB, batch.marks
    feedback = isinstance(control, FeedbackControl)
    if not feedback:
        u_all = np.atleast_2d(control.values)
        uj_all = np.atleast_2d(control.jump_values)
        if u_all.shape != times.shape:
            raise ValueError(f"control has shape {u_all.shape}, grid has {times.shape}")
        if check_controls:
            control.check(problem.control_set)
    post = np.empty((P, K + 1))
    left = np.empty((P, K + 1))
    x = np.full(P, problem.x0)
    post[:, 0] = left[:, 0] = x
    if feedback:
        u_all = np.empty((P, K + 1))
        uj_all = np.empty((P, K + 1))
        u_all[:, 0] = control(times[:, 0], x)
        uj_all[:, 0] = control.at_jump(times[:, 0], x)
    for i in range(K):
        t = times[:, i]
        u, uj = u_all[:, i], uj_all[:, i]
        drift = problem.b(t, x, u)
        if weights:
            drift = drift - compensator_rate(problem.c, t, x, uj, weights)
        xm = x + drift * dts[:, i] + problem.sigma(t, x, u) * dB[:, i]
        tn = times[:, i + 1]
        mk = marks[:, i + 1]
        if feedback:
            uj_all[:, i + 1] = control.at_jump(tn, xm)
        rows = mk >= 0
        if rows.any():
            x = xm + jump_sizes(problem.c, tn, xm, uj_all[:, i + 1], mk, len(weights))
        else:
            x = xm
        _guard(x, i + 1)
        left[:, i + 1] = xm
        post[:, i + 1] = x
        if feedback:
            u_all[:, i + 1] = control(tn, x)
    realized = None
    if feedback:
        realized = ControlPath(_squeeze(u_all, single), _squeeze(uj_all, single))
        if check_controls:
            realized.check(problem.control_set)
    return StatePath(_squeeze(post, single), _squeeze(left, single), realized)


def cost(problem: ProblemDef, state: StatePath, control: ControlPath, noise) -> CostSample:
    """Left-Riemann running cost plus terminal cost, per path."""
    batch, single = as_batch(noise)
    x = np.atleast_2d(state.post)
    u = np.atleast_2d(control.values)
    t = batch.times
    running = time_sum(problem.f(t[:, :-1], x[:, :-1], u[:, :-1]) * batch.dt)
    terminal = problem.g(x[:, -1])
    return CostSample(_squeeze(running, single), _squeeze(terminal, single))


def expected_cost(problem: ProblemDef, control, noise) -> CostSample:
    state = solve_forward(problem, control, noise)
    realized = state.control if state.control is not None else control
    return cost(problem, state, realized, noise)


# --------------------------------------------------------------------------- uncontrolled harness

@dataclass(frozen=True)
class JumpSDE:
    """dX = drift(t, X) dt + diffusion(t, X) dB + int jump(t, X-, e) N~(dt, de).

    The state has shape (P, n); coefficient callables map (t[P], x[P, n]) to
    arrays of shape (P, n), the jump coefficient also takes a mark index.
    """

    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    jump: Callable
    n_marks: int = 1

    @property
    def dim(self) -> int:
        return np.atleast_1d(self.x0).size


def closed_loop_sde(problem: ProblemDef, rule: FeedbackControl) -> JumpSDE:
    """Freeze a feedback rule into the coefficients (state dimension 1)."""
    def wrap(fun):
        return lambda t, x: fun(t, x[:, 0], rule(t, x[:, 0]))[:, None]

    def jump(t, x, e):
        return problem.c(t, x[:, 0], rule.at_jump(t, x[:, 0]), e)[:, None]

    return JumpSDE(np.atleast_1d(problem.x0).astype(float), wrap(problem.b),
                   wrap(problem.sigma), jump, problem.n_marks)


@dataclass(frozen=True)
class PicardTrace:
    iterates: list
    distances: np.ndarray  # S^2-type distance between consecutive iterates
    path_distances: np.ndarray | None = None  # per-path sup distance, shape (n_iters, P)

    @property
    def ratios(self) -> np.ndarray:
        d = self.distances
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


def _euclid(x):
    return np.sqrt(np.sum(x * x, axis=-1))


def picard_map(sde: JumpSDE, batch: NoiseBatch, post: np.ndarray, left: np.ndarray):
    """One application of the fixed-point map, all integrals re-evaluated with
    coefficients frozen at the given iterate.  Arrays have shape (P, K+1, n)."""
    P, K = batch.n_paths, batch.n_steps
    n = sde.dim
    weights = batch.mark_space.weights
    times, dts, dB, marks = batch.times, batch.dt, batch.dB, batch.marks
    incr = np.zeros((P, K + 1, n))
    jumps = np.zeros((P, K + 1, n))
    for i in range(K):
        t = times[:, i]
        x = post[:, i]
        d = sde.drift(t, x)
        for e, lam in enumerate(weights):
            d = d - lam * sde.jump(t, x, e)
        incr[:, i + 1] = d * dts[:, i, None] + sde.diffusion(t, x) * dB[:, i, None]
        mk = marks[:, i + 1]
        for e in range(len(weights)):
            rows = mk == e
            if rows.any():
                jumps[rows, i + 1] = sde.jump(times[rows, i + 1], left[rows, i + 1], e)
    new_post = np.atleast_1d(sde.x0) + np.cumsum(incr + jumps, axis=1)
    new_left = new_post - jumps
    return new_post, new_left


def picard_iterate(sde: JumpSDE, noise, n_iters: int) -> PicardTrace:
    """Picard iterates starting from the constant path x0.

    Distances are sqrt(E sup_t |X^{k+1} - X^k|^2) estimated over the batch.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    batch, _ = as_batch(noise)
    P, K = batch.n_paths, batch.n_steps
    post = np.broadcast_to(np.atleast_1d(sde.x0).astype(float), (P, K + 1, sde.dim)).copy()
    left = post.copy()
    iterates = [post]
    dists, sups = [], []
    for k in range(n_iters):
        new_post, new_left = picard_map(sde, batch, post, left)
        _guard(new_post.reshape(P, -1), k)
        sup = np.maximum(_euclid(new_post - post).max(axis=1), _euclid(new_left - left).max(axis=1))
        sups.append(sup)
        dists.append(float(np.sqrt(np.mean(sup ** 2))))
        post, left = new_post, new_left
        iterates.append(post)
    return PicardTrace(iterates, np.asarray(dists), np.asarray(sups))


def solve_sde(sde: JumpSDE, noise) -> StatePath:
    """Euler solution of an uncontrolled jump SDE; arrays of shape (P, K+1, n)."""
    batch, _ = as_batch(noise)
    P, K = batch.n_paths, batch.n_steps
    weights = batch.mark_space.weights
    n = sde.dim
    post = np.empty((P, K + 1, n))
    left = np.empty((P, K + 1, n))
    x = np.broadcast_to(np.atleast_1d(sde.x0).astype(float), (P, n)).copy()
    post[:, 0] = left[:, 0] = x
    for i in range(K):
        t = batch.times[:, i]
        d = sde.drift(t, x)
        for e, lam in enumerate(weights):
            d = d - lam * sde.jump(t, x, e)
        xm = x + d * batch.dt[:, i, None] + sde.diffusion(t, x) * batch.dB[:, i, None]
        x = xm.copy()
        mk = batch.marks[:, i + 1]
        for e in range(len(weights)):
            rows = mk == e
            if rows.any():
                x[rows] = xm[rows] + sde.jump(batch.times[rows, i + 1], xm[rows], e)
        _guard(x.ravel(), i + 1)
        left[:, i + 1] = xm
        post[:, i + 1] = x
    return StatePath(post, left)


def contraction_constant(lip_drift: float, lip_diffusion: float, lip_jump: float,
                         total_mass: float, horizon: float) -> float:
    """Explicit bound q with ||T X - T Y|| <= q ||X - Y|| in the S^2 norm.

    From (a+b+c)^2 <= 3(a^2+b^2+c^2), Cauchy-Schwarz on the drift and Doob's
    L^2 inequality on the two martingale parts (compensator drift included in
    the jump part):  q^2 = 3 [L_b^2 T^2 + 4 (L_s^2 + 2 Lam L_c^2) T + 2 (Lam L_c T)^2].
    """
    T, lam = horizon, total_mass
    q2 = 3.0 * (lip_drift ** 2 * T ** 2
                + 4.0 * (lip_diffusion ** 2 + 2.0 * lam * lip_jump ** 2) * T
                + 2.0 * (lam * lip_jump * T) ** 2)
    return float(np.sqrt(q2))


@dataclass(frozen=True)
class LpReport:
    p: int
    lhs: float
    lhs_se: float
    rhs_terms: dict
    rhs: float
    ratio: float


def lp_estimate_check(sde1: JumpSDE, sde2: JumpSDE, p: int, noise) -> LpReport:
    """Both sides (without the constant) of the L^p stability estimate.

    lhs = E sup|X1 - X2|^p;  rhs = |x0_1 - x0_2|^p + E(int |b1-b2|(X1) dt)^p
    + E(int |s1-s2|^2(X1) dt)^{p/2} + E(sum over jumps |c1-c2|^2(X1-))^{p/2}.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    batch, _ = as_batch(noise)
    X1 = solve_sde(sde1, batch)
    X2 = solve_sde(sde2, batch)
    diff = np.maximum(_euclid(X1.post - X2.post).max(axis=1), _euclid(X1.left - X2.left).max(axis=1))
    lhs_samples = diff ** p
    times, dts = batch.times, batch.dt
    K = batch.n_steps
    drift_int = np.zeros(batch.n_paths)
    diff_int = np.zeros(batch.n_paths)
    jump_sum = np.zeros(batch.n_paths)
    for i in range(K):
        t = times[:, i]
        x = X1.post[:, i]
        drift_int += _euclid(sde1.drift(t, x) - sde2.drift(t, x)) * dts[:, i]
        diff_int += _euclid(sde1.diffusion(t, x) - sde2.diffusion(t, x)) ** 2 * dts[:, i]
        mk = batch.marks[:, i + 1]
        for e in range(batch.mark_space.n_marks):
            rows = mk == e
            if rows.any():
                tn, xl = times[rows, i + 1], X1.left[rows, i + 1]
                jump_sum[rows] += _euclid(sde1.jump(tn, xl, e) - sde2.jump(tn, xl, e)) ** 2
    terms = {
        "initial": float(_euclid(np.atleast_1d(sde1.x0) - np.atleast_1d(sde2.x0)) ** p),
        "drift": float(np.mean(drift_int ** p)),
        "diffusion": float(np.mean(diff_int ** (p // 2))),
        "jump": float(np.mean(jump_sum ** (p // 2))),
    }
    rhs = sum(terms.values())
    lhs = float(np.mean(lhs_samples))
    se = float(np.std(lhs_samples, ddof=1) / np.sqrt(lhs_samples.size)) if lhs_samples.size > 1 else 0.0
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else np.inf)
    return LpReport(p, lhs, se, terms, rhs, float(ratio))
