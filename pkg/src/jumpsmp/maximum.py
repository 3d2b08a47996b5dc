"""Hamiltonian and the pointwise variational inequality

    H(t, X, v, p, q) - H(t, X, u, p, q) + P (sigma(v) - sigma(u))^2 / 2 >= 0,

checked over a scan grid of control values at every (node, path) sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adjoint import AdjointPath, SecondAdjointPath
from .forward import StatePath, as_batch
from .problem import ControlPath, ProblemDef


def hamiltonian(t, x, u, p, q, problem: ProblemDef):
    """p b(t, x, u) + q sigma(t, x, u) + f(t, x, u)."""
    return p * problem.b(t, x, u) + q * problem.sigma(t, x, u) + problem.f(t, x, u)


def inequality_lhs(problem: ProblemDef, t, x, u, v, p, q, P):
    """Left side of the variational inequality for the candidate value v."""
    ds = problem.sigma(t, x, v) - problem.sigma(t, x, u)
    return hamiltonian(t, x, v, p, q, problem) - hamiltonian(t, x, u, p, q, problem) + 0.5 * P * ds * ds


def inequality_se(problem: ProblemDef, t, x, u, v, adj: AdjointPath, sel=...):
    """Standard error of the left side induced by the adjoint estimate."""
    if adj.p_se is None:
        return np.zeros(np.shape(x))
    db = problem.b(t, x, v) - problem.b(t, x, u)
    ds = problem.sigma(t, x, v) - problem.sigma(t, x, u)
    var = (db * adj.p_se[sel]) ** 2 + (ds * adj.q_se[sel]) ** 2 + 2 * db * ds * adj.p_q_cov[sel]
    return np.sqrt(np.maximum(var, 0.0))


@dataclass(frozen=True)
class MpReport:
    """Minima over the v-grid of the inequality's left side.

    ``sample_min`` has one entry per Lebesgue sample (jump nodes excluded);
    a sample violates when some v gives lhs < -tol(v).
    """

    sample_min: np.ndarray
    sample_times: np.ndarray
    sample_argmin: np.ndarray
    global_min: float
    worst_margin: float  # min over samples and v of lhs + tol
    violation_fraction: float
    tolerance: dict
    jump_min: np.ndarray
    jump_violation_fraction: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.worst_margin >= 0.0


def _sample_mask(batch, include_terminal=False):
    n = batch.times.shape[1]
    idx = np.arange(n)[None, :]
    last = batch.n_nodes[:, None] - (0 if include_terminal else 1)
    return idx < last


def mp_deficiency(problem: ProblemDef, state: StatePath, u: ControlPath, adj: AdjointPath,
                  second: SecondAdjointPath, v_grid, noise, n_se: float = 3.0,
                  dt_constant: float = 0.0, times: np.ndarray | None = None,
                  stride: int = 1, sensitivity: Sequence[tuple] = ()) -> MpReport:
    """Scan the inequality at real nodes before the horizon.

    tol(sample, v) = sqrt((n_se * SE(lhs))**2 + S(v)) + dt_constant * dt, with SE
    taken from the adjoint backend (zero for exact adjoints) and S the
    parameter-sensitivity term below.  ``times`` optionally restricts
    the samples to the given grid times.  ``stride`` keeps every stride-th base
    node; jump nodes are always kept and reported separately.

    ``sensitivity`` accounts for uncertainty in the control being tested.  Each
    entry is a group of (state, u, adj, second) solutions on the same noise, one
    per direction in which a single control parameter is moved to the edge of
    its confidence interval.  For each group the largest squared change of
    lhs(v) enters S.  The shift is already a confidence bound, so S is not
    scaled by ``n_se``; moving to the interval edge also captures the
    second-order deficit of a control that is slightly off the optimum.
    """
    if stride < 1:
        raise ValueError("stride must be positive")
    v_grid = np.asarray(v_grid, dtype=float).ravel()
    if v_grid.size == 0:
        raise ValueError("v_grid is empty")
    batch, _ = as_batch(noise)
    t = batch.times
    X = np.atleast_2d(state.post)
    U = np.atleast_2d(u.values)
    mask = _sample_mask(batch)
    if times is not None:
        mask &= np.isin(t, np.asarray(times))
    if stride > 1:
        keep = batch.marks >= 0
        rows = np.arange(batch.n_paths)[:, None]
        base = np.zeros_like(keep)
        cols = batch.base_index[:, ::stride]
        base[np.broadcast_to(rows, cols.shape), cols] = True
        mask &= keep | base
    dt_step = float(np.max(batch.dt))
    flat = np.flatnonzero(mask.ravel())
    tt, xx, uu = t.ravel()[flat], X.ravel()[flat], U.ravel()[flat]
    pp, qq, PP = adj.p.ravel()[flat], adj.q.ravel()[flat], second.P.ravel()[flat]
    best = np.full(flat.size, np.inf)
    arg = np.zeros(flat.size)
    margin = np.full(flat.size, np.inf)
    se_flat = None
    if adj.p_se is not None:
        se_flat = AdjointPath(None, None, None, None, None, adj.p_se.ravel()[flat],
                              adj.q_se.ravel()[flat], adj.p_q_cov.ravel()[flat])
    moved = []
    for group in sensitivity:
        moved.append([tuple(np.atleast_2d(a).ravel()[flat] for a in
                            (st_i.post, u_i.values, adj_i.p, adj_i.q, sec_i.P))
                      for st_i, u_i, adj_i, sec_i in group])
    max_tol = 0.0
    for v in v_grid:
        vv = np.full_like(xx, v)
        lhs = inequality_lhs(problem, tt, xx, uu, vv, pp, qq, PP)
        var = np.zeros_like(lhs)
        if se_flat is not None:
            var += (n_se * inequality_se(problem, tt, xx, uu, vv, se_flat)) ** 2
        for group in moved:
            var += np.max([(inequality_lhs(problem, tt, x_i, u_i, vv, p_i, q_i, P_i) - lhs) ** 2
                           for x_i, u_i, p_i, q_i, P_i in group], axis=0)
        tol = dt_constant * dt_step + np.sqrt(var)
        max_tol = max(max_tol, float(np.max(tol)))
        better = lhs < best
        best = np.where(better, lhs, best)
        arg = np.where(better, v, arg)
        margin = np.minimum(margin, lhs + tol)
    jump = batch.marks.ravel()[flat] >= 0
    leb = ~jump
    violated = margin < 0
    return MpReport(
        sample_min=best[leb], sample_times=tt[leb], sample_argmin=arg[leb],
        global_min=float(np.min(best[leb])) if leb.any() else 0.0,
        worst_margin=float(np.min(margin[leb])) if leb.any() else 0.0,
        violation_fraction=float(np.mean(violated[leb])) if leb.any() else 0.0,
        tolerance={"n_se": n_se, "sensitivity_terms": len(moved), "dt_constant": dt_constant, "dt": dt_step,
                   "dt_allowance": dt_constant * dt_step, "max_tol": max_tol},
        jump_min=best[jump],
        jump_violation_fraction=float(np.mean(violated[jump])) if jump.any() else 0.0,
        n_samples=int(leb.sum()),
    )


@dataclass(frozen=True)
class LocalizationReport:
    mean: float
    se: float
    n_in_set: int
    t_bar: float

    @property
    def nonnegative(self) -> bool:
        return self.mean >= -3.0 * self.se


def localization_check(problem: ProblemDef, state: StatePath, u: ControlPath, adj: AdjointPath,
                       second: SecondAdjointPath, noise, t_bar: float, w: float,
                       predicate: Callable) -> LocalizationReport:
    """E[1_A (H(w) - H(u) + P (sigma(w) - sigma(u))^2 / 2)] at t_bar.

    ``predicate`` maps the state at t_bar (one value per path) to a boolean
    array selecting A; it only sees information up to t_bar.
    """
    batch, _ = as_batch(noise)
    P = batch.n_paths
    idx = np.sum(batch.times <= t_bar, axis=1) - 1
    rows = np.arange(P)
    t = batch.times[rows, idx]
    x = np.atleast_2d(state.post)[rows, idx]
    uu = np.atleast_2d(u.values)[rows, idx]
    A = np.asarray(predicate(x), dtype=bool) & np.ones(P, dtype=bool)
    lhs = inequality_lhs(problem, t, x, uu, np.full(P, float(w)), adj.p[rows, idx], adj.q[rows, idx],
                         second.P[rows, idx])
    samples = np.where(A, lhs, 0.0)
    se = float(np.std(samples, ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return LocalizationReport(float(np.mean(samples)), se, int(A.sum()), float(t_bar))
