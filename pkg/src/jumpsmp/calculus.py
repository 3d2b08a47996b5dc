"""Pathwise stochastic integrals against B, N and the compensated measure.

Integrands are node-indexed arrays on a path's grid.  A plain integrand has
shape (n_nodes,); a marked integrand has shape (n_nodes, n_marks) and any
array broadcastable to that shape (e.g. a scalar) is accepted.

Evaluation conventions:

* ``H[i]`` drives the Brownian integral and the compensator over the interval
  (t_i, t_{i+1}]; this left evaluation is what makes an integrand predictable.
* ``H[j, e]`` at a jump node j with mark e is what the jump measure sees; a
  progressive integrand may take any value there.

Every returned path has one value per node and starts at 0.
"""
from __future__ import annotations

import numpy as np

from .noise import MarkSpace, NoisePath, TimeGrid


def _plain(H, grid: TimeGrid) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    n = grid.times.size
    if H.ndim == 0:
        return np.full(n, float(H))
    if H.shape != (n,):
        raise ValueError(f"integrand has shape {H.shape}, grid has {n} nodes")
    return H


def _marked(H, grid: TimeGrid, n_marks: int) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    n = grid.times.size
    try:
        out = np.broadcast_to(H, (n, n_marks))
    except ValueError:
        raise ValueError(f"marked integrand of shape {H.shape} does not fit ({n}, {n_marks})")
    if not np.all(np.isfinite(out)):
        raise ValueError("marked integrand has non-finite values")
    return out


def _n_marks(noise: NoisePath, mark_space: MarkSpace | None) -> int:
    if mark_space is not None:
        return max(mark_space.n_marks, 1)
    return int(noise.grid.jump_marks.max(initial=-1)) + 1 or 1


def ito_integral(H, noise: NoisePath) -> np.ndarray:
    """Left-point Ito sums: value at t_k is sum_{i<k} H_i dB_i."""
    H = _plain(H, noise.grid)
    return np.concatenate([[0.0], np.cumsum(H[:-1] * noise.brownian_increments)])


def _graph_values(H: np.ndarray, noise: NoisePath) -> np.ndarray:
    # H evaluated on the jump graph, zero at non-jump nodes
    marks = noise.grid.jump_marks
    flagged = marks >= 0
    out = np.zeros(marks.size)
    out[flagged] = H[flagged, marks[flagged]]
    return out


def jump_integral_N(H, noise: NoisePath, mark_space: MarkSpace | None = None) -> np.ndarray:
    """Integral against the raw counting measure: sum of H(T_n, e_n) over T_n <= t."""
    H = _marked(H, noise.grid, _n_marks(noise, mark_space))
    return np.cumsum(_graph_values(H, noise))


def compensator(H_pred, mark_space: MarkSpace, grid: TimeGrid) -> np.ndarray:
    """Left-Riemann sums of sum_e H_pred(t_i, e) lambda_e dt_i."""
    if mark_space.n_marks == 0:
        return np.zeros(grid.times.size)
    H = _marked(H_pred, grid, mark_space.n_marks)
    rate = H[:-1] @ np.asarray(mark_space.weights)
    return np.concatenate([[0.0], np.cumsum(rate * grid.dt)])


def compensated_jump_integral(H, H_pred, noise: NoisePath, mark_space: MarkSpace,
                              check: bool = True) -> np.ndarray:
    """Integral against N minus its compensator.

    ``H_pred`` is the caller's predictable version of ``H``: it must coincide
    with ``H`` on the jump graph, which is all the counting measure sees.
    Off the graph the two may differ freely (that freedom is exactly what lets
    an integrand vanishing on the graph have a zero compensated integral).
    Set ``check=False`` when H_pred is a left-evaluated approximation whose
    graph values differ from H by a discretization lag.
    """
    k = max(mark_space.n_marks, 1)
    Hm = _marked(H, noise.grid, k)
    Hp = _marked(H_pred, noise.grid, k)
    if check and mark_space.n_marks:
        on_graph = _graph_values(Hm, noise)
        pred_on_graph = _graph_values(Hp, noise)
        bad = np.flatnonzero(on_graph != pred_on_graph)
        if bad.size:
            raise ValueError(
                f"H and its predictable version disagree on the jump graph at nodes {bad.tolist()}")
    return jump_integral_N(Hm, noise, mark_space) - compensator(Hp, mark_space, noise.grid)


def jump_of_integral(H, noise: NoisePath, t: float, mark_space: MarkSpace | None = None) -> float:
    """Jump at time t of the compensated integral: H(t, mark) at a jump node, else 0."""
    i = noise.grid.index_of(t)
    e = noise.grid.jump_marks[i]
    if e < 0:
        return 0.0
    H = _marked(H, noise.grid, _n_marks(noise, mark_space))
    return float(H[i, e])


def bracket_of_jump_integral(H, noise: NoisePath, mark_space: MarkSpace | None = None) -> np.ndarray:
    """Quadratic variation of the compensated integral: sum of H(T_n, e_n)^2."""
    H = _marked(H, noise.grid, _n_marks(noise, mark_space))
    return np.cumsum(_graph_values(H, noise) ** 2)


def graph_indicator(noise: NoisePath, n_marks: int = 1) -> np.ndarray:
    """Marked integrand equal to 1 on the jump graph and 0 elsewhere."""
    out = np.zeros((noise.grid.times.size, n_marks))
    marks = noise.grid.jump_marks
    flagged = np.flatnonzero(marks >= 0)
    out[flagged, marks[flagged]] = 1.0
    return out
