"""Driving noise: Brownian increments plus a finite-activity marked Poisson measure.

Every path lives on its own grid, the uniform base mesh refined so that each
jump time is a grid node.  Ensembles are stored padded to a common length;
padding nodes sit at the horizon with zero step length, zero Brownian
increment and no jump, so every solver treats them as no-ops.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

NO_JUMP = -1


@dataclass(frozen=True)
class MarkSpace:
    """Finite mark set with a positive intensity attached to each mark."""

    weights: tuple
    marks: tuple = ()

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if any(not np.isfinite(x) or x <= 0 for x in w):
            raise ValueError(f"mark weights must be finite and positive, got {w}")
        marks = tuple(self.marks) if self.marks else tuple(range(len(w)))
        if len(marks) != len(w):
            raise ValueError("marks and weights differ in length")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "marks", marks)

    @property
    def total_mass(self) -> float:
        return float(sum(self.weights))

    @property
    def n_marks(self) -> int:
        return len(self.weights)

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights)
        return w / w.sum()

    @classmethod
    def empty(cls) -> "MarkSpace":
        """Zero intensity: the driver reduces to pure diffusion."""
        return cls(())


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    jump_marks: np.ndarray  # mark index per node, NO_JUMP where none

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.jump_marks, dtype=np.int64)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if t[0] != 0.0 or not np.all(np.diff(t) > 0):
            raise ValueError("grid times must start at 0 and increase strictly")
        if m.shape != t.shape:
            raise ValueError("jump_marks must have one entry per node")
        if m[0] != NO_JUMP:
            raise ValueError("no jump can sit at t=0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "jump_marks", m)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def n_intervals(self) -> int:
        return self.times.size - 1

    @property
    def jump_flags(self) -> np.ndarray:
        return self.jump_marks != NO_JUMP

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= self.times.size or self.times[i] != t:
            raise ValueError(f"time {t} is not a grid node")
        return i


@dataclass(frozen=True)
class NoisePath:
    grid: TimeGrid
    brownian_increments: np.ndarray
    mark_space: MarkSpace | None = None  # intensity the path was drawn under
    base_steps: int | None = None

    def __post_init__(self):
        db = np.asarray(self.brownian_increments, dtype=float)
        if db.shape != (self.grid.n_intervals,):
            raise ValueError("need one Brownian increment per grid interval")
        object.__setattr__(self, "brownian_increments", db)

    @property
    def jump_events(self) -> list[tuple[float, int]]:
        idx = np.flatnonzero(self.grid.jump_flags)
        return [(float(self.grid.times[i]), int(self.grid.jump_marks[i])) for i in idx]

    @property
    def brownian_path(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.brownian_increments)])

    def jump_count(self) -> int:
        return int(np.count_nonzero(self.grid.jump_flags))


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    path_index: int

    def generator(self) -> np.random.Generator:
        # Philox is counter based: the path index selects a disjoint block of
        # the counter space, so streams never depend on generation order.
        key = int(self.master_seed) % (1 << 64)
        bitgen = np.random.Philox(key=key, counter=[0, 0, 0, int(self.path_index)])
        return np.random.Generator(bitgen)


def refine_grid(base: Sequence[float], jump_times: Sequence[float],
                jump_marks: Sequence[int] | None = None) -> TimeGrid:
    """Union of a base mesh and jump times, flagging the jump nodes.

    A jump time that coincides with a base node keeps a single node.
    Duplicate jump times are rejected.
    """
    base = np.asarray(base, dtype=float)
    jt = np.asarray(jump_times, dtype=float)
    marks = np.zeros(jt.size, dtype=np.int64) if jump_marks is None \
        else np.asarray(jump_marks, dtype=np.int64)
    if marks.shape != jt.shape:
        raise ValueError("one mark per jump time")
    if jt.size:
        if np.any(jt <= 0) or np.any(jt > base[-1]):
            raise ValueError("jump times must lie in (0, T]")
        if np.unique(jt).size != jt.size:
            raise ValueError("duplicate jump times")
    times = np.union1d(base, jt)
    flags = np.full(times.size, NO_JUMP, dtype=np.int64)
    flags[np.searchsorted(times, jt)] = marks
    return TimeGrid(times, flags)


def _draw_jumps(rng: np.random.Generator, mark_space: MarkSpace, horizon: float):
    lam = mark_space.total_mass
    if lam == 0.0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    # exponential gaps until the horizon is passed
    times = []
    t = rng.exponential(1.0 / lam)
    while t <= horizon:
        times.append(t)
        t += rng.exponential(1.0 / lam)
    times = np.asarray(times)
    marks = rng.choice(mark_space.n_marks, size=times.size, p=mark_space.probabilities)
    return times, marks.astype(np.int64)


def sample_noise(seed: SeedSpec, mark_space: MarkSpace, horizon: float,
                 base_steps: int) -> NoisePath:
    """One reproducible noise realization on the refined grid.

    Brownian increments are first drawn on the base mesh and then split at
    jump times by Brownian bridges, so the Brownian path at base nodes does not
    depend on the jumps (a Lambda=0 path shares them exactly).
    """
    if not np.isfinite(horizon) or horizon <= 0:
        raise ValueError(f"horizon must be finite and positive, got {horizon}")
    if int(base_steps) < 1:
        raise ValueError("base_steps must be >= 1")
    rng = seed.generator()
    base = np.linspace(0.0, horizon, int(base_steps) + 1)
    base_db = rng.standard_normal(int(base_steps)) * np.sqrt(np.diff(base))
    jt, jm = _draw_jumps(rng, mark_space, horizon)
    grid = refine_grid(base, jt, jm)
    if grid.times.size == base.size:
        return NoisePath(grid, base_db, mark_space, int(base_steps))
    # bridge-split every base interval that received extra nodes
    cell = np.searchsorted(base, grid.times[:-1], side="right") - 1
    db = base_db[cell]
    counts = np.bincount(cell, minlength=int(base_steps))
    for k in np.flatnonzero(counts > 1):
        lo = int(np.searchsorted(cell, k))
        hi = lo + int(counts[k])
        db[lo:hi] = _bridge_split(rng, grid.times[lo:hi + 1], base_db[k])
    return NoisePath(grid, db, mark_space, int(base_steps))


def _bridge_split(rng, nodes, total):
    # sequential Brownian-bridge sampling of sub-increments summing to total
    out = np.empty(nodes.size - 1)
    remaining = total
    for j in range(nodes.size - 2):
        h = nodes[j + 1] - nodes[j]
        rest = nodes[-1] - nodes[j]
        mean = remaining * h / rest
        sd = np.sqrt(h * (rest - h) / rest)
        out[j] = mean + sd * rng.standard_normal()
        remaining -= out[j]
    out[-1] = remaining
    return out


@dataclass(frozen=True)
class NoiseBatch:
    """An ensemble of noise paths packed into padded arrays.

    ``times``, ``marks`` have shape (P, K+1); ``dB``, ``dt`` have shape (P, K).
    ``base_index[p, j]`` is the node index of base mesh point j on path p.
    """

    times: np.ndarray
    dB: np.ndarray
    marks: np.ndarray
    base_index: np.ndarray
    n_nodes: np.ndarray
    mark_space: MarkSpace
    horizon: float
    master_seed: int | None = None
    first_index: int = 0

    @property
    def n_paths(self) -> int:
        return self.times.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dB.shape[1]

    @cached_property
    def dt(self) -> np.ndarray:
        return np.diff(self.times, axis=1)

    @property
    def base_times(self) -> np.ndarray:
        return self.times[0, self.base_index[0]]

    @property
    def jump_flags(self) -> np.ndarray:
        return self.marks != NO_JUMP

    def path(self, p: int) -> NoisePath:
        n = int(self.n_nodes[p])
        return NoisePath(TimeGrid(self.times[p, :n], self.marks[p, :n]), self.dB[p, :n - 1],
                         self.mark_space, self.base_index.shape[1] - 1)

    def subset(self, rows) -> "NoiseBatch":
        rows = np.asarray(rows)
        return NoiseBatch(self.times[rows], self.dB[rows], self.marks[rows],
                          self.base_index[rows], self.n_nodes[rows], self.mark_space,
                          self.horizon, self.master_seed, self.first_index)

    def coarsen(self, factor: int) -> "NoiseBatch":
        """The same realizations on a base mesh ``factor`` times coarser."""
        steps = self.base_index.shape[1] - 1
        paths = [coarsen(self.path(p), steps, factor) for p in range(self.n_paths)]
        return NoiseBatch.from_paths(paths, self.mark_space, steps // factor, self.master_seed,
                                     self.first_index)

    @classmethod
    def from_paths(cls, paths: Sequence[NoisePath], mark_space: MarkSpace,
                   base_steps: int | None = None, master_seed=None,
                   first_index: int = 0) -> "NoiseBatch":
        horizon = paths[0].grid.horizon
        n_nodes = np.array([p.grid.times.size for p in paths])
        kmax = int(n_nodes.max())
        P = len(paths)
        times = np.full((P, kmax), horizon)
        marks = np.full((P, kmax), NO_JUMP, dtype=np.int64)
        dB = np.zeros((P, kmax - 1))
        if base_steps is None:
            base_steps = paths[0].base_steps
        for i, p in enumerate(paths):
            n = n_nodes[i]
            times[i, :n] = p.grid.times
            marks[i, :n] = p.grid.jump_marks
            dB[i, :n - 1] = p.brownian_increments
        if base_steps is None:
            # hand-built grids: every node counts as a base node
            if P > 1 and np.unique(n_nodes).size > 1:
                raise ValueError("base_steps is required for paths of different lengths")
            base_index = np.broadcast_to(np.arange(kmax), (P, kmax)).copy()
        else:
            base = np.linspace(0.0, horizon, base_steps + 1)
            base_index = np.empty((P, base.size), dtype=np.int64)
            for i, p in enumerate(paths):
                bi = np.searchsorted(p.grid.times, base)
                if not np.allclose(p.grid.times[np.minimum(bi, n_nodes[i] - 1)], base, rtol=0, atol=1e-12):
                    raise ValueError("path grid does not contain the base mesh")
                base_index[i] = bi
        return cls(times, dB, marks, base_index, n_nodes, mark_space, float(horizon),
                   master_seed, first_index)


def sample_batch(master_seed: int, mark_space: MarkSpace, horizon: float,
                 base_steps: int, n_paths: int, first_index: int = 0,
                 threads: int = 1) -> NoiseBatch:
    """Noise for paths ``first_index .. first_index + n_paths - 1``.

    Each path depends only on (master_seed, path index); the thread count
    only changes who computes it.
    """
    indices = range(first_index, first_index + int(n_paths))

    def make(i):
        return sample_noise(SeedSpec(master_seed, i), mark_space, horizon, base_steps)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(make, indices))
    else:
        paths = [make(i) for i in indices]
    return NoiseBatch.from_paths(paths, mark_space, base_steps, master_seed, first_index)


def coarsen(noise: NoisePath, base_steps: int, factor: int) -> NoisePath:
    """Same realization on a base mesh ``factor`` times coarser.

    Jump nodes are kept; Brownian increments are summed over removed nodes.
    """
    if base_steps % factor:
        raise ValueError("factor must divide base_steps")
    T = noise.grid.horizon
    fine_base = np.linspace(0.0, T, base_steps + 1)
    coarse_base = fine_base[::factor]
    keep = np.isin(noise.grid.times, coarse_base) | noise.grid.jump_flags
    keep[0] = keep[-1] = True
    B = noise.brownian_path
    idx = np.flatnonzero(keep)
    grid = TimeGrid(noise.grid.times[idx], noise.grid.jump_marks[idx])
    return NoisePath(grid, np.diff(B[idx]), noise.mark_space, base_steps // factor)
