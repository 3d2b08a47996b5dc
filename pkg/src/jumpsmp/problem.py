"""Control problem instances, controls, and a sampled audit of the standing assumptions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Coefficient = Callable[..., np.ndarray]


@dataclass(frozen=True)
class ControlSet:
    """A finite list of control values, or a closed interval with a scan grid."""

    values: tuple = ()
    low: float | None = None
    high: float | None = None
    n_grid: int = 101

    @classmethod
    def finite(cls, values: Sequence[float]) -> "ControlSet":
        vals = tuple(sorted(float(v) for v in values))
        if not vals:
            raise ValueError("control set is empty")
        return cls(values=vals)

    @classmethod
    def interval(cls, low: float, high: float, n_grid: int = 101) -> "ControlSet":
        if not low <= high:
            raise ValueError("interval bounds out of order")
        return cls(low=float(low), high=float(high), n_grid=int(n_grid))

    @property
    def is_finite(self) -> bool:
        return bool(self.values)

    def grid(self, n: int | None = None) -> np.ndarray:
        if self.is_finite:
            return np.asarray(self.values)
        return np.linspace(self.low, self.high, n or self.n_grid)

    def contains(self, u, atol: float = 1e-12) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.is_finite:
            vals = np.asarray(self.values)
            return np.any(np.abs(u[..., None] - vals) <= atol, axis=-1)
        return (u >= self.low - atol) & (u <= self.high + atol)

    def bound(self) -> float:
        g = self.grid()
        return float(np.max(np.abs(g)))


@dataclass(frozen=True)
class AffineStructure:
    """Coefficients affine in (x, u), quadratic costs.

    b = a x + bu u + b0,  sigma = sx x + su u + s0,
    c_e = gamma_e x + eta_e u + c0_e  (one entry per mark),
    f = qf x^2 + r u^2 + l x,  g = gT x^2 + G x.
    """

    a: float = 0.0
    bu: float = 0.0
    b0: float = 0.0
    sx: float = 0.0
    su: float = 0.0
    s0: float = 0.0
    gamma: tuple = ()
    eta: tuple = ()
    c0: tuple = ()
    qf: float = 0.0
    r: float = 0.0
    l: float = 0.0
    gT: float = 0.0
    G: float = 0.0

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("eta", "c0"):
            v = getattr(self, name)
            object.__setattr__(self, name, tuple(v) if len(v) else (0.0,) * n)
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} needs one entry per mark")
        object.__setattr__(self, "gamma", tuple(float(x) for x in self.gamma))

    def to_problem(self, x0: float, control_set: ControlSet, name: str = "") -> "ProblemDef":
        s = self
        zero = _zeros_like

        def c(t, x, u, e):
            return s.gamma[e] * x + s.eta[e] * u + s.c0[e]

        return ProblemDef(
            x0=float(x0),
            b=lambda t, x, u: s.a * x + s.bu * u + s.b0,
            b_x=lambda t, x, u: np.full_like(_f(x), s.a),
            b_xx=lambda t, x, u: zero(x),
            sigma=lambda t, x, u: s.sx * x + s.su * u + s.s0,
            sigma_x=lambda t, x, u: np.full_like(_f(x), s.sx),
            sigma_xx=lambda t, x, u: zero(x),
            c=c,
            c_x=lambda t, x, u, e: np.full_like(_f(x), s.gamma[e]),
            c_xx=lambda t, x, u, e: zero(x),
            f=lambda t, x, u: s.qf * x * x + s.r * u * u + s.l * x,
            f_x=lambda t, x, u: 2 * s.qf * x + s.l,
            f_xx=lambda t, x, u: np.full_like(_f(x), 2 * s.qf),
            g=lambda x: s.gT * x * x + s.G * x,
            g_x=lambda x: 2 * s.gT * x + s.G,
            g_xx=lambda x: np.full_like(_f(x), 2 * s.gT),
            control_set=control_set,
            n_marks=len(self.gamma),
            affine=self,
            name=name,
        )


def _f(x):
    return np.asarray(x, dtype=float)


def _zeros_like(x):
    return np.zeros_like(_f(x))


@dataclass(frozen=True)
class ProblemDef:
    """Coefficients, their x-derivatives, control set and initial state.

    All coefficient callables are vectorized: ``b(t, x, u)`` etc. take arrays
    of equal shape; the jump coefficient takes an integer mark index last.
    """

    x0: float
    b: Coefficient
    b_x: Coefficient
    b_xx: Coefficient
    sigma: Coefficient
    sigma_x: Coefficient
    sigma_xx: Coefficient
    c: Coefficient
    c_x: Coefficient
    c_xx: Coefficient
    f: Coefficient
    f_x: Coefficient
    f_xx: Coefficient
    g: Coefficient
    g_x: Coefficient
    g_xx: Coefficient
    control_set: ControlSet
    n_marks: int = 1
    affine: AffineStructure | None = None
    name: str = ""

    def replace(self, **changes) -> "ProblemDef":
        from dataclasses import replace
        return replace(self, **changes)


# --------------------------------------------------------------------------- controls

class FeedbackControl:
    """A feedback rule (t, x) -> control value.

    ``jump_rule`` gives the value the control takes on the jump graph; it is
    evaluated at the pre-jump state.  By default it is the same rule.
    """

    def __init__(self, rule: Callable, jump_rule: Callable | None = None, name: str = ""):
        self.rule = rule
        self.jump_rule = jump_rule
        self.name = name

    def __call__(self, t, x):
        return self.rule(t, x)

    def at_jump(self, t, x):
        return (self.jump_rule or self.rule)(t, x)


def _gain(g, t):
    return g(t) if callable(g) else g


class LinearFeedback(FeedbackControl):
    """u = -gain(t) x + offset(t) off the jump graph, and a separate linear law on it."""

    def __init__(self, gain, offset=0.0, jump_gain=None, jump_offset=None, name: str = ""):
        self.gain = gain
        self.offset = offset
        self.jump_gain = gain if jump_gain is None else jump_gain
        self.jump_offset = offset if jump_offset is None else jump_offset
        super().__init__(self._rule, self._jump_rule, name)

    def _rule(self, t, x):
        return -_gain(self.gain, t) * x + _gain(self.offset, t)

    def _jump_rule(self, t, x):
        return -_gain(self.jump_gain, t) * x + _gain(self.jump_offset, t)

    def scaled(self, factor: float) -> "LinearFeedback":
        """Both gains multiplied by ``factor`` (offsets untouched)."""
        def mul(g):
            return (lambda t: factor * g(t)) if callable(g) else factor * g
        return LinearFeedback(mul(self.gain), self.offset, mul(self.jump_gain),
                              self.jump_offset, name=f"{self.name}*{factor:g}")


class ThresholdFeedback(FeedbackControl):
    """u = high where x <= theta, low where x > theta."""

    def __init__(self, theta: float, low: float = -1.0, high: float = 1.0, name: str = ""):
        self.theta, self.low, self.high = float(theta), low, high
        super().__init__(self._rule, None, name)

    def _rule(self, t, x):
        return np.where(np.asarray(x) <= self.theta, self.high, self.low)


@dataclass(frozen=True)
class ControlPath:
    """Control realized on a grid (shape (n_nodes,) or (P, n_nodes)).

    ``values[i]`` acts on (t_i, t_{i+1}] through b, sigma and f.
    ``jump_values[i]`` is the value on the jump graph: it enters c at a jump
    node i and, as the predictable version, the compensator over (t_i, t_{i+1}].
    """

    values: np.ndarray
    jump_values: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        j = v if self.jump_values is None else np.asarray(self.jump_values, dtype=float)
        if j.shape != v.shape:
            raise ValueError("values and jump_values differ in shape")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "jump_values", j)

    def check(self, control_set: ControlSet) -> "ControlPath":
        for arr in (self.values, self.jump_values):
            ok = control_set.contains(arr)
            if not np.all(ok):
                bad = np.asarray(arr)[~ok].ravel()[:3]
                raise ValueError(f"control values outside the control set: {bad.tolist()}")
        return self

    @classmethod
    def constant(cls, value: float, n_nodes) -> "ControlPath":
        return cls(np.full(n_nodes, float(value)))


def realize_control(rule: FeedbackControl, state, grid, control_set: ControlSet | None = None) -> ControlPath:
    """Evaluate a feedback rule along a state path.

    ``values[i] = rule(t_i, X_{t_i})`` and ``jump_values[i] = rule.at_jump(t_i, X_{t_i-})``,
    so the jump-graph value is fixed before the jump lands.  Only information
    up to t_i is used.
    """
    times = grid.times if hasattr(grid, "times") else np.asarray(grid)
    post = np.asarray(state.post)
    left = np.asarray(state.left)
    values = np.asarray(rule(times, post), dtype=float) * np.ones_like(post)
    jumps = np.asarray(rule.at_jump(times, left), dtype=float) * np.ones_like(left)
    path = ControlPath(values, jumps)
    if control_set is not None:
        path.check(control_set)
    return path


# --------------------------------------------------------------------------- validation

@dataclass(frozen=True)
class LatticeSpec:
    seed: int = 0
    n_points: int = 400
    scales: tuple = (1.0, 10.0, 100.0)
    horizon: float = 1.0
    growth_ratio: float | None = None  # allowed sup-growth between scales; default sqrt of the scale ratio


@dataclass
class ValidationReport:
    growth_constant: float
    max_derivative: dict
    worst_fd_error: dict
    clauses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.clauses.items() if not v]


def _lattice(spec: LatticeSpec, problem: ProblemDef, scale: float):
    rng = np.random.default_rng([spec.seed, int(scale * 1000)])
    n = spec.n_points
    t = rng.uniform(0.0, spec.horizon, n)
    x = rng.uniform(-scale, scale, n)
    u = rng.choice(problem.control_set.grid(), n)
    return t, x, u


def validate(problem: ProblemDef, lattice: LatticeSpec = LatticeSpec()) -> ValidationReport:
    """Sampled audit of linear growth, bounded derivatives and derivative consistency.

    Boundedness is judged on nested lattices of growing radius: a derivative
    whose sup grows by more than ``growth_ratio`` between radii is flagged.
    Non-finite values fail the relevant clause rather than raising.
    """
    marks = range(problem.n_marks)
    clauses: dict[str, bool] = {}
    sups: dict[str, list[float]] = {}
    growth: list[float] = []
    fd_err: dict[str, float] = {}

    def record(name, vals):
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            clauses[f"finite:{name}"] = False
            sups.setdefault(name, []).append(np.inf)
            return
        sups.setdefault(name, []).append(float(np.max(np.abs(vals))))

    def fd(name, fun, dfun, t, x, u, *extra):
        h = 1e-5 * np.maximum(1.0, np.abs(x))
        with np.errstate(all="ignore"):
            num = (np.asarray(fun(t, x + h, u, *extra)) - np.asarray(fun(t, x - h, u, *extra))) / (2 * h)
            ana = np.asarray(dfun(t, x, u, *extra), dtype=float)
            err = np.abs(num - ana) / np.maximum(1e-6, 1e-4 * np.abs(ana))
        err = np.where(np.isfinite(err), err, np.inf)
        fd_err[name] = max(fd_err.get(name, 0.0), float(np.max(err)))

    for scale in lattice.scales:
        t, x, u = _lattice(lattice, problem, scale)
        denom = 1.0 + np.abs(x) + np.abs(u)
        with np.errstate(all="ignore"):
            vals = [problem.b(t, x, u), problem.sigma(t, x, u)] + [problem.c(t, x, u, e) for e in marks]
            ratios = [np.max(np.abs(np.asarray(v, dtype=float)) / denom) for v in vals]
        growth.append(float(np.max(ratios)) if all(np.isfinite(ratios)) else np.inf)
        record("b_x", problem.b_x(t, x, u))
        record("b_xx", problem.b_xx(t, x, u))
        record("sigma_x", problem.sigma_x(t, x, u))
        record("sigma_xx", problem.sigma_xx(t, x, u))
        record("c_x", np.max([np.abs(problem.c_x(t, x, u, e)) for e in marks], axis=0))
        record("c_xx", np.max([np.abs(problem.c_xx(t, x, u, e)) for e in marks], axis=0))
        record("f_xx", problem.f_xx(t, x, u))
        record("g_xx", problem.g_xx(x))
        fd("b_x", problem.b, problem.b_x, t, x, u)
        fd("b_xx", problem.b_x, problem.b_xx, t, x, u)
        fd("sigma_x", problem.sigma, problem.sigma_x, t, x, u)
        fd("sigma_xx", problem.sigma_x, problem.sigma_xx, t, x, u)
        for e in marks:
            fd("c_x", problem.c, problem.c_x, t, x, u, e)
            fd("c_xx", problem.c_x, problem.c_xx, t, x, u, e)
        fd("f_x", problem.f, problem.f_x, t, x, u)
        fd("f_xx", problem.f_x, problem.f_xx, t, x, u)
        fd("g_x", lambda t_, x_, u_: problem.g(x_), lambda t_, x_, u_: problem.g_x(x_), t, x, u)
        fd("g_xx", lambda t_, x_, u_: problem.g_x(x_), lambda t_, x_, u_: problem.g_xx(x_), t, x, u)

    scales = np.asarray(lattice.scales, dtype=float)
    allowed = np.sqrt(scales[1:] / scales[:-1]) if lattice.growth_ratio is None \
        else np.full(scales.size - 1, lattice.growth_ratio)

    def bounded(seq):
        # a quantity growing linearly in |x| grows like the scale ratio
        seq = np.asarray(seq)
        if not np.all(np.isfinite(seq)):
            return False
        return bool(np.all(seq[1:] <= allowed * seq[:-1] + 1e-12))

    clauses["linear_growth"] = bounded(growth)
    for name, seq in sups.items():
        clauses[f"bounded:{name}"] = clauses.get(f"finite:{name}", True) and bounded(seq)
    for name, err in fd_err.items():
        clauses[f"derivative:{name}"] = err <= 1.0
    return ValidationReport(
        growth_constant=float(np.max(growth)),
        max_derivative={k: float(np.max(v)) for k, v in sups.items()},
        worst_fd_error=fd_err,
        clauses=clauses,
    )
