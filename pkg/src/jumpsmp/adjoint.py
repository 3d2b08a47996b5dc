"""First- and second-order adjoint processes and the duality identities.

Two backends:

* closed form, for affine coefficients, quadratic costs and linear feedback:
  p = alpha(t) X + beta(t), q = alpha sigma, k_e = alpha c_e, P = pi(t),
  Q = K = 0, with (alpha, beta, pi) solving terminal-value ODEs;
* least-squares Monte Carlo on the base mesh, for anything else.

Adjoint values are stored per node of each path's grid.  ``k[:, i, e]`` is the
predictable version used over (t_i, t_{i+1}] (state at t_i), while
``k_jump[:, i, e]`` is the value at a jump node i (state at t_i-).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .forward import StatePath, as_batch, compensator_rate, jump_sizes, time_sum
from .noise import NoiseBatch
from .problem import ControlPath, LinearFeedback, ProblemDef
from .variation import SpikeRun, SpikeSpec, base_solution, run_spike, _moment


class UnsupportedProblemError(ValueError):
    pass


@dataclass(frozen=True)
class AdjointPath:
    times: np.ndarray
    p: np.ndarray
    q: np.ndarray
    k: np.ndarray
    k_jump: np.ndarray
    p_se: np.ndarray | None = None
    q_se: np.ndarray | None = None
    p_q_cov: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def norms(self, noise) -> dict:
        """Diagnostic S^2, M^2 and F^2 norms (Monte Carlo)."""
        batch, _ = as_batch(noise)
        dt = batch.dt
        s2 = np.mean(np.max(self.p ** 2, axis=1))
        m2 = np.mean(time_sum(self.q[:, :-1] ** 2 * dt))
        flagged = batch.marks >= 0
        rows, cols = np.nonzero(flagged)
        f2 = np.sum(self.k_jump[rows, cols, batch.marks[rows, cols]] ** 2) / batch.n_paths
        return {"S2": float(s2), "M2": float(m2), "F2": float(f2)}


@dataclass(frozen=True)
class SecondAdjointPath:
    times: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    K: np.ndarray


# --------------------------------------------------------------------------- closed form

def _rk4_backward(rhs: Callable, y_T: np.ndarray, T: float, n: int):
    """Integrate y' = rhs(t, y) from T down to 0 on a uniform grid of n steps."""
    h = T / n
    ts = np.linspace(0.0, T, n + 1)
    ys = np.empty((n + 1, y_T.size))
    ys[-1] = y_T
    y = y_T.astype(float)
    for i in range(n, 0, -1):
        t = ts[i]
        k1 = rhs(t, y)
        k2 = rhs(t - h / 2, y - h / 2 * k1)
        k3 = rhs(t - h / 2, y - h / 2 * k2)
        k4 = rhs(t - h, y - h * k3)
        y = y - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[i - 1] = y
    return ts, ys


def _gain(g, t):
    return g(t) if callable(g) else g


def adjoint_odes(problem: ProblemDef, control: LinearFeedback, horizon: float,
                 weights, n_steps: int = 4096) -> Callable:
    """Interpolants t -> (alpha, beta, pi) for the affine family."""
    s = problem.affine
    lam = np.asarray(weights, dtype=float)
    gamma, eta, c0 = (np.asarray(v, dtype=float) for v in (s.gamma, s.eta, s.c0))

    def rhs(t, y):
        alpha, beta, pi = y
        kc, mc = _gain(control.gain, t), _gain(control.offset, t)
        kj, mj = _gain(control.jump_gain, t), _gain(control.jump_offset, t)
        A, A0 = s.a - s.bu * kc, s.bu * mc + s.b0
        S, S0 = s.sx - s.su * kc, s.su * mc + s.s0
        C, C0 = gamma - eta * kj, eta * mj + c0
        jump_lin = float(np.sum(lam * gamma * C))
        jump_const = float(np.sum(lam * gamma * C0))
        d_alpha = -alpha * (A + s.a + s.sx * S + jump_lin) - 2 * s.qf
        d_beta = -alpha * A0 - s.a * beta - s.sx * alpha * S0 - s.l - alpha * jump_const
        d_pi = -(2 * s.a + s.sx ** 2 + float(np.sum(lam * gamma ** 2))) * pi - 2 * s.qf
        return np.array([d_alpha, d_beta, d_pi])

    y_T = np.array([2 * s.gT, s.G, 2 * s.gT])
    ts, ys = _rk4_backward(rhs, y_T, horizon, n_steps)
    dys = np.array([rhs(t, y) for t, y in zip(ts, ys)])
    spline = CubicHermiteSpline(ts, ys, dys, axis=0)
    return spline


def solve_adjoint_closed_form(problem: ProblemDef, control, noise,
                              state: StatePath | None = None, u: ControlPath | None = None,
                              n_ode_steps: int = 4096):
    """Closed-form adjoints for affine coefficients under linear feedback."""
    if problem.affine is None:
        raise UnsupportedProblemError("closed-form adjoints need affine coefficients and quadratic costs")
    if not isinstance(control, LinearFeedback):
        raise UnsupportedProblemError("closed-form adjoints need a linear feedback control")
    batch, _ = as_batch(noise)
    if state is None or u is None:
        state, u = base_solution(problem, control, batch)
    spline = adjoint_odes(problem, control, batch.horizon, batch.mark_space.weights, n_ode_steps)
    t = batch.times
    abp = spline(t)
    alpha, beta, pi = abp[..., 0], abp[..., 1], abp[..., 2]
    X, XL = np.atleast_2d(state.post), np.atleast_2d(state.left)
    U, UJ = np.atleast_2d(u.values), np.atleast_2d(u.jump_values)
    p = alpha * X + beta
    q = alpha * problem.sigma(t, X, U)
    n = max(batch.mark_space.n_marks, 1)
    k = np.zeros(t.shape + (n,))
    kj = np.zeros(t.shape + (n,))
    for e in range(batch.mark_space.n_marks):
        k[..., e] = alpha * problem.c(t, X, UJ, e)
        kj[..., e] = alpha * problem.c(t, XL, UJ, e)
    first = AdjointPath(t, p, q, k, kj, notes={"backend": "closed_form"})
    second = SecondAdjointPath(t, pi, np.zeros_like(pi), np.zeros(t.shape + (n,)))
    return first, second


def closed_form_second_adjoint(problem: ProblemDef, noise, n_ode_steps: int = 4096) -> SecondAdjointPath:
    """P = pi(t) whenever b, sigma, c are affine in x and f, g quadratic in x.

    Only x-derivatives enter the second adjoint equation, so the control may be
    arbitrary (e.g. bang-bang) as long as the x-structure is affine.
    """
    if problem.affine is None:
        raise UnsupportedProblemError("closed-form second adjoint needs affine x-structure")
    batch, _ = as_batch(noise)
    zero = LinearFeedback(0.0)
    spline = adjoint_odes(problem, zero, batch.horizon, batch.mark_space.weights, n_ode_steps)
    pi = spline(batch.times)[..., 2]
    n = max(batch.mark_space.n_marks, 1)
    return SecondAdjointPath(batch.times, pi, np.zeros_like(pi), np.zeros(batch.times.shape + (n,)))


# --------------------------------------------------------------------------- regression

@dataclass(frozen=True)
class RegressionSpec:
    """Least-squares Monte Carlo settings.

    ``degree`` is the polynomial degree in the state for p and q;
    ``jump_degree`` the degree for k.  With ``control_interaction`` every basis
    function is also multiplied by the current control, which lets q follow a
    control that switches with the state.
    """

    degree: int = 3
    ridge: float = 0.0
    jump_degree: int = 1
    control_interaction: bool = False
    fallback_ridge: float = 1e-8

    def __post_init__(self):
        if self.degree < 1 or self.jump_degree < 0:
            raise ValueError("degree must be >= 1 and jump_degree >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


def _poly(x, degree, scale):
    z = x / scale
    return np.stack([z ** d for d in range(degree + 1)], axis=-1)


def _basis(spec: RegressionSpec, x, u, scale):
    phi = _poly(x, spec.degree, scale)
    if spec.control_interaction:
        phi = np.concatenate([phi, phi * u[..., None]], axis=-1)
    return phi


def _lstsq(A, y, ridge, fallback):
    """Ridge least squares with coefficient covariance; escalates ridge if singular."""
    AtA = A.T @ A
    n = AtA.shape[0]
    scale = np.trace(AtA) / n if n else 1.0
    lam = ridge
    used_fallback = False
    while True:
        M = AtA + lam * scale * np.eye(n)
        cond = np.linalg.cond(M)
        if np.isfinite(cond) and cond < 1e12:
            break
        lam = fallback if lam == 0 else lam * 100
        used_fallback = True
        if lam > 1.0:
            break
    Minv = np.linalg.inv(M)
    coef = Minv @ (A.T @ y)
    resid = y - A @ coef
    dof = max(A.shape[0] - n, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * Minv @ AtA @ Minv
    return coef, cov, used_fallback, lam


@dataclass
class RegressionFit:
    """Per base step coefficient blocks (E-part, q-part, k-part) and covariances."""

    base_times: np.ndarray
    scale: float
    spec: RegressionSpec
    coef_p: list = field(default_factory=list)
    coef_q: list = field(default_factory=list)
    coef_k: list = field(default_factory=list)
    cov: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)


def solve_adjoint_regression(problem: ProblemDef, control, noise, spec: RegressionSpec = RegressionSpec(),
                             state: StatePath | None = None, u: ControlPath | None = None):
    """Backward least-squares Monte Carlo for the first-order adjoint.

    At each base step the next value p_{j+1} is regressed jointly on
    phi(X_j), dB_j phi(X_j) and (dN_{j,e} - lam_e dt) psi(X_j), which gives
    E[p_{j+1} | X_j], q_j and k_{j,e}; then
    p_j = E[p_{j+1} | X_j] + driver(t_j, X_j, E[p_{j+1} | X_j], q_j, k_j) dt.
    Returns the adjoint evaluated at the base nodes of every path, plus the fit.
    """
    batch, _ = as_batch(noise)
    if state is None or u is None:
        state, u = base_solution(problem, control, batch)
    X, U, UJ = np.atleast_2d(state.post), np.atleast_2d(u.values), np.atleast_2d(u.jump_values)
    P = batch.n_paths
    rows = np.arange(P)[:, None]
    bi = batch.base_index
    nb = bi.shape[1]
    tb = batch.times[rows, bi]
    xb, ub, ujb = X[rows, bi], U[rows, bi], UJ[rows, bi]
    Bpath = np.concatenate([np.zeros((P, 1)), np.cumsum(batch.dB, axis=1)], axis=1)
    dB = np.diff(Bpath[rows, bi], axis=1)
    weights = np.asarray(batch.mark_space.weights)
    n_marks = weights.size
    counts = np.zeros((P, nb - 1, max(n_marks, 1)))
    if n_marks:
        for e in range(n_marks):
            cum = np.concatenate([np.zeros((P, 1)), np.cumsum(batch.marks[:, 1:] == e, axis=1)], axis=1)
            counts[:, :, e] = np.diff(cum[rows, bi], axis=1)
    dtb = np.diff(tb, axis=1)
    scale = max(float(np.std(xb)), 1e-12)
    fit = RegressionFit(tb[0], scale, spec)

    p = np.empty((P, nb))
    q = np.zeros((P, nb))
    k = np.zeros((P, nb, max(n_marks, 1)))
    p_se = np.zeros((P, nb))
    q_se = np.zeros((P, nb))
    pq_cov = np.zeros((P, nb))
    p[:, -1] = problem.g_x(xb[:, -1])
    for j in range(nb - 2, -1, -1):
        t, x, uu, uj, h = tb[:, j], xb[:, j], ub[:, j], ujb[:, j], dtb[:, j]
        phi = _basis(spec, x, uu, scale)
        cols = [phi, dB[:, j, None] * phi]
        psi = None
        if n_marks:
            psi = _poly(x, spec.jump_degree, scale)
            for e in range(n_marks):
                cols.append((counts[:, j, e] - weights[e] * h)[:, None] * psi)
        A = np.concatenate(cols, axis=1)
        coef, cov, fell, lam = _lstsq(A, p[:, j + 1], spec.ridge, spec.fallback_ridge)
        m = phi.shape[1]
        cp, cq = coef[:m], coef[m:2 * m]
        ck = coef[2 * m:].reshape(n_marks, -1) if n_marks else np.zeros((0, 0))
        fit.coef_p.insert(0, cp)
        fit.coef_q.insert(0, cq)
        fit.coef_k.insert(0, ck)
        fit.cov.insert(0, cov)
        fit.fallbacks.insert(0, lam if fell else 0.0)
        ep = phi @ cp
        qj = phi @ cq
        drv = problem.b_x(t, x, uu) * ep + problem.sigma_x(t, x, uu) * qj + problem.f_x(t, x, uu)
        for e in range(n_marks):
            k[:, j, e] = psi @ ck[e]
            drv = drv + weights[e] * problem.c_x(t, x, uj, e) * k[:, j, e]
        p[:, j] = ep + drv * h
        q[:, j] = qj
        # pointwise standard errors of the fitted E-part and q-part
        Cpp, Cqq, Cpq = cov[:m, :m], cov[m:2 * m, m:2 * m], cov[:m, m:2 * m]
        p_se[:, j] = np.sqrt(np.maximum(np.einsum("pi,ij,pj->p", phi, Cpp, phi), 0.0))
        q_se[:, j] = np.sqrt(np.maximum(np.einsum("pi,ij,pj->p", phi, Cqq, phi), 0.0))
        pq_cov[:, j] = np.einsum("pi,ij,pj->p", phi, Cpq, phi)
    k_jump = k.copy()
    adj = AdjointPath(tb, p, q, k, k_jump, p_se, q_se, pq_cov,
                      notes={"backend": "regression", "fallbacks": int(np.count_nonzero(fit.fallbacks))})
    return adj, fit


def regression_on_grid(problem: ProblemDef, fit: RegressionFit, noise, state: StatePath,
                       u: ControlPath) -> AdjointPath:
    """Evaluate a regression fit at every node of each path's grid.

    A node in [t_j, t_{j+1}) uses the coefficients of base step j; the driver
    correction is not re-applied, so between base nodes the values are the
    conditional-expectation part of the fit.
    """
    batch, _ = as_batch(noise)
    t = batch.times
    X, XL = np.atleast_2d(state.post), np.atleast_2d(state.left)
    U, UJ = np.atleast_2d(u.values), np.atleast_2d(u.jump_values)
    nsteps = len(fit.coef_p)
    step = np.clip(np.searchsorted(fit.base_times, t, side="right") - 1, 0, nsteps - 1)
    n_marks = batch.mark_space.n_marks
    p = np.empty_like(t)
    q = np.empty_like(t)
    p_se = np.zeros_like(t)
    q_se = np.zeros_like(t)
    pq = np.zeros_like(t)
    k = np.zeros(t.shape + (max(n_marks, 1),))
    kj = np.zeros_like(k)
    for j in range(nsteps):
        sel = step == j
        if not sel.any():
            continue
        phi = _basis(fit.spec, X[sel], U[sel], fit.scale)
        p[sel] = phi @ fit.coef_p[j]
        q[sel] = phi @ fit.coef_q[j]
        m = phi.shape[1]
        cov = fit.cov[j]
        p_se[sel] = np.sqrt(np.maximum(np.einsum("pi,ij,pj->p", phi, cov[:m, :m], phi), 0.0))
        q_se[sel] = np.sqrt(np.maximum(np.einsum("pi,ij,pj->p", phi, cov[m:2 * m, m:2 * m], phi), 0.0))
        pq[sel] = np.einsum("pi,ij,pj->p", phi, cov[:m, m:2 * m], phi)
        if n_marks:
            psi = _poly(X[sel], fit.spec.jump_degree, fit.scale)
            psil = _poly(XL[sel], fit.spec.jump_degree, fit.scale)
            k[sel] = psi @ fit.coef_k[j].T
            kj[sel] = psil @ fit.coef_k[j].T
    last = t >= batch.horizon
    p[last] = problem.g_x(X[last])
    p_se[last] = q_se[last] = pq[last] = 0.0
    return AdjointPath(t, p, q, k, kj, p_se, q_se, pq, notes={"backend": "regression_on_grid"})


# --------------------------------------------------------------------------- duality identities

@dataclass(frozen=True)
class DualityReport:
    name: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    diff: float
    diff_se: float

    def agrees(self, allowance: float = 0.0, n_se: float = 3.0) -> bool:
        return abs(self.diff) <= n_se * self.diff_se + allowance


def _report(name, lhs, rhs) -> DualityReport:
    lm, ls = _moment(lhs)
    rm, rs = _moment(rhs)
    dm, ds = _moment(lhs - rhs)
    return DualityReport(name, lm, ls, rm, rs, dm, ds)


def _pieces(problem: ProblemDef, run: SpikeRun, batch: NoiseBatch):
    t = batch.times[:, :-1]
    X = np.atleast_2d(run.base.post)[:, :-1]
    U = np.atleast_2d(run.u.values)[:, :-1]
    UE = np.atleast_2d(run.u_eps.values)[:, :-1]
    UJ = np.atleast_2d(run.u.jump_values)[:, :-1]
    return t, X, U, UE, UJ


def duality_px(problem: ProblemDef, run: SpikeRun, adj: AdjointPath, noise) -> DualityReport:
    """E[p_T X_hat_T] against E int (p delta b + q delta sigma - X_hat f_x) dt."""
    batch, _ = as_batch(noise)
    t, X, U, UE, _ = _pieces(problem, run, batch)
    xh = np.atleast_2d(run.x_hat.post)
    db = problem.b(t, X, UE) - problem.b(t, X, U)
    ds = problem.sigma(t, X, UE) - problem.sigma(t, X, U)
    integrand = adj.p[:, :-1] * db + adj.q[:, :-1] * ds - xh[:, :-1] * problem.f_x(t, X, U)
    rhs = time_sum(integrand * batch.dt)
    lhs = problem.g_x(np.atleast_2d(run.base.post)[:, -1]) * xh[:, -1]
    return _report("px", lhs, rhs)


def duality_py(problem: ProblemDef, run: SpikeRun, adj: AdjointPath, noise) -> DualityReport:
    """E[p_T Y_hat_T] against the second-order source terms."""
    batch, _ = as_batch(noise)
    t, X, U, UE, UJ = _pieces(problem, run, batch)
    xh = np.atleast_2d(run.x_hat.post)[:, :-1]
    yh = np.atleast_2d(run.y_hat.post)
    p, q = adj.p[:, :-1], adj.q[:, :-1]
    dsx = problem.sigma_x(t, X, UE) - problem.sigma_x(t, X, U)
    integrand = (0.5 * problem.b_xx(t, X, U) * p * xh ** 2
                 + 0.5 * problem.sigma_xx(t, X, U) * q * xh ** 2
                 - yh[:, :-1] * problem.f_x(t, X, U)
                 + dsx * xh * q)
    for e, lam in enumerate(batch.mark_space.weights):
        integrand = integrand + lam * 0.5 * problem.c_xx(t, X, UJ, e) * adj.k[:, :-1, e] * xh ** 2
    rhs = time_sum(integrand * batch.dt)
    lhs = problem.g_x(np.atleast_2d(run.base.post)[:, -1]) * yh[:, -1]
    return _report("py", lhs, rhs)


def duality_pxx(problem: ProblemDef, run: SpikeRun, adj: AdjointPath, second: SecondAdjointPath,
                noise) -> DualityReport:
    """E[P_T X_hat_T^2] against its Ito expansion."""
    batch, _ = as_batch(noise)
    t, X, U, UE, UJ = _pieces(problem, run, batch)
    xh = np.atleast_2d(run.x_hat.post)
    x = xh[:, :-1]
    p, q = adj.p[:, :-1], adj.q[:, :-1]
    P, Q = second.P[:, :-1], second.Q[:, :-1]
    db = problem.b(t, X, UE) - problem.b(t, X, U)
    ds = problem.sigma(t, X, UE) - problem.sigma(t, X, U)
    curv = problem.f_xx(t, X, U) + p * problem.b_xx(t, X, U) + q * problem.sigma_xx(t, X, U)
    for e, lam in enumerate(batch.mark_space.weights):
        curv = curv + lam * adj.k[:, :-1, e] * problem.c_xx(t, X, UJ, e)
    integrand = (P * ds ** 2 - x ** 2 * curv + 2 * P * x * db + 2 * Q * x * ds
                 + 2 * P * problem.sigma_x(t, X, U) * x * ds)
    rhs = time_sum(integrand * batch.dt)
    lhs = problem.g_xx(np.atleast_2d(run.base.post)[:, -1]) * xh[:, -1] ** 2
    return _report("pxx", lhs, rhs)


def _solve_adjoints(problem, control, batch, state, u, backend, spec):
    if backend == "closed_form":
        return solve_adjoint_closed_form(problem, control, batch, state, u)
    if backend == "regression":
        _, fit = solve_adjoint_regression(problem, control, batch, spec, state, u)
        adj = regression_on_grid(problem, fit, batch, state, u)
        return adj, closed_form_second_adjoint(problem, batch)
    raise ValueError(f"unknown adjoint backend {backend!r}")


def duality_checks(problem: ProblemDef, control, spec: SpikeSpec, noise, backend: str = "closed_form",
                   regression: RegressionSpec = RegressionSpec()) -> dict:
    """All three identities for one spike, sharing one forward ensemble."""
    batch, _ = as_batch(noise)
    state, u = base_solution(problem, control, batch)
    adj, second = _solve_adjoints(problem, control, batch, state, u, backend, regression)
    run = run_spike(problem, spec, batch, state, u)
    return {"px": duality_px(problem, run, adj, batch),
            "py": duality_py(problem, run, adj, batch),
            "pxx": duality_pxx(problem, run, adj, second, batch)}


def duality_check_px(problem, control, spec, noise, **kw) -> DualityReport:
    return duality_checks(problem, control, spec, noise, **kw)["px"]


def duality_check_py(problem, control, spec, noise, **kw) -> DualityReport:
    return duality_checks(problem, control, spec, noise, **kw)["py"]


def duality_check_pxx(problem, control, spec, noise, **kw) -> DualityReport:
    return duality_checks(problem, control, spec, noise, **kw)["pxx"]


def reduced_expansion(problem: ProblemDef, control, noise, t_bar, v, epsilons,
                      backend: str = "closed_form", regression: RegressionSpec = RegressionSpec()):
    """(J_hat - E int (p db + q ds + df + P ds^2 / 2) dt) / eps along the ladder."""
    from .variation import ResidualLadder, cost_expansion_samples
    batch, _ = as_batch(noise)
    state, u = base_solution(problem, control, batch)
    adj, second = _solve_adjoints(problem, control, batch, state, u, backend, regression)
    vals, ses = [], []
    for eps in epsilons:
        run = run_spike(problem, SpikeSpec(t_bar, eps, v), batch, state, u)
        jh = cost_expansion_samples(problem, run, batch)
        t, X, U, UE, _ = _pieces(problem, run, batch)
        db = problem.b(t, X, UE) - problem.b(t, X, U)
        ds = problem.sigma(t, X, UE) - problem.sigma(t, X, U)
        df = problem.f(t, X, UE) - problem.f(t, X, U)
        red = time_sum((adj.p[:, :-1] * db + adj.q[:, :-1] * ds + df + 0.5 * second.P[:, :-1] * ds ** 2)
                       * batch.dt)
        m, s = _moment((jh - red) / eps)
        vals.append(m)
        ses.append(s)
    return ResidualLadder(np.asarray(epsilons, float), np.asarray(vals), np.asarray(ses))
