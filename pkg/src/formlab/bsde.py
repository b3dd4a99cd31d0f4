"""Backward equations on the chain filtration.

On a finite chain the backward value process is a surface v(t, x) with
Y_t = v(t, X_t).  The finite-horizon equation is the backward system

    d/dt v = (Lv)/m - f(., v) - rho,      v(T, .) = terminal,

integrated here by implicit Euler: each step solves the monotone system

    (M + dt L) v - dt M f(., v) = M v_prev + dt masses(mu)

by damped Newton (the Jacobian is SPD when f is nonincreasing), with a
per-node scan fallback.  The stationary point of a step is exactly the
elliptic solution, so long horizons converge to it without a step-size
floor.

The random-horizon solution is built by the horizon ladder: at level n the
data are truncated at n, the driver is regularized at Lipschitz level n
when it carries no usable Lipschitz bound, and the finite-horizon problem
with terminal 0 is solved up to T_n = 2^n / min positive rate.  Ladder
increments contract super-geometrically once truncation deactivates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .drivers import Driver, truncate_data, yosida_regularize
from .forms import DirichletForm, FormError, Problem, SignedMeasure, is_transient
from .markov import Chain, ChainPath, _path_rng, _simulate_batch, default_horizon_cap


class SolverError(RuntimeError):
    """Nonlinear solve failed; the message names the step and node."""


@dataclass
class BsdeSolution:
    """Backward value surface on a uniform time grid; u = v(0, .)."""

    times: np.ndarray
    surface: np.ndarray
    u: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def value_at(self, t: float, x: int) -> float:
        """Linear-in-time interpolation of the surface at (t, x)."""
        if self.times.size == 1:
            return float(self.surface[0, x])
        tt = np.clip(t, self.times[0], self.times[-1])
        j = min(int(np.searchsorted(self.times, tt, side="right")) - 1,
                self.times.size - 2)
        w = (tt - self.times[j]) / (self.times[j + 1] - self.times[j])
        return float((1 - w) * self.surface[j, x] + w * self.surface[j + 1, x])


def _implicit_step(A0, m, driver, rhs, v_init, *, tol, max_iter, step_label):
    """Solve A0 v - dt_m * f(v) = rhs by damped Newton; dt_m = dt * m baked in.

    A0 is the dense step matrix M + dt L; ``driver_scaled`` evaluation uses
    the dt*m scaling carried by the closure arguments.
    """
    dtm, drv = driver
    v = v_init.copy()
    F = A0 @ v - dtm * drv.value(v) - rhs
    norm0 = float(np.max(np.abs(F)))
    if drv.constant_slope is not None:
        J = A0 - np.diag(dtm * drv.constant_slope)
        cho = sla.cho_factor(J, lower=True)
        v = v + sla.cho_solve(cho, -F)
        return v, 1
    for it in range(1, max_iter + 1):
        d = np.minimum(drv.deriv(v), 0.0)
        J = A0 - np.diag(dtm * d)
        try:
            cho = sla.cho_factor(J, lower=True)
        except sla.LinAlgError as exc:
            raise SolverError(f"{step_label}: step Jacobian not SPD ({exc})")
        delta = sla.cho_solve(cho, -F)
        alpha = 1.0
        for _ in range(40):
            v_new = v + alpha * delta
            F_new = A0 @ v_new - dtm * drv.value(v_new) - rhs
            if float(np.max(np.abs(F_new))) <= (1 - 0.25 * alpha) * float(np.max(np.abs(F))) + 1e-300:
                break
            alpha *= 0.5
        v, F = v_new, F_new
        if float(np.max(np.abs(alpha * delta))) <= tol * (1.0 + float(np.max(np.abs(v)))):
            if float(np.max(np.abs(F))) <= max(1e-9 * (1 + norm0), 1e2 * tol):
                return v, it
    # damped Newton stalled: fall back to a per-node monotone scan
    v, sweeps = _step_scan(A0, dtm, drv, rhs, v, tol)
    return v, max_iter + sweeps


def _step_scan(A0, dtm, drv, rhs, v, tol, max_sweeps=5000):
    """Nonlinear per-node sweep on the step system with bisection node solves."""
    n = v.size
    diag = np.diag(A0).copy()
    off = A0 - np.diag(diag)
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for x in range(n):
            cx = rhs[x] - float(off[x] @ v)
            root = _scalar_root(
                lambda y, x=x: diag[x] * y - dtm[x] * float(
                    drv.value_at(np.array([x]), np.array([y]))[0]),
                cx, v[x], tol)
            if root is None:
                raise SolverError(f"step scan found no root at node {x}")
            change = max(change, abs(root - v[x]))
            v[x] = root
        if change <= tol * (1.0 + float(np.max(np.abs(v)))):
            return v, sweep
    raise SolverError(f"step scan did not converge within {max_sweeps} sweeps")


def _scalar_root(phi, target, guess, tol, bound=1e14):
    """Root of the increasing function phi(y) = target by expanding bisection."""
    lo = hi = float(guess)
    step = max(1.0, abs(guess)) * 0.5
    flo = phi(lo) - target
    fhi = flo
    while flo > 0.0:
        lo -= step
        step *= 2.0
        if abs(lo) > bound:
            return None
        flo = phi(lo) - target
    step = max(1.0, abs(guess)) * 0.5
    while fhi < 0.0:
        hi += step
        step *= 2.0
        if abs(hi) > bound:
            return None
        fhi = phi(hi) - target
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol * (1.0 + abs(mid)):
            return mid
        if phi(mid) - target < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_finite_horizon(form: DirichletForm, driver: Driver, mu: SignedMeasure,
                         terminal, T: float, dt: float, *,
                         newton_tol: float = 1e-13,
                         max_newton: int = 60) -> BsdeSolution:
    """Backward implicit-Euler integration of the value surface on [0, T].

    The terminal slice of the returned surface equals ``terminal`` exactly.
    dt is rounded so the grid divides T evenly.
    """
    if T < 0:
        raise FormError(f"horizon must be nonnegative, got {T}")
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (form.n,):
        raise FormError(f"terminal data has shape {terminal.shape}, expected ({form.n},)")
    if T == 0:
        times = np.array([0.0])
        surf = terminal[None, :].copy()
        return BsdeSolution(times, surf, surf[0].copy(), {"steps": 0})
    if dt <= 0:
        raise FormError(f"step must be positive, got {dt}")
    steps = max(1, int(round(T / dt)))
    dt = T / steps
    times = np.linspace(0.0, T, steps + 1)
    M = np.diag(form.m)
    A0 = M + dt * form.dense_L()
    dtm = dt * form.m
    surface = np.empty((steps + 1, form.n))
    surface[steps] = terminal
    total_iters = 0
    v = terminal.copy()
    for j in range(steps - 1, -1, -1):
        rhs = form.m * v + dt * mu.masses
        try:
            v, iters = _implicit_step(
                A0, form.m, (dtm, driver), rhs, v,
                tol=newton_tol, max_iter=max_newton,
                step_label=f"step {j}")
        except SolverError as exc:
            raise SolverError(f"backward step {j} (t = {times[j]:.6g}): {exc}")
        if not np.all(np.isfinite(v)):
            bad = int(np.argmax(~np.isfinite(v)))
            raise SolverError(f"non-finite value at step {j}, node {bad}")
        surface[j] = v
        total_iters += iters
    return BsdeSolution(times, surface, surface[0].copy(),
                        {"steps": steps, "dt": dt, "inner_iterations": total_iters})


@dataclass(frozen=True)
class LadderLevel:
    level: int
    horizon: float
    sup_increment: float
    inner_iterations: int
    truncation_active: bool
    yosida_level: int | None
    tol_floor: float = 0.0


@dataclass
class LadderTrace:
    levels: list
    converged: bool
    achieved_tol: float = 0.0

    def rows(self):
        return [(lv.level, lv.horizon, lv.sup_increment, lv.inner_iterations)
                for lv in self.levels]

    @property
    def final_level(self) -> int:
        return self.levels[-1].level if self.levels else 0


def _apriori_radius(form, driver, mu):
    """Sup-norm bound 2*||G(M|f0| + |mu|)||_inf when the form is transient."""
    transient, _ = is_transient(form)
    if not transient:
        return None
    rhs = form.m * np.abs(driver.f0()) + np.abs(mu.masses)
    bound = float(np.max(np.abs(form.solve(rhs))))
    return 2.0 * max(bound, 1e-6)


def _regularization_defect(base: Driver, reg: Driver, span: float,
                           probes: int = 129) -> float:
    """max of f - f_n over the working range [-span, span], all nodes.

    Measures both the quadrature spacing error and any takeover by the
    penalty cones anchored at the grid boundary (loose grids on steep
    drivers); the ladder cannot certify accuracy below this defect.
    """
    ys = np.linspace(-span, span, probes)
    idx = np.repeat(np.arange(base.n), ys.size)
    yy = np.tile(ys, base.n)
    gap = base.value_at(idx, yy) - reg.value_at(idx, yy)
    return float(np.max(gap, initial=0.0))


def solve_random_horizon_ladder(form: DirichletForm, driver: Driver,
                                mu: SignedMeasure, schedule=None, *,
                                tol_outer: float = 1e-8,
                                steps_per_level: int = 128,
                                max_levels: int = 44,
                                yosida_delta_frac: float = 1.0 / 4096.0,
                                yosida_radius: float | None = None):
    """Random-horizon solution via the doubling-horizon ladder.

    Level n truncates the data at n, regularizes the driver at Lipschitz
    level n if it has no finite local Lipschitz bound on the a priori range,
    and integrates backward from terminal 0 over [0, T_n].  Stops when the
    sup-norm increment between consecutive levels is at most tol_outer.

    Returns (BsdeSolution, LadderTrace).
    """
    lam = (form.degree + form.k) / form.m
    positive = lam[lam > 0]
    t0 = 1.0 / float(positive.min()) if positive.size else 1.0
    if schedule is None:
        # Starting below the relaxation time makes the early sup-increments
        # grow while the solution mass fills in; the horizon origin is raised
        # to ln2/gap so the recorded increments decrease from the first level.
        s = 1.0 / np.sqrt(form.m)
        gap = float(sla.eigvalsh(form.dense_L() * s[:, None] * s[None, :])[0])
        if gap > 1e-12:
            t0 = max(t0, np.log(2.0) / gap)
        schedule = [t0 * 2.0 ** j for j in range(1, max_levels + 1)]
    radius = yosida_radius
    if radius is None:
        radius = _apriori_radius(form, driver, mu)
    f0_max = float(np.max(np.abs(driver.f0())))
    mu_max = float(np.max(np.abs(mu.masses))) if mu.n else 0.0
    needs_grid = driver.slope_bound(radius if radius is not None else 1.0) is None
    if needs_grid and radius is None:
        raise SolverError(
            "ladder needs a Lipschitz bound or a transient form to size "
            "the regularization grid; pass yosida_radius explicitly")
    green_scale = 0.0
    if needs_grid:
        # driver error delta_f moves the solution by at most |G(M delta_f)|,
        # so the regularization defect caps the achievable ladder tolerance
        try:
            green_scale = float(np.max(np.abs(form.solve(form.m))))
        except Exception:
            green_scale = 1.0

    u_prev = np.zeros(form.n)
    levels = []
    sol = None
    for level, T in enumerate(schedule, start=1):
        drv = driver
        yosida_level = None
        floor = 0.0
        if needs_grid:
            drv = yosida_regularize(
                driver, level,
                {"R": radius, "delta": radius * yosida_delta_frac})
            yosida_level = level
            floor = green_scale * _regularization_defect(driver, drv,
                                                         radius / 2.0)
        drv_n, mu_n = truncate_data(drv, mu, level)
        sol = solve_finite_horizon(form, drv_n, mu_n, np.zeros(form.n),
                                   T, T / steps_per_level)
        inc = float(np.max(np.abs(sol.u - u_prev)))
        levels.append(LadderLevel(
            level=level, horizon=T, sup_increment=inc,
            inner_iterations=sol.diagnostics.get("inner_iterations", 0),
            truncation_active=(f0_max > level or mu_max > level),
            yosida_level=yosida_level, tol_floor=floor))
        u_prev = sol.u
        if level >= 2 and inc <= max(tol_outer, floor):
            trace = LadderTrace(levels, converged=True,
                                achieved_tol=max(tol_outer, floor))
            sol.diagnostics["ladder"] = trace
            return sol, trace
    incs = [lv.sup_increment for lv in levels]
    raise SolverError(
        f"horizon ladder did not stabilize within {len(schedule)} levels; "
        f"sup-increments: {incs} (non-transient form or unbounded solution?)")


def extract_martingale(path: ChainPath, solution, driver: Driver,
                       mu: SignedMeasure, form: DirichletForm):
    """Martingale increments along a sampled path.

    M_t = Y_t - Y_0 + int_0^t [f(X_s, Y_s) + rho(X_s)] ds with Y_s = u(X_s)
    for a vector solution, or v(s, X_s) for a BsdeSolution surface (the time
    integral then uses the surface's own grid).  Returns (times, M) sampled
    at the jump instants, with the post-lifetime value frozen.
    """
    rho = mu.density(form.space)
    parabolic = isinstance(solution, BsdeSolution)
    u = solution.u if parabolic else np.asarray(solution, dtype=float)

    times = [0.0]
    mvals = [0.0]
    t = 0.0
    M = 0.0
    for j, (x, hold) in enumerate(zip(path.states, path.holds)):
        x = int(x)
        if parabolic:
            drift = _surface_quadrature(solution, driver, x, t, t + hold) \
                + rho[x] * hold
        else:
            fx = float(driver.value_at(np.array([x]), np.array([u[x]]))[0])
            drift = (fx + rho[x]) * hold
        M += drift
        t += hold
        last = j == len(path) - 1
        if last and path.absorbed:
            yx = solution.value_at(t, x) if parabolic else u[x]
            M += 0.0 - yx
        elif not last:
            x_next = int(path.states[j + 1])
            if parabolic:
                M += solution.value_at(t, x_next) - solution.value_at(t, x)
            else:
                M += u[x_next] - u[x]
        times.append(t)
        mvals.append(M)
    return np.asarray(times), np.asarray(mvals)


def _surface_quadrature(sol: BsdeSolution, driver, x, a, b):
    """int_a^b f(x, v(s, x)) ds on the surface's grid (midpoint per segment)."""
    if b <= a:
        return 0.0
    inner = sol.times[(sol.times > a) & (sol.times < b)]
    pts = np.concatenate([[a], inner, [b]])
    mids = 0.5 * (pts[:-1] + pts[1:])
    vals = np.array([sol.value_at(s, x) for s in mids])
    f = driver.value_at(np.full(mids.size, x, dtype=int), vals)
    return float(np.sum(f * np.diff(pts)))


@dataclass(frozen=True)
class MartingaleReport:
    """Per start node and checkpoint interval: mean increment and its SE."""

    rows: tuple  # (start, t_lo, t_hi, mean, se, zscore)
    max_abs_z: float
    n_paths: int

    def passed(self, gate: float = 4.0) -> bool:
        return self.max_abs_z <= gate


def martingale_residual_check(chain: Chain, u, driver: Driver,
                              mu: SignedMeasure, N: int, seed: int,
                              checkpoints=None, start_nodes=None,
                              drift_allowance: float = 0.0) -> MartingaleReport:
    """MC test that M is a martingale: E_x[M_{t'} - M_t] = 0 at checkpoints.

    N paths are split evenly across the start nodes.  The report carries the
    worst |mean|/SE ratio over all start nodes and checkpoint intervals.
    drift_allowance (per unit time) discounts a known algebraic defect of u
    before forming the ratio, e.g. max|Lu - M f_u - mu|/m for a solution
    carrying Monte Carlo noise.
    """
    form = chain.form
    u = np.asarray(u, dtype=float)
    if checkpoints is None:
        scale = default_horizon_cap(chain) / 40.0  # about one relaxation time
        checkpoints = scale * np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    cps = np.concatenate([[0.0], np.asarray(checkpoints, dtype=float)])
    if start_nodes is None:
        start_nodes = np.arange(chain.n)
    start_nodes = np.asarray(start_nodes, dtype=int)
    rho = mu.density(form.space)
    c_vec = driver.value(u) + rho
    per = max(2, N // start_nodes.size)
    rows = []
    max_z = 0.0
    horizon = float(cps.max()) * (1.0 + 1e-9)
    for rank, x0 in enumerate(start_nodes):
        starts = np.full(per, x0, dtype=np.int64)
        res = _simulate_batch(chain, starts, _path_rng(seed, rank), horizon,
                              mart=(u, c_vec), checkpoints=cps)
        vals = res.checkpoint_values
        for ci in range(cps.size - 1):
            inc = vals[:, ci + 1] - vals[:, ci]
            mean = float(np.sum(inc) / per)
            se = float(np.std(inc, ddof=1) / np.sqrt(per))
            excess = max(0.0, abs(mean)
                         - drift_allowance * float(cps[ci + 1] - cps[ci]))
            z = excess / se if se > 0 else (0.0 if excess < 1e-12 else np.inf)
            max_z = max(max_z, z)
            rows.append((int(x0), float(cps[ci]), float(cps[ci + 1]), mean, se, z))
    return MartingaleReport(tuple(rows), max_z, per * start_nodes.size)


@dataclass(frozen=True)
class ComparisonReport:
    """Outcome of an ordered-data comparison between two solutions."""

    hypotheses_met: bool
    reason: str
    worst_margin: float        # max(u1 - u2); <= tol when the order holds
    surface_margin: float | None
    tol: float

    @property
    def passed(self) -> bool:
        return self.hypotheses_met and self.worst_margin <= self.tol


def bsde_comparison_check(problem1: Problem, problem2: Problem,
                          sol1, sol2, tol: float = 1e-10) -> ComparisonReport:
    """Check u1 <= u2 under ordered measures and an ordered monotone driver.

    Hypotheses: mu1 <= mu2 node-wise, and f1(., u1) <= f2(., u1) with f2
    monotone, or f1(., u2) <= f2(., u2) with f1 monotone.  If they fail the
    report says so without judging the solutions.
    """
    u1 = sol1.u if hasattr(sol1, "u") else np.asarray(sol1, dtype=float)
    u2 = sol2.u if hasattr(sol2, "u") else np.asarray(sol2, dtype=float)
    d1, d2 = problem1.driver, problem2.driver
    if np.any(problem1.mu.masses > problem2.mu.masses + 1e-13):
        return ComparisonReport(False, "measures not ordered", np.inf, None, tol)
    idx = np.arange(u1.size)
    cond1 = d2.monotone and np.all(
        d1.value_at(idx, u1) <= d2.value_at(idx, u1) + 1e-12)
    cond2 = d1.monotone and np.all(
        d1.value_at(idx, u2) <= d2.value_at(idx, u2) + 1e-12)
    if not (cond1 or cond2):
        return ComparisonReport(False, "driver order hypothesis fails", np.inf, None, tol)
    margin = float(np.max(u1 - u2))
    surf_margin = None
    if isinstance(sol1, BsdeSolution) and isinstance(sol2, BsdeSolution) \
            and sol1.surface.shape == sol2.surface.shape:
        surf_margin = float(np.max(sol1.surface - sol2.surface))
    return ComparisonReport(True, "ok", margin, surf_margin, tol)
