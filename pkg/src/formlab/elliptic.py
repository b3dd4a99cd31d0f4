"""Elliptic solvers and the estimate suite.

Every solver targets the shared node equations

    (Lu)(x) = m_x f(x, u_x) + mu({x}),

through three independent routes:

  gauss-seidel  node sweeps, each scalar equation solved by expanding
                bisection (the left side is increasing, the right side
                nonincreasing, so the root is unique); two-color vectorized
                sweeps on bipartite jump graphs.
  ladder        the random-horizon backward construction (module bsde).
  mc            nonlinear Feynman-Kac with per-node occupation measures
                sampled once and reused across Picard iterations.

The check functions compute both sides of each estimate the solutions must
satisfy and report slack; nothing is clipped silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import SolverError, solve_random_horizon_ladder
from .drivers import Driver
from .forms import (DirichletForm, FormError, GreenOperatorUndefined,
                    SignedMeasure, is_transient)
from .markov import _path_rng, _simulate_batch, build_chain, default_horizon_cap


class UnboundedSolutionError(SolverError):
    """A node equation has no root inside the bracket bound."""


@dataclass
class EllipticSolution:
    """Solution vector with its nonlinearity values and defect."""

    u: np.ndarray
    f_u: np.ndarray
    residual: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def recompute_residual(self, form: DirichletForm, mu: SignedMeasure) -> float:
        return weak_form_residual(form, self.u, self.f_u, mu)


def weak_form_residual(form, u, f_u, mu) -> float:
    return float(np.max(np.abs(form.L @ u - form.m * f_u - mu.masses)))


def _two_coloring(W):
    """Greedy 2-coloring of the jump graph, or None if not bipartite."""
    n = W.shape[0]
    color = np.full(n, -1, dtype=np.int8)
    indptr, indices = W.indptr, W.indices
    for root in range(n):
        if color[root] >= 0:
            continue
        color[root] = 0
        stack = [root]
        while stack:
            x = stack.pop()
            for y in indices[indptr[x]:indptr[x + 1]]:
                if color[y] < 0:
                    color[y] = 1 - color[x]
                    stack.append(y)
                elif color[y] == color[x]:
                    return None
    return np.nonzero(color == 0)[0], np.nonzero(color == 1)[0]


def _bisect_block(diag, scale, drv, nodes, target, guess, *, tol, width,
                  bracket_bound):
    """Vectorized roots of diag*y - scale*f(node, y) = target (increasing in y).

    Brackets expand geometrically from guess +- width; the roots are then
    bisected to absolute tolerance tol (per node).
    """
    w = np.broadcast_to(width, guess.shape).astype(float).copy()
    np.maximum(w, 16 * tol, out=w)
    lo = guess - w
    hi = guess + w

    def phi(y):
        return diag * y - scale * drv.value_at(nodes, y) - target

    step = w.copy()
    for _ in range(140):
        mask = phi(lo) > 0
        if not np.any(mask):
            break
        step[mask] *= 2.0
        lo[mask] -= step[mask]
        if np.any(np.abs(lo) > bracket_bound):
            bad = nodes[np.abs(lo) > bracket_bound][0]
            raise UnboundedSolutionError(
                f"no bracket below -{bracket_bound:g} at node {bad}: "
                f"solution unbounded")
    step = w.copy()
    for _ in range(140):
        mask = phi(hi) < 0
        if not np.any(mask):
            break
        step[mask] *= 2.0
        hi[mask] += step[mask]
        if np.any(np.abs(hi) > bracket_bound):
            bad = nodes[np.abs(hi) > bracket_bound][0]
            raise UnboundedSolutionError(
                f"no bracket above {bracket_bound:g} at node {bad}: "
                f"solution unbounded")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        neg = phi(mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= tol):
            break
    return 0.5 * (lo + hi)


def _bisect_scalar(diag, scale, drv, x, target, guess, *, tol, width,
                   bracket_bound):
    """Scalar version of _bisect_block on pure floats (hot loop)."""
    f = drv.scalar
    w = max(width, 16 * tol)
    lo, hi = guess - w, guess + w
    step = w
    while diag * lo - scale * f(x, lo) > target:
        step *= 2.0
        lo -= step
        if abs(lo) > bracket_bound:
            raise UnboundedSolutionError(
                f"no bracket below -{bracket_bound:g} at node {x}: "
                f"solution unbounded")
    step = w
    while diag * hi - scale * f(x, hi) < target:
        step *= 2.0
        hi += step
        if abs(hi) > bracket_bound:
            raise UnboundedSolutionError(
                f"no bracket above {bracket_bound:g} at node {x}: "
                f"solution unbounded")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if diag * mid - scale * f(x, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_elliptic_gauss_seidel(form: DirichletForm, driver: Driver,
                                mu: SignedMeasure, *, tol: float = 1e-11,
                                max_sweeps: int = 2_000_000,
                                bracket_bound: float = 1e12,
                                x0=None) -> EllipticSolution:
    """Nonlinear Gauss-Seidel sweeps with bisection node solves.

    Stops when both the sup-norm sweep change is at most tol and the defect
    ||Lu - M f_u - mu||_inf is at most 10*tol.  Affine drivers use the exact
    closed-form node solve.  Bipartite jump graphs get two-color vectorized
    sweeps; other graphs are swept node by node.
    """
    n = form.n
    diag_L = form.degree + form.k
    masses = mu.masses
    m = form.m
    W = form.W
    u = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    affine = driver.constant_slope is not None
    if affine:
        a0 = driver.f0()
        slope = driver.constant_slope
        denom = diag_L - m * slope
        if np.any(denom <= 0):
            bad = int(np.argmin(denom))
            raise UnboundedSolutionError(
                f"node {bad} has no unique root: zero diagonal and "
                f"non-damping driver")
    coloring = _two_coloring(W)
    floor = np.finfo(float).eps * 4
    blocks = None
    if coloring is not None:
        blocks = [(np.asarray(c, dtype=int), W[c, :].tocsr())
                  for c in coloring if len(c)]

    residual = np.inf
    sweeps = 0
    change = np.inf
    while sweeps < max_sweeps:
        sweeps += 1
        # solve each node equation a bit tighter than the current sweep
        # motion; the final sweeps bottom out at machine precision
        node_tol = max(floor * (1.0 + float(np.max(np.abs(u), initial=0.0))),
                       0.05 * min(change, 1.0))
        warm = 4.0 * change if np.isfinite(change) else 1.0
        prev_change = change
        change = 0.0
        if blocks is not None:
            for nodes, Wblock in blocks:
                target = Wblock @ u + masses[nodes]
                if affine:
                    new = (target + m[nodes] * a0[nodes]) / denom[nodes]
                else:
                    new = _bisect_block(diag_L[nodes], m[nodes], driver,
                                        nodes, target, u[nodes],
                                        tol=node_tol, width=warm,
                                        bracket_bound=bracket_bound)
                change = max(change, float(np.max(np.abs(new - u[nodes]), initial=0.0)))
                u[nodes] = new
        else:
            indptr, indices, data = W.indptr, W.indices, W.data
            for x in range(n):
                row = slice(indptr[x], indptr[x + 1])
                target = float(data[row] @ u[indices[row]]) + masses[x]
                if affine:
                    new = (target + m[x] * a0[x]) / denom[x]
                else:
                    new = _bisect_scalar(float(diag_L[x]), float(m[x]),
                                         driver, x, target, float(u[x]),
                                         tol=node_tol, width=warm,
                                         bracket_bound=bracket_bound)
                change = max(change, abs(new - u[x]))
                u[x] = new
        if change <= tol and prev_change <= tol:
            f_u = driver.value(u)
            residual = weak_form_residual(form, u, f_u, mu)
            if residual <= 10 * tol:
                return EllipticSolution(u, f_u, residual, "gauss-seidel",
                                        {"sweeps": sweeps})
    raise SolverError(
        f"gauss-seidel did not converge in {max_sweeps} sweeps "
        f"(last change {change:g}, residual {residual:g})")


def solve_elliptic_ladder(form: DirichletForm, driver: Driver,
                          mu: SignedMeasure, *, tol_outer: float = 1e-8,
                          steps_per_level: int = 128,
                          max_levels: int = 44) -> EllipticSolution:
    """Elliptic solution read off the random-horizon ladder, u = v(0, .)."""
    sol, trace = solve_random_horizon_ladder(
        form, driver, mu, tol_outer=tol_outer,
        steps_per_level=steps_per_level, max_levels=max_levels)
    f_u = driver.value(sol.u)
    residual = weak_form_residual(form, sol.u, f_u, mu)
    return EllipticSolution(sol.u, f_u, residual, "ladder",
                            {"ladder": trace, "levels": trace.final_level})


def solve_elliptic_mc(form: DirichletForm, driver: Driver, mu: SignedMeasure,
                      *, n_paths: int = 100_000, seed: int = 0,
                      picard_iters: int = 600, picard_tol: float = 1e-10,
                      damping: float = 0.5, horizon_cap: float | None = None,
                      max_capped_fraction: float = 1e-4) -> EllipticSolution:
    """Feynman-Kac Monte Carlo solution on empirical occupation measures.

    n_paths is the total budget, split evenly across start nodes.  Paths are
    sampled once; the same paths are reused by every damped Picard iteration
    (common random numbers), so the output is deterministic given the seed.
    Per-node standard errors are evaluated at the returned iterate.
    """
    transient, cert = is_transient(form)
    if not transient:
        raise GreenOperatorUndefined(
            f"MC solver needs a transient form; killing-free component "
            f"{cert.dead_component}")
    chain = build_chain(form)
    if horizon_cap is None:
        horizon_cap = default_horizon_cap(chain)
    n = form.n
    base, extra = divmod(n_paths, n)
    counts = np.full(n, base, dtype=int)
    counts[:extra] += 1
    if np.any(counts < 2):
        raise FormError(
            f"MC budget {n_paths} too small for {n} start nodes")
    rho = mu.density(form.space)

    occ_rows = []      # per start node: (counts[x], n) occupation matrices
    addf = []          # per start node: per-path additive functional of mu
    capped_total = 0
    for x in range(n):
        starts = np.full(counts[x], x, dtype=np.int64)
        res = _simulate_batch(chain, starts, _path_rng(seed, x), horizon_cap,
                              want_occupation=True)
        capped_total += int(np.sum(res.capped))
        occ_rows.append(res.occupation)
        addf.append(res.occupation @ rho)
    capped_fraction = capped_total / float(n_paths)
    if capped_fraction > max_capped_fraction:
        raise SolverError(
            f"horizon-capped fraction {capped_fraction:.2e} exceeds "
            f"{max_capped_fraction:.0e}: non-transience suspected")

    occ_mean = np.vstack([rows.mean(axis=0) for rows in occ_rows])
    add_mean = np.array([float(np.mean(a)) for a in addf])

    u = add_mean.copy()
    iters = 0
    theta = damping
    prev_delta = np.inf
    growth = 0
    for iters in range(1, picard_iters + 1):
        new = occ_mean @ driver.value(u) + add_mean
        nxt = (1.0 - theta) * u + theta * new
        delta = float(np.max(np.abs(nxt - u)))
        u = nxt
        if delta <= picard_tol * (1.0 + float(np.max(np.abs(u)))):
            break
        # a growing iteration signals the damped map is not yet contractive
        growth = growth + 1 if delta > prev_delta else 0
        if growth >= 3:
            theta *= 0.5
            growth = 0
            if theta < 1.0 / 1024.0:
                raise SolverError(
                    "MC Picard iteration diverges even at minimal damping")
        prev_delta = delta
    else:
        raise SolverError(
            f"MC Picard iteration did not settle in {picard_iters} rounds")

    f_u = driver.value(u)
    se = np.empty(n)
    for x in range(n):
        per_path = occ_rows[x] @ f_u + addf[x]
        se[x] = float(np.std(per_path, ddof=1) / np.sqrt(counts[x]))
    residual = weak_form_residual(form, u, f_u, mu)
    return EllipticSolution(u, f_u, residual, "mc", {
        "se": se, "max_se": float(np.max(se)),
        "capped_fraction": capped_fraction, "picard_iters": iters,
        "damping": theta, "n_paths": int(n_paths), "seed": int(seed),
        "horizon_cap": float(horizon_cap)})


# ---------------------------------------------------------------------------
# estimate suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualityReport:
    residuals: np.ndarray    # one per test measure
    tol: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def duality_check(form: DirichletForm, solution: EllipticSolution,
                  mu: SignedMeasure, test_measures=None,
                  tol: float = 1e-9) -> DualityReport:
    """Pairing identity <nu, u> = (f_u, U nu)_m + <mu, U nu> per test measure.

    The default family is every Dirac measure, for which the residual vector
    is |u - G(M f_u + masses)| computed with one Green solve per node.
    """
    transient, cert = is_transient(form)
    if not transient:
        raise GreenOperatorUndefined(
            f"duality needs a transient form; killing-free component "
            f"{cert.dead_component}")
    u, f_u = solution.u, solution.f_u
    if test_measures is None:
        res = np.abs(u - form.solve(form.m * f_u + mu.masses))
        return DualityReport(res, tol)
    out = []
    for nu in test_measures:
        pot = form.solve(nu.masses)
        lhs = float(np.sum(u * nu.masses))
        rhs = float(np.sum(f_u * pot * form.m) + np.sum(pot * mu.masses))
        out.append(abs(lhs - rhs))
    return DualityReport(np.asarray(out), tol)


def weak_form_check(form: DirichletForm, solution: EllipticSolution,
                    mu: SignedMeasure) -> float:
    """Defect of the weak formulation over the full test basis."""
    return weak_form_residual(form, solution.u, solution.f_u, mu)


@dataclass(frozen=True)
class L1Report:
    lhs: float
    rhs: float
    tol: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.tol


def l1_bound_check(solution: EllipticSolution, driver: Driver,
                   mu: SignedMeasure, m, tol: float = 1e-9) -> L1Report:
    """Integrability bound: sum m|f_u| <= sum m|f(.,0)| + |mu|(E)."""
    m = np.asarray(m, dtype=float)
    lhs = float(np.sum(m * np.abs(solution.f_u)))
    rhs = float(np.sum(m * np.abs(driver.f0()))) + mu.total_variation
    return L1Report(lhs, rhs, tol)


def clamp(u, k):
    """Symmetric clamp of u to [-k, k]."""
    return np.clip(u, -k, k)


def level_slice(u, k):
    """The unit slice of u above level k: clamp(u - clamp(u, k), 1)."""
    return clamp(u - clamp(u, k), 1.0)


@dataclass(frozen=True)
class TruncationReport:
    """Energies of clamped solutions and of their unit slices, with bounds."""

    ks: np.ndarray
    trunc_energy: np.ndarray
    trunc_bound: np.ndarray
    vanish_energy: np.ndarray
    vanish_bound: np.ndarray
    tol: float

    @property
    def trunc_slack(self) -> np.ndarray:
        return self.trunc_bound - self.trunc_energy

    @property
    def vanish_slack(self) -> np.ndarray:
        return self.vanish_bound - self.vanish_energy

    @property
    def trunc_passed(self) -> bool:
        return bool(np.all(self.trunc_slack >= -self.tol))

    @property
    def vanish_passed(self) -> bool:
        return bool(np.all(self.vanish_slack >= -self.tol))


def truncation_report(form: DirichletForm, solution: EllipticSolution,
                      mu: SignedMeasure, ks, tol: float = 1e-9) -> TruncationReport:
    ks = np.asarray(ks, dtype=float)
    u, f_u = solution.u, solution.f_u
    m = form.m
    l1 = float(np.sum(m * np.abs(f_u)))
    tv = mu.total_variation
    te = np.array([form.energy(clamp(u, k)) for k in ks])
    tb = ks * (l1 + tv)
    ve = np.array([form.energy(level_slice(u, k)) for k in ks])
    vb = np.array([
        float(np.sum((m * np.abs(f_u) + np.abs(mu.masses))[np.abs(u) >= k]))
        for k in ks])
    return TruncationReport(ks, te, tb, ve, vb, tol)


def truncation_energy_check(form, solution, mu, ks, tol: float = 1e-9):
    """Energy of the clamped solution against k (||f_u||_L1 + |mu|(E))."""
    return truncation_report(form, solution, mu, ks, tol)


def vanishing_energy_check(form, solution, mu, ks, tol: float = 1e-9):
    """Energy of the unit slice above k against the tail mass beyond k."""
    return truncation_report(form, solution, mu, ks, tol)


@dataclass(frozen=True)
class TvReport:
    hypothesis_met: bool
    reason: str
    tv1: float
    tv2: float
    tol: float

    @property
    def passed(self) -> bool:
        # no judgment when the hypotheses fail
        return (not self.hypothesis_met) or self.tv1 <= self.tv2 + self.tol


def tv_comparison_check(form: DirichletForm, mu1: SignedMeasure,
                        mu2: SignedMeasure, tol: float = 1e-9) -> TvReport:
    """Total-mass comparison from ordered potentials.

    For nonnegative mu1 and nonnegative bounded mu2 with U mu1 <= U mu2
    pointwise, |mu1|(E) <= |mu2|(E).  Nonnegativity of mu1 is part of the
    hypothesis: a signed mu1 below mu2 can have larger total variation even
    with ordered potentials.
    """
    transient, cert = is_transient(form)
    if not transient:
        raise GreenOperatorUndefined(
            f"TV comparison needs a transient form; killing-free component "
            f"{cert.dead_component}")
    if np.any(mu2.masses < 0):
        raise FormError("TV comparison requires mu2 >= 0")
    if np.any(mu1.masses < 0):
        return TvReport(False, "mu1 has negative mass",
                        mu1.total_variation, mu2.total_variation, tol)
    p1 = form.solve(mu1.masses)
    p2 = form.solve(mu2.masses)
    met = bool(np.all(p1 <= p2 + 1e-12))
    reason = "ok" if met else "potentials not ordered"
    return TvReport(met, reason, mu1.total_variation, mu2.total_variation, tol)


@dataclass(frozen=True)
class GreenBoundReport:
    lhs: float
    rhs: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.tol


def green_bound_check(form: DirichletForm, solution: EllipticSolution,
                      mu: SignedMeasure, tol: float = 1e-9) -> GreenBoundReport:
    """L1 bound through the bounded potential of the reference measure.

    With U1 = G(M 1):  sum m|u| <= (|f_u|, U1)_m + <|mu|, U1>.
    """
    U1 = form.solve(form.m * np.ones(form.n))
    lhs = float(np.sum(form.m * np.abs(solution.u)))
    rhs = float(np.sum(np.abs(solution.f_u) * U1 * form.m)
                + np.sum(np.abs(mu.masses) * U1))
    return GreenBoundReport(lhs, rhs, tol)
