"""Continuous-time Markov chain attached to a finite Dirichlet form.

The chain jumps from x to y at rate w_xy / m_x and is killed (sent to the
cemetery) at rate k_x / m_x, so its generator is G = -L/m on functions.
States with zero total rate hold forever and are reported horizon-capped.

Two sampling layers:

  * sample_path / mc_expectation: one path at a time, one counter-based
    substream per path index, merged by pairwise summation.  Used for
    path-functional experiments and as the slow reference for the batch
    engine.
  * _simulate_batch: lockstep vectorized sampling of many paths from one
    seeded stream.  Used by the occupation-measure solver, the Revuz check
    and the martingale residual check.  Deterministic for fixed (seed, N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .forms import DirichletForm, FormError, SignedMeasure


class SimulationError(RuntimeError):
    """Raised when a sampled functional cannot be trusted (non-finite, capped)."""


@dataclass(frozen=True)
class ChainPath:
    """One sampled trajectory: visited states with their holding times.

    ``absorbed`` distinguishes paths killed at their lifetime from paths cut
    at the horizon cap; the lifetime equals the sum of holding times exactly
    when absorbed.
    """

    start: int
    states: np.ndarray
    holds: np.ndarray
    absorbed: bool

    @property
    def zeta(self) -> float | None:
        if not self.absorbed:
            return None
        return float(np.sum(self.holds))

    @property
    def elapsed(self) -> float:
        return float(np.sum(self.holds))

    def __len__(self) -> int:
        return self.states.size


class Chain:
    """Jump rates, killing rates and alias tables for a DirichletForm."""

    def __init__(self, form: DirichletForm):
        self.form = form
        m = form.m
        self.lam = (form.degree + form.k) / m
        self.kappa = form.k / m
        self._build_alias()
        self._lam0 = None

    @property
    def n(self) -> int:
        return self.form.n

    def _build_alias(self):
        """Walker alias tables over outcomes (neighbors..., cemetery = -1)."""
        W = self.form.W
        n = self.n
        counts = np.zeros(n, dtype=np.int64)
        outcome_rows, thresh_rows, alias_rows = [], [], []
        for x in range(n):
            nbrs = W.indices[W.indptr[x]:W.indptr[x + 1]]
            wts = W.data[W.indptr[x]:W.indptr[x + 1]].astype(float)
            outs = list(nbrs)
            probs = list(wts)
            if self.form.k[x] > 0:
                outs.append(-1)
                probs.append(float(self.form.k[x]))
            total = float(np.sum(probs))
            if total <= 0.0:
                outcome_rows.append(np.empty(0, dtype=np.int64))
                thresh_rows.append(np.empty(0))
                alias_rows.append(np.empty(0, dtype=np.int64))
                continue
            p = np.asarray(probs) / total
            K = p.size
            q = p * K
            alias = np.arange(K)
            small = [i for i in range(K) if q[i] < 1.0]
            large = [i for i in range(K) if q[i] >= 1.0]
            while small and large:
                s, l = small.pop(), large.pop()
                alias[s] = l
                q[l] = q[l] - (1.0 - q[s])
                (small if q[l] < 1.0 else large).append(l)
            counts[x] = K
            outcome_rows.append(np.asarray(outs, dtype=np.int64))
            thresh_rows.append(np.minimum(q, 1.0))
            alias_rows.append(alias.astype(np.int64))
        width = max(1, int(counts.max()) if n else 1)
        self.alias_count = counts
        self.alias_out = np.full((n, width), -2, dtype=np.int64)
        self.alias_thresh = np.zeros((n, width))
        self.alias_alias = np.zeros((n, width), dtype=np.int64)
        for x in range(n):
            K = counts[x]
            if K:
                self.alias_out[x, :K] = outcome_rows[x]
                self.alias_thresh[x, :K] = thresh_rows[x]
                self.alias_alias[x, :K] = alias_rows[x]

    def draw_next(self, states, r1, r2):
        """Vectorized next-outcome draw; -1 means the cemetery."""
        counts = self.alias_count[states]
        j = np.minimum((r1 * counts).astype(np.int64), np.maximum(counts - 1, 0))
        accept = r2 < self.alias_thresh[states, j]
        slot = np.where(accept, j, self.alias_alias[states, j])
        return self.alias_out[states, slot]

    def draw_next_scalar(self, x: int, r1: float, r2: float) -> int:
        K = int(self.alias_count[x])
        j = min(int(r1 * K), K - 1)
        if r2 >= self.alias_thresh[x, j]:
            j = int(self.alias_alias[x, j])
        return int(self.alias_out[x, j])

    def generator_gap(self) -> float:
        """Smallest eigenvalue of the symmetrized generator M^-1/2 L M^-1/2."""
        if self._lam0 is None:
            s = 1.0 / np.sqrt(self.form.m)
            A = self.form.dense_L() * s[:, None] * s[None, :]
            self._lam0 = float(sla.eigvalsh(A)[0])
        return self._lam0


def build_chain(form: DirichletForm) -> Chain:
    """Extract jump and killing rates; rates w_xy/m_x and k_x/m_x."""
    return Chain(form)


def default_horizon_cap(chain: Chain) -> float:
    """Horizon cap that keeps the capped-path fraction below 1e-4.

    On transient forms the lifetime tail decays at the spectral gap, so
    40 / gap caps essentially nothing; otherwise fall back to 50 over the
    smallest positive total rate.
    """
    gap = chain.generator_gap()
    if gap > 1e-12:
        return 40.0 / gap
    positive = chain.lam[chain.lam > 0]
    if positive.size == 0:
        return 1.0
    return 50.0 / float(positive.min())


def _path_rng(seed: int, index: int | None = None):
    if index is None:
        ss = np.random.SeedSequence(entropy=seed)
    else:
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def sample_path(chain: Chain, x0: int, seed: int, horizon_cap: float,
                rng=None) -> ChainPath:
    """Sample one trajectory from x0 until killing or the horizon cap.

    Identical (x0, seed, horizon_cap) always produce the identical path.
    """
    if not (0 <= x0 < chain.n):
        raise FormError(f"start node {x0} out of range")
    if horizon_cap <= 0:
        raise FormError(f"horizon cap must be positive, got {horizon_cap}")
    if rng is None:
        rng = _path_rng(seed)
    expovariate = rng.standard_exponential
    uniform = rng.random
    lam_all = chain.lam
    states, holds = [], []
    x = int(x0)
    t = 0.0
    while True:
        lam = lam_all[x]
        if lam <= 0.0:
            states.append(x)
            holds.append(horizon_cap - t)
            return ChainPath(x0, np.asarray(states), np.asarray(holds), False)
        hold = expovariate() / lam
        if t + hold >= horizon_cap:
            states.append(x)
            holds.append(horizon_cap - t)
            return ChainPath(x0, np.asarray(states), np.asarray(holds), False)
        states.append(x)
        holds.append(hold)
        t += hold
        out = chain.draw_next_scalar(x, uniform(), uniform())
        if out == -1:
            return ChainPath(x0, np.asarray(states), np.asarray(holds), True)
        x = out


@dataclass(frozen=True)
class AdditiveFunctional:
    """Pathwise integral of a measure density along a trajectory.

    ``lower_bound_only`` is set when the path was horizon-capped, in which
    case the value is only a lower-bound sample of the full integral.
    """

    value: float
    abs_value: float
    lower_bound_only: bool


def additive_functional(path: ChainPath, mu: SignedMeasure,
                        form: DirichletForm) -> AdditiveFunctional:
    """A^mu along the path: sum of holding(x) * density(x); exact quadrature."""
    if mu.n != form.n:
        raise FormError("measure and form dimensions differ")
    rho = mu.density(form.space)
    value = float(np.sum(path.holds * rho[path.states]))
    abs_value = float(np.sum(path.holds * np.abs(rho)[path.states]))
    return AdditiveFunctional(value, abs_value, not path.absorbed)


def mc_expectation(chain: Chain, x0: int, functional, N: int, seed: int,
                   horizon_cap: float | None = None):
    """Monte Carlo mean and standard error of a path functional.

    One substream per path index; the reduction is numpy pairwise summation,
    so the estimate is independent of any evaluation order.  A non-finite
    functional value aborts with the offending path attached.
    """
    if N < 2:
        raise FormError(f"MC expectation needs N >= 2, got {N}")
    if horizon_cap is None:
        horizon_cap = default_horizon_cap(chain)
    values = np.empty(N)
    for i in range(N):
        path = sample_path(chain, x0, seed, horizon_cap,
                           rng=_path_rng(seed, i))
        v = float(functional(path))
        if not np.isfinite(v):
            raise SimulationError(
                f"functional returned {v} on path {i}: states="
                f"{path.states.tolist()} holds={path.holds.tolist()} "
                f"absorbed={path.absorbed}")
        values[i] = v
    mean = float(np.sum(values) / N)
    se = float(np.std(values, ddof=1) / np.sqrt(N))
    return mean, se


@dataclass
class BatchResult:
    """Outputs of the lockstep path engine; fields are None unless requested."""

    n_paths: int
    capped: np.ndarray
    lifetimes: np.ndarray
    occupation: np.ndarray | None = None
    integral: np.ndarray | None = None
    checkpoint_values: np.ndarray | None = None

    @property
    def capped_fraction(self) -> float:
        return float(np.mean(self.capped))


def _simulate_batch(chain: Chain, starts, rng, horizon: float, *,
                    want_occupation=False, integrand=None, mart=None,
                    checkpoints=None) -> BatchResult:
    """Lockstep simulation of len(starts) paths up to `horizon`.

    integrand: per-state rate vector accumulated as sum hold * integrand[x].
    mart: (u, c) pair for martingale sampling at `checkpoints`: the recorded
    value at time t is u(X_t) - u(X_0) + int_0^t c(X_s) ds, frozen at the
    killing time with the final jump u -> 0 included.
    """
    starts = np.asarray(starts, dtype=np.int64)
    N = starts.size
    n = chain.n

    state = starts.copy()
    t = np.zeros(N)
    alive = np.ones(N, dtype=bool)
    capped = np.zeros(N, dtype=bool)
    lifetimes = np.full(N, np.nan)

    occ = np.zeros((N, n)) if want_occupation else None
    integral = np.zeros(N) if integrand is not None else None

    if mart is not None:
        u_vec, c_vec = mart
        cps = np.asarray(checkpoints, dtype=float)
        mvals = np.zeros((N, cps.size))
        recorded = np.zeros((N, cps.size), dtype=bool)
        mcur = np.zeros(N)
        horizon = max(horizon, float(cps.max()) * (1.0 + 1e-12))
    else:
        cps = None

    while True:
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        s = state[idx]
        lam = chain.lam[s]
        raw = rng.standard_exponential(idx.size)
        hold = np.where(lam > 0.0, raw / np.where(lam > 0.0, lam, 1.0), np.inf)
        t_entry = t[idx]
        t_exit = t_entry + hold
        hits_cap = t_exit >= horizon
        hold_eff = np.where(hits_cap, horizon - t_entry, hold)

        if occ is not None:
            np.add.at(occ, (idx, s), hold_eff)
        if integral is not None:
            integral[idx] += hold_eff * integrand[s]

        if cps is not None:
            # record M at checkpoints falling inside the holding interval;
            # a checkpoint equal to the jump time sees the post-jump value
            c_s = c_vec[s]
            for ci, tau in enumerate(cps):
                inwin = (t_entry <= tau) & (tau < t_entry + hold_eff) \
                    & ~recorded[idx, ci]
                if np.any(inwin):
                    rows = idx[inwin]
                    mvals[rows, ci] = mcur[rows] + c_s[inwin] * (tau - t_entry[inwin])
                    recorded[rows, ci] = True

        if np.any(hits_cap):
            rows = idx[hits_cap]
            capped[rows] = True
            alive[rows] = False

        jump_mask = ~hits_cap
        if np.any(jump_mask):
            jidx = idx[jump_mask]
            js = s[jump_mask]
            r1 = rng.random(jidx.size)
            r2 = rng.random(jidx.size)
            outcome = chain.draw_next(js, r1, r2)
            t[jidx] = t_exit[jump_mask]
            if cps is not None:
                mcur[jidx] += c_vec[js] * hold[jump_mask]

            killed = outcome == -1
            moved = ~killed
            if np.any(killed):
                krows = jidx[killed]
                lifetimes[krows] = t[krows]
                alive[krows] = False
                if cps is not None:
                    # the value process drops to 0 at the lifetime and M freezes
                    mcur[krows] -= u_vec[js[killed]]
                    for ci, tau in enumerate(cps):
                        frozen = ~recorded[krows, ci]
                        if np.any(frozen):
                            rows = krows[frozen]
                            mvals[rows, ci] = mcur[rows]
                            recorded[rows, ci] = True
            if np.any(moved):
                if cps is not None:
                    midx = jidx[moved]
                    mcur[midx] += u_vec[outcome[moved]] - u_vec[js[moved]]
                state[jidx[moved]] = outcome[moved]

    return BatchResult(N, capped, lifetimes, occupation=occ,
                       integral=integral,
                       checkpoint_values=mvals if cps is not None else None)


@dataclass(frozen=True)
class RevuzReport:
    """Short-time occupation estimate against the pairing <f, mu>."""

    estimate: float
    se: float
    target: float
    bias_bound: float
    t: float
    n_paths: int

    @property
    def discrepancy(self) -> float:
        return abs(self.estimate - self.target)

    def passed(self, z: float = 3.0) -> bool:
        return self.discrepancy <= z * self.se + self.bias_bound


def revuz_check(chain: Chain, f, mu: SignedMeasure, t: float, N: int,
                seed: int) -> RevuzReport:
    """Estimate (1/t) E_m int_0^t f(X_s) dA^mu_s and compare with <f, mu>.

    Paths start from the reference measure normalized to a probability law
    and the estimate is rescaled by its total mass.  The bias bound is
    t * max(lambda) * sup|f| * |mu|(E).
    """
    if t <= 0:
        raise FormError(f"time window must be positive, got {t}")
    if N < 2:
        raise FormError(f"revuz check needs N >= 2, got {N}")
    f = np.asarray(f, dtype=float)
    form = chain.form
    rho = mu.density(form.space)
    mass = float(np.sum(form.m))
    start_rng = _path_rng(seed, 0)
    starts = start_rng.choice(chain.n, size=N, p=form.m / mass)
    res = _simulate_batch(chain, starts, _path_rng(seed, 1), t,
                          integrand=f * rho)
    samples = mass * res.integral / t
    estimate = float(np.sum(samples) / N)
    se = float(np.std(samples, ddof=1) / np.sqrt(N))
    target = float(np.sum(f * mu.masses))
    max_lam = float(np.max(chain.lam)) if chain.n else 0.0
    bias = t * max_lam * float(np.max(np.abs(f))) * mu.total_variation
    return RevuzReport(estimate, se, target, bias, t, N)
