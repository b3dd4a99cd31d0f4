"""Nonlinearities f(x, y), their regularization and data truncation.

A Driver bundles the evaluation rule with the metadata the solvers need:
whether f is nonincreasing in y, an optional global Lipschitz constant, and
family parameters.  Built-in families:

  affine     f(x, y) = a(x) + b(x) * y                 (monotone iff b <= 0)
  power      f(x, y) = g(x) - c(x) * sign(y)|y|^p      (monotone iff c >= 0)
  tabulated  per-node piecewise-linear table in y
  callable   arbitrary vectorized rule with caller-supplied metadata

All evaluations are vectorized over nodes: ``value(u)`` returns the vector
f(x, u_x) and ``value_at(idx, y)`` evaluates a subset of nodes.
"""

from __future__ import annotations

import numpy as np

from .forms import FormError, SignedMeasure


class DriverError(ValueError):
    """Invalid driver construction or regularization parameters."""


def _pernode(v, n, name):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.shape != (n,):
        raise DriverError(f"{name} must be scalar or length {n}, got shape {a.shape}")
    return a


def _signed_power(y, p):
    """sign(y) |y|^p with fast paths for the small integer exponents."""
    if p == 1.0:
        return y
    if p == 2.0:
        return y * np.abs(y)
    if p == 3.0:
        return y * y * y
    return np.sign(y) * np.abs(y) ** p


class Driver:
    """Evaluation rule f(x, y) with monotonicity and Lipschitz metadata."""

    def __init__(self, n, family, params, *, monotone, lipschitz=None,
                 constant_slope=None, meta=None):
        self.n = int(n)
        self.family = family
        self.params = params
        self.monotone = bool(monotone)
        self.lipschitz = lipschitz
        # slope vector d/dy f when it does not depend on y (affine family);
        # lets the backward integrator reuse one factorization per step size.
        self.constant_slope = constant_slope
        self.meta = dict(meta or {})

    # -- construction -----------------------------------------------------

    @staticmethod
    def affine(n, a, b) -> "Driver":
        a = _pernode(a, n, "a")
        b = _pernode(b, n, "b")
        return Driver(n, "affine", {"a": a, "b": b},
                      monotone=bool(np.all(b <= 0)),
                      lipschitz=float(np.max(np.abs(b))),
                      constant_slope=b)

    @staticmethod
    def zero(n) -> "Driver":
        return Driver.affine(n, 0.0, 0.0)

    @staticmethod
    def power(n, c, p, g=0.0) -> "Driver":
        """f(x, y) = g(x) - c(x) * sign(y)|y|^p with c >= 0, p > 0."""
        c = _pernode(c, n, "c")
        g = _pernode(g, n, "g")
        p = float(p)
        if p <= 0:
            raise DriverError(f"power exponent must be positive, got {p}")
        if np.any(c < 0):
            raise DriverError("power coefficient c must be nonnegative")
        return Driver(n, "power", {"c": c, "p": p, "g": g},
                      monotone=True, lipschitz=None)

    @staticmethod
    def tabulated(ygrid, values) -> "Driver":
        """Per-node piecewise-linear table; extrapolates with the end slopes."""
        y = np.asarray(ygrid, dtype=float)
        V = np.asarray(values, dtype=float)
        if y.ndim != 1 or y.size < 2 or np.any(np.diff(y) <= 0):
            raise DriverError("tabulated ygrid must be strictly increasing")
        if V.ndim != 2 or V.shape[1] != y.size:
            raise DriverError("tabulated values must be (n_nodes, len(ygrid))")
        slopes = np.diff(V, axis=1) / np.diff(y)
        return Driver(V.shape[0], "tabulated", {"y": y, "V": V, "slopes": slopes},
                      monotone=bool(np.all(slopes <= 1e-12)),
                      lipschitz=float(np.max(np.abs(slopes))))

    @staticmethod
    def from_callable(n, fn, *, monotone, lipschitz=None) -> "Driver":
        """fn(idx, y) must accept integer node indices and y values, vectorized."""
        return Driver(n, "callable", {"fn": fn},
                      monotone=monotone, lipschitz=lipschitz)

    # -- evaluation --------------------------------------------------------

    def value_at(self, idx, y) -> np.ndarray:
        """f at nodes idx (int array) and values y (same-shape array)."""
        idx = np.asarray(idx, dtype=int)
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.family == "affine":
            return p["a"][idx] + p["b"][idx] * y
        if self.family == "power":
            return p["g"][idx] - p["c"][idx] * _signed_power(y, p["p"])
        if self.family == "tabulated":
            return self._table_eval(idx, y)
        if self.family == "callable":
            return np.asarray(p["fn"](idx, y), dtype=float)
        if self.family == "yosida":
            return self._yosida_eval(idx, y)
        if self.family == "truncated":
            base: Driver = p["base"]
            return base.value_at(idx, y) - p["shift"][idx]
        raise DriverError(f"unknown driver family {self.family!r}")

    def value(self, u) -> np.ndarray:
        """Vector f(x, u_x) over all nodes."""
        u = np.asarray(u, dtype=float)
        return self.value_at(np.arange(self.n), u)

    def __call__(self, x: int, y: float) -> float:
        return self.scalar(int(x), float(y))

    def scalar(self, x: int, y: float) -> float:
        """Scalar f(x, y) without array overhead (hot path of node solvers)."""
        p = self.params
        if self.family == "affine":
            return float(p["a"][x] + p["b"][x] * y)
        if self.family == "power":
            pw = p["p"]
            if pw == 1.0:
                s = y
            elif pw == 2.0:
                s = y * abs(y)
            elif pw == 3.0:
                s = y * y * y
            else:
                s = (1.0 if y >= 0 else -1.0) * abs(y) ** pw
            return float(p["g"][x] - p["c"][x] * s)
        if self.family == "truncated":
            return p["base"].scalar(x, y) - float(p["shift"][x])
        return float(self.value_at(np.array([x]), np.array([float(y)]))[0])

    def f0(self) -> np.ndarray:
        """The vector f(., 0)."""
        return self.value(np.zeros(self.n))

    def deriv(self, u, eps: float = 1e-6) -> np.ndarray:
        """d/dy f(x, y) at y = u_x; central difference for table-like families."""
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.family == "affine":
            return p["b"].copy()
        if self.family == "power":
            c, pw = p["c"], p["p"]
            base = np.abs(u)
            if pw < 1.0:
                base = np.maximum(base, 1e-12)
            return -c * pw * base ** (pw - 1.0)
        if self.family == "truncated":
            return p["base"].deriv(u, eps)
        idx = np.arange(self.n)
        h = eps * np.maximum(1.0, np.abs(u))
        return (self.value_at(idx, u + h) - self.value_at(idx, u - h)) / (2 * h)

    def slope_bound(self, radius: float):
        """Lipschitz bound of y -> f(x, y) on [-radius, radius], or None."""
        if self.lipschitz is not None:
            return self.lipschitz
        if self.family == "power":
            p = self.params["p"]
            if p >= 1.0:
                return float(np.max(self.params["c"]) * p * max(radius, 0.0) ** (p - 1.0))
            return None
        if self.family == "truncated":
            return self.params["base"].slope_bound(radius)
        return None

    # -- family internals ---------------------------------------------------

    def _table_eval(self, idx, y):
        p = self.params
        yg, V, slopes = p["y"], p["V"], p["slopes"]
        j = np.clip(np.searchsorted(yg, y) - 1, 0, yg.size - 2)
        return V[idx, j] + slopes[idx, j] * (y - yg[j])

    def _yosida_eval(self, idx, y):
        p = self.params
        z, F, lip = p["z"], p["F"], p["n"]
        # min over grid points of  n|y - z| + f(x, z)
        pen = lip * np.abs(np.asarray(y, float)[:, None] - z[None, :])
        return np.min(pen + F[idx, :], axis=1)


def yosida_regularize(driver: Driver, n: int, ygrid: dict) -> Driver:
    """Lipschitz lower regularization by inf-convolution over a y-grid.

    Returns the driver  f_n(x, y) = min_z { n|y - z| + f(x, z) }  with z
    ranging over a uniform grid on [-R, R] given by ygrid = {"R": half-width,
    "delta": spacing}.  The result is exactly n-Lipschitz in y; the familiar
    lower-bound and monotone-in-n properties hold on the z-grid and hold
    everywhere up to the quadrature defect n*delta reported in ``meta``.
    """
    if n < 1:
        raise DriverError(f"regularization level must be >= 1, got {n}")
    R = float(ygrid["R"])
    delta = float(ygrid["delta"])
    if R <= 0:
        raise DriverError(f"grid half-width R must be positive, got {R}")
    if delta <= 0:
        raise DriverError(f"grid spacing delta must be positive, got {delta}")
    half = max(1, int(np.ceil(R / delta)))
    z = np.linspace(-R, R, 2 * half + 1)
    delta_eff = R / half
    idx = np.arange(driver.n)
    F = np.empty((driver.n, z.size))
    for j, zj in enumerate(z):
        F[:, j] = driver.value_at(idx, np.full(driver.n, zj))
    return Driver(driver.n, "yosida",
                  {"base": driver, "z": z, "F": F, "n": float(n)},
                  monotone=driver.monotone,
                  lipschitz=float(n),
                  meta={"quadrature_defect": n * delta_eff,
                        "R": R, "delta": delta_eff, "level": int(n)})


def truncate_data(driver: Driver, mu: SignedMeasure, n: int):
    """Bounded-data approximation at level n.

    Returns (driver', mu') with driver'(x, y) = f(x, y) - f(x, 0) + T_n(f(x, 0))
    and mu' the node-wise clamp of the masses to [-n, n].  Both equal the
    inputs once n dominates max|f(., 0)| and max|mu({x})|.
    """
    if n < 1:
        raise DriverError(f"truncation level must be >= 1, got {n}")
    f0 = driver.f0()
    shift = f0 - np.clip(f0, -float(n), float(n))
    if np.all(shift == 0.0):
        trunc_driver = driver
    else:
        trunc_driver = Driver(
            driver.n, "truncated", {"base": driver, "shift": shift},
            monotone=driver.monotone, lipschitz=driver.lipschitz,
            constant_slope=driver.constant_slope,
            meta={"level": int(n)})
    masses = np.clip(mu.masses, -float(n), float(n))
    trunc_mu = mu if np.all(masses == mu.masses) else SignedMeasure(masses)
    return trunc_driver, trunc_mu


def make_driver(desc: dict, n: int) -> Driver:
    """Build a driver from a JSON-style descriptor."""
    if not isinstance(desc, dict) or "family" not in desc:
        raise DriverError(f"driver descriptor needs a 'family' key, got {desc!r}")
    fam = desc["family"]
    known = {"affine", "power", "zero", "tabulated"}
    if fam not in known:
        raise DriverError(f"unknown driver family {fam!r}; expected one of {sorted(known)}")
    extra = set(desc) - {"family", "a", "b", "c", "p", "g", "ygrid", "values"}
    if extra:
        raise DriverError(f"unknown driver keys {sorted(extra)}")
    if fam == "zero":
        return Driver.zero(n)
    if fam == "affine":
        return Driver.affine(n, desc.get("a", 0.0), desc.get("b", 0.0))
    if fam == "power":
        return Driver.power(n, desc.get("c", 1.0), desc.get("p", 2.0),
                            desc.get("g", 0.0))
    return Driver.tabulated(desc["ygrid"], desc["values"])
