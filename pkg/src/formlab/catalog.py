"""Discretized operator catalog and JSON problem descriptors.

Families (cell-centered finite-volume grids throughout):

  lap1d      divergence-form operator -(a u')' on an interval with Dirichlet
             boundary: w_{i,i+1} = a(x_{i+1/2})/h, killing a(face)/h at the
             two boundary cells, m_i = h.
  lap2d      the same construction on the unit square; w across a face is
             a(face midpoint), boundary faces contribute a(face) killing,
             m_i = h^2.
  divform    lap1d with a variable, uniformly positive coefficient.
  frac       jump form of the symbol |xi|^alpha on an interval:
             w_ij = c_alpha h^2 / |x_i - x_j|^{1+alpha}, exterior-mass killing
             k_i = c_alpha h [(1-x_i)^{-alpha} + (1+x_i)^{-alpha}] / alpha.
  diag       pure multiplication form, W = 0, k_i = c(x_i) m_i; the builder
             rejects nodes where c vanishes (the exact solution 1/c blows up).
  perturbed  a killing-free chain made transient by adding g > 0, i.e.
             k = g * m.

Dirac measures are placed on the grid node nearest the requested coordinate,
ties broken toward the lower index.
"""

from __future__ import annotations

import json
import math

import numpy as np
import scipy.sparse as sp

from .drivers import Driver, DriverError, make_driver
from .forms import DirichletForm, Problem, SignedMeasure, StateSpace, build_form, perturb


class DescriptorError(ValueError):
    """Malformed catalog or problem descriptor."""


DEFAULT_DRIVER = {"family": "power", "c": 1.0, "p": 2.0, "g": 1.0}

#: Stable catalog ids.  diag-5.7 is the degenerate multiplication form with
#: c(x) = |x|, whose exact solution for mu = m is u(x) = 1/|x|.
CATALOG = {
    "lap1d-dirac": {
        "family": "lap1d", "n": 64,
        "measure": [{"x": 0.5, "mass": 1.0}],
        "driver": DEFAULT_DRIVER,
    },
    "lap2d": {
        "family": "lap2d", "n": 16,
        "measure": [{"x": [0.5, 0.5], "mass": 1.0}],
        "driver": DEFAULT_DRIVER,
    },
    "divform-b": {
        "family": "divform", "n": 64,
        "coeff": {"kind": "affine", "c0": 1.0, "c1": 2.0},
        "measure": [{"x": 0.3, "mass": 1.0}],
        "driver": DEFAULT_DRIVER,
    },
    "frac-a10": {
        "family": "frac", "n": 128, "alpha": 1.0,
        "measure": [{"x": 0.0, "mass": 0.5}],
        "driver": DEFAULT_DRIVER,
    },
    "diag-5.7": {
        "family": "diag", "n": 64,
        "measure": "reference",
        "driver": {"family": "zero"},
    },
    "perturbed-g": {
        "family": "perturbed", "n": 16, "g": 1.0,
        "measure": [{"x": 0.25, "mass": 1.0}],
        "driver": DEFAULT_DRIVER,
    },
}


def catalog_ids():
    return sorted(CATALOG)


def _cell_grid(a: float, b: float, n: int):
    h = (b - a) / n
    x = a + (np.arange(n) + 0.5) * h
    return x, h


def _coefficient(desc):
    """Coefficient function a(x) from a descriptor; defaults to 1."""
    if desc is None:
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    kind = desc.get("kind")
    if kind == "constant":
        val = float(desc.get("value", 1.0))
        return lambda x, v=val: np.full_like(np.asarray(x, dtype=float), v)
    if kind == "affine":
        c0 = float(desc.get("c0", 1.0))
        c1 = float(desc.get("c1", 0.0))
        return lambda x, c0=c0, c1=c1: c0 + c1 * np.asarray(x, dtype=float)
    raise DescriptorError(f"unknown coefficient kind {kind!r}")


def frac_normalization(alpha: float) -> float:
    """Normalization constant of the |xi|^alpha jump kernel in one dimension."""
    return (alpha * 2.0 ** (alpha - 1.0) * math.gamma((1.0 + alpha) / 2.0)
            / (math.sqrt(math.pi) * math.gamma(1.0 - alpha / 2.0)))


def build_grid_1d(n, coeff=None, interval=(0.0, 1.0), dirichlet=True) -> DirichletForm:
    """Cell-centered 1-d divergence-form grid; Dirichlet killing optional."""
    if n < 2:
        raise DescriptorError(f"grid needs n >= 2, got {n}")
    a_fn = _coefficient(coeff)
    lo, hi = float(interval[0]), float(interval[1])
    x, h = _cell_grid(lo, hi, n)
    faces = x[:-1] + h / 2.0
    a_face = np.asarray(a_fn(faces), dtype=float)
    if np.any(a_face <= 0):
        bad = int(np.argmin(a_face))
        raise DescriptorError(
            f"nonpositive diffusion coefficient a({faces[bad]}) = {a_face[bad]}")
    w = a_face / h
    W = sp.diags([w, w], offsets=[1, -1], shape=(n, n), format="csr")
    k = np.zeros(n)
    if dirichlet:
        a_lo = float(a_fn(np.array([lo]))[0])
        a_hi = float(a_fn(np.array([hi]))[0])
        if a_lo <= 0 or a_hi <= 0:
            raise DescriptorError("nonpositive diffusion coefficient at the boundary")
        k[0] = a_lo / h
        k[-1] = a_hi / h
    space = StateSpace(np.full(n, h), labels=x)
    return build_form(space, W, k)


def build_grid_2d(n_side, coeff=None) -> DirichletForm:
    """Cell-centered grid on the unit square with Dirichlet boundary.

    The coefficient is evaluated at the first coordinate of each face
    midpoint (the descriptor coefficients are functions of one variable).
    """
    if n_side < 2:
        raise DescriptorError(f"grid needs n >= 2 per side, got {n_side}")
    a_fn = _coefficient(coeff)

    def a_at(x_coord):
        val = float(np.asarray(a_fn(np.array([x_coord])))[0])
        if val <= 0:
            raise DescriptorError(
                f"nonpositive diffusion coefficient a({x_coord}) = {val}")
        return val

    xs, h = _cell_grid(0.0, 1.0, n_side)
    n = n_side * n_side
    ii, jj = np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="ij")
    coords = np.column_stack([xs[ii.ravel()], xs[jj.ravel()]])

    def node(i, j):
        return i * n_side + j

    rows, cols, vals = [], [], []
    k = np.zeros(n)
    for i in range(n_side):
        for j in range(n_side):
            p = node(i, j)
            if i + 1 < n_side:
                af = a_at(xs[i] + h / 2.0)
                rows += [p, node(i + 1, j)]
                cols += [node(i + 1, j), p]
                vals += [af, af]
            if j + 1 < n_side:
                af = a_at(xs[i])
                rows += [p, node(i, j + 1)]
                cols += [node(i, j + 1), p]
                vals += [af, af]
            # one killing contribution per boundary face of the cell
            if i == 0:
                k[p] += a_at(0.0)
            if i == n_side - 1:
                k[p] += a_at(1.0)
            if j == 0:
                k[p] += a_at(xs[i])
            if j == n_side - 1:
                k[p] += a_at(xs[i])
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    W.sum_duplicates()
    space = StateSpace(np.full(n, h * h), labels=coords)
    return build_form(space, W, k)


def build_frac(n, alpha, interval=(-1.0, 1.0)) -> DirichletForm:
    """Jump form of the fractional symbol on an interval, zero outside."""
    if not (0.0 < alpha < 2.0):
        raise DescriptorError(f"alpha must lie in (0, 2), got {alpha}")
    if n < 2:
        raise DescriptorError(f"grid needs n >= 2, got {n}")
    lo, hi = float(interval[0]), float(interval[1])
    x, h = _cell_grid(lo, hi, n)
    c = frac_normalization(alpha)
    diff = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(diff, 1.0)
    W = c * h * h / diff ** (1.0 + alpha)
    np.fill_diagonal(W, 0.0)
    k = c * h * ((hi - x) ** (-alpha) + (x - lo) ** (-alpha)) / alpha
    space = StateSpace(np.full(n, h), labels=x)
    return build_form(space, sp.csr_matrix(W), k)


def build_diag(n, interval=(-1.0, 1.0), c_fn=None) -> DirichletForm:
    """Degenerate multiplication form W = 0, k_i = c(x_i) m_i, c(x) = |x| by default."""
    if n < 2:
        raise DescriptorError(f"grid needs n >= 2, got {n}")
    if c_fn is None:
        c_fn = np.abs
    x, h = _cell_grid(float(interval[0]), float(interval[1]), n)
    c = np.asarray(c_fn(x), dtype=float)
    if np.any(np.abs(c) < 1e-12):
        bad = int(np.argmin(np.abs(c)))
        raise DescriptorError(
            f"degenerate family rejects a node where c vanishes: "
            f"c({x[bad]}) = {c[bad]} (the exact solution is unbounded there)")
    space = StateSpace(np.full(n, h), labels=x)
    return build_form(space, sp.csr_matrix((n, n)), c * space.m)


def build_perturbed(n, g=1.0, coeff=None) -> DirichletForm:
    """Killing-free 1-d chain made transient by a positive zero-order term."""
    base = build_grid_1d(n, coeff=coeff, dirichlet=False)
    g_vec = np.asarray(g, dtype=float)
    if g_vec.ndim == 0:
        g_vec = np.full(base.n, float(g_vec))
    return perturb(base, g_vec)


def place_atoms(space: StateSpace, atoms) -> SignedMeasure:
    """Sum of point masses; coordinates snap to the nearest node, ties low."""
    masses = np.zeros(space.n)
    coords = space.coordinates()
    for atom in atoms:
        if "node" in atom:
            node = int(atom["node"])
            if not (0 <= node < space.n):
                raise DescriptorError(f"atom node {node} out of range")
        elif "x" in atom:
            target = np.asarray(atom["x"], dtype=float)
            if coords.ndim == 1:
                dist = np.abs(coords - float(target))
            else:
                dist = np.linalg.norm(coords - target[None, :], axis=1)
            node = int(np.argmin(dist))  # argmin takes the first (lowest) index on ties
        else:
            raise DescriptorError(f"measure atom needs 'node' or 'x': {atom!r}")
        masses[node] += float(atom["mass"])
    return SignedMeasure(masses)


def _resolve_measure(desc, space: StateSpace) -> SignedMeasure:
    if desc is None:
        return SignedMeasure.zero(space.n)
    if desc == "reference":
        return SignedMeasure(space.m.copy())
    if isinstance(desc, list):
        return place_atoms(space, desc)
    raise DescriptorError(f"unknown measure descriptor {desc!r}")


_ALLOWED_KEYS = {"family", "n", "alpha", "interval", "coeff", "measure",
                 "driver", "g"}


def build_catalog_problem(descriptor) -> Problem:
    """Build a Problem from a catalog id or a descriptor dict."""
    if isinstance(descriptor, str):
        if descriptor not in CATALOG:
            raise DescriptorError(
                f"unknown catalog id {descriptor!r}; known ids: {catalog_ids()}")
        desc = dict(CATALOG[descriptor])
        desc.setdefault("_id", descriptor)
    else:
        desc = dict(descriptor)
    unknown = set(desc) - _ALLOWED_KEYS - {"_id"}
    if unknown:
        raise DescriptorError(f"unknown descriptor keys {sorted(unknown)}")
    family = desc.get("family")
    n = int(desc.get("n", 64))

    if family == "lap1d":
        form = build_grid_1d(n, coeff=desc.get("coeff"),
                             interval=desc.get("interval", (0.0, 1.0)))
    elif family == "divform":
        coeff = desc.get("coeff", {"kind": "affine", "c0": 1.0, "c1": 2.0})
        form = build_grid_1d(n, coeff=coeff,
                             interval=desc.get("interval", (0.0, 1.0)))
    elif family == "lap2d":
        form = build_grid_2d(n, coeff=desc.get("coeff"))
    elif family == "frac":
        form = build_frac(n, float(desc.get("alpha", 1.0)),
                          interval=desc.get("interval", (-1.0, 1.0)))
    elif family == "diag":
        form = build_diag(n, interval=desc.get("interval", (-1.0, 1.0)))
    elif family == "perturbed":
        form = build_perturbed(n, g=desc.get("g", 1.0), coeff=desc.get("coeff"))
    else:
        raise DescriptorError(f"unknown catalog family {family!r}")

    driver = make_driver(desc.get("driver", {"family": "zero"}), form.n)
    mu = _resolve_measure(desc.get("measure"), form.space)
    meta = {"family": family, "n": n}
    for key in ("alpha", "g", "coeff", "_id"):
        if key in desc:
            meta[key if key != "_id" else "id"] = desc[key]
    return Problem(form=form, driver=driver, mu=mu, meta=meta)


def load_problem(path) -> Problem:
    """Read a problem descriptor from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            desc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DescriptorError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return build_catalog_problem(desc)
    except (DescriptorError, DriverError) as exc:
        raise DescriptorError(f"{path}: {exc}") from exc
