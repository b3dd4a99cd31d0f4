"""Finite-state symmetric Dirichlet forms: energy, transience, potentials.

A form is a triple (m, W, k): a strictly positive reference measure m on n
nodes, a symmetric matrix W of nonnegative jump weights with zero diagonal,
and a vector k of nonnegative killing weights.  The energy is

    E(u, v) = 1/2 * sum_xy w_xy (u_x - u_y)(v_x - v_y) + sum_x k_x u_x v_x

and the form Laplacian L, defined by (Lu)_x = sum_y w_xy (u_x - u_y) + k_x u_x,
satisfies E(u, v) = v . Lu.  The operator acting on functions is -(Lu)_x / m_x.

Every node-level equation in this package is written in the shared assembly
convention  (Lu)(x) = m_x f(x, u_x) + mu({x}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class FormError(ValueError):
    """Form data violates an invariant (shape, sign or symmetry)."""


class GreenOperatorUndefined(RuntimeError):
    """A 0-order potential was requested on a form that is not transient."""


def _frozen_array(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class StateSpace:
    """Finite node set with a strictly positive reference measure.

    ``labels`` optionally carries one spatial coordinate row per node; it is
    used by catalog problems, measure placement and CSV export only.
    """

    m: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.ndim != 1 or m.size < 1:
            raise FormError("reference measure must be a nonempty 1-d vector")
        if not np.all(np.isfinite(m)) or np.any(m <= 0.0):
            bad = int(np.argmin(m))
            raise FormError(
                f"reference measure must be strictly positive everywhere; "
                f"m[{bad}] = {m[bad]}")
        object.__setattr__(self, "m", _frozen_array(m))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=float)
            if lab.shape[0] != m.size:
                raise FormError(
                    f"labels carry {lab.shape[0]} rows for {m.size} nodes")
            object.__setattr__(self, "labels", _frozen_array(lab))

    @property
    def n(self) -> int:
        return self.m.size

    def coordinates(self) -> np.ndarray:
        """Per-node coordinates; node indices if no labels were given."""
        if self.labels is None:
            return np.arange(self.n, dtype=float)
        return self.labels


@dataclass(frozen=True)
class SignedMeasure:
    """Signed measure given by its node masses mu({x})."""

    masses: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.masses, dtype=float)
        if v.ndim != 1:
            raise FormError("measure masses must be a 1-d vector")
        if not np.all(np.isfinite(v)):
            raise FormError("measure masses must be finite")
        object.__setattr__(self, "masses", _frozen_array(v))

    @property
    def n(self) -> int:
        return self.masses.size

    @property
    def positive_part(self) -> np.ndarray:
        return np.maximum(self.masses, 0.0)

    @property
    def negative_part(self) -> np.ndarray:
        return np.maximum(-self.masses, 0.0)

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.masses)))

    def density(self, space: StateSpace) -> np.ndarray:
        """Density with respect to the reference measure, masses / m."""
        if space.n != self.n:
            raise FormError("measure and space dimensions differ")
        return self.masses / space.m

    @staticmethod
    def from_density(rho, space: StateSpace) -> "SignedMeasure":
        rho = np.asarray(rho, dtype=float)
        return SignedMeasure(rho * space.m)

    @staticmethod
    def zero(n: int) -> "SignedMeasure":
        return SignedMeasure(np.zeros(n))

    def __add__(self, other: "SignedMeasure") -> "SignedMeasure":
        return SignedMeasure(self.masses + other.masses)

    def __mul__(self, c: float) -> "SignedMeasure":
        return SignedMeasure(float(c) * self.masses)

    __rmul__ = __mul__


@dataclass(frozen=True)
class TransienceCertificate:
    """Witness for the transience decision.

    ``dead_component`` lists the nodes of a killing-free connected component
    when the form is recurrent; ``witness`` names the supporting evidence
    ("cholesky" for a successful SPD factorization of L).
    """

    transient: bool
    components: tuple
    dead_component: tuple | None
    witness: str


class DirichletForm:
    """Symmetric jump weights plus killing over a StateSpace.

    Instances are immutable after construction; the assembled Laplacian and
    its Cholesky factor are cached read-only handles, so a form can be shared
    freely across threads.
    """

    def __init__(self, space: StateSpace, W: sp.csr_matrix, k: np.ndarray):
        self.space = space
        self._W = W
        self._k = _frozen_array(k)
        self._degree = _frozen_array(np.asarray(W.sum(axis=1)).ravel())
        self._L = None
        self._chol = None
        self._components = None
        W.data.flags.writeable = False

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def m(self) -> np.ndarray:
        return self.space.m

    @property
    def W(self) -> sp.csr_matrix:
        return self._W

    @property
    def k(self) -> np.ndarray:
        return self._k

    @property
    def degree(self) -> np.ndarray:
        """Row sums of W, i.e. total jump weight out of each node."""
        return self._degree

    @property
    def L(self) -> sp.csr_matrix:
        """Form Laplacian, (Lu)_x = sum_y w_xy (u_x - u_y) + k_x u_x."""
        if self._L is None:
            D = sp.diags(self._degree + self._k)
            L = (D - self._W).tocsr()
            L.data.flags.writeable = False
            self._L = L
        return self._L

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        return self.L @ u

    def energy(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        """E(u, v) by the defining double sum; E(u, u) when v is omitted."""
        u = np.asarray(u, dtype=float)
        v = u if v is None else np.asarray(v, dtype=float)
        if u.shape != (self.n,) or v.shape != (self.n,):
            raise FormError(
                f"energy arguments must have length {self.n}, "
                f"got {u.shape} and {v.shape}")
        coo = self._W.tocoo()
        du = u[coo.row] - u[coo.col]
        dv = v[coo.row] - v[coo.col]
        jump = 0.5 * float(np.sum(coo.data * du * dv))
        kill = float(np.sum(self._k * u * v))
        return jump + kill

    def dense_L(self) -> np.ndarray:
        return self.L.toarray()

    def cholesky(self):
        """Dense Cholesky factor of L; raises LinAlgError if L is singular."""
        if self._chol is None:
            self._chol = sla.cho_factor(self.dense_L(), lower=True)
        return self._chol

    def solve(self, rhs: np.ndarray, alpha: float = 0.0) -> np.ndarray:
        """Solve (L + alpha*M) u = rhs; alpha = 0 needs a transient form."""
        if alpha == 0.0:
            return sla.cho_solve(self.cholesky(), rhs)
        A = self.dense_L() + np.diag(alpha * self.m)
        return sla.cho_solve(sla.cho_factor(A, lower=True), rhs)

    def green_matrix(self) -> np.ndarray:
        """Dense inverse of L (the Green operator on node masses)."""
        return sla.cho_solve(self.cholesky(), np.eye(self.n))

    def components(self) -> tuple:
        """Connected components of the jump graph (killing ignored)."""
        if self._components is None:
            n_comp, tags = sp.csgraph.connected_components(
                self._W, directed=False)
            comps = tuple(
                tuple(np.nonzero(tags == c)[0].tolist())
                for c in range(n_comp))
            self._components = comps
        return self._components


def build_form(space: StateSpace, W, k) -> DirichletForm:
    """Validate (W, k) against the space and assemble a DirichletForm.

    W may be dense or sparse; it must be symmetric with zero diagonal and
    nonnegative entries.  Violations raise FormError naming the entry.
    """
    n = space.n
    k = np.asarray(k, dtype=float)
    if k.shape != (n,):
        raise FormError(f"killing vector has shape {k.shape}, expected ({n},)")
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        bad = int(np.argmin(k))
        raise FormError(f"negative killing weight k[{bad}] = {k[bad]}")

    Wm = sp.csr_matrix(W) if not sp.issparse(W) else W.tocsr()
    Wm = Wm.astype(float)
    if Wm.shape != (n, n):
        raise FormError(f"weight matrix has shape {Wm.shape}, expected ({n}, {n})")
    Wm.eliminate_zeros()
    diag = Wm.diagonal()
    if np.any(diag != 0.0):
        bad = int(np.argmax(diag != 0.0))
        raise FormError(f"nonzero diagonal weight w[{bad},{bad}] = {diag[bad]}")
    if np.any(Wm.data < 0) or not np.all(np.isfinite(Wm.data)):
        coo = Wm.tocoo()
        j = int(np.argmin(coo.data))
        raise FormError(
            f"negative jump weight w[{coo.row[j]},{coo.col[j]}] = {coo.data[j]}")
    asym = (Wm - Wm.T).tocoo()
    if asym.nnz and np.max(np.abs(asym.data)) > 0.0:
        j = int(np.argmax(np.abs(asym.data)))
        r, c = int(asym.row[j]), int(asym.col[j])
        raise FormError(
            f"asymmetric weights: w[{r},{c}] differs from w[{c},{r}] "
            f"by {asym.data[j]}")
    return DirichletForm(space, Wm, k)


def energy(form: DirichletForm, u, v) -> float:
    """Bilinear energy E(u, v) of the form."""
    return form.energy(np.asarray(u, float), np.asarray(v, float))


def is_transient(form: DirichletForm):
    """Decide transience and return (flag, certificate).

    The form is transient iff every W-connected component contains a node
    with positive killing, which on a finite space is equivalent to L being
    positive definite.  The certificate carries either a Cholesky witness or
    the first killing-free component.
    """
    comps = form.components()
    for comp in comps:
        if float(np.sum(form.k[list(comp)])) <= 0.0:
            cert = TransienceCertificate(
                transient=False, components=comps, dead_component=comp,
                witness="killing-free-component")
            return False, cert
    # All components see killing: L is positive definite; factor it as witness.
    form.cholesky()
    cert = TransienceCertificate(
        transient=True, components=comps, dead_component=None,
        witness="cholesky")
    return True, cert


def potential(form: DirichletForm, mu: SignedMeasure, alpha: float = 0.0) -> np.ndarray:
    """Potential of a measure: solve (L + alpha*M) u = masses(mu).

    alpha = 0 is the Green potential and requires a transient form; alpha > 0
    is defined for every form.
    """
    if mu.n != form.n:
        raise FormError("measure and form dimensions differ")
    if alpha < 0:
        raise FormError(f"alpha must be nonnegative, got {alpha}")
    if alpha == 0.0:
        transient, cert = is_transient(form)
        if not transient:
            raise GreenOperatorUndefined(
                f"0-order potential undefined: killing-free component "
                f"{cert.dead_component}")
    return form.solve(mu.masses, alpha=alpha)


def equilibrium_potential(form: DirichletForm, B) -> tuple[np.ndarray, float]:
    """Equilibrium potential of a node set B and its capacity.

    Returns (e, cap) with e = 1 on B, (Le)(x) = 0 off B and cap = E(e, e).
    """
    B = np.asarray(sorted(set(int(b) for b in np.atleast_1d(B))), dtype=int)
    if B.size == 0:
        raise FormError("equilibrium potential needs a nonempty node set")
    if B.min() < 0 or B.max() >= form.n:
        raise FormError(f"node set {B.tolist()} out of range for n = {form.n}")
    transient, cert = is_transient(form)
    if not transient:
        raise GreenOperatorUndefined(
            f"equilibrium potential undefined: killing-free component "
            f"{cert.dead_component}")
    e = np.zeros(form.n)
    e[B] = 1.0
    free = np.setdiff1d(np.arange(form.n), B)
    if free.size:
        L = form.dense_L()
        A = L[np.ix_(free, free)]
        rhs = -L[np.ix_(free, B)] @ np.ones(B.size)
        e[free] = sla.cho_solve(sla.cho_factor(A, lower=True), rhs)
    cap = form.energy(e)
    return e, cap


def perturb(form: DirichletForm, g) -> DirichletForm:
    """Add a zero-order term: the perturbed form has killing k + g*m.

    g must be strictly positive, which makes the result transient.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (form.n,):
        raise FormError(f"perturbation has shape {g.shape}, expected ({form.n},)")
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        bad = int(np.argmin(g))
        raise FormError(f"perturbation must be strictly positive, g[{bad}] = {g[bad]}")
    return DirichletForm(form.space, form.W.copy(), form.k + g * form.m)


@dataclass(frozen=True)
class Problem:
    """A semilinear problem: form, driver (nonlinearity) and measure.

    The node equations read (Lu)(x) = m_x * driver(x, u_x) + mu({x}).
    ``meta`` records the catalog family and its parameters.
    """

    form: DirichletForm
    driver: object
    mu: SignedMeasure
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mu.n != self.form.n:
            raise FormError("problem components have inconsistent dimensions")
        n = getattr(self.driver, "n", self.form.n)
        if n != self.form.n:
            raise FormError("driver and form dimensions differ")
