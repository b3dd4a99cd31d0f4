import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import formlab as fl
from formlab.randomized import random_form, random_measure, random_transient_form


def two_node_form(w=1.0, k=(0.0, 0.0), m=(1.0, 1.0)):
    space = fl.StateSpace(np.asarray(m, dtype=float))
    W = np.array([[0.0, w], [w, 0.0]])
    return fl.build_form(space, W, np.asarray(k, dtype=float))


# -- construction and validation -------------------------------------------

def test_build_form_accepts_and_energy():
    form = two_node_form(w=1.0)
    assert form.energy(np.array([1.0, 0.0])) == pytest.approx(1.0)


def test_build_form_rejects_asymmetric():
    space = fl.StateSpace(np.ones(2))
    W = np.array([[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(fl.FormError, match="asymmetric"):
        fl.build_form(space, W, np.zeros(2))


def test_build_form_rejects_negative_killing():
    space = fl.StateSpace(np.ones(2))
    with pytest.raises(fl.FormError, match="negative killing"):
        fl.build_form(space, np.zeros((2, 2)), np.array([-1.0, 0.0]))


def test_build_form_rejects_negative_weight_and_diagonal():
    space = fl.StateSpace(np.ones(2))
    with pytest.raises(fl.FormError, match="negative jump weight"):
        fl.build_form(space, np.array([[0.0, -1.0], [-1.0, 0.0]]), np.zeros(2))
    with pytest.raises(fl.FormError, match="diagonal"):
        fl.build_form(space, np.eye(2), np.zeros(2))


def test_state_space_requires_positive_measure():
    with pytest.raises(fl.FormError, match="strictly positive"):
        fl.StateSpace(np.array([1.0, 0.0]))


def test_signed_measure_parts_and_tv():
    mu = fl.SignedMeasure(np.array([2.0, -3.0, 0.0]))
    assert mu.total_variation == 5.0
    assert np.all(mu.positive_part == [2.0, 0.0, 0.0])
    assert np.all(mu.negative_part == [0.0, 3.0, 0.0])
    # disjoint supports
    assert np.all(mu.positive_part * mu.negative_part == 0.0)


def test_density_roundtrip():
    space = fl.StateSpace(np.array([0.5, 2.0, 1.25]))
    mu = fl.SignedMeasure(np.array([1.0, -0.75, 0.0]))
    back = fl.SignedMeasure.from_density(mu.density(space), space)
    np.testing.assert_allclose(back.masses, mu.masses, rtol=4e-16)


# -- energy ------------------------------------------------------------------

def test_energy_zero_vector():
    form = two_node_form(w=2.0)
    assert fl.energy(form, np.zeros(2), np.zeros(2)) == 0.0


def test_energy_constant_killing_free():
    form = two_node_form(w=5.0)
    assert fl.energy(form, np.full(2, 3.7), np.full(2, 3.7)) == 0.0


def test_energy_cross_term_hand_expanded():
    # 1/2 [w (u0-u1)(v0-v1) + w (u1-u0)(v1-v0)] = w * (1)(-1) = -3
    form = two_node_form(w=3.0)
    val = fl.energy(form, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert val == pytest.approx(-3.0)


def test_energy_dimension_mismatch():
    form = two_node_form()
    with pytest.raises(fl.FormError):
        form.energy(np.zeros(3))


def test_energy_matches_laplacian_quadratic_form():
    rng = np.random.default_rng(0)
    form = random_transient_form(rng, 8, 14)
    for _ in range(5):
        u = rng.normal(size=form.n)
        v = rng.normal(size=form.n)
        assert form.energy(u, v) == pytest.approx(float(v @ (form.L @ u)),
                                                  rel=1e-12, abs=1e-12)


@given(u=arrays(np.float64, 6, elements=st.floats(-50, 50)))
def test_energy_nonnegative(u):
    rng = np.random.default_rng(1234)
    form = random_form(rng, 6, 6, killing="mixed")
    assert form.energy(u) >= -1e-9 * (1 + np.max(np.abs(u)) ** 2)


@given(u=arrays(np.float64, 7, elements=st.floats(-20, 20)),
       k=st.floats(0.01, 30.0))
def test_normal_contraction(u, k):
    rng = np.random.default_rng(99)
    form = random_form(rng, 7, 7, killing="mixed")
    v = np.clip(u, -k, k)
    assert form.energy(v) <= form.energy(u) + 1e-10 * (1 + form.energy(u))


# -- transience ---------------------------------------------------------------

def test_transient_killing_free_chain_is_recurrent():
    form = two_node_form(w=1.0, k=(0.0, 0.0))
    flag, cert = fl.is_transient(form)
    assert not flag
    assert set(cert.dead_component) == {0, 1}
    assert cert.witness == "killing-free-component"


def test_transient_with_killing_anywhere():
    form = two_node_form(w=1.0, k=(1.0, 0.0))
    flag, cert = fl.is_transient(form)
    assert flag and cert.witness == "cholesky"


def test_two_components_killing_in_one():
    space = fl.StateSpace(np.ones(4))
    W = np.zeros((4, 4))
    W[0, 1] = W[1, 0] = 1.0
    W[2, 3] = W[3, 2] = 1.0
    form = fl.build_form(space, W, np.array([1.0, 0.0, 0.0, 0.0]))
    flag, cert = fl.is_transient(form)
    assert not flag
    assert set(cert.dead_component) == {2, 3}


def test_transience_matches_green_probe_on_random_forms():
    rng = np.random.default_rng(7)
    disagreements = 0
    for i in range(100):
        killing = ("all", "none", "mixed")[i % 3]
        comps = 1 + (i % 3)
        form = random_form(rng, 5, 25, n_components=comps, killing=killing)
        flag, _ = fl.is_transient(form)
        L = form.dense_L()
        sol, res, *_ = np.linalg.lstsq(L, form.m, rcond=None)
        probe_res = float(np.max(np.abs(L @ sol - form.m)))
        probe = probe_res <= 1e-8 * float(np.max(form.m)) \
            and np.all(np.isfinite(sol))
        disagreements += int(probe != flag)
    assert disagreements == 0


def test_transience_inequality_witness():
    # on a transient form the constant g = sqrt(gap)/sqrt(|m|) satisfies
    # (|u|, g)_m <= sqrt(E(u,u)) for every u
    rng = np.random.default_rng(17)
    for _ in range(10):
        form = random_transient_form(rng, 5, 20)
        s = 1.0 / np.sqrt(form.m)
        gap = np.linalg.eigvalsh(form.dense_L() * s[:, None] * s[None, :])[0]
        g = np.sqrt(gap) / np.sqrt(np.sum(form.m))
        for _ in range(10):
            u = rng.normal(size=form.n) * rng.uniform(0.1, 10)
            lhs = float(np.sum(np.abs(u) * g * form.m))
            assert lhs <= np.sqrt(form.energy(u)) + 1e-9


# -- potentials ---------------------------------------------------------------

def test_potential_zero_measure():
    form = two_node_form(w=1.0, k=(1.0, 0.0))
    u = fl.potential(form, fl.SignedMeasure(np.zeros(2)))
    np.testing.assert_allclose(u, 0.0)


def test_potential_diagonal_inverse_abs():
    # multiplication form c(x) = |x| on nodes {-0.5, 0.25}; mu = m gives 1/|x|
    space = fl.StateSpace(np.array([1.0, 1.0]), labels=np.array([-0.5, 0.25]))
    form = fl.build_form(space, np.zeros((2, 2)),
                         np.abs(space.labels) * space.m)
    u = fl.potential(form, fl.SignedMeasure(space.m.copy()), alpha=0.0)
    np.testing.assert_allclose(u, [2.0, 4.0], rtol=1e-13)


def test_potential_green_function_1d():
    # -u'' = delta_a, zero boundary: u(x) = x(1-a) left of the atom
    prob = fl.build_catalog_problem({
        "family": "lap1d", "n": 256,
        "measure": [{"x": 0.5, "mass": 1.0}], "driver": {"family": "zero"}})
    u = fl.potential(prob.form, prob.mu)
    x = prob.form.space.labels
    a = float(x[int(np.argmax(prob.mu.masses))])
    i = int(np.argmin(np.abs(x - 0.25)))
    exact = x[i] * (1.0 - a)
    h = prob.form.m[0]
    assert abs(u[i] - exact) <= 5 * h
    assert abs(u[i] - 0.125) <= 5 * h


def test_potential_requires_transience_at_alpha_zero():
    form = two_node_form(w=1.0)
    with pytest.raises(fl.GreenOperatorUndefined):
        fl.potential(form, fl.SignedMeasure(np.ones(2)), alpha=0.0)
    # alpha > 0 is fine on the same form
    u = fl.potential(form, fl.SignedMeasure(np.ones(2)), alpha=0.5)
    assert np.all(np.isfinite(u))


def test_potential_duality_identity():
    rng = np.random.default_rng(3)
    form = random_transient_form(rng, 6, 12)
    mu = random_measure(rng, form.n)
    for alpha in (0.0, 0.7):
        u = fl.potential(form, mu, alpha=alpha)
        for j in range(form.n):
            v = np.eye(form.n)[j]
            lhs = form.energy(u, v) + alpha * float(np.sum(u * v * form.m))
            assert lhs == pytest.approx(mu.masses[j], abs=1e-9)


def test_resolvent_positivity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        form = random_transient_form(rng, 5, 20)
        mu = random_measure(rng, form.n, nonneg=True)
        u = fl.potential(form, mu)
        assert np.all(u >= -1e-12)


# -- equilibrium potential ----------------------------------------------------

def test_equilibrium_all_nodes():
    form = two_node_form(w=2.0, k=(0.5, 0.25))
    e, cap = fl.equilibrium_potential(form, [0, 1])
    np.testing.assert_allclose(e, 1.0)
    assert cap == pytest.approx(0.75)


def test_equilibrium_two_node_hand_solve():
    # e(1) solves w(e1 - 1) + k1 e1 = 0, so e1 = w/(w + k1)
    w, k1 = 2.0, 3.0
    form = two_node_form(w=w, k=(0.0, k1))
    e, cap = fl.equilibrium_potential(form, [0])
    assert e[0] == 1.0
    assert e[1] == pytest.approx(w / (w + k1), rel=1e-13)
    assert cap == pytest.approx(form.energy(e), rel=1e-12)


def test_equilibrium_bounds_and_errors():
    rng = np.random.default_rng(11)
    form = random_transient_form(rng, 8, 16)
    e, cap = fl.equilibrium_potential(form, [0, 3])
    assert np.all(e >= -1e-12) and np.all(e <= 1 + 1e-12)
    assert cap >= 0
    with pytest.raises(fl.FormError):
        fl.equilibrium_potential(form, [])
    recurrent = two_node_form(w=1.0)
    with pytest.raises(fl.GreenOperatorUndefined):
        fl.equilibrium_potential(recurrent, [0])


# -- perturbation -------------------------------------------------------------

def test_perturb_makes_transient():
    form = two_node_form(w=1.0)
    pert = fl.perturb(form, np.ones(2))
    flag, _ = fl.is_transient(pert)
    assert flag
    np.testing.assert_allclose(pert.k, form.k + form.m)


def test_perturb_energy_additivity():
    rng = np.random.default_rng(13)
    form = random_form(rng, 6, 10, killing="mixed")
    g = rng.uniform(0.2, 2.0, size=form.n)
    pert = fl.perturb(form, g)
    for _ in range(5):
        u = rng.normal(size=form.n)
        expected = form.energy(u) + float(np.sum(g * form.m * u * u))
        assert pert.energy(u) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_perturb_rejects_zero_entry():
    form = two_node_form()
    with pytest.raises(fl.FormError, match="strictly positive"):
        fl.perturb(form, np.array([1.0, 0.0]))
