import numpy as np
import pytest
from scipy.linalg import expm

import formlab as fl
from formlab.markov import SimulationError, _path_rng, _simulate_batch
from formlab.randomized import random_measure, random_transient_form


def single_node(m=1.0, k=1.0):
    space = fl.StateSpace(np.array([m]))
    return fl.build_form(space, np.zeros((1, 1)), np.array([k]))


def test_chain_rates_single_node():
    chain = fl.build_chain(single_node(m=1.0, k=1.0))
    assert chain.kappa[0] == 1.0
    assert chain.lam[0] == 1.0


def test_chain_rates_two_nodes():
    space = fl.StateSpace(np.array([1.0, 2.0]))
    form = fl.build_form(space, np.array([[0.0, 2.0], [2.0, 0.0]]), np.zeros(2))
    chain = fl.build_chain(form)
    np.testing.assert_allclose(chain.lam, [2.0, 1.0])
    np.testing.assert_allclose(chain.kappa, 0.0)


def test_isolated_node_absorbing_alive():
    space = fl.StateSpace(np.ones(1))
    form = fl.build_form(space, np.zeros((1, 1)), np.zeros(1))
    chain = fl.build_chain(form)
    assert chain.lam[0] == 0.0
    path = fl.sample_path(chain, 0, seed=0, horizon_cap=5.0)
    assert not path.absorbed
    assert path.zeta is None
    np.testing.assert_allclose(path.holds, [5.0])


def test_sample_path_deterministic():
    rng_form = np.random.default_rng(2)
    form = random_transient_form(rng_form, 6, 10)
    chain = fl.build_chain(form)
    p1 = fl.sample_path(chain, 1, seed=5, horizon_cap=100.0)
    p2 = fl.sample_path(chain, 1, seed=5, horizon_cap=100.0)
    assert np.array_equal(p1.states, p2.states)
    assert np.array_equal(p1.holds, p2.holds)
    assert p1.absorbed == p2.absorbed


def test_lifetime_sum_of_holds_when_absorbed():
    chain = fl.build_chain(single_node())
    path = fl.sample_path(chain, 0, seed=3, horizon_cap=1e6)
    assert path.absorbed
    assert path.zeta == pytest.approx(float(np.sum(path.holds)))


def test_mean_lifetime_exponential():
    # kappa = 2 gives E zeta = 0.5
    chain = fl.build_chain(single_node(k=2.0))
    mean, se = fl.mc_expectation(chain, 0, lambda p: p.zeta, 100_000, seed=11)
    assert abs(mean - 0.5) <= 3 * se
    mean2, se2 = fl.mc_expectation(chain, 0, lambda p: p.zeta, 100_000, seed=11)
    assert mean == mean2 and se == se2


def test_mc_expectation_constant_functional():
    chain = fl.build_chain(single_node())
    mean, se = fl.mc_expectation(chain, 0, lambda p: 4.25, 100, seed=0)
    assert mean == 4.25 and se == 0.0


def test_mc_expectation_aborts_on_nonfinite():
    chain = fl.build_chain(single_node())
    with pytest.raises(SimulationError, match="states"):
        fl.mc_expectation(chain, 0, lambda p: float("nan"), 10, seed=0)


def test_additive_functional_basics():
    form = single_node()
    chain = fl.build_chain(form)
    path = fl.sample_path(chain, 0, seed=1, horizon_cap=1e6)
    zero = fl.additive_functional(path, fl.SignedMeasure(np.zeros(1)), form)
    assert zero.value == 0.0
    mu = fl.SignedMeasure(np.array([3.0]))
    af = fl.additive_functional(path, mu, form)
    assert af.value == pytest.approx(3.0 * path.zeta)
    assert af.abs_value == af.value
    assert not af.lower_bound_only


def test_additive_functional_flags_capped():
    form = single_node(k=0.001)
    chain = fl.build_chain(form)
    path = fl.sample_path(chain, 0, seed=1, horizon_cap=0.01)
    af = fl.additive_functional(path, fl.SignedMeasure(np.ones(1)), form)
    assert af.lower_bound_only


def test_additive_functional_concatenation():
    rng_form = np.random.default_rng(8)
    form = random_transient_form(rng_form, 6, 10)
    chain = fl.build_chain(form)
    mu = random_measure(np.random.default_rng(9), form.n)
    path = fl.sample_path(chain, 0, seed=21, horizon_cap=1e5)
    cut = max(1, len(path) // 2)
    prefix = fl.ChainPath(path.start, path.states[:cut], path.holds[:cut], False)
    suffix = fl.ChainPath(int(path.states[cut]) if cut < len(path) else 0,
                          path.states[cut:], path.holds[cut:], path.absorbed)
    total = fl.additive_functional(path, mu, form).value
    split = fl.additive_functional(prefix, mu, form).value \
        + fl.additive_functional(suffix, mu, form).value
    assert total == pytest.approx(split, rel=1e-12)


def test_additive_functional_green_identity():
    # E_x A^mu up to the lifetime equals the Green potential at x
    rng = np.random.default_rng(31)
    form = random_transient_form(rng, 5, 5)
    chain = fl.build_chain(form)
    mu = random_measure(np.random.default_rng(32), form.n, nonneg=True)
    exact = fl.potential(form, mu)
    mean, se = fl.mc_expectation(
        chain, 0, lambda p: fl.additive_functional(p, mu, form).value,
        100_000, seed=13)
    assert abs(mean - exact[0]) <= 3 * se


def test_occupation_matches_green_column():
    rng = np.random.default_rng(41)
    form = random_transient_form(rng, 5, 5)
    chain = fl.build_chain(form)
    y = 2
    e_y = np.zeros(form.n)
    e_y[y] = 1.0
    exact = form.solve(form.m * e_y)
    mean, se = fl.mc_expectation(
        chain, 0,
        lambda p: float(np.sum(p.holds[p.states == y])), 100_000, seed=14)
    assert abs(mean - exact[0]) <= 3 * se


def test_generator_consistency_small_time():
    # d/dt E_x[e_y(X_t)] at t=0 equals -(L e_y)/m entry-wise
    rng = np.random.default_rng(55)
    form = random_transient_form(rng, 5, 8)
    G = -(form.dense_L() / form.m[:, None])
    t = 1e-7
    P = expm(t * G)
    approx = (P - np.eye(form.n)) / t
    np.testing.assert_allclose(approx, G, atol=1e-4 * np.max(np.abs(G)))


def test_lifetime_identity_batch():
    rng = np.random.default_rng(61)
    form = random_transient_form(rng, 6, 9)
    chain = fl.build_chain(form)
    cap = fl.default_horizon_cap(chain)
    exact = form.solve(form.m * np.ones(form.n))
    starts = np.full(60_000, 1, dtype=np.int64)
    res = _simulate_batch(chain, starts, _path_rng(5), cap,
                          want_occupation=True)
    life = res.occupation.sum(axis=1)
    mean = float(np.mean(life))
    se = float(np.std(life, ddof=1) / np.sqrt(life.size))
    assert res.capped_fraction < 1e-4
    assert abs(mean - exact[1]) <= 3 * se


def test_batch_engine_matches_single_path_rates():
    # cross-validate the lockstep engine against per-path sampling
    rng = np.random.default_rng(71)
    form = random_transient_form(rng, 5, 5)
    chain = fl.build_chain(form)
    cap = fl.default_horizon_cap(chain)
    N = 40_000
    batch = _simulate_batch(chain, np.zeros(N, dtype=np.int64), _path_rng(1),
                            cap, want_occupation=True)
    occ_batch = batch.occupation.mean(axis=0)
    vals = np.zeros(form.n)
    for i in range(6000):
        p = fl.sample_path(chain, 0, 0, cap, rng=_path_rng(123, i))
        np.add.at(vals, p.states, p.holds)
    occ_single = vals / 6000
    se = batch.occupation.std(axis=0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(occ_batch - occ_single) <= 5 * (se + occ_single / np.sqrt(6000) + 1e-4))


# -- Revuz correspondence -----------------------------------------------------

def test_revuz_zero_measure_exact():
    rng = np.random.default_rng(81)
    form = random_transient_form(rng, 5, 8)
    chain = fl.build_chain(form)
    rep = fl.revuz_check(chain, np.ones(form.n),
                         fl.SignedMeasure(np.zeros(form.n)),
                         t=0.05, N=2000, seed=1)
    assert rep.estimate == 0.0
    assert rep.target == 0.0


def test_revuz_scalar_closed_form():
    # single node, kappa = 1, mass 2: (1/t) E int_0^t dA = 2 (1 - e^-t)/t
    form = single_node()
    chain = fl.build_chain(form)
    t = 0.35
    rep = fl.revuz_check(chain, np.ones(1), fl.SignedMeasure(np.array([2.0])),
                         t=t, N=200_000, seed=5)
    exact = 2.0 * (1.0 - np.exp(-t)) / t
    assert abs(rep.estimate - exact) <= 3 * rep.se
    assert rep.target == 2.0


def test_revuz_random_form_within_gate():
    rng = np.random.default_rng(91)
    form = random_transient_form(rng, 6, 6)
    chain = fl.build_chain(form)
    f = np.random.default_rng(92).uniform(-1, 1, size=form.n)
    mu = random_measure(np.random.default_rng(93), form.n)
    rep = fl.revuz_check(chain, f, mu, t=0.01, N=100_000, seed=6)
    assert rep.passed(3.0)
    rep2 = fl.revuz_check(chain, f, mu, t=0.01, N=100_000, seed=6)
    assert rep.estimate == rep2.estimate


def test_default_horizon_cap_scales():
    chain = fl.build_chain(single_node(k=2.0))
    assert fl.default_horizon_cap(chain) == pytest.approx(20.0)
