import itertools
import math

import numpy as np
import pytest

from dpbound import _sdp
from dpbound.empirical import SignalRoute, WeightedSamples, mmd_biased
from dpbound.graph import Component, ComponentGraph, chain, simulate
from dpbound.kernels import KernelSpec
from dpbound.propagation import (
    InfeasibleBoundError,
    build_sdp,
    estimate_input_bounds,
    run_propagation,
    solve_bound,
)

K1 = KernelSpec.se(1.0)


def simplex_lattice(V, steps):
    for c in itertools.product(range(steps + 1), repeat=V - 1):
        if sum(c) <= steps:
            yield np.array(list(c) + [steps - sum(c)], dtype=float) / steps


def one_route_problem(x_val, y_val, q_in, q_out, b_in):
    comp = Component(1, 1, 1, lambda X, r: X, [SignalRoute(0, 1, [0])])
    marg = {(0, 1): WeightedSamples.uniform(q_in), (1, 2): WeightedSamples.uniform(q_out)}
    kern = {(0, 1): K1, (1, 2): K1}
    return build_sdp(comp, SignalRoute(1, 2, [0]), x_val, y_val, marg, {(0, 1): b_in}, kern)


def test_input_bound_examples():
    P = {(0, 1): WeightedSamples.uniform([[0.0], [1.0], [2.0]])}
    assert estimate_input_bounds(P, P, {(0, 1): K1})[(0, 1)] == pytest.approx(0.0, abs=1e-7)
    d0 = {(0, 1): WeightedSamples.uniform([[0.0]])}
    d1 = {(0, 1): WeightedSamples.uniform([[1.0]])}
    assert estimate_input_bounds(d0, d1, {(0, 1): K1})[(0, 1)] == pytest.approx(math.sqrt(2 - 2 * math.exp(-0.5)), abs=1e-12)
    S = {(0, 1): WeightedSamples.uniform(np.zeros((100, 1)))}
    slack = estimate_input_bounds(S, S, {(0, 1): K1}, concentration_delta=0.05)[(0, 1)]
    assert slack == pytest.approx(0.17308, abs=1e-5)
    with pytest.raises(ValueError):
        estimate_input_bounds(S, S, {(0, 1): K1}, concentration_delta=1.5)


def test_problem_dimensions():
    p = one_route_problem(np.array([0.0, 1.0]), np.array([0.0, 1.0]), [[0.0]], [[0.0]], 1.0)
    assert (p.psd_order, p.n_inequalities, p.n_equalities, p.n_nonneg) == (3, 1, 1, 3)
    x = np.zeros((100, 2))
    comp = Component(2, 2, 1, lambda X, r: X[:, :1], [SignalRoute(0, 2, [0]), SignalRoute(1, 2, [0])])
    marg = {(0, 2): WeightedSamples.uniform([[0.0]]), (1, 2): WeightedSamples.uniform([[0.0]]),
            (2, 3): WeightedSamples.uniform([[0.0]])}
    kern = {k: K1 for k in marg}
    p = build_sdp(comp, SignalRoute(2, 3, [0]), x, np.zeros((100, 1)), marg, {(0, 2): 1.0, (1, 2): 1.0}, kern)
    assert (p.psd_order, p.n_inequalities, p.n_matrix_vars) == (101, 2, 5050)


def test_dimension_mismatch_is_reported():
    with pytest.raises(ValueError):
        one_route_problem(np.zeros((3, 2)), np.zeros(3), [[0.0]], [[0.0]], 1.0)


def test_own_model_data_with_zero_input_bound():
    x = np.linspace(-2, 2, 8)
    res = solve_bound(one_route_problem(x, np.sin(x), x[:, None], np.sin(x)[:, None], 0.0))
    assert res.value <= 1e-4


def test_single_validation_pair_is_closed_form():
    q_in, q_out = np.array([[0.0], [0.5]]), np.array([[1.0], [3.0]])
    x1, y1 = np.array([0.2]), np.array([2.0])
    b = mmd_biased(K1, WeightedSamples.uniform([x1]), WeightedSamples.uniform(q_in)) + 0.1
    res = solve_bound(one_route_problem(x1, y1, q_in, q_out, b))
    expected = mmd_biased(K1, WeightedSamples.uniform([y1]), WeightedSamples.uniform(q_out))
    assert res.value == pytest.approx(expected, abs=1e-9)


def random_problem(seed, V=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=V)
    y = np.tanh(x) + 0.3 * rng.normal(size=V)
    q_in = rng.normal(size=(6, 1))
    q_out = np.tanh(q_in)
    b = mmd_biased(K1, WeightedSamples.uniform(x[:, None]), WeightedSamples.uniform(q_in))
    return one_route_problem(x, y, q_in, q_out, b * (1.0 + rng.uniform(0.05, 0.5)))


@pytest.mark.parametrize("seed", range(6))
def test_relaxation_dominates_brute_force(seed):
    p = random_problem(seed)
    res = solve_bound(p)
    brute = max(p.objective(a) for a in simplex_lattice(p.V, 80)
                if np.all(p.constraint_excess(a) <= 0))
    d = res.diagnostics
    assert d.opt_relax >= brute - 1e-9
    assert d.opt_orig <= d.opt_relax + 1e-6
    assert 0.0 <= d.approx_ratio_lower <= 1.0
    assert np.all(res.alpha_hat >= -1e-6) and abs(res.alpha_hat.sum() - 1) <= 1e-6
    assert np.all(p.constraint_excess(res.alpha_hat) <= 1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_bound_monotone_in_input_bound(seed):
    p = random_problem(seed, V=6)
    wider = type(p)(p.component, p.target, p.objective, p.constraints, tuple(2 * b for b in p.bounds))
    assert solve_bound(wider).value >= solve_bound(p).value - 1e-7


def test_certificate_valid_for_arbitrary_multipliers():
    p = random_problem(1)
    C0 = p.objective.lifted()
    cons = [t.lifted() for t in p.constraints]
    brute = max(p.objective(a) - p.objective.c for a in simplex_lattice(p.V, 60)
                if np.all(p.constraint_excess(a) <= 0))
    rng = np.random.default_rng(0)
    for _ in range(20):
        y, z = rng.uniform(0, 3, 1), rng.normal()
        up = _sdp.certified_upper(C0, 0.0, cons, p.rhs(), y, z)
        assert up >= brute - 1e-9


def test_infeasible_input_bound_names_route():
    x = np.array([5.0, 6.0])
    with pytest.raises(InfeasibleBoundError) as err:
        solve_bound(one_route_problem(x, x, [[0.0]], [[0.0]], 0.01))
    assert err.value.route == (0, 1)


def _identity_setup(g, n=12):
    x = np.linspace(-1, 1, n)[:, None]
    t = simulate(g, x)
    val = {c.index: (t.inputs[c.index], t.outputs[c.index]) for c in g.components}
    kern = {r.key: K1 for r in g.routes()}
    return t, val, kern


def test_linear_chain_solve_count_and_zero_bound():
    g = chain([lambda X, r: X, lambda X, r: X], [1, 1, 1])
    t, val, kern = _identity_setup(g)
    res = run_propagation(g, val, t, {(0, 1): 0.0}, kern)
    assert res.n_solves == 2
    assert res.b_y <= 1e-3
    assert {r["c"] for r in res.records()} == {1, 2}


def test_fully_connected_graph_solves_every_outgoing_route():
    comps = [
        Component(1, 1, 1, lambda X, r: X, [SignalRoute(0, 1, [0])]),
        Component(2, 2, 1, lambda X, r: X.sum(1, keepdims=True), [SignalRoute(0, 2, [0]), SignalRoute(1, 2, [0])]),
        Component(3, 3, 1, lambda X, r: X.mean(1, keepdims=True),
                  [SignalRoute(0, 3, [0]), SignalRoute(1, 3, [0]), SignalRoute(2, 3, [0])]),
    ]
    g = ComponentGraph(1, comps)
    t, val, kern = _identity_setup(g)
    res = run_propagation(g, val, t, {(0, 1): 0.0, (0, 2): 0.0, (0, 3): 0.0}, kern)
    assert sorted(res.results) == [(1, 2), (1, 3), (2, 3), (3, 4)]
    assert res.b_y <= 1e-3


def test_missing_input_bound_is_an_error():
    g = chain([lambda X, r: X], [1, 1])
    t, val, kern = _identity_setup(g)
    with pytest.raises(KeyError):
        run_propagation(g, val, t, {}, kern)


def test_gaussian_perfect_input_bound_is_plain_mmd():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(15, 1))
    y_true, y_model = x + 0.4, x
    g = chain([lambda X, r: X], [1, 1])
    comp = g.component(1)
    marg = {(0, 1): WeightedSamples.uniform(x), (1, 2): WeightedSamples.uniform(y_model)}
    kern = {(0, 1): K1, (1, 2): K1}
    res = solve_bound(build_sdp(comp, g.tpi_route, x, y_true, marg, {(0, 1): 0.0}, kern))
    plain = mmd_biased(K1, WeightedSamples.uniform(y_true), WeightedSamples.uniform(y_model))
    assert res.value == pytest.approx(plain, abs=1e-4)
