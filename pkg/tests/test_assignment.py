import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdta import (LINE_SEARCH, MSA, ConfigError, DemandMatrix, Link, Network, SolverError, StepSizeStrategy,
                  all_or_nothing, converged, cost_probe, customize, frank_wolfe, line_search, msa_step,
                  partition_demand, preprocess, query, total_cost)
from qdta.assignment import local_evaluator
from qdta.loading import retruncate_paths

from conftest import random_network, two_route_network
from oracles import grid_scan, segment_polynomial, two_route_split

LINK = Network([Link(0, 0, 1, 200.0, 10.0)])


def fw(network, demand, workers=1, dt=None, **kw):
    return frank_wolfe(network, None, dt, partition_demand(DemandMatrix(demand), workers), **kw)


def test_msa_schedule():
    assert msa_step(0) == 1.0 and msa_step(2) == 0.5
    steps = [msa_step(j) for j in range(2000)]
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert sum(steps) > 2 * math.log(2001 / 2)  # harmonic partial sums grow without bound
    with pytest.raises(ValueError):
        msa_step(-1)


def test_converged_examples():
    assert converged(1000, 1000)
    assert converged(1000, 999.95)
    assert not converged(1000, 990)
    assert converged(0.0, 0.0)
    with pytest.raises(SolverError):
        converged(1000, math.nan)
    with pytest.raises(SolverError):
        converged(math.inf, 1.0)


def test_strategy_validation():
    with pytest.raises(ConfigError):
        StepSizeStrategy(kind="newton")
    with pytest.raises(ConfigError):
        StepSizeStrategy(max_iters=0)
    with pytest.raises(ConfigError):
        StepSizeStrategy(probe_width=0.5)


def test_probe_degenerate_direction():
    f = np.array([150.0])
    c, slope, curvature = cost_probe(LINK, f, f, 0.5)
    assert c == pytest.approx(total_cost(LINK, f))
    assert abs(slope) < 1e-6 * c and abs(curvature) < 1e-3 * c


@pytest.mark.parametrize("x", [0.0, 0.5, 1.0, 3e-5, 1 - 3e-5])
def test_probe_matches_polynomial(x):
    f, g = np.array([400.0]), np.array([0.0])
    poly = segment_polynomial([10.0], [200.0], f, g)
    c, slope, curvature = cost_probe(LINK, f, g, x)
    assert c == pytest.approx(poly(x), rel=1e-12)
    scale = 1e-6 * poly(0.0)  # absolute floor for derivatives that vanish
    assert slope == pytest.approx(poly.deriv(1)(x), rel=1e-3, abs=scale)
    assert curvature == pytest.approx(poly.deriv(2)(x), rel=1e-3, abs=scale)


def test_probe_batch_equals_separate_totals():
    rng = np.random.default_rng(4)
    net = random_network(rng, 30, 120)
    f, g = rng.uniform(0, 400, net.n_links), rng.uniform(0, 400, net.n_links)
    points = (0.3 - 1e-4, 0.3, 0.3 + 1e-4)
    batch = local_evaluator(net, f, g)(points)
    separate = [total_cost(net, (1 - x) * f + x * g) for x in points]
    assert batch.tolist() == separate


def test_probe_never_leaves_feasible_segment():
    f, g = np.array([0.0]), np.array([100.0])
    seen = []

    def record(points, weights=None):
        seen.extend(points)
        return local_evaluator(LINK, f, g)(points, weights)
    for x in (0.0, 1e-5, 1.0):
        cost_probe(LINK, f, g, x, evaluate=record)
    assert min(seen) >= 0.0 and max(seen) <= 1.0
    with pytest.raises(ValueError):
        cost_probe(LINK, f, g, 1.5)


def test_line_search_examples():
    f = np.array([150.0])
    assert line_search(LINK, f, f, 2).alpha == 0.5
    assert line_search(LINK, f, f, 0).alpha == 1.0
    f, g = np.array([400.0]), np.array([0.0])
    poly = segment_polynomial([10.0], [200.0], f, g)
    best, _ = grid_scan(poly)
    res = line_search(LINK, f, g, 0)
    assert abs(res.alpha - best) < 1e-3
    assert poly(res.alpha) <= min(poly(0.0), poly(1.0))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(0, 30))
def test_line_search_matches_grid_scan(seed, j):
    rng = np.random.default_rng(seed)
    n = 40
    cap, c0 = rng.uniform(100, 500, n), rng.uniform(1, 10, n)
    net = Network([Link(a, a, a + 1, cap[a], c0[a]) for a in range(n)])
    f, g = rng.uniform(0, 800, n), rng.uniform(0, 800, n) * rng.integers(0, 2, n)
    poly = segment_polynomial(c0, cap, f, g)
    best, c_best = grid_scan(poly)
    res = line_search(net, f, g, j)
    assert 0.0 <= res.alpha <= 1.0
    assert abs(res.alpha - best) < 1e-3
    assert poly(res.alpha) <= c_best * (1 + 1e-8)


def test_all_or_nothing_worked_example(serial):
    net = serial.network
    index = preprocess(net)
    [part] = partition_demand(DemandMatrix({(1, 4): 175.0}), 1)
    paths, flows = all_or_nothing(net, index, 15.0, part, net.free_flow_time)
    np.testing.assert_array_equal(flows, [175.0, 175.0, 0.0, 0.0])
    [(key, rate)] = paths.items()
    assert key.kept_links.tolist() == [0, 1] and rate == 175.0
    empty, zero = all_or_nothing(net, index, 15.0, DemandMatrix(), net.free_flow_time)
    assert len(empty) == 0 and not zero.any()


def test_all_or_nothing_partition_invariant():
    rng = np.random.default_rng(9)
    net = random_network(rng, 30, 100)
    demand = DemandMatrix({(int(p), int(q)): float(r) for p, q, r in
                           zip(rng.integers(0, 30, 10), rng.integers(0, 30, 10), rng.integers(1, 500, 10)) if p != q})
    index = preprocess(net)
    _, whole = all_or_nothing(net, index, 20.0, demand, net.free_flow_time)
    halves = [all_or_nothing(net, index, 20.0, part, net.free_flow_time)[1]
              for part in partition_demand(demand, 2)]
    np.testing.assert_array_equal(halves[0] + halves[1], whole)


def test_unroutable_pairs_are_reported(serial):
    res = fw(serial.network, {(1, 4): 100.0, (5, 1): 30.0})
    assert res.unroutable == [(5, 1, 30.0)]
    assert res.link_flows[:3].tolist() == [100.0, 100.0, 100.0]


def test_worked_example_first_interval(serial):
    res = fw(serial.network, {(1, 4): 175.0}, dt=15.0)
    assert res.iterations == 1 and res.converged
    np.testing.assert_array_equal(res.link_flows, [175.0, 175.0, 0.0, 0.0])


def test_zero_demand(serial):
    res = fw(serial.network, {})
    assert res.iterations == 1 and res.converged and not res.link_flows.any()
    np.testing.assert_array_equal(res.costs, serial.network.free_flow_time)


def test_symmetric_two_routes_split_evenly():
    res = fw(two_route_network(), {(0, 1): 1000.0})
    assert res.link_flows == pytest.approx([500.0, 500.0], rel=5e-3)


def test_msa_first_full_step_can_stop_on_a_mirror_image():
    # step 1 moves everything to the twin route; equal potentials pass the stop test
    res = fw(two_route_network(), {(0, 1): 1000.0}, strategy=StepSizeStrategy(MSA))
    assert res.iterations == 1 and res.converged
    assert sorted(res.link_flows.tolist()) == [0.0, 1000.0]


def test_msa_reaches_equilibrium_on_asymmetric_routes():
    r1, r2 = (10.0, 200.0), (14.0, 400.0)
    res = fw(two_route_network(r1, r2), {(0, 1): 700.0}, strategy=StepSizeStrategy(MSA), tol=1e-6,
             max_iters=1000)
    x = two_route_split(700.0, r1, r2)
    assert res.link_flows[0] == pytest.approx(x, rel=2e-2)


@pytest.mark.parametrize("r1,r2,demand", [((10.0, 200.0), (14.0, 400.0), 700.0),
                                          ((5.0, 100.0), (8.0, 300.0), 350.0),
                                          ((10.0, 200.0), (30.0, 200.0), 100.0)])
def test_asymmetric_two_routes_match_root_solve(r1, r2, demand):
    res = fw(two_route_network(r1, r2), {(0, 1): demand})
    x = two_route_split(demand, r1, r2)
    assert res.link_flows == pytest.approx([x, demand - x], rel=1e-2, abs=1e-6 * demand)


def _random_instance(seed, n=30, links=110, pairs=60, scale=1.0):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, links)
    demand = {}
    for p, q in rng.integers(0, n, (pairs, 2)):
        if p != q:
            demand[(int(p), int(q))] = demand.get((int(p), int(q)), 0.0) + rng.uniform(20, 200) * scale
    return net, demand


@pytest.mark.parametrize("seed", range(4))
def test_descent_and_feasibility(seed):
    net, demand = _random_instance(seed)
    res = fw(net, demand, max_iters=60)
    trace = res.potential_trace
    assert all(b <= a * (1 + 1e-10) for a, b in zip(trace, trace[1:]))
    assert (res.link_flows >= 0).all()
    assert all(0.0 <= row.alpha <= 1.0 for row in res.trace)
    # link flows are exactly what the returned path flows load
    loaded = sum(m.link_flows(net.n_links) for m in res.path_flows)
    np.testing.assert_allclose(loaded, res.link_flows, rtol=1e-9, atol=1e-9)


def test_line_search_needs_no_more_iterations_than_msa():
    net = two_route_network((10.0, 200.0), (12.0, 300.0))
    ls = fw(net, {(0, 1): 900.0})
    msa = fw(net, {(0, 1): 900.0}, strategy=StepSizeStrategy(MSA))
    assert ls.converged and msa.converged
    assert ls.iterations <= msa.iterations


def test_wardrop_on_two_route_networks():
    for r2, demand in [((10.0, 200.0), 800.0), ((14.0, 400.0), 700.0)]:
        net = two_route_network((10.0, 200.0), r2)
        res = fw(net, {(0, 1): demand})
        used = [a for a in range(2) if res.link_flows[a] >= 0.01 * demand]
        assert len(used) == 2
        assert max(res.costs) <= 1.02 * min(res.costs)


def test_iteration_cap_flags_unconverged(caplog):
    net, demand = _random_instance(1, scale=3.0)
    res = fw(net, demand, max_iters=3)
    assert res.iterations == 3 and not res.converged
    assert "iteration cap" in caplog.text


def test_iteration_cap_returns_best_iterate():
    # the first MSA step moves everything onto the slower twin and raises the potential
    net = two_route_network((10.0, 200.0), (10.5, 200.0))
    res = fw(net, {(0, 1): 1000.0}, strategy=StepSizeStrategy(MSA), max_iters=1)
    assert not res.converged and res.potential_trace[1] > res.potential_trace[0]
    np.testing.assert_array_equal(res.link_flows, [1000.0, 0.0])
    np.testing.assert_array_equal(res.path_flows[0].link_flows(2), res.link_flows)
    np.testing.assert_array_equal(res.costs, net.travel_times(res.link_flows))


@pytest.mark.parametrize("backend", ["serial", "thread", "process"])
def test_worker_counts_agree(backend):
    from qdta.assignment import routing_pool
    net, demand = _random_instance(2)
    base = fw(net, demand)
    with routing_pool(net, 4, backend) as pool:
        res = frank_wolfe(net, None, None, partition_demand(DemandMatrix(demand), 4), pool=pool)
        again = frank_wolfe(net, None, None, partition_demand(DemandMatrix(demand), 4), pool=pool)
    np.testing.assert_allclose(res.link_flows, base.link_flows, rtol=1e-9)
    np.testing.assert_array_equal(res.link_flows, again.link_flows)
    assert res.iterations == base.iterations


def test_paths_are_shortest_at_their_generation(serial):
    res = fw(serial.network, {(1, 5): 100.0})
    index = customize(preprocess(serial.network), res.costs)
    [(key, _)] = res.path_flows[0].items()
    assert tuple(key.links.tolist()) == query(index, 1, 5).links


def test_truncated_routes_store_a_bounded_prefix():
    chain = Network([Link(a, a, a + 1, 100.0, 5.0) for a in range(10)])
    res = frank_wolfe(chain, None, 15.0, partition_demand(DemandMatrix({(0, 10): 50.0}), 1))
    [(key, rate)] = res.path_flows[0].items()
    # links entered at 0, 5 and 10 minutes, plus one link that proves the route goes on
    assert key.links.tolist() == [0, 1, 2, 3] and key.kept == 3 and not key.finished
    _, left = retruncate_paths(chain, res.path_flows[0], res.costs, 15.0)
    assert left == {(3, 10): rate}
