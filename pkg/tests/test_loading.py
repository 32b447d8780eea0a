import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdta import ConfigError, Path, PathFlowMap, PathKey, StructuralError, path_flows_to_link_flows, truncate_path
from qdta.loading import kept_count, retruncate_paths, truncate_many

from oracles import walk_stop

SERIAL = Path((1, 2, 3, 4), (0, 1, 2), 25.0)
COSTS = np.array([10.0, 6.39, 12.4, 10.0])

routes = st.lists(st.floats(0.01, 30.0), min_size=1, max_size=12)


def chain(n):
    return Path(tuple(range(n + 1)), tuple(range(n)), float(n))


def test_worked_example_truncations():
    t = truncate_path(SERIAL, COSTS, 15.0)
    assert t.kept_links == (0, 1) and t.stop_node == 3 and not t.finished
    t2 = truncate_path(Path((3, 4, 5), (2, 3), 22.4), COSTS, 15.0)
    assert t2.kept_links == (2, 3) and t2.stop_node == 5 and t2.finished
    full = truncate_path(SERIAL, COSTS, 60.0)
    assert full.finished and full.stop_node == 4
    assert truncate_path(SERIAL, COSTS, None).finished


def test_entry_at_exactly_interval_end_is_not_loaded():
    # free-flow clock reaches node 3 at exactly 15 minutes
    t = truncate_path(SERIAL, [10.0, 5.0, 10.0, 10.0], 15.0)
    assert t.kept_links == (0, 1) and t.stop_node == 3


def test_first_link_longer_than_interval_still_advances(caplog):
    with caplog.at_level(logging.WARNING):
        t = truncate_path(SERIAL, COSTS, 5.0)
    assert t.kept_links == (0,) and t.stop_node == 2
    assert "shorter than first link" in caplog.text


def test_trivial_and_invalid():
    empty = Path((3,), (), 0.0)
    t = truncate_path(empty, COSTS, 15.0)
    assert t.finished and t.stop_node == 3 and t.kept_links == ()
    with pytest.raises(ConfigError):
        truncate_path(SERIAL, COSTS, 0.0)
    with pytest.raises(ConfigError):
        truncate_path(SERIAL, COSTS, -1.0)


@given(routes, st.floats(0.01, 100.0))
def test_kept_links_form_a_prefix(costs, dt):
    path = chain(len(costs))
    t = truncate_path(path, costs, dt)
    k = len(t.kept_links)
    assert 1 <= k <= len(costs)
    assert t.kept_links == path.links[:k]
    assert t.stop_node == path.nodes[k]
    assert t.finished == (k == len(costs))
    # every kept link is entered strictly before the interval ends
    assert math.fsum(costs[:k - 1]) < dt or k == 1
    if k < len(costs):
        assert math.fsum(costs[:k]) >= dt * (1 - 1e-12)


@given(routes, st.floats(0.01, 100.0), st.floats(0.0, 50.0))
def test_longer_interval_never_shortens(costs, dt, extra):
    assert kept_count(costs, dt + extra) >= kept_count(costs, dt)


def test_matches_walk_on_random_integer_routes():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        costs = rng.integers(1, 21, rng.integers(1, 5)).tolist()
        dt = int(rng.integers(1, 61))
        assert kept_count(costs, dt) == walk_stop(costs, dt)


@given(st.lists(routes, min_size=1, max_size=8), st.floats(0.5, 60.0))
def test_vectorized_truncation_agrees(route_costs, dt):
    longest = max(len(r) for r in route_costs)
    ids = np.full((longest, len(route_costs)), -1)
    costs = []
    for j, r in enumerate(route_costs):
        ids[:len(r), j] = np.arange(len(costs), len(costs) + len(r))
        costs += r
    lengths = (ids >= 0).sum(axis=0)
    got = truncate_many(ids, lengths, np.array(costs), dt)
    assert got.tolist() == [kept_count(r, dt) for r in route_costs]
    assert truncate_many(ids, lengths, np.array(costs), None).tolist() == lengths.tolist()


def test_link_flow_mapping_examples():
    h = PathFlowMap()
    h.add(PathKey.from_links(1, 4, [0, 1, 2], kept=2), 175.0)
    np.testing.assert_array_equal(path_flows_to_link_flows(h, 4), [175.0, 175.0, 0.0, 0.0])
    np.testing.assert_array_equal(path_flows_to_link_flows(PathFlowMap(), 3), np.zeros(3))
    two = PathFlowMap()
    two.add(PathKey.from_links(0, 2, [0, 1]), 100.0)
    two.add(PathKey.from_links(5, 2, [3, 1]), 100.0)
    assert path_flows_to_link_flows(two, 4)[1] == 200.0
    bad = PathFlowMap()
    bad.add(PathKey.from_links(0, 1, [7]), 1.0)
    with pytest.raises(StructuralError):
        path_flows_to_link_flows(bad, 4)


@given(st.lists(st.tuples(st.lists(st.integers(0, 19), min_size=1, max_size=6, unique=True),
                          st.integers(1, 6), st.integers(1, 1000)), max_size=20))
def test_flow_conservation(entries):
    h = PathFlowMap()
    for j, (links, kept, rate) in enumerate(entries):
        h.add(PathKey.from_links(j, 100 + j, links, min(kept, len(links))), float(rate))
    f = path_flows_to_link_flows(h, 20)
    # integer rates keep the sums exact
    assert f.sum() == sum(rate * key.kept for key, rate in h.items())


def test_path_key_accessors(serial):
    key = PathKey.from_links(1, 4, [0, 1, 2], kept=2)
    assert key.links.tolist() == [0, 1, 2] and key.kept_links.tolist() == [0, 1]
    assert not key.finished and key.retruncated(3).finished
    assert key.stop_node(serial.network) == 3
    assert PathKey.from_links(1, 4, [0, 1, 2], kept=0).stop_node(serial.network) == 1
    assert key == PathKey.from_links(1, 4, np.array([0, 1, 2]), kept=2)
    assert hash(key) == hash(PathKey.from_links(1, 4, (0, 1, 2), 2))


def test_blend_is_convex_combination():
    a, b = PathFlowMap(), PathFlowMap()
    ka, kb = PathKey.from_links(0, 1, [0]), PathKey.from_links(0, 1, [1])
    a.add(ka, 100.0)
    b.add(kb, 100.0)
    mixed = a.blend(b, 0.25)
    assert mixed.flows == {ka: 75.0, kb: 25.0}
    assert a.blend(b, 1.0).flows == {kb: 100.0}
    assert a.blend(b, 0.0).flows == {ka: 100.0}


def test_retruncation_collects_residual(serial):
    h = PathFlowMap(interval=0)
    h.add(PathKey.from_links(1, 4, [0, 1, 2], kept=3), 175.0)
    costs = [10.879, 6.389, 10.0, 10.0]
    truncated, left = retruncate_paths(serial.network, h, costs, 15.0)
    [(key, rate)] = truncated.items()
    assert key.kept == 2 and rate == 175.0
    assert left == {(3, 4): 175.0}
    done, none_left = retruncate_paths(serial.network, h, costs, None)
    assert none_left == {} and next(iter(done)).finished
