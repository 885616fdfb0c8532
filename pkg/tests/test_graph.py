import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tndp.graph import (
    CityGraph, CityGraphError, CostWeights, RouteError, all_pairs_shortest_paths, assign,
    build_route_graph, evaluate_cost, evaluate_reward_cost, transit_assignment, validate_network,
)
from oracles import bellman_ford, random_city, reward_cost_spreadsheet, route_graph_enum, transit_enum


def line_city(n=3, tau=60.0, demand=None):
    pos = [(i * 900.0, 0.0) for i in range(n)]
    D = np.ones((n, n)) - np.eye(n) if demand is None else demand
    return CityGraph.from_edges(pos, [(i, i + 1, tau) for i in range(n - 1)], D)


def test_two_node_shortest_path():
    sp = all_pairs_shortest_paths(line_city(2))
    assert np.array_equal(sp.times, [[0, 60], [60, 0]])
    assert sp.path(0, 1) == (0, 1)


def test_forced_path_through_middle():
    sp = all_pairs_shortest_paths(line_city(3))
    assert sp.times[0, 2] == 120
    assert sp.path(0, 2) == (0, 1, 2)
    assert sp.path(2, 0) == (2, 1, 0)


def test_disconnected_city_names_pair():
    city = CityGraph.from_edges([(0, 0), (1, 0), (2, 0)], [(0, 1, 5.0)], np.zeros((3, 3)))
    with pytest.raises(CityGraphError, match="0 to 2"):
        all_pairs_shortest_paths(city)


def test_invariants_rejected():
    with pytest.raises(CityGraphError):
        CityGraph(np.zeros((2, 2)), np.array([[0, 1.0], [2.0, 0]]), np.zeros((2, 2)))
    with pytest.raises(CityGraphError):
        CityGraph(np.zeros((2, 2)), np.array([[0, 1.0], [1.0, 0]]), np.array([[0, 1.0], [2.0, 0]]))


def test_tie_break_fewer_nodes_then_lexicographic():
    # 0-1-3 and 0-2-3 both cost 2; 0-3 direct edge also costs 2 -> fewest nodes wins
    edges = [(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 1.0), (0, 3, 2.0)]
    city = CityGraph.from_edges(np.zeros((4, 2)), edges, np.zeros((4, 4)))
    assert all_pairs_shortest_paths(city).path(0, 3) == (0, 3)
    city = CityGraph.from_edges(np.zeros((4, 2)), edges[:4], np.zeros((4, 4)))
    assert all_pairs_shortest_paths(city).path(0, 3) == (0, 1, 3)


@pytest.mark.parametrize("seed", range(15))
def test_shortest_paths_match_bellman_ford(seed):
    rng = np.random.default_rng(seed)
    city = random_city(rng, int(rng.integers(2, 15)), integer_times=False)
    sp = all_pairs_shortest_paths(city)
    np.testing.assert_allclose(sp.times, bellman_ford(city.edge_times), rtol=1e-12)
    for i in range(city.n):
        for j in range(city.n):
            p = sp.path(i, j)
            assert p[0] == i and p[-1] == j
            assert np.isclose(sum(city.edge_times[a, b] for a, b in zip(p, p[1:])), sp.times[i, j])


def test_route_graph_induced_edges():
    city = line_city(5)
    edges = [(0, 1, 60.0), (1, 3, 60.0), (3, 4, 60.0), (1, 2, 60.0)]
    city = CityGraph.from_edges(np.zeros((5, 2)), edges, np.zeros((5, 5)))
    rg = build_route_graph(city, [(0, 1, 3, 4)])
    present = {(i, j) for i, j in zip(*np.nonzero(np.triu(rg.present)))}
    assert present == {(0, 1), (0, 3), (0, 4), (1, 3), (1, 4), (3, 4)}
    assert rg.direct_time[0, 4] == 180


def test_empty_network_route_graph():
    rg = build_route_graph(line_city(4), [])
    assert not rg.present.any()


def test_route_graph_rejects_cycles_and_non_edges():
    city = line_city(4)
    with pytest.raises(RouteError):
        build_route_graph(city, [(0, 1, 0)])
    with pytest.raises(RouteError):
        build_route_graph(city, [(0, 2)])


@pytest.mark.parametrize("seed", range(20))
def test_route_graph_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    city = random_city(rng, 7, integer_times=False)
    sp = all_pairs_shortest_paths(city)
    net = [sp.path(*rng.choice(7, 2, replace=False)) for _ in range(3)]
    rg = build_route_graph(city, net)
    np.testing.assert_allclose(rg.direct_time, route_graph_enum(city, net))
    assert np.array_equal(rg.direct_time, rg.direct_time.T)
    for i, j in zip(*np.nonzero(rg.present)):
        assert {i, j} <= set(net[rg.providing_route[i, j]])


def test_single_route_has_no_transfers():
    city = line_city(4)
    ta = assign(city, [(0, 1, 2, 3)])
    assert (ta.transfers[ta.connected] == 0).all()
    assert ta.transit_time[0, 3] == 180


def test_one_transfer_between_lines():
    # two lines crossing at node 2
    edges = [(0, 1, 60.0), (1, 2, 60.0), (2, 3, 60.0), (4, 2, 60.0), (2, 5, 60.0)]
    city = CityGraph.from_edges(np.zeros((6, 2)), edges, np.zeros((6, 6)))
    ta = assign(city, [(0, 1, 2, 3), (4, 2, 5)])
    assert ta.transfers[0, 5] == 1
    assert ta.transit_time[0, 5] == 180


@pytest.mark.parametrize("seed", range(25))
def test_transit_assignment_matches_leg_enumeration(seed):
    rng = np.random.default_rng(seed)
    city = random_city(rng, 7)
    sp = all_pairs_shortest_paths(city)
    net = [sp.path(*rng.choice(7, 2, replace=False)) for _ in range(int(rng.integers(1, 4)))]
    rg = build_route_graph(city, net)
    ta = transit_assignment(rg, 300.0)
    ref = transit_enum(route_graph_enum(city, net), 300.0)
    for i in range(7):
        for j in range(7):
            if i == j:
                assert not ta.connected[i, j]
                continue
            assert ta.connected[i, j] == ((i, j) in ref)
            if (i, j) in ref:
                (_cost, legs), ride = ref[(i, j)]
                assert ta.transfers[i, j] == legs - 1
                assert ta.transit_time[i, j] == pytest.approx(ride, abs=1e-9)


def weights_for(city, **kw):
    sp = all_pairs_shortest_paths(city)
    kw.setdefault("n_routes", 1)
    kw.setdefault("min_stops", 2)
    kw.setdefault("max_stops", 8)
    return CostWeights.for_city(sp, **kw), sp


def test_valid_network_has_zero_constraint_cost():
    city = line_city(4)
    w, _ = weights_for(city)
    c = evaluate_cost(city, [(0, 1, 2, 3)], w)
    assert c.cc == 0 and c.delta_v == 0
    assert c.d0 == pytest.approx(100.0)
    assert validate_network(city, [(0, 1, 2, 3)], w) == []


def test_network_connecting_no_demand_pairs():
    D = np.zeros((4, 4))
    D[0, 3] = D[3, 0] = 5.0
    city = line_city(4, demand=D)
    w, _ = weights_for(city)
    c = evaluate_cost(city, [(1, 2)], w)
    assert c.f_un == 1.0 and c.f_s == 0.0
    assert c.cc == pytest.approx(1.1)
    assert c.d_un == pytest.approx(100.0)


def test_cost_total_formula():
    city = line_city(4)
    w, sp = weights_for(city, alpha=0.3, n_routes=2)
    net = [(0, 1, 2), (2, 3)]
    c = evaluate_cost(city, net, w)
    ta = assign(city, net)
    D = city.demand
    cp = (D * (np.where(ta.connected, ta.transit_time + 300 * ta.transfers, 0))).sum() / D.sum()
    assert c.cp == pytest.approx(cp / 60)
    assert c.co == pytest.approx(180 / 60)
    expected = 0.3 * cp / sp.max_time + 0.7 * 180 / (2 * sp.max_time)
    assert c.total == pytest.approx(expected)


def test_stop_violation_term():
    city = line_city(4)
    w, _ = weights_for(city, n_routes=2, min_stops=3, max_stops=3)
    c = evaluate_cost(city, [(0, 1), (0, 1, 2, 3)], w)
    assert c.f_s == pytest.approx(2 / (2 * 3))


def test_violations_named():
    city = line_city(4)
    w, _ = weights_for(city, n_routes=2, min_stops=2)
    v = validate_network(city, [(0,), (1, 2)], w)
    kinds = {x.kind for x in v}
    assert kinds == {"stop_count", "connectedness"}
    stop = next(x for x in v if x.kind == "stop_count")
    assert stop.route == 0
    conn = next(x for x in v if x.kind == "connectedness")
    ta = assign(city, [(0,), (1, 2)])
    expected = {(i, j) for i in range(4) for j in range(i + 1, 4) if not ta.connected[i, j]}
    assert set(conn.pairs) == expected
    assert any(x.kind == "route_count" for x in validate_network(city, [(0, 1, 2, 3)], w))
    assert any(x.kind == "simple_path" for x in validate_network(city, [(0, 2), (0, 1, 2, 3)], w))


def test_reward_cost_conventions():
    city = line_city(4)
    w, sp = weights_for(city, alpha=1.0)
    # fully connected: C'_p == C_p and no constraint term
    net = [(0, 1, 2, 3)]
    c = evaluate_cost(city, net, w)
    assert evaluate_reward_cost(city, net, w, sp) == pytest.approx(w.w_p * c.cp * 60)
    # empty: every trip charged twice the diameter, plus beta * 1.1
    assert evaluate_reward_cost(city, [], w, sp) == pytest.approx(w.w_p * 2 * sp.max_time + w.beta * 1.1)


@pytest.mark.parametrize("seed", range(10))
def test_reward_cost_spreadsheet(seed):
    rng = np.random.default_rng(seed)
    city = random_city(rng, 5)
    w, sp = weights_for(city, alpha=float(rng.uniform()), n_routes=3)
    net = [sp.path(*rng.choice(5, 2, replace=False)) for _ in range(int(rng.integers(0, 3)))]
    assert evaluate_reward_cost(city, net, w, sp) == pytest.approx(
        reward_cost_spreadsheet(city, net, w, sp.max_time), rel=1e-12)


@st.composite
def city_and_network(draw, max_n=7, max_routes=3):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, max_n))
    city = random_city(rng, n)
    sp = all_pairs_shortest_paths(city)
    k = draw(st.integers(1, max_routes))
    net = [sp.path(*rng.choice(n, 2, replace=False)) for _ in range(k)]
    return city, sp, net


@settings(max_examples=60, deadline=None)
@given(city_and_network(), st.floats(0, 1), st.floats(0, 1))
def test_total_affine_in_alpha(data, a1, a2):
    city, sp, net = data
    w = CostWeights.for_city(sp, n_routes=len(net), min_stops=2, max_stops=8)
    c = evaluate_cost(city, net, w)
    t1 = evaluate_cost(city, net, w.with_alpha(a1)).total
    t2 = evaluate_cost(city, net, w.with_alpha(a2)).total
    slope = w.w_p * c.cp * 60 - w.w_o * c.co * 60
    assert t2 - t1 == pytest.approx(slope * (a2 - a1), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(city_and_network())
def test_removing_route_shrinks_connectivity(data):
    city, _, net = data
    full = assign(city, net).connected
    reduced = assign(city, net[1:]).connected
    assert not (reduced & ~full).any()


@settings(max_examples=60, deadline=None)
@given(city_and_network())
def test_beta_zero_ignores_constraints(data):
    city, sp, net = data
    w = CostWeights.for_city(sp, n_routes=len(net), min_stops=5, max_stops=5, beta=0.0)
    c = evaluate_cost(city, net, w)
    assert c.total == pytest.approx(w.alpha * w.w_p * c.cp * 60 + (1 - w.alpha) * w.w_o * c.co * 60)
    assert c.d0 + c.d1 + c.d2 + c.d_un == pytest.approx(100.0, abs=1e-6)
    assert (c.cc == 0) == (c.f_un == 0 and c.f_s == 0)


@settings(max_examples=60, deadline=None)
@given(city_and_network(max_routes=1))
def test_single_route_assignment(data):
    city, _, net = data
    ta = assign(city, net)
    r = net[0]
    full = sum(city.edge_times[a, b] for a, b in zip(r, r[1:]))
    assert (ta.transfers[ta.connected] == 0).all()
    assert (ta.transit_time[ta.connected] <= full + 1e-9).all()
