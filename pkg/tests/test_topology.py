"""Network construction, churn, cost synthesis, and degree distributions."""

import math
from dataclasses import replace

import numpy as np
import pytest

from foglearn import topology
from foglearn.topology import ChurnConfig, DegreeDistribution, NetworkState


def test_fully_connected_has_all_ordered_pairs():
    state = topology.build_fully_connected(4, horizon=2)
    assert state.n == 4 and state.horizon == 2
    for t in range(2):
        assert state.active[t] == frozenset(range(4))
        assert len(state.edges[t]) == 4 * 3
        assert (0, 0) not in state.edges[t]


def test_fully_connected_rejects_single_device():
    with pytest.raises(ValueError):
        topology.build_fully_connected(1)


def test_singleton_has_no_links():
    state = topology.build_singleton(horizon=3)
    assert state.n == 1
    assert all(len(e) == 0 for e in state.edges)
    assert all(a == frozenset({0}) for a in state.active)


def test_random_topology_density_extremes():
    empty = topology.build_random(5, 0.0, seed=1)
    full = topology.build_random(5, 1.0, seed=1)
    assert len(empty.edges[0]) == 0
    assert len(full.edges[0]) == 5 * 4


def test_random_topology_is_seeded_and_constant_in_time():
    a = topology.build_random(6, 0.4, seed=9, horizon=3)
    b = topology.build_random(6, 0.4, seed=9, horizon=3)
    assert a.edges == b.edges
    assert a.edges[0] == a.edges[1] == a.edges[2]


def test_random_topology_density_tracks_probability():
    # each ordered pair is present independently with probability rho
    hits = 0
    pairs = 0
    for seed in range(30):
        state = topology.build_random(6, 0.3, seed=seed)
        hits += len(state.edges[0])
        pairs += 6 * 5
    assert abs(hits / pairs - 0.3) < 0.05


def test_watts_strogatz_degree_budget():
    state = topology.build_watts_strogatz(12, neighbors=4, rewire_p=0.0, seed=0)
    # ring lattice, no rewiring: every device keeps exactly 4 undirected links
    assert len(state.edges[0]) == 12 * 4
    out = {i: 0 for i in range(12)}
    for i, _ in state.edges[0]:
        out[i] += 1
    assert all(v == 4 for v in out.values())


def test_watts_strogatz_rewiring_preserves_edge_count():
    state = topology.build_watts_strogatz(20, neighbors=6, rewire_p=0.5, seed=3)
    assert len(state.edges[0]) == 20 * 6


def test_watts_strogatz_rejects_odd_neighbor_count():
    with pytest.raises(ValueError):
        topology.build_watts_strogatz(10, neighbors=3, rewire_p=0.1, seed=0)


def test_hierarchical_picks_cheapest_parents():
    costs = np.array([0.9, 0.1, 0.8, 0.2, 0.7, 0.6])
    state = topology.build_hierarchical(6, costs, seed=5)
    parents = {1, 3}  # two cheapest processors
    children = {0, 2, 4, 5}
    for i, j in state.edges[0]:
        assert (i in parents) != (j in parents)  # strictly leaf<->parent links
    # every leaf is wired to exactly one parent, both directions
    leaf_out = {}
    for i, j in state.edges[0]:
        if i in children:
            leaf_out.setdefault(i, set()).add(j)
    assert set(leaf_out) == children
    assert all(len(v) == 1 for v in leaf_out.values())
    for i, j in state.edges[0]:
        assert (j, i) in state.edges[0]


def test_hierarchical_breaks_cost_ties_by_lower_id():
    costs = np.full(6, 0.5)
    state = topology.build_hierarchical(6, costs, seed=0)
    # all costs equal: the two lowest ids become the hubs
    hubs = {j for i, j in state.edges[0] if i >= 2}
    assert hubs == {0, 1}
    assert all((i in hubs) != (j in hubs) for i, j in state.edges[0])


def test_hierarchical_needs_divisible_size():
    with pytest.raises(ValueError):
        topology.build_hierarchical(7, np.ones(7), seed=0)


def test_churn_starts_all_active_and_respects_extremes():
    base = topology.build_fully_connected(5, horizon=8)
    stay = topology.apply_churn(base, ChurnConfig(0.0, 0.0, seed=1))
    assert all(a == frozenset(range(5)) for a in stay.active)
    gone = topology.apply_churn(base, ChurnConfig(1.0, 0.0, seed=1))
    assert gone.active[0] == frozenset(range(5))
    assert all(len(a) == 0 for a in gone.active[1:])


def test_churn_stationary_fraction():
    base = topology.build_fully_connected(10, horizon=4000)
    churned = topology.apply_churn(base, ChurnConfig(0.02, 0.08, seed=7))
    frac = np.mean([len(a) for a in churned.active[1000:]]) / 10
    assert abs(frac - 0.8) < 0.05  # stationary p_entry/(p_exit+p_entry)


def test_churn_restricts_edges_to_members():
    base = topology.build_fully_connected(6, horizon=20)
    churned = topology.apply_churn(base, ChurnConfig(0.3, 0.3, seed=2))
    for t in range(20):
        for i, j in churned.edges[t]:
            assert i in churned.active[t] and j in churned.active[t]


def test_validate_rejects_bad_states():
    state = topology.build_fully_connected(3, horizon=1)
    with pytest.raises(ValueError):
        replace(state, edges=(frozenset({(0, 0)}),)).validate()
    with pytest.raises(ValueError):
        replace(state, active=(frozenset({0, 1}),)).validate()  # edge to device 2
    bad_cost = state.proc_cost.copy()
    bad_cost[0, 0] = np.nan
    with pytest.raises(ValueError):
        replace(state, proc_cost=bad_cost).validate()
    bad_cap = state.proc_cap.copy()
    bad_cap[0, 1] = -2.0
    with pytest.raises(ValueError):
        replace(state, proc_cap=bad_cap).validate()


def test_neighbor_queries_are_sorted():
    state = topology.build_watts_strogatz(10, neighbors=4, rewire_p=0.3, seed=11)
    for i in range(10):
        out = state.out_neighbors(0, i)
        assert out == sorted(out)
        for j in out:
            assert i in state.in_neighbors(0, j)


def test_uniform_costs_bounds_and_determinism():
    state = topology.build_fully_connected(4, horizon=5)
    a = topology.draw_uniform_costs(state, 0.2, 0.9, seed=3)
    b = topology.draw_uniform_costs(state, 0.2, 0.9, seed=3)
    assert np.array_equal(a.proc_cost, b.proc_cost)
    assert np.array_equal(a.link_cost, b.link_cost)
    assert a.proc_cost.min() >= 0.2 and a.proc_cost.max() <= 0.9
    assert a.link_cost.min() >= 0.2 and a.link_cost.max() <= 0.9


def test_error_weight_schedules():
    state = topology.build_fully_connected(3, horizon=4)
    const = topology.set_error_weights(state, 0.5)
    assert np.all(const.err_weight == 0.5)
    decay = topology.set_error_weights(state, 0.8, "inverse_time")
    for t in range(4):
        assert decay.err_weight[t, 0] == pytest.approx(0.8 / (1 + t))
    with pytest.raises(ValueError):
        topology.set_error_weights(state, 0.5, "linear_ramp")


def test_cost_trace_round_trip(tmp_path):
    state = topology.build_fully_connected(2, horizon=2)
    trace = tmp_path / "costs.csv"
    trace.write_text(
        "t,i,j,value\n"
        "# comment line\n"
        "0,0,,10\n"
        "1,0,,30\n"
        "0,1,,20\n"
        "1,1,,20\n"
        "0,0,1,5\n"
        "1,0,1,15\n"
        "0,1,0,10\n"
        "1,1,0,10\n"
    )
    loaded = topology.load_cost_trace(state, str(trace))
    # node series scaled to [0, 1] over all node entries: 10->0, 30->1, 20->0.5
    assert loaded.proc_cost[0, 0] == pytest.approx(0.0)
    assert loaded.proc_cost[1, 0] == pytest.approx(1.0)
    assert loaded.proc_cost[0, 1] == pytest.approx(0.5)
    # link series scaled separately: 5->0, 15->1, 10->0.5
    assert loaded.link_cost[0, 0, 1] == pytest.approx(0.0)
    assert loaded.link_cost[1, 0, 1] == pytest.approx(1.0)
    assert loaded.link_cost[0, 1, 0] == pytest.approx(0.5)


def test_cost_trace_fills_missing_with_series_mean(tmp_path, caplog):
    state = topology.build_fully_connected(2, horizon=3)
    trace = tmp_path / "gaps.csv"
    trace.write_text(
        "0,0,,1\n"
        "1,0,,3\n"
        "0,1,,2\n"
        "0,0,1,4\n"
    )
    with caplog.at_level("INFO"):
        loaded = topology.load_cost_trace(state, str(trace))
    # device 0 observed at 0 and 1 (scaled 0 and 1): slot 2 takes their mean
    assert loaded.proc_cost[2, 0] == pytest.approx(0.5)
    # device 1 observed once (scaled 0.5): the mean fill repeats it
    assert loaded.proc_cost[1, 1] == pytest.approx(0.5)
    # link (1,0) never observed: filled with zero
    assert loaded.link_cost[0, 1, 0] == 0.0
    assert any("missing" in r.message for r in caplog.records)


def test_cost_trace_reports_position_of_bad_rows(tmp_path):
    state = topology.build_fully_connected(2, horizon=1)
    trace = tmp_path / "bad.csv"
    trace.write_text("0,0,,1\n0,zero,,2\n")
    with pytest.raises(ValueError) as err:
        topology.load_cost_trace(state, str(trace))
    assert ":2" in str(err.value)
    trace.write_text("0,0,,1\n5,0,,2\n")
    with pytest.raises(ValueError, match="outside"):
        topology.load_cost_trace(state, str(trace))


def test_degree_distribution_basics():
    dist = DegreeDistribution((0.25, 0.5, 0.25))
    assert dist.max_degree == 3
    assert dist.mean_degree() == pytest.approx(2.0)
    with pytest.raises(ValueError):
        DegreeDistribution((0.5, 0.6))
    with pytest.raises(ValueError):
        DegreeDistribution(())


def test_degree_distribution_size_biasing():
    dist = DegreeDistribution((0.5, 0.5))
    biased = dist.size_biased()
    # P(k) proportional to k p_k: (1*0.5, 2*0.5)/1.5
    assert biased.probabilities() == pytest.approx([1 / 3, 2 / 3])


def test_point_mass_and_power_law():
    pm = DegreeDistribution.point_mass(3, max_degree=5)
    assert pm.probabilities()[2] == 1.0 and pm.max_degree == 5
    pl = DegreeDistribution.truncated_power_law(6, 2.0)
    p = pl.probabilities()
    assert p.sum() == pytest.approx(1.0)
    assert all(p[k] > p[k + 1] for k in range(5))
    ratio = p[1] / p[0]
    assert ratio == pytest.approx(2.0 ** -2.0)
