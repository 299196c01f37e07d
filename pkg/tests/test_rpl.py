"""Non-storing RPL: parent choice, DIS handling, root table and source routes."""
import random

import networkx as nx
import pytest
from hypothesis import given, strategies as st

from conftest import det_cfg, settled
from sdnmesh.kernel import SEC, Simulator, seconds
from sdnmesh.rpl import (DaoMessage, DioMessage, NoRoute, RootRouteTable, RplAgent, RplConfig,
                         parents_acyclic)


class Wire:
    """RPL agents joined by an ideal link layer with optional loss."""

    def __init__(self, adj, seed=1, loss=0.0, cfg=None, on_change=None):
        self.sim = Simulator(seed=seed)
        self.adj = {i: set(v) for i, v in adj.items()}
        self.loss = loss
        self.rng = random.Random(seed)
        self.cfg = cfg or RplConfig()
        self.log = []
        self.agents = {}
        for i in sorted(adj):
            self.agents[i] = RplAgent(
                i, self.sim, self.sim.rng(i), self.cfg, is_root=i == 0,
                send_dio=lambda dio, i=i: self._flood(i, "dio", dio),
                send_dao=lambda dao: self.sim.schedule_in(1000, self._dao, dao),
                send_dis=lambda i=i: self._flood(i, "dis", i),
                link_quality=lambda j, i=i: 1.0 if j in self.adj[i] else 0.0,
                on_parent_change=on_change)
        self.table = self.agents[0].table

    def _flood(self, sender, kind, msg):
        self.log.append((self.sim.now, kind, sender))
        for j in sorted(self.adj[sender]):
            if self.rng.random() >= self.loss:
                target = self.agents[j]
                fn = target.on_dio if kind == "dio" else target.on_dis
                self.sim.schedule_in(1000, fn, msg)

    def _dao(self, dao):
        self.log.append((self.sim.now, "dao", dao.sender))
        self.table.root_register_dao(dao, self.sim.now)

    def parents(self):
        return {i: a.state.preferred_parent for i, a in self.agents.items()}


def _agent(is_root=False, quality=1.0, cfg=None):
    sim = Simulator()
    sent = {"dio": [], "dao": [], "dis": []}
    agent = RplAgent(5, sim, sim.rng(5), cfg or RplConfig(), is_root=is_root,
                     send_dio=sent["dio"].append, send_dao=sent["dao"].append,
                     send_dis=lambda: sent["dis"].append(1), link_quality=lambda j: quality)
    return sim, agent, sent


def test_first_dio_from_root_joins_one_hop_down():
    sim, agent, sent = _agent()
    agent.boot()
    assert agent.on_dio(DioMessage(0, 0)) == (None, 0)
    assert agent.state.joined and agent.state.rank == 256 and agent.state.preferred_parent == 0
    sim.run_until(1)
    assert sent["dao"] == [DaoMessage(5, 0, seconds(300))]


def test_equal_rank_tiebreak_lowest_id():
    _, agent, _ = _agent()
    agent.on_dio(DioMessage(9, 256))
    agent.on_dio(DioMessage(4, 256))
    assert agent.state.preferred_parent == 4


def test_stale_version_ignored():
    _, agent, _ = _agent()
    agent.state.dodag_version = 2
    assert agent.on_dio(DioMessage(0, 0, version=1)) is None
    assert not agent.state.joined


def test_etx_objective_weights_by_link_quality():
    _, agent, _ = _agent(quality=0.5, cfg=RplConfig(objective="etx"))
    agent.on_dio(DioMessage(0, 0))
    assert agent.state.rank == 512


def test_grid_parents_lie_on_bfs_shortest_paths():
    cfg = det_cfg(n=9, spacing=30.0)
    net = settled(cfg, until=60 * SEC)
    g = nx.Graph(net.medium.graph_edges())
    depth = nx.single_source_shortest_path_length(g, 0)
    assert max(depth.values()) == 2
    for node in net.nodes[1:]:
        st_ = node.rpl.state
        assert st_.joined
        assert depth[st_.preferred_parent] == depth[node.id] - 1
        assert st_.rank == 256 * depth[node.id]


def test_dis_makes_joined_neighbor_send_one_dio():
    wire = Wire({0: {1}, 1: {0}})
    wire.agents[0].boot()
    wire.sim.run_until(seconds(60))
    before = wire.agents[0].dio_sent
    assert wire.agents[0].on_dis(1) is True
    wire.sim.run_until(seconds(60) + wire.cfg.trickle_imin)
    assert wire.agents[0].dio_sent == before + 1


def test_unjoined_node_ignores_dis():
    sim, agent, sent = _agent()
    assert agent.on_dis(3) is False
    sim.run_until(seconds(30))
    assert sent["dio"] == []


def test_late_joiner_needs_one_dis_dio_dao_exchange():
    wire = Wire({0: set(), 1: set()})
    wire.agents[0].boot()
    wire.sim.run_until(seconds(60))
    wire.log.clear()
    # node 1 powers up next to the root
    wire.adj = {0: {1}, 1: {0}}
    wire.agents[1].boot()
    wire.sim.run_until(seconds(60) + SEC + wire.cfg.trickle_imin + 10_000)
    # the joiner's own first DIO follows but is not part of the exchange
    kinds = [(k, s) for _, k, s in wire.log if (k, s) != ("dio", 1)]
    assert kinds == [("dis", 1), ("dio", 0), ("dao", 1)]
    assert wire.agents[1].state.joined
    assert wire.table.build_source_route(1, wire.sim.now) == [0, 1]


def test_dao_expires_after_lifetime():
    table = RootRouteTable(0)
    table.root_register_dao(DaoMessage(1, 0, seconds(300)), 0)
    assert table.lookup(1, seconds(300)) == 0
    assert table.lookup(1, seconds(301)) is None


def test_dao_refresh_extends_expiry():
    table = RootRouteTable(0)
    table.root_register_dao(DaoMessage(1, 0, seconds(300)), 0)
    table.root_register_dao(DaoMessage(1, 0, seconds(300)), seconds(200))
    assert table.lookup(1, seconds(500)) == 0
    assert table.lookup(1, seconds(500) + 1) is None


def test_route_absent_one_tick_after_lifetime():
    table = RootRouteTable(0)
    table.root_register_dao(DaoMessage(1, 0, seconds(300)), 0)
    assert table.build_source_route(1, seconds(300)) == [0, 1]
    with pytest.raises(NoRoute):
        table.build_source_route(1, seconds(300) + 1)


def test_cyclic_dao_rejected():
    table = RootRouteTable(0)
    assert table.root_register_dao(DaoMessage(1, 2), 0)
    assert not table.root_register_dao(DaoMessage(2, 1), 0)
    assert table.rejected == 1


def test_source_route_examples():
    table = RootRouteTable(0)
    assert table.build_source_route(0, 0) == [0]
    table.root_register_dao(DaoMessage(1, 0), 0)
    table.root_register_dao(DaoMessage(2, 1), 0)
    assert table.build_source_route(2, 0) == [0, 1, 2]
    with pytest.raises(NoRoute):
        table.build_source_route(7, 0)


def test_random_dodag_routes_bounded_by_bfs():
    cfg = det_cfg(n=50)
    cfg.topology.kind = "random"
    cfg.topology.area = 300.0
    cfg.topology.seed = 7
    net = settled(cfg, until=120 * SEC)
    g = nx.Graph(net.medium.graph_edges())
    dist = nx.single_source_shortest_path_length(g, 0)
    table = net.nodes[0].rpl.table
    known = table.known(net.sim.now)
    assert len(known) == 49
    for dest in known:
        route = table.build_source_route(dest, net.sim.now)
        assert route[0] == 0 and route[-1] == dest
        assert len(route) - 1 >= dist[dest]
        for parent, child in zip(route, route[1:]):
            assert table.lookup(child, net.sim.now) == parent
            assert g.has_edge(parent, child)


def test_relays_store_no_downward_routes():
    net = settled(det_cfg(n=16, spacing=30.0), until=120 * SEC)
    assert all(node.rpl.table is None for node in net.nodes[1:])


def _random_adj(rng, n):
    g = nx.connected_watts_strogatz_graph(n, 3, 0.5, seed=rng.randrange(1 << 30)) if n > 3 else nx.path_graph(n)
    return {i: set(g[i]) for i in g}


def test_dodag_acyclic_across_randomized_runs():
    """1,000 lossy runs with random topology changes; checked after every parent change."""
    for run in range(1000):
        rng = random.Random(run)
        n = rng.randint(3, 10)
        adj = _random_adj(rng, n)
        state = {}

        def check(old, new):
            assert parents_acyclic(state["wire"].parents())

        loss = 0.0 if run % 2 else rng.uniform(0, 0.5)
        wire = Wire(adj, seed=run, loss=loss, on_change=check)
        state["wire"] = wire
        for a in wire.agents.values():
            a.boot()
        for _ in range(rng.randint(0, 3)):
            u = rng.randrange(n)
            if not wire.adj[u]:
                continue
            v = rng.choice(sorted(wire.adj[u]))
            wire.sim.schedule(rng.randrange(5 * SEC, 40 * SEC), _cut, wire, u, v)
        wire.sim.run_until(60 * SEC)
        parents = wire.parents()
        assert parents_acyclic(parents)
        for i, a in wire.agents.items():
            p = a.state.preferred_parent
            if p is None:
                continue
            # rank sits above what the parent last advertised
            assert a.state.rank > a.candidates[p]
            if loss == 0.0:
                # without lost DIOs that advertisement is also current
                assert wire.agents[p].state.rank < a.state.rank


def _cut(wire, u, v):
    wire.adj[u].discard(v)
    wire.adj[v].discard(u)
    for a, b in ((u, v), (v, u)):
        wire.agents[a].parent_lost(b)


@given(st.lists(st.tuples(st.integers(1, 8), st.integers(0, 8)), max_size=20))
def test_root_table_never_holds_a_cycle(daos):
    table = RootRouteTable(0)
    for sender, parent in daos:
        table.root_register_dao(DaoMessage(sender, parent), 0)
        parents = {n: table.lookup(n, 0) for n in table.entries}
        assert parents_acyclic(parents)
