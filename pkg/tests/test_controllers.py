"""Controllers: joins, state updates, flow queries, queueing and failure repair."""
import math
import random

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from conftest import chain_positions, det_cfg, settled
from sdnmesh.controllers import (FLOW_QUERY, JOIN, STATE_UPDATE, ControllerPlacement, ControllerRequest,
                                 TopologyView, ctrl_processing_delay, dd1_response_times)
from sdnmesh.harness import controller_probe
from sdnmesh.kernel import MS, SEC, millis
from sdnmesh.network import Network
from sdnmesh.node import CONTROLLER, SIZES, Packet
from sdnmesh.rpl import DaoMessage
from sdnmesh.usdn import NsuMetrics


def _net(n=3, stack="usdn", positions=None, **kw):
    cfg = det_cfg(stack=stack, n=n, **kw)
    return Network(cfg, 1, positions=positions)


def _dao(net, sender, parent):
    return Packet("DAO", sender, CONTROLLER, SIZES["DAO"], body=DaoMessage(sender, parent, needs_conf=True))


def test_first_dao_registers_and_sends_one_conf():
    net = _net(n=9, spacing=30.0)
    ctrl = net.controller
    out = ctrl.ctrl_on_join(ControllerRequest(JOIN, 0, 7, _dao(net, 7, 4)))
    assert 7 in ctrl.subsystems.sensor_node_registry
    assert [(p.kind, p.dest) for p, _ in out] == [("CONF", 7)]


def test_duplicate_dao_is_idempotent_and_resends_conf():
    net = _net(n=9, spacing=30.0)
    ctrl = net.controller
    for _ in range(2):
        out = ctrl.ctrl_on_join(ControllerRequest(JOIN, 0, 7, _dao(net, 7, 4)))
        assert [(p.kind, p.dest) for p, _ in out] == [("CONF", 7)]
    assert list(ctrl.subsystems.sensor_node_registry) == [7]
    assert set(ctrl.view.nodes) == {7, 4}


def test_cold_start_issues_one_conf_per_node():
    cfg = det_cfg(n=50, spacing=20.0)
    net = settled(cfg, until=60 * SEC)
    assert all(node.configured for node in net.nodes)
    assert net.controller.responses["CONF"] == 50
    assert len(net.controller.subsystems.sensor_node_registry) == 50


def test_nsu_with_new_neighbor_adds_link_and_drops_cached_routes():
    net = _net(n=4, positions=chain_positions(4))
    ctrl = net.controller
    v = ctrl.view
    for i in range(4):
        v.touch(i, 0)
        ctrl.subsystems.sensor_node_registry[i] = 0
    v.add_link(0, 1)
    v.add_link(1, 2)
    v.add_link(2, 3)
    assert v.shortest_path(0, 3) == [0, 1, 2, 3]
    nsu = Packet("NSU", 3, CONTROLLER, 48, body=NsuMetrics(1.0, {2: 1.0, 0: 1.0}, 0))
    ctrl.ctrl_on_state_update(ControllerRequest(STATE_UPDATE, 5, 3, nsu))
    assert (0, 3) in v.links
    assert (0, 3, "hop") not in v.routes
    assert v.shortest_path(0, 3) == [0, 3]


def test_nsu_with_same_neighbors_only_refreshes_last_seen():
    net = _net(n=3, positions=chain_positions(3))
    ctrl = net.controller
    v = ctrl.view
    for i in range(3):
        v.touch(i, 0)
        ctrl.subsystems.sensor_node_registry[i] = 0
    v.add_link(1, 2)
    v.shortest_path(1, 2)
    links, routes = dict(v.links), dict(v.routes)
    net.sim.run_until(10 * SEC)
    nsu = Packet("NSU", 2, CONTROLLER, 48, body=NsuMetrics(1.0, {1: 1.0}, 0))
    assert ctrl.ctrl_on_state_update(ControllerRequest(STATE_UPDATE, net.sim.now, 2, nsu)) is None
    assert v.links == links and v.routes == routes
    assert v.nodes[2].last_seen == 10 * SEC


@pytest.mark.parametrize("stack", ["usdn", "sdnwise"])
def test_view_matches_medium_graph_after_reports(stack):
    net = settled(det_cfg(stack=stack, n=16, spacing=20.0), until=100 * SEC)
    assert set(net.controller.view.links) == net.medium.graph_edges()


def _chain_flow(stack, hops, rule_mode="per_hop"):
    """Settle an h-hop chain, send one packet from the far end, count control traffic."""
    cfg = det_cfg(stack=stack, n=hops + 1)
    cfg.wise.rule_mode = rule_mode
    net = Network(cfg, 1, positions=chain_positions(hops + 1))
    net.boot()
    net.sim.run_until(30 * SEC)
    before_tx = dict(net.stats.tx_counts)
    before_msg = dict(net.stats.msg_counts)
    kind = "DATA" if stack == "usdn" else "WDATA"
    pkt = Packet(kind, hops, 0, SIZES[kind] + 32, uid=net.next_uid(), created=net.sim.now, flow_id=1)
    net.nodes[hops].app_send(pkt)
    net.sim.run_until(31 * SEC)
    kinds = ("FTQ", "FTS") if stack == "usdn" else ("REQUEST", "RESPONSE", "OPENPATH")
    msgs = {k: net.stats.msg_counts.get(k, 0) - before_msg.get(k, 0) for k in kinds}
    tx = {k: net.stats.tx_counts.get(k, 0) - before_tx.get(k, 0) for k in kinds}
    return net, msgs, tx


def test_adjacent_destination_single_hop_rule():
    net, msgs, _ = _chain_flow("usdn", 1)
    assert msgs == {"FTQ": 1, "FTS": 1}
    rule = [e for e in net.nodes[1].table.entries if e.action.kind == "forward_srh"][0]
    assert rule.action.route == (1, 0)


def test_four_hop_message_counts():
    _, usdn, _ = _chain_flow("usdn", 4)
    assert usdn == {"FTQ": 1, "FTS": 1}
    _, wise, _ = _chain_flow("sdnwise", 4)
    assert wise == {"REQUEST": 1, "RESPONSE": 4, "OPENPATH": 0}


def _random_connected(rng, n):
    while True:
        pos = [(rng.uniform(0, 120), rng.uniform(0, 120)) for _ in range(n)]
        g = nx.Graph()
        g.add_nodes_from(range(n))
        g.add_edges_from((a, b) for a in range(n) for b in range(a + 1, n) if math.dist(pos[a], pos[b]) <= 50)
        if nx.is_connected(g):
            return g


def test_controller_paths_are_bfs_shortest_on_random_graph():
    g = _random_connected(random.Random(10), 10)
    view = TopologyView()
    for n in g:
        view.touch(n, 0)
    for a, b in g.edges:
        view.add_link(a, b)
    for s in g:
        lengths = nx.single_source_shortest_path_length(g, s)
        for d in g:
            path = view.shortest_path(s, d)
            assert path[0] == s and path[-1] == d
            assert len(path) - 1 == lengths[d]
            assert all(g.has_edge(u, v) for u, v in zip(path, path[1:]))


def test_idle_processing_delays():
    assert ctrl_processing_delay(ControllerPlacement.embedded()) == 8 * MS
    ideal = ControllerPlacement.external(backhaul_rate=math.inf)
    assert ctrl_processing_delay(ideal, request_bytes=38, response_bytes=44) == 5 * MS
    # a 115.2 kbit/s serial line adds the frame bytes on top
    ext = ControllerPlacement.external()
    assert ctrl_processing_delay(ext, request_bytes=38, response_bytes=44) == 5 * MS + 2639 + 3056


def test_overload_queue_grows_linearly():
    emb = ControllerPlacement.embedded()
    rate = 250.0  # 4 ms spacing against an 8 ms server
    times = dd1_response_times(emb, rate, 50)
    steps = {b - a for a, b in zip(times, times[1:])}
    assert steps == {4 * MS}
    measured, _ = controller_probe(emb, rate, 50)
    assert measured == [t + 0 for t in times]


def test_queue_overflow_drops():
    emb = ControllerPlacement.embedded(queue_capacity=4)
    measured, _ = controller_probe(emb, 1000.0, 20)
    assert len(measured) < 20


@given(st.floats(1.0, 400.0), st.sampled_from(["embedded", "external"]))
@settings(max_examples=20, deadline=None)
def test_served_rate_never_exceeds_capacity(rate, kind):
    placement = getattr(ControllerPlacement, kind)()
    _, thr = controller_probe(placement, rate, 200, arrivals="exponential", seed=3)
    assert thr <= placement.capacity * (1 + 1e-9)


def _trace(kind):
    cfg = det_cfg(n=16, spacing=20.0, flow_request_rate=2.0, collisions=True)
    cfg.medium.link_quality = 0.9
    cfg.duration = 80 * SEC
    cfg.placement = ControllerPlacement(kind=kind, backhaul_delay=0, backhaul_rate=math.inf,
                                        service_time=millis(8))
    net = Network(cfg, 4, trace=True)
    rec = net.run()
    return net, rec


def test_placement_equivalence_at_zero_backhaul():
    a, ra = _trace("embedded")
    b, rb = _trace("external")
    assert a.sim.trace_digest() == b.sim.trace_digest()
    assert a.controller.trace == b.controller.trace
    da, db = ra.as_dict(), rb.as_dict()
    da.pop("placement"), db.pop("placement")
    assert da == db


def test_rule_pushes_only_answer_queries_or_repairs():
    cfg = det_cfg(n=16, spacing=20.0, flow_request_rate=2.0)
    cfg.duration = 120 * SEC
    from sdnmesh.scenario import FaultSpec
    cfg.faults = [FaultSpec(time=80 * SEC, links=2)]
    net = Network(cfg, 5)
    net.run()
    allowed = {JOIN: {"CONF"}, FLOW_QUERY: {"FTS", "NOROUTE"}, STATE_UPDATE: {"FTS"},
               "link_failure": {"FTS"}}
    pushed = 0
    for _, kind, origin, outs in net.controller.trace:
        kinds = [k for k, _ in outs]
        assert set(kinds) <= allowed.get(kind, set()), (kind, kinds)
        if kind == FLOW_QUERY:
            # one answer, addressed to the node that asked
            assert [d for _, d in outs] == [origin]
        pushed += sum(1 for k in kinds if k != "CONF")
    # nothing reached the mesh outside the traced handlers
    assert pushed == net.controller.responses.get("FTS", 0) + net.controller.responses.get("NOROUTE", 0)


def test_zero_failed_links_costs_nothing():
    net = settled(det_cfg(n=9, spacing=30.0), until=30 * SEC)
    assert net.controller.ctrl_on_link_failure(set(), net.sim.now) == []
    rec = net.inject_fault(0)
    assert rec.update_time == 0


def test_leaf_link_failure_repairs_only_that_leaf():
    cfg = det_cfg(n=9, spacing=30.0, flow_request_rate=3.0, sources=[2, 5, 8])
    cfg.duration = 60 * SEC
    cfg.warmup = 20 * SEC
    net = Network(cfg, 6)
    net.run()
    ctrl = net.controller
    flows = list(ctrl.flows.values())
    leaf = 8
    leaf_flows = [f for f in flows if f.requester == leaf]
    assert leaf_flows and any(f.requester != leaf for f in flows)
    first = leaf_flows[0].path[:2]
    out = ctrl.ctrl_on_link_failure({TopologyView.key(*first)}, net.sim.now)
    assert out and {p.dest for p, _ in out} == {leaf}
