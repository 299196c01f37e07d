"""One simulated deployment: medium, nodes, controller, traffic and faults."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import Controller, Gateway, TopologyView
from .kernel import (CONTROLLER_STREAM, FAULT_STREAM, MEDIUM_STREAM, SEC, TRAFFIC_STREAM, Simulator,
                     to_ms)
from .mac import Frame, account_listen, energy_mJ
from .medium import Medium
from .metrics import Collector, MetricsRecord
from .node import SIZES, Packet
from .scenario import ScenarioConfig, generate_topology
from .usdn import UsdnNode
from .wise import WiseNode

CONTROL_KINDS = frozenset(k for k in SIZES if k not in ("DATA", "WDATA"))


@dataclass
class FaultRecord:
    fault_id: int
    time: int
    links: list
    detected: int | None = None
    topology_updated: int | None = None
    repairs_issued: int = 0
    repairs_installed: int = 0
    last_install: int | None = None
    # (arrival at the gateway, last update or repair out) per failure notice handled
    notices: list = field(default_factory=list)

    @property
    def update_time(self) -> int | None:
        if not self.links:
            return 0
        if self.detected is None:
            return None
        ends = [t for t in (self.topology_updated, self.last_install) if t is not None]
        if not ends:
            return None
        return max(ends) - self.detected

    @property
    def border_update_time(self) -> float | None:
        """Mean controller-side handling of the fault's notices, gateway in to gateway out."""
        if not self.notices:
            return None
        return sum(done - arrival for arrival, done in self.notices) / len(self.notices)


class Network:
    def __init__(self, cfg: ScenarioConfig, seed: int, trace: bool = False, positions=None):
        self.cfg = cfg
        self.seed = seed
        self.sim = Simulator(seed=seed, trace=trace)
        pos = generate_topology(cfg) if positions is None else np.asarray(positions, dtype=float)
        self.medium = Medium(pos, cfg.medium, self.sim.rng(MEDIUM_STREAM))
        self.sink = 0
        self.n = len(pos)
        self.macs: list = []
        self.stats = Collector()
        self.device_commands: list = []
        self.faults: list[FaultRecord] = []
        self._fault_of_link: dict[tuple, int] = {}
        self._uid = 0
        self._qid = 0
        self._flow_id = 0
        self.queries: dict[int, tuple[int, int]] = {}
        self.installs: dict[int, int] = {}
        self.ctrl_drops: dict[str, int] = {}
        node_cls = UsdnNode if cfg.stack == "usdn" else WiseNode
        self.nodes = [node_cls(self, i) for i in range(self.n)]
        self.controller = Controller(self, cfg.placement, cfg.stack, cfg.routing_weight, cfg.wise.rule_mode)
        self.gateway = Gateway(self, self.controller)
        self.traffic_rng = self.sim.rng(TRAFFIC_STREAM)
        self.fault_rng = self.sim.rng(FAULT_STREAM)
        self.controller_rng = self.sim.rng(CONTROLLER_STREAM)
        self.active_sources: list[int] = []
        self._booted = False

    # -- counters used by nodes ----------------------------------------------
    def next_uid(self) -> int:
        self._uid += 1
        return self._uid

    def next_query_id(self) -> int:
        self._qid += 1
        return self._qid

    def note_query(self, qid: int, node: int, at: int) -> None:
        self.queries[qid] = (node, at)

    def count_msg(self, kind: str) -> None:
        self.stats.count(self.stats.msg_counts, kind)

    def count_attempt(self, frame: Frame) -> None:
        self.stats.count(self.stats.tx_counts, frame.packet.kind)

    def count_install(self, node: int, n: int) -> None:
        self.installs[node] = self.installs.get(node, 0) + n

    def count_ctrl_drop(self, kind: str) -> None:
        self.ctrl_drops[kind] = self.ctrl_drops.get(kind, 0) + 1

    def _measured(self, pkt: Packet) -> bool:
        return pkt.is_data and pkt.created >= self.cfg.warmup

    def count_sent(self, pkt: Packet) -> None:
        if self._measured(pkt):
            self.stats.sent += 1

    def delivered(self, pkt: Packet, node: int) -> None:
        if self._measured(pkt):
            self.stats.delivered += 1
            self.stats.latencies.append(self.sim.now - pkt.created)

    consumed = delivered

    def drop(self, pkt: Packet, cause: str, node: int) -> None:
        if self._measured(pkt):
            self.stats.count(self.stats.drops, cause)
        elif not pkt.is_data:
            self.stats.count(self.stats.msg_counts, f"lost_{pkt.kind}")

    def record_rule_rtt(self, rtt: int) -> None:
        if self.sim.now - rtt >= self.cfg.warmup:
            self.stats.rule_rtts.append(rtt)

    def record_join(self, node: int) -> None:
        self.stats.join_times.setdefault(node, self.sim.now)

    def deliver_frame(self, frame: Frame, receiver: int) -> None:
        self.nodes[receiver].on_frame(frame)

    def note_link_drop(self, a: int, b: int) -> None:
        k = TopologyView.key(a, b)
        self.stats.link_drops.append((self.sim.now, a, b))
        fid = self._fault_of_link.get(k)
        if fid is not None and self.faults[fid].detected is None:
            self.faults[fid].detected = self.sim.now

    # -- fault bookkeeping ----------------------------------------------------
    def fault_for_link(self, k: tuple) -> int | None:
        return self._fault_of_link.get(TopologyView.key(*k))

    def fault_topology_updated(self, fid: int, at: int) -> None:
        """The controller processed the loss of one of the fault's links."""
        f = self.faults[fid]
        if f.detected is None:
            f.detected = at
        # the update is complete once the last failed link is known
        f.topology_updated = at if f.topology_updated is None else max(f.topology_updated, at)

    def fault_notice_handled(self, fid: int, arrival: int, done: int) -> None:
        self.faults[fid].notices.append((arrival, done))

    def fault_repair_issued(self, fid: int) -> None:
        self.faults[fid].repairs_issued += 1

    def fault_repaired(self, fid: int) -> None:
        f = self.faults[fid]
        f.repairs_installed += 1
        f.last_install = self.sim.now

    def inject_fault(self, count: int) -> FaultRecord:
        """Fail ``count`` links, preferring links on routes the controller has installed."""
        fid = len(self.faults)
        active = set()
        for rec in self.controller.flows.values():
            for u, v in zip(rec.path, rec.path[1:]):
                active.add(TopologyView.key(u, v))
        active -= set(self.medium.failed)
        rng = self.fault_rng
        pool = sorted(active)
        chosen = rng.sample(pool, min(count, len(pool)))
        if len(chosen) < count:
            rest = sorted(self.medium.graph_edges() - set(chosen) - set(self.medium.failed))
            chosen += rng.sample(rest, min(count - len(chosen), len(rest)))
        rec = FaultRecord(fid, self.sim.now, sorted(chosen))
        self.faults.append(rec)
        for k in rec.links:
            self.medium.fail_link(*k)
            self._fault_of_link[k] = fid
        return rec

    # -- traffic --------------------------------------------------------------
    def sources(self) -> list[int]:
        t = self.cfg.traffic
        candidates = [i for i in range(self.n) if i != self.sink]
        if t.hop_distance is not None:
            depth = hop_depths(self.medium, self.sink)
            candidates = [i for i in candidates if depth.get(i) == t.hop_distance]
            if not candidates:
                raise ValueError(f"no node sits {t.hop_distance} hops from the sink")
        if isinstance(t.sources, list):
            return [i for i in t.sources if i != self.sink]
        if isinstance(t.sources, int):
            rng = self.sim.rng(TRAFFIC_STREAM + 100)
            return sorted(rng.sample(candidates, min(t.sources, len(candidates))))
        return candidates

    def _data_packet(self, origin: int, flow_id: int | None) -> Packet:
        kind = "DATA" if self.cfg.stack == "usdn" else "WDATA"
        size = SIZES[kind] + self.cfg.traffic.payload_bytes
        return Packet(kind, origin, self.sink, size, uid=self.next_uid(), created=self.sim.now,
                      flow_id=flow_id)

    def _interval(self, mean: int) -> int:
        if self.cfg.traffic.inter_arrival == "exponential":
            return max(1, int(round(self.traffic_rng.expovariate(1.0) * mean)))
        return mean

    def _start_traffic(self) -> None:
        t = self.cfg.traffic
        srcs = self.sources()
        self.active_sources = srcs
        period = t.packet_interval
        if period is not None:
            for s in srcs:
                phase = self.traffic_rng.randrange(period)
                self.sim.schedule(t.start + phase, self._app_tick, s, period, target=s)
        if t.flow_request_rate > 0 and srcs:
            first = t.flow_start if t.flow_start is not None else self.cfg.warmup
            self.start_flows(t.flow_request_rate, first)

    def start_flows(self, rate: float, at: int | None = None) -> None:
        """Open new flows at ``rate`` per second from ``at`` (default: now)."""
        srcs = self.active_sources if self.active_sources else self.sources()
        mean = int(round(SEC / rate))
        first = self.sim.now if at is None else at
        self.sim.schedule(first + self._interval(mean), self._flow_tick, srcs, mean, target=None)

    def _app_tick(self, src: int, period: int) -> None:
        self.nodes[src].app_send(self._data_packet(src, None))
        self.sim.schedule_in(self._interval(period), self._app_tick, src, period, target=src)

    def _flow_tick(self, srcs: list, mean: int) -> None:
        src = srcs[self.traffic_rng.randrange(len(srcs))]
        self._flow_id += 1
        self.nodes[src].app_send(self._data_packet(src, self._flow_id))
        self.sim.schedule_in(self._interval(mean), self._flow_tick, srcs, mean)

    # -- lifecycle ------------------------------------------------------------
    def boot(self) -> None:
        if self._booted:
            return
        self._booted = True
        for node in self.nodes:
            node.boot()
        self._start_traffic()
        for f in self.cfg.faults:
            self.sim.schedule(f.time, self.inject_fault, f.links)
        period = self.cfg.usdn.nsu_period if self.cfg.stack == "usdn" else self.cfg.wise.report_period
        self.sim.schedule(period, self._audit, period)

    def _audit(self, period: int) -> None:
        ctrl = self.controller
        ctrl.expire_flows(self.sim.now)
        out = ctrl.audit(self.sim.now, period)
        for pkt, hint in out:
            self.gateway.down(pkt, hint)
        self.sim.schedule_in(period, self._audit, period)

    def run(self, until: int | None = None) -> MetricsRecord:
        self.boot()
        end = self.cfg.duration if until is None else until
        self.sim.run_until(end)
        return self.record()

    def record(self) -> MetricsRecord:
        cfg = self.cfg
        st = self.stats
        now = self.sim.now
        window = max(1, now - cfg.warmup)
        energies, radio = [], []
        for mac in self.macs:
            account_listen(mac.ledger, now, cfg.rdc)
            energies.append(energy_mJ(mac.ledger))
            radio.append(mac.ledger.radio_time())
        drops = dict(st.drops)
        in_flight = st.sent - st.delivered - sum(drops.values())
        if in_flight > 0:
            drops["in_flight"] = in_flight
        dropped = sum(drops.values())
        joins = st.join_times
        discovery = to_ms(max(joins.values()) - min(joins.values())) if joins else math.nan
        updates = [to_ms(f.update_time) for f in self.faults if f.update_time is not None]
        ctrl = self.controller
        rec = MetricsRecord(
            seed=self.seed, stack=cfg.stack, placement=cfg.placement.kind, duration_s=now / SEC,
            sent=st.sent, delivered=st.delivered, dropped=dropped,
            pdr=st.delivered / st.sent if st.sent else math.nan,
            mean_app_latency=st.mean_ms(st.latencies),
            mean_rule_rtt=st.mean_ms(st.rule_rtts),
            rule_rtt_samples=len(st.rule_rtts),
            answered_queries=len(st.rule_rtts),
            served_throughput=len(st.rule_rtts) * SEC / window,
            controller_served=ctrl.served,
            controller_dropped=ctrl.dropped,
            mean_controller_response=st.mean_ms(ctrl.response_times),
            energy_per_node=energies,
            mean_energy=float(np.mean(energies)),
            radio_time_per_node=radio,
            join_time={int(k): to_ms(v) for k, v in sorted(joins.items())},
            joined_nodes=len(joins),
            topology_discovery_time=discovery,
            topology_update_time=updates,
            mean_topology_update_time=float(np.mean(updates)) if updates else math.nan,
            control_msg_counts=dict(sorted(st.msg_counts.items())),
            control_tx_counts=dict(sorted(st.tx_counts.items())),
            drops=dict(sorted(drops.items())),
        )
        if self.sim.trace:
            rec.digest = self.sim.trace_digest()
        return rec


def hop_depths(medium: Medium, root: int) -> dict[int, int]:
    depth = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in sorted(medium.neighbors(u)):
                if v not in depth:
                    depth[v] = depth[u] + 1
                    nxt.append(v)
        frontier = nxt
    return depth


def simulate(cfg: ScenarioConfig, seed: int, trace: bool = False) -> MetricsRecord:
    """Build and run one repetition."""
    return Network(cfg, seed, trace=trace).run()
