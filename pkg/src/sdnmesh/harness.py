"""Batches, parameter sweeps, CSV export and the controller experiments."""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .controllers import ControllerPlacement
from .kernel import MS, PROBE_STREAM, SEC
from .metrics import SCALAR_METRICS, MetricsRecord, SummaryStats, summarize, summarize_values
from .network import Network, simulate
from .node import CONTROLLER, SIZES, Packet
from .scenario import FaultSpec, ScenarioConfig
from .usdn import FlowDigest

CSV_COLUMNS = ("scenario_id", "stack", "placement", "param", "value", "metric", "mean", "ci_low",
               "ci_high", "n")
SWEEP_PARAMS = ("flow_request_rate", "bit_rate", "hop_distance", "node_count", "failed_link_count",
                "placement")


class BatchError(RuntimeError):
    """A repetition failed; ``seed`` replays it."""

    def __init__(self, seed: int, cause: BaseException):
        self.seed = seed
        self.cause = cause
        super().__init__(f"run with seed {seed} failed: {type(cause).__name__}: {cause}")


def seeds_for(cfg: ScenarioConfig) -> list[int]:
    return [cfg.base_seed + i for i in range(cfg.repetitions)]


def _run_one(args) -> MetricsRecord:
    cfg, seed, trace = args
    try:
        return simulate(cfg, seed, trace=trace)
    except Exception as exc:  # reported with the seed so the run can be replayed
        raise BatchError(seed, exc) from exc


def _map(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps submission order whatever order the workers finish in
        return list(pool.map(fn, tasks))


def run_batch(cfg: ScenarioConfig, jobs: int = 1, trace: bool = False) -> list[MetricsRecord]:
    """Run every repetition; records come back in repetition order."""
    return _map(_run_one, [(cfg, s, trace) for s in seeds_for(cfg)], jobs)


def replay(cfg: ScenarioConfig, seed: int, trace: bool = True) -> MetricsRecord:
    """Re-run the single repetition that used ``seed``."""
    return _run_one((cfg, seed, trace))


# -- sweeps -------------------------------------------------------------------
def apply_param(cfg: ScenarioConfig, param: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with one swept parameter set."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    out = copy.deepcopy(cfg)
    if param == "flow_request_rate":
        out.traffic.flow_request_rate = float(value)
    elif param == "bit_rate":
        out.traffic.bit_rate = float(value)
    elif param == "hop_distance":
        out.traffic.hop_distance = int(value)
    elif param == "node_count":
        out.topology.n = int(value)
    elif param == "failed_link_count":
        if out.faults:
            for f in out.faults:
                f.links = int(value)
        else:
            out.faults = [FaultSpec(links=int(value))]
    elif param == "placement":
        kind = str(value)
        if kind not in ("embedded", "external"):
            raise ValueError(f"placement must be 'embedded' or 'external', got {value!r}")
        out.placement = getattr(ControllerPlacement, kind)()
    errors = out.validate()
    if errors:
        raise ValueError("; ".join(errors))
    return out


def summary_rows(cfg: ScenarioConfig, records, param: str, value, metrics=SCALAR_METRICS) -> list[dict]:
    rows = []
    for metric in metrics:
        try:
            s = summarize(records, metric)
        except ValueError:
            s = SummaryStats(metric, math.nan, math.nan, math.nan, 0)
        rows.append(dict(scenario_id=cfg.name, stack=cfg.stack, placement=cfg.placement.kind,
                         param=param, value=value, metric=metric, mean=s.mean, ci_low=s.ci95_low,
                         ci_high=s.ci95_high, n=s.n))
    return rows


def sweep(cfg: ScenarioConfig, param: str, values, metrics=SCALAR_METRICS, jobs: int = 1,
          batches: dict | None = None) -> list[dict]:
    """One summarized row per (value, metric); ``batches`` collects the raw records if given."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    rows = []
    for value in values:
        point = apply_param(cfg, param, value)
        records = run_batch(point, jobs=jobs)
        if batches is not None:
            batches[value] = records
        rows.extend(summary_rows(point, records, param, value, metrics))
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        for c in ("mean", "ci_low", "ci_high"):
            row[c] = float(row[c])
        row["n"] = int(row["n"])
        out.append(row)
    return out


def write_csv(rows, path) -> None:
    Path(path).write_text(rows_to_csv(rows))


def write_manifest(path, cfg: ScenarioConfig, seeds, **extra) -> dict:
    manifest = dict(scenario=cfg.name, scenario_hash=cfg.digest(), seeds=list(seeds),
                    code_version=__version__, python=platform.python_version(),
                    written=time.strftime("%Y-%m-%dT%H:%M:%S"), **extra)
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return manifest


# -- controller placement experiments ------------------------------------------
def controller_probe(placement: ControllerPlacement, rate: float, count: int,
                     arrivals: str = "deterministic", seed: int = 1) -> tuple[list[int], float]:
    """Feed ``count`` device commands through the gateway of an idle two-node network.

    Returns the per-request response times (microseconds, gateway in to
    gateway out) and the served throughput in requests per second.
    """
    cfg = ScenarioConfig(name="probe", placement=copy.deepcopy(placement))
    cfg.topology.n = 2
    cfg.rdc.enabled = False
    net = Network(cfg, seed)
    rng = net.sim.rng(PROBE_STREAM)
    period = SEC / rate
    t = 0.0
    for k in range(count):
        if arrivals == "deterministic":
            t = k * period
        else:
            t += rng.expovariate(1.0) * period
        net.sim.schedule(math.ceil(t), net.gateway.device_command, 1, "on", target=None)
    net.sim.run_until(math.ceil(t) + 60 * SEC)
    ctrl = net.controller
    served = ctrl.served_times
    span = (served[-1] - served[0]) if len(served) > 1 else 0
    throughput = (len(served) - 1) * SEC / span if span else math.nan
    return list(ctrl.response_times), throughput


def saturation_rate(placement: ControllerPlacement, rates, count: int = 2000, seed: int = 1,
                    tolerance: float = 0.05) -> float:
    """Lowest offered rate whose served throughput falls short of it by more than ``tolerance``."""
    for rate in sorted(rates):
        _, served = controller_probe(placement, rate, count, arrivals="exponential", seed=seed)
        if not served >= (1 - tolerance) * rate:
            return rate
    return math.inf


def crossover_window(rate: float) -> int:
    """Measurement window: about 300 flows, clamped to 2..10 s."""
    return int(max(2.0, min(10.0, 300.0 / rate)) * SEC)


@dataclass
class CrossoverPoint:
    placement: str
    rate: float
    rtt: SummaryStats
    throughput: SummaryStats


def offer_flow_requests(net: Network, rate: float, until: int, origins=None) -> int:
    """Schedule Poisson flow requests from random sensor nodes straight into the gateway.

    Each request is a genuine FTQ for a fresh flow toward the sink; only its
    radio trip to the border is skipped. Returns the number scheduled.
    """
    if net.cfg.stack != "usdn":
        raise ValueError("gateway-fed flow requests are defined for the usdn stack")
    rng = net.sim.rng(PROBE_STREAM)
    others = list(origins) if origins is not None else [i for i in range(net.n) if i != net.sink]
    t = float(net.sim.now)
    count = 0
    while True:
        t += rng.expovariate(rate) * SEC
        if t >= until:
            return count
        origin = others[rng.randrange(len(others))]
        net._flow_id += 1
        pkt = Packet("FTQ", origin, CONTROLLER, SIZES["FTQ"], uid=net.next_uid(), created=math.ceil(t),
                     body=FlowDigest(origin, net.sink, net._flow_id), flow_id=net._flow_id,
                     query_id=net.next_query_id())
        net.sim.schedule(math.ceil(t), net.gateway.up, pkt, target=None)
        count += 1


def _crossover_rep(args) -> list[tuple[float, float, float]]:
    cfg, seed, rates, warmup = args
    try:
        net = Network(cfg, seed)
        net.boot()
        net.sim.run_until(warmup)
        out = []
        for rate in rates:
            trial = copy.deepcopy(net)
            ctrl = trial.controller
            start = trial.sim.now
            end = start + crossover_window(rate)
            trial.gateway.absorb = True
            done = len(ctrl.flow_response_times)
            offer_flow_requests(trial, rate, end)
            trial.sim.run_until(end)
            times = ctrl.flow_response_times[done:]
            rtt = float(np.mean(times)) / MS if times else math.nan
            out.append((rate, rtt, len(times) * SEC / (end - start)))
        return out
    except Exception as exc:
        raise BatchError(seed, exc) from exc


def crossover(cfg: ScenarioConfig, rates, repetitions: int | None = None, warmup_s: float = 40.0,
              jobs: int = 1) -> list[CrossoverPoint]:
    """Rule round trip and served throughput against flow-request rate, both placements.

    Each repetition forms the network once per placement; every rate is then
    measured on a copy of that warmed-up network. The round trip runs from the
    moment a request reaches the border until its rule leaves it.
    """
    reps = cfg.repetitions if repetitions is None else repetitions
    seeds = [cfg.base_seed + i for i in range(reps)]
    rates = list(rates)
    warmup = int(warmup_s * SEC)
    points = []
    for kind in ("embedded", "external"):
        pcfg = apply_param(cfg, "placement", kind)
        pcfg.placement = _keep_overrides(cfg.placement, pcfg.placement)
        pcfg.traffic.flow_request_rate = 0.0
        per_rep = _map(_crossover_rep, [(pcfg, s, rates, warmup) for s in seeds], jobs)
        for i, rate in enumerate(rates):
            rtts = [r[i][1] for r in per_rep]
            thr = [r[i][2] for r in per_rep]
            points.append(CrossoverPoint(kind, rate, summarize_values(rtts, "mean_rule_rtt"),
                                         summarize_values(thr, "served_throughput")))
    return points


def _failure_rep(args) -> float:
    cfg, seed, sources, per_source, links, faults, warmup, observe = args
    try:
        net = Network(cfg, seed)
        net.boot()
        net.sim.run_until(warmup)
        net.gateway.absorb = True
        others = [i for i in range(net.n) if i != net.sink]
        origins = sorted(net.sim.rng(PROBE_STREAM + 1).sample(others, sources))
        end = warmup + observe
        offer_flow_requests(net, sources * per_source, end, origins)
        for i in range(faults):
            net.sim.schedule(warmup + (5 + 15 * i) * SEC, net.inject_fault, links, target=None)
        net.sim.run_until(end)
        handled = [done - arrival for f in net.faults for arrival, done in f.notices]
        return float(np.mean(handled)) / MS if handled else math.nan
    except Exception as exc:
        raise BatchError(seed, exc) from exc


def failure_under_load(cfg: ScenarioConfig, source_counts, links: int, repetitions: int | None = None,
                       per_source_rate: float = 1.0, faults: int = 4, warmup_s: float = 40.0,
                       observe_s: float = 130.0, jobs: int = 1) -> dict:
    """Controller-side handling of k-link failures while ``s`` sources request flows.

    Every source offers ``per_source_rate`` flow requests per second at the
    gateway, and a fresh k-link failure strikes every 15 s, ``faults`` times.
    Returns {(placement, s): SummaryStats over repetitions of the mean time a
    failure notice spends between entering and leaving the border, in ms}.
    """
    reps = cfg.repetitions if repetitions is None else repetitions
    seeds = [cfg.base_seed + i for i in range(reps)]
    warmup, observe = int(warmup_s * SEC), int(observe_s * SEC)
    out = {}
    for kind in ("embedded", "external"):
        pcfg = apply_param(cfg, "placement", kind)
        pcfg.placement = _keep_overrides(cfg.placement, pcfg.placement)
        pcfg.traffic.flow_request_rate = 0.0
        pcfg.faults = []
        for s in source_counts:
            vals = _map(_failure_rep, [(pcfg, seed, s, per_source_rate, links, faults, warmup, observe)
                                       for seed in seeds], jobs)
            out[(kind, s)] = summarize_values(vals, "border_update_time")
    return out


def _keep_overrides(base: ControllerPlacement, fresh: ControllerPlacement) -> ControllerPlacement:
    """Carry queue size and backhaul rate settings from the scenario into the swapped placement."""
    if base.kind == fresh.kind:
        return copy.deepcopy(base)
    fresh.queue_capacity = base.queue_capacity
    fresh.backhaul_rate = base.backhaul_rate
    return fresh


def crossover_rows(cfg: ScenarioConfig, points) -> list[dict]:
    rows = []
    for p in points:
        for s in (p.rtt, p.throughput):
            rows.append(dict(scenario_id=cfg.name, stack=cfg.stack, placement=p.placement,
                             param="flow_request_rate", value=p.rate, metric=s.metric, mean=s.mean,
                             ci_low=s.ci95_low, ci_high=s.ci95_high, n=s.n))
    return rows
