"""Per-run counters, the run record, and Student-t summaries."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .kernel import to_ms


@dataclass
class MetricsRecord:
    seed: int
    stack: str
    placement: str
    duration_s: float
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    pdr: float = 0.0
    mean_app_latency: float = 0.0
    mean_rule_rtt: float = 0.0
    rule_rtt_samples: int = 0
    answered_queries: int = 0
    served_throughput: float = 0.0
    controller_served: int = 0
    controller_dropped: int = 0
    mean_controller_response: float = 0.0
    energy_per_node: list = field(default_factory=list)
    mean_energy: float = 0.0
    radio_time_per_node: list = field(default_factory=list)
    join_time: dict = field(default_factory=dict)
    joined_nodes: int = 0
    topology_discovery_time: float = 0.0
    topology_update_time: list = field(default_factory=list)
    mean_topology_update_time: float = 0.0
    control_msg_counts: dict = field(default_factory=dict)
    control_tx_counts: dict = field(default_factory=dict)
    drops: dict = field(default_factory=dict)
    digest: str = ""

    def as_dict(self) -> dict:
        return asdict(self)

    def scalar(self, metric: str) -> float:
        value = getattr(self, metric)
        if isinstance(value, (list, tuple)):
            return float(np.mean(value)) if value else math.nan
        if isinstance(value, dict):
            return float(sum(value.values()))
        return float(value)


SCALAR_METRICS = (
    "pdr", "mean_app_latency", "mean_rule_rtt", "served_throughput", "mean_energy",
    "mean_controller_response", "topology_discovery_time", "mean_topology_update_time",
)


@dataclass
class SummaryStats:
    metric: str
    mean: float
    ci95_low: float
    ci95_high: float
    n: int
    too_small: bool = False


def summarize(records, metric: str) -> SummaryStats:
    """Mean and Student-t 95% interval of ``metric`` over the records."""
    values = [r.scalar(metric) if hasattr(r, "scalar") else float(r) for r in records]
    return summarize_values(values, metric)


def summarize_values(values, metric: str = "value") -> SummaryStats:
    xs = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    n = len(xs)
    if n == 0:
        raise ValueError(f"cannot summarize {metric!r}: no samples")
    mean = float(xs.mean())
    if n == 1:
        return SummaryStats(metric, mean, -math.inf, math.inf, 1, too_small=True)
    sd = float(xs.std(ddof=1))
    if sd == 0.0:
        return SummaryStats(metric, mean, mean, mean, n)
    half = float(stats.t.ppf(0.975, n - 1)) * sd / math.sqrt(n)
    return SummaryStats(metric, mean, mean - half, mean + half, n)


class Collector:
    """Raw counters filled in by the network during one run."""

    def __init__(self):
        self.sent = 0
        self.delivered = 0
        self.drops: dict[str, int] = {}
        self.latencies: list[int] = []
        self.rule_rtts: list[int] = []
        self.msg_counts: dict[str, int] = {}
        self.tx_counts: dict[str, int] = {}
        self.join_times: dict[int, int] = {}
        self.link_drops: list[tuple[int, int, int]] = []
        self.measure_from = 0
        self.in_window_sent = 0
        self.in_window_delivered = 0

    def count(self, table: dict, key: str, n: int = 1) -> None:
        table[key] = table.get(key, 0) + n

    def dropped(self) -> int:
        return sum(self.drops.values())

    def mean_ms(self, xs) -> float:
        return to_ms(float(np.mean(xs))) if len(xs) else math.nan
