"""Discrete-event simulator comparing uSDN and SDN-WISE on low-power meshes,
with embedded or external controller placement."""
from .controllers import ControllerPlacement
from .metrics import MetricsRecord, SummaryStats, summarize
from .network import Network, simulate
from .scenario import ScenarioConfig, load_scenario

__version__ = "0.1.0"

__all__ = ["ControllerPlacement", "MetricsRecord", "Network", "ScenarioConfig", "SummaryStats",
           "load_scenario", "simulate", "summarize", "__version__"]
