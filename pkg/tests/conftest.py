"""Shared builders for small deterministic networks."""
import os
from pathlib import Path

from sdnmesh.kernel import SEC
from sdnmesh.network import Network
from sdnmesh.scenario import ScenarioConfig

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def det_cfg(stack="usdn", n=9, spacing=30.0, collisions=False, **traffic) -> ScenarioConfig:
    """Lossless, always-on radio: q = 1, no distance loss, optional collisions."""
    cfg = ScenarioConfig(name="det", stack=stack)
    cfg.topology.n = n
    cfg.topology.spacing = spacing
    cfg.medium.link_quality = 1.0
    cfg.medium.distance_loss = False
    cfg.medium.collisions = collisions
    cfg.rdc.enabled = False
    cfg.traffic.bit_rate = 0.0
    cfg.routing_weight = "hop"
    for k, v in traffic.items():
        setattr(cfg.traffic, k, v)
    return cfg


def chain_positions(nodes: int, spacing: float = 40.0):
    """Nodes on a line, each hearing only its direct neighbours."""
    return [[i * spacing, 0.0] for i in range(nodes)]


def settled(cfg, seed=1, until=60 * SEC, positions=None) -> Network:
    net = Network(cfg, seed, positions=positions)
    net.boot()
    net.sim.run_until(until)
    return net


def jobs() -> int:
    return int(os.environ.get("SDNMESH_JOBS", os.cpu_count() or 1))


# criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
