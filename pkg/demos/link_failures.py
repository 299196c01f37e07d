"""Topology update time after 1, 2, 4 and 8 simultaneous link failures.

    python3 demos/link_failures.py [repetitions]
"""
import sys
from pathlib import Path

from sdnmesh import harness
from sdnmesh.scenario import load_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "failures.yaml"


def main(reps: int = 5) -> None:
    cfg = load_scenario(SCENARIO)
    cfg.repetitions = reps
    rows = harness.sweep(cfg, "failed_link_count", [1, 2, 4, 8], ("mean_topology_update_time",))
    for row in rows:
        print(f"k={row['value']}: {row['mean'] / 1000:6.2f} s  "
              f"[{row['ci_low'] / 1000:.2f}, {row['ci_high'] / 1000:.2f}]  n={row['n']}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
