"""Embedded vs external controller: rule round trip as the request rate rises.

    python3 demos/placement_crossover.py [repetitions]
"""
import sys
from pathlib import Path

from sdnmesh import harness
from sdnmesh.scenario import load_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "crossover.yaml"
RATES = [1, 10, 30, 50, 70, 90, 102]


def main(reps: int = 3) -> None:
    cfg = load_scenario(SCENARIO)
    points = harness.crossover(cfg, RATES, repetitions=reps)
    by = {(p.placement, p.rate): p for p in points}
    print(f"{'rate/s':>6} {'embedded rtt':>13} {'external rtt':>13} {'emb thr':>8} {'ext thr':>8}  faster")
    for r in RATES:
        e, x = by[("embedded", r)], by[("external", r)]
        faster = "embedded" if e.rtt.mean < x.rtt.mean else "external"
        print(f"{r:6} {e.rtt.mean:10.1f} ms {x.rtt.mean:10.1f} ms {e.throughput.mean:8.1f} "
              f"{x.throughput.mean:8.1f}  {faster}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
