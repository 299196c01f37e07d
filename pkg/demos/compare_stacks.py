"""Run the 50-node grid under both stacks and print energy, rule RTT and PDR.

    python3 demos/compare_stacks.py [repetitions]
"""
import copy
import sys
from pathlib import Path

from sdnmesh import harness
from sdnmesh.metrics import summarize
from sdnmesh.scenario import load_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "grid50.yaml"


def main(reps: int = 5) -> None:
    base = load_scenario(SCENARIO)
    base.repetitions = reps
    print(f"{'stack':8} {'energy (mJ)':>20} {'rule rtt (ms)':>20} {'pdr':>16}")
    for stack in ("usdn", "sdnwise"):
        cfg = copy.deepcopy(base)
        cfg.stack = stack
        records = harness.run_batch(cfg)
        cells = []
        for metric in ("mean_energy", "mean_rule_rtt", "pdr"):
            s = summarize(records, metric)
            cells.append(f"{s.mean:9.3f} ± {(s.ci95_high - s.ci95_low) / 2:7.3f}")
        print(f"{stack:8} " + " ".join(f"{c:>20}" for c in cells))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
