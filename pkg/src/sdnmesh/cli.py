"""Command line entry point: ``sdnmesh run|sweep|validate|replay|crossover``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .metrics import SCALAR_METRICS
from .scenario import ScenarioError, dump_text, load_scenario


def _values(text: str) -> list:
    """``1,2,5`` or an inclusive integer range ``1:102``; placement names pass through."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(int(item))
        except ValueError:
            try:
                out.append(float(item))
            except ValueError:
                out.append(item)
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdnmesh", description="Low-power SDN mesh simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("scenario", help="scenario YAML file")
        return sp

    run = scenario_cmd("run", "run every repetition and write summary rows")
    run.add_argument("--out", help="CSV path (default: print to stdout)")
    run.add_argument("--jobs", type=int, default=1, help="parallel runs")
    run.add_argument("--repetitions", type=int, help="override the scenario's repetition count")

    sw = scenario_cmd("sweep", "sweep one parameter")
    sw.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma list or inclusive range lo:hi")
    sw.add_argument("--out", help="CSV path (default: print to stdout)")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--repetitions", type=int)

    scenario_cmd("validate", "check a scenario file and print it with defaults filled in")

    rp = scenario_cmd("replay", "re-run the repetition that used one seed")
    rp.add_argument("--seed", type=int, required=True)
    rp.add_argument("--out", help="JSON path for the record (default: stdout)")

    xo = scenario_cmd("crossover", "embedded vs external rule round trip over flow-request rates")
    xo.add_argument("--rates", default="1:102")
    xo.add_argument("--repetitions", type=int)
    xo.add_argument("--out")
    xo.add_argument("--jobs", type=int, default=1)
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _manifest(out: str | None, cfg, seeds, **extra) -> None:
    if out:
        harness.write_manifest(Path(out).with_suffix(".manifest.json"), cfg, seeds, **extra)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_scenario(args.scenario)
    except FileNotFoundError as exc:
        print(f"sdnmesh: {exc}", file=sys.stderr)
        return 2
    except ScenarioError as exc:
        print(f"sdnmesh: invalid scenario {args.scenario}:", file=sys.stderr)
        for err in exc.errors:
            print(f"  {err}", file=sys.stderr)
        return 1
    if getattr(args, "repetitions", None):
        cfg.repetitions = args.repetitions
    if getattr(args, "jobs", 1) < 1:
        parser.print_usage(sys.stderr)
        print("sdnmesh: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return _dispatch(args, cfg)
    except harness.BatchError as exc:
        print(f"sdnmesh: {exc} (reproduce with: sdnmesh replay {args.scenario} --seed {exc.seed})",
              file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"sdnmesh: {exc}", file=sys.stderr)
        return 2


def _dispatch(args, cfg) -> int:
    if args.command == "validate":
        sys.stdout.write(dump_text(cfg))
        print(f"# ok: {cfg.name}, digest {cfg.digest()}", file=sys.stderr)
        return 0
    if args.command == "run":
        records = harness.run_batch(cfg, jobs=args.jobs)
        rows = harness.summary_rows(cfg, records, "none", "", SCALAR_METRICS)
        _emit(harness.rows_to_csv(rows), args.out)
        _manifest(args.out, cfg, harness.seeds_for(cfg), command="run")
        return 0
    if args.command == "sweep":
        values = _values(args.values)
        rows = harness.sweep(cfg, args.param, values, jobs=args.jobs)
        _emit(harness.rows_to_csv(rows), args.out)
        _manifest(args.out, cfg, harness.seeds_for(cfg), command="sweep", param=args.param,
                  values=values)
        return 0
    if args.command == "replay":
        rec = harness.replay(cfg, args.seed)
        text = json.dumps(rec.as_dict(), indent=2, default=str) + "\n"
        _emit(text, args.out)
        return 0
    if args.command == "crossover":
        rates = [float(r) for r in _values(args.rates)]
        points = harness.crossover(cfg, rates, jobs=args.jobs)
        _emit(harness.rows_to_csv(harness.crossover_rows(cfg, points)), args.out)
        _manifest(args.out, cfg, harness.seeds_for(cfg), command="crossover", rates=rates)
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
