"""Command-line entry point: ``nuddlab <run|batch|verify|schedule|compile|tomo>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .noise_models import SystemParams
from .opalgebra import ControlId, commutation_table, format_commutation_table
from .pulse_compiler import compile_control, schedule_feasibility
from .tomography import MeasurementRecord, fidelity_report, matrix_from_text, matrix_to_text, mle_reconstruct
from .udd_timing import build_nudd_schedule

log = logging.getLogger("nuddlab")


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "with_tomography", False):
        out["with_tomography"] = True
    if getattr(args, "pulse_mode", None) is not None:
        out["pulse_mode"] = args.pulse_mode
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment JSON file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--pulse-mode", choices=harness.PULSE_MODES)
    p.add_argument("--output", type=Path, help="output directory")


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config, overrides=_overrides(args))
    out = Path(cfg.output_path)
    if args.output is not None:
        out = args.output / out.name
    res = harness.run_paper_protocol(cfg, out)
    print(f"wrote {res.csv_path} ({len(res.trace.rows)} rows)")
    if res.tomography_path is not None:
        print(f"wrote {res.tomography_path}")
    row = harness.summary_row(cfg.state, res.trace, args.threshold, args.floor)
    print(f"decay_time_s {row[3]}  protected_time_s {row[4]}")
    return 0


def cmd_batch(args) -> int:
    cfg = harness.load_config(args.config, overrides=_overrides(args))
    out = args.output if args.output is not None else Path("batch")
    count = len(args.seeds) if args.seeds and args.count is None else (args.count or 8)
    res = harness.batch_random_states(count, args.seeds, cfg, out, workers=args.workers,
                                      fixtures=args.fixtures, threshold=args.threshold, floor=args.floor)
    print(f"wrote {len(res.paths)} traces, average.csv and summary.csv to {out}")
    sys.stdout.write(harness.summary_csv(res.summary))
    return 0


def cmd_verify(args) -> int:
    print(format_commutation_table(commutation_table()))
    results = harness.verify_suite(include_probe=not args.skip_probe, emit=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_schedule(args) -> int:
    sched = build_nudd_schedule(args.order)
    print(sched.table())
    counts = sched.counts()
    print(f"# {counts[ControlId.X0]} X0, {counts[ControlId.X1]} X1, {counts[ControlId.XPHI]} Xphi")
    return 0


def cmd_compile(args) -> int:
    params = SystemParams(j12=args.j12)
    targets = list(ControlId) if args.control == "all" else [ControlId(args.control)]
    programs = {}
    for cid in targets:
        prog = compile_control(cid, params)
        programs[cid] = prog
        print(f"# {cid}: {len(prog.gates)} gates, {prog.total_duration * 1e3:.4f} ms")
        print(prog.table())
    if args.t_run is not None:
        if args.control != "all":
            programs = {cid: compile_control(cid, params) for cid in ControlId}
        report = schedule_feasibility(build_nudd_schedule(args.order), args.t_run, programs)
        print("\n".join(report.lines()))
    return 0


def cmd_tomo(args) -> int:
    record = MeasurementRecord.from_csv(args.record.read_text())
    res = mle_reconstruct(record)
    text = matrix_to_text(res.rho)
    if args.output is not None:
        args.output.mkdir(parents=True, exist_ok=True)
        path = args.output / (args.record.stem + "_rho.txt")
        path.write_text(text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    print(f"# residual {res.residual:.6g}, iterations {res.iterations}, converged {res.converged}",
          file=sys.stderr)
    if args.reference is not None:
        ref = matrix_from_text(args.reference.read_text())
        print(f"# fidelity to reference {fidelity_report(res.rho, ref):.9f}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nuddlab", description="Nested decoupling simulation harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a config file")
    _add_common(p)
    p.add_argument("--with-tomography", action="store_true")
    p.add_argument("--threshold", type=float, default=harness.DECAY_THRESHOLD)
    p.add_argument("--floor", type=float, default=harness.PROTECTED_FLOOR)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a batch of random subspace states")
    _add_common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--fixtures", action="store_true", help="use the eight tabulated RS states")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--threshold", type=float, default=harness.DECAY_THRESHOLD)
    p.add_argument("--floor", type=float, default=harness.PROTECTED_FLOOR)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("verify", help="run the invariant self-checks")
    p.add_argument("--skip-probe", action="store_true", help="skip the decoupling-order probe")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("schedule", help="print the nested schedule table")
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("compile", help="print compiled pulse programs")
    p.add_argument("--control", choices=["all"] + [c.value for c in ControlId], default="all")
    p.add_argument("--j12", type=float, default=SystemParams().j12)
    p.add_argument("--t-run", type=float, help="also check schedule feasibility for this run length")
    p.add_argument("--order", type=int, default=2)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("tomo", help="reconstruct a state from a record CSV")
    p.add_argument("record", type=Path)
    p.add_argument("--reference", type=Path, help="matrix file to compare against")
    p.add_argument("--output", type=Path, help="output directory")
    p.set_defaults(func=cmd_tomo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
