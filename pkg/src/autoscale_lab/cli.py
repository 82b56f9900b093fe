"""autoscale-lab command line.

Exit status: 0 success, 1 ledger verification failed, 2 bad usage or
configuration, 3 missing input file, 4 malformed input data.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__

EXIT_OK, EXIT_TAMPERED, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA = 0, 1, 2, 3, 4

log = logging.getLogger("autoscale_lab")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise CliError(EXIT_MISSING, f"no such file: {path}")
    return path


def _load(args):
    from .config import ConfigError, RunConfig, load_config

    cfg = RunConfig() if args.config is None else load_config(_require_file(args.config))
    try:
        if args.seed is not None:
            cfg = cfg.replace("run", seed=args.seed)
        if args.out is not None:
            cfg = cfg.replace("run", out=args.out)
        if getattr(args, "policies", None):
            cfg = cfg.replace("run", policies=tuple(p.strip() for p in args.policies.split(",") if p.strip()))
    except (ConfigError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    for p in cfg.trace.paths:
        _require_file(p)
    return cfg


def cmd_ingest(args) -> int:
    from .trace import expand_to_seconds, read_trace_file, select_function

    traces = read_trace_file(_require_file(args.trace))
    if args.function_id:
        chosen = select_function(traces, function_id=args.function_id)
    else:
        chosen = select_function(traces, rank=args.rank)
    sched = expand_to_seconds(chosen, args.mode, args.seed)
    out = args.out or "schedule.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        sched.to_csv(fh)
    print(f"{chosen.function_id}: {chosen.total} invocations -> {out} ({len(sched)} ticks)")
    return EXIT_OK


def cmd_synth_trace(args) -> int:
    from .trace import write_trace
    from .tracegen import synth_day

    os.makedirs(args.out, exist_ok=True)
    for day in range(args.days):
        path = os.path.join(args.out, f"invocations_per_function_md.anon.d{day + 1:02d}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_trace(synth_day(day, seed=args.seed), fh)
        print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    from .runner import run_train

    cfg = _load(args)
    res = run_train(cfg, resume=args.resume, stop_after=args.stop_after)
    curve = res.state.curve
    tail = curve[-50:]
    mean = sum(e.total_reward for e in tail) / len(tail) if tail else float("nan")
    print(f"episodes {len(curve)}; mean reward over last {len(tail)}: {mean:.1f}; outputs in {res.out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .runner import run_evaluate

    cfg = _load(args)
    if "drqn" in cfg.run.policies:
        _require_file(args.checkpoint or cfg.checkpoint_path)
    res = run_evaluate(cfg, checkpoint=args.checkpoint)
    for s in res.summaries:
        print(f"{s.policy:5s} cpu_s/inv {s.cpu_seconds_per_invocation:.5f}  violation_rate "
              f"{s.violation_rate:.4f}  invocations {s.invocations}")
    return EXIT_OK


def cmd_verify_log(args) -> int:
    from .ledger import read_ledger

    led = read_ledger(_require_file(args.ledger), verify=False)
    ok, bad = led.verify()
    if ok:
        print(f"ok: {len(led)} records, head {led.head_hash.hex()}")
        return EXIT_OK
    print(f"tampered: first bad record index {bad}")
    return EXIT_TAMPERED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autoscale-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policies=False):
        p.add_argument("--config", metavar="PATH", help="run configuration file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", metavar="DIR", help="override run.out")
        if policies:
            p.add_argument("--policies", metavar="LIST", help="comma-separated subset of drqn,rps5,rps2,vps1")

    p = sub.add_parser("ingest", help="turn one function of a per-minute trace into a per-second schedule")
    p.add_argument("trace", help="Azure-format per-minute invocation CSV")
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--function-id", help="select by HashFunction")
    sel.add_argument("--rank", type=int, default=1, help="select the n-th busiest function (default 1)")
    p.add_argument("--mode", choices=("uniform", "poisson"), default="uniform")
    p.add_argument("--seed", type=int, default=0, help="seed for poisson expansion")
    p.add_argument("--out", metavar="PATH", help="schedule CSV to write (default schedule.csv)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth-trace", help="write synthetic per-minute traces in the Azure layout")
    p.add_argument("--days", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR", default="traces")
    p.set_defaults(func=cmd_synth_trace)

    p = sub.add_parser("train", help="train the DRQN controller")
    common(p)
    p.add_argument("--resume", action="store_true", help="continue from <out>/resume.pkl")
    p.add_argument("--stop-after", type=int, metavar="N", help="stop once N episodes are done")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="replay policies on the held-out schedule")
    common(p, policies=True)
    p.add_argument("--checkpoint", metavar="PATH", help="DRQN checkpoint (default run.checkpoint)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-log", help="check a decision ledger's hash chain")
    p.add_argument("ledger", help="ledger file")
    p.set_defaults(func=cmd_verify_log)
    return parser


def main(argv=None) -> int:
    from .config import ConfigError
    from .ledger import LedgerError
    from .nn import CheckpointError
    from .trace import TraceFormatError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceFormatError, LedgerError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
