"""Command-line entry point.

Every subcommand accepts ``--config PATH`` with flat ``key=value`` lines.
Keys naming a flag of the subcommand set that flag's default; any other
key must be an :class:`ExperimentConfig` field.  Flags given on the
command line always win.

Exit status: 0 on success, 1 for usage errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys

import numpy as np

from .adversary import Eavesdropper, sample_adversary_model
from .config import ExperimentConfig, read_config_file
from .harness import (_episode_row, replay_controller, replay_eve, rows_to_csv, sweep_alpha,
                      sweep_delta_v)
from .parties import Controller, Robot
from .transport import Transcript, run_controller, run_tap, serve_robot

EXIT_USAGE = 1
EXIT_RUNTIME = 2

# flags whose values are copied straight onto ExperimentConfig
CONFIG_FLAGS = ("delta_v", "delta_omega", "key_bits", "ecc_rep", "accept_threshold",
                "alpha", "seed", "noise_w", "noise_v")


REQUIRED = {"serve": ("role", "endpoint"), "replay": ("transcript", "role")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="robokey",
                     description="Observer-based key agreement between a controller and a robot, in simulation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value configuration file")
        subs[name] = p
        return p

    run = add("run", "simulate one episode and write its metrics as CSV")
    run.add_argument("--delta-v", type=float)
    run.add_argument("--delta-omega", type=float)
    run.add_argument("--key-bits", type=int)
    run.add_argument("--ecc-rep", type=int)
    run.add_argument("--accept-threshold", type=int)
    run.add_argument("--alpha", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--noise-w", type=float)
    run.add_argument("--noise-v", type=float)
    run.add_argument("--out", help="CSV destination (default: stdout)")
    run.add_argument("--transcript", help="write the session transcript here")

    sweeps = []
    dv = add("sweep-dv", "sweep the bias magnitude")
    dv.add_argument("--min", type=float, default=0.02)
    dv.add_argument("--max", type=float, default=0.045)
    sweeps.append(dv)

    sa = add("sweep-a", "sweep the eavesdropper's model error")
    sa.add_argument("--delta-v", type=float, default=0.035)
    sa.add_argument("--alpha-max", type=float, default=0.1)
    sweeps.append(sa)

    for p in sweeps:
        p.add_argument("--points", type=int, default=10)
        p.add_argument("--runs", type=int, default=10)
        p.add_argument("--seed", type=int)
        p.add_argument("--noise-w", type=float)
        p.add_argument("--noise-v", type=float)
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--independent-seeds", action="store_true",
                       help="derive seeds from (point, run) instead of sharing them across points")
        p.add_argument("--out", help="CSV destination (default: stdout)")

    serve = add("serve", "run one party of a socket session")
    serve.add_argument("--role", choices=("controller", "robot", "tap"))
    serve.add_argument("--endpoint", help="HOST:PORT")
    serve.add_argument("--taps", type=int, default=0, help="robot only: taps to wait for")
    serve.add_argument("--transcript", help="write this party's transcript here")
    serve.add_argument("--timeout", type=float, default=30.0)

    rp = add("replay", "re-decode a recorded transcript offline")
    rp.add_argument("--transcript")
    rp.add_argument("--role", choices=("controller", "eve"))
    rp.add_argument("--alpha", type=float, help="eve only: override the model error")
    return parser, subs


def _parse(argv) -> tuple[argparse.Namespace, dict[str, str]]:
    """Parse twice: once to find ``--config``, then with file-supplied defaults."""
    parser, subs = _build_parser()
    args = parser.parse_args(argv)
    extra: dict[str, str] = {}
    if args.config:
        try:
            flat = read_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        sub = subs[args.command]
        dests = {a.dest for a in sub._actions} - {"help", "config"}
        sub.set_defaults(**{k: v for k, v in flat.items() if k in dests})
        extra = {k: v for k, v in flat.items() if k not in dests}
        # string defaults pass through each argument's type converter
        args = parser.parse_args(argv)
    # checked here rather than with required=True so the file may supply them
    for dest in REQUIRED.get(args.command, ()):
        if getattr(args, dest) is None:
            subs[args.command].error(f"--{dest} is required (flag or config key)")
    return args, extra


def _experiment(args, extra: dict[str, str]) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.from_flat(extra)
        changes = {f: getattr(args, f) for f in CONFIG_FLAGS
                   if getattr(args, f, None) is not None}
        return cfg.replace(**changes)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc.args[0] if exc.args else exc)) from None


@contextlib.contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            yield fh


def _cmd_run(args, extra) -> int:
    cfg = _experiment(args, extra)
    if args.transcript:
        with open(args.transcript, "w", encoding="ascii", newline="\n") as sink:
            row = _episode_row((0, 0, cfg), transcript_sink=sink)
    else:
        row = _episode_row((0, 0, cfg))
    with _output(args.out) as fh:
        fh.write(rows_to_csv([row]))
    return 0


def _cmd_sweep(args, extra) -> int:
    cfg = _experiment(args, extra)
    if args.points < 1 or args.runs < 1:
        raise UsageError("--points and --runs must be positive")
    common = not args.independent_seeds
    if args.command == "sweep-dv":
        grid = np.linspace(args.min, args.max, args.points)
        rows = sweep_delta_v(cfg, grid, args.runs, jobs=args.jobs, common_seeds=common)
    else:
        grid = np.linspace(0.0, args.alpha_max, args.points)
        rows = sweep_alpha(cfg, grid, args.runs, jobs=args.jobs, common_seeds=common)
    with _output(args.out) as fh:
        fh.write(rows_to_csv(rows))
    return 0


def _cmd_serve(args, extra) -> int:
    cfg = _experiment(args, extra)
    with contextlib.ExitStack() as stack:
        sink = None
        if args.transcript:
            sink = stack.enter_context(open(args.transcript, "w", encoding="ascii", newline="\n"))
        transcript = Transcript(cfg.header(), sink=sink)
        if args.role == "robot":
            robot = Robot(cfg)
            serve_robot(robot, args.endpoint, taps=args.taps, transcript=transcript,
                        accept_timeout=args.timeout)
            print(f"key={robot.key_out}")
        elif args.role == "controller":
            controller = Controller(cfg)
            run_controller(controller, args.endpoint, transcript=transcript,
                           connect_timeout=args.timeout)
            print(f"key={controller.session.key_out}")
        else:
            eve = Eavesdropper(sample_adversary_model(cfg.params, cfg.adversary), cfg.ecc,
                               cfg.key_steps, protocol_on=cfg.protocol_on)
            run_tap(args.endpoint, consumer=eve, transcript=transcript,
                    connect_timeout=args.timeout)
            print(f"key={eve.key()}")
    return 0


def _cmd_replay(args, extra) -> int:
    transcript = Transcript.load(args.transcript)
    cfg = ExperimentConfig.from_header(transcript.header)
    if extra:
        try:
            cfg = ExperimentConfig.from_flat({**cfg.canonical(), **extra})
        except (KeyError, ValueError) as exc:
            raise UsageError(str(exc.args[0] if exc.args else exc)) from None
    if args.role == "controller":
        controller, mismatches = replay_controller(transcript, cfg)
        print(f"key={controller.session.key_out}")
        if mismatches:
            print(f"control records differ at steps {mismatches[:10]}", file=sys.stderr)
            return EXIT_RUNTIME
        return 0
    if args.alpha is not None:
        cfg = cfg.replace(alpha=args.alpha)
    print(f"key={replay_eve(transcript, cfg).key()}")
    return 0


COMMANDS = {"run": _cmd_run, "sweep-dv": _cmd_sweep, "sweep-a": _cmd_sweep,
            "serve": _cmd_serve, "replay": _cmd_replay}


def main(argv=None) -> int:
    args, extra = _parse(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, extra)
    except UsageError as exc:
        print(f"robokey: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # every other failure is a runtime failure
        logging.getLogger("robokey").debug("aborted", exc_info=True)
        print(f"robokey: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
