"""Command-line entry point: ``hvbell <subcommand>``.

Exit codes: 0 ok, 2 invalid configuration or pattern, 3 I/O failure,
4 audit failure, 5 statistical precondition failure (empty setting pair).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

from . import aerts, chessboard
from .core import CollectionMode, SwitchPolicy
from .rng import Seeds, stream
from .stats import (
    EstimationError,
    efficiency_audit,
    estimate,
    no_signaling_check,
    one_arm_averages,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_AUDIT, EXIT_STATS = 0, 2, 3, 4, 5

DEFAULT_THETAS = "0,pi/6,pi/3,pi/2,2pi/3,5pi/6,pi"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --- argument helpers ------------------------------------------------------------


def probability(text: str) -> Fraction:
    try:
        p = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0 <= p <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return p


def positive_int(text: str) -> int:
    n = int(float(text)) if "e" in text.lower() else int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def angle(text: str) -> float:
    """Parse ``1.2``, ``pi``, ``pi/2``, ``2pi/3``, ``5*pi/6``."""
    t = text.strip().replace(" ", "").replace("*", "").lower()
    if "pi" not in t:
        return float(t)
    num, _, den = t.partition("/")
    coef = num.replace("pi", "")
    value = (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * math.pi
    return value / float(den) if den else value


def angle_list(text: str) -> list[float]:
    return [angle(x) for x in text.split(",") if x.strip()]


def load_pattern_arg(source: str) -> chessboard.HolePattern:
    if source == "canonical":
        return chessboard.canonical_pattern()
    try:
        return chessboard.load_pattern(source)
    except chessboard.PatternError as exc:
        raise CliError(EXIT_CONFIG, "invalid pattern:\n  " + "\n  ".join(exc.violations)) from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read pattern file: {exc}") from None


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


class Output:
    """Stdout, or a file opened lazily so an unwritable path gives exit code 3."""

    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path in (None, "-"):
            self.fh = sys.stdout
        else:
            try:
                self.fh = open(self.path, "w", encoding="utf-8", newline="")
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot write {self.path}: {exc}") from None
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()


def write_blocks(fh, blocks) -> None:
    """CSV blocks separated by blank lines; each block is (header, rows)."""
    first = True
    for header, rows in blocks:
        if not first:
            fh.write("\n")
        first = False
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


# --- subcommands ------------------------------------------------------------------


def cmd_exact(args) -> int:
    pattern = load_pattern_arg(args.pattern)
    mode = CollectionMode(args.mode)
    res = chessboard.chsh_for_mode(pattern, args.pa, args.pb, mode)
    if args.format == "json":
        payload = {
            "pairs": [
                {"pair": name, "corr": float(c), "exact": str(c)}
                for name, c in zip(chessboard.PAIR_NAMES, res.correlations)
            ],
            "bell": float(res.bell),
            "bell_exact": str(res.bell),
            "mode": mode.value,
            "p_a": str(args.pa),
            "p_b": str(args.pb),
        }
        if res.one_arm:
            payload["one_arm"] = {k: str(v) for k, v in res.one_arm.items()}
        with Output(args.output) as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        return EXIT_OK
    blocks = [
        (
            ["pair", "corr", "exact"],
            [(name, float(c), str(c)) for name, c in zip(chessboard.PAIR_NAMES, res.correlations)],
        ),
        (["bell", "exact", "mode"], [(float(res.bell), str(res.bell), mode.value)]),
    ]
    with Output(args.output) as fh:
        write_blocks(fh, blocks)
    return EXIT_OK


def _simulation_report(batch, mode: CollectionMode) -> dict:
    try:
        chsh = estimate(batch, mode)
        arms = one_arm_averages(batch)
        signaling = no_signaling_check(batch)
    except EstimationError as exc:
        raise CliError(EXIT_STATS, str(exc)) from None
    eff = efficiency_audit(batch)
    return {"chsh": chsh, "one_arm": arms, "efficiency": eff, "no_signaling": signaling}


def _report_json(report: dict) -> dict:
    eff = report["efficiency"]
    sig = report["no_signaling"]
    return {
        **report["chsh"].as_dict(),
        "one_arm": [
            {"label": m.label, "n": m.n, "mean": m.mean, "se": m.se} for m in report["one_arm"].values()
        ],
        "efficiency": {
            "trials": eff.trials,
            "coincidences": eff.coincidences,
            "fraction": eff.fraction,
            "singles_alice": eff.singles_alice,
            "singles_bob": eff.singles_bob,
        },
        "no_signaling": {
            "pass": sig.passed,
            "rows": [
                {"station": r.station, "category": r.category, "diff": r.diff, "se": r.se, "pass": r.ok}
                for r in sig.rows
            ],
        },
    }


def _report_blocks(report: dict):
    chsh = report["chsh"]
    eff = report["efficiency"]
    sig = report["no_signaling"]
    return [
        (["pair", "n", "corr", "se"], list(chsh.table.rows())),
        (["bell", "se", "mode"], [(chsh.bell, chsh.se, chsh.mode.value)]),
        (["label", "n", "mean", "se"], [(m.label, m.n, m.mean, m.se) for m in report["one_arm"].values()]),
        (
            ["trials", "coincidences", "fraction", "singles_alice", "singles_bob"],
            [(eff.trials, eff.coincidences, eff.fraction, eff.singles_alice, eff.singles_bob)],
        ),
        (
            ["station", "category", "diff", "se", "pass"],
            [(r.station, r.category, r.diff, r.se, int(r.ok)) for r in sig.rows],
        ),
    ]


def cmd_simulate(args) -> int:
    pattern = load_pattern_arg(args.pattern)
    mode = CollectionMode(args.mode)
    policy = SwitchPolicy(float(args.pa), float(args.pb))
    seeds = Seeds.from_master(args.seed)
    batch = chessboard.simulate(pattern, policy, args.trials, seeds, mode, keep_lambda=args.debug_lambda)
    if args.records:
        try:
            with open(args.records, "w", encoding="utf-8") as fh:
                batch.write(fh, with_lambda=args.debug_lambda)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write records: {exc}") from None
    report = _simulation_report(batch, mode)
    with Output(args.output) as fh:
        if args.format == "json":
            json.dump(_report_json(report), fh, indent=2)
            fh.write("\n")
        else:
            write_blocks(fh, _report_blocks(report))
    return EXIT_OK


def sweep_rows(pa_values, pb_values, pattern, trials: int, seed: int):
    rows = []
    for i, pa in enumerate(pa_values):
        for j, pb in enumerate(pb_values):
            exact = chessboard.chsh_exact(pattern, pa, pb).bell
            row = {"p_a": float(pa), "p_b": float(pb), "bell_exact": float(exact)}
            if trials:
                batch = chessboard.simulate(
                    pattern, SwitchPolicy(float(pa), float(pb)), trials, Seeds.derive(seed, i, j)
                )
                est = estimate(batch)
                row["bell_mc"], row["se"] = est.bell, est.se
            else:
                row["bell_mc"] = row["se"] = None
            row["violating"] = abs(exact) > 2
            rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    pattern = load_pattern_arg(args.pattern)
    try:
        pa_values, pb_values = (
            [probability(x) for x in given.split(",")] if given
            else [Fraction(k, args.steps) for k in range(args.steps + 1)]
            for given in (args.pa_values, args.pb_values)
        )
    except argparse.ArgumentTypeError as exc:
        raise CliError(EXIT_CONFIG, f"bad grid value: {exc}") from None
    if not pa_values or not pb_values:
        raise CliError(EXIT_CONFIG, "empty grid")
    rows = sweep_rows(pa_values, pb_values, pattern, args.trials, args.seed)
    header = ["p_a", "p_b", "bell_exact", "bell_mc", "se", "violating"]
    with Output(args.output) as fh:
        write_blocks(fh, [(header, [[r[h] if h != "violating" else int(r[h]) for h in header] for r in rows])])
    if args.figure:
        from .plotting import sweep_figure

        try:
            sweep_figure(rows, args.figure)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write figure: {exc}") from None
    return EXIT_OK


def aerts_rows(thetas, n: int, seed: int):
    rows = []
    for k, theta in enumerate(thetas):
        seq = aerts.sequential_run(stream(seed, k, 0), theta, n)
        mc, mc_se = aerts.counterfactual_joint_mc(stream(seed, k, 1), theta, n)
        rows.append(
            {
                "theta": theta,
                "sequential_rate": seq.conditional_rate,
                "expected": aerts.malus_probability(theta),
                "se": seq.conditional_se,
                "n": seq.first_plus,
                "joint_rate": seq.joint_rate,
                "joint_se": seq.joint_se,
                "counterfactual_joint": aerts.counterfactual_joint(theta),
                "oracle_mc": mc,
                "oracle_se": mc_se,
            }
        )
    return rows


AERTS_HEADER = [
    "theta", "sequential_rate", "expected", "se", "n",
    "joint_rate", "joint_se", "counterfactual_joint", "oracle_mc", "oracle_se",
]


def cmd_aerts(args) -> int:
    rows = aerts_rows(args.theta, args.n, args.seed)
    with Output(args.output) as fh:
        if args.format == "json":
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        else:
            write_blocks(fh, [(AERTS_HEADER, [[r[h] for h in AERTS_HEADER] for r in rows])])
    if args.figure:
        from .plotting import aerts_figure

        try:
            aerts_figure(rows, args.figure)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write figure: {exc}") from None
    return EXIT_OK


def _run_config(args):
    from .harness import protocol as proto

    if args.config:
        try:
            cfg = proto.config_from_dict(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None
        endpoints = dict(cfg.endpoints)
    else:
        cfg = None
        endpoints = {}
    for role in proto.ROLES:
        flag = getattr(args, f"{role}_endpoint", None)
        if flag:
            endpoints[role] = proto.Endpoint.parse(flag)
    endpoints = proto.endpoints_from_env(endpoints)
    try:
        if cfg is None:
            return proto.RunConfig(
                pattern=load_pattern_arg(args.pattern),
                policy=SwitchPolicy(float(args.pa), float(args.pb)),
                n_trials=args.trials,
                seeds=Seeds.from_master(args.seed),
                endpoints=endpoints,
                sync_every=args.sync_every,
                high_water=args.sync_every,
            )
        return dataclasses.replace(cfg, endpoints=endpoints)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def cmd_serve(args) -> int:
    from .harness import collector_summary, run_collector, run_source, run_station

    config = _run_config(args)
    # every role dials or binds the collector; the source also dials both stations
    needed = {"source": ("collector", "alice", "bob"), "alice": ("alice", "collector"),
              "bob": ("bob", "collector"), "collector": ("collector",)}[args.role]
    missing = [r for r in needed if r not in config.endpoints]
    if missing:
        raise CliError(EXIT_CONFIG, f"{args.role} needs endpoints for: {', '.join(missing)}")
    try:
        if args.role == "source":
            s = run_source(config, args.transcript)
            print(json.dumps({"role": "source", "sent": s.n_sent, "acks": s.acks}))
        elif args.role in ("alice", "bob"):
            s = run_station(config, args.role, args.transcript)
            print(json.dumps({"role": args.role, "processed": s.processed, "rejected": len(s.rejected)}))
        else:
            res = run_collector(config, args.transcript, args.records)
            summary = collector_summary(res)
            if args.summary:
                Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n")
            print(json.dumps({k: summary[k] for k in ("coincidences", "coincidence_fraction", "chsh")}))
            for e in res.errors:
                logging.error("protocol: %s", e)
            if res.errors:
                return EXIT_AUDIT
            if res.stats_error:
                logging.error("estimate unavailable: %s", res.stats_error)
                return EXIT_STATS
    except (ConnectionError, OSError) as exc:
        print(f"{args.role}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _transcript_map(items) -> dict:
    from .harness import protocol as proto

    out = {}
    for item in items:
        p = Path(item)
        if p.is_dir():
            for role in proto.ROLES:
                f = p / f"{role}.transcript.jsonl"
                if f.exists():
                    out[role] = f
        elif "=" in item:
            role, path = item.split("=", 1)
            out[role] = Path(path)
        else:
            out[p.name.split(".")[0]] = p
    return out


def cmd_audit(args) -> int:
    from .harness import audit_run

    transcripts = _transcript_map(args.transcripts)
    if not transcripts:
        raise CliError(EXIT_CONFIG, "no transcripts given")
    try:
        verdict = audit_run(transcripts)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot read transcripts: {exc}") from None
    print(verdict.describe())
    return EXIT_OK if verdict.passed else EXIT_AUDIT


def cmd_harness(args) -> int:
    from .harness import protocol as proto
    from .harness import run_processes, run_threads

    config = proto.RunConfig(
        pattern=load_pattern_arg(args.pattern),
        policy=SwitchPolicy(float(args.pa), float(args.pb)),
        n_trials=args.trials,
        seeds=Seeds.from_master(args.seed),
        sync_every=args.sync_every,
        high_water=args.sync_every,
    )
    runner = run_processes if args.processes else run_threads
    try:
        run = runner(config, args.workdir)
    except (RuntimeError, OSError) as exc:
        print(f"harness failed: {exc}", file=sys.stderr)
        return EXIT_IO
    res = run.collector
    out = {
        "records": str(run.records_path),
        "coincidence_fraction": res.efficiency.fraction,
        "singles": len(res.singles),
        "errors": res.errors,
        "chsh": res.chsh.as_dict() if res.chsh else None,
        "stats_error": res.stats_error,
        "audit": run.audit.describe(),
    }
    print(json.dumps(out, indent=2))
    if not run.audit.passed or res.flagged:
        return EXIT_AUDIT
    return EXIT_STATS if res.stats_error else EXIT_OK


# --- parser -------------------------------------------------------------------------


def _add_pattern(p):
    p.add_argument("--pattern", default="canonical", help='"canonical" or a file of "i j" lines')


def _add_policy(p, default="0.9"):
    p.add_argument("--pa", type=probability, default=probability(default), help="Alice switch probability")
    p.add_argument("--pb", type=probability, default=probability(default), help="Bob switch probability")


def _add_output(p, formats=("csv", "json")):
    p.add_argument("--format", choices=formats, default="csv")
    p.add_argument("--output", "-o", default=None, help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvbell", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact", help="exact correlations by enumeration")
    _add_pattern(p)
    _add_policy(p, "1")
    p.add_argument("--mode", choices=[m.value for m in CollectionMode], default="switch")
    _add_output(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("simulate", help="Monte Carlo run with records and summary")
    _add_pattern(p)
    _add_policy(p)
    p.add_argument("--trials", type=positive_int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=[m.value for m in CollectionMode], default="switch")
    p.add_argument("--records", help="write trial records (one JSON object per line)")
    p.add_argument("--debug-lambda", action="store_true", help="include hidden variables in records")
    _add_output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="exact and Monte Carlo Bell value over a (p_a, p_b) grid")
    _add_pattern(p)
    p.add_argument("--steps", type=positive_int, default=10, help="grid k/steps for k = 0..steps")
    p.add_argument("--pa-values", help="comma-separated p_a values (overrides --steps)")
    p.add_argument("--pb-values", help="comma-separated p_b values (overrides --steps)")
    p.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials per point (0 = none)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default=None)
    p.add_argument("--figure", help="also render a PNG heat map here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("aerts", help="sequential and counterfactual statistics of the circle model")
    p.add_argument("--theta", type=angle_list, default=angle_list(DEFAULT_THETAS),
                   help=f"comma-separated tilts, e.g. {DEFAULT_THETAS}")
    p.add_argument("--n", type=positive_int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)
    p.add_argument("--figure", help="also render a PNG of the rates here")
    p.set_defaults(func=cmd_aerts)

    for name, helptext in (("serve", "run one role of the distributed harness"),
                           ("harness", "run all four roles locally")):
        p = sub.add_parser(name, help=helptext)
        _add_pattern(p)
        _add_policy(p)
        p.add_argument("--trials", type=positive_int, default=100_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--sync-every", type=positive_int, default=10_000)
        if name == "serve":
            p.add_argument("--role", required=True, choices=["source", "alice", "bob", "collector"])
            p.add_argument("--config", help="run configuration JSON (overrides policy flags)")
            for role in ("source", "alice", "bob", "collector"):
                p.add_argument(f"--{role}", dest=f"{role}_endpoint", metavar="HOST:PORT")
            p.add_argument("--transcript", help="write this role's message transcript")
            p.add_argument("--records", help="collector: write joined records here")
            p.add_argument("--summary", help="collector: write run summary JSON here")
            p.set_defaults(func=cmd_serve)
        else:
            p.add_argument("--workdir", default="harness-run")
            p.add_argument("--processes", action="store_true", help="separate OS processes, not threads")
            p.set_defaults(func=cmd_harness)

    p = sub.add_parser("audit", help="locality audit over run transcripts")
    p.add_argument("transcripts", nargs="+", help="directory, ROLE=PATH, or ROLE.transcript.jsonl")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except chessboard.PatternError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATS
