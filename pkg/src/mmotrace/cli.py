"""Command-line entry points: analyze, generate, verify.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 schema error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .capture import PcapError

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_SCHEMA = 0, 1, 2, 3


def _hex(s: str) -> str:
    try:
        bytes.fromhex(s)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("salt must be hex") from exc
    return s


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmotrace", description="WoW traffic analyzer and trace generator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    a = sub.add_parser("analyze", help="analyze a pcap and write a report bundle")
    a.add_argument("--in", dest="input", required=True, help="input pcap")
    a.add_argument("--out", required=True, help="report bundle directory")
    a.add_argument("--slot-minutes", type=int, default=60, help="time-of-day slot width, divides 60")
    a.add_argument("--teleport-factor", type=float, default=100.0,
                   help="drop steps faster than this multiple of the median step speed")
    a.add_argument("--anon-salt", type=_hex, help="hex key for pseudonymizing IPs and tokens")
    a.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    a.add_argument("--tz-offset", type=int, default=0, help="local clock offset from UTC in seconds")

    g = sub.add_parser("generate", help="generate a synthetic pcap and its manifest")
    g.add_argument("--scenario", required=True, help="scenario JSON file")
    g.add_argument("--seed", type=_u64, help="override the scenario seed")
    g.add_argument("--out", required=True, help="output pcap")
    g.add_argument("--manifest", required=True, help="output ground-truth manifest")

    v = sub.add_parser("verify", help="check a report bundle against a manifest")
    v.add_argument("--report", required=True, help="report bundle directory")
    v.add_argument("--manifest", required=True, help="manifest written by generate")
    v.add_argument("--playing-tol", type=float, default=0.01, help="relative, per user")
    v.add_argument("--speed-tol", type=float, default=0.02, help="relative, mean filtered speed")
    v.add_argument("--group-tol", type=int, default=0, help="absolute, per group-table cell")
    v.add_argument("--anon-salt", type=_hex, help="salt the report was written with")
    return p


def cmd_analyze(args) -> int:
    from .pipeline import analyze
    from .report import write_bundle

    if not 0 < args.slot_minutes <= 60 or 60 % args.slot_minutes:
        print("error: --slot-minutes must divide 60", file=sys.stderr)
        return EXIT_INPUT
    if args.teleport_factor <= 1:
        print("error: --teleport-factor must be > 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        a = analyze(args.input, args.slot_minutes, args.teleport_factor, args.tz_offset)
    except (OSError, PcapError) as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_bundle(a, args.out, args.anon_salt, args.format)
    return EXIT_OK


def cmd_generate(args) -> int:
    from .synthgen import ScenarioError, generate, load_scenario

    try:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            sc.seed = args.seed
            sc.validate()
    except OSError as exc:
        print(f"error: cannot read {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_INPUT
    generate(sc, args.out, args.manifest)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SchemaError, load_manifest_checked, verify

    try:
        manifest = load_manifest_checked(args.manifest)
        checks = verify(args.report, manifest, args.playing_tol, args.speed_tol, args.group_tol, args.anon_salt)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SchemaError as exc:
        print(f"error: schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.ok for c in checks) else EXIT_VERIFY


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    return {"analyze": cmd_analyze, "generate": cmd_generate, "verify": cmd_verify}[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
