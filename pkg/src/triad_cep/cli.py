"""Command line interface: ``triad-cep run|gen|graph``."""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from typing import List, Optional

from .aggregate import DEFAULT_FLOW_TIMEOUT_US
from .correlate import CorrelationConfig, EndpointMatch
from .model import RuleId
from .pipeline import EXIT_CLEAN, EXIT_IO, EXIT_USAGE, PipelineInputs, PipelineIOError, run_pipeline
from .rules import RuleConfig
from .scenario import InvalidSpec, Profile, ScenarioSpec, generate, host_layout, parse_injection

RULE_ALIASES = {f"r{i}": rid for i, rid in enumerate(RuleId, start=1)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _rules(text: str):
    out = set()
    for part in filter(None, (p.strip().lower() for p in text.split(","))):
        if part not in RULE_ALIASES:
            raise argparse.ArgumentTypeError(f"unknown rule {part!r} (use r1..r6)")
        out.add(RULE_ALIASES[part])
    return frozenset(out)


def _positive_fraction(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--cause", action="append", default=[], metavar="FILE", help="cause records (JSON lines)")
    g.add_argument("--effect", action="append", default=[], metavar="FILE", help="effect records (JSON lines)")
    g.add_argument("--pcap", action="append", default=[], metavar="FILE", help="capture file")
    g.add_argument("--hosts", metavar="FILE", help="address to host_id map (JSON lines)")
    c = p.add_argument_group("correlation")
    c.add_argument("--window-us", type=int, default=5_000_000)
    c.add_argument("--skew-us", type=int, default=100_000)
    c.add_argument("--match", choices=[m.value for m in EndpointMatch], default=EndpointMatch.HOST_ONLY.value)
    c.add_argument("--flow-timeout-us", type=int, default=DEFAULT_FLOW_TIMEOUT_US)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="triad-cep", description="Three-level cause/traffic/effect event correlation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the full pipeline and emit a report")
    _add_inputs(run)
    r = run.add_argument_group("rules")
    r.add_argument("--rules", type=_rules, default=frozenset(RuleId), help="comma list, e.g. r1,r3")
    r.add_argument("--drift-ignore", action="append", default=[], metavar="KEY")
    r.add_argument("--degree-factor", type=_positive_fraction, default=Fraction(1, 3))
    r.add_argument("--error-rate-z", type=_positive_fraction, default=Fraction(2))
    r.add_argument("--rare-max", type=int, default=1)
    o = run.add_argument_group("outputs")
    o.add_argument("--out", metavar="FILE", help="report file (default stdout)")
    o.add_argument("--dot", metavar="FILE", help="also write the topology as DOT")

    graph = sub.add_parser("graph", help="emit only the Level-3 topology as DOT")
    _add_inputs(graph)
    graph.add_argument("--dot", metavar="FILE", help="DOT file (default stdout)")

    gen = sub.add_parser("gen", help="generate a synthetic scenario corpus")
    gen.add_argument("--profile", required=True, choices=["maintenance", "plc"])
    gen.add_argument("--hosts", type=int, required=True, metavar="N")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--sessions", type=int, default=None, help="sessions per machine / write rounds per PLC")
    gen.add_argument("--inject", action="append", default=[], metavar="KIND@HOST")
    gen.add_argument("--out-dir", required=True, metavar="DIR")
    return parser


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise PipelineIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _configs(args):
    try:
        corr = CorrelationConfig(args.window_us, args.skew_us, EndpointMatch(args.match))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.flow_timeout_us <= 0:
        raise UsageError("--flow-timeout-us must be positive")
    return corr


def _inputs(args) -> PipelineInputs:
    inputs = PipelineInputs(args.cause, args.effect, args.pcap, args.hosts)
    if not inputs:
        raise UsageError("no input files: give at least one --cause, --effect or --pcap")
    return inputs


def cmd_run(args) -> int:
    corr = _configs(args)
    try:
        rules = RuleConfig(
            drift_ignore=frozenset(args.drift_ignore),
            degree_outlier_factor=args.degree_factor,
            error_rate_z=args.error_rate_z,
            rare_setting_max_count=args.rare_max,
            lookback_us=corr.window_us,
            enabled=args.rules,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    analysis = run_pipeline(_inputs(args), corr, args.flow_timeout_us, rules)
    _write(args.out, analysis.report)
    if args.dot:
        _write(args.dot, analysis.dot)
    return analysis.exit_code


def cmd_graph(args) -> int:
    corr = _configs(args)
    analysis = run_pipeline(_inputs(args), corr, args.flow_timeout_us)
    _write(args.dot, analysis.dot)
    return EXIT_CLEAN


def cmd_gen(args) -> int:
    profile = Profile.parse(args.profile)
    try:
        hosts = host_layout(profile, args.hosts)
        injected = tuple(parse_injection(text, hosts) for text in args.inject)
        spec = ScenarioSpec(args.seed, profile, args.hosts, injected=injected)
        if args.sessions is not None:
            spec = ScenarioSpec(args.seed, profile, args.hosts, args.sessions, injected)
        scenario = generate(spec)
    except InvalidSpec as exc:
        raise UsageError(str(exc)) from None
    try:
        paths = scenario.write(args.out_dir)
    except OSError as exc:
        raise PipelineIOError(f"cannot write to {args.out_dir}: {exc.strerror or exc}") from exc
    counts = scenario.manifest["counts"]
    print(
        f"wrote {counts['causes']} causes, {counts['effects']} effects, {counts['packets']} packets "
        f"to {args.out_dir} ({', '.join(sorted(paths))})"
    )
    return EXIT_CLEAN


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "gen": cmd_gen, "graph": cmd_graph}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"triad-cep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineIOError as exc:
        print(f"triad-cep: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
