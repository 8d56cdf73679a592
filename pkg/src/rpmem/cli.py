"""Command-line frontend: list configurations, show recipes, check, matrix, bench.

Exit codes: 0 all verdicts correct, 1 a violated verdict was produced,
2 usage error or inconclusive exploration.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import bench, checker, configs, engine, memory, recipes
from .configs import Arity, Primitive, ServerConfig
from .engine import Transport
from .memory import PersistenceDomain, Region

EXIT_CORRECT = 0
EXIT_VIOLATED = 1
EXIT_USAGE = 2


def _scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--domain", required=True, choices=[d.value for d in PersistenceDomain])
    parser.add_argument("--ddio", required=True, choices=["on", "off"])
    parser.add_argument("--rqwrb", required=True, choices=["dram", "pm"])
    parser.add_argument("--primitive", required=True, choices=[p.value for p in Primitive])
    parser.add_argument("--arity", required=True, choices=[a.value for a in Arity])
    parser.add_argument("--transport", default="ib", choices=["ib", "iwarp"])


def _parse_scenario(args) -> tuple[ServerConfig, Primitive, Arity]:
    config = ServerConfig(
        PersistenceDomain(args.domain),
        args.ddio == "on",
        Region(args.rqwrb),
        Transport(args.transport),
    )
    return config, Primitive(args.primitive), Arity(args.arity)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rpmem-check",
        description="Model remote persistence methods and check them against crashes",
    )
    parser.add_argument(
        "--no-timestamp", action="store_true",
        help="omit the generated-at line from human-readable reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def subparser(name, **kw):
        p = sub.add_parser(name, **kw)
        # accepted in either position relative to the subcommand
        p.add_argument(
            "--no-timestamp", action="store_true", default=argparse.SUPPRESS,
            help=argparse.SUPPRESS,
        )
        return p

    subparser("list-configs", help="print the twelve server configurations")

    show = subparser("show-recipe", help="print one recipe in table notation")
    _scenario_flags(show)
    show.add_argument("--variant", help="named recipe variant (e.g. send-exchange)")

    check = subparser("check", help="explore one scenario exhaustively")
    _scenario_flags(check)
    check.add_argument("--mutant", help=f"negative-suite mutation: {', '.join(sorted(checker.MUTANTS))}")
    check.add_argument("--max-states", type=int, default=500_000)
    check.add_argument("--emulate-flush-with-read", action="store_true",
                       help="post flushes as RDMA Reads (identical drain semantics)")

    matrix = subparser("matrix", help="run all 72 scenarios (optionally plus mutants)")
    matrix.add_argument("--mutants", action="store_true")
    matrix.add_argument("--csv", type=Path)
    matrix.add_argument("--transport", default="ib", choices=["ib", "iwarp"])
    matrix.add_argument("--max-states", type=int, default=500_000)

    bench_p = subparser("bench", help="RemoteLog append latency over all scenarios")
    bench_p.add_argument("--n", type=int, default=10_000, help="appends per scenario")
    bench_p.add_argument("--cost", type=Path, help="cost model file (key = integer lines)")
    bench_p.add_argument("--csv", type=Path)
    return parser


def _stamp(args) -> list[str]:
    if args.no_timestamp:
        return []
    return [f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}"]


def _cmd_list_configs(args) -> int:
    for config in configs.enumerate_configs():
        ddio = "DDIO" if config.ddio else "noDDIO"
        region = "DRAM-RQWRB" if config.rqwrb_region is Region.DRAM else "PM-RQWRB"
        print(f"{config.domain.value.upper()} + {ddio} + {region}")
    return EXIT_CORRECT


def _cmd_show_recipe(args) -> int:
    config, primitive, arity = _parse_scenario(args)
    recipe = configs.select_recipe(config, primitive, arity, variant=args.variant)
    print(f"# {recipe.recipe_id}")
    for line in recipes.render(recipe):
        print(line)
    return EXIT_CORRECT


def _print_verdict(ctx, verdict, *, show_stats=True) -> None:
    print(f"recipe: {ctx.recipe.recipe_id}")
    print(f"verdict: {verdict.status.upper()}")
    if show_stats:
        s = verdict.statistics
        print(
            f"states={s.states} schedules={s.schedules} crash_points={s.crash_points}"
            + (f" stuck={s.stuck_states}" if s.stuck_states else "")
            + (f" blocked_sends={s.blocked_sends}" if s.blocked_sends else "")
        )
    if verdict.counterexample is not None:
        cx = verdict.counterexample
        print(f"violated obligation: {cx.obligation.kind} -- {cx.obligation.detail}")
        trace, image = checker.replay(ctx, cx.schedule, cx.crash_index)
        print("counterexample trace:")
        for line in trace:
            print(f"  {line}")
        print("recovered image (PM offsets with post-crash contents):")
        for offset in sorted(image):
            print(f"  0x{offset:04x}: {image[offset].hex()}")


def _cmd_check(args) -> int:
    config, primitive, arity = _parse_scenario(args)
    ctx = checker.build_ctx(
        config, primitive, arity, mutant=args.mutant,
        emulate_flush_with_read=args.emulate_flush_with_read,
    )
    verdict = checker.explore(ctx, max_states=args.max_states)
    _print_verdict(ctx, verdict)
    return EXIT_CORRECT if verdict.correct else EXIT_VIOLATED


def _cmd_matrix(args) -> int:
    report = checker.run_matrix(
        Transport(args.transport), mutants=args.mutants, max_states=args.max_states
    )
    csv_text = checker.matrix_csv(report)
    if args.csv:
        args.csv.write_text(csv_text)
    for line in _stamp(args):
        print(line)
    catalog = [r for r in report.rows if r.expected is None]
    correct = sum(1 for r in catalog if r.verdict.correct)
    print(f"catalog: {correct}/{len(catalog)} correct")
    if args.mutants:
        mutant_rows = [r for r in report.rows if r.expected is not None]
        agreed = sum(1 for r in mutant_rows if r.verdict.status == r.expected)
        print(f"mutants: {agreed}/{len(mutant_rows)} matched the asserted verdict")
        for row in report.mismatches():
            print(f"  MISMATCH {row.recipe_id}: expected {row.expected}, got {row.verdict.status}")
    if not args.csv:
        print(csv_text, end="")
    return EXIT_CORRECT if report.all_correct else EXIT_VIOLATED


def _cmd_bench(args) -> int:
    cost = bench.CostModel()
    if args.cost:
        cost = bench.load_cost_model(args.cost.read_text())
    report = bench.run_benchmark(n=args.n, cost=cost)
    csv_text = bench.bench_csv(report)
    if args.csv:
        args.csv.write_text(csv_text)
    else:
        for line in _stamp(args):
            print(line)
        print(csv_text, end="")
    return EXIT_CORRECT


_COMMANDS = {
    "list-configs": _cmd_list_configs,
    "show-recipe": _cmd_show_recipe,
    "check": _cmd_check,
    "matrix": _cmd_matrix,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return EXIT_USAGE if exc.code not in (0,) else 0
    try:
        return _COMMANDS[args.command](args)
    except checker.BudgetExceeded as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, ValueError, engine.EngineError, memory.ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
