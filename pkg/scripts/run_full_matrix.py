#!/usr/bin/env python3
"""Run the full correctness matrix, the negative suite, and both transports.

Prints one line per scenario plus a summary; exits nonzero if any catalog
cell fails or any asserted mutant verdict disagrees.
"""

import sys
import time

from rpmem import checker
from rpmem.engine import Transport


def main() -> int:
    failures = 0
    for transport in (Transport.IB_ROCE, Transport.IWARP):
        started = time.time()
        report = checker.run_matrix(transport, mutants=(transport is Transport.IB_ROCE))
        elapsed = time.time() - started
        catalog = [r for r in report.rows if r.expected is None]
        mutants = [r for r in report.rows if r.expected is not None]
        for row in report.rows:
            stats = row.verdict.statistics
            expect = f" (expected {row.expected})" if row.expected else ""
            print(
                f"{transport.value:5s} {row.recipe_id:60s} {row.verdict.status:9s}"
                f" states={stats.states:6d}{expect}"
            )
        ok = sum(1 for r in catalog if r.verdict.correct)
        print(f"-- {transport.value}: catalog {ok}/{len(catalog)} correct in {elapsed:.1f}s")
        failures += len(catalog) - ok
        if mutants:
            agreed = sum(1 for r in mutants if r.verdict.status == r.expected)
            print(f"-- {transport.value}: mutants {agreed}/{len(mutants)} as asserted")
            failures += len(mutants) - agreed
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
