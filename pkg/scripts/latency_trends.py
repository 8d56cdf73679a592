#!/usr/bin/env python3
"""Reproduce the relative latency picture: six panels of twelve bars each.

Optionally pass a cost-model file (key = integer lines) to re-run the
trends under different charges.
"""

import sys

from rpmem import bench
from rpmem.configs import Arity, Primitive
from rpmem.memory import PersistenceDomain


def main() -> int:
    cost = bench.CostModel()
    if len(sys.argv) > 1:
        with open(sys.argv[1]) as handle:
            cost = bench.load_cost_model(handle.read())
    report = bench.run_benchmark(cost=cost)
    peak = max(row.latency for row in report.rows)
    for arity in Arity:
        for domain in PersistenceDomain:
            print(f"\n== {arity.value}: {domain.value.upper()} ==")
            for row in report.rows:
                if row.arity is not arity or row.config.domain is not domain:
                    continue
                bar = "#" * max(1, round(40 * row.latency / peak))
                print(f"  {row.scenario_label:28s} {row.latency:6d}  {bar}")

    def lat(domain, ddio, region, primitive, arity):
        from rpmem.memory import Region
        return report.latency(domain, ddio, Region(region), primitive, arity)

    wsp = lat(PersistenceDomain.WSP, True, "dram", Primitive.WRITE, Arity.SINGLETON)
    mhp = lat(PersistenceDomain.MHP, True, "dram", Primitive.WRITE, Arity.SINGLETON)
    mp = lat(PersistenceDomain.MHP, True, "dram", Primitive.SEND, Arity.SINGLETON)
    wc = lat(PersistenceDomain.DMP, True, "dram", Primitive.WRITE, Arity.COMPOUND)
    sc = lat(PersistenceDomain.DMP, True, "dram", Primitive.SEND, Arity.COMPOUND)
    print("\nheadline ratios:")
    print(f"  one-sided vs message passing (MHP singleton): {(mp - mhp) / mp:.0%} lower")
    print(f"  skipping the flush on WSP:                    {(mhp - wsp) / mhp:.0%} lower")
    print(f"  DMP+DDIO compound, write vs send:             {wc / sc:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
