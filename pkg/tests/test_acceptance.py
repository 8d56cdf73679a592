"""Acceptance gate: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.
"""

import random
import time
from contextlib import contextmanager

from rpmem import bench, checker, configs, engine, remotelog
from rpmem.bench import run_benchmark
from rpmem.checker import build_ctx, explore, explore_naive, run_matrix
from rpmem.configs import Arity, Primitive, ServerConfig, select_recipe
from rpmem.engine import Transport
from rpmem.memory import Address, PersistenceDomain, Region, read_image
from rpmem.recipes import UpdateSpec
from rpmem.remotelog import decode_record, encode_record, scan_log_tail


@contextmanager
def criterion(tag):
    started = time.time()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {tag}: FAIL ({time.time() - started:.1f}s)")
        raise
    print(f"ACCEPTANCE {tag}: PASS ({time.time() - started:.1f}s)")


def test_criterion_1_catalog_matrix_all_correct():
    with criterion("1 catalog 72/72 correct via exhaustive exploration"):
        started = time.time()
        report = run_matrix(Transport.IB_ROCE)
        elapsed = time.time() - started
        catalog = [r for r in report.rows if r.expected is None]
        assert len(catalog) == 72
        assert all(r.verdict.correct for r in catalog), [
            r.recipe_id for r in catalog if not r.verdict.correct
        ]
        assert elapsed < 120, f"matrix took {elapsed:.1f}s"


def _assert_violated_with_replayable_counterexample(ctx):
    verdict = explore(ctx)
    assert not verdict.correct, ctx.recipe.recipe_id
    cx = verdict.counterexample
    states = list(engine.walk(ctx, cx.schedule))
    crash_state = states[cx.crash_index]
    reproduced = checker.check_obligations(ctx, crash_state)
    assert reproduced is not None and reproduced.kind == cx.obligation.kind
    assert engine.recover_image(ctx, crash_state) == cx.image


def test_criterion_2_paper_asserted_necessity_mutants():
    with criterion("2 necessity mutants violated with replayable counterexamples"):
        # (a) one-sided persistence is not reliable on DMP behind DDIO
        for region in (Region.DRAM, Region.PM):
            for primitive in Primitive:
                ctx = build_ctx(
                    ServerConfig(PersistenceDomain.DMP, True, region),
                    primitive, Arity.SINGLETON, mutant="drop-responder-flush",
                )
                _assert_violated_with_replayable_counterexample(ctx)
        # (b) the RNIC buffers are outside MHP, so the flush is load-bearing
        for primitive in (Primitive.WRITE, Primitive.WRITE_IMM):
            ctx = build_ctx(
                ServerConfig(PersistenceDomain.MHP, True, Region.DRAM),
                primitive, Arity.SINGLETON, mutant="drop-flush",
            )
            _assert_violated_with_replayable_counterexample(ctx)
        # (c) iWARP completions can fire before the payload leaves the requester
        ctx = build_ctx(
            ServerConfig(PersistenceDomain.WSP, True, Region.DRAM, Transport.IWARP),
            Primitive.WRITE, Arity.SINGLETON, mutant="completion-only",
        )
        _assert_violated_with_replayable_counterexample(ctx)
        # (d) a plain write may be ordered before the flush that was fencing it
        for region in (Region.DRAM, Region.PM):
            ctx = build_ctx(
                ServerConfig(PersistenceDomain.DMP, False, region),
                Primitive.WRITE, Arity.COMPOUND, mutant="de-atomize",
            )
            _assert_violated_with_replayable_counterexample(ctx)


def test_criterion_3_wsp_needs_no_flush_on_ib():
    with criterion("3 WSP write singleton without flush is correct (IB/RoCE)"):
        for ddio in (True, False):
            for region in (Region.DRAM, Region.PM):
                config = ServerConfig(PersistenceDomain.WSP, ddio, region)
                recipe = configs.select_recipe(config, Primitive.WRITE, Arity.SINGLETON)
                assert not any(
                    step.__class__.__name__ == "PostFlush" for step in recipe.steps
                )
                assert explore(build_ctx(config, Primitive.WRITE, Arity.SINGLETON)).correct


def test_criterion_4_ordering_safety_at_every_crash_point():
    with criterion("4 no correct compound scenario recovers second-without-first"):
        for config, primitive, arity in configs.all_scenarios():
            if arity is not Arity.COMPOUND:
                continue
            ctx = build_ctx(config, primitive, arity)
            verdict = explore(ctx)
            assert verdict.correct, ctx.recipe.recipe_id
            # the ordering obligation was evaluated at every deduplicated state
            assert verdict.statistics.crash_points == verdict.statistics.states
            assert ctx.recipe.ordered_pair == ("a", "b")


def test_criterion_5_brute_force_oracle_agreement():
    with criterion("5 naive no-dedup enumerator agrees with the explorer"):
        scenarios = checker.oracle_scenarios()
        assert len(scenarios) >= 40, "oracle coverage collapsed"
        for config, primitive, arity, ctx in scenarios:
            fast = explore(ctx)
            naive = explore_naive(ctx)
            assert fast.status == naive.status == "correct", ctx.recipe.recipe_id


def test_criterion_6_benchmark_trends():
    with criterion("6 latency trends under the default cost model"):
        started = time.time()
        report = run_benchmark()
        latency = report.latency
        # (a) one-sided beats message passing on MHP/WSP singletons, >= 25%
        for domain in (PersistenceDomain.MHP, PersistenceDomain.WSP):
            for ddio in (True, False):
                one_sided = latency(domain, ddio, Region.DRAM, Primitive.WRITE, Arity.SINGLETON)
                message = latency(domain, ddio, Region.DRAM, Primitive.SEND, Arity.SINGLETON)
                assert (message - one_sided) / message >= 0.25
        # (b) WSP one-sided singleton 20-30% below MHP one-sided
        wsp = latency(PersistenceDomain.WSP, True, Region.DRAM, Primitive.WRITE, Arity.SINGLETON)
        mhp = latency(PersistenceDomain.MHP, True, Region.DRAM, Primitive.WRITE, Arity.SINGLETON)
        assert 0.20 <= (mhp - wsp) / mhp <= 0.30
        # (c) DMP+DDIO compound: write-based costs at least twice send-based
        write_c = latency(PersistenceDomain.DMP, True, Region.DRAM, Primitive.WRITE, Arity.COMPOUND)
        send_c = latency(PersistenceDomain.DMP, True, Region.DRAM, Primitive.SEND, Arity.COMPOUND)
        assert write_c >= 2 * send_c
        # (d) WSP compound one-sided beats message passing by >= 15%
        one_sided_c = latency(PersistenceDomain.WSP, True, Region.DRAM, Primitive.WRITE, Arity.COMPOUND)
        message_c = latency(PersistenceDomain.WSP, True, Region.DRAM, Primitive.SEND, Arity.COMPOUND)
        assert (message_c - one_sided_c) / message_c >= 0.15
        # (e) DDIO changes nothing on MHP and WSP
        for domain in (PersistenceDomain.MHP, PersistenceDomain.WSP):
            for region in Region:
                for primitive in Primitive:
                    for arity in Arity:
                        assert latency(domain, True, region, primitive, arity) == latency(
                            domain, False, region, primitive, arity
                        )
        assert time.time() - started < 30


# -- criterion 7: torn writes ------------------------------------------------

LOG_BASE = 64
R0 = encode_record(b"base")        # 16 bytes, committed before the run
R1 = encode_record(b"append")      # 16 bytes, the first update
R2 = encode_record(b"")            # 8 bytes, the dependent second update


def _log_scenario(config, primitive):
    updates = (
        UpdateSpec("a", Address(Region.PM, LOG_BASE + 16), R1),
        UpdateSpec("b", Address(Region.PM, LOG_BASE + 32), R2),
    )
    recipe = select_recipe(config, primitive, Arity.COMPOUND, updates=updates)
    initial = {
        LOG_BASE: R0[:8],
        LOG_BASE + 8: R0[8:],
    }
    return engine.build_scenario(config, recipe, config.transport, initial_pm=initial)


def _sweep_images(ctx):
    frontier = [engine.initial_state(ctx)]
    visited = {frontier[0]}
    while frontier:
        state = frontier.pop()
        yield engine.recover_image(ctx, state)
        for event in engine.enabled_events(ctx, state):
            succ = engine.apply_event(ctx, state, event)
            if succ not in visited:
                visited.add(succ)
                frontier.append(succ)


def test_criterion_7_torn_write_suite():
    with criterion("7 torn-write suite: corruption fuzz + coupled crash scans"):
        # 10^4 randomized corruptions inside the checksummed region
        rng = random.Random(20240811)
        for _ in range(10_000):
            count = rng.randint(1, 5)
            payloads = [rng.randbytes(rng.randint(0, 64)) for _ in range(count)]
            records = [encode_record(p) for p in payloads]
            starts = [sum(len(r) for r in records[:i]) for i in range(count)]
            log = bytearray(b"".join(records))
            victim = rng.randrange(count)
            if rng.random() < 0.5:
                pos = starts[victim] + rng.randrange(8 + len(payloads[victim]))
                log[pos] ^= 1 << rng.randrange(8)
            else:  # stomp a whole unit, the way a lost write would
                unit = starts[victim] + 8 * rng.randrange(len(records[victim]) // 8)
                log[unit : unit + 8] = rng.randbytes(8)
            assert scan_log_tail(bytes(log)) <= starts[victim]

        # every crash image of real append scenarios scans safely
        couples = [
            (ServerConfig(PersistenceDomain.DMP, False, Region.DRAM), Primitive.WRITE),
            (ServerConfig(PersistenceDomain.DMP, True, Region.DRAM), Primitive.WRITE),
            (ServerConfig(PersistenceDomain.DMP, True, Region.DRAM), Primitive.SEND),
            (ServerConfig(PersistenceDomain.MHP, True, Region.DRAM), Primitive.WRITE),
            (ServerConfig(PersistenceDomain.WSP, True, Region.DRAM), Primitive.SEND),
        ]
        for config, primitive in couples:
            ctx = _log_scenario(config, primitive)
            assert explore(ctx).correct
            for image in _sweep_images(ctx):
                log = read_image(image, LOG_BASE, 64)
                tail = scan_log_tail(log)
                assert tail in (16, 32, 40), (config.label, tail)
                r1_ok = decode_record(log, 16) is not None
                r2_ok = decode_record(log, 32) is not None
                # never a record whose predecessor is absent
                assert not (r2_ok and not r1_ok), config.label
                if tail > 16:
                    assert r1_ok
                if tail > 32:
                    assert r2_ok


def test_criterion_8_determinism():
    with criterion("8 matrix and bench CSVs are byte-identical across runs"):
        matrix_a = checker.matrix_csv(run_matrix(Transport.IB_ROCE))
        matrix_b = checker.matrix_csv(run_matrix(Transport.IB_ROCE))
        assert matrix_a == matrix_b
        bench_a = bench.bench_csv(run_benchmark())
        bench_b = bench.bench_csv(run_benchmark())
        assert bench_a == bench_b
