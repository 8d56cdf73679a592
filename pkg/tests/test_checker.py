import pytest

from rpmem import checker, configs, engine
from rpmem.checker import BudgetExceeded, build_ctx, explore, explore_naive, replay
from rpmem.configs import Arity, Primitive, ServerConfig
from rpmem.engine import Transport
from rpmem.memory import PersistenceDomain, Region, UNIT_BYTES
from rpmem.recipes import UpdateSpec

DMP_DDIO = ServerConfig(PersistenceDomain.DMP, True, Region.DRAM)
DMP_NODDIO = ServerConfig(PersistenceDomain.DMP, False, Region.DRAM)
MHP = ServerConfig(PersistenceDomain.MHP, True, Region.DRAM)
WSP = ServerConfig(PersistenceDomain.WSP, True, Region.DRAM)
WSP_IWARP = ServerConfig(PersistenceDomain.WSP, True, Region.DRAM, Transport.IWARP)


def test_catalog_mhp_write_singleton_is_correct():
    verdict = explore(build_ctx(MHP, Primitive.WRITE, Arity.SINGLETON))
    assert verdict.correct
    assert verdict.statistics.crash_points == verdict.statistics.states


def test_one_sided_without_responder_flush_violates_dmp_ddio():
    ctx = build_ctx(DMP_DDIO, Primitive.WRITE, Arity.SINGLETON, mutant="flush-only")
    verdict = explore(ctx)
    assert not verdict.correct
    cx = verdict.counterexample
    assert cx.obligation.kind == "durability"
    # the write really made it to the cache, just not past it
    trace, image = replay(ctx, cx.schedule, cx.crash_index)
    assert trace[-1] == "POWER FAILURE"
    first = ctx.recipe.update("a")
    assert image.get(first.target.offset, b"\x00" * 8) != first.payload[:8]


def test_drop_responder_flush_counterexample_has_dirty_cache_line():
    ctx = build_ctx(DMP_DDIO, Primitive.WRITE, Arity.SINGLETON, mutant="drop-responder-flush")
    verdict = explore(ctx)
    assert not verdict.correct
    # replay to the crash state and look at where the payload actually sits
    states = list(engine.walk(ctx, verdict.counterexample.schedule))
    crash_state = states[verdict.counterexample.crash_index]
    from rpmem.memory import Stage
    assert any(u.stage is Stage.L3_CACHE and u.dirty for u in crash_state.units)


def test_de_atomized_compound_persists_second_without_first():
    ctx = build_ctx(DMP_NODDIO, Primitive.WRITE, Arity.COMPOUND, mutant="de-atomize")
    verdict = explore(ctx)
    assert not verdict.correct
    assert verdict.counterexample.obligation.kind == "ordering-safety"
    image = verdict.counterexample.image
    second = ctx.recipe.update("b")
    first = ctx.recipe.update("a")
    assert image[second.target.offset] == second.payload
    assert image.get(first.target.offset, b"\x00" * 8) != first.payload[:8]


def test_iwarp_completion_only_write_is_unsound():
    ctx = build_ctx(WSP_IWARP, Primitive.WRITE, Arity.SINGLETON, mutant="completion-only")
    verdict = explore(ctx)
    assert not verdict.correct
    # minimal counterexample: the payload never left the requester
    states = list(engine.walk(ctx, verdict.counterexample.schedule))
    assert states[-1].phases[0] <= engine.Phase.AT_TRANSPORT
    assert states[-1].units == ()


def test_catalog_recipe_under_iwarp_is_correct():
    verdict = explore(build_ctx(WSP_IWARP, Primitive.WRITE, Arity.SINGLETON))
    assert verdict.correct


def test_skip_wait_ack_finds_cache_resident_crash():
    ctx = build_ctx(DMP_DDIO, Primitive.WRITE, Arity.SINGLETON, mutant="skip-wait-ack")
    assert not explore(ctx).correct


def test_drop_flush_is_identity_on_wsp():
    ctx = build_ctx(WSP, Primitive.WRITE, Arity.SINGLETON, mutant="drop-flush")
    assert explore(ctx).correct


def test_unknown_mutant_rejected():
    with pytest.raises(KeyError):
        build_ctx(WSP, Primitive.WRITE, Arity.SINGLETON, mutant="no-such-thing")


def test_explore_is_deterministic():
    a = explore(build_ctx(DMP_DDIO, Primitive.SEND, Arity.SINGLETON))
    b = explore(build_ctx(DMP_DDIO, Primitive.SEND, Arity.SINGLETON))
    assert a.status == b.status
    assert a.statistics == b.statistics


def test_replay_of_a_complete_correct_run_recovers_the_update():
    ctx = build_ctx(MHP, Primitive.WRITE, Arity.SINGLETON)
    state = engine.initial_state(ctx)
    schedule = []
    while True:
        events = engine.enabled_events(ctx, state)
        if not events:
            break
        schedule.append(0)
        state = engine.apply_event(ctx, state, events[0])
    assert engine.asserted(ctx, state)
    trace, image = checker.replay(ctx, tuple(schedule))
    first = ctx.recipe.update("a")
    for i in range(0, len(first.payload), UNIT_BYTES):
        assert image[first.target.offset + i] == first.payload[i : i + UNIT_BYTES]
    assert trace[-1] == "POWER FAILURE"


def test_replay_is_deterministic_and_errors_on_bad_index():
    ctx = build_ctx(MHP, Primitive.WRITE, Arity.SINGLETON, mutant="drop-flush")
    verdict = explore(ctx)
    t1, i1 = replay(ctx, verdict.counterexample.schedule)
    t2, i2 = replay(ctx, verdict.counterexample.schedule)
    assert t1 == t2 and i1 == i2
    with pytest.raises(engine.EngineError, match="out of range"):
        replay(ctx, (99,))


def test_budget_exceeded_is_loud():
    with pytest.raises(BudgetExceeded):
        explore(build_ctx(DMP_DDIO, Primitive.SEND, Arity.SINGLETON), max_states=10)


def test_naive_oracle_agrees_on_a_violation():
    ctx = build_ctx(WSP_IWARP, Primitive.WRITE, Arity.SINGLETON, mutant="completion-only")
    assert explore_naive(ctx).status == explore(ctx).status == "violated"


def test_naive_budget_is_loud():
    ctx = build_ctx(MHP, Primitive.WRITE, Arity.SINGLETON)
    with pytest.raises(BudgetExceeded):
        explore_naive(ctx, max_steps=10)


def test_atomic_write_after_unflushed_write_is_still_unsafe():
    # moving the atomic write ahead of the flush leaves both updates racing
    # through the IIO: ordering is enforced by the flush, not the atomicity
    base = configs.select_recipe(DMP_NODDIO, Primitive.WRITE, Arity.COMPOUND)
    from rpmem.recipes import ReorderAdjacent, mutate

    swapped = mutate(base, ReorderAdjacent(1), "atomic-before-flush")
    ctx = engine.build_scenario(DMP_NODDIO, swapped)
    verdict = explore(ctx)
    assert not verdict.correct
    assert verdict.counterexample.obligation.kind == "ordering-safety"


def test_fence_is_an_alternative_ordering_mechanism():
    # a fenced plain write after the flush is safe; unfencing it is not
    from rpmem.recipes import (
        AssertPersisted, PostFlush, PostUpdate, Recipe, UnfenceOrDeAtomize,
        UpdateOp, UpdateSpec, WaitCompletion, mutate,
    )
    from rpmem.memory import Address

    updates = (
        UpdateSpec("a", Address(Region.PM, 64), b"\x01" * 16),
        UpdateSpec("b", Address(Region.PM, 0), b"\x02" * 8),
    )
    fenced = Recipe(
        "fenced-pair",
        (
            PostUpdate("u1", UpdateOp.WRITE, "a"),
            PostFlush("f1"),
            PostUpdate("u2", UpdateOp.WRITE, "b", fenced=True),
            PostFlush("f2"),
            WaitCompletion("f2"),
            AssertPersisted(("a", "b")),
        ),
        updates,
    )
    assert explore(engine.build_scenario(DMP_NODDIO, fenced)).correct
    unfenced = mutate(fenced, UnfenceOrDeAtomize(2), "unfenced")
    verdict = explore(engine.build_scenario(DMP_NODDIO, unfenced))
    assert not verdict.correct
    assert verdict.counterexample.obligation.kind == "ordering-safety"


def test_atomic_write_target_never_torn():
    # every reachable recovered image holds the whole old or whole new word
    ctx = build_ctx(DMP_NODDIO, Primitive.WRITE, Arity.COMPOUND)
    second = ctx.recipe.update("b")
    old = b"\x00" * UNIT_BYTES
    seen = set()
    frontier = [engine.initial_state(ctx)]
    visited = {frontier[0]}
    while frontier:
        state = frontier.pop()
        image = engine.recover_image(ctx, state)
        seen.add(image.get(second.target.offset, old))
        for event in engine.enabled_events(ctx, state):
            succ = engine.apply_event(ctx, state, event)
            if succ not in visited:
                visited.add(succ)
                frontier.append(succ)
    assert seen == {old, second.payload}


def test_ordered_pair_never_inverted_in_correct_compound():
    # direct sweep of one compound scenario, independent of explore()
    ctx = build_ctx(MHP, Primitive.WRITE, Arity.COMPOUND)
    first, second = ctx.recipe.update("a"), ctx.recipe.update("b")
    frontier = [engine.initial_state(ctx)]
    visited = {frontier[0]}
    while frontier:
        state = frontier.pop()
        image = engine.recover_image(ctx, state)
        b_new = image.get(second.target.offset) == second.payload
        a_new = all(
            image.get(first.target.offset + i) == first.payload[i : i + UNIT_BYTES]
            for i in range(0, len(first.payload), UNIT_BYTES)
        )
        assert not (b_new and not a_new)
        for event in engine.enabled_events(ctx, state):
            succ = engine.apply_event(ctx, state, event)
            if succ not in visited:
                visited.add(succ)
                frontier.append(succ)


def test_fast_recovery_path_agrees_with_full_recovery():
    # the obligation checker reads single words; replay builds whole images;
    # both must tell the same story at every reachable state
    import random

    from rpmem.memory import ZERO_WORD, persistence_stages

    scenarios = [
        (WSP, Primitive.WRITE, Arity.SINGLETON, None),
        (DMP_DDIO, Primitive.SEND, Arity.SINGLETON, None),
        (DMP_NODDIO, Primitive.WRITE, Arity.COMPOUND, "de-atomize"),
        (ServerConfig(PersistenceDomain.WSP, True, Region.PM), Primitive.SEND, Arity.SINGLETON, None),
    ]
    rng = random.Random(11)
    for config, primitive, arity, mutant in scenarios:
        ctx = build_ctx(config, primitive, arity, mutant=mutant)
        surviving = persistence_stages(config.domain)
        offsets = set()
        for update in ctx.recipe.updates:
            offsets.update(
                update.target.offset + i for i in range(0, len(update.payload), UNIT_BYTES)
            )
        for slot in ctx.rqwrb_slots:
            offsets.update(slot.offset + i for i in range(0, 48, UNIT_BYTES))
        for _ in range(40):
            state = engine.initial_state(ctx)
            while True:
                image = engine.recover_image(ctx, state)
                for offset in offsets:
                    fast = checker._surviving_value(ctx, state, surviving, offset)
                    assert fast == image.get(offset, ZERO_WORD), (config.label, offset)
                events = engine.enabled_events(ctx, state)
                if not events:
                    break
                state = engine.apply_event(ctx, state, rng.choice(events))


def test_matrix_csv_shape():
    report = checker.run_matrix(max_states=200_000)
    text = checker.matrix_csv(report)
    lines = text.splitlines()
    assert lines[0] == "domain,ddio,rqwrb,primitive,arity,transport,recipe-id,verdict,states,schedules,crash_points"
    assert len(lines) == 73
    assert all(line.endswith("correct") or ",correct," in line for line in lines[1:])


def test_negative_suite_matches_every_asserted_verdict():
    report = checker.run_matrix(mutants=True)
    mutant_rows = [r for r in report.rows if r.expected is not None]
    assert len(mutant_rows) == 33
    assert report.mismatches() == []
    # necessity rows really are violations, not vacuous passes
    assert sum(1 for r in mutant_rows if r.expected == "violated") == 29
