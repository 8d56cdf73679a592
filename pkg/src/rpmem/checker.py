"""Exhaustive crash-point and reordering exploration of persistence recipes.

For one (configuration, recipe) pair the explorer walks every schedule the
engine's enabled-event relation admits, deduplicating on the full machine
state, and injects a power failure at every reachable state.  Two
obligations are checked against each recovered image:

  * durability -- once the requester has passed the persistence marker,
    every declared update must be recoverable (directly at its target, or,
    where the recipe says so, as a complete validated message record in a
    PM-resident receive buffer);
  * ordering safety -- at *every* crash point of a two-update recipe, the
    second update must never be recovered without the first.

Exploration is breadth-first, so the first violation found is minimal in
event count and its schedule replays deterministically.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from . import configs, engine, memory, recipes, remotelog
from .configs import Arity, Primitive, ServerConfig
from .engine import MachineState, ScenarioContext, Transport
from .memory import Region, Stage, UNIT_BYTES


class BudgetExceeded(Exception):
    """State-space cap hit: the verdict is inconclusive, never a silent pass."""


@dataclass(frozen=True)
class Obligation:
    kind: str  # "durability" | "ordering-safety"
    detail: str


@dataclass(frozen=True)
class Counterexample:
    schedule: tuple[int, ...]
    crash_index: int
    image: dict
    obligation: Obligation


@dataclass
class Statistics:
    states: int = 0
    schedules: int = 0  # explored transitions (schedule extensions)
    crash_points: int = 0
    stuck_states: int = 0
    blocked_sends: int = 0


@dataclass
class Verdict:
    status: str  # "correct" | "violated"
    statistics: Statistics
    counterexample: Counterexample | None = None

    @property
    def correct(self) -> bool:
        return self.status == "correct"


# -- obligation evaluation ---------------------------------------------------


def _surviving_value(
    ctx: ScenarioContext, state: MachineState, surviving, offset: int
) -> bytes:
    """Newest recoverable word at a PM offset (pre-recipe word if none)."""
    best_seq, best = -1, None
    for unit in state.units:
        if (
            unit.stage in surviving
            and unit.home.region is Region.PM
            and unit.home.offset == offset
            and unit.seq > best_seq
        ):
            best_seq, best = unit.seq, unit.value
    if Stage.RESPONDER_RNIC in surviving:
        for wr in ctx.requests:
            if state.phases[wr.req_id] == engine.Phase.AT_RNIC:
                for unit in engine._request_units(ctx, wr, Stage.RESPONDER_RNIC):
                    if unit.home.region is Region.PM and unit.home.offset == offset:
                        if unit.seq > best_seq:
                            best_seq, best = unit.seq, unit.value
    if best is not None:
        return best
    return ctx.committed_pm.get(offset, memory.ZERO_WORD)


def _update_recovered_directly(
    ctx: ScenarioContext, state: MachineState, surviving, update: recipes.UpdateSpec
) -> bool:
    payload = update.payload
    base = update.target.offset
    for i in range(0, len(payload), UNIT_BYTES):
        if _surviving_value(ctx, state, surviving, base + i) != payload[i : i + UNIT_BYTES]:
            return False
    return True


def _record_recovered(
    ctx: ScenarioContext, state: MachineState, surviving, update: recipes.UpdateSpec
) -> bool:
    """A complete, validated message record carrying ``update`` survives."""
    if not ctx.recipe.record_recovery_ok:
        return False
    for wr in ctx.requests:
        if wr.kind is not engine.OpKind.SEND or wr.rqwrb_index is None:
            continue
        slot = ctx.rqwrb_slots[wr.rqwrb_index]
        if slot.region is not Region.PM:
            continue
        raw = b"".join(
            _surviving_value(ctx, state, surviving, slot.offset + i)
            for i in range(0, len(wr.payload), UNIT_BYTES)
        )
        parsed = remotelog.decode_record(raw)
        if parsed is None:
            continue
        try:
            entries = remotelog.decode_updates(parsed[0])
        except ValueError:
            continue
        for offset, value in entries:
            if offset == update.target.offset and value == update.payload:
                return True
    return False


def _update_persisted(
    ctx: ScenarioContext, state: MachineState, surviving, label: str
) -> bool:
    update = ctx.recipe.update(label)
    return _update_recovered_directly(ctx, state, surviving, update) or _record_recovered(
        ctx, state, surviving, update
    )


def check_obligations(ctx: ScenarioContext, state: MachineState) -> Obligation | None:
    """The obligation a crash at ``state`` would violate, if any."""
    surviving = memory.persistence_stages(ctx.config.domain)
    pair = ctx.recipe.ordered_pair
    if pair is not None:
        first, second = pair
        if _update_persisted(ctx, state, surviving, second) and not _update_persisted(
            ctx, state, surviving, first
        ):
            return Obligation(
                "ordering-safety",
                f"recovered new {second!r} without new {first!r}",
            )
    if engine.asserted(ctx, state):
        assert_step = ctx.rq_steps[-1]
        for label in assert_step.updates:
            if not _update_persisted(ctx, state, surviving, label):
                return Obligation(
                    "durability",
                    f"marker passed but {label!r} not recoverable",
                )
    return None


def _has_blocked_send(ctx: ScenarioContext, state: MachineState) -> bool:
    for wr in ctx.requests:
        if (
            wr.rqwrb_index is not None
            and wr.rqwrb_index >= len(ctx.rqwrb_slots)
            and state.phases[wr.req_id] == engine.Phase.AT_RNIC
        ):
            return True
    return False


# -- exploration -------------------------------------------------------------


def explore(
    ctx: ScenarioContext,
    max_states: int = 500_000,
) -> Verdict:
    """Breadth-first exhaustive exploration with crash checks at every state."""
    stats = Statistics()
    init = engine.initial_state(ctx)
    parents: dict[MachineState, tuple[MachineState, int] | None] = {init: None}
    stats.states = 1
    stats.crash_points = 1

    def violated(state: MachineState, obligation: Obligation) -> Verdict:
        schedule = _schedule_to(parents, state)
        image = engine.recover_image(ctx, state)
        return Verdict(
            "violated",
            stats,
            Counterexample(schedule, len(schedule), image, obligation),
        )

    obligation = check_obligations(ctx, init)
    if obligation is not None:
        return violated(init, obligation)

    frontier = [init]
    while frontier:
        next_frontier = []
        for state in frontier:
            events = engine.enabled_events(ctx, state)
            if not events:
                if not engine.asserted(ctx, state):
                    stats.stuck_states += 1
                continue
            stats.schedules += len(events)
            for index, event in enumerate(events):
                succ = engine.apply_event(ctx, state, event)
                if succ in parents:
                    continue
                parents[succ] = (state, index)
                stats.states += 1
                stats.crash_points += 1
                if stats.states > max_states:
                    raise BudgetExceeded(
                        f"{ctx.recipe.recipe_id}: state budget {max_states} exceeded"
                    )
                if _has_blocked_send(ctx, succ):
                    stats.blocked_sends += 1
                obligation = check_obligations(ctx, succ)
                if obligation is not None:
                    return violated(succ, obligation)
                next_frontier.append(succ)
        frontier = next_frontier
    return Verdict("correct", stats)


def _schedule_to(parents, state) -> tuple[int, ...]:
    choices = []
    while True:
        link = parents[state]
        if link is None:
            break
        state, index = link
        choices.append(index)
    return tuple(reversed(choices))


def explore_naive(ctx: ScenarioContext, max_steps: int = 20_000_000) -> Verdict:
    """Depth-first enumeration of every schedule, no deduplication.

    Independent oracle for the deduplicating explorer on small scenarios;
    agreement of verdicts is part of the acceptance gate.  Pure per-state
    computations (enabled events, obligation checks) are cached, which
    speeds the walk up without skipping a single schedule.
    """
    stats = Statistics()
    budget = [max_steps]
    event_cache: dict[MachineState, tuple] = {}
    obligation_cache: dict[MachineState, Obligation | None] = {}

    def visit(state: MachineState, trail: list[int]) -> Counterexample | None:
        budget[0] -= 1
        if budget[0] < 0:
            raise BudgetExceeded(f"{ctx.recipe.recipe_id}: naive step budget exceeded")
        stats.crash_points += 1
        if state in obligation_cache:
            obligation = obligation_cache[state]
        else:
            obligation = obligation_cache[state] = check_obligations(ctx, state)
        if obligation is not None:
            image = engine.recover_image(ctx, state)
            return Counterexample(tuple(trail), len(trail), image, obligation)
        if state in event_cache:
            events = event_cache[state]
        else:
            events = event_cache[state] = engine.enabled_events(ctx, state)
        if not events:
            stats.schedules += 1
            if not engine.asserted(ctx, state):
                stats.stuck_states += 1
            return None
        for index, event in enumerate(events):
            trail.append(index)
            found = visit(engine.apply_event(ctx, state, event), trail)
            trail.pop()
            if found is not None:
                return found
        return None

    counterexample = visit(engine.initial_state(ctx), [])
    if counterexample is not None:
        return Verdict("violated", stats, counterexample)
    return Verdict("correct", stats)


def count_schedules(ctx: ScenarioContext) -> int:
    """Exact number of complete schedules, via memoized counting.

    Cheap (one pass over the deduplicated state graph) and used only to
    decide whether the no-dedup oracle can be asked to walk them all.
    """
    memo: dict[MachineState, int] = {}

    def count(state: MachineState) -> int:
        cached = memo.get(state)
        if cached is not None:
            return cached
        events = engine.enabled_events(ctx, state)
        total = 1 if not events else sum(
            count(engine.apply_event(ctx, state, event)) for event in events
        )
        memo[state] = total
        return total

    return count(engine.initial_state(ctx))


# The oracle enumerates every schedule with no deduplication, which is only
# tractable for small event trees; eligible cells are instantiated with
# unit-sized updates and admitted by exact schedule count.
ORACLE_MAX_STEPS = 6  # working recipe steps, persistence marker excluded
ORACLE_SCHEDULE_CAP = 100_000


def oracle_updates(arity: Arity) -> tuple[recipes.UpdateSpec, ...]:
    first = recipes.UpdateSpec("a", configs.FIRST_TARGET, bytes([0xA1]) * UNIT_BYTES)
    if arity is Arity.SINGLETON:
        return (first,)
    return (
        first,
        recipes.UpdateSpec("b", configs.SECOND_TARGET, bytes([0xB1]) * UNIT_BYTES),
    )


def oracle_scenarios() -> list[tuple[ServerConfig, Primitive, Arity, ScenarioContext]]:
    """Catalog cells small enough for the brute-force oracle to sweep."""
    chosen = []
    for config, primitive, arity in configs.all_scenarios():
        recipe = configs.select_recipe(
            config, primitive, arity, updates=oracle_updates(arity)
        )
        if len(recipe.steps) - 1 > ORACLE_MAX_STEPS:
            continue
        ctx = engine.build_scenario(config, recipe, config.transport)
        if count_schedules(ctx) <= ORACLE_SCHEDULE_CAP:
            chosen.append((config, primitive, arity, ctx))
    return chosen


def replay(
    ctx: ScenarioContext, schedule: tuple[int, ...], crash_index: int | None = None
) -> tuple[list[str], dict]:
    """Deterministic re-execution: human-readable trace plus recovered image."""
    crash_at = len(schedule) if crash_index is None else crash_index
    trace = []
    states = [engine.initial_state(ctx)]
    state = states[0]
    for step, choice in enumerate(schedule[:crash_at]):
        events = engine.enabled_events(ctx, state)
        if not 0 <= choice < len(events):
            raise engine.EngineError(
                f"schedule step {step}: index {choice} out of range "
                f"({len(events)} events enabled)"
            )
        trace.append(engine.describe_step(ctx, state, events[choice]))
        state = engine.apply_event(ctx, state, events[choice])
        states.append(state)
    trace.append("POWER FAILURE")
    image = engine.recover_image(ctx, state)
    return trace, image


# -- scenarios and the mutant registry ---------------------------------------


def build_ctx(
    config: ServerConfig,
    primitive: Primitive,
    arity: Arity,
    mutant: str | None = None,
    emulate_flush_with_read: bool = False,
) -> ScenarioContext:
    recipe = scenario_recipe(config, primitive, arity, mutant)
    return engine.build_scenario(
        config, recipe, config.transport, emulate_flush_with_read
    )


def scenario_recipe(
    config: ServerConfig, primitive: Primitive, arity: Arity, mutant: str | None = None
) -> recipes.Recipe:
    if mutant is None:
        return configs.select_recipe(config, primitive, arity)
    if mutant not in MUTANTS:
        raise KeyError(f"unknown mutant {mutant!r}; known: {sorted(MUTANTS)}")
    return MUTANTS[mutant](config, primitive, arity)


def _index_of(recipe: recipes.Recipe, step_type, **attrs) -> int:
    for i, step in enumerate(recipe.steps):
        if isinstance(step, step_type) and all(
            getattr(step, k) == v for k, v in attrs.items()
        ):
            return i
    raise KeyError(f"no {step_type.__name__} step in {recipe.recipe_id}")


def _drop_responder_flush(config, primitive, arity):
    base = configs.select_recipe(config, primitive, arity)
    return recipes.mutate(
        base, recipes.DropStep(_index_of(base, recipes.LocalFlush)), "drop-responder-flush"
    )


def _drop_flush(config, primitive, arity):
    base = configs.select_recipe(config, primitive, arity)
    try:
        index = _index_of(base, recipes.PostFlush)
    except KeyError:
        return base  # nothing to drop: the method never flushed
    return recipes.mutate(base, recipes.DropStep(index), "drop-flush")


def _de_atomize(config, primitive, arity):
    base = configs.select_recipe(config, primitive, arity)
    index = _index_of(base, recipes.PostUpdate, op=recipes.UpdateOp.WRITE_ATOMIC)
    return recipes.mutate(base, recipes.UnfenceOrDeAtomize(index), "de-atomize")


def _skip_wait_ack(config, primitive, arity):
    base = configs.select_recipe(config, primitive, arity)
    return recipes.mutate(
        base, recipes.SkipWait(_index_of(base, recipes.WaitAck)), "skip-wait-ack"
    )


def _flush_only(config, primitive, arity):
    # replace the whole message exchange with a bare one-sided Flush: the
    # canonical wrong method on a DDIO machine with only ADR persistence
    labels = tuple(u.label for u in configs.default_updates(arity))
    steps = configs._flush_completion(primitive, labels)
    base = configs.select_recipe(config, primitive, arity)
    return recipes.Recipe(
        base.recipe_id + "#flush-only",
        tuple(steps),
        base.updates,
        base.record_recovery_ok,
    )


def _completion_only(config, primitive, arity):
    # the plain completion-waiting method, bypassing any transport
    # substitution: sound on WSP over InfiniBand/RoCE, unsound over iWARP
    ib_config = ServerConfig(config.domain, config.ddio, config.rqwrb_region)
    base = configs.select_recipe(ib_config, primitive, arity)
    return recipes.Recipe(
        base.recipe_id + "#completion-only",
        base.steps,
        base.updates,
        base.record_recovery_ok,
    )


MUTANTS = {
    "drop-responder-flush": _drop_responder_flush,
    "drop-flush": _drop_flush,
    "de-atomize": _de_atomize,
    "skip-wait-ack": _skip_wait_ack,
    "flush-only": _flush_only,
    "completion-only": _completion_only,
}


# -- the 72-scenario matrix --------------------------------------------------


@dataclass(frozen=True)
class MatrixRow:
    config: ServerConfig
    primitive: Primitive
    arity: Arity
    recipe_id: str
    verdict: Verdict
    expected: str | None = None  # for mutant rows with an asserted outcome


@dataclass
class MatrixReport:
    rows: list[MatrixRow] = field(default_factory=list)

    @property
    def all_correct(self) -> bool:
        return all(row.verdict.correct for row in self.rows)

    @property
    def violations(self) -> list[MatrixRow]:
        return [row for row in self.rows if not row.verdict.correct]

    def mismatches(self) -> list[MatrixRow]:
        return [
            row
            for row in self.rows
            if row.expected is not None and row.verdict.status != row.expected
        ]


def paper_asserted_mutants() -> list[tuple[ServerConfig, Primitive, Arity, str, str]]:
    """(scenario, mutant, expected verdict) rows for the negative suite.

    Only necessity claims actually asserted by the source analysis carry
    an expected verdict; anything else would be testing guesses.
    """
    rows: list[tuple[ServerConfig, Primitive, Arity, str, str]] = []
    # one-sided methods cannot persist into the ADR domain past a DDIO cache
    for region in (Region.DRAM, Region.PM):
        for primitive in Primitive:
            rows.append(
                (
                    ServerConfig(memory.PersistenceDomain.DMP, True, region),
                    primitive,
                    Arity.SINGLETON,
                    "drop-responder-flush",
                    "violated",
                )
            )
    # RNIC buffers sit outside MHP: dropping the flush strands data there
    for config in enumerate_mhp_configs():
        for primitive in (Primitive.WRITE, Primitive.WRITE_IMM):
            for arity in Arity:
                rows.append((config, primitive, arity, "drop-flush", "violated"))
    # iWARP completions can fire before the payload leaves the requester
    for region in (Region.DRAM, Region.PM):
        for ddio in (True, False):
            rows.append(
                (
                    ServerConfig(
                        memory.PersistenceDomain.WSP, ddio, region, Transport.IWARP
                    ),
                    Primitive.WRITE,
                    Arity.SINGLETON,
                    "completion-only",
                    "violated",
                )
            )
    # a plain write may bypass the flush that was ordering it
    for region in (Region.DRAM, Region.PM):
        rows.append(
            (
                ServerConfig(memory.PersistenceDomain.DMP, False, region),
                Primitive.WRITE,
                Arity.COMPOUND,
                "de-atomize",
                "violated",
            )
        )
    # on WSP over InfiniBand/RoCE the flush really is unnecessary
    for region in (Region.DRAM, Region.PM):
        for ddio in (True, False):
            rows.append(
                (
                    ServerConfig(memory.PersistenceDomain.WSP, ddio, region),
                    Primitive.WRITE,
                    Arity.SINGLETON,
                    "drop-flush",
                    "correct",
                )
            )
    # waiting for the ack is what makes the DDIO exchange sound
    rows.append(
        (
            ServerConfig(memory.PersistenceDomain.DMP, True, Region.DRAM),
            Primitive.WRITE,
            Arity.SINGLETON,
            "skip-wait-ack",
            "violated",
        )
    )
    return rows


def enumerate_mhp_configs() -> list[ServerConfig]:
    return [
        c
        for c in configs.enumerate_configs()
        if c.domain is memory.PersistenceDomain.MHP
    ]


def run_matrix(
    transport: Transport = Transport.IB_ROCE,
    mutants: bool = False,
    max_states: int = 500_000,
) -> MatrixReport:
    """Verdicts for all 72 catalog scenarios, plus the negative suite."""
    report = MatrixReport()
    for config, primitive, arity in configs.all_scenarios():
        config = ServerConfig(config.domain, config.ddio, config.rqwrb_region, transport)
        ctx = build_ctx(config, primitive, arity)
        verdict = explore(ctx, max_states=max_states)
        report.rows.append(
            MatrixRow(config, primitive, arity, ctx.recipe.recipe_id, verdict)
        )
    if mutants:
        for config, primitive, arity, mutant, expected in paper_asserted_mutants():
            ctx = build_ctx(config, primitive, arity, mutant=mutant)
            verdict = explore(ctx, max_states=max_states)
            report.rows.append(
                MatrixRow(config, primitive, arity, ctx.recipe.recipe_id, verdict, expected)
            )
    return report


def matrix_csv(report: MatrixReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        [
            "domain", "ddio", "rqwrb", "primitive", "arity", "transport",
            "recipe-id", "verdict", "states", "schedules", "crash_points",
        ]
    )
    for row in report.rows:
        stats = row.verdict.statistics
        writer.writerow(
            [
                row.config.domain.value,
                "on" if row.config.ddio else "off",
                row.config.rqwrb_region.value,
                row.primitive.value,
                row.arity.value,
                row.config.transport.value,
                row.recipe_id,
                row.verdict.status,
                stats.states,
                stats.schedules,
                stats.crash_points,
            ]
        )
    return out.getvalue()
