"""Reliable-connection queue pair machinery and the machine transition function.

Requests move through phases: posted at the requester, in the requester's
transport, at the responder RNIC, executed, and (non-posted only) responded.
Transmission and arrival are in posting order on a reliable connection.
Execution at the responder obeys the RDMA ordering rules:

  * posted operations (Write, WriteImm, Send) execute in posting order
    among themselves;
  * non-posted operations (Read, Flush, Write_atomic) execute only after
    every prior operation has executed;
  * a posted operation may execute before a prior non-posted operation
    (bypass), unless the posted request carries the fence flag, which pins
    it at the requester until all prior non-posted responses are back.

Executing a write-like request DMAs its payload units into the IIO
buffers; each unit then drains independently, in no particular order, to
the L3 cache (DDIO) or the IMC buffers (no DDIO).  A Flush forces every
unit of a *prior* request out of the RNIC/IIO path into that landing
stage and only then responds; an RDMA Read has the identical drain side
effect (PCIe read semantics), which is what makes it a faithful stand-in
where Flush is not implemented.

Receive completions are ordering points: the completion for a two-sided
message becomes visible only after the message's own payload *and* the
payload of everything executed before it have left the RNIC/IIO path.
Posted DMA cannot overtake posted DMA on the PCIe fabric, so a responder
CPU that has seen a receive completion can rely on all earlier one-sided
payloads being flushable from its cache side.

Every transition is a pure function: ``apply_event`` maps one MachineState
to the next, and states are plain tuples, freely shareable across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterator, NamedTuple

from . import memory, recipes, remotelog
from .memory import Address, DataUnit, Region, Stage, UNIT_BYTES


class OpKind(Enum):
    WRITE = "Write"
    WRITE_IMM = "WriteImm"
    SEND = "Send"
    READ = "Read"
    FLUSH = "Flush"
    WRITE_ATOMIC = "Write_atomic"


_POSTED = frozenset({OpKind.WRITE, OpKind.WRITE_IMM, OpKind.SEND})
_TWO_SIDED = frozenset({OpKind.SEND, OpKind.WRITE_IMM})
_FLUSHING = frozenset({OpKind.READ, OpKind.FLUSH})


def is_posted(kind: OpKind) -> bool:
    return kind in _POSTED


class Transport(Enum):
    IB_ROCE = "ib"
    IWARP = "iwarp"


class Phase(IntEnum):
    NOT_POSTED = 0
    POSTED = 1
    AT_TRANSPORT = 2
    AT_RNIC = 3
    EXECUTED = 4
    RESPONDED = 5


class AckPhase(IntEnum):
    NOT_POSTED = 0
    POSTED = 1
    DELIVERED = 2


class EngineError(Exception):
    pass


class WorkRequest(NamedTuple):
    req_id: int
    ref: str
    kind: OpKind
    target: Address | None
    payload: bytes
    immediate: int | None
    signaled: bool
    fenced: bool
    rqwrb_index: int | None  # consumption slot for two-sided requests


class MachineState(NamedTuple):
    """The whole responder+requester world the explorer walks over."""

    phases: tuple[int, ...]
    exec_order: tuple[int, ...]
    units: tuple[DataUnit, ...]
    ack_phases: tuple[int, ...]
    rq_pc: int
    rsp_pc: int


@dataclass(frozen=True)
class ScenarioContext:
    """Everything static across one exploration: layout, programs, wiring."""

    config: object
    transport: Transport
    recipe: recipes.Recipe
    requests: tuple[WorkRequest, ...]
    rq_steps: tuple[recipes.Step, ...]
    rsp_steps: tuple[recipes.Step, ...]
    ack_refs: tuple[str, ...]
    ref_to_req: dict
    ref_to_ack: dict
    rqwrb_slots: tuple[Address, ...]
    committed_pm: dict
    emulate_flush_with_read: bool = False


# fixed memory layout shared by every built scenario
PM_SIZE = 4096
DRAM_SIZE = 1024
RQWRB_SLOT_BYTES = 128
RQWRB_COUNT = 4
PM_RQWRB_BASE = 2048
DRAM_RQWRB_BASE = 0


def rqwrb_slots(region: Region) -> tuple[Address, ...]:
    base = PM_RQWRB_BASE if region is Region.PM else DRAM_RQWRB_BASE
    size = PM_SIZE if region is Region.PM else DRAM_SIZE
    assert base + RQWRB_COUNT * RQWRB_SLOT_BYTES <= size
    return tuple(
        Address(region, base + i * RQWRB_SLOT_BYTES) for i in range(RQWRB_COUNT)
    )


def send_wire_payload(recipe: recipes.Recipe, step: recipes.PostSend) -> bytes:
    """The framed record a Send carries on the wire."""
    if step.notify is not None:
        entries = [(recipe.update(step.notify).target.offset, b"")]
    else:
        entries = [
            (recipe.update(label).target.offset, recipe.update(label).payload)
            for label in step.updates
        ]
    return remotelog.encode_record(remotelog.encode_updates(entries))


def build_scenario(
    config,
    recipe: recipes.Recipe,
    transport: Transport = Transport.IB_ROCE,
    emulate_flush_with_read: bool = False,
    initial_pm: dict | None = None,
) -> ScenarioContext:
    diags = recipes.validate_recipe(recipe)
    if diags:
        raise EngineError(f"recipe {recipe.recipe_id} is malformed: {diags}")
    for offset, word in (initial_pm or {}).items():
        if offset % UNIT_BYTES or len(word) != UNIT_BYTES or offset >= PM_SIZE:
            raise EngineError("initial PM contents must be unit-aligned in-range words")
    for update in recipe.updates:
        if update.target.offset + len(update.payload) > PM_SIZE:
            raise EngineError(f"update {update.label!r} overruns persistent memory")

    slots = rqwrb_slots(config.rqwrb_region)
    requests: list[WorkRequest] = []
    ref_to_req: dict = {}
    two_sided = 0
    for step in recipe.steps:
        if isinstance(step, recipes.PostUpdate):
            kind = OpKind(step.op.value)
            update = recipe.update(step.update)
            if kind is OpKind.WRITE_ATOMIC and len(update.payload) > UNIT_BYTES:
                raise EngineError(
                    f"atomic write payload is {len(update.payload)} bytes, limit is {UNIT_BYTES}"
                )
            slot = None
            immediate = None
            if kind is OpKind.WRITE_IMM:
                slot, two_sided = two_sided, two_sided + 1
                immediate = 0x1D  # opaque tag; losable without consequence
            wr = WorkRequest(
                len(requests), step.ref, kind, update.target, update.payload,
                immediate, step.signaled, step.fenced, slot,
            )
        elif isinstance(step, recipes.PostSend):
            payload = send_wire_payload(recipe, step)
            if len(payload) > RQWRB_SLOT_BYTES:
                raise EngineError("message exceeds receive buffer slot")
            slot, two_sided = two_sided, two_sided + 1
            wr = WorkRequest(
                len(requests), step.ref, OpKind.SEND, None, payload,
                None, step.signaled, step.fenced, slot,
            )
        elif isinstance(step, recipes.PostFlush):
            kind = OpKind.READ if emulate_flush_with_read else OpKind.FLUSH
            wr = WorkRequest(
                len(requests), step.ref, kind, None, b"", None,
                step.signaled, step.fenced, None,
            )
        else:
            continue
        requests.append(wr)
        ref_to_req[step.ref] = wr.req_id

    ack_refs = tuple(
        s.ref for s in recipe.steps if isinstance(s, recipes.PostAck)
    )
    ctx = ScenarioContext(
        config=config,
        transport=transport,
        recipe=recipe,
        requests=tuple(requests),
        rq_steps=recipe.requester_steps(),
        rsp_steps=recipe.responder_steps(),
        ack_refs=ack_refs,
        ref_to_req=ref_to_req,
        ref_to_ack={ref: i for i, ref in enumerate(ack_refs)},
        rqwrb_slots=slots,
        committed_pm=dict(initial_pm or {}),
        emulate_flush_with_read=emulate_flush_with_read,
    )
    _check_single_writer(ctx)
    return ctx


def _check_single_writer(ctx: ScenarioContext) -> None:
    # recovery picks the newest copy per home; recipes keep that trivial by
    # writing each home from a single source
    writers: set[int] = set()
    for offsets in (_payload_offsets(wr) for wr in ctx.requests):
        for off in offsets:
            if off in writers:
                raise EngineError(f"two requests write PM offset {off}")
            writers.add(off)


def _payload_offsets(wr: WorkRequest) -> list[int]:
    if wr.kind in _FLUSHING or not wr.payload:
        return []
    if wr.target is not None and wr.target.region is Region.PM:
        return [wr.target.offset + i for i in range(0, len(wr.payload), UNIT_BYTES)]
    return []


def initial_state(ctx: ScenarioContext) -> MachineState:
    return MachineState(
        phases=tuple(Phase.NOT_POSTED for _ in ctx.requests),
        exec_order=(),
        units=(),
        ack_phases=tuple(AckPhase.NOT_POSTED for _ in ctx.ack_refs),
        rq_pc=0,
        rsp_pc=0,
    )


# -- unit bookkeeping --------------------------------------------------------


def _request_units(ctx: ScenarioContext, wr: WorkRequest, stage: Stage) -> list[DataUnit]:
    if not wr.payload:
        return []
    home = wr.target if wr.target is not None else ctx.rqwrb_slots[wr.rqwrb_index]
    return [
        DataUnit(
            uid=(wr.req_id, k),
            home=Address(home.region, home.offset + k * UNIT_BYTES),
            value=wr.payload[k * UNIT_BYTES : (k + 1) * UNIT_BYTES],
            stage=stage,
            dirty=stage is Stage.L3_CACHE,
            seq=wr.req_id,
        )
        for k in range(len(wr.payload) // UNIT_BYTES)
    ]


class _RecoveryView:
    """Adapter handing the memory model what recovery needs from a state."""

    def __init__(self, ctx: ScenarioContext, state: MachineState):
        self._ctx = ctx
        self._state = state
        self.units = state.units
        self.committed_pm = ctx.committed_pm

    def rnic_resident_units(self) -> Iterator[DataUnit]:
        for wr in self._ctx.requests:
            if self._state.phases[wr.req_id] == Phase.AT_RNIC:
                yield from _request_units(self._ctx, wr, Stage.RESPONDER_RNIC)


def recover_image(ctx: ScenarioContext, state: MachineState) -> dict[int, bytes]:
    return memory.recover_image(_RecoveryView(ctx, state), ctx.config)


# -- per-request predicates --------------------------------------------------


def completion_ready(ctx: ScenarioContext, state: MachineState, req_id: int) -> bool:
    """Has a completion notification reached the requester for ``req_id``?

    Posted operations complete once the responder RNIC holds them
    (InfiniBand/RoCE) or as soon as the local reliable transport does
    (iWARP).  Non-posted operations complete only when their response is
    back at the requester.
    """
    if not 0 <= req_id < len(ctx.requests):
        raise EngineError(f"unknown request id {req_id}")
    wr = ctx.requests[req_id]
    if not wr.signaled:
        raise EngineError(f"request {wr.ref} was not posted signaled")
    phase = state.phases[req_id]
    if is_posted(wr.kind):
        threshold = (
            Phase.AT_RNIC if ctx.transport is Transport.IB_ROCE else Phase.AT_TRANSPORT
        )
        return phase >= threshold
    return phase == Phase.RESPONDED


def _exec_rank(state: MachineState, req_id: int) -> int:
    return state.exec_order.index(req_id)


def _visible(unit: DataUnit) -> bool:
    return unit.stage in (Stage.L3_CACHE, Stage.IMC_BUFFER, Stage.PM_DIMM)


def receive_completion_ready(ctx: ScenarioContext, state: MachineState, req_id: int) -> bool:
    """Receive completion for a two-sided request is visible to the CPU.

    Requires the message's own payload in its landing stage and no earlier
    DMA still stuck in the RNIC/IIO path: completion entries are posted
    writes and cannot overtake payload writes.
    """
    wr = ctx.requests[req_id]
    if wr.kind not in _TWO_SIDED:
        raise EngineError(f"request {wr.ref} is one-sided")
    if state.phases[req_id] != Phase.EXECUTED:
        return False
    rank = _exec_rank(state, req_id)
    for unit in state.units:
        owner = unit.uid[0]
        if owner == req_id and not _visible(unit):
            return False
        if (
            owner < len(ctx.requests)
            and unit.stage is Stage.IIO_BUFFER
            and owner in state.exec_order
            and _exec_rank(state, owner) < rank
        ):
            return False
    return True


# -- events ------------------------------------------------------------------

# (tag, arg); ordering of the enabled list is canonical and deterministic
EV_RQ_STEP = "rq-step"
EV_RSP_STEP = "rsp-step"
EV_TRANSMIT = "transmit"
EV_ARRIVE = "arrive"
EV_EXECUTE = "execute"
EV_RESPOND = "respond"
EV_DRAIN = "iio-drain"
EV_EVICT = "evict"
EV_ACK_TRANSIT = "ack-transit"

Event = tuple


def _rq_step_enabled(ctx: ScenarioContext, state: MachineState) -> bool:
    if state.rq_pc >= len(ctx.rq_steps):
        return False
    step = ctx.rq_steps[state.rq_pc]
    if isinstance(step, (recipes.PostUpdate, recipes.PostSend, recipes.PostFlush)):
        return True
    if isinstance(step, recipes.WaitCompletion):
        return completion_ready(ctx, state, ctx.ref_to_req[step.ref])
    if isinstance(step, recipes.WaitAck):
        return state.ack_phases[ctx.ref_to_ack[step.ref]] == AckPhase.DELIVERED
    if isinstance(step, recipes.AssertPersisted):
        return True
    raise EngineError(f"not a requester step: {step}")


def _rsp_step_enabled(ctx: ScenarioContext, state: MachineState) -> bool:
    if state.rsp_pc >= len(ctx.rsp_steps):
        return False
    step = ctx.rsp_steps[state.rsp_pc]
    if isinstance(step, recipes.WaitReceive):
        req_id = ctx.ref_to_req[step.ref]
        if ctx.requests[req_id].rqwrb_index is None:
            raise EngineError(f"receive wait on one-sided request {step.ref}")
        return receive_completion_ready(ctx, state, req_id)
    # local CPU work: always ready once program control reaches it
    return True


def _transmit_gate(ctx: ScenarioContext, state: MachineState, wr: WorkRequest) -> bool:
    # in-order transmission; the fence additionally pins the request until
    # every prior non-posted response has come back
    for prev in ctx.requests[: wr.req_id]:
        if state.phases[prev.req_id] != Phase.NOT_POSTED and state.phases[prev.req_id] < Phase.AT_TRANSPORT:
            return False
    if wr.fenced:
        for prev in ctx.requests[: wr.req_id]:
            if (
                state.phases[prev.req_id] != Phase.NOT_POSTED
                and not is_posted(prev.kind)
                and state.phases[prev.req_id] != Phase.RESPONDED
            ):
                return False
    return True


def _arrival_gate(ctx: ScenarioContext, state: MachineState, wr: WorkRequest) -> bool:
    for prev in ctx.requests[: wr.req_id]:
        if state.phases[prev.req_id] != Phase.NOT_POSTED and state.phases[prev.req_id] < Phase.AT_RNIC:
            return False
    return True


def _execute_gate(ctx: ScenarioContext, state: MachineState, wr: WorkRequest) -> bool:
    if is_posted(wr.kind):
        # total order among posted requests
        for prev in ctx.requests[: wr.req_id]:
            if is_posted(prev.kind) and state.phases[prev.req_id] < Phase.EXECUTED:
                return False
        if wr.rqwrb_index is not None and wr.rqwrb_index >= len(ctx.rqwrb_slots):
            return False  # no posted receive buffer: delivery blocks
        return True
    # non-posted: after the effects of everything posted earlier
    for prev in ctx.requests[: wr.req_id]:
        if state.phases[prev.req_id] < Phase.EXECUTED:
            return False
    return True


def enabled_events(ctx: ScenarioContext, state: MachineState) -> tuple[Event, ...]:
    """Every legal next transition, in a fixed canonical order."""
    events: list[Event] = []
    if _rq_step_enabled(ctx, state):
        events.append((EV_RQ_STEP, 0))
    if _rsp_step_enabled(ctx, state):
        events.append((EV_RSP_STEP, 0))
    for wr in ctx.requests:
        phase = state.phases[wr.req_id]
        if phase == Phase.POSTED and _transmit_gate(ctx, state, wr):
            events.append((EV_TRANSMIT, wr.req_id))
        elif phase == Phase.AT_TRANSPORT and _arrival_gate(ctx, state, wr):
            events.append((EV_ARRIVE, wr.req_id))
        elif phase == Phase.AT_RNIC and _execute_gate(ctx, state, wr):
            events.append((EV_EXECUTE, wr.req_id))
        elif phase == Phase.EXECUTED and not is_posted(wr.kind):
            events.append((EV_RESPOND, wr.req_id))
    for unit in state.units:
        if unit.stage is Stage.IIO_BUFFER:
            events.append((EV_DRAIN, unit.uid))
        elif unit.stage is Stage.L3_CACHE and unit.dirty:
            events.append((EV_EVICT, unit.uid))
    for i, phase in enumerate(state.ack_phases):
        if phase == AckPhase.POSTED:
            events.append((EV_ACK_TRANSIT, i))
    return tuple(events)


def apply_event(ctx: ScenarioContext, state: MachineState, event: Event) -> MachineState:
    """Deterministic successor of ``state`` under one enabled ``event``."""
    tag, arg = event
    if tag == EV_RQ_STEP:
        return _apply_rq_step(ctx, state)
    if tag == EV_RSP_STEP:
        return _apply_rsp_step(ctx, state)
    if tag == EV_TRANSMIT:
        return state._replace(phases=_set(state.phases, arg, Phase.AT_TRANSPORT))
    if tag == EV_ARRIVE:
        return state._replace(phases=_set(state.phases, arg, Phase.AT_RNIC))
    if tag == EV_EXECUTE:
        return _apply_execute(ctx, state, arg)
    if tag == EV_RESPOND:
        return state._replace(phases=_set(state.phases, arg, Phase.RESPONDED))
    if tag == EV_DRAIN:
        landing = memory.landing_stage(ctx.config.ddio)
        return _move_unit(state, arg, landing)
    if tag == EV_EVICT:
        return _move_unit(state, arg, Stage.IMC_BUFFER)
    if tag == EV_ACK_TRANSIT:
        return state._replace(ack_phases=_set(state.ack_phases, arg, AckPhase.DELIVERED))
    raise EngineError(f"not an event: {event}")


def _set(items: tuple, index: int, value) -> tuple:
    return items[:index] + (value,) + items[index + 1 :]


def _move_unit(state: MachineState, uid: tuple, stage: Stage) -> MachineState:
    units = tuple(
        DataUnit(u.uid, u.home, u.value, stage, stage is Stage.L3_CACHE, u.seq)
        if u.uid == uid
        else u
        for u in state.units
    )
    return state._replace(units=units)


def _apply_execute(ctx: ScenarioContext, state: MachineState, req_id: int) -> MachineState:
    wr = ctx.requests[req_id]
    units = state.units
    if wr.kind in _FLUSHING:
        # force every prior request's units out of the inbound path; the
        # landing stage is the cache with DDIO on, the IMC buffers with it
        # off, which is exactly why a lone Flush cannot reach the ADR
        # domain on a DDIO machine
        landing = memory.landing_stage(ctx.config.ddio)
        units = tuple(
            DataUnit(u.uid, u.home, u.value, landing, landing is Stage.L3_CACHE, u.seq)
            if u.stage is Stage.IIO_BUFFER and u.uid[0] < req_id
            else u
            for u in units
        )
    elif wr.payload:
        units = units + tuple(_request_units(ctx, wr, Stage.IIO_BUFFER))
    return state._replace(
        phases=_set(state.phases, req_id, Phase.EXECUTED),
        exec_order=state.exec_order + (req_id,),
        units=units,
    )


def _apply_rq_step(ctx: ScenarioContext, state: MachineState) -> MachineState:
    step = ctx.rq_steps[state.rq_pc]
    advanced = state._replace(rq_pc=state.rq_pc + 1)
    if isinstance(step, (recipes.PostUpdate, recipes.PostSend, recipes.PostFlush)):
        req_id = ctx.ref_to_req[step.ref]
        return advanced._replace(phases=_set(state.phases, req_id, Phase.POSTED))
    # waits and the persistence marker only move the program counter
    return advanced


# uid namespace for responder-CPU stores; request uids use the request id
_CPU_UID_BASE = 1 << 16


def _apply_rsp_step(ctx: ScenarioContext, state: MachineState) -> MachineState:
    step = ctx.rsp_steps[state.rsp_pc]
    advanced = state._replace(rsp_pc=state.rsp_pc + 1)
    if isinstance(step, recipes.WaitReceive):
        return advanced
    if isinstance(step, recipes.CopyToTarget):
        update = ctx.recipe.update(step.update)
        # local stores land in the cache whole; store-buffer staging is not
        # distinguishable from L3 for any obligation checked here
        fresh = tuple(
            DataUnit(
                uid=(_CPU_UID_BASE + state.rsp_pc, k),
                home=Address(update.target.region, update.target.offset + k * UNIT_BYTES),
                value=update.payload[k * UNIT_BYTES : (k + 1) * UNIT_BYTES],
                stage=Stage.L3_CACHE,
                dirty=True,
                seq=_CPU_UID_BASE + state.rsp_pc,
            )
            for k in range(len(update.payload) // UNIT_BYTES)
        )
        return advanced._replace(units=state.units + fresh)
    if isinstance(step, recipes.LocalFlush):
        units = state.units
        for label in step.updates:
            update = ctx.recipe.update(label)
            units = memory.flush_range(
                units,
                update.target.region,
                update.target.offset,
                update.target.offset + len(update.payload),
            )
        return advanced._replace(units=units)
    if isinstance(step, recipes.PostAck):
        ack = ctx.ref_to_ack[step.ref]
        return advanced._replace(ack_phases=_set(state.ack_phases, ack, AckPhase.POSTED))
    raise EngineError(f"not a responder step: {step}")


def asserted(ctx: ScenarioContext, state: MachineState) -> bool:
    """Has the requester passed the persistence marker?"""
    return state.rq_pc >= len(ctx.rq_steps)


def describe_event(ctx: ScenarioContext, event: Event) -> str:
    tag, arg = event
    if tag in (EV_TRANSMIT, EV_ARRIVE, EV_EXECUTE, EV_RESPOND):
        wr = ctx.requests[arg]
        what = {
            EV_TRANSMIT: "leaves requester",
            EV_ARRIVE: "reaches responder RNIC",
            EV_EXECUTE: "executes at responder",
            EV_RESPOND: "response reaches requester",
        }[tag]
        return f"{wr.kind.value}[{wr.ref}] {what}"
    if tag == EV_DRAIN:
        return f"unit {arg} drains IIO -> landing stage"
    if tag == EV_EVICT:
        return f"unit {arg} evicted L3 -> IMC"
    if tag == EV_ACK_TRANSIT:
        return f"ack[{ctx.ack_refs[arg]}] delivered to requester"
    return str(event)


def describe_step(ctx: ScenarioContext, state: MachineState, event: Event) -> str:
    """Trace line for an event about to be applied in ``state``."""
    tag, _ = event
    if tag == EV_RQ_STEP:
        line = recipes.render(ctx.recipe)[_step_line_index(ctx, ctx.rq_steps[state.rq_pc])]
        return f"requester: {line}"
    if tag == EV_RSP_STEP:
        line = recipes.render(ctx.recipe)[_step_line_index(ctx, ctx.rsp_steps[state.rsp_pc])]
        return f"responder: {line}"
    return describe_event(ctx, event)


def _step_line_index(ctx: ScenarioContext, step: recipes.Step) -> int:
    for i, s in enumerate(ctx.recipe.steps):
        if s is step:
            return i
    raise EngineError("step not in recipe")


def walk(ctx: ScenarioContext, schedule) -> Iterator[MachineState]:
    """Replay helper: yields successive states, starting at the initial one."""
    state = initial_state(ctx)
    yield state
    for choice in schedule:
        events = enabled_events(ctx, state)
        if not 0 <= choice < len(events):
            raise EngineError(
                f"schedule index {choice} out of range ({len(events)} events enabled)"
            )
        state = apply_event(ctx, state, events[choice])
        yield state
