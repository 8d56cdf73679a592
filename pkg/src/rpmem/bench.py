"""RemoteLog append latency under a parameterized cost model.

No hardware is involved: each recipe is walked symbolically and every
step charges fixed time units along the requester-observed critical path.
Waits serialize; back-to-back posts pipeline and only the awaited
completion matters.  The defaults are tuning values chosen so that the
cheapest one-sided method lands around 1600 units with a one-way hop of
800; only *relative* orderings between methods are meaningful.

Charging rules:

  * a request arrives one hop after it is transmitted; transmission is
    immediate unless the fence holds it back;
  * payload DMA into the memory system costs rnic_dma + iio_to_mem per
    message and preserves posting order (DMA streams do not overtake);
  * a posted completion is available one hop after arrival (InfiniBand /
    RoCE) or immediately at transmission (iWARP); waiting on anything
    costs one completion_poll;
  * a flush (native or read-emulated: same price, one full round trip)
    starts once it has arrived and every prior payload is visible, spends
    rnic_dma + iio_to_mem pushing the path clean, then responds one hop
    back;
  * a two-sided receive is ready one payload DMA plus one completion-entry
    DMA after arrival, and costs the receiving CPU completion_poll +
    cpu_receive_handle; copies and cache-line flushes charge per 64-byte
    line.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields, replace

from . import checker, configs, remotelog
from .configs import Arity, Primitive, ServerConfig
from .engine import Transport
from .memory import Address, Region
from .recipes import (
    AssertPersisted,
    CopyToTarget,
    LocalFlush,
    PostAck,
    PostFlush,
    PostSend,
    PostUpdate,
    Recipe,
    UpdateOp,
    UpdateSpec,
    WaitAck,
    WaitCompletion,
    WaitReceive,
)

CACHE_LINE = 64


@dataclass(frozen=True)
class CostModel:
    one_way_hop: int = 800
    rnic_dma: int = 150
    iio_to_mem: int = 100
    cacheline_flush: int = 60
    cpu_receive_handle: int = 250
    cpu_copy_per_64B: int = 30
    completion_poll: int = 50

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"cost charge {f.name} must be >= 0")

    @property
    def dma(self) -> int:
        return self.rnic_dma + self.iio_to_mem


def load_cost_model(text: str) -> CostModel:
    """Parse ``key = integer`` lines; unknown keys are rejected."""
    known = {f.name for f in fields(CostModel)}
    overrides: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = integer'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"line {lineno}: unknown cost key {key!r}")
        overrides[key] = int(value.strip())
    return replace(CostModel(), **overrides)


def _lines(nbytes: int) -> int:
    return max(1, -(-nbytes // CACHE_LINE))


# benchmark-sized updates: a 64-byte log record behind framing, and the
# 8-byte tail word of the compound variant
def bench_updates(arity: Arity) -> tuple[UpdateSpec, ...]:
    record = remotelog.encode_record(b"\x5a" * 64)
    first = UpdateSpec("a", Address(Region.PM, 64), record)
    if arity is Arity.SINGLETON:
        return (first,)
    return (first, UpdateSpec("b", Address(Region.PM, 0), b"\x0b" * 8))


class _Timeline:
    """Critical-path walk of one recipe under a cost model."""

    def __init__(self, recipe: Recipe, cost: CostModel, transport: Transport):
        self.recipe = recipe
        self.cost = cost
        self.transport = transport
        self.rq = 0
        self.rsp = 0
        self.transmit: dict[str, int] = {}
        self.arrive: dict[str, int] = {}
        self.visible: dict[str, int] = {}
        self.flush_done: dict[str, int] = {}
        self.ack_posted: dict[str, int] = {}
        self.last_arrival = 0
        self.last_visible = 0
        self.pending_nonposted: list[str] = []

    def run(self) -> int:
        for step in self.recipe.steps:
            self._step(step)
        return self.rq

    # -- requester-side -----------------------------------------------------

    def _post(self, ref: str, fenced: bool, payload_len: int, nonposted: bool) -> None:
        cost = self.cost
        t = self.rq
        if fenced:
            for prior in self.pending_nonposted:
                t = max(t, self.flush_done.get(prior, 0) + cost.one_way_hop)
        self.transmit[ref] = t
        arrival = max(t + cost.one_way_hop, self.last_arrival)
        self.arrive[ref] = self.last_arrival = arrival
        if nonposted:
            self.pending_nonposted.append(ref)
        elif payload_len:
            visible = max(arrival, self.last_visible) + cost.dma
            self.visible[ref] = self.last_visible = visible

    def _flush_effect(self, ref: str) -> int:
        # starts once arrived and all prior payloads are visible
        start = max(self.arrive[ref], self.last_visible)
        done = start + self.cost.dma
        self.flush_done[ref] = done
        return done

    def _step(self, step) -> None:
        cost = self.cost
        if isinstance(step, PostUpdate):
            payload = self.recipe.update(step.update).payload
            atomic = step.op is UpdateOp.WRITE_ATOMIC
            self._post(step.ref, step.fenced, len(payload), nonposted=atomic)
            if atomic:
                # ordered after every prior effect, then DMAs like any write
                start = max(self.arrive[step.ref], self.last_visible,
                            max(self.flush_done.values(), default=0))
                self.visible[step.ref] = self.last_visible = start + cost.dma
                self.flush_done[step.ref] = self.visible[step.ref]
        elif isinstance(step, PostSend):
            if step.notify is not None:
                payload = remotelog.record_size(8)
            else:
                payload = sum(len(self.recipe.update(u).payload) for u in step.updates)
            self._post(step.ref, step.fenced, payload, nonposted=False)
        elif isinstance(step, PostFlush):
            self._post(step.ref, step.fenced, 0, nonposted=True)
            self._flush_effect(step.ref)
        elif isinstance(step, WaitCompletion):
            if step.ref in self.flush_done:
                avail = self.flush_done[step.ref] + cost.one_way_hop
            elif self.transport is Transport.IWARP:
                avail = self.transmit[step.ref]
            else:
                avail = self.arrive[step.ref] + cost.one_way_hop
            self.rq = max(self.rq, avail) + cost.completion_poll
        elif isinstance(step, WaitReceive):
            ready = self.visible[step.ref] + cost.dma  # completion entry DMA
            self.rsp = max(self.rsp, ready) + cost.completion_poll + cost.cpu_receive_handle
        elif isinstance(step, CopyToTarget):
            nbytes = len(self.recipe.update(step.update).payload)
            self.rsp += cost.cpu_copy_per_64B * _lines(nbytes)
        elif isinstance(step, LocalFlush):
            nbytes = sum(len(self.recipe.update(u).payload) for u in step.updates)
            self.rsp += cost.cacheline_flush * _lines(nbytes)
        elif isinstance(step, PostAck):
            self.ack_posted[step.ref] = self.rsp
        elif isinstance(step, WaitAck):
            # the ack is itself a two-sided message back to the requester
            ready = self.ack_posted[step.ref] + cost.one_way_hop + 2 * cost.dma
            self.rq = max(self.rq, ready) + cost.completion_poll + cost.cpu_receive_handle
        elif isinstance(step, AssertPersisted):
            pass
        else:
            raise TypeError(step)


def append_latency(recipe: Recipe, cost: CostModel,
                   transport: Transport = Transport.IB_ROCE) -> int:
    return _Timeline(recipe, cost, transport).run()


_VERIFIED: dict[tuple, bool] = {}


def simulate_append(
    config: ServerConfig,
    primitive: Primitive,
    arity: Arity,
    cost: CostModel | None = None,
) -> int:
    """Requester-observed latency of one log append, in cost-model units.

    Refuses to time a scenario whose catalog recipe the crash checker does
    not prove correct.
    """
    cost = cost or CostModel()
    key = (config.domain, config.ddio, config.rqwrb_region, config.transport,
           primitive, arity)
    if key not in _VERIFIED:
        verdict = checker.explore(checker.build_ctx(config, primitive, arity))
        _VERIFIED[key] = verdict.correct
    if not _VERIFIED[key]:
        raise ValueError(
            f"refusing to time an incorrect recipe: {checker.scenario_recipe(config, primitive, arity).recipe_id}"
        )
    recipe = configs.select_recipe(config, primitive, arity, updates=bench_updates(arity))
    return append_latency(recipe, cost, config.transport)


@dataclass(frozen=True)
class BenchRow:
    scenario_label: str
    primitive: Primitive
    arity: Arity
    config: ServerConfig
    latency: int


@dataclass
class BenchReport:
    rows: list[BenchRow]
    appends: int

    def latency(self, domain, ddio, region, primitive, arity) -> int:
        for row in self.rows:
            if (
                row.config.domain is domain
                and row.config.ddio is ddio
                and row.config.rqwrb_region is region
                and row.primitive is primitive
                and row.arity is arity
            ):
                return row.latency
        raise KeyError((domain, ddio, region, primitive, arity))


_PRIMITIVE_LABEL = {
    Primitive.WRITE: "WRITE",
    Primitive.WRITE_IMM: "WRITE_IMM",
    Primitive.SEND: "SEND",
}


def scenario_label(config: ServerConfig, primitive: Primitive) -> str:
    ddio = "DDIO" if config.ddio else "NODDIO"
    region = config.rqwrb_region.value.upper()
    return f"{ddio}_{region}_RQWRB_{_PRIMITIVE_LABEL[primitive]}"


def run_benchmark(n: int = 10_000, cost: CostModel | None = None) -> BenchReport:
    """All 72 scenarios; the model is deterministic, so mean = single append."""
    cost = cost or CostModel()
    rows = []
    for config, primitive, arity in configs.all_scenarios():
        latency = simulate_append(config, primitive, arity, cost)
        rows.append(
            BenchRow(scenario_label(config, primitive), primitive, arity, config, latency)
        )
    return BenchReport(rows, appends=n)


def bench_csv(report: BenchReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        ["scenario_label", "primitive", "arity", "domain", "ddio", "rqwrb", "latency_units"]
    )
    for row in report.rows:
        writer.writerow(
            [
                row.scenario_label,
                row.primitive.value,
                row.arity.value,
                row.config.domain.value,
                "on" if row.config.ddio else "off",
                row.config.rqwrb_region.value,
                row.latency,
            ]
        )
    return out.getvalue()
