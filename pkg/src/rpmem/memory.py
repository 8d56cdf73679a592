"""Responder-side storage model: buffer stages, persistence domains, recovery.

Inbound DMA traffic lands in the RNIC buffers, hops into the IIO buffers,
and from there reaches either the L3 cache (DDIO on) or the IMC buffers
(DDIO off).  Dirty cache lines may be evicted to the IMC at any time, in
any order; the responder CPU can force them there with a cache-line flush.
The IMC drains to the DIMMs on the memory controller's schedule.

A persistence domain names the set of stages whose contents survive a
power failure.  Failure-time draining (ADR, or residual battery power) is
modeled as instantaneous and complete: everything in a surviving stage
reaches its home DIMM, everything else is gone.  DRAM contents never
survive, whatever stage they sit in.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

UNIT_BYTES = 8

ZERO_WORD = b"\x00" * UNIT_BYTES


class Region(Enum):
    DRAM = "dram"
    PM = "pm"


class Stage(Enum):
    RESPONDER_RNIC = "responder-rnic"
    IIO_BUFFER = "iio-buffer"
    L3_CACHE = "l3-cache"
    IMC_BUFFER = "imc-buffer"
    PM_DIMM = "pm-dimm"
    DRAM_DIMM = "dram-dimm"
    # Exists only to reason about completion timing on lossy-completion
    # transports; data parked here is still on the requester.
    REQUESTER_TRANSPORT = "requester-transport"


class PersistenceDomain(Enum):
    DMP = "dmp"
    MHP = "mhp"
    WSP = "wsp"


@dataclass(frozen=True)
class Address:
    """A unit-aligned location in one of the responder's two memory regions."""

    region: Region
    offset: int

    def __post_init__(self):
        if self.offset < 0 or self.offset % UNIT_BYTES:
            raise ValueError(f"address offset must be unit-aligned and >= 0: {self.offset}")


@dataclass(frozen=True)
class DataUnit:
    """One 8-byte word of in-flight data.

    The 8-byte unit is the atom of persistence: multi-unit writes make
    independent per-unit progress through the stages, which is what lets a
    crash leave them torn.  ``seq`` breaks ties when several writes target
    the same home (newest wins at recovery).
    """

    uid: tuple[int, int]
    home: Address
    value: bytes
    stage: Stage
    dirty: bool
    seq: int

    def __post_init__(self):
        if len(self.value) != UNIT_BYTES:
            raise ValueError("DataUnit value must be exactly one unit")


# DMP: the ADR domain, i.e. the memory controller and the DIMMs themselves.
# MHP: residual power drains the on-die hierarchy (caches, store buffers,
#      IIO buffers); only the RNIC's private buffers stay volatile.
# WSP: battery-backed whole system, RNIC buffers included.
_DOMAIN_STAGES = {
    PersistenceDomain.DMP: frozenset({Stage.IMC_BUFFER, Stage.PM_DIMM}),
    PersistenceDomain.MHP: frozenset(
        {Stage.IIO_BUFFER, Stage.L3_CACHE, Stage.IMC_BUFFER, Stage.PM_DIMM}
    ),
    PersistenceDomain.WSP: frozenset(
        {
            Stage.RESPONDER_RNIC,
            Stage.IIO_BUFFER,
            Stage.L3_CACHE,
            Stage.IMC_BUFFER,
            Stage.PM_DIMM,
        }
    ),
}


def persistence_stages(domain: PersistenceDomain) -> frozenset[Stage]:
    """Stages whose contents survive power failure under ``domain``.

    DRAM_DIMM is never included: the medium itself is volatile.
    """
    return _DOMAIN_STAGES[domain]


def landing_stage(ddio: bool) -> Stage:
    """Where inbound DMA settles once it leaves the IIO buffers."""
    return Stage.L3_CACHE if ddio else Stage.IMC_BUFFER


def recover_image(state, config) -> dict[int, bytes]:
    """Recovered PM contents after a power failure in ``state``.

    ``state`` must expose ``units`` (in-flight DataUnits), ``committed_pm``
    (PM words already on DIMM, offset -> value) and ``rnic_resident_units()``
    (payload words of requests that arrived at the responder RNIC but were
    not yet executed).  For each PM offset the newest copy sitting in a
    surviving stage wins; with no surviving copy the pre-existing word
    stays.  DRAM-homed data is discarded unconditionally.
    """
    surviving = persistence_stages(config.domain)
    best: dict[int, tuple[int, bytes]] = {}

    def consider(unit: DataUnit) -> None:
        if unit.home.region is not Region.PM:
            return
        cur = best.get(unit.home.offset)
        if cur is None or unit.seq > cur[0]:
            best[unit.home.offset] = (unit.seq, unit.value)

    for unit in state.units:
        if unit.stage in surviving:
            consider(unit)
    if Stage.RESPONDER_RNIC in surviving:
        # Failure-time drain completes delivery of everything the RNIC had
        # already accepted.
        for unit in state.rnic_resident_units():
            consider(unit)

    image = dict(state.committed_pm)
    for offset, (_, value) in best.items():
        image[offset] = value
    return image


def read_image(image: Mapping[int, bytes], offset: int, length: int) -> bytes:
    """Read ``length`` bytes from a recovered image (unit-aligned range)."""
    if offset % UNIT_BYTES or length % UNIT_BYTES:
        raise ValueError("image reads must be unit-aligned")
    return b"".join(
        image.get(offset + i, ZERO_WORD) for i in range(0, length, UNIT_BYTES)
    )


def eviction_candidates(units: Iterable[DataUnit]) -> tuple[DataUnit, ...]:
    """Units a spontaneous cache writeback could move to the IMC buffers.

    One candidate per dirty L3 line; eviction order across distinct units
    is unconstrained, which is exactly what makes out-of-order persistence
    reachable when the cache sits outside the persistence domain.
    """
    return tuple(u for u in units if u.stage is Stage.L3_CACHE and u.dirty)


def flush_range(
    units: tuple[DataUnit, ...], region: Region, lo: int, hi: int
) -> tuple[DataUnit, ...]:
    """Responder-CPU cache-line flush of [lo, hi): dirty L3 units move to IMC.

    Fenced by construction: the caller applies it as a single atomic step,
    so no other event can interleave mid-flush.  Flushing DRAM achieves
    nothing for persistence and is rejected to catch recipe bugs.
    """
    if region is not Region.PM:
        raise ConfigurationError("local flush over a DRAM range has no persistence effect")
    flushed = []
    for u in units:
        if (
            u.stage is Stage.L3_CACHE
            and u.dirty
            and u.home.region is region
            and lo <= u.home.offset < hi
        ):
            flushed.append(
                DataUnit(u.uid, u.home, u.value, Stage.IMC_BUFFER, False, u.seq)
            )
        else:
            flushed.append(u)
    return tuple(flushed)


class ConfigurationError(Exception):
    """A recipe step asked the model for something its layout forbids."""
