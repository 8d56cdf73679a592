"""Checksummed log-record framing and torn-write-safe tail detection.

Wire layout of a record:

    length (u32 LE) | payload | crc32c over length+payload (u32 LE)

padded with zero bytes to a multiple of the 8-byte persistence unit.  A
record validates only if the stored checksum matches a recomputation, so a
torn record (any unit still holding old or mixed bytes) fails validation
with probability ~ 1 - 2^-32.  The tail of a log is the offset of the
first record that fails to validate.

The same framing doubles as the wire format of two-sided messages: the
inner payload packs (address, value) update entries, which is what lets a
recovery pass find and apply a complete message sitting in a PM-resident
receive buffer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .memory import UNIT_BYTES, Address, Region

_LEN = struct.Struct("<I")
_HEADER_BYTES = 4
_CRC_BYTES = 4

# CRC-32C (Castagnoli), reflected polynomial 0x82F63B78.
_CRC_TABLE = []
for _n in range(256):
    _c = _n
    for _ in range(8):
        _c = (_c >> 1) ^ 0x82F63B78 if _c & 1 else _c >> 1
    _CRC_TABLE.append(_c)


def crc32c(data: bytes, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFFFFFF


def _pad(data: bytes) -> bytes:
    rem = len(data) % UNIT_BYTES
    return data if not rem else data + b"\x00" * (UNIT_BYTES - rem)


def record_size(payload_len: int) -> int:
    """Encoded size of a record framing ``payload_len`` bytes."""
    raw = _HEADER_BYTES + payload_len + _CRC_BYTES
    return raw + (-raw) % UNIT_BYTES


def encode_record(payload: bytes) -> bytes:
    """Frame ``payload`` as length | payload | crc32c, unit-padded."""
    body = _LEN.pack(len(payload)) + payload
    return _pad(body + _LEN.pack(crc32c(body)))


def decode_record(data: bytes, offset: int = 0) -> tuple[bytes, int] | None:
    """Validate the record at ``offset``; (payload, encoded size) or None."""
    if offset + _HEADER_BYTES + _CRC_BYTES > len(data):
        return None
    (length,) = _LEN.unpack_from(data, offset)
    end = offset + _HEADER_BYTES + length
    if length > len(data) - offset - _HEADER_BYTES - _CRC_BYTES:
        return None  # implausible length, cannot even hold its checksum
    (stored,) = _LEN.unpack_from(data, end)
    if stored != crc32c(data[offset:end]):
        return None
    return data[offset + _HEADER_BYTES : end], record_size(length)


@dataclass(frozen=True)
class LogLayout:
    """A contiguous PM log; the tail word is used only in compound mode."""

    base: Address
    capacity: int
    tail_index: Address | None = None

    def __post_init__(self):
        if self.base.region is not Region.PM:
            raise ValueError("logs live in persistent memory")


def scan_log_tail(data: bytes, layout: LogLayout | None = None) -> int:
    """Offset of the first record that fails validation.

    Walks records from the start of ``data``; a failed checksum, an
    implausible length, or running off the end stops the scan.  Never
    returns an offset past a failed record, so a reader can never be
    handed a record whose predecessor did not fully persist.
    """
    limit = len(data) if layout is None else min(len(data), layout.capacity)
    offset = 0
    while offset < limit:
        parsed = decode_record(data[:limit], offset)
        if parsed is None:
            return offset
        offset += parsed[1]
    return offset


# -- update entries (inner message payload) ---------------------------------

_UPDATE_HEADER = struct.Struct("<II")  # target offset, value length


def encode_updates(entries: list[tuple[int, bytes]]) -> bytes:
    """Pack (PM offset, value) update entries into one message payload."""
    out = bytearray()
    for offset, value in entries:
        out += _UPDATE_HEADER.pack(offset, len(value))
        out += _pad(value)
    return bytes(out)


def decode_updates(payload: bytes) -> list[tuple[int, bytes]]:
    entries = []
    pos = 0
    while pos < len(payload):
        if pos + _UPDATE_HEADER.size > len(payload):
            raise ValueError("truncated update entry")
        offset, length = _UPDATE_HEADER.unpack_from(payload, pos)
        pos += _UPDATE_HEADER.size
        padded = length + (-length) % UNIT_BYTES
        if pos + padded > len(payload):
            raise ValueError("truncated update value")
        entries.append((offset, payload[pos : pos + length]))
        pos += padded
    return entries
