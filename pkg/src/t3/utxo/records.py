"""Pruned UTXO records and the fixed-size ORAM block that packs them."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional

from t3.errors import BlockFull, MalformedPayload

RECORD = struct.Struct(">32sIQI20s")
RECORD_BYTES = RECORD.size  # 68
MAX_MONEY = 21_000_000 * 100_000_000
_ZERO = bytes(RECORD_BYTES)


@dataclass(frozen=True)
class UtxoRecord:
    txid: bytes
    vout: int
    amount: int
    height: int
    pkh: bytes

    def __post_init__(self) -> None:
        if len(self.txid) != 32 or len(self.pkh) != 20:
            raise MalformedPayload("txid must be 32 bytes and pkh 20 bytes")
        if not 0 <= self.amount <= MAX_MONEY:
            raise MalformedPayload(f"amount {self.amount} out of range")
        if not (0 <= self.vout < 1 << 32 and 0 <= self.height < 1 << 32):
            raise MalformedPayload("vout/height out of range")

    def to_bytes(self) -> bytes:
        return RECORD.pack(self.txid, self.vout, self.amount, self.height, self.pkh)

    @classmethod
    def from_bytes(cls, data: bytes) -> "UtxoRecord":
        if len(data) != RECORD_BYTES:
            raise MalformedPayload(f"record must be {RECORD_BYTES} bytes")
        return cls(*RECORD.unpack(data))

    @property
    def is_dummy(self) -> bool:
        return self.txid == bytes(32)

    @property
    def outpoint(self) -> tuple:
        return (self.txid, self.vout)


DUMMY_RECORD = UtxoRecord(bytes(32), 0, 0, 0, bytes(20))


class BlockLayout:
    """``capacity`` record slots, all-zero when empty; serializes to
    ``capacity * 68`` bytes regardless of occupancy."""

    def __init__(self, capacity: int, slots: Optional[List[Optional[UtxoRecord]]] = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.slots: List[Optional[UtxoRecord]] = slots if slots is not None else [None] * capacity

    @classmethod
    def size_for(cls, capacity: int) -> int:
        return capacity * RECORD_BYTES

    @classmethod
    def unpack(cls, payload: bytes, capacity: Optional[int] = None) -> "BlockLayout":
        if capacity is None:
            capacity, rem = divmod(len(payload), RECORD_BYTES)
            if rem or capacity == 0:
                raise MalformedPayload("payload is not a whole number of records")
        elif len(payload) != capacity * RECORD_BYTES:
            raise MalformedPayload(
                f"payload is {len(payload)} bytes, expected {capacity * RECORD_BYTES}")
        slots: List[Optional[UtxoRecord]] = []
        for i in range(capacity):
            raw = payload[i * RECORD_BYTES:(i + 1) * RECORD_BYTES]
            if raw == _ZERO:
                slots.append(None)
                continue
            rec = UtxoRecord.from_bytes(raw)
            if rec.is_dummy:
                raise MalformedPayload(f"slot {i}: zero txid in a non-empty record")
            slots.append(rec)
        return cls(capacity, slots)

    def pack(self) -> bytes:
        return b"".join(_ZERO if r is None else r.to_bytes() for r in self.slots)

    @property
    def occupied(self) -> int:
        return sum(1 for r in self.slots if r is not None)

    def records(self) -> List[UtxoRecord]:
        return [r for r in self.slots if r is not None]

    def insert(self, record: UtxoRecord) -> None:
        free = -1
        for i, r in enumerate(self.slots):
            if r is not None and r.outpoint == record.outpoint:
                raise MalformedPayload("outpoint already present")
            if r is None and free < 0:
                free = i
        if free < 0:
            raise BlockFull(f"block already holds {self.capacity} records")
        self.slots[free] = record

    def remove(self, txid: bytes, vout: int) -> bool:
        hit = False
        for i, r in enumerate(self.slots):
            if r is not None and r.txid == txid and r.vout == vout:
                self.slots[i] = None
                hit = True
        return hit

    def extract(self, pkh: bytes, max_out: int) -> List[UtxoRecord]:
        """Exactly ``max_out`` records: those owned by ``pkh`` first, then dummies.
        Every slot is examined regardless of where matches are."""
        out: List[UtxoRecord] = []
        for r in self.slots:
            take = r is not None and r.pkh == pkh and len(out) < max_out
            if take:
                out.append(r)
        return out + [DUMMY_RECORD] * (max_out - len(out))
