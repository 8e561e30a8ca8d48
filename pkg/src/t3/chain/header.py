"""80-byte block headers, compact difficulty targets, proof of work."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional

from t3.chain.tx import dsha256
from t3.errors import BadEncoding, NonceExhausted

_HDR = struct.Struct("<i32s32sIII")
EASY_BITS = 0x207FFFFF  # regtest-style target, about 2**255


def bits_to_target(nbits: int) -> int:
    exponent = nbits >> 24
    mantissa = nbits & 0x007FFFFF
    if nbits & 0x00800000:
        raise BadEncoding("negative compact target")
    if exponent <= 3:
        target = mantissa >> (8 * (3 - exponent))
    else:
        target = mantissa << (8 * (exponent - 3))
    if target == 0 or target >= 1 << 256:
        raise BadEncoding(f"compact target {nbits:#010x} out of range")
    return target


def target_to_bits(target: int) -> int:
    if not 0 < target < 1 << 256:
        raise ValueError("target out of range")
    size = (target.bit_length() + 7) // 8
    if size <= 3:
        mantissa = target << (8 * (3 - size))
    else:
        mantissa = target >> (8 * (size - 3))
    if mantissa & 0x00800000:
        mantissa >>= 8
        size += 1
    return (size << 24) | mantissa


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    nbits: int
    nonce: int

    def serialize(self) -> bytes:
        return _HDR.pack(self.version, self.prev_hash, self.merkle_root, self.timestamp,
                         self.nbits, self.nonce)

    @classmethod
    def parse(cls, data: bytes) -> "BlockHeader":
        if len(data) != 80:
            raise BadEncoding(f"header must be 80 bytes, got {len(data)}")
        return cls(*_HDR.unpack(data))

    def hash(self) -> bytes:
        return dsha256(self.serialize())

    @property
    def hash_hex(self) -> str:
        return self.hash()[::-1].hex()

    def pow_ok(self) -> bool:
        return int.from_bytes(self.hash(), "little") <= bits_to_target(self.nbits)


def mine(template: BlockHeader, nbits: Optional[int] = None, start: int = 0,
         max_nonce: int = 1 << 32) -> BlockHeader:
    """Grind the nonce until the header meets its target."""
    header = replace(template, nbits=template.nbits if nbits is None else nbits)
    target = bits_to_target(header.nbits)
    prefix = header.serialize()[:76]
    for nonce in range(start, max_nonce):
        h = dsha256(prefix + struct.pack("<I", nonce))
        if int.from_bytes(h, "little") <= target:
            return replace(header, nonce=nonce)
    raise NonceExhausted("no nonce satisfies the target")
