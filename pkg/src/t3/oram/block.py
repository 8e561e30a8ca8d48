"""Block records and per-slot authenticated encryption."""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from t3.errors import IntegrityViolation

DUMMY_BID = 0xFFFFFFFF
NONCE_BYTES = 12
TAG_BYTES = 16
_HDR = struct.Struct(">II")
_AAD = struct.Struct(">BIH")


@dataclass(slots=True)
class OramBlock:
    bid: int
    leaf: int
    payload: bytes

    @property
    def is_dummy(self) -> bool:
        return self.bid == DUMMY_BID

    @classmethod
    def dummy(cls, payload_bytes: int) -> "OramBlock":
        return cls(DUMMY_BID, 0, bytes(payload_bytes))


def slot_size(payload_bytes: int) -> int:
    return NONCE_BYTES + _HDR.size + payload_bytes + TAG_BYTES


def derive_key(master: bytes, label: bytes) -> bytes:
    return hmac.new(master, b"t3/oram/" + label, hashlib.sha256).digest()


class SlotCipher:
    """Encrypts buckets slot by slot; each slot is ``nonce || ct || tag``.

    The AAD binds (tree level, bucket index, slot index) so a valid ciphertext
    cannot be moved to another position undetected.
    """

    def __init__(self, key: bytes, level: int, z: int, payload_bytes: int):
        self.key = key
        self._aead = AESGCM(key)
        self.level = level
        self.z = z
        self.payload_bytes = payload_bytes
        self.slot_size = slot_size(payload_bytes)
        self.bucket_size = self.slot_size * z
        self._dummy_pt = _HDR.pack(DUMMY_BID, 0) + bytes(payload_bytes)

    def encrypt_bucket(self, index: int, blocks: Sequence[Optional[OramBlock]],
                       nonces: Optional[bytes] = None) -> bytes:
        z = self.z
        if nonces is None:
            nonces = os.urandom(NONCE_BYTES * z)
        enc = self._aead.encrypt
        out = []
        for s in range(z):
            b = blocks[s] if s < len(blocks) else None
            if b is None:
                pt = self._dummy_pt
            else:
                pt = _HDR.pack(b.bid, b.leaf) + b.payload
            nonce = nonces[s * NONCE_BYTES:(s + 1) * NONCE_BYTES]
            out.append(nonce)
            out.append(enc(nonce, pt, _AAD.pack(self.level, index, s)))
        return b"".join(out)

    def decrypt_bucket(self, index: int, raw: bytes) -> List[Optional[OramBlock]]:
        """Decrypt ``Z`` slots; dummy slots come back as ``None``."""
        dec = self._aead.decrypt
        ss = self.slot_size
        out: List[Optional[OramBlock]] = []
        for s in range(self.z):
            off = s * ss
            try:
                pt = dec(raw[off:off + NONCE_BYTES], raw[off + NONCE_BYTES:off + ss],
                         _AAD.pack(self.level, index, s))
            except InvalidTag:
                raise IntegrityViolation(
                    f"slot {s} of bucket {index} (level {self.level}) failed authentication"
                ) from None
            bid, leaf = _HDR.unpack_from(pt)
            out.append(None if bid == DUMMY_BID else OramBlock(bid, leaf, pt[_HDR.size:]))
        return out
