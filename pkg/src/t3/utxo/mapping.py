"""Keyed address-to-block mappings and block sizing."""

from __future__ import annotations

import hashlib
import hmac
import math
import struct
from typing import List

from t3.errors import InvalidParams


def prf(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def _to_bid(digest: bytes, n: int) -> int:
    return int.from_bytes(digest[:8], "big") % n


def oblock_map(pkh: bytes, k_b: bytes, n: int) -> int:
    """Single-block mapping: first 8 bytes of HMAC-SHA256(k_b, pkh) mod N."""
    return _to_bid(prf(k_b, pkh), n)


def oblock_map_multi(pkh: bytes, k_b: bytes, delta: int, n: int, delta_max: int = 16) -> List[int]:
    """Block ids ``PRF(k_b, pkh || i) mod N`` for ``i < delta`` (i as 4-byte BE)."""
    if not 1 <= delta <= delta_max:
        raise InvalidParams(f"delta must be in [1, {delta_max}], got {delta}")
    return [_to_bid(prf(k_b, pkh + struct.pack(">I", i)), n) for i in range(delta)]


def route_slot(pkh: bytes, txid: bytes, vout: int, k_b: bytes, delta: int) -> int:
    """Which of an address's ``delta`` blocks holds the output (txid, vout)."""
    return _to_bid(prf(k_b, pkh + txid + struct.pack(">I", vout)), delta)


def capacity_for(m: int, n: int) -> int:
    """Records per block so that, for a random mapping of ``m`` items into
    ``n`` blocks, no block overflows except with probability about 1/n."""
    if m < 1 or n < 1:
        raise InvalidParams("m and n must be positive")
    return math.ceil(math.e * m / n)
