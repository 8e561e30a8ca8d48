"""Plaintext reference stores.  Deliberately naive: dictionaries, no ORAM,
no layouts, no keyed mapping."""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

from t3.chain.prune import UpdateBatch

Utxo = Tuple[str, int, int, int]


class OracleKV:
    """Reference semantics for ``Oram.access``: unwritten blocks read as zeros."""

    def __init__(self, n: int, payload_bytes: int):
        self.n = n
        self.zero = bytes(payload_bytes)
        self.data: Dict[int, bytes] = {}

    def access(self, op: str, bid: int, data: Optional[bytes] = None) -> bytes:
        if not 0 <= bid < self.n:
            raise IndexError(bid)
        old = self.data.get(bid, self.zero)
        if op == "write":
            self.data[bid] = data
        return old


class OracleUtxo:
    """pkh -> {(txid, vout): record tuple}, replayed from update batches."""

    def __init__(self) -> None:
        self.by_pkh: Dict[bytes, Dict[Tuple[bytes, int], Utxo]] = {}

    def apply(self, batch: UpdateBatch) -> None:
        for pkh, txid, vout in batch.spends:
            self.by_pkh.get(pkh, {}).pop((txid, vout), None)
        for r in batch.creates:
            self.by_pkh.setdefault(r.pkh, {})[(r.txid, r.vout)] = (r.txid.hex(), r.vout, r.amount, r.height)

    def replay(self, batches: Iterable[UpdateBatch]) -> "OracleUtxo":
        for b in batches:
            self.apply(b)
        return self

    def utxos(self, pkh: bytes) -> List[Utxo]:
        return sorted(self.by_pkh.get(pkh, {}).values())

    def snapshot(self) -> Dict[bytes, List[Utxo]]:
        return {pkh: sorted(v.values()) for pkh, v in self.by_pkh.items() if v}
