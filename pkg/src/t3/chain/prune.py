"""Reduce a verified block to the record-level updates the store needs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from t3.chain.tx import Block, classify_output, spender_hash
from t3.utxo.records import UtxoRecord

Spend = Tuple[bytes, bytes, int]  # (pkh, txid, vout)


@dataclass
class UpdateBatch:
    height: int
    spends: List[Spend] = field(default_factory=list)
    creates: List[UtxoRecord] = field(default_factory=list)
    skipped_outputs: int = 0
    skipped_inputs: int = 0

    @property
    def sizes(self) -> Tuple[int, int]:
        return len(self.spends), len(self.creates)


def prune(block: Block, height: int) -> UpdateBatch:
    """P2PKH/P2SH outputs become creates; inputs whose scriptSig ends in a
    push become spends keyed by hash160 of that push.  An output both created
    and spent inside the block cancels out, so a batch can be applied as
    "all spends, then all creates" without regard to intra-block order."""
    batch = UpdateBatch(height)
    created: Dict[Tuple[bytes, int], UtxoRecord] = {}
    for tx in block.txs:
        if not tx.is_coinbase:
            for txin in tx.inputs:
                op = (txin.prev_txid, txin.prev_vout)
                if op in created:
                    del created[op]
                    continue
                pkh = spender_hash(txin.script_sig)
                if pkh is None:
                    batch.skipped_inputs += 1
                    continue
                batch.spends.append((pkh, txin.prev_txid, txin.prev_vout))
        txid = tx.txid
        for vout, out in enumerate(tx.outputs):
            kind, h = classify_output(out.script_pubkey)
            if h is None:
                batch.skipped_outputs += 1
                continue
            created[(txid, vout)] = UtxoRecord(txid, vout, out.value, height, h)
    batch.creates = list(created.values())
    return batch
