"""Bitcoin transaction Merkle root."""

from __future__ import annotations

from typing import List, Sequence

from t3.chain.tx import Block, dsha256
from t3.errors import BadEncoding


def merkle_root(txids: Sequence[bytes]) -> bytes:
    """Pairwise double-SHA256 over internal-order txids; an odd level repeats
    its last hash.  A single transaction's root is its txid."""
    if not txids:
        raise BadEncoding("merkle root of an empty transaction list")
    level: List[bytes] = list(txids)
    while len(level) > 1:
        if len(level) & 1:
            level.append(level[-1])
        level = [dsha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def verify_block_body(block: Block) -> bool:
    return merkle_root([t.txid for t in block.txs]) == block.header.merkle_root
