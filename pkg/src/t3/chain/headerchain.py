"""Append-only header chain with a keyed integrity tag on its file."""

from __future__ import annotations

import hashlib
import hmac
import os
from pathlib import Path
from typing import Iterable, List, Optional, Union

from t3.chain.header import BlockHeader
from t3.chain.merkle import verify_block_body
from t3.chain.tx import Block
from t3.errors import BadEncoding, BadLink, BadMerkleRoot, BadPow, ChainTampered

TAG_BYTES = 32


def _tag(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, b"t3-headers" + data, hashlib.sha256).digest()


class HeaderChain:
    """Headers from genesis to tip.  Reorgs are not supported: any header
    that does not extend the tip is rejected."""

    def __init__(self, genesis_hash: Optional[bytes] = None):
        self.genesis_hash = genesis_hash
        self.headers: List[BlockHeader] = []
        self._hashes: List[bytes] = []

    def __len__(self) -> int:
        return len(self.headers)

    @property
    def height(self) -> int:
        """Height of the tip; -1 when empty."""
        return len(self.headers) - 1

    @property
    def tip(self) -> Optional[BlockHeader]:
        return self.headers[-1] if self.headers else None

    @property
    def tip_hash(self) -> Optional[bytes]:
        return self._hashes[-1] if self._hashes else None

    def hash_at(self, height: int) -> bytes:
        return self._hashes[height]

    def verify_header(self, header: BlockHeader) -> None:
        """Raise unless ``header`` would extend the tip.  Does not append."""
        verify_header(header, self)

    def append(self, header: BlockHeader) -> int:
        self.verify_header(header)
        self.headers.append(header)
        self._hashes.append(header.hash())
        return self.height

    def accept_block(self, block: Block) -> int:
        """Full check (link, PoW, Merkle root) then append; returns new height."""
        self.verify_header(block.header)
        if not verify_block_body(block):
            raise BadMerkleRoot("transactions do not hash to the header's merkle root")
        return self.append(block.header)

    def extend(self, headers: Iterable[BlockHeader]) -> None:
        for h in headers:
            self.append(h)

    # -- persistence -------------------------------------------------------

    def serialize(self) -> bytes:
        return b"".join(h.serialize() for h in self.headers)

    def save(self, path: Union[str, Path], key: bytes) -> None:
        body = self.serialize()
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(body + _tag(key, body))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: Union[str, Path], key: bytes,
             genesis_hash: Optional[bytes] = None) -> "HeaderChain":
        data = Path(path).read_bytes()
        body, tag = data[:-TAG_BYTES], data[-TAG_BYTES:]
        if len(data) < TAG_BYTES or len(body) % 80:
            raise ChainTampered("header file has the wrong length")
        if not hmac.compare_digest(tag, _tag(key, body)):
            raise ChainTampered("header file integrity tag mismatch")
        chain = cls(genesis_hash)
        chain.extend(BlockHeader.parse(body[i:i + 80]) for i in range(0, len(body), 80))
        return chain

    @classmethod
    def from_bytes(cls, body: bytes, genesis_hash: Optional[bytes] = None) -> "HeaderChain":
        """Untagged concatenated headers (e.g. fetched from a server), fully verified."""
        if len(body) % 80:
            raise BadEncoding("header stream is not a multiple of 80 bytes")
        chain = cls(genesis_hash)
        chain.extend(BlockHeader.parse(body[i:i + 80]) for i in range(0, len(body), 80))
        return chain


def verify_header(header: BlockHeader, chain: HeaderChain) -> None:
    if not isinstance(header, BlockHeader):
        raise BadEncoding("not a block header")
    if not header.pow_ok():
        raise BadPow(f"header {header.hash_hex} does not meet its target")
    if chain.tip_hash is None:
        if chain.genesis_hash is not None and header.hash() != chain.genesis_hash:
            raise BadLink("first header is not the configured genesis")
        return
    if header.prev_hash != chain.tip_hash:
        raise BadLink(f"prev_hash does not match tip at height {chain.height}")
