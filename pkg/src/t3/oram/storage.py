"""Untrusted bucket storage with a Merkle hash tree sidecar.

Tree file layout: a 16-byte header (magic, version, Z, slot size, N) followed
by ``2N - 1`` buckets in level order at a fixed stride.  The sidecar holds one
32-byte node hash per bucket in the same order, where

    node(i) = SHA256(bucket(i) || node(2i+1) || node(2i+2))

with all-zero hashes standing in for the children of leaf buckets.  The root
is never stored here: the enclave keeps it and checks every fetched path
against it.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from pathlib import Path
from typing import List, Sequence, Union

from t3.errors import IntegrityViolation, InvalidParams

MAGIC = b"T3OR"
VERSION = 1
HEADER = struct.Struct(">4sHHII")  # 16 bytes
HASH_BYTES = 32
ZERO_HASH = bytes(HASH_BYTES)

Buffer = Union[bytearray, bytes, memoryview]


def path_indices(leaf: int, n: int) -> List[int]:
    """Bucket indices from root to the bucket of ``leaf``."""
    idx = n - 1 + leaf
    out = [idx]
    while idx:
        idx = (idx - 1) >> 1
        out.append(idx)
    out.reverse()
    return out


class TreeStore:
    """A flat bucket array plus Merkle sidecar, optionally read-only."""

    def __init__(self, n: int, z: int, slot_size: int, buf: Buffer, mht: Buffer):
        self.n = n
        self.z = z
        self.slot_size = slot_size
        self.bucket_size = z * slot_size
        self.num_buckets = 2 * n - 1
        expected = HEADER.size + self.num_buckets * self.bucket_size
        if len(buf) != expected:
            raise InvalidParams(f"tree buffer is {len(buf)} bytes, expected {expected}")
        if len(mht) != self.num_buckets * HASH_BYTES:
            raise InvalidParams("merkle sidecar has wrong size")
        self.buf = buf
        self.mht = mht

    @classmethod
    def from_buckets(cls, n: int, z: int, slot_size: int,
                     buckets: Sequence[bytes]) -> "TreeStore":
        buf = bytearray(HEADER.pack(MAGIC, VERSION, z, slot_size, n))
        buf += b"".join(buckets)
        mht = bytearray(len(buckets) * HASH_BYTES)
        store = cls(n, z, slot_size, buf, mht)
        store.rebuild_merkle()
        return store

    @property
    def readonly(self) -> bool:
        return not isinstance(self.buf, bytearray)

    def _off(self, i: int) -> int:
        return HEADER.size + i * self.bucket_size

    def bucket(self, i: int) -> bytes:
        off = self._off(i)
        return bytes(self.buf[off:off + self.bucket_size])

    def put_bucket(self, i: int, data: bytes) -> None:
        off = self._off(i)
        self.buf[off:off + self.bucket_size] = data

    def node(self, i: int) -> bytes:
        return bytes(self.mht[i * HASH_BYTES:(i + 1) * HASH_BYTES])

    def put_node(self, i: int, h: bytes) -> None:
        self.mht[i * HASH_BYTES:(i + 1) * HASH_BYTES] = h

    def rebuild_merkle(self) -> bytes:
        """Recompute every node hash bottom-up; returns the root."""
        first_leaf = self.n - 1
        sha = hashlib.sha256
        for i in range(self.num_buckets - 1, -1, -1):
            if i >= first_leaf:
                h = sha(self.bucket(i) + ZERO_HASH + ZERO_HASH).digest()
            else:
                h = sha(self.bucket(i) + self.node(2 * i + 1) + self.node(2 * i + 2)).digest()
            self.put_node(i, h)
        return self.node(0)

    def _fold(self, path: List[int], raws: Sequence[bytes]) -> List[bytes]:
        """Node hashes along ``path`` recomputed from ``raws`` and sibling hashes."""
        sha = hashlib.sha256
        hashes = [b""] * len(path)
        h = sha(raws[-1] + ZERO_HASH + ZERO_HASH).digest()
        hashes[-1] = h
        for d in range(len(path) - 2, -1, -1):
            child = path[d + 1]
            if child & 1:  # left child
                h = sha(raws[d] + h + self.node(child + 1)).digest()
            else:
                h = sha(raws[d] + self.node(child - 1) + h).digest()
            hashes[d] = h
        return hashes

    def read_path(self, leaf: int, root: bytes) -> List[bytes]:
        """Raw buckets root..leaf, verified against the trusted ``root``."""
        path = path_indices(leaf, self.n)
        raws = [self.bucket(i) for i in path]
        computed = self._fold(path, raws)[0]
        if not hmac.compare_digest(computed, root):
            raise IntegrityViolation(f"merkle check failed on path to leaf {leaf}")
        return raws

    def write_path(self, leaf: int, raws: Sequence[bytes]) -> bytes:
        """Store buckets root..leaf and their node hashes; returns the new root."""
        path = path_indices(leaf, self.n)
        for i, raw in zip(path, raws):
            self.put_bucket(i, raw)
        hashes = self._fold(path, raws)
        for i, h in zip(path, hashes):
            self.put_node(i, h)
        return hashes[0]

    def copy(self, readonly: bool = False) -> "TreeStore":
        if readonly:
            return TreeStore(self.n, self.z, self.slot_size, bytes(self.buf), bytes(self.mht))
        return TreeStore(self.n, self.z, self.slot_size, bytearray(self.buf), bytearray(self.mht))

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.write_bytes(self.buf)
        path.with_name(path.name + ".mht").write_bytes(self.mht)

    @classmethod
    def load(cls, path: Union[str, Path], readonly: bool = False) -> "TreeStore":
        path = Path(path)
        data = path.read_bytes()
        if len(data) < HEADER.size:
            raise IntegrityViolation(f"{path}: truncated tree file")
        magic, version, z, ss, n = HEADER.unpack_from(data)
        if magic != MAGIC or version != VERSION:
            raise IntegrityViolation(f"{path}: bad magic/version")
        mht = path.with_name(path.name + ".mht").read_bytes()
        if readonly:
            return cls(n, z, ss, data, mht)
        return cls(n, z, ss, bytearray(data), bytearray(mht))
