"""A single (non-recursive) tree ORAM: encrypted buckets, stash, eviction.

Callers supply the block's current leaf and its freshly sampled leaf; the
recursive position map lives one layer up in :mod:`t3.oram.posmap`.
"""

from __future__ import annotations

import os
from typing import Callable, List, Optional, Sequence, Tuple

from t3.enclave.oblivious import TouchCounter, oblivious_index
from t3.errors import StashOverflow
from t3.oram.block import NONCE_BYTES, OramBlock, SlotCipher, slot_size
from t3.oram.eviction import circuit_evict, path_evict, reverse_lex_leaf
from t3.oram.params import OramParams, Strategy
from t3.oram.storage import TreeStore, path_indices

Update = Callable[[bytes], bytes]


def _bid(b: OramBlock) -> int:
    return b.bid


class Stash:
    """Fixed array of ``capacity`` slots; ``None`` marks a dummy slot."""

    def __init__(self, capacity: int, blocks: Sequence[OramBlock] = ()):
        self.capacity = capacity
        self.slots: List[Optional[OramBlock]] = [None] * capacity
        self.peak = 0
        self.replace(blocks)

    def blocks(self) -> List[OramBlock]:
        return [b for b in self.slots if b is not None]

    @property
    def occupancy(self) -> int:
        return sum(1 for b in self.slots if b is not None)

    def replace(self, blocks: Sequence[OramBlock]) -> None:
        if len(blocks) > self.capacity:
            raise StashOverflow(
                f"stash needs {len(blocks)} slots but holds {self.capacity}"
            )
        self.slots = list(blocks) + [None] * (self.capacity - len(blocks))
        self.peak = max(self.peak, len(blocks))

    def copy(self) -> "Stash":
        s = Stash(self.capacity, [OramBlock(b.bid, b.leaf, b.payload) for b in self.blocks()])
        s.peak = self.peak
        return s


def place_initial(params: OramParams, blocks: Sequence[OramBlock]) -> Tuple[List[List[OramBlock]], List[OramBlock]]:
    """Bulk placement used at initialization: each block in the deepest
    bucket of its path that still has room; leftovers go to the stash."""
    n, z = params.capacity_n, params.bucket_z
    content: List[List[OramBlock]] = [[] for _ in range(params.num_buckets)]
    spill: List[OramBlock] = []
    for b in blocks:
        for i in reversed(path_indices(b.leaf, n)):
            if len(content[i]) < z:
                content[i].append(b)
                break
        else:
            spill.append(b)
    return content, spill


class TreeOram:
    def __init__(self, params: OramParams, level: int, key: bytes, store: TreeStore,
                 root: bytes, stash: Stash, evict_counter: int = 0):
        self.params = params
        self.level = level
        self.height = params.height
        self.z = params.bucket_z
        self.cipher = SlotCipher(key, level, params.bucket_z, params.payload_bytes)
        self.store = store
        self.root = root
        self.stash = stash
        self.evict_counter = evict_counter
        self.touches = TouchCounter()

    @classmethod
    def create(cls, params: OramParams, level: int, key: bytes,
               blocks: Sequence[OramBlock] = ()) -> "TreeOram":
        content, spill = place_initial(params, blocks)
        cipher = SlotCipher(key, level, params.bucket_z, params.payload_bytes)
        nonces = os.urandom(NONCE_BYTES * params.bucket_z * params.num_buckets)
        step = NONCE_BYTES * params.bucket_z
        buckets = [cipher.encrypt_bucket(i, content[i], nonces[i * step:(i + 1) * step])
                   for i in range(params.num_buckets)]
        store = TreeStore.from_buckets(params.capacity_n, params.bucket_z,
                                       slot_size(params.payload_bytes), buckets)
        return cls(params, level, key, store, store.node(0), Stash(params.max_stash, spill))

    # -- path I/O -----------------------------------------------------------

    def read_path(self, leaf: int) -> List[List[Optional[OramBlock]]]:
        """Decrypted buckets root..leaf, each of length Z (``None`` = dummy)."""
        raws = self.store.read_path(leaf, self.root)
        path = path_indices(leaf, self.params.capacity_n)
        dec = self.cipher.decrypt_bucket
        self.touches.count += len(path) * self.z
        return [dec(i, raw) for i, raw in zip(path, raws)]

    def write_path(self, leaf: int, buckets: Sequence[Sequence[OramBlock]]) -> None:
        path = path_indices(leaf, self.params.capacity_n)
        step = NONCE_BYTES * self.z
        nonces = os.urandom(step * len(path))
        enc = self.cipher.encrypt_bucket
        raws = [enc(i, bucket, nonces[d * step:(d + 1) * step])
                for d, (i, bucket) in enumerate(zip(path, buckets))]
        self.touches.count += len(path) * self.z
        self.root = self.store.write_path(leaf, raws)

    # -- access -------------------------------------------------------------

    def access(self, bid: int, leaf: int, new_leaf: int,
               update: Optional[Update] = None) -> bytes:
        """Fetch block ``bid`` (expected on ``leaf``), optionally rewrite its
        payload, remap it to ``new_leaf`` and evict.  Returns the payload as
        it was before the update; a never-written block reads as zeros."""
        if self.params.strategy is Strategy.PATH:
            return self._access_path(bid, leaf, new_leaf, update)
        return self._access_circuit(bid, leaf, new_leaf, update)

    def _take(self, bid: int, slots: List[Optional[OramBlock]]) -> Tuple[int, OramBlock]:
        i = oblivious_index(slots, bid, _bid, self.touches)
        if i >= 0:
            block = slots[i]
            slots[i] = None
        else:
            block = OramBlock(bid, 0, bytes(self.params.payload_bytes))
        return i, block

    def _access_path(self, bid, leaf, new_leaf, update):
        path = self.read_path(leaf)
        flat = [b for bucket in path for b in bucket] + self.stash.slots
        _, block = self._take(bid, flat)
        old = block.payload
        if update is not None:
            block.payload = _checked(update(old), self.params.payload_bytes)
        block.leaf = new_leaf
        working = [b for b in flat if b is not None]
        working.append(block)
        buckets, rest = path_evict(working, leaf, self.height, self.z)
        self.stash.replace(rest)
        self.write_path(leaf, buckets)
        return old

    def _access_circuit(self, bid, leaf, new_leaf, update):
        path = self.read_path(leaf)
        flat = [b for bucket in path for b in bucket]
        i_path, block = self._take(bid, flat)
        stash_slots = list(self.stash.slots)
        i_stash = oblivious_index(stash_slots, bid, _bid, self.touches)
        if i_stash >= 0 and i_path < 0:
            block = stash_slots[i_stash]
        if i_stash >= 0:
            stash_slots[i_stash] = None
        z = self.z
        self.write_path(leaf, [[b for b in flat[d * z:(d + 1) * z] if b is not None]
                               for d in range(self.height + 1)])
        old = block.payload
        if update is not None:
            block.payload = _checked(update(old), self.params.payload_bytes)
        block.leaf = new_leaf
        stash = [b for b in stash_slots if b is not None]
        stash.append(block)
        for _ in range(2):
            stash = self._circuit_evict_once(stash)
        self.stash.replace(stash)
        return old

    def _circuit_evict_once(self, stash: List[OramBlock]) -> List[OramBlock]:
        leaf = reverse_lex_leaf(self.evict_counter, self.height)
        self.evict_counter += 1
        path = [[b for b in bucket if b is not None] for bucket in self.read_path(leaf)]
        self.touches.count += self.stash.capacity
        buckets, stash = circuit_evict(stash, path, leaf, self.height, self.z)
        self.write_path(leaf, buckets)
        return stash

    # -- read-only ------------------------------------------------------------

    def copy(self, readonly: bool = False) -> "TreeOram":
        t = TreeOram(self.params, self.level, self.cipher.key, self.store.copy(readonly),
                     self.root, self.stash.copy(), self.evict_counter)
        return t


def _checked(payload: bytes, size: int) -> bytes:
    if len(payload) != size:
        raise ValueError(f"payload must be exactly {size} bytes, got {len(payload)}")
    return bytes(payload)
