"""Recursive position map.

Map tree ``l`` (1-based) stores, in each block, ``chi`` four-byte big-endian
leaf labels for consecutive blocks of the tree one level down.  Recursion
ends when the remaining labels fit the plaintext budget (8 KB by default);
that final table is the ``top`` list and never leaves the enclave.
"""

from __future__ import annotations

import random
import struct
from typing import Dict, List, Optional, Sequence

from t3.errors import IntegrityViolation
from t3.oram.block import OramBlock, derive_key
from t3.oram.params import LEAF_BYTES, OramParams
from t3.oram.tree import TreeOram

_U32 = struct.Struct(">I")


def pack_leaves(leaves: Sequence[int], chi: int) -> bytes:
    out = bytearray(chi * LEAF_BYTES)
    for i, leaf in enumerate(leaves):
        _U32.pack_into(out, i * LEAF_BYTES, leaf)
    return bytes(out)


def unpack_leaf(payload: bytes, offset: int) -> int:
    return _U32.unpack_from(payload, offset * LEAF_BYTES)[0]


def block_ids(bid: int, chi: int, depth: int) -> List[int]:
    """``ids[l]`` is the block holding ``bid``'s label chain at tree level ``l``."""
    ids = [bid]
    for _ in range(depth):
        ids.append(ids[-1] // chi)
    return ids


class PositionMap:
    def __init__(self, params: OramParams, trees: List[TreeOram], top: List[int],
                 rng: random.Random):
        self.params = params
        self.trees = trees
        self.top = top
        self.rng = rng

    @classmethod
    def create(cls, params: OramParams, master_key: bytes,
               rng: random.Random) -> "PositionMap":
        """Sample an independent uniform leaf for every data block and build
        the map trees holding those labels (bottom-up)."""
        chi = params.recursion_chi
        child_n = params.capacity_n
        labels = [rng.randrange(child_n) for _ in range(child_n)]
        trees: List[TreeOram] = []
        for level, n in enumerate(params.map_tree_sizes(), start=1):
            mp = params.for_map_level(n)
            own = [rng.randrange(n) for _ in range(n)]
            blocks = [OramBlock(j, own[j], pack_leaves(labels[j * chi:(j + 1) * chi], chi))
                      for j in range(n)]
            trees.append(TreeOram.create(mp, level, derive_key(master_key, b"%d" % level), blocks))
            labels = own
        return cls(params, trees, labels, rng)

    @property
    def depth(self) -> int:
        return len(self.trees)

    def remap(self, bid: int, new_leaf: Optional[int]) -> int:
        """Return ``bid``'s current leaf and replace it with ``new_leaf``
        (``None`` keeps it).  Every map-tree block touched is itself remapped."""
        k = self.depth
        if k == 0:
            old = self.top[bid]
            if new_leaf is not None:
                self.top[bid] = new_leaf
            return old
        chi = self.params.recursion_chi
        ids = block_ids(bid, chi, k)
        fresh = [0] + [self.rng.randrange(t.params.capacity_n) for t in self.trees]
        leaf = self.top[ids[k]]
        self.top[ids[k]] = fresh[k]
        for l in range(k, 0, -1):
            off = ids[l - 1] % chi
            want = new_leaf if l == 1 else fresh[l - 1]
            seen: Dict[str, int] = {}

            def swap(payload: bytes, off=off, want=want, seen=seen) -> bytes:
                seen["old"] = unpack_leaf(payload, off)
                if want is None:
                    return payload
                out = bytearray(payload)
                _U32.pack_into(out, off * LEAF_BYTES, want)
                return bytes(out)

            self.trees[l - 1].access(ids[l], leaf, fresh[l], swap)
            if "old" not in seen:
                raise IntegrityViolation(f"position map level {l} lost block {ids[l]}")
            leaf = seen["old"]
        return leaf

    def lookup(self, bid: int) -> int:
        return self.remap(bid, None)

    def update(self, bid: int, new_leaf: int) -> None:
        self.remap(bid, new_leaf)

    def entries(self) -> List[int]:
        """Every data-level label, read non-obliviously (tests and tooling)."""
        if not self.trees:
            return list(self.top)
        tree, chi = self.trees[0], self.params.recursion_chi
        blocks = _dump_tree(tree)
        labels: List[int] = []
        for j in range(tree.params.capacity_n):
            labels.extend(unpack_leaf(blocks[j].payload, o) for o in range(chi))
        return labels[: self.params.capacity_n]


def _dump_tree(tree: TreeOram) -> Dict[int, OramBlock]:
    out: Dict[int, OramBlock] = {}
    for i in range(tree.store.num_buckets):
        for b in tree.cipher.decrypt_bucket(i, tree.store.bucket(i)):
            if b is not None:
                out[b.bid] = b
    for b in tree.stash.blocks():
        out[b.bid] = b
    return out
