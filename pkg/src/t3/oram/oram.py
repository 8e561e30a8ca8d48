"""Recursive tree ORAM with a read-only "read-once" path over snapshots."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

from t3.enclave.oblivious import TouchCounter, oblivious_select
from t3.errors import IntegrityViolation, InvalidParams
from t3.oram.block import OramBlock, derive_key
from t3.oram.params import OramParams, Strategy
from t3.oram.posmap import PositionMap, block_ids, unpack_leaf
from t3.oram.storage import TreeStore, path_indices
from t3.oram.tree import Stash, TreeOram

READ = "read"
WRITE = "write"


def _bid(b: OramBlock) -> int:
    return b.bid


def tree_filename(prefix: str, level: int) -> str:
    return f"{prefix}.tree" if level == 0 else f"{prefix}.pm{level}.tree"


class Oram:
    """Data tree plus recursive position map; single writer.

    ``seed`` makes leaf sampling reproducible (tests, harness runs); without
    it leaves come from the OS CSPRNG.  Nonces are always OS randomness.
    """

    def __init__(self, params: OramParams, seed: Optional[int] = None,
                 key: Optional[bytes] = None, *, _build: bool = True):
        self.params = params
        self.rng: random.Random = random.Random(seed) if seed is not None else random.SystemRandom()
        self.key = key if key is not None else os.urandom(32)
        self.trace: Optional[List[Tuple[int, int]]] = None
        if _build:
            self.posmap = PositionMap.create(params, self.key, self.rng)
            self.data = TreeOram.create(params, 0, derive_key(self.key, b"0"))

    @property
    def trees(self) -> List[TreeOram]:
        return [self.data] + self.posmap.trees

    @property
    def height(self) -> int:
        return self.params.height

    def access(self, op: str, bid: int, data: Optional[bytes] = None) -> bytes:
        """Standard read/write access; returns the payload before any write."""
        if op == WRITE:
            if data is None:
                raise ValueError("write needs data")
            return self.update(bid, lambda _old: data)
        if op != READ:
            raise ValueError(f"unknown op {op!r}")
        return self.update(bid, None)

    def read(self, bid: int) -> bytes:
        return self.access(READ, bid)

    def write(self, bid: int, data: bytes) -> bytes:
        return self.access(WRITE, bid, data)

    def update(self, bid: int, fn: Optional[Callable[[bytes], bytes]]) -> bytes:
        """One access that rewrites the payload with ``fn(old)`` in place."""
        if not 0 <= bid < self.params.capacity_n:
            raise IndexError(f"bid {bid} outside [0, {self.params.capacity_n})")
        new_leaf = self.rng.randrange(self.params.capacity_n)
        leaf = self.posmap.remap(bid, new_leaf)
        if self.trace is not None:
            self.trace.append((0, leaf))
        return self.data.access(bid, leaf, new_leaf, fn)

    def stash_occupancy(self) -> List[int]:
        return [t.stash.occupancy for t in self.trees]

    def stash_peak(self) -> List[int]:
        return [t.stash.peak for t in self.trees]

    def touches(self) -> int:
        return sum(t.touches.count for t in self.trees)

    # -- snapshots ----------------------------------------------------------

    def snapshot(self, copy: bool = True) -> "OramSnapshot":
        """Frozen view for read-once access.  ``copy=False`` shares storage and
        is only safe while no writer touches this ORAM."""
        trees = tuple(t.copy(readonly=True) if copy else t for t in self.trees)
        return OramSnapshot(self.params, trees, tuple(self.posmap.top))

    @classmethod
    def from_snapshot(cls, snap: "OramSnapshot", key: bytes,
                      seed: Optional[int] = None) -> "Oram":
        o = cls(snap.params, seed=seed, key=key, _build=False)
        trees = [t.copy(readonly=False) for t in snap.trees]
        o.data = trees[0]
        o.posmap = PositionMap(snap.params, trees[1:], list(snap.top), o.rng)
        return o

    # -- persistence --------------------------------------------------------

    def save(self, directory: Union[str, Path], prefix: str) -> None:
        for level, t in enumerate(self.trees):
            t.store.save(Path(directory) / tree_filename(prefix, level))

    def state(self) -> dict:
        """Enclave-private metadata (keys, roots, stashes, top map)."""
        return {
            "params": _params_dict(self.params),
            "key": self.key.hex(),
            "top": list(self.posmap.top),
            "trees": [_tree_state(t) for t in self.trees],
        }

    @classmethod
    def load(cls, directory: Union[str, Path], prefix: str, state: dict,
             seed: Optional[int] = None, readonly: bool = False) -> "Oram":
        params = _params_from(state["params"])
        o = cls(params, seed=seed, key=bytes.fromhex(state["key"]), _build=False)
        trees = [_tree_from(params, level, o.key, ts,
                            TreeStore.load(Path(directory) / tree_filename(prefix, level), readonly))
                 for level, ts in enumerate(state["trees"])]
        o.data = trees[0]
        o.posmap = PositionMap(params, trees[1:], list(state["top"]), o.rng)
        return o


@dataclass(frozen=True)
class OramSnapshot:
    """Immutable (trees, stashes, top map) triple produced by one sync."""

    params: OramParams
    trees: Tuple[TreeOram, ...]
    top: Tuple[int, ...]

    def read_once(self, bid: int, counter: Optional[TouchCounter] = None,
                  trace: Optional[List[Tuple[int, int]]] = None) -> bytes:
        return read_once(self, bid, counter, trace)

    def save(self, directory: Union[str, Path], prefix: str) -> None:
        for level, t in enumerate(self.trees):
            t.store.save(Path(directory) / tree_filename(prefix, level))

    def state(self, key: bytes) -> dict:
        return {
            "params": _params_dict(self.params),
            "key": key.hex(),
            "top": list(self.top),
            "trees": [_tree_state(t) for t in self.trees],
        }

    @classmethod
    def load(cls, directory: Union[str, Path], prefix: str, state: dict) -> "OramSnapshot":
        return Oram.load(directory, prefix, state, readonly=True).snapshot(copy=False)


def read_once(snap: OramSnapshot, bid: int, counter: Optional[TouchCounter] = None,
              trace: Optional[List[Tuple[int, int]]] = None) -> bytes:
    """Fetch ``bid`` from a snapshot without eviction or any write.

    Walks the position-map chain top-down with path reads, selecting from the
    union of each fetched path and a scratch copy of that tree's stash.
    ``trace`` receives ``(level, leaf)`` for each path read.
    """
    params = snap.params
    if not 0 <= bid < params.capacity_n:
        raise IndexError(f"bid {bid} outside [0, {params.capacity_n})")
    chi = params.recursion_chi
    k = len(snap.trees) - 1
    ids = block_ids(bid, chi, k)
    leaf = snap.top[ids[k]]
    for level in range(k, -1, -1):
        tree = snap.trees[level]
        if trace is not None:
            trace.append((level, leaf))
        raws = tree.store.read_path(leaf, tree.root)
        dec = tree.cipher.decrypt_bucket
        scratch: List[Optional[OramBlock]] = []
        for i, raw in zip(path_indices(leaf, tree.params.capacity_n), raws):
            scratch.extend(dec(i, raw))
        scratch.extend(tree.stash.slots)
        block = oblivious_select(scratch, ids[level], _bid, None, counter)
        if level == 0:
            return block.payload if block is not None else bytes(params.payload_bytes)
        if block is None:
            raise IntegrityViolation(f"position map level {level} lost block {ids[level]}")
        leaf = unpack_leaf(block.payload, ids[level - 1] % chi)
    raise AssertionError("unreachable")


def _params_dict(p: OramParams) -> dict:
    return {"capacity_n": p.capacity_n, "bucket_z": p.bucket_z,
            "payload_bytes": p.payload_bytes, "strategy": p.strategy.value,
            "recursion_chi": p.recursion_chi, "max_stash": p.max_stash,
            "top_map_bytes": p.top_map_bytes}


def _params_from(d: dict) -> OramParams:
    return OramParams(**{**d, "strategy": Strategy.parse(d["strategy"])})


def _tree_state(t: TreeOram) -> dict:
    return {
        "root": t.root.hex(),
        "evict_counter": t.evict_counter,
        "stash": [[b.bid, b.leaf, b.payload.hex()] for b in t.stash.blocks()],
        "max_stash": t.stash.capacity,
    }


def _tree_from(params: OramParams, level: int, master: bytes, ts: dict,
               store: TreeStore) -> TreeOram:
    p = params if level == 0 else params.for_map_level(store.n)
    if p.max_stash != ts["max_stash"]:
        raise InvalidParams("stash size in state does not match params")
    stash = Stash(ts["max_stash"], [OramBlock(b, l, bytes.fromhex(h)) for b, l, h in ts["stash"]])
    return TreeOram(p, level, derive_key(master, b"%d" % level), store,
                    bytes.fromhex(ts["root"]), stash, ts["evict_counter"])
