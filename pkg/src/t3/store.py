"""Two-tree store: read-once serving from a snapshot, writes and evictions on
the original, and a per-block synchronization barrier.

Roles are threads in one process.  Readers only ever touch the immutable
snapshot; the single writer owns the original ORAM and drains the queue of
bids served since the last sync (each drained bid gets an ordinary access,
which remaps it to a fresh leaf).  ``apply_block`` ends in the Syncing
phase: new readers park, in-flight readers finish, the queue is drained and
the snapshot is replaced by a copy of the original.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Deque, List, Optional, Set, Tuple, Union

from t3.chain.headerchain import HeaderChain
from t3.chain.merkle import verify_block_body
from t3.chain.prune import UpdateBatch, prune
from t3.chain.tx import Block
from t3.enclave.oblivious import TouchCounter
from t3.enclave.ownership import OwnershipProof, verify_ownership
from t3.enclave.sealing import sealing_key, seal_json, unseal_json
from t3.errors import (BadMerkleRoot, BadProof, BlockFull, DuplicateRead, InvalidParams,
                       MalformedPayload, QueueNotEmpty, Unavailable)
from t3.oram.oram import Oram, OramSnapshot, read_once
from t3.oram.params import OramParams, Strategy, is_pow2
from t3.utxo.mapping import oblock_map, oblock_map_multi, route_slot
from t3.utxo.records import RECORD_BYTES, BlockLayout, UtxoRecord

log = logging.getLogger(__name__)

STATE_FILE = "state.key"
HEADERS_FILE = "headers.dat"
ORIGINAL = "original"
SNAPSHOT = "snapshot"


class Phase(enum.Enum):
    SERVING = "serving"
    UPDATING = "updating"
    SYNCING = "syncing"


@dataclass
class StoreConfig:
    n: int = 1 << 12
    z: int = 4
    strategy: str = "path"
    capacity: int = 8        # records per ORAM block
    max_out: int = 2         # records per response
    delta: int = 1           # blocks per address used by the writer
    delta_max: int = 16
    client_delta: bool = False
    reject_duplicates: bool = False
    park_limit: int = 10_000
    require_signature: bool = False
    recursion_chi: int = 128

    def __post_init__(self) -> None:
        if not is_pow2(self.n):
            raise InvalidParams("n must be a power of two")
        if self.max_out < 1 or self.capacity < 1:
            raise InvalidParams("max_out and capacity must be positive")
        if not 1 <= self.delta <= self.delta_max:
            raise InvalidParams("delta must be in [1, delta_max]")
        Strategy.parse(self.strategy)

    @property
    def payload_bytes(self) -> int:
        return self.capacity * RECORD_BYTES

    def oram_params(self) -> OramParams:
        return OramParams(self.n, bucket_z=self.z, payload_bytes=self.payload_bytes,
                          strategy=Strategy.parse(self.strategy),
                          recursion_chi=self.recursion_chi)

    @classmethod
    def from_dict(cls, d: dict) -> "StoreConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class ReadResponse:
    records: Tuple[UtxoRecord, ...]
    interval: int
    height: int = -1

    def real(self) -> List[UtxoRecord]:
        return [r for r in self.records if not r.is_dummy]


@dataclass
class UpdateSummary:
    height: int
    creates: int = 0
    spends: int = 0
    missing_spends: int = 0
    block_full: int = 0
    skipped_outputs: int = 0
    skipped_inputs: int = 0
    evictions: int = 0
    interval: int = 0


@dataclass
class StoreStats:
    reads: int = 0
    parked_total: int = 0
    rejected_unavailable: int = 0
    evictions: int = 0
    block_full: int = 0
    sync_seconds: List[float] = field(default_factory=list)


class TwoTreeStore:
    def __init__(self, config: StoreConfig, oram: Oram, k_b: bytes,
                 chain: Optional[HeaderChain] = None, interval: int = 0,
                 snapshot: Optional[OramSnapshot] = None, snapshot_height: Optional[int] = None):
        self.config = config
        self.oram = oram
        self.k_b = k_b
        self.chain = chain if chain is not None else HeaderChain()
        self.interval = interval
        # chain height whose state the snapshot reflects
        self.snapshot_height = self.chain.height if snapshot_height is None else snapshot_height
        self._applied_height = self.snapshot_height
        self.snapshot = snapshot if snapshot is not None else oram.snapshot(copy=True)
        self.phase = Phase.SERVING
        self.stats = StoreStats()
        # every bid served by read_once since the last sync, in order
        self.served: List[int] = []
        self.pending: Deque[int] = deque()
        self._seen: Set[int] = set()
        self._active = 0
        self._parked = 0
        self._cv = threading.Condition()
        self._wlock = threading.RLock()
        self._evictor: Optional[threading.Thread] = None
        self._stop = threading.Event()
        # (interval, bid, level, leaf) per path read, when enabled
        self.trace: Optional[List[Tuple[int, int, int, int]]] = None

    @classmethod
    def create(cls, config: StoreConfig, k_b: Optional[bytes] = None,
               seed: Optional[int] = None, oram_key: Optional[bytes] = None) -> "TwoTreeStore":
        oram = Oram(config.oram_params(), seed=seed, key=oram_key)
        if k_b is None:
            # a seeded store is for tests: its address key follows the seed too
            k_b = (hashlib.sha256(b"t3-kb" + seed.to_bytes(8, "big", signed=True)).digest()
                   if seed is not None else os.urandom(32))
        return cls(config, oram, k_b)

    # -- mapping -------------------------------------------------------------

    def bids_for(self, pkh: bytes, delta: Optional[int] = None) -> List[int]:
        cfg = self.config
        if cfg.delta == 1 and not cfg.client_delta:
            return [oblock_map(pkh, self.k_b, cfg.n)]
        d = delta if (cfg.client_delta and delta is not None) else cfg.delta
        return oblock_map_multi(pkh, self.k_b, d, cfg.n, cfg.delta_max)

    def bid_for_output(self, pkh: bytes, txid: bytes, vout: int) -> int:
        cfg = self.config
        if cfg.delta == 1 and not cfg.client_delta:
            return oblock_map(pkh, self.k_b, cfg.n)
        bids = oblock_map_multi(pkh, self.k_b, cfg.delta, cfg.n, cfg.delta_max)
        return bids[route_slot(pkh, txid, vout, self.k_b, cfg.delta)]

    # -- reading role --------------------------------------------------------

    def serve_read(self, pkh: bytes, proof: OwnershipProof, session_id: bytes,
                   delta: Optional[int] = None,
                   counter: Optional[TouchCounter] = None) -> ReadResponse:
        if not verify_ownership(proof, pkh, session_id, self.config.require_signature):
            raise BadProof("ownership proof does not open this address")
        bids = self.bids_for(pkh, delta)
        with self._cv:
            if self.phase is Phase.SYNCING:
                if self._parked >= self.config.park_limit:
                    self.stats.rejected_unavailable += 1
                    raise Unavailable("store is synchronizing and the park queue is full")
                self._parked += 1
                self.stats.parked_total += 1
                try:
                    while self.phase is Phase.SYNCING:
                        self._cv.wait()
                finally:
                    self._parked -= 1
            if self.config.reject_duplicates and any(b in self._seen for b in bids):
                raise DuplicateRead("block already read in this interval")
            self._seen.update(bids)
            self._active += 1
            snap, interval, height = self.snapshot, self.interval, self.snapshot_height
        ok = False
        try:
            cap = self.config.capacity
            slots: list = []
            for bid in bids:
                trace: Optional[list] = [] if self.trace is not None else None
                payload = read_once(snap, bid, counter, trace)
                if trace is not None:
                    self.trace.extend((interval, bid, lv, leaf) for lv, leaf in trace)
                slots.extend(BlockLayout.unpack(payload, cap).slots)
            records = BlockLayout(len(slots), slots).extract(pkh, self.config.max_out)
            ok = True
        finally:
            with self._cv:
                self._active -= 1
                if ok:
                    self.served.extend(bids)
                    self.pending.extend(bids)
                    self.stats.reads += 1
                self._cv.notify_all()
        return ReadResponse(tuple(records), interval, height)

    # -- writing role --------------------------------------------------------

    def drain_evictions(self) -> int:
        """Give every queued bid a standard access on the original tree."""
        n = 0
        with self._wlock:
            while True:
                with self._cv:
                    if not self.pending:
                        break
                    bid = self.pending.popleft()
                self.oram.read(bid)
                n += 1
        self.stats.evictions += n
        return n

    def start_evictor(self, poll: float = 0.05) -> None:
        """Drain the queue continuously in the background while serving."""
        if self._evictor is not None:
            return
        self._stop.clear()

        def run() -> None:
            while not self._stop.is_set():
                with self._cv:
                    if not self.pending:
                        self._cv.wait(poll)
                        continue
                self.drain_evictions()

        self._evictor = threading.Thread(target=run, name="t3-evictor", daemon=True)
        self._evictor.start()

    def stop_evictor(self) -> None:
        if self._evictor is None:
            return
        self._stop.set()
        with self._cv:
            self._cv.notify_all()
        self._evictor.join()
        self._evictor = None

    def apply_block(self, batch: UpdateBatch, sync: bool = True) -> UpdateSummary:
        """Apply spends then creates on the original tree, then run the sync
        barrier.  ``sync=False`` skips the barrier (bulk initialization)."""
        with self._cv:
            if self.phase is not Phase.SERVING:
                raise InvalidParams(f"apply_block during {self.phase.value}")
            self.phase = Phase.UPDATING
        summary = UpdateSummary(batch.height, skipped_outputs=batch.skipped_outputs,
                                skipped_inputs=batch.skipped_inputs)
        cap = self.config.capacity
        try:
            with self._wlock:
                for pkh, txid, vout in batch.spends:
                    hit = [False]

                    def spend(p: bytes, txid=txid, vout=vout, hit=hit) -> bytes:
                        layout = BlockLayout.unpack(p, cap)
                        hit[0] = layout.remove(txid, vout)
                        return layout.pack()

                    self.oram.update(self.bid_for_output(pkh, txid, vout), spend)
                    if hit[0]:
                        summary.spends += 1
                    else:
                        summary.missing_spends += 1
                for rec in batch.creates:
                    err: List[Exception] = []

                    def create(p: bytes, rec=rec, err=err) -> bytes:
                        # never raise mid-access: the path is already open
                        layout = BlockLayout.unpack(p, cap)
                        try:
                            layout.insert(rec)
                        except (BlockFull, MalformedPayload) as e:
                            err.append(e)
                            return p
                        return layout.pack()

                    self.oram.update(self.bid_for_output(rec.pkh, rec.txid, rec.vout), create)
                    if not err:
                        summary.creates += 1
                    elif isinstance(err[0], BlockFull):
                        summary.block_full += 1
                        log.warning("block full: dropped %s:%d", rec.txid.hex(), rec.vout)
        except BaseException:
            with self._cv:
                self.phase = Phase.SERVING
                self._cv.notify_all()
            raise
        self.stats.block_full += summary.block_full
        self._applied_height = batch.height
        if sync:
            summary.evictions = self.synchronize()
        else:
            with self._cv:
                self.phase = Phase.SERVING
                self._cv.notify_all()
        summary.interval = self.interval
        return summary

    def synchronize(self) -> int:
        """Syncing barrier: park new readers, wait for in-flight ones, drain
        the eviction queue, copy original to snapshot, resume."""
        t0 = time.perf_counter()
        with self._cv:
            self.phase = Phase.SYNCING
            while self._active:
                self._cv.wait()
        try:
            n = self.drain_evictions()
            self.sync()
        finally:
            with self._cv:
                self.phase = Phase.SERVING
                self._cv.notify_all()
        self.stats.sync_seconds.append(time.perf_counter() - t0)
        return n

    def sync(self) -> int:
        """Replace the snapshot with a copy of the original; new interval."""
        with self._wlock:
            with self._cv:
                if self.pending:
                    raise QueueNotEmpty(f"{len(self.pending)} evictions still queued")
            snap = self.oram.snapshot(copy=True)
            with self._cv:
                self.snapshot = snap
                self.snapshot_height = self._applied_height
                self.interval += 1
                self.served = []
                self._seen = set()
        return self.interval

    def ingest_block(self, block: Block, sync: bool = True) -> UpdateSummary:
        """Verify (link, PoW, Merkle root), prune, apply, then extend the chain.
        Nothing is written if verification fails."""
        self.chain.verify_header(block.header)
        if not verify_block_body(block):
            raise BadMerkleRoot("transactions do not hash to the header's merkle root")
        height = self.chain.height + 1
        if height == 0:
            # the genesis coinbase is unspendable; only its header is kept
            summary = UpdateSummary(0, interval=self.interval)
            self._applied_height = 0
        else:
            summary = self.apply_block(prune(block, height), sync)
        self.chain.append(block.header)
        return summary

    # -- persistence -----------------------------------------------------------

    def save(self, state_dir: Union[str, Path], root_key: bytes, measurement: bytes) -> None:
        d = Path(state_dir)
        d.mkdir(parents=True, exist_ok=True)
        with self._wlock:
            self.drain_evictions()
            self.oram.save(d, ORIGINAL)
            with self._cv:
                snap, interval = self.snapshot, self.interval
            snap.save(d, SNAPSHOT)
            state = {
                "config": asdict(self.config),
                "k_b": self.k_b.hex(),
                "interval": interval,
                "snapshot_height": self.snapshot_height,
                "original": self.oram.state(),
                "snapshot": snap.state(self.oram.key),
            }
        skey = sealing_key(root_key, measurement)
        self.chain.save(d / HEADERS_FILE, headers_key(skey))
        tmp = d / (STATE_FILE + ".tmp")
        tmp.write_bytes(seal_json(skey, state, b"t3-state"))
        os.replace(tmp, d / STATE_FILE)

    @classmethod
    def load(cls, state_dir: Union[str, Path], root_key: bytes, measurement: bytes,
             seed: Optional[int] = None) -> "TwoTreeStore":
        d = Path(state_dir)
        skey = sealing_key(root_key, measurement)
        state = unseal_json(skey, (d / STATE_FILE).read_bytes(), b"t3-state")
        config = StoreConfig.from_dict(state["config"])
        oram = Oram.load(d, ORIGINAL, state["original"], seed=seed)
        snap = OramSnapshot.load(d, SNAPSHOT, state["snapshot"])
        chain = HeaderChain.load(d / HEADERS_FILE, headers_key(skey))
        return cls(config, oram, bytes.fromhex(state["k_b"]), chain, state["interval"], snap,
                   state.get("snapshot_height"))


def headers_key(seal_key: bytes) -> bytes:
    return hmac.new(seal_key, b"t3-headers-key", hashlib.sha256).digest()


def read_config(path: Union[str, Path]) -> dict:
    return json.loads(Path(path).read_text())
