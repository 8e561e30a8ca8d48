import random

import pytest
from hypothesis import given, settings, strategies as st

from t3.enclave.oblivious import TouchCounter
from t3.errors import IntegrityViolation, InvalidParams, StashOverflow
from t3.harness.oracles import OracleKV
from t3.oram.block import OramBlock, SlotCipher
from t3.oram.eviction import circuit_evict, deepest_depth, path_evict, reverse_lex_leaf
from t3.oram.oram import Oram, OramSnapshot, read_once
from t3.oram.params import OramParams, Strategy
from t3.oram.posmap import block_ids, pack_leaves, unpack_leaf
from t3.oram.storage import TreeStore, path_indices

BOTH = [Strategy.PATH, Strategy.CIRCUIT]


def params(n=64, strategy=Strategy.PATH, **kw):
    z = 4 if strategy is Strategy.PATH else 2
    return OramParams(n, bucket_z=z, payload_bytes=16, strategy=strategy, **kw)


def run_against_oracle(oram, ops, rng):
    oracle = OracleKV(oram.params.capacity_n, oram.params.payload_bytes)
    for _ in range(ops):
        bid = rng.randrange(oram.params.capacity_n)
        if rng.random() < 0.5:
            data = rng.randbytes(oram.params.payload_bytes)
            assert oram.write(bid, data) == oracle.access("write", bid, data)
        else:
            assert oram.read(bid) == oracle.access("read", bid)
    return oracle


# -- params ---------------------------------------------------------------------

def test_params_validation():
    with pytest.raises(InvalidParams):
        OramParams(100)
    with pytest.raises(InvalidParams):
        OramParams(64, bucket_z=3, strategy="path")
    with pytest.raises(InvalidParams):
        OramParams(64, bucket_z=1, strategy="circuit")
    assert OramParams(64, bucket_z=2, strategy="circuit").max_stash == 2 * 6 * 2
    assert OramParams(1 << 14).max_stash == 2 * 14 * 4


def test_recursion_depth_follows_map_budget():
    # 2^20 leaves * 4 B = 4 MB; one level of chi=1024 brings it to 4 KB <= 8 KB
    p = OramParams(1 << 20, recursion_chi=1024)
    assert p.map_tree_sizes() == [1024]
    assert 1 + len(p.map_tree_sizes()) == 2
    assert OramParams(1 << 11).map_tree_sizes() == []
    assert OramParams(1 << 14, recursion_chi=128).map_tree_sizes() == [128]


def test_block_ids_and_leaf_packing():
    assert block_ids(1000, 128, 2) == [1000, 7, 0]
    leaves = list(range(100, 228))
    payload = pack_leaves(leaves, 128)
    assert len(payload) == 512
    assert unpack_leaf(payload, 5) == 105


# -- storage / crypto --------------------------------------------------------------

def test_path_indices_heap_layout():
    assert path_indices(0, 8) == [0, 1, 3, 7]
    assert path_indices(7, 8) == [0, 2, 6, 14]


def test_slot_encryption_roundtrip_and_position_binding():
    c = SlotCipher(bytes(32), 0, 2, 8)
    raw = c.encrypt_bucket(3, [OramBlock(5, 1, b"abcdefgh")])
    out = c.decrypt_bucket(3, raw)
    assert out[0].bid == 5 and out[0].payload == b"abcdefgh" and out[1] is None
    with pytest.raises(IntegrityViolation):
        c.decrypt_bucket(4, raw)  # moved to another bucket


def test_tamper_detected_on_read():
    o = Oram(params(), seed=1)
    o.write(3, bytes(range(16)))
    buf = o.data.store.buf
    buf[100] ^= 1
    with pytest.raises(IntegrityViolation):
        for b in range(64):
            o.read(b)


def test_merkle_rejects_rollback_of_a_bucket():
    o = Oram(params(), seed=2)
    old = o.data.store.bucket(0)
    o.write(1, b"x" * 16)
    o.data.store.put_bucket(0, old)  # authentic but stale ciphertext
    with pytest.raises(IntegrityViolation):
        o.read(1)


# -- eviction ----------------------------------------------------------------------

def test_reverse_lexicographic_order():
    assert [reverse_lex_leaf(i, 3) for i in range(8)] == [0, 4, 2, 6, 1, 5, 3, 7]


def test_path_evict_places_blocks_deepest_first():
    blocks = [OramBlock(i, leaf, b"") for i, leaf in enumerate([0, 0, 1, 4, 7])]
    buckets, rest = path_evict(blocks, 0, 3, 2)
    assert not rest
    for d, bucket in enumerate(buckets):
        for b in bucket:
            assert deepest_depth(b.leaf, 0, 3) >= d


def test_circuit_evict_keeps_blocks_on_their_paths():
    rng = random.Random(4)
    for _ in range(200):
        h, z = 4, 2
        stash = [OramBlock(i, rng.randrange(16), b"") for i in range(rng.randrange(6))]
        leaf = rng.randrange(16)
        path = [[] for _ in range(h + 1)]
        buckets, rest = circuit_evict(stash, path, leaf, h, z)
        assert len(rest) + sum(map(len, buckets)) == len(stash)
        for d, bucket in enumerate(buckets):
            assert len(bucket) <= z
            for b in bucket:
                assert deepest_depth(b.leaf, leaf, h) >= d


# -- access semantics --------------------------------------------------------------

@pytest.mark.parametrize("strategy", BOTH)
def test_oracle_equivalence_small(strategy):
    o = Oram(params(64, strategy), seed=7)
    run_against_oracle(o, 2000, random.Random(7))


@pytest.mark.parametrize("strategy", BOTH)
def test_recursive_posmap_equivalence(strategy):
    p = params(1 << 11, strategy, recursion_chi=16, top_map_bytes=64)
    assert len(p.map_tree_sizes()) >= 2
    o = Oram(p, seed=3)
    run_against_oracle(o, 600, random.Random(3))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 31), st.binary(min_size=16, max_size=16)),
                max_size=60),
       st.sampled_from(BOTH))
def test_property_matches_dictionary(ops, strategy):
    o = Oram(params(32, strategy), seed=0)
    ref = OracleKV(32, 16)
    for write, bid, data in ops:
        op = "write" if write else "read"
        assert o.access(op, bid, data if write else None) == ref.access(op, bid, data)


def test_unwritten_block_reads_zero():
    o = Oram(params(), seed=1)
    assert o.read(10) == bytes(16)


def test_stash_overflow_raised_with_tiny_stash():
    o = Oram(params(64, max_stash=1), seed=5)
    with pytest.raises(StashOverflow):
        for i in range(5000):
            o.write(i % 64, bytes(16))


def test_update_applies_function_in_one_access():
    o = Oram(params(), seed=1)
    o.write(4, b"a" * 16)
    o.trace = []
    old = o.update(4, lambda p: p[::-1].upper())
    assert old == b"a" * 16 and o.read(4) == b"A" * 16
    assert len(o.trace) == 2


def test_remap_changes_leaf():
    o = Oram(params(1 << 10), seed=9)
    leaves = set()
    for _ in range(20):
        o.read(5)
        leaves.add(o.posmap.lookup(5))
    assert len(leaves) > 1


# -- read-once over snapshots ---------------------------------------------------------

@pytest.mark.parametrize("strategy", BOTH)
def test_read_once_agrees_with_access_and_never_writes(strategy):
    o = Oram(params(1 << 10, strategy, recursion_chi=8, top_map_bytes=64), seed=11)
    rng = random.Random(11)
    ref = run_against_oracle(o, 500, rng)
    snap = o.snapshot()
    before = [bytes(t.store.buf) for t in snap.trees]
    for bid in rng.sample(range(1 << 10), 100):
        assert read_once(snap, bid) == ref.access("read", bid)
    assert [bytes(t.store.buf) for t in snap.trees] == before


def test_read_once_touch_count_is_constant():
    o = Oram(params(256), seed=2)
    o.write(1, b"q" * 16)
    snap = o.snapshot()
    counts = set()
    for bid in (1, 2, 200):
        c = TouchCounter()
        read_once(snap, bid, c)
        counts.add(c.count)
    assert len(counts) == 1


def test_snapshot_roundtrip_on_disk(tmp_path):
    o = Oram(params(128), seed=4)
    for i in range(20):
        o.write(i, bytes([i]) * 16)
    o.save(tmp_path, "orig")
    o2 = Oram.load(tmp_path, "orig", o.state(), seed=5)
    for i in range(20):
        assert o2.read(i) == bytes([i]) * 16
    snap = o.snapshot()
    snap.save(tmp_path, "snap")
    s2 = OramSnapshot.load(tmp_path, "snap", snap.state(o.key))
    assert read_once(s2, 7) == bytes([7]) * 16
    assert (tmp_path / "snap.tree").read_bytes() == bytes(snap.trees[0].store.buf)


def test_tree_store_rejects_bad_magic(tmp_path):
    store = TreeStore.from_buckets(2, 1, 4, [b"abcd"] * 3)
    store.save(tmp_path / "t.tree")
    data = bytearray((tmp_path / "t.tree").read_bytes())
    data[0] ^= 0xFF
    (tmp_path / "t.tree").write_bytes(data)
    with pytest.raises(IntegrityViolation):
        TreeStore.load(tmp_path / "t.tree")
