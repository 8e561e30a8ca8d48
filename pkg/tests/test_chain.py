import hashlib
import random
from dataclasses import replace

import pytest

from t3.chain.header import EASY_BITS, BlockHeader, bits_to_target, mine, target_to_bits
from t3.chain.headerchain import HeaderChain
from t3.chain.merkle import merkle_root, verify_block_body
from t3.chain.prune import prune
from t3.chain.source import FileChainSource
from t3.chain.tx import (Block, Reader, Tx, TxIn, TxOut, classify_output, op_return_script,
                         p2pkh_script, p2sh_script, push, script_pushes, spender_hash)
from t3.enclave.ownership import hash160
from t3.errors import BadEncoding, BadLink, BadMerkleRoot, BadPow, ChainTampered, NonceExhausted

GENESIS_HEADER = bytes.fromhex(
    "0100000000000000000000000000000000000000000000000000000000000000000000003ba3edfd7a7b12b2"
    "7ac72c3e67768f617fc81bc3888a51323a9fb8aa4b1e5e4a29ab5f49ffff001d1dac2b7c")
GENESIS_HASH = "000000000019d6689c085ae165831e934ff763ae46a2a6c172b3f1b60a8ce26f"


def d256(b):
    return hashlib.sha256(hashlib.sha256(b).digest()).digest()


def merkle_oracle(ids):
    # straightforward recursive definition with explicit duplication
    if len(ids) == 1:
        return ids[0]
    if len(ids) % 2:
        ids = ids + [ids[-1]]
    return merkle_oracle([d256(ids[i] + ids[i + 1]) for i in range(0, len(ids), 2)])


def coinbase(tag: bytes, outs):
    return Tx(1, [TxIn(bytes(32), 0xFFFFFFFF, push(tag))], outs)


def make_block(prev: bytes, txs, nbits=EASY_BITS, ts=1_600_000_000) -> Block:
    root = merkle_root([t.txid for t in txs])
    return Block(mine(BlockHeader(1, prev, root, ts, nbits, 0)), txs)


def pubkey(i):
    return bytes([2]) + hashlib.sha256(b"k%d" % i).digest()


# -- headers and PoW ----------------------------------------------------------------

def test_mainnet_genesis_header_vector():
    h = BlockHeader.parse(GENESIS_HEADER)
    assert h.serialize() == GENESIS_HEADER
    assert h.hash_hex == GENESIS_HASH
    assert h.pow_ok()
    assert bits_to_target(0x1D00FFFF) == 0xFFFF << 208


def test_compact_target_roundtrip():
    for bits in (0x1D00FFFF, 0x1B0404CB, EASY_BITS, 0x03123456):
        assert target_to_bits(bits_to_target(bits)) == bits
    with pytest.raises(BadEncoding):
        bits_to_target(0x04923456)  # sign bit


def test_header_must_be_80_bytes():
    with pytest.raises(BadEncoding):
        BlockHeader.parse(GENESIS_HEADER[:79])


def test_mined_header_accepted_and_broken_variants_rejected():
    chain = HeaderChain()
    g = make_block(bytes(32), [coinbase(b"g", [])])
    chain.accept_block(g)
    b1 = make_block(g.header.hash(), [coinbase(b"1", [])])
    chain.verify_header(b1.header)
    bad_pow = b1.header
    while bad_pow.pow_ok():
        bad_pow = replace(bad_pow, nonce=bad_pow.nonce + 1)
    with pytest.raises(BadPow):
        chain.verify_header(bad_pow)
    with pytest.raises(BadLink):
        chain.verify_header(mine(replace(b1.header, prev_hash=bytes(32))))
    with pytest.raises(BadEncoding):
        chain.verify_header(GENESIS_HEADER)
    assert chain.height == 0


def test_nonce_plus_one_breaks_real_difficulty_pow():
    h = BlockHeader.parse(GENESIS_HEADER)
    with pytest.raises(BadPow):
        HeaderChain().verify_header(replace(h, nonce=h.nonce + 1))


def test_easy_target_mines_within_a_few_nonces():
    rng = random.Random(5)
    nonces = [mine(BlockHeader(1, bytes(32), rng.randbytes(32), 0, EASY_BITS, 0)).nonce
              for _ in range(100)]
    # success probability per nonce is 1/2, so nonce 0 wins about half the time
    assert 25 <= nonces.count(0) <= 75
    assert max(nonces) < 64


def test_expected_tries_geometric():
    rng = random.Random(6)
    bits = target_to_bits(1 << 248)
    expected = (1 << 256) / bits_to_target(bits)
    tries = [mine(BlockHeader(1, bytes(32), rng.randbytes(32), 0, bits, 0)).nonce + 1
             for _ in range(100)]
    mean = sum(tries) / len(tries)
    assert expected / 3 <= mean <= expected * 3


def test_nonce_space_exhausted():
    hard = BlockHeader(1, bytes(32), bytes(32), 0, 0x1D00FFFF, 0)
    with pytest.raises(NonceExhausted):
        mine(hard, max_nonce=50)


# -- merkle ---------------------------------------------------------------------------

def test_single_tx_root_is_txid():
    t = coinbase(b"x", [])
    assert merkle_root([t.txid]) == t.txid


@pytest.mark.parametrize("n", [2, 3, 4, 5, 7, 8, 13])
def test_root_matches_recursive_oracle(n):
    ids = [hashlib.sha256(bytes([i])).digest() for i in range(n)]
    assert merkle_root(ids) == merkle_oracle(ids)


def test_empty_list_rejected():
    with pytest.raises(BadEncoding):
        merkle_root([])


def test_tampered_txid_fails_body_check():
    blk = make_block(bytes(32), [coinbase(b"a", []), coinbase(b"b", [])])
    assert verify_block_body(blk)
    blk.txs[1] = coinbase(b"c", [])
    assert not verify_block_body(blk)
    chain = HeaderChain()
    with pytest.raises(BadMerkleRoot):
        chain.accept_block(blk)
    assert len(chain) == 0


# -- transactions and scripts ---------------------------------------------------------------

def test_tx_roundtrip_legacy_and_segwit():
    legacy = Tx(2, [TxIn(b"\x11" * 32, 3, push(b"sig") + push(pubkey(1)), 0xFFFFFFFE)],
                [TxOut(5000, p2pkh_script(b"\x22" * 20))], 99)
    seg = Tx(2, [TxIn(b"\x11" * 32, 0, b"", witness=[b"w1", b"w2"])],
             [TxOut(1, p2sh_script(b"\x33" * 20))])
    for tx in (legacy, seg):
        raw = tx.serialize()
        back = Tx.parse(Reader(raw))
        assert back.serialize() == raw and back.txid == tx.txid
    assert seg.serialize()[4:6] == b"\x00\x01"
    assert seg.txid == d256(seg.serialize(witness=False))


def test_block_parse_rejects_truncation_and_trailing_bytes():
    blk = make_block(bytes(32), [coinbase(b"a", [TxOut(1, p2pkh_script(b"\x01" * 20))])])
    raw = blk.serialize()
    assert Block.parse(raw).serialize() == raw
    assert Block.from_hex(raw.hex()).header == blk.header
    for bad in (raw[:-1], raw + b"\x00"):
        with pytest.raises(BadEncoding):
            Block.parse(bad)
    with pytest.raises(BadEncoding):
        Block.from_hex("zz")


def test_output_classification():
    assert classify_output(p2pkh_script(b"\x01" * 20)) == ("p2pkh", b"\x01" * 20)
    assert classify_output(p2sh_script(b"\x02" * 20)) == ("p2sh", b"\x02" * 20)
    assert classify_output(op_return_script(b"hi")) == ("nulldata", None)
    assert classify_output(b"\x51") == ("nonstandard", None)


def test_script_pushes_and_spender():
    pk = pubkey(3)
    assert script_pushes(push(b"a" * 80) + push(pk)) == [b"a" * 80, pk]
    assert script_pushes(b"\x76\xa9") is None
    assert script_pushes(b"\x05ab") is None
    assert spender_hash(push(b"sig") + push(pk)) == hash160(pk)
    assert spender_hash(b"") is None


# -- pruning -----------------------------------------------------------------------------------

def test_coinbase_only_block():
    outs = [TxOut(50, p2pkh_script(hash160(pubkey(i)))) for i in range(3)]
    batch = prune(make_block(bytes(32), [coinbase(b"h", outs)]), 1)
    assert batch.sizes == (0, 3)
    assert all(r.height == 1 and len(r.to_bytes()) == 68 for r in batch.creates)


def test_five_outputs_two_spends():
    pks = [pubkey(i) for i in range(7)]
    spend_ins = [TxIn(hashlib.sha256(b"prev%d" % i).digest(), i, push(b"s" * 71) + push(pks[i]))
                 for i in range(2)]
    tx = Tx(1, spend_ins, [TxOut(10 + i, p2pkh_script(hash160(pks[2 + i]))) for i in range(5)])
    batch = prune(make_block(bytes(32), [coinbase(b"c", []), tx]), 7)
    assert batch.sizes == (2, 5)
    assert batch.spends[0] == (hash160(pks[0]), spend_ins[0].prev_txid, 0)
    assert sorted(r.amount for r in batch.creates) == [10, 11, 12, 13, 14]


def test_op_return_and_nonstandard_skipped_and_counted():
    tx = coinbase(b"z", [TxOut(0, op_return_script(b"data")), TxOut(1, b"\x51"),
                         TxOut(2, p2sh_script(b"\x09" * 20))])
    batch = prune(make_block(bytes(32), [tx]), 1)
    assert batch.skipped_outputs == 2 and batch.sizes == (0, 1)


def test_intra_block_create_and_spend_cancel():
    pk = pubkey(1)
    t1 = Tx(1, [TxIn(b"\x01" * 32, 0, b"")], [TxOut(5, p2pkh_script(hash160(pk)))])
    t2 = Tx(1, [TxIn(t1.txid, 0, push(b"s") + push(pk))], [TxOut(4, p2pkh_script(b"\x02" * 20))])
    batch = prune(make_block(bytes(32), [coinbase(b"c", []), t1, t2]), 2)
    assert batch.sizes == (0, 1)
    assert batch.skipped_inputs == 1


# -- header chain file ---------------------------------------------------------------------------

def build_chain(n):
    chain = HeaderChain()
    prev = bytes(32)
    blocks = []
    for i in range(n):
        b = make_block(prev, [coinbase(b"%d" % i, [])], ts=1_600_000_000 + i)
        chain.accept_block(b)
        blocks.append(b)
        prev = b.header.hash()
    return chain, blocks


def test_chain_file_roundtrip_and_size(tmp_path):
    chain, _ = build_chain(12)
    key = b"k" * 32
    chain.save(tmp_path / "h.dat", key)
    assert (tmp_path / "h.dat").stat().st_size == 80 * 12 + 32
    back = HeaderChain.load(tmp_path / "h.dat", key)
    assert back.tip_hash == chain.tip_hash and back.height == 11


@pytest.mark.parametrize("pos", [0, 79, 500, 80 * 12 + 5])
def test_any_file_modification_detected(tmp_path, pos):
    chain, _ = build_chain(12)
    chain.save(tmp_path / "h.dat", b"k" * 32)
    data = bytearray((tmp_path / "h.dat").read_bytes())
    data[pos] ^= 1
    (tmp_path / "h.dat").write_bytes(data)
    with pytest.raises(ChainTampered):
        HeaderChain.load(tmp_path / "h.dat", b"k" * 32)


def test_truncated_file_and_wrong_key(tmp_path):
    chain, _ = build_chain(3)
    chain.save(tmp_path / "h.dat", b"k" * 32)
    with pytest.raises(ChainTampered):
        HeaderChain.load(tmp_path / "h.dat", b"j" * 32)
    (tmp_path / "h.dat").write_bytes((tmp_path / "h.dat").read_bytes()[:-1])
    with pytest.raises(ChainTampered):
        HeaderChain.load(tmp_path / "h.dat", b"k" * 32)


def test_configured_genesis_and_no_reorgs():
    chain, blocks = build_chain(3)
    other = HeaderChain(genesis_hash=bytes(32))
    with pytest.raises(BadLink):
        other.append(blocks[0].header)
    fork = make_block(blocks[0].header.hash(), [coinbase(b"fork", [])])
    with pytest.raises(BadLink):
        chain.append(fork.header)


def test_file_source(tmp_path):
    _, blocks = build_chain(3)
    src = FileChainSource(tmp_path)
    assert src.get_block_count() == -1
    for h, b in enumerate(blocks):
        src.put_block(h, b)
    assert src.get_block_count() == 2
    assert src.get_block(1).serialize() == blocks[1].serialize()
    assert bytes.fromhex(src.get_block_hex(2)) == blocks[2].serialize()
    with pytest.raises(KeyError):
        src.get_block_hex(3)
