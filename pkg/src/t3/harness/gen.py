"""Deterministic synthetic chain with a known UTXO set.

Every address is given a final live-output count drawn from a histogram, plus
some outputs that are spent later ("doomed").  A fraction of addresses own
only doomed outputs and finish at zero.  Fees and value conservation are not
modelled; each non-coinbase transaction pulls one anyone-can-spend funding
output from the previous block's coinbase so that every transaction has an
input even when it spends nothing we track.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

from cryptography.hazmat.primitives.asymmetric import ec

from t3.chain.header import EASY_BITS, BlockHeader, mine
from t3.chain.merkle import merkle_root
from t3.chain.source import FileChainSource
from t3.chain.tx import (OP_CHECKSIG, Block, Tx, TxIn, TxOut, op_return_script,
                         p2pkh_script, p2sh_script, push)
from t3.enclave.ownership import compressed_pubkey, hash160
from t3.errors import InvalidParams

DEFAULT_DISTRIBUTION: Dict[int, float] = {1: 0.70, 2: 0.22, 3: 0.07, 4: 0.01}
GENESIS_TIME = 1_231_006_505
ANYONE_CAN_SPEND = b"\x51"  # OP_TRUE; non-standard, ignored by pruning
SECP256K1_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141

Utxo = Tuple[str, int, int, int]  # txid hex, vout, amount, height


@dataclass
class Address:
    pkh: bytes
    kind: str             # "p2pkh" or "p2sh"
    secret: int           # secp256k1 private scalar
    pubkey: bytes         # compressed pubkey (p2pkh) or redeem script (p2sh)

    @property
    def script_pubkey(self) -> bytes:
        return p2pkh_script(self.pkh) if self.kind == "p2pkh" else p2sh_script(self.pkh)

    def script_sig(self, rng: random.Random) -> bytes:
        # signature bytes are placeholders: scripts are never executed
        sig = b"\x30" + rng.randbytes(70)
        if self.kind == "p2pkh":
            return push(sig) + push(self.pubkey)
        return b"\x00" + push(sig) + push(self.pubkey)

    def key_line(self) -> str:
        if self.kind == "p2pkh":
            return f"{self.pubkey.hex()},{self.secret:064x}"
        return self.pubkey.hex()


@dataclass
class GeneratedChain:
    blocks: List[Block]
    addresses: Dict[bytes, Address]
    truth: Dict[bytes, List[Utxo]]
    zero_addresses: List[bytes] = field(default_factory=list)
    skipped_outputs: int = 0
    total_outputs: int = 0
    total_spends: int = 0

    def live_count(self) -> int:
        return sum(len(v) for v in self.truth.values())

    def write(self, directory: Union[str, Path]) -> None:
        d = Path(directory)
        src = FileChainSource(d / "blocks")
        for h, b in enumerate(self.blocks):
            src.put_block(h, b)
        (d / "truth.json").write_text(json.dumps(truth_to_json(self.truth), indent=0, sort_keys=True))
        (d / "keys.txt").write_text("".join(a.key_line() + "\n" for a in self.addresses.values()))
        meta = {"blocks": len(self.blocks), "addresses": len(self.addresses),
                "live_utxos": self.live_count(), "outputs": self.total_outputs,
                "spends": self.total_spends, "skipped_outputs": self.skipped_outputs,
                "zero_addresses": len(self.zero_addresses)}
        (d / "meta.json").write_text(json.dumps(meta, indent=1))


def truth_to_json(truth: Mapping[bytes, List[Utxo]]) -> dict:
    return {pkh.hex(): sorted(list(u) for u in v) for pkh, v in truth.items()}


def truth_from_json(obj: dict) -> Dict[bytes, List[Utxo]]:
    return {bytes.fromhex(k): [tuple(u) for u in v] for k, v in obj.items()}


def validate_distribution(dist: Mapping[int, float]) -> Dict[int, float]:
    if not dist:
        raise InvalidParams("empty UTXO-count distribution")
    out = {}
    for k, p in dist.items():
        k = int(k)
        if k < 1 or p < 0:
            raise InvalidParams(f"bad histogram entry {k}: {p}")
        out[k] = float(p)
    total = sum(out.values())
    if abs(total - 1.0) > 1e-6:
        raise InvalidParams(f"histogram sums to {total}, not 1")
    return out


def coverage(truth: Mapping[bytes, List[Utxo]], max_out: int) -> float:
    """Fraction of live UTXOs returned when each address gets at most max_out."""
    total = sum(len(v) for v in truth.values())
    if total == 0:
        return 1.0
    return sum(min(len(v), max_out) for v in truth.values()) / total


def make_address(rng: random.Random, p2sh: bool) -> Address:
    secret = rng.randrange(1, SECP256K1_ORDER)
    pub = compressed_pubkey(ec.derive_private_key(secret, ec.SECP256K1()).public_key())
    if p2sh:
        redeem = push(pub) + bytes([OP_CHECKSIG])
        return Address(hash160(redeem), "p2sh", secret, redeem)
    return Address(hash160(pub), "p2pkh", secret, pub)


def gen_chain(seed: int, blocks: int, txs_per_block: int = 5, outputs_per_block: int = 25,
              distribution: Optional[Mapping[int, float]] = None, spend_ratio: float = 0.4,
              zero_fraction: float = 0.05, p2sh_fraction: float = 0.2,
              nulldata_rate: float = 0.02, segwit_rate: float = 0.1,
              nbits: int = EASY_BITS) -> GeneratedChain:
    """``blocks`` counts the genesis block too."""
    if blocks < 1 or txs_per_block < 1 or outputs_per_block < 0:
        raise InvalidParams("blocks and txs_per_block must be positive")
    if not 0 <= spend_ratio < 1 or not 0 <= zero_fraction < 1:
        raise InvalidParams("spend_ratio and zero_fraction must be in [0, 1)")
    dist = validate_distribution(DEFAULT_DISTRIBUTION if distribution is None else distribution)
    rng = random.Random(seed)
    kinds, weights = zip(*sorted(dist.items()))

    body = blocks - 1
    total_out = body * outputs_per_block
    n_doomed = round(total_out * spend_ratio) if body > 1 else 0
    n_live = total_out - n_doomed

    # plan: per address, final live count from the histogram
    addrs: List[Address] = []
    live_counts: List[int] = []
    placed = 0
    while placed < n_live:
        k = min(rng.choices(kinds, weights)[0], n_live - placed)
        addrs.append(make_address(rng, rng.random() < p2sh_fraction))
        live_counts.append(k)
        placed += k
    n_zero = min(n_doomed, round(len(addrs) * zero_fraction))
    zero = [make_address(rng, rng.random() < p2sh_fraction) for _ in range(n_zero)]

    # (address index into owners, doomed?) per planned output
    owners = addrs + zero
    outputs: List[Tuple[int, bool]] = []
    for i, k in enumerate(live_counts):
        outputs.extend((i, False) for _ in range(k))
    for j in range(n_zero):
        outputs.append((len(addrs) + j, True))
    for _ in range(n_doomed - n_zero):
        outputs.append((rng.randrange(len(owners)), True))
    rng.shuffle(outputs)

    # schedule: creation block, and for doomed outputs a strictly later spend block
    creates_at: Dict[int, List[Tuple[int, bool]]] = defaultdict(list)
    for owner, doomed in outputs:
        hi = body - 1 if doomed else body
        creates_at[rng.randint(1, max(1, hi))].append((owner, doomed))

    chain = GeneratedChain([], {a.pkh: a for a in owners}, {a.pkh: [] for a in owners},
                           [a.pkh for a in zero])
    truth_sets: Dict[bytes, Dict[Tuple[str, int], Utxo]] = {a.pkh: {} for a in owners}
    spend_at: Dict[int, List[Tuple[bytes, int, Address]]] = defaultdict(list)
    funding: List[Tuple[bytes, int]] = []
    prev_hash = bytes(32)

    for height in range(blocks):
        # coinbase: BIP34-style height push, funding outputs for the next block
        cb_in = TxIn(bytes(32), 0xFFFFFFFF, push(height.to_bytes(4, "little")) + push(rng.randbytes(4)))
        coinbase = Tx(1, [cb_in], [TxOut(50_000, ANYONE_CAN_SPEND) for _ in range(txs_per_block)])
        txs = [coinbase]
        new_funding = [(coinbase.txid, v) for v in range(txs_per_block)]

        planned = creates_at.get(height, [])
        spends = spend_at.get(height, [])
        if height > 0:
            buckets_out: List[List[Tuple[int, bool]]] = [[] for _ in range(txs_per_block)]
            for i, o in enumerate(planned):
                buckets_out[i % txs_per_block].append(o)
            buckets_in: List[List[Tuple[bytes, int, Address]]] = [[] for _ in range(txs_per_block)]
            for i, s in enumerate(spends):
                buckets_in[i % txs_per_block].append(s)
            for t in range(txs_per_block):
                fund_txid, fund_vout = funding[t]
                ins = [TxIn(fund_txid, fund_vout, b"")]
                for txid, vout, addr in buckets_in[t]:
                    ins.append(TxIn(txid, vout, addr.script_sig(rng), 0xFFFFFFFE))
                if rng.random() < segwit_rate:
                    ins[0].witness = [rng.randbytes(71), rng.randbytes(33)]
                outs: List[TxOut] = []
                meta: List[Optional[Tuple[Address, bool, int]]] = []
                for owner, doomed in buckets_out[t]:
                    amount = rng.randrange(546, 50 * 10 ** 8)
                    a = owners[owner]
                    outs.append(TxOut(amount, a.script_pubkey))
                    meta.append((a, doomed, amount))
                if rng.random() < nulldata_rate or not outs:
                    outs.append(TxOut(0, op_return_script(rng.randbytes(20))))
                    meta.append(None)
                    chain.skipped_outputs += 1
                tx = Tx(2, ins, outs, 0)
                txid = tx.txid
                for vout, m in enumerate(meta):
                    if m is None:
                        continue
                    a, doomed, amount = m
                    chain.total_outputs += 1
                    if doomed:
                        spend_at[rng.randint(height + 1, body)].append((txid, vout, a))
                    else:
                        truth_sets[a.pkh][(txid.hex(), vout)] = (txid.hex(), vout, amount, height)
                chain.total_spends += len(buckets_in[t])
                txs.append(tx)
        funding = new_funding

        root = merkle_root([t.txid for t in txs])
        template = BlockHeader(0x20000000, prev_hash, root, GENESIS_TIME + 600 * height, nbits, 0)
        header = mine(template)
        chain.blocks.append(Block(header, txs))
        prev_hash = header.hash()

    chain.truth = {pkh: sorted(v.values()) for pkh, v in truth_sets.items()}
    return chain


def chain_digest(chain: GeneratedChain) -> str:
    h = hashlib.sha256()
    for b in chain.blocks:
        h.update(b.serialize())
    return h.hexdigest()
