"""Bitcoin wire-format transactions, blocks and the script shapes we care about."""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Tuple

from t3.enclave.ownership import hash160
from t3.errors import BadEncoding

if TYPE_CHECKING:
    from t3.chain.header import BlockHeader

COINBASE_VOUT = 0xFFFFFFFF

OP_0 = 0x00
OP_PUSHDATA1, OP_PUSHDATA2, OP_PUSHDATA4 = 0x4C, 0x4D, 0x4E
OP_RETURN = 0x6A
OP_DUP = 0x76
OP_EQUAL = 0x87
OP_EQUALVERIFY = 0x88
OP_HASH160 = 0xA9
OP_CHECKSIG = 0xAC


def dsha256(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


class Reader:
    def __init__(self, data: bytes):
        self.buf = io.BytesIO(data)
        self.size = len(data)

    def read(self, n: int) -> bytes:
        out = self.buf.read(n)
        if len(out) != n:
            raise BadEncoding("unexpected end of data")
        return out

    def u8(self) -> int:
        return self.read(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.read(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]

    def varint(self) -> int:
        n = self.u8()
        if n < 0xFD:
            return n
        if n == 0xFD:
            return struct.unpack("<H", self.read(2))[0]
        if n == 0xFE:
            return struct.unpack("<I", self.read(4))[0]
        return struct.unpack("<Q", self.read(8))[0]

    def varbytes(self) -> bytes:
        n = self.varint()
        if n > self.size:
            raise BadEncoding("length prefix exceeds data")
        return self.read(n)

    def peek(self, n: int) -> bytes:
        pos = self.buf.tell()
        out = self.buf.read(n)
        self.buf.seek(pos)
        return out

    def at_end(self) -> bool:
        return self.buf.tell() == self.size


def varint(n: int) -> bytes:
    if n < 0xFD:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + struct.pack("<H", n)
    if n <= 0xFFFFFFFF:
        return b"\xfe" + struct.pack("<I", n)
    return b"\xff" + struct.pack("<Q", n)


def varbytes(b: bytes) -> bytes:
    return varint(len(b)) + b


@dataclass
class TxIn:
    prev_txid: bytes
    prev_vout: int
    script_sig: bytes = b""
    sequence: int = 0xFFFFFFFF
    witness: List[bytes] = field(default_factory=list)

    @property
    def is_coinbase(self) -> bool:
        return self.prev_txid == bytes(32) and self.prev_vout == COINBASE_VOUT


@dataclass
class TxOut:
    value: int
    script_pubkey: bytes


@dataclass
class Tx:
    version: int
    inputs: List[TxIn]
    outputs: List[TxOut]
    locktime: int = 0

    @property
    def has_witness(self) -> bool:
        return any(i.witness for i in self.inputs)

    def serialize(self, witness: bool = True) -> bytes:
        seg = witness and self.has_witness
        out = [struct.pack("<i", self.version)]
        if seg:
            out.append(b"\x00\x01")
        out.append(varint(len(self.inputs)))
        for i in self.inputs:
            out.append(i.prev_txid + struct.pack("<I", i.prev_vout) + varbytes(i.script_sig)
                       + struct.pack("<I", i.sequence))
        out.append(varint(len(self.outputs)))
        for o in self.outputs:
            out.append(struct.pack("<Q", o.value) + varbytes(o.script_pubkey))
        if seg:
            for i in self.inputs:
                out.append(varint(len(i.witness)) + b"".join(varbytes(w) for w in i.witness))
        out.append(struct.pack("<I", self.locktime))
        return b"".join(out)

    @property
    def txid(self) -> bytes:
        """Internal byte order (as hashed); reverse for display."""
        return dsha256(self.serialize(witness=False))

    @property
    def is_coinbase(self) -> bool:
        return len(self.inputs) == 1 and self.inputs[0].is_coinbase

    @classmethod
    def parse(cls, r: Reader) -> "Tx":
        version = r.i32()
        seg = r.peek(2) == b"\x00\x01"
        if seg:
            r.read(2)
        inputs = []
        for _ in range(r.varint()):
            txid = r.read(32)
            vout = r.u32()
            inputs.append(TxIn(txid, vout, r.varbytes(), r.u32()))
        outputs = [TxOut(r.u64(), r.varbytes()) for _ in range(r.varint())]
        if seg:
            for i in inputs:
                i.witness = [r.varbytes() for _ in range(r.varint())]
        if not inputs and not seg:
            raise BadEncoding("transaction without inputs")
        return cls(version, inputs, outputs, r.u32())


# -- scripts ----------------------------------------------------------------

def push(data: bytes) -> bytes:
    n = len(data)
    if n < OP_PUSHDATA1:
        return bytes([n]) + data
    if n <= 0xFF:
        return bytes([OP_PUSHDATA1, n]) + data
    if n <= 0xFFFF:
        return bytes([OP_PUSHDATA2]) + struct.pack("<H", n) + data
    return bytes([OP_PUSHDATA4]) + struct.pack("<I", n) + data


def p2pkh_script(pkh: bytes) -> bytes:
    return bytes([OP_DUP, OP_HASH160, 20]) + pkh + bytes([OP_EQUALVERIFY, OP_CHECKSIG])


def p2sh_script(script_hash: bytes) -> bytes:
    return bytes([OP_HASH160, 20]) + script_hash + bytes([OP_EQUAL])


def op_return_script(data: bytes) -> bytes:
    return bytes([OP_RETURN]) + push(data)


def classify_output(script: bytes) -> Tuple[str, Optional[bytes]]:
    """('p2pkh'|'p2sh', hash) for the supported templates, else (kind, None)."""
    if (len(script) == 25 and script[:3] == bytes([OP_DUP, OP_HASH160, 20])
            and script[23:] == bytes([OP_EQUALVERIFY, OP_CHECKSIG])):
        return "p2pkh", script[3:23]
    if len(script) == 23 and script[:2] == bytes([OP_HASH160, 20]) and script[22] == OP_EQUAL:
        return "p2sh", script[2:22]
    if script[:1] == bytes([OP_RETURN]):
        return "nulldata", None
    return "nonstandard", None


def script_pushes(script: bytes) -> Optional[List[bytes]]:
    """Data pushes of a push-only script, or None if any other opcode appears."""
    out: List[bytes] = []
    i = 0
    try:
        while i < len(script):
            op = script[i]
            i += 1
            if op == OP_0:
                out.append(b"")
                continue
            if op < OP_PUSHDATA1:
                n = op
            elif op == OP_PUSHDATA1:
                n = script[i]
                i += 1
            elif op == OP_PUSHDATA2:
                n = struct.unpack_from("<H", script, i)[0]
                i += 2
            elif op == OP_PUSHDATA4:
                n = struct.unpack_from("<I", script, i)[0]
                i += 4
            else:
                return None
            if i + n > len(script):
                return None
            out.append(script[i:i + n])
            i += n
    except (IndexError, struct.error):
        return None
    return out


def spender_hash(script_sig: bytes) -> Optional[bytes]:
    """hash160 of the final push of a P2PKH/P2SH scriptSig (the pubkey or the
    redeem script), i.e. the address the spent output paid to."""
    pushes = script_pushes(script_sig)
    if not pushes or not pushes[-1]:
        return None
    return hash160(pushes[-1])


# -- blocks -------------------------------------------------------------------

@dataclass
class Block:
    header: "BlockHeader"
    txs: List[Tx]

    def serialize(self) -> bytes:
        return self.header.serialize() + varint(len(self.txs)) + b"".join(t.serialize() for t in self.txs)

    @classmethod
    def parse(cls, data: bytes) -> "Block":
        from t3.chain.header import BlockHeader

        r = Reader(data)
        header = BlockHeader.parse(r.read(80))
        n = r.varint()
        if n == 0:
            raise BadEncoding("block without transactions")
        txs = [Tx.parse(r) for _ in range(n)]
        if not r.at_end():
            raise BadEncoding("trailing bytes after block")
        return cls(header, txs)

    @classmethod
    def from_hex(cls, text: str) -> "Block":
        try:
            return cls.parse(bytes.fromhex(text.strip()))
        except ValueError as e:
            if isinstance(e, BadEncoding):
                raise
            raise BadEncoding("block is not valid hex") from None
