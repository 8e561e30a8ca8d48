"""Wire messages.

Before attestation a connection carries plain frames ``len(4) || type(1) ||
body``.  Afterwards every frame is sealed by the session and the plaintext
is ``type(1) || body``.  QUERY plaintexts are padded to a fixed size, and
QUERY_RESP and ERROR replies on the query path share one fixed size, so
frame lengths reveal nothing about the address or the outcome.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Type

from t3.enclave.channel import MAX_FRAME
from t3.enclave.ownership import OwnershipProof
from t3.errors import AuthFail, BadEncoding, T3Error
from t3.utxo.records import RECORD_BYTES, UtxoRecord

ATTEST_REQ = 0x01
ATTEST_RESP = 0x02
QUERY = 0x10
QUERY_RESP = 0x11
HEADERS_REQ = 0x20
HEADERS_RESP = 0x21
ERROR = 0x7F

QUERY_SIZE = 512
_RESP_HEAD = struct.Struct(">BQIH")  # type, interval, height, count
_ERROR_HEAD = struct.Struct(">BH")
PLAIN_ERROR_SIZE = 16


class ConnectionClosed(Exception):
    pass


# -- transport ----------------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket) -> bytes:
    """One frame including its 4-byte length prefix."""
    prefix = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", prefix)
    if length > MAX_FRAME:
        raise AuthFail("frame too large")
    return prefix + _recv_exact(sock, length)


def plain_frame(msg_type: int, body: bytes) -> bytes:
    return struct.pack(">IB", 1 + len(body), msg_type) + body


def parse_plain(frame: bytes) -> Tuple[int, bytes]:
    if len(frame) < 5:
        raise BadEncoding("empty frame")
    return frame[4], frame[5:]


# -- message bodies -------------------------------------------------------------

def encode_query(proof: OwnershipProof, delta: int = 0) -> bytes:
    body = proof.encode()
    out = struct.pack(">BBH", QUERY, delta, len(body)) + body
    if len(out) > QUERY_SIZE:
        raise BadEncoding("proof too large for a query")
    return out + bytes(QUERY_SIZE - len(out))


def decode_query(pt: bytes) -> Tuple[OwnershipProof, Optional[int]]:
    if len(pt) != QUERY_SIZE or pt[0] != QUERY:
        raise BadEncoding("query has wrong size or type")
    _, delta, n = struct.unpack_from(">BBH", pt)
    if 4 + n > QUERY_SIZE or any(pt[4 + n:]):
        raise BadEncoding("query padding is not zero")
    return OwnershipProof.decode(pt[4:4 + n]), (delta or None)


def response_size(max_out: int) -> int:
    return _RESP_HEAD.size + max_out * RECORD_BYTES


def encode_response(records: List[UtxoRecord], interval: int, height: int) -> bytes:
    return (_RESP_HEAD.pack(QUERY_RESP, interval, max(height, 0), len(records))
            + b"".join(r.to_bytes() for r in records))


@dataclass
class QueryResult:
    records: List[UtxoRecord]
    interval: int
    height: int

    def real(self) -> List[UtxoRecord]:
        return [r for r in self.records if not r.is_dummy]


def decode_response(pt: bytes) -> QueryResult:
    if len(pt) < _RESP_HEAD.size:
        raise BadEncoding("short response")
    t, interval, height, count = _RESP_HEAD.unpack_from(pt)
    if t != QUERY_RESP or len(pt) != response_size(count):
        raise BadEncoding("malformed response")
    off = _RESP_HEAD.size
    recs = [UtxoRecord.from_bytes(pt[off + i * RECORD_BYTES: off + (i + 1) * RECORD_BYTES])
            for i in range(count)]
    return QueryResult(recs, interval, height)


def encode_error(code: int, size: int = PLAIN_ERROR_SIZE) -> bytes:
    head = _ERROR_HEAD.pack(ERROR, code)
    return head + bytes(max(0, size - len(head)))


def decode_error(pt: bytes) -> int:
    if len(pt) < _ERROR_HEAD.size or pt[0] != ERROR:
        raise BadEncoding("not an error message")
    return _ERROR_HEAD.unpack_from(pt)[1]


def encode_headers_req(start: int) -> bytes:
    return struct.pack(">BI", HEADERS_REQ, start)


def decode_headers_req(pt: bytes) -> int:
    if len(pt) != 5 or pt[0] != HEADERS_REQ:
        raise BadEncoding("malformed headers request")
    return struct.unpack_from(">I", pt, 1)[0]


# -- error codes ------------------------------------------------------------------

def _error_classes() -> Dict[int, Type[T3Error]]:
    out: Dict[int, Type[T3Error]] = {}
    stack = [T3Error]
    while stack:
        cls = stack.pop()
        out.setdefault(cls.code, cls)
        stack.extend(cls.__subclasses__())
    return out


def error_for(code: int) -> T3Error:
    cls = _error_classes().get(code, T3Error)
    return cls(f"server returned {cls.__name__} (code {code:#06x})")
