"""SPV-side connection: attest, prove ownership, query, fetch headers."""

from __future__ import annotations

import socket
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from cryptography.hazmat.primitives.asymmetric import ec

from t3.chain.header import BlockHeader
from t3.chain.headerchain import HeaderChain
from t3.enclave.attestation import AttestationQuote, ClientHandshake
from t3.enclave.channel import Session
from t3.enclave.ownership import OwnershipProof, hash160, sign_ownership
from t3.errors import BadEncoding
from t3.service import protocol as P
from t3.service.server import parse_addr


@dataclass
class KeyEntry:
    pubkey: bytes                      # compressed pubkey, or a P2SH redeem script
    private: Optional[int] = None

    @property
    def pkh(self) -> bytes:
        return hash160(self.pubkey)

    def proof(self, session_id: bytes, sign: bool = False) -> OwnershipProof:
        if sign and self.private is not None:
            return sign_ownership(ec.derive_private_key(self.private, ec.SECP256K1()), session_id)
        return OwnershipProof(self.pkh, self.pubkey)


def load_keys(path: Union[str, Path]) -> Dict[bytes, KeyEntry]:
    """Lines of ``hex pubkey[,hex privkey]``; blank lines and ``#`` comments ignored."""
    keys: Dict[bytes, KeyEntry] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        pub, _, priv = line.partition(",")
        try:
            entry = KeyEntry(bytes.fromhex(pub.strip()), int(priv, 16) if priv.strip() else None)
        except ValueError:
            raise BadEncoding(f"{path}:{n}: not hex") from None
        keys[entry.pkh] = entry
    return keys


class T3Client:
    def __init__(self, server: str, root_key: bytes, measurement: bytes, timeout: float = 30.0):
        self.addr = parse_addr(server)
        self.root_key = root_key
        self.measurement = measurement
        self.timeout = timeout
        self.sock: Optional[socket.socket] = None
        self.session: Optional[Session] = None
        self.last_interval = -1
        # every raw frame sent, for traffic audits
        self.sent: List[bytes] = []

    def __enter__(self) -> "T3Client":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _send(self, data: bytes) -> None:
        self.sent.append(data)
        self.sock.sendall(data)

    def connect(self) -> Session:
        self.sock = socket.create_connection(self.addr, timeout=self.timeout)
        hs = ClientHandshake(self.root_key, self.measurement)
        nonce, pub = hs.request()
        self._send(P.plain_frame(P.ATTEST_REQ, nonce + pub))
        t, body = P.parse_plain(P.recv_frame(self.sock))
        if t == P.ERROR:
            raise P.error_for(int.from_bytes(body[:2], "big"))
        if t != P.ATTEST_RESP:
            raise BadEncoding("expected ATTEST_RESP")
        self.session = hs.finish(AttestationQuote.decode(body))
        return self.session

    def close(self) -> None:
        if self.sock is not None:
            self.sock.close()
            self.sock = None

    def request(self, plaintext: bytes) -> bytes:
        self._send(self.session.seal(plaintext))
        pt = self.session.unseal(P.recv_frame(self.sock))
        if pt[:1] == bytes([P.ERROR]):
            raise P.error_for(P.decode_error(pt))
        return pt

    def query_proof(self, proof: OwnershipProof, delta: int = 0) -> P.QueryResult:
        res = P.decode_response(self.request(P.encode_query(proof, delta)))
        if res.interval < self.last_interval:
            raise BadEncoding("server interval went backwards")
        self.last_interval = res.interval
        return res

    def query(self, key: KeyEntry, sign: bool = False, delta: int = 0) -> P.QueryResult:
        return self.query_proof(key.proof(self.session.session_id, sign), delta)

    def headers(self, start: int = 0) -> List[BlockHeader]:
        pt = self.request(P.encode_headers_req(start))
        if pt[0] != P.HEADERS_RESP or (len(pt) - 1) % 80:
            raise BadEncoding("malformed headers response")
        return [BlockHeader.parse(pt[i:i + 80]) for i in range(1, len(pt), 80)]


def sync_headers(local: HeaderChain, client: T3Client) -> int:
    """Fetch headers past the local tip, verify link and PoW, append them."""
    start = len(local)
    for h in client.headers(start):
        local.append(h)
    return len(local) - start


def save_local_headers(path: Union[str, Path], chain: HeaderChain) -> None:
    Path(path).write_bytes(chain.serialize())


def load_local_headers(path: Union[str, Path]) -> HeaderChain:
    p = Path(path)
    if not p.exists():
        return HeaderChain()
    return HeaderChain.from_bytes(p.read_bytes())
