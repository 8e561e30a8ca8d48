"""Simulated remote attestation.

SIMULATION ONLY.  A real TEE signs quotes with a hardware-rooted key checked
by the vendor's attestation service.  Here the "attestation root" is a
symmetric key configured on both server and client (``T3_ATTEST_ROOT``), and
a quote is an HMAC over ``measurement || dh_public || client_nonce``.  That
proves nothing about real hardware; it only lets the rest of the protocol
run against the same contract: ephemeral X25519 key exchange bound into the
quote, fresh nonce per handshake, both ends deriving the same session key.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from t3.enclave.channel import CLIENT, SERVER, Session
from t3.errors import BadEncoding, QuoteInvalid, StaleNonce

NONCE_BYTES = 32
ATTEST_ROOT_ENV = "T3_ATTEST_ROOT"
_QUOTE = struct.Struct(">32s32s32s32s")


def measure(package_dir: Optional[Path] = None) -> bytes:
    """Digest of the server build: SHA-256 over the package's source files."""
    root = package_dir or Path(__file__).resolve().parent.parent
    h = hashlib.sha256(b"t3-enclave-measurement/v1")
    for p in sorted(root.rglob("*.py")):
        rel = p.relative_to(root).as_posix().encode()
        h.update(struct.pack(">I", len(rel)) + rel)
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.digest()


def attest_root_from_env() -> bytes:
    value = os.environ.get(ATTEST_ROOT_ENV)
    if not value:
        raise QuoteInvalid(f"{ATTEST_ROOT_ENV} is not set")
    try:
        key = bytes.fromhex(value)
    except ValueError:
        raise QuoteInvalid(f"{ATTEST_ROOT_ENV} is not hex") from None
    if len(key) < 16:
        raise QuoteInvalid("attestation root key too short")
    return key


@dataclass(frozen=True)
class AttestationQuote:
    enclave_measurement: bytes
    dh_public: bytes
    client_nonce: bytes
    quote_mac: bytes

    def encode(self) -> bytes:
        return _QUOTE.pack(self.enclave_measurement, self.dh_public, self.client_nonce,
                           self.quote_mac)

    @classmethod
    def decode(cls, data: bytes) -> "AttestationQuote":
        if len(data) != _QUOTE.size:
            raise BadEncoding("quote must be 128 bytes")
        return cls(*_QUOTE.unpack(data))


def quote_mac(root_key: bytes, measurement: bytes, dh_public: bytes, client_nonce: bytes) -> bytes:
    return hmac.new(root_key, b"t3-quote" + measurement + dh_public + client_nonce,
                    hashlib.sha256).digest()


def verify_quote(quote: AttestationQuote, root_key: bytes, expected_measurement: bytes,
                 client_nonce: bytes) -> None:
    """Raise unless the quote was issued by a trusted build for this nonce."""
    if not hmac.compare_digest(quote.client_nonce, client_nonce):
        raise StaleNonce("quote answers a different nonce")
    want = quote_mac(root_key, quote.enclave_measurement, quote.dh_public, quote.client_nonce)
    if not hmac.compare_digest(want, quote.quote_mac):
        raise QuoteInvalid("quote MAC mismatch")
    if not hmac.compare_digest(quote.enclave_measurement, expected_measurement):
        raise QuoteInvalid("unexpected enclave measurement")


def _derive(shared: bytes, client_nonce: bytes, client_pub: bytes, quote: AttestationQuote
            ) -> Tuple[bytes, bytes]:
    transcript = client_pub + quote.encode()
    okm = HKDF(hashes.SHA256(), 48, salt=client_nonce, info=b"t3-session" + transcript).derive(shared)
    return okm[:16], okm[16:]


def _raw(pub: X25519PublicKey) -> bytes:
    return pub.public_bytes(Encoding.Raw, PublicFormat.Raw)


class AttestationServer:
    """Enclave side: answers attestation requests, remembers recent nonces."""

    def __init__(self, root_key: bytes, measurement: Optional[bytes] = None,
                 nonce_memory: int = 100_000):
        self.root_key = root_key
        self.measurement = measurement or measure()
        self._seen: "OrderedDict[bytes, None]" = OrderedDict()
        self._limit = nonce_memory
        self._lock = threading.Lock()

    def respond(self, client_nonce: bytes, client_pub: bytes) -> Tuple[AttestationQuote, Session]:
        if len(client_nonce) != NONCE_BYTES or len(client_pub) != 32:
            raise BadEncoding("attestation request has wrong field sizes")
        with self._lock:
            if client_nonce in self._seen:
                raise StaleNonce("client nonce reused")
            self._seen[client_nonce] = None
            if len(self._seen) > self._limit:
                self._seen.popitem(last=False)
        eph = X25519PrivateKey.generate()
        pub = _raw(eph.public_key())
        quote = AttestationQuote(self.measurement, pub, client_nonce,
                                 quote_mac(self.root_key, self.measurement, pub, client_nonce))
        try:
            shared = eph.exchange(X25519PublicKey.from_public_bytes(client_pub))
        except ValueError:
            raise BadEncoding("bad client key share") from None
        sid, key = _derive(shared, client_nonce, client_pub, quote)
        return quote, Session(sid, key, SERVER)


class ClientHandshake:
    """Client side of one attestation: ``request()`` then ``finish(quote)``."""

    def __init__(self, root_key: bytes, expected_measurement: bytes,
                 client_nonce: Optional[bytes] = None):
        self.root_key = root_key
        self.expected = expected_measurement
        self.nonce = client_nonce or os.urandom(NONCE_BYTES)
        self._eph = X25519PrivateKey.generate()
        self.public = _raw(self._eph.public_key())

    def request(self) -> Tuple[bytes, bytes]:
        return self.nonce, self.public

    def finish(self, quote: AttestationQuote) -> Session:
        verify_quote(quote, self.root_key, self.expected, self.nonce)
        try:
            shared = self._eph.exchange(X25519PublicKey.from_public_bytes(quote.dh_public))
        except ValueError:
            raise QuoteInvalid("bad server key share") from None
        sid, key = _derive(shared, self.nonce, self.public, quote)
        return Session(sid, key, CLIENT)


def attest(server: AttestationServer, root_key: bytes,
           client_nonce: Optional[bytes] = None) -> Tuple[AttestationQuote, Session, Session]:
    """In-process round trip: returns (quote, client session, server session)."""
    hs = ClientHandshake(root_key, server.measurement, client_nonce)
    quote, server_session = server.respond(*hs.request())
    return quote, hs.finish(quote), server_session
