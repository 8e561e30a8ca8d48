"""Attested session keys and the sealed frame format.

Frame: ``len(4, BE) || counter(8, BE) || ciphertext || tag(16)`` where ``len``
counts everything after itself.  The AES-GCM nonce is a 4-byte direction tag
followed by the counter, so the two directions of one session never share a
(key, nonce) pair, and counters are strictly increasing per direction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from t3.errors import AuthFail, ReplayDetected

CLIENT = "client"
SERVER = "server"
_DIR = {CLIENT: b"c->s", SERVER: b"s->c"}
_HEAD = struct.Struct(">IQ")
TAG_BYTES = 16
MAX_FRAME = 1 << 20


@dataclass
class Session:
    session_id: bytes
    shared_key: bytes
    role: str
    send_counter: int = 0
    recv_counter: int = 0
    _aead: AESGCM = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.shared_key) != 32:
            raise ValueError("shared key must be 32 bytes")
        if self.role not in _DIR:
            raise ValueError(f"bad role {self.role!r}")
        self._aead = AESGCM(self.shared_key)

    @property
    def _peer(self) -> str:
        return SERVER if self.role == CLIENT else CLIENT

    def seal(self, plaintext: bytes) -> bytes:
        counter = self.send_counter + 1
        if counter >= 1 << 64:
            raise OverflowError("send counter exhausted; re-attest")
        length = 8 + len(plaintext) + TAG_BYTES
        head = _HEAD.pack(length, counter)
        ct = self._aead.encrypt(_DIR[self.role] + head[4:], plaintext, head + self.session_id)
        self.send_counter = counter
        return head + ct

    def unseal(self, frame: bytes) -> bytes:
        if len(frame) < _HEAD.size + TAG_BYTES:
            raise AuthFail("frame too short")
        length, counter = _HEAD.unpack_from(frame)
        if length != len(frame) - 4:
            raise AuthFail("frame length mismatch")
        if counter <= self.recv_counter:
            raise ReplayDetected(f"frame counter {counter} already seen")
        if counter != self.recv_counter + 1:
            raise ReplayDetected(f"out-of-order frame {counter}, expected {self.recv_counter + 1}")
        head = frame[:_HEAD.size]
        try:
            pt = self._aead.decrypt(_DIR[self._peer] + head[4:], frame[_HEAD.size:],
                                    head + self.session_id)
        except InvalidTag:
            raise AuthFail("frame failed authentication") from None
        self.recv_counter = counter
        return pt


def read_frame_length(prefix: bytes) -> int:
    (length,) = struct.unpack(">I", prefix)
    if length > MAX_FRAME:
        raise AuthFail("frame too large")
    return length
