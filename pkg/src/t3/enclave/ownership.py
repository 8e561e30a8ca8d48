"""Address ownership proofs.

Preimage mode: the client reveals the public key (or P2SH redeem script)
whose hash160 is the address.  Signature mode additionally requires an ECDSA
(secp256k1, SHA-256) signature over ``pkh || session_id``, which stops a
proof captured in one session from being replayed in another.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Optional

from Crypto.Hash import RIPEMD160
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec

from t3.errors import BadEncoding

PREIMAGE = 0
SIGNATURE = 1

# "ripemd160" matches Bitcoin addresses; "sha256" (truncated to 20 bytes) is
# the fallback for builds without RIPEMD-160.
HASH160_MODE = os.environ.get("T3_HASH160", "ripemd160")


def hash160(data: bytes, mode: Optional[str] = None) -> bytes:
    mode = mode or HASH160_MODE
    inner = hashlib.sha256(data).digest()
    if mode == "ripemd160":
        return RIPEMD160.new(inner).digest()
    if mode == "sha256":
        return hashlib.sha256(inner).digest()[:20]
    raise ValueError(f"unknown hash160 mode {mode!r}")


@dataclass(frozen=True)
class OwnershipProof:
    pkh: bytes
    pubkey: bytes
    signature: Optional[bytes] = None

    @property
    def mode(self) -> int:
        return PREIMAGE if self.signature is None else SIGNATURE

    def encode(self) -> bytes:
        if len(self.pkh) != 20 or not 0 < len(self.pubkey) < 256:
            raise BadEncoding("proof fields out of range")
        out = bytes([self.mode]) + self.pkh + bytes([len(self.pubkey)]) + self.pubkey
        if self.signature is not None:
            if not 0 < len(self.signature) < 256:
                raise BadEncoding("signature length out of range")
            out += bytes([len(self.signature)]) + self.signature
        return out

    @classmethod
    def decode(cls, data: bytes) -> "OwnershipProof":
        try:
            mode = data[0]
            pkh = data[1:21]
            n = data[21]
            pubkey = data[22:22 + n]
            rest = data[22 + n:]
            if len(pkh) != 20 or len(pubkey) != n or n == 0:
                raise BadEncoding("truncated proof")
            if mode == PREIMAGE:
                if rest:
                    raise BadEncoding("trailing bytes after preimage proof")
                return cls(pkh, pubkey)
            if mode == SIGNATURE:
                m = rest[0]
                sig = rest[1:1 + m]
                if len(sig) != m or m == 0 or len(rest) != 1 + m:
                    raise BadEncoding("bad signature field")
                return cls(pkh, pubkey, sig)
        except IndexError:
            raise BadEncoding("truncated proof") from None
        raise BadEncoding(f"unknown proof mode {mode}")


def signed_message(pkh: bytes, session_id: bytes) -> bytes:
    return pkh + session_id


def sign_ownership(private_key: ec.EllipticCurvePrivateKey, session_id: bytes) -> OwnershipProof:
    pubkey = compressed_pubkey(private_key.public_key())
    pkh = hash160(pubkey)
    sig = private_key.sign(signed_message(pkh, session_id), ec.ECDSA(hashes.SHA256()))
    return OwnershipProof(pkh, pubkey, sig)


def compressed_pubkey(pub: ec.EllipticCurvePublicKey) -> bytes:
    return pub.public_bytes(serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint)


def new_keypair() -> ec.EllipticCurvePrivateKey:
    return ec.generate_private_key(ec.SECP256K1())


def verify_ownership(proof: OwnershipProof, pkh: bytes, session_id: bytes,
                     require_signature: bool = False) -> bool:
    """True iff the proof opens ``pkh`` (and, when required, is signed for
    this session)."""
    if proof.pkh != pkh or hash160(proof.pubkey) != pkh:
        return False
    if proof.signature is None:
        return not require_signature
    try:
        pub = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256K1(), proof.pubkey)
        pub.verify(proof.signature, signed_message(pkh, session_id), ec.ECDSA(hashes.SHA256()))
    except (ValueError, InvalidSignature):
        return False
    return True
