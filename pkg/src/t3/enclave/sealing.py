"""Sealed storage: enclave state encrypted under a measurement-bound key."""

from __future__ import annotations

import hashlib
import hmac
import json
import os

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from t3.errors import AuthFail

SEAL_MAGIC = b"T3SEAL01"


def sealing_key(root_key: bytes, measurement: bytes) -> bytes:
    """Stand-in for a CPU sealing key: only this build on this "platform"
    (same attestation root) can derive it."""
    return hmac.new(root_key, b"t3-seal" + measurement, hashlib.sha256).digest()


def seal_blob(key: bytes, data: bytes, label: bytes = b"") -> bytes:
    nonce = os.urandom(12)
    return SEAL_MAGIC + nonce + AESGCM(key).encrypt(nonce, data, SEAL_MAGIC + label)


def unseal_blob(key: bytes, blob: bytes, label: bytes = b"") -> bytes:
    if not blob.startswith(SEAL_MAGIC) or len(blob) < len(SEAL_MAGIC) + 28:
        raise AuthFail("not a sealed blob")
    nonce = blob[8:20]
    try:
        return AESGCM(key).decrypt(nonce, blob[20:], SEAL_MAGIC + label)
    except InvalidTag:
        raise AuthFail("sealed blob failed authentication") from None


def seal_json(key: bytes, obj: dict, label: bytes = b"") -> bytes:
    return seal_blob(key, json.dumps(obj, separators=(",", ":")).encode(), label)


def unseal_json(key: bytes, blob: bytes, label: bytes = b"") -> dict:
    return json.loads(unseal_blob(key, blob, label))
