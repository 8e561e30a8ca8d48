"""Exception hierarchy shared by every layer of the service."""


class T3Error(Exception):
    """Base class; ``code`` is the wire error code sent in ERROR frames."""

    code = 0x0001


class InvalidParams(T3Error, ValueError):
    code = 0x0002


# ORAM
class IntegrityViolation(T3Error):
    """Bucket MAC or Merkle membership check failed: storage was tampered with."""

    code = 0x0010


class StashOverflow(T3Error):
    code = 0x0011


# enclave boundary / channel
class QuoteInvalid(T3Error):
    code = 0x0020


class StaleNonce(T3Error):
    code = 0x0021


class AuthFail(T3Error):
    code = 0x0022


class ReplayDetected(T3Error):
    code = 0x0023


class BadEncoding(T3Error, ValueError):
    code = 0x0024


class BadProof(T3Error):
    code = 0x0025


# records / blocks
class BlockFull(T3Error):
    code = 0x0030


class MalformedPayload(T3Error, ValueError):
    code = 0x0031


# chain
class BadLink(T3Error):
    code = 0x0040


class BadPow(T3Error):
    code = 0x0041


class BadMerkleRoot(T3Error):
    code = 0x0042


class ChainTampered(T3Error):
    code = 0x0043


class NonceExhausted(T3Error):
    code = 0x0044


# store
class Unavailable(T3Error):
    code = 0x0050


class DuplicateRead(T3Error):
    code = 0x0051


class QueueNotEmpty(T3Error):
    code = 0x0052
