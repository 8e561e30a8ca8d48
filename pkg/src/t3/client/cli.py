"""``t3``: query UTXOs for owned addresses, sync headers."""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from t3.client.client import (T3Client, load_keys, load_local_headers,
                              save_local_headers, sync_headers)
from t3.enclave.attestation import attest_root_from_env, measure
from t3.enclave.ownership import OwnershipProof
from t3.errors import BadEncoding, BadProof, T3Error

EXIT_ERROR = 1
EXIT_PROOF = 3
EXIT_STALE = 4


def _parse_pkh(text: str) -> bytes:
    b = bytes.fromhex(text)
    if len(b) != 20:
        raise BadEncoding(f"{text}: a pkh is 20 bytes of hex")
    return b


def _client(args: argparse.Namespace) -> T3Client:
    m = bytes.fromhex(args.measurement) if args.measurement else measure()
    return T3Client(args.server, attest_root_from_env(), m, args.timeout)


def cmd_query(args: argparse.Namespace) -> int:
    keys = load_keys(args.keys)
    pkhs = [_parse_pkh(p) for p in args.pkh] or list(keys)
    local = load_local_headers(args.headers) if args.headers else None
    fallback = next(iter(keys.values())).pubkey if keys else b"\x00"
    rc = 0
    out = []
    with _client(args) as c:
        for pkh in pkhs:
            key = keys.get(pkh)
            if key is not None:
                proof = key.proof(c.session.session_id, args.sign)
            else:
                # no key opens this address; the server still gets to say no
                proof = OwnershipProof(pkh, fallback)
            try:
                res = c.query_proof(proof, args.delta)
            except BadProof as e:
                print(f"t3: {pkh.hex()}: {e}", file=sys.stderr)
                rc = EXIT_PROOF
                continue
            if local is not None and res.height < local.height:
                print(f"t3: server state at height {res.height} is behind local tip "
                      f"{local.height}", file=sys.stderr)
                rc = rc or EXIT_STALE
            for r in res.real():
                if args.json:
                    out.append({"pkh": pkh.hex(), "txid": r.txid[::-1].hex(), "vout": r.vout,
                                "amount": r.amount, "height": r.height,
                                "interval": res.interval})
                else:
                    print(f"{r.txid[::-1].hex()}\t{r.vout}\t{r.amount}\t{r.height}")
    if args.json:
        print(json.dumps(out))
    return rc


def cmd_headers(args: argparse.Namespace) -> int:
    local = load_local_headers(args.out)
    if args.file:
        from t3.chain.headerchain import HeaderChain

        src = HeaderChain.from_bytes(open(args.file, "rb").read())
        added = 0
        for h in src.headers[len(local):]:
            local.append(h)
            added += 1
    else:
        with _client(args) as c:
            added = sync_headers(local, c)
    save_local_headers(args.out, local)
    print(f"height={local.height} added={added}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="t3", description="Oblivious UTXO client")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--server", default="127.0.0.1:8833")
        p.add_argument("--measurement", help="expected enclave measurement (hex); "
                                             "default: this build's")
        p.add_argument("--timeout", type=float, default=60.0)

    q = sub.add_parser("query", help="fetch UTXOs for addresses")
    common(q)
    q.add_argument("--keys", required=True, help="lines of hex pubkey[,hex privkey]")
    q.add_argument("--json", action="store_true")
    q.add_argument("--sign", action="store_true", help="send signature proofs when possible")
    q.add_argument("--delta", type=int, default=0, help="blocks to read (client-delta servers)")
    q.add_argument("--headers", help="local header file used for the freshness check")
    q.add_argument("pkh", nargs="*", help="20-byte hex; default: every key in the file")
    q.set_defaults(fn=cmd_query)

    h = sub.add_parser("headers-sync", help="verify and store the header chain locally")
    common(h)
    h.add_argument("--out", required=True, help="local header file (raw 80-byte headers)")
    h.add_argument("--file", help="read headers from a file instead of the server")
    h.set_defaults(fn=cmd_headers)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except BadProof as e:
        print(f"t3: {e}", file=sys.stderr)
        return EXIT_PROOF
    except (T3Error, OSError, ValueError) as e:
        print(f"t3: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
