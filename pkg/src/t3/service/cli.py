"""``t3d``: initialize a state directory or serve it."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from typing import List, Optional

from t3.enclave.attestation import attest_root_from_env
from t3.errors import T3Error
from t3.service.server import init_state, open_service
from t3.store import StoreConfig, read_config


def _config(args: argparse.Namespace) -> StoreConfig:
    base = read_config(args.config) if args.config else {}
    overrides = {"n": args.n, "z": args.z, "strategy": args.strategy, "capacity": args.capacity,
                 "max_out": args.max_out, "delta": args.delta, "delta_max": args.delta_max,
                 "client_delta": args.client_delta or None,
                 "reject_duplicates": True if args.duplicates == "reject" else None,
                 "require_signature": args.require_signature or None}
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "z" not in base:
        base["z"] = 4 if base.get("strategy", "path") == "path" else 2
    return StoreConfig.from_dict(base)


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="t3d", description="Oblivious UTXO server")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("init", help="build a state directory from a block directory")
    p.add_argument("--chain", required=True, help="directory of <height>.hex blocks")
    p.add_argument("--state", required=True)
    p.add_argument("--config", help="JSON file with store settings")
    p.add_argument("--n", type=int, help="number of ORAM blocks (power of two)")
    p.add_argument("--z", type=int)
    p.add_argument("--strategy", choices=["path", "circuit"])
    p.add_argument("--capacity", type=int, help="records per ORAM block")
    p.add_argument("--max-out", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--delta-max", type=int)
    p.add_argument("--client-delta", action="store_true")
    p.add_argument("--duplicates", choices=["allow", "reject"])
    p.add_argument("--require-signature", action="store_true")
    p.add_argument("--seed", type=int, help="seed leaf sampling (testing only)")

    s = sub.add_parser("serve", help="serve an initialized state directory")
    s.add_argument("--state", required=True)
    s.add_argument("--listen", default="127.0.0.1:8833")
    s.add_argument("--readers", type=int, default=4)
    s.add_argument("--chain", help="block directory to follow (default: the one used at init)")
    s.add_argument("--poll", type=float, default=1.0, help="seconds between daemon polls")

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        root = attest_root_from_env()
        if args.cmd == "init":
            cfg = _config(args)
            store = init_state(args.chain, cfg, args.state, root, seed=args.seed)
            print(json.dumps({"state": args.state, "height": store.chain.height,
                              "interval": store.interval, "block_full": store.stats.block_full,
                              "config": asdict(cfg)}))
            return 0
        svc = open_service(args.state, root, args.readers, args.poll, args.chain)
        svc.serve_forever(args.listen)
        return 0
    except (T3Error, OSError, ValueError) as e:
        print(f"t3d: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
