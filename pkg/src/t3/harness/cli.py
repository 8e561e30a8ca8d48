"""``t3-harness``: generate chains, replay oracles, analyze traces, benchmark.
All reports are CSV on stdout."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from t3.chain.prune import prune
from t3.chain.source import FileChainSource
from t3.errors import T3Error
from t3.harness import bench
from t3.harness.gen import DEFAULT_DISTRIBUTION, coverage, gen_chain, truth_from_json
from t3.harness.oracles import OracleUtxo
from t3.harness.trace import analyze, read_trace
from t3.oram.params import Strategy


def _csv(rows: List[Dict[str, object]]) -> None:
    if not rows:
        return
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


def parse_distribution(text: str) -> Dict[int, float]:
    out = {}
    for part in text.split(","):
        k, _, p = part.partition(":")
        out[int(k.rstrip("+"))] = float(p)
    return out


def cmd_gen(a: argparse.Namespace) -> int:
    dist = parse_distribution(a.dist) if a.dist else DEFAULT_DISTRIBUTION
    g = gen_chain(a.seed, a.blocks, a.txs_per_block, a.outputs_per_block, dist,
                  spend_ratio=a.spend_ratio)
    g.write(a.out)
    _csv([{"blocks": len(g.blocks), "addresses": len(g.addresses), "outputs": g.total_outputs,
           "spends": g.total_spends, "live_utxos": g.live_count(),
           "zero_addresses": len(g.zero_addresses),
           "coverage_max_out_%d" % a.max_out: round(coverage(g.truth, a.max_out), 6)}])
    return 0


def cmd_oracle(a: argparse.Namespace) -> int:
    d = Path(a.chain)
    src = FileChainSource(d / "blocks" if (d / "blocks").is_dir() else d)
    oracle = OracleUtxo()
    for h in range(1, src.get_block_count() + 1):
        oracle.apply(prune(src.get_block(h), h))
    snap = oracle.snapshot()
    row: Dict[str, object] = {"addresses": len(snap), "utxos": sum(len(v) for v in snap.values())}
    truth_file = d / "truth.json"
    if truth_file.exists():
        truth = {k: v for k, v in truth_from_json(json.loads(truth_file.read_text())).items() if v}
        row["matches_truth"] = truth == snap
    _csv([row])
    return 0 if row.get("matches_truth", True) else 1


def cmd_trace(a: argparse.Namespace) -> int:
    rep = analyze(read_trace(a.log), a.leaves, a.bins, a.level, a.alpha)
    _csv([rep.row()])
    return 0


def cmd_bench(a: argparse.Namespace) -> int:
    rows = []
    for n in (int(x) for x in a.n.split(",")):
        for s in a.strategy.split(","):
            strat = Strategy.parse(s)
            o = bench.build(n, strat, a.payload, a.seed)
            if a.kind in ("latency", "all"):
                rows.append(bench.latency(n, strat, a.ops, a.warmup, a.payload, a.seed, oram=o))
            if a.kind in ("scaling", "all"):
                ctx = [int(x) for x in a.contexts.split(",")]
                rows.extend(bench.reader_scaling(n, strat, ctx, a.ops, a.payload, a.seed, oram=o))
            del o
    lat = [r for r in rows if isinstance(r, bench.LatencyRow)]
    sc = [r for r in rows if isinstance(r, bench.ScalingRow)]
    sys.stdout.write(bench.to_csv(lat))
    if lat and sc:
        sys.stdout.write("\n")
    sys.stdout.write(bench.to_csv(sc))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="t3-harness")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a synthetic chain with ground truth")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--blocks", type=int, default=201, help="including genesis")
    g.add_argument("--txs-per-block", type=int, default=5)
    g.add_argument("--outputs-per-block", type=int, default=25)
    g.add_argument("--spend-ratio", type=float, default=0.4)
    g.add_argument("--dist", help='UTXO-count histogram, e.g. "1:0.7,2:0.22,3:0.07,4:0.01"')
    g.add_argument("--max-out", type=int, default=2, help="for the coverage column")
    g.set_defaults(fn=cmd_gen)

    o = sub.add_parser("oracle", help="replay a chain into the plaintext UTXO oracle")
    o.add_argument("--chain", required=True)
    o.set_defaults(fn=cmd_oracle)

    t = sub.add_parser("trace", help="uniformity report for a leaf access log")
    t.add_argument("--log", required=True, help="CSV with interval,bid,level,leaf")
    t.add_argument("--leaves", type=int, required=True)
    t.add_argument("--bins", type=int, default=256)
    t.add_argument("--level", type=int, default=0)
    t.add_argument("--alpha", type=float, default=0.01)
    t.set_defaults(fn=cmd_trace)

    b = sub.add_parser("bench", help="latency and reader-scaling benchmarks")
    b.add_argument("--kind", choices=["latency", "scaling", "all"], default="all")
    b.add_argument("--n", default="65536", help="comma-separated")
    b.add_argument("--strategy", default="path,circuit")
    b.add_argument("--ops", type=int, default=1000)
    b.add_argument("--warmup", type=int, default=100)
    b.add_argument("--contexts", default="1,2,4")
    b.add_argument("--payload", type=int, default=68)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(fn=cmd_bench)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (T3Error, OSError, ValueError) as e:
        print(f"t3-harness: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
