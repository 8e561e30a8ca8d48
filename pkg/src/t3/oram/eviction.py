"""Eviction strategies over plaintext path contents.

Both functions are pure: they take the blocks currently held (stash and/or the
fetched path) and return the new bucket contents for the path plus whatever
must stay in the stash.  Depth 0 is the root bucket, depth ``height`` the leaf.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

from t3.oram.block import OramBlock

Buckets = List[List[OramBlock]]


def deepest_depth(block_leaf: int, path_leaf: int, height: int) -> int:
    """Deepest depth on the path to ``path_leaf`` that also lies on ``block_leaf``'s path."""
    return height - (block_leaf ^ path_leaf).bit_length()


def path_evict(blocks: Sequence[OramBlock], leaf: int, height: int,
               z: int) -> Tuple[Buckets, List[OramBlock]]:
    """Greedy Path-ORAM write-back: every block goes as deep as its leaf allows."""
    by_depth: List[List[OramBlock]] = [[] for _ in range(height + 1)]
    for b in blocks:
        by_depth[height - (b.leaf ^ leaf).bit_length()].append(b)
    buckets: Buckets = [[] for _ in range(height + 1)]
    pool: List[OramBlock] = []
    for d in range(height, -1, -1):
        pool.extend(by_depth[d])
        if pool:
            buckets[d] = pool[-z:]
            del pool[-z:]
    return buckets, pool


def reverse_lex_leaf(counter: int, height: int) -> int:
    """Eviction leaf number ``counter`` in reverse-lexicographic order."""
    g = counter % (1 << height)
    out = 0
    for _ in range(height):
        out = (out << 1) | (g & 1)
        g >>= 1
    return out


def circuit_evict(stash: Sequence[OramBlock], path: Buckets, leaf: int, height: int,
                  z: int) -> Tuple[Buckets, List[OramBlock]]:
    """One Circuit-ORAM eviction pass along the path to ``leaf``.

    Position 0 is the stash, positions 1..height+1 are depths 0..height.  Two
    metadata scans (deepest source, then target) drive a single root-to-leaf
    pass that carries at most one block at a time.
    """
    levels = height + 2
    held: List[List[OramBlock]] = [list(stash)] + [list(b) for b in path]

    def depth_pos(b: OramBlock) -> int:
        return height - (b.leaf ^ leaf).bit_length() + 1

    # prepare deepest
    deepest: List[Optional[int]] = [None] * levels
    src: Optional[int] = None
    goal = -1
    for i in range(levels):
        if i > 0 and goal >= i:
            deepest[i] = src
        if held[i]:
            l = max(depth_pos(b) for b in held[i])
            if l > goal:
                goal, src = l, i

    # prepare target
    target: List[Optional[int]] = [None] * levels
    dest: Optional[int] = None
    src = None
    for i in range(levels - 1, -1, -1):
        if i == src:
            target[i], dest, src = dest, None, None
        has_empty = i > 0 and len(held[i]) < z
        if ((dest is None and has_empty) or target[i] is not None) and deepest[i] is not None:
            src, dest = deepest[i], i

    # evict once, carrying one block
    hold: Optional[OramBlock] = None
    hold_dest: Optional[int] = None
    for i in range(levels):
        towrite = None
        if hold is not None and i == hold_dest:
            towrite, hold, hold_dest = hold, None, None
        if target[i] is not None:
            bucket = held[i]
            k = max(range(len(bucket)), key=lambda j: depth_pos(bucket[j]))
            hold = bucket.pop(k)
            hold_dest = target[i]
        if towrite is not None:
            held[i].append(towrite)
    assert hold is None, "circuit eviction left a block in flight"
    return held[1:], held[0]
