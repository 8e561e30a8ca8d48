"""ORAM configuration and the recursion layout it implies."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import List, Optional

from t3.errors import InvalidParams

LEAF_BYTES = 4
TOP_MAP_BYTES = 8192


class Strategy(str, enum.Enum):
    PATH = "path"
    CIRCUIT = "circuit"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        v = value.lower().replace("-", "").replace("_", "")
        if v in ("path", "pathoram"):
            return cls.PATH
        if v in ("circuit", "circuitoram"):
            return cls.CIRCUIT
        raise InvalidParams(f"unknown strategy {value!r}")


MIN_Z = {Strategy.PATH: 4, Strategy.CIRCUIT: 2}


def is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def next_pow2(n: int) -> int:
    return 1 << max(1, (n - 1).bit_length())


@dataclass(frozen=True)
class OramParams:
    """Shape of one recursive ORAM.

    ``max_stash`` defaults to ``2 * log2(N) * Z`` blocks.
    """

    capacity_n: int
    bucket_z: int = 4
    payload_bytes: int = 64
    strategy: Strategy = Strategy.PATH
    recursion_chi: int = 128
    max_stash: Optional[int] = None
    top_map_bytes: int = TOP_MAP_BYTES

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        n, z = self.capacity_n, self.bucket_z
        if not isinstance(n, int) or n < 2 or not is_pow2(n):
            raise InvalidParams(f"capacity_n must be a power of two >= 2, got {n!r}")
        if n > 1 << 32:
            raise InvalidParams("capacity_n exceeds 32-bit block ids")
        if z < MIN_Z[self.strategy]:
            raise InvalidParams(
                f"{self.strategy.value} ORAM needs Z >= {MIN_Z[self.strategy]}, got {z}"
            )
        if self.payload_bytes < 1:
            raise InvalidParams("payload_bytes must be positive")
        if self.recursion_chi < 2:
            raise InvalidParams("recursion_chi must be >= 2")
        if self.top_map_bytes < 2 * LEAF_BYTES:
            raise InvalidParams("top map budget too small")
        if self.max_stash is None:
            object.__setattr__(self, "max_stash", default_max_stash(n, z))
        elif self.max_stash < 1:
            raise InvalidParams("max_stash must be positive")

    @property
    def height(self) -> int:
        return self.capacity_n.bit_length() - 1

    @property
    def num_buckets(self) -> int:
        return 2 * self.capacity_n - 1

    @property
    def path_slots(self) -> int:
        return (self.height + 1) * self.bucket_z

    def for_map_level(self, n_blocks: int) -> "OramParams":
        """Params of a position-map tree holding ``n_blocks`` blocks of chi leaves."""
        return replace(
            self,
            capacity_n=n_blocks,
            payload_bytes=self.recursion_chi * LEAF_BYTES,
            max_stash=None,
        )

    def map_tree_sizes(self) -> List[int]:
        """Block counts of the position-map trees, nearest-to-data first.

        Recursion stops once the remaining map fits the plaintext budget.
        """
        sizes: List[int] = []
        entries = self.capacity_n
        while entries * LEAF_BYTES > self.top_map_bytes:
            blocks = next_pow2(-(-entries // self.recursion_chi))
            if blocks >= entries:
                raise InvalidParams("recursion_chi too small to shrink the position map")
            sizes.append(blocks)
            entries = blocks
        return sizes

    def top_map_entries(self) -> int:
        sizes = self.map_tree_sizes()
        return sizes[-1] if sizes else self.capacity_n


def default_max_stash(n: int, z: int) -> int:
    return 2 * (n.bit_length() - 1) * z
