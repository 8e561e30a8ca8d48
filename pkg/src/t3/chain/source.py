"""Local-daemon-shaped block source backed by a directory of hex files."""

from __future__ import annotations

from pathlib import Path
from typing import Union

from t3.chain.tx import Block


class FileChainSource:
    """``<dir>/<height:08d>.hex`` per block.  Mirrors the two daemon calls
    the ingest loop needs: block count and raw block by height."""

    def __init__(self, directory: Union[str, Path]):
        self.dir = Path(directory)

    def _path(self, height: int) -> Path:
        return self.dir / f"{height:08d}.hex"

    def get_block_count(self) -> int:
        """Height of the highest available block, or -1 if none."""
        h = -1
        while self._path(h + 1).exists():
            h += 1
        return h

    def get_block_hex(self, height: int) -> str:
        p = self._path(height)
        if not p.exists():
            raise KeyError(f"no block at height {height}")
        return p.read_text().strip()

    def get_block(self, height: int) -> Block:
        return Block.from_hex(self.get_block_hex(height))

    def put_block(self, height: int, block: Block) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self._path(height).with_suffix(".tmp")
        tmp.write_text(block.serialize().hex() + "\n")
        tmp.replace(self._path(height))
