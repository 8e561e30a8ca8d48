"""Fixed-trace selection helpers.

Python cannot give microarchitectural guarantees, so the contract here is the
software one: every scan visits every slot exactly once, in index order, with
no early exit, whether or not (and wherever) a match occurs.  ``TouchCounter``
lets tests observe that.
"""

from __future__ import annotations

from typing import Any, Callable, Optional, Sequence, Tuple


class TouchCounter:
    """Counts slot visits; attach one to a scan to audit its trace length."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0

    def reset(self) -> int:
        n, self.count = self.count, 0
        return n


def ct_select_int(flag: bool, a: int, b: int) -> int:
    """Return ``a`` if flag else ``b`` via masking rather than a branch."""
    mask = -int(bool(flag))
    return (a & mask) | (b & ~mask)


def oblivious_index(
    slots: Sequence[Any],
    key: Any,
    key_of: Callable[[Any], Any],
    counter: Optional[TouchCounter] = None,
) -> int:
    """Index of the first slot whose key matches, or -1.

    ``None`` entries are dummy slots and never match.  All slots are visited.
    """
    found = -1
    for i, slot in enumerate(slots):
        match = slot is not None and key_of(slot) == key
        found = ct_select_int(match and found < 0, i, found)
    if counter is not None:
        counter.count += len(slots)
    return found


def oblivious_select(
    slots: Sequence[Any],
    key: Any,
    key_of: Callable[[Any], Any] = lambda s: s[0],
    dummy: Any = None,
    counter: Optional[TouchCounter] = None,
) -> Any:
    """Return the matching element of ``slots`` (or ``dummy``) after a full scan."""
    i = oblivious_index(slots, key, key_of, counter)
    return slots[i] if i >= 0 else dummy


def oblivious_select_with_index(
    slots: Sequence[Any],
    key: Any,
    key_of: Callable[[Any], Any],
    counter: Optional[TouchCounter] = None,
) -> Tuple[int, Any]:
    i = oblivious_index(slots, key, key_of, counter)
    return i, (slots[i] if i >= 0 else None)
