"""Unified state tree shared by every engine.

Keys are 32-byte digests, values are byte strings of at most 64 KiB. Writes
made while a snapshot is live are recorded in an undo journal, so rollback
costs O(writes) rather than a full copy. Snapshots nest strictly LIFO.

A tree may be layered over a read-only ``base`` tree. The parallel scheduler
uses this to give each worker a private journal over an immutable view.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Optional

from .common import NvmError, ExecutionError

KEY_LEN = 32
MAX_VALUE_LEN = 64 * 1024

_MISSING = object()
_serials = itertools.count(1)


class StateError(NvmError):
    pass


class OversizeValue(StateError, ExecutionError):
    pass


class SnapshotOrderViolation(StateError):
    pass


class DirtyState(StateError):
    pass


class Write(NamedTuple):
    key: bytes
    old: Optional[bytes]
    new: Optional[bytes]


@dataclass(frozen=True)
class Delta:
    """Net writes of one scope, one entry per key, sorted by key."""

    writes: tuple[Write, ...] = ()

    def keys(self) -> list[bytes]:
        return [w.key for w in self.writes]

    def __len__(self) -> int:
        return len(self.writes)

    def __iter__(self) -> Iterator[Write]:
        return iter(self.writes)

    def apply(self, tree: "StateTree") -> None:
        for w in self.writes:
            tree.put(w.key, w.new)

    def revert(self, tree: "StateTree") -> None:
        for w in reversed(self.writes):
            tree.put(w.key, w.old)


@dataclass(frozen=True)
class SnapshotHandle:
    journal_mark: int
    serial: int


class StateTree:
    def __init__(self, base: Optional["StateTree"] = None):
        self._data: dict[bytes, Optional[bytes]] = {}
        self._base = base
        # (key, logical old value, previous local entry or _MISSING)
        self._journal: list[tuple[bytes, Optional[bytes], object]] = []
        self._live: list[SnapshotHandle] = []

    # -- reads ---------------------------------------------------------------

    def get(self, key: bytes) -> Optional[bytes]:
        data = self._data
        if key in data:
            return data[key]
        if self._base is not None:
            return self._base.get(key)
        return None

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def items(self) -> Iterator[tuple[bytes, bytes]]:
        """Present (key, value) pairs in ascending key order."""
        if self._base is None:
            merged: dict[bytes, Optional[bytes]] = self._data
        else:
            merged = dict(self._base.items())
            merged.update(self._data)
        for key in sorted(merged):
            value = merged[key]
            if value is not None:
                yield key, value

    # -- writes --------------------------------------------------------------

    def put(self, key: bytes, value: Optional[bytes]) -> None:
        if len(key) != KEY_LEN:
            raise StateError(f"state key must be {KEY_LEN} bytes, got {len(key)}")
        if value is not None and len(value) > MAX_VALUE_LEN:
            raise OversizeValue(f"value of {len(value)} bytes exceeds {MAX_VALUE_LEN}")
        data = self._data
        if self._live:
            local = data.get(key, _MISSING)
            if local is _MISSING:
                old = self._base.get(key) if self._base is not None else None
            else:
                old = local
            self._journal.append((key, old, local))
        if value is None and self._base is None:
            data.pop(key, None)
        else:
            data[key] = value

    def _restore(self, key: bytes, local: object) -> None:
        if local is _MISSING:
            self._data.pop(key, None)
        else:
            self._data[key] = local  # type: ignore[assignment]

    # -- snapshots -----------------------------------------------------------

    def snapshot(self) -> SnapshotHandle:
        h = SnapshotHandle(len(self._journal), next(_serials))
        self._live.append(h)
        return h

    @property
    def live_snapshots(self) -> int:
        return len(self._live)

    def _pop(self, h: SnapshotHandle) -> None:
        if not self._live or self._live[-1] != h:
            raise SnapshotOrderViolation("handle is not the most recent live snapshot")
        self._live.pop()

    def rollback(self, h: SnapshotHandle) -> None:
        self._pop(h)
        journal = self._journal
        for key, _old, local in reversed(journal[h.journal_mark:]):
            self._restore(key, local)
        del journal[h.journal_mark:]

    def discard(self, h: SnapshotHandle) -> None:
        """Close the scope and keep its writes."""
        self._pop(h)
        if not self._live:
            self._journal.clear()

    def take_delta(self, h: SnapshotHandle) -> Delta:
        if not self._live or self._live[-1] != h:
            raise SnapshotOrderViolation("handle is not the most recent live snapshot")
        first_old: dict[bytes, Optional[bytes]] = {}
        for key, old, _local in self._journal[h.journal_mark:]:
            if key not in first_old:
                first_old[key] = old
        writes = []
        for key in sorted(first_old):
            old, new = first_old[key], self.get(key)
            if old != new:
                writes.append(Write(key, old, new))
        self.discard(h)
        return Delta(tuple(writes))

    # -- whole-tree operations -----------------------------------------------

    def state_root(self) -> bytes:
        if self._live:
            raise DirtyState(f"{len(self._live)} live snapshot(s)")
        h = hashlib.sha256()
        for key, value in self.items():
            h.update(key)
            h.update(len(value).to_bytes(4, "big"))
            h.update(value)
        return h.digest()

    def copy(self) -> "StateTree":
        """Detached copy of the current contents (journal not carried over)."""
        tree = StateTree()
        tree._data = dict(self.items())
        return tree

    def dump(self) -> dict:
        return {"entries": [[k.hex(), v.hex()] for k, v in self.items()]}

    @classmethod
    def load(cls, doc: dict | list) -> "StateTree":
        entries = doc["entries"] if isinstance(doc, dict) else doc
        tree = cls()
        for i, pair in enumerate(entries):
            try:
                key_hex, value_hex = pair
                tree.put(bytes.fromhex(key_hex), bytes.fromhex(value_hex))
            except (TypeError, ValueError, StateError) as exc:
                raise StateError(f"entries[{i}]: {exc}") from None
        return tree

    @classmethod
    def from_items(cls, items: Iterable[tuple[bytes, bytes]]) -> "StateTree":
        tree = cls()
        for k, v in items:
            tree.put(k, v)
        return tree
