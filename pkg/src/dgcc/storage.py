"""In-memory table store: hash-indexed tables backed by a slab record pool.

Plain tables hold a single record per key; versioned tables keep a chain of
timestamped versions for snapshot reads. A whole-store digest over the sorted
live contents is the equivalence check used by the correctness oracles.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

from .errors import ConstraintError, SchemaError

# Record = fixed-arity tuple of byte-string columns.
Record = tuple


class Key(NamedTuple):
    """Primary key: table id plus fixed-width encoded primary bytes.

    Tuple ordering gives the total order (table id, then lexicographic
    primary) relied on by digests and checkpoints.
    """

    table: int
    primary: bytes


@dataclass(frozen=True)
class TableSchema:
    name: str
    column_widths: tuple[int, ...]
    initial_capacity: int = 64

    def validate(self, record: Record) -> None:
        if len(record) != len(self.column_widths):
            raise SchemaError(
                f"table {self.name!r}: record has {len(record)} columns, "
                f"schema declares {len(self.column_widths)}"
            )
        for i, (col, width) in enumerate(zip(record, self.column_widths)):
            if not isinstance(col, (bytes, bytearray)):
                raise SchemaError(f"table {self.name!r}: column {i} is not bytes")
            if len(col) > width:
                raise SchemaError(
                    f"table {self.name!r}: column {i} holds {len(col)} bytes, "
                    f"width is {width}"
                )


class Slot:
    """One pooled record slot. `value` is a Record for plain tables and a
    newest-first list of Version entries for versioned tables."""

    __slots__ = ("value",)

    def __init__(self) -> None:
        self.value = None


@dataclass
class Version:
    write_ts: int
    record: Optional[Record]  # None marks a tombstone
    committed: bool


class RecordPool:
    """Slab allocator for slots: pre-allocates at startup, grows by doubling.

    Freed slots from deletes are parked until compact() so a slot is never
    reused while a concurrent reader of the old record may still hold it.
    """

    def __init__(self, initial_capacity: int) -> None:
        self._slabs: list[list[Slot]] = []
        self._free: list[Slot] = []
        self._pending: list[Slot] = []
        self._lock = threading.Lock()
        self.live_count = 0
        self._grow(max(1, initial_capacity))

    def _grow(self, size: int) -> None:
        slab = [Slot() for _ in range(size)]
        self._slabs.append(slab)
        self._free.extend(slab)

    @property
    def slab_count(self) -> int:
        return len(self._slabs)

    @property
    def capacity(self) -> int:
        return sum(len(s) for s in self._slabs)

    def alloc(self) -> Slot:
        with self._lock:
            if not self._free:
                self._grow(self.capacity)
            self.live_count += 1
            return self._free.pop()

    def park(self, slot: Slot) -> None:
        """Return a slot after delete; reusable only after compact()."""
        with self._lock:
            self.live_count -= 1
            self._pending.append(slot)

    def compact(self) -> int:
        """Move parked slots back to the free list; returns how many."""
        with self._lock:
            n = len(self._pending)
            for slot in self._pending:
                slot.value = None
            self._free.extend(self._pending)
            self._pending.clear()
            return n


# Sentinel recorded in the checkpoint shadow for keys absent at capture start.
_ABSENT = object()


class Table:
    def __init__(self, table_id: int, schema: TableSchema, versioned: bool = False) -> None:
        self.table_id = table_id
        self.schema = schema
        self.versioned = versioned
        self.index: dict[bytes, Slot] = {}
        self.pool = RecordPool(schema.initial_capacity)

    @property
    def live_count(self) -> int:
        return len(self.index)


class Store:
    """A set of tables addressed by Key. Concurrent access to distinct keys
    is safe; ordering of conflicting access is the caller's job. Digest and
    compaction require a quiesced store."""

    def __init__(self) -> None:
        self.tables: dict[int, Table] = {}
        self._capture: dict[Key, object] | None = None
        self._capture_lock = threading.Lock()

    def create_table(self, table_id: int, schema: TableSchema, versioned: bool = False) -> Table:
        if table_id in self.tables:
            raise SchemaError(f"table id {table_id} already exists")
        table = Table(table_id, schema, versioned)
        self.tables[table_id] = table
        return table

    def table(self, table_id: int) -> Table:
        try:
            return self.tables[table_id]
        except KeyError:
            raise SchemaError(f"unknown table id {table_id}") from None

    # -- plain read/write ---------------------------------------------------

    def get(self, key: Key) -> Optional[Record]:
        table = self.table(key.table)
        slot = table.index.get(key.primary)
        if slot is None:
            return None
        if table.versioned:
            return _latest_committed(slot.value)
        return slot.value

    def put(self, key: Key, record: Record) -> None:
        table = self.table(key.table)
        table.schema.validate(record)
        slot = table.index.get(key.primary)
        if table.versioned:
            if slot is not None and slot.value:
                raise SchemaError("put on a populated versioned key; use mv_install")
            if slot is None:
                slot = table.pool.alloc()
                slot.value = []
                table.index[key.primary] = slot
            slot.value.append(Version(0, record, True))
            return
        self._shadow(key, table, slot)
        if slot is None:
            slot = table.pool.alloc()
            slot.value = record
            table.index[key.primary] = slot
        else:
            slot.value = record

    def insert(self, key: Key, record: Record) -> None:
        table = self.table(key.table)
        table.schema.validate(record)
        if key.primary in table.index:
            raise ConstraintError(f"duplicate insert of {key}")
        if table.versioned:
            raise SchemaError("insert on versioned table; use mv_install")
        self._shadow(key, table, None)
        slot = table.pool.alloc()
        slot.value = record
        table.index[key.primary] = slot

    def delete(self, key: Key) -> None:
        table = self.table(key.table)
        slot = table.index.get(key.primary)
        if slot is None:
            raise ConstraintError(f"delete of missing {key}")
        if table.versioned:
            raise SchemaError("delete on versioned table; use mv_install tombstone")
        self._shadow(key, table, slot)
        del table.index[key.primary]
        table.pool.park(slot)

    def compact(self) -> int:
        """Drain parked slots in every table; call only between batches."""
        return sum(t.pool.compact() for t in self.tables.values())

    # -- versioned access ---------------------------------------------------

    def mv_read(self, key: Key, ts: int) -> Optional[Record]:
        """Committed version with the largest write_ts <= ts, or absent."""
        return self.mv_read_at(key, ts)[0]

    def mv_read_at(self, key: Key, ts: int) -> tuple[Optional[Record], Optional[int]]:
        """Like mv_read but also returns the write_ts that supplied the value
        (None when no version is visible at ts)."""
        table = self.table(key.table)
        if not table.versioned:
            raise SchemaError(f"table {table.schema.name!r} is not versioned")
        slot = table.index.get(key.primary)
        if slot is None:
            return None, None
        for version in slot.value:  # newest first
            if version.committed and version.write_ts <= ts:
                return version.record, version.write_ts
        return None, None

    def mv_latest_committed_ts(self, key: Key) -> Optional[int]:
        table = self.table(key.table)
        if not table.versioned:
            raise SchemaError(f"table {table.schema.name!r} is not versioned")
        slot = table.index.get(key.primary)
        if slot is None:
            return None
        for version in slot.value:
            if version.committed:
                return version.write_ts
        return None

    def mv_install(self, key: Key, ts: int, record: Optional[Record], committed: bool = True) -> None:
        """Append a version (record=None is a tombstone). Chains stay strictly
        decreasing in write_ts; at most one uncommitted version sits at head."""
        table = self.table(key.table)
        if not table.versioned:
            raise SchemaError(f"table {table.schema.name!r} is not versioned")
        if record is not None:
            table.schema.validate(record)
        slot = table.index.get(key.primary)
        if slot is None:
            slot = table.pool.alloc()
            slot.value = []
            table.index[key.primary] = slot
        chain: list[Version] = slot.value
        if chain:
            head = chain[0]
            if head.write_ts >= ts:
                raise ConstraintError(
                    f"version {ts} for {key} not newer than head {head.write_ts}"
                )
            if not head.committed:
                raise ConstraintError(f"uncommitted version already at head of {key}")
        chain.insert(0, Version(ts, record, committed))

    def mv_resolve_head(self, key: Key, commit: bool) -> None:
        """Commit or discard the uncommitted head version."""
        table = self.table(key.table)
        chain: list[Version] = table.index[key.primary].value
        if not chain or chain[0].committed:
            raise ConstraintError(f"no uncommitted head for {key}")
        if commit:
            chain[0].committed = True
        else:
            chain.pop(0)

    def mv_gc(self, key: Key, watermark: int) -> int:
        """Drop versions strictly older than the newest committed version
        <= watermark; reads at ts >= watermark are unaffected."""
        table = self.table(key.table)
        if not table.versioned:
            raise SchemaError(f"table {table.schema.name!r} is not versioned")
        slot = table.index.get(key.primary)
        if slot is None:
            return 0
        chain: list[Version] = slot.value
        keep_from = None
        for i, version in enumerate(chain):
            if version.committed and version.write_ts <= watermark:
                keep_from = i
                break
        if keep_from is None or keep_from == len(chain) - 1:
            return 0
        removed = len(chain) - keep_from - 1
        del chain[keep_from + 1:]
        return removed

    def mv_gc_all(self, watermark: int) -> int:
        removed = 0
        for table in self.tables.values():
            if not table.versioned:
                continue
            for primary in list(table.index):
                removed += self.mv_gc(Key(table.table_id, primary), watermark)
        return removed

    # -- digests, iteration, cloning ---------------------------------------

    def live_items(self) -> Iterator[tuple[Key, Record]]:
        """Sorted (key, latest committed record) pairs across all tables."""
        for table_id in sorted(self.tables):
            table = self.tables[table_id]
            for primary in sorted(table.index):
                slot = table.index[primary]
                if table.versioned:
                    record = _latest_committed(slot.value)
                    if record is None:
                        continue
                else:
                    record = slot.value
                yield Key(table_id, primary), record

    def snapshot_digest(self) -> bytes:
        """Deterministic digest of the multiset of live (key, record) pairs.

        Requires a quiesced store (no in-flight writes).
        """
        h = hashlib.sha256(b"dgcc-store-v1")
        for key, record in self.live_items():
            h.update(struct.pack(">IH", key.table, len(key.primary)))
            h.update(key.primary)
            h.update(struct.pack(">H", len(record)))
            for col in record:
                h.update(struct.pack(">I", len(col)))
                h.update(col)
        return h.digest()

    def clone(self) -> "Store":
        """Deep copy of schemas and live contents (not pool layout)."""
        other = Store()
        for table_id in sorted(self.tables):
            table = self.tables[table_id]
            new = other.create_table(table_id, table.schema, table.versioned)
            for primary, slot in table.index.items():
                fresh = new.pool.alloc()
                if table.versioned:
                    fresh.value = [Version(v.write_ts, v.record, v.committed) for v in slot.value]
                else:
                    fresh.value = slot.value
                new.index[primary] = fresh
        return other

    # -- checkpoint capture -------------------------------------------------
    # While a capture is active, the first overwrite/insert/delete of a key
    # preserves its capture-time record so checkpoint writers see the state
    # as of capture start even though commits continue.

    def begin_capture(self) -> None:
        if self._capture is not None:
            raise ConstraintError("capture already active")
        self._capture = {}

    def end_capture(self) -> None:
        if self._capture is None:
            raise ConstraintError("no active capture")
        self._capture = None

    def _shadow(self, key: Key, table: Table, slot: Optional[Slot]) -> None:
        shadow = self._capture
        if shadow is None:
            return
        with self._capture_lock:
            if key not in shadow:
                shadow[key] = _ABSENT if slot is None else slot.value

    def capture_items(self) -> Iterator[tuple[Key, Record]]:
        """Live items as of begin_capture(). Valid only while capturing.

        Writers publish the old value to the shadow before touching the slot,
        so reading the slot first and the shadow second can never observe a
        post-capture value without the shadow overriding it.
        """
        shadow = self._capture
        if shadow is None:
            raise ConstraintError("no active capture")
        seen = set()
        for table_id in sorted(self.tables):
            table = self.tables[table_id]
            for primary in sorted(table.index):
                key = Key(table_id, primary)
                seen.add(key)
                slot = table.index.get(primary)
                live = None if slot is None else slot.value
                with self._capture_lock:
                    value = shadow.get(key, live)
                if value is None or value is _ABSENT:
                    continue
                yield key, value
        for key in sorted(k for k in shadow if k not in seen):
            value = shadow[key]
            if value is not _ABSENT:
                yield key, value


def _latest_committed(chain: list[Version]) -> Optional[Record]:
    for version in chain:
        if version.committed:
            return version.record
    return None
