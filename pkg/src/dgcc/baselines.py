"""Reference concurrency control engines: strict two-phase locking,
optimistic validation, and multiversion snapshot isolation.

These engines run the same stored procedures as the dependency-graph
engine but resolve contention dynamically, so they can abort and retry.
Each worker thread owns one in-flight transaction end to end.  Retries
reuse the transaction's original timestamp so priority never changes.

Abort causes are counted per protocol:

* ``deadlock``       2PL victim picked by the wait-for-graph detector
* ``validation``     OCC backward validation failure
* ``write_conflict`` MVCC first-committer-wins rejection
* ``condition``      a condition-check piece returned false (never retried)
"""

from __future__ import annotations

import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .errors import (
    ConstraintError,
    DeadlockAbort,
    EngineError,
    ValidationAbort,
    WriteConflictAbort,
)
from .storage import Key, Record, Store
from .txmodel import (
    AccessEvent,
    ChoppedTransaction,
    PieceKind,
    ProcedureRegistry,
    Transaction,
    TransactionPiece,
    chop,
)
from .verify import COMMITTED, CONDITION_FAILED

logger = logging.getLogger(__name__)

SHARED = "S"
EXCLUSIVE = "X"

_DELETED = object()  # buffered-delete marker


class TimestampCounter:
    """Single shared source of commit/read stamps for OCC and MVCC.

    Every stamp handed out is unique and strictly increasing; both
    properties are asserted so a miswired second counter fails loudly.
    """

    def __init__(self, start: int = 1) -> None:
        self._next = start
        self._last = start - 1
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            value = self._next
            self._next += 1
            if value <= self._last:
                raise EngineError("timestamp counter went backwards")
            self._last = value
            return value

    @property
    def last_issued(self) -> int:
        with self._lock:
            return self._last


class _LockEntry:
    __slots__ = ("mode", "holders", "queue", "cond")

    def __init__(self, stripe_lock: threading.Lock) -> None:
        self.mode: Optional[str] = None
        self.holders: set[int] = set()
        # FIFO of (ts, mode); lock upgrades jump to the front.
        self.queue: deque[tuple[int, str]] = deque()
        self.cond = threading.Condition(stripe_lock)


class LockTable:
    """Striped per-key S/X lock table with FIFO waiting.

    Deadlock handling is decentralized: a waiter that has blocked for
    longer than ``detect_delay`` seconds snapshots the wait-for graph
    and, if it finds a cycle, marks the youngest transaction in the
    cycle as the victim.  The victim's wait raises DeadlockAbort.
    """

    def __init__(self, stripes: int = 64, detect_delay: float = 0.002) -> None:
        self.detect_delay = detect_delay
        self._stripe_locks = [threading.Lock() for _ in range(stripes)]
        self._stripe_maps: list[dict[Key, _LockEntry]] = [{} for _ in range(stripes)]
        self._victims: set[int] = set()
        self._victims_lock = threading.Lock()
        self.deadlocks_resolved = 0

    def _stripe_of(self, key: Key) -> int:
        return hash(key) % len(self._stripe_locks)

    def _is_victim(self, ts: int) -> bool:
        with self._victims_lock:
            return ts in self._victims

    def clear_victim(self, ts: int) -> None:
        with self._victims_lock:
            self._victims.discard(ts)

    @staticmethod
    def _grantable(entry: _LockEntry, ts: int, mode: str) -> bool:
        if ts in entry.holders:
            if mode == SHARED or entry.mode == EXCLUSIVE:
                return True  # re-entry, or X already covers S
            # S -> X upgrade is legal only for a sole holder.
            return entry.holders == {ts}
        if entry.queue and entry.queue[0][0] != ts:
            return False  # FIFO: only the head of the queue may be admitted
        if not entry.holders:
            return True
        return entry.mode == SHARED and mode == SHARED

    def acquire(self, ts: int, key: Key, mode: str) -> None:
        """Block until granted (FIFO order) or raise DeadlockAbort."""
        stripe = self._stripe_of(key)
        lock = self._stripe_locks[stripe]
        with lock:
            entry = self._stripe_maps[stripe].setdefault(key, _LockEntry(lock))
            if self._grantable(entry, ts, mode):
                self._grant(entry, ts, mode)
                return
            if ts in entry.holders:
                entry.queue.appendleft((ts, mode))  # upgrade goes first
            else:
                entry.queue.append((ts, mode))
            try:
                while True:
                    if self._is_victim(ts):
                        raise DeadlockAbort(f"transaction {ts} chosen as deadlock victim")
                    if self._grantable(entry, ts, mode):
                        entry.queue.remove((ts, mode))
                        self._grant(entry, ts, mode)
                        return
                    got_signal = entry.cond.wait(self.detect_delay)
                    if not got_signal and not self._is_victim(ts):
                        lock.release()
                        try:
                            self._detect(ts)
                        finally:
                            lock.acquire()
            except DeadlockAbort:
                if (ts, mode) in entry.queue:
                    entry.queue.remove((ts, mode))
                entry.cond.notify_all()
                raise

    def _grant(self, entry: _LockEntry, ts: int, mode: str) -> None:
        entry.holders.add(ts)
        if mode == EXCLUSIVE:
            entry.mode = EXCLUSIVE
        elif entry.mode is None:
            entry.mode = SHARED
        entry.cond.notify_all()  # let queued compatible readers cascade in

    def release_all(self, ts: int, keys: list[Key]) -> None:
        for key in keys:
            stripe = self._stripe_of(key)
            lock = self._stripe_locks[stripe]
            with lock:
                entry = self._stripe_maps[stripe].get(key)
                if entry is None or ts not in entry.holders:
                    continue
                entry.holders.discard(ts)
                if not entry.holders:
                    entry.mode = None
                elif entry.mode == EXCLUSIVE:
                    # The departing writer was the sole X holder.
                    entry.mode = SHARED
                entry.cond.notify_all()

    def _detect(self, start: int) -> None:
        """Look for a wait cycle involving ``start`` and kill the youngest
        member.

        All stripe locks are taken together (waiters block inside
        ``cond.wait`` and hold none of them), so the snapshot is a
        consistent cut: any cycle it shows is a real deadlock at that
        instant, never an artifact of a rollback racing the scan.  The
        victim is still parked on its condition while we hold its
        stripe, so marking it and notifying here cannot miss.
        """
        for lock in self._stripe_locks:
            lock.acquire()
        try:
            edges: dict[int, set[int]] = {}
            waiting_at: dict[int, _LockEntry] = {}
            for entries in self._stripe_maps:
                for entry in entries.values():
                    ahead: list[int] = []
                    for waiter, _mode in entry.queue:
                        deps = edges.setdefault(waiter, set())
                        deps.update(h for h in entry.holders if h != waiter)
                        deps.update(a for a in ahead if a != waiter)
                        ahead.append(waiter)
                        waiting_at[waiter] = entry
            cycle = self._find_cycle(edges, start)
            if not cycle:
                return
            victim = max(cycle)
            with self._victims_lock:
                if victim in self._victims:
                    return
                self._victims.add(victim)
                self.deadlocks_resolved += 1
            logger.debug("deadlock cycle %s, victim %d", cycle, victim)
            entry = waiting_at.get(victim)
            if entry is not None:
                entry.cond.notify_all()
        finally:
            for lock in reversed(self._stripe_locks):
                lock.release()

    @staticmethod
    def _find_cycle(edges: dict[int, set[int]], start: int) -> Optional[list[int]]:
        path: list[int] = []
        on_path: set[int] = set()
        done: set[int] = set()

        def dfs(node: int) -> Optional[list[int]]:
            path.append(node)
            on_path.add(node)
            for nxt in sorted(edges.get(node, ())):
                if nxt in on_path:
                    return path[path.index(nxt):]
                if nxt not in done:
                    found = dfs(nxt)
                    if found:
                        return found
            path.pop()
            on_path.discard(node)
            done.add(node)
            return None

        return dfs(start)


@dataclass
class BaselineResult:
    """Outcome of running one batch through a baseline engine."""

    outcomes: dict[int, str]
    abort_events: dict[str, int]
    retries: int
    commit_order: list[int]
    finished_at: dict[int, float]

    @property
    def committed(self) -> int:
        return sum(1 for o in self.outcomes.values() if o == COMMITTED)


class _AttemptContext:
    """Read/write surface handed to procedure bodies for one attempt.

    Subclasses implement the protocol-specific access rules.  Writes are
    always buffered privately; install happens at commit, so an aborted
    attempt leaves the store untouched (2PL installs under held locks
    but also defers them to commit for the same reason).
    """

    def __init__(self, store: Store, chopped: ChoppedTransaction, audit: bool) -> None:
        self.store = store
        self.chopped = chopped
        self.audit = audit
        self.buffer: dict[Key, object] = {}
        self.events: list[AccessEvent] = []
        self.piece: Optional[TransactionPiece] = None

    # -- declared-set auditing ------------------------------------------
    def _check_read(self, key: Key) -> None:
        if self.audit and self.piece is not None and key not in self.piece.accessset:
            raise EngineError(
                f"piece {self.piece.piece_id} read undeclared key {key}"
            )

    def _check_write(self, key: Key) -> None:
        if self.audit and self.piece is not None and key not in self.piece.writeset:
            raise EngineError(
                f"piece {self.piece.piece_id} wrote undeclared key {key}"
            )

    # -- body-facing API -------------------------------------------------
    def read(self, key: Key) -> Optional[Record]:
        self._check_read(key)
        if key in self.buffer:
            value = self.buffer[key]
            return None if value is _DELETED else value  # type: ignore[return-value]
        record, version = self._storage_read(key)
        self.events.append(
            AccessEvent(self.chopped.txn.ts, "r", key, version,
                        self.piece.index if self.piece else 0)
        )
        return record

    def write(self, key: Key, record: Record) -> None:
        self._check_write(key)
        self._prepare_write(key)
        self.store.table(key.table).schema.validate(record)
        self.buffer[key] = record
        self._note_write(key)

    def insert(self, key: Key, record: Record) -> None:
        self._check_write(key)
        self._prepare_write(key)
        self.store.table(key.table).schema.validate(record)
        if self._exists(key):
            raise ConstraintError(f"duplicate key {key}")
        self.buffer[key] = record
        self._note_write(key)

    def delete(self, key: Key) -> None:
        self._check_write(key)
        self._prepare_write(key)
        if not self._exists(key):
            raise ConstraintError(f"missing key {key}")
        self.buffer[key] = _DELETED
        self._note_write(key)

    def _note_write(self, key: Key) -> None:
        self.events.append(
            AccessEvent(self.chopped.txn.ts, "w", key, None,
                        self.piece.index if self.piece else 0)
        )

    def _exists(self, key: Key) -> bool:
        if key in self.buffer:
            return self.buffer[key] is not _DELETED
        return self._storage_read(key)[0] is not None

    # -- protocol hooks --------------------------------------------------
    def _storage_read(self, key: Key) -> tuple[Optional[Record], Optional[int]]:
        raise NotImplementedError

    def _prepare_write(self, key: Key) -> None:
        raise NotImplementedError


class _BaselineEngine:
    """Shared batch/worker/retry machinery for the three baselines."""

    name = "baseline"
    abort_exceptions: tuple[type, ...] = ()

    def __init__(
        self,
        store: Store,
        registry: ProcedureRegistry,
        worker_count: int = 8,
        audit: bool = False,
        trace: Optional[list[AccessEvent]] = None,
        counter: Optional[TimestampCounter] = None,
        retry_limit: int = 10_000,
    ) -> None:
        self.store = store
        self.registry = registry
        self.worker_count = max(1, worker_count)
        self.audit = audit
        self.trace = trace
        self.counter = counter or TimestampCounter()
        self.retry_limit = retry_limit
        self._trace_lock = threading.Lock()
        self._stats_lock = threading.Lock()

    def process_batch(self, txns: list[Transaction]) -> BaselineResult:
        ordered = sorted(txns, key=lambda t: t.ts)
        queue: deque[Transaction] = deque(ordered)
        queue_lock = threading.Lock()
        result = BaselineResult({}, {}, 0, [], {})
        errors: list[BaseException] = []

        def pull() -> Optional[Transaction]:
            with queue_lock:
                return queue.popleft() if queue else None

        def work() -> None:
            rng = random.Random(threading.get_ident())
            while True:
                txn = pull()
                if txn is None:
                    return
                try:
                    self._run_to_completion(txn, result, rng)
                except BaseException as exc:  # surfaced after join
                    with self._stats_lock:
                        errors.append(exc)
                    return

        threads = [
            threading.Thread(target=work, name=f"{self.name}-worker-{i}", daemon=True)
            for i in range(min(self.worker_count, max(1, len(ordered))))
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        return result

    def _run_to_completion(
        self, txn: Transaction, result: BaselineResult, rng: random.Random
    ) -> None:
        chopped = chop(self.registry, txn)
        attempt = 0
        while True:
            attempt += 1
            if attempt > self.retry_limit:
                raise EngineError(f"transaction {txn.ts} exceeded retry limit")
            try:
                outcome = self._attempt(chopped, result)
            except self.abort_exceptions as exc:
                cause = self._abort_cause(exc)
                with self._stats_lock:
                    result.abort_events[cause] = result.abort_events.get(cause, 0) + 1
                    result.retries += 1
                time.sleep(rng.uniform(0.0, 0.0002) * min(attempt, 8))
                continue
            break
        with self._stats_lock:
            result.outcomes[txn.ts] = outcome
            result.finished_at[txn.ts] = time.perf_counter()
            if outcome == CONDITION_FAILED:
                result.abort_events["condition"] = (
                    result.abort_events.get("condition", 0) + 1
                )

    def _record_commit(self, result: BaselineResult, ctx: _AttemptContext) -> None:
        """Publish the attempt's trace block; caller holds the commit point."""
        result.commit_order.append(ctx.chopped.txn.ts)
        if self.trace is not None:
            self.trace.extend(ctx.events)

    def _run_pieces(self, ctx: _AttemptContext) -> bool:
        """Execute pieces in declared order; False means the condition failed."""
        for piece in ctx.chopped.pieces:
            ctx.piece = piece
            verdict = piece.template.body(ctx, piece.params)
            if piece.kind is PieceKind.CONDITION_CHECK and not verdict:
                return False
        return True

    @staticmethod
    def _abort_cause(exc: BaseException) -> str:
        if isinstance(exc, DeadlockAbort):
            return "deadlock"
        if isinstance(exc, ValidationAbort):
            return "validation"
        if isinstance(exc, WriteConflictAbort):
            return "write_conflict"
        return "other"

    def _attempt(self, chopped: ChoppedTransaction, result: BaselineResult) -> str:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Strict two-phase locking
# ---------------------------------------------------------------------------

class _TwoPLContext(_AttemptContext):
    def __init__(
        self,
        engine: "TwoPhaseLockingEngine",
        chopped: ChoppedTransaction,
    ) -> None:
        super().__init__(engine.store, chopped, engine.audit)
        self.engine = engine
        self.held: list[Key] = []
        self.held_set: set[Key] = set()

    def _lock(self, key: Key, mode: str) -> None:
        self.engine.locks.acquire(self.chopped.txn.ts, key, mode)
        if key not in self.held_set:
            self.held_set.add(key)
            self.held.append(key)

    def _storage_read(self, key: Key) -> tuple[Optional[Record], Optional[int]]:
        # Keys the transaction will later write are locked exclusively on
        # first touch; that removes every in-transaction upgrade.
        mode = EXCLUSIVE if key in self.chopped.write_union else SHARED
        self._lock(key, mode)
        return self.store.get(key), None

    def _prepare_write(self, key: Key) -> None:
        self._lock(key, EXCLUSIVE)


class TwoPhaseLockingEngine(_BaselineEngine):
    """Strict 2PL: grow locks during execution, install buffered writes,
    release everything only after commit (or on abort)."""

    name = "2pl"
    abort_exceptions = (DeadlockAbort,)

    def __init__(self, *args, detect_delay: float = 0.002, stripes: int = 64, **kwargs):
        super().__init__(*args, **kwargs)
        self.locks = LockTable(stripes=stripes, detect_delay=detect_delay)
        self._commit_lock = threading.Lock()

    def _attempt(self, chopped: ChoppedTransaction, result: BaselineResult) -> str:
        ctx = _TwoPLContext(self, chopped)
        ts = chopped.txn.ts
        try:
            proceed = self._run_pieces(ctx)
            if not proceed:
                return CONDITION_FAILED
            # Install while still holding every X lock, then publish the
            # trace block: block order therefore matches commit order.
            with self._commit_lock:
                for key, value in ctx.buffer.items():
                    if value is _DELETED:
                        self.store.delete(key)
                    elif self.store.get(key) is None:
                        self.store.insert(key, value)  # type: ignore[arg-type]
                    else:
                        self.store.put(key, value)  # type: ignore[arg-type]
                with self._stats_lock:
                    self._record_commit(result, ctx)
            return COMMITTED
        except DeadlockAbort:
            raise
        finally:
            self.locks.release_all(ts, ctx.held)
            self.locks.clear_victim(ts)


# ---------------------------------------------------------------------------
# Optimistic concurrency control (backward validation)
# ---------------------------------------------------------------------------

class _OccContext(_AttemptContext):
    def __init__(self, engine: "OccEngine", chopped: ChoppedTransaction) -> None:
        super().__init__(engine.store, chopped, engine.audit)
        self.engine = engine
        self.read_stamps: dict[Key, int] = {}

    def _storage_read(self, key: Key) -> tuple[Optional[Record], Optional[int]]:
        # Stamp first, value second: if an install lands between the two
        # reads the stamp comparison at validation catches it.
        stamp = self.engine.stamps.get(key, 0)
        record = self.store.get(key)
        self.read_stamps.setdefault(key, stamp)
        return record, stamp

    def _prepare_write(self, key: Key) -> None:
        pass  # writes are purely private until validation succeeds


class OccEngine(_BaselineEngine):
    """OCC with a private read/write phase and backward validation under
    one global mutex; installs are atomic with validation."""

    name = "occ"
    abort_exceptions = (ValidationAbort,)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.stamps: dict[Key, int] = {}
        self._validate_lock = threading.Lock()

    def _attempt(self, chopped: ChoppedTransaction, result: BaselineResult) -> str:
        ctx = _OccContext(self, chopped)
        proceed = self._run_pieces(ctx)
        if not proceed:
            return CONDITION_FAILED
        with self._validate_lock:
            for key, stamp in ctx.read_stamps.items():
                if self.engine_stamp(key) != stamp:
                    raise ValidationAbort(
                        f"transaction {chopped.txn.ts} read {key} at stamp {stamp}, "
                        f"now {self.engine_stamp(key)}"
                    )
            # Structural feasibility precedes any mutation so a clash
            # cannot leave a half-installed write set behind.
            for key, value in ctx.buffer.items():
                existing = self.store.get(key) is not None
                if value is _DELETED and not existing:
                    raise ValidationAbort(f"delete of vanished key {key}")
            commit_stamp = self.counter.next()
            for key, value in ctx.buffer.items():
                if value is _DELETED:
                    self.store.delete(key)
                elif self.store.get(key) is None:
                    self.store.insert(key, value)  # type: ignore[arg-type]
                else:
                    self.store.put(key, value)  # type: ignore[arg-type]
                self.stamps[key] = commit_stamp
            with self._stats_lock:
                self._record_commit(result, ctx)
        return COMMITTED

    def engine_stamp(self, key: Key) -> int:
        return self.stamps.get(key, 0)


# ---------------------------------------------------------------------------
# Multiversion concurrency control (snapshot isolation)
# ---------------------------------------------------------------------------

class _MvccContext(_AttemptContext):
    def __init__(
        self, engine: "MvccEngine", chopped: ChoppedTransaction, read_ts: int
    ) -> None:
        super().__init__(engine.store, chopped, engine.audit)
        self.engine = engine
        self.read_ts = read_ts

    def _storage_read(self, key: Key) -> tuple[Optional[Record], Optional[int]]:
        return self.store.mv_read_at(key, self.read_ts)

    def _prepare_write(self, key: Key) -> None:
        pass

    def _exists(self, key: Key) -> bool:
        if key in self.buffer:
            return self.buffer[key] is not _DELETED
        return self.store.mv_read(key, self.read_ts) is not None


class MvccEngine(_BaselineEngine):
    """Snapshot isolation over versioned tables.

    Reads see the newest version committed at or before the attempt's
    read stamp and never block.  At commit the first committer wins: if
    any written key gained a committed version after the snapshot was
    taken the attempt aborts with WriteConflictAbort.  Write skew is
    possible by design; the schedule checker flags it separately.
    """

    name = "mvcc"
    abort_exceptions = (WriteConflictAbort,)

    def __init__(self, *args, gc_interval: int = 10, **kwargs):
        super().__init__(*args, **kwargs)
        self._commit_lock = threading.Lock()
        self.gc_interval = gc_interval  # batches between sweeps; 0 disables
        self._batches_since_gc = 0
        self.commit_stamps: list[int] = []

    def process_batch(self, txns: list[Transaction]) -> BaselineResult:
        result = super().process_batch(txns)
        self._batches_since_gc += 1
        if self.gc_interval and self._batches_since_gc >= self.gc_interval:
            self._batches_since_gc = 0
            # The batch has quiesced, so the oldest stamp any future
            # reader can use is whatever the counter will hand out next.
            self.store.mv_gc_all(self.counter.last_issued)
        return result

    def _attempt(self, chopped: ChoppedTransaction, result: BaselineResult) -> str:
        read_ts = self.counter.next()
        ctx = _MvccContext(self, chopped, read_ts)
        proceed = self._run_pieces(ctx)
        if not proceed:
            return CONDITION_FAILED
        with self._commit_lock:
            for key in ctx.buffer:
                latest = self.store.mv_latest_committed_ts(key)
                if latest is not None and latest > read_ts:
                    raise WriteConflictAbort(
                        f"transaction {chopped.txn.ts} lost key {key}: "
                        f"version {latest} committed after snapshot {read_ts}"
                    )
            commit_ts = self.counter.next()
            for key, value in ctx.buffer.items():
                record = None if value is _DELETED else value
                self.store.mv_install(key, commit_ts, record, committed=True)
            # Rewrite the write events with the stamp the installs used so
            # the trace records which version each commit produced.
            ctx.events = [
                ev if ev.op == "r" else AccessEvent(ev.ts, ev.op, ev.key, commit_ts, ev.piece)
                for ev in ctx.events
            ]
            with self._stats_lock:
                self._record_commit(result, ctx)
                self.commit_stamps.append(commit_ts)
        return COMMITTED


_PROTOCOLS: dict[str, type[_BaselineEngine]] = {
    "2pl": TwoPhaseLockingEngine,
    "occ": OccEngine,
    "mvcc": MvccEngine,
}


def make_baseline(
    protocol: str,
    store: Store,
    registry: ProcedureRegistry,
    **kwargs,
) -> _BaselineEngine:
    try:
        cls = _PROTOCOLS[protocol]
    except KeyError:
        raise EngineError(f"unknown baseline protocol {protocol!r}") from None
    return cls(store, registry, **kwargs)
