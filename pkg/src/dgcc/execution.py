"""Batch execution of dependency graphs.

All contention is resolved while the graph is built, so execution is plain
dataflow: repeatedly take the vertices whose predecessors are done (the
frontier), run them on the worker pool with a barrier between rounds, and
drain skip markers left by failed condition checks. Frontiers smaller than a
threshold run inline on the coordinator to skip the hand-off cost. A batch's
graph is made durable with one log flush before any result is reported.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from queue import SimpleQueue
from typing import Optional, Sequence

from .errors import EngineError
from .graph import DependencyGraph, PieceId, build_graph
from .storage import Store
from .txmodel import (
    AccessEvent,
    PieceContext,
    PieceKind,
    ProcedureRegistry,
    Transaction,
    chop,
    validate_sibling_order,
)
from .verify import COMMITTED, CONDITION_FAILED

log = logging.getLogger(__name__)


@dataclass
class BatchConfig:
    max_batch_size: int = 1000
    worker_count: int = 8
    # frontiers below this size run inline; None means worker_count
    small_frontier_threshold: Optional[int] = None
    audit: bool = False

    @property
    def threshold(self) -> int:
        if self.small_frontier_threshold is None:
            return self.worker_count
        return self.small_frontier_threshold


@dataclass
class BatchResult:
    batch_id: int
    outcomes: dict[int, str]
    frontiers: list[list[PieceId]]  # per round, in schedule order
    piece_count: int
    skipped_pieces: int
    build_seconds: float
    log_seconds: float
    exec_seconds: float

    @property
    def rounds(self) -> int:
        return len(self.frontiers)

    @property
    def frontier_sizes(self) -> list[int]:
        return [len(f) for f in self.frontiers]

    @property
    def committed(self) -> int:
        return sum(1 for s in self.outcomes.values() if s == COMMITTED)


class _RoundState:
    __slots__ = ("engine", "graph", "pending", "cond", "failures", "errors")

    def __init__(self, engine: "DgccEngine", graph: DependencyGraph, pending: int, failures: list):
        self.engine = engine
        self.graph = graph
        self.pending = pending
        self.cond = threading.Condition()
        self.failures = failures
        self.errors: list[BaseException] = []


class DgccEngine:
    """Coordinator plus worker pool executing one batch at a time.

    `log_writer` (optional) must expose log_graph(graph) and have made the
    batch durable when it returns. `checkpointer` (optional) gets an
    after_batch(batch_id) call between batches.
    """

    def __init__(
        self,
        store: Store,
        registry: ProcedureRegistry,
        config: Optional[BatchConfig] = None,
        log_writer=None,
        checkpointer=None,
        trace: Optional[list[AccessEvent]] = None,
    ) -> None:
        self.store = store
        self.registry = registry
        self.config = config or BatchConfig()
        if self.config.worker_count < 1:
            raise EngineError("worker_count must be at least 1")
        self.log_writer = log_writer
        self.checkpointer = checkpointer
        self.trace = trace
        self._trace_lock = threading.Lock()
        self._tasks: SimpleQueue = SimpleQueue()
        self._workers: list[threading.Thread] = []
        self._closed = False
        self.next_batch_id = 1

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for _ in self._workers:
            self._tasks.put(None)
        for worker in self._workers:
            worker.join()
        self._workers.clear()

    def __enter__(self) -> "DgccEngine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _ensure_workers(self) -> None:
        if self._workers:
            return
        for i in range(self.config.worker_count):
            worker = threading.Thread(target=self._worker_loop, name=f"dgcc-worker-{i}", daemon=True)
            worker.start()
            self._workers.append(worker)

    def _worker_loop(self) -> None:
        while True:
            task = self._tasks.get()
            if task is None:
                return
            state, pid = task
            try:
                state.engine._run_piece(state.graph, pid, state.failures)
            except BaseException as exc:  # surfaced by the coordinator
                state.errors.append(exc)
            finally:
                with state.cond:
                    state.pending -= 1
                    if state.pending == 0:
                        state.cond.notify()

    # -- batch processing ---------------------------------------------------

    def process_batch(self, txns: Sequence[Transaction]) -> BatchResult:
        if self._closed:
            raise EngineError("engine is closed")
        if len(txns) > self.config.max_batch_size:
            raise EngineError(
                f"batch of {len(txns)} exceeds limit {self.config.max_batch_size}"
            )
        batch_id = self.next_batch_id
        self.next_batch_id += 1
        if not txns:
            return BatchResult(batch_id, {}, [], 0, 0, 0.0, 0.0, 0.0)

        t0 = time.perf_counter()
        chopped = [chop(self.registry, txn) for txn in sorted(txns, key=lambda t: t.ts)]
        if self.config.audit:
            for ct in chopped:
                validate_sibling_order(ct)
        graph = build_graph(chopped, batch_id)
        t1 = time.perf_counter()
        outcomes, frontiers, skipped = self._execute_graph(graph)
        t2 = time.perf_counter()
        # one durable flush for the whole graph, before any commit is reported
        if self.log_writer is not None:
            self.log_writer.log_graph(graph)
        t3 = time.perf_counter()
        if self.checkpointer is not None:
            self.checkpointer.after_batch(batch_id)
        return BatchResult(
            batch_id=batch_id,
            outcomes=outcomes,
            frontiers=frontiers,
            piece_count=graph.vertex_count,
            skipped_pieces=skipped,
            build_seconds=t1 - t0,
            log_seconds=t3 - t2,
            exec_seconds=t2 - t1,
        )

    def _execute_graph(self, graph: DependencyGraph):
        in_deg = dict(graph.in_degree)
        ready = sorted(pid for pid, d in in_deg.items() if d == 0)
        by_txn: dict[int, list[PieceId]] = {}
        for pid in graph.pieces:
            by_txn.setdefault(pid[0], []).append(pid)

        skipped: set[PieceId] = set()
        failed_txns: set[int] = set()
        failures: list[PieceId] = []
        drained = 0
        frontiers: list[list[PieceId]] = []
        total = len(graph.pieces)

        while drained < total:
            if not ready:
                raise EngineError(
                    f"batch {graph.batch_id}: {total - drained} pieces stuck with "
                    "no ready frontier"
                )
            frontier, ready = ready, []
            frontiers.append(frontier)
            if self.config.audit:
                self._round_safety(graph, frontier)
            runnable = [pid for pid in frontier if pid not in skipped]

            if len(frontier) < self.config.threshold:
                for pid in runnable:
                    self._run_piece(graph, pid, failures)
            elif runnable:
                self._ensure_workers()
                state = _RoundState(self, graph, len(runnable), failures)
                for pid in runnable:
                    self._tasks.put((state, pid))
                with state.cond:
                    while state.pending:
                        state.cond.wait()
                if state.errors:
                    raise state.errors[0]

            while failures:
                check = failures.pop()
                failed_txns.add(check[0])
                for pid in by_txn[check[0]]:
                    if pid != check:
                        skipped.add(pid)

            drained += len(frontier)
            for pid in frontier:
                for succ in graph.succs[pid]:
                    in_deg[succ] -= 1
                    if in_deg[succ] == 0:
                        ready.append(succ)
            ready.sort()

        outcomes = {
            ct.txn.ts: CONDITION_FAILED if ct.txn.ts in failed_txns else COMMITTED
            for ct in graph.transactions
        }
        return outcomes, frontiers, len(skipped)

    def _run_piece(self, graph: DependencyGraph, pid: PieceId, failures: list) -> None:
        piece = graph.pieces[pid]
        events: Optional[list[AccessEvent]] = [] if self.trace is not None else None
        ctx = PieceContext(self.store, piece, audit=self.config.audit, events=events)
        result = piece.template.body(ctx, piece.params)
        if piece.kind is PieceKind.CONDITION_CHECK and not result:
            failures.append(pid)
        if events:
            with self._trace_lock:
                self.trace.extend(events)

    def _round_safety(self, graph: DependencyGraph, frontier: list[PieceId]) -> None:
        """No two pieces in one round may conflict; a conflicting pair with
        both in-degrees at zero means the graph missed an ordering."""
        for i, a_id in enumerate(frontier):
            a = graph.pieces[a_id]
            for b_id in frontier[i + 1:]:
                b = graph.pieces[b_id]
                if a.writeset & b.accessset or a.accessset & b.writeset:
                    raise EngineError(
                        f"batch {graph.batch_id}: conflicting pieces {a_id} and "
                        f"{b_id} scheduled in the same round"
                    )
