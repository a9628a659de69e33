"""Correctness oracles, kept deliberately brute force and independent of the
scheduling machinery they check.

`serial_oracle` runs a batch one transaction at a time on a cloned store and
is the ground truth for result equivalence. `schedule_check` builds the full
pairwise conflict graph of a captured access trace and hunts for cycles.
`mvcc_schedule_check` does the version-aware equivalent where cycles made of
two or more read-write antidependencies are reported as write skew, which
snapshot isolation permits, while any other cycle is a real violation.
`check_graph` audits a dependency graph against the definitions instead of
the construction code.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import framing
from .errors import DgccError
from .graph import DependencyGraph, EdgeKind
from .storage import Key, Store
from .txmodel import (
    AccessEvent,
    PieceContext,
    PieceKind,
    ProcedureRegistry,
    Transaction,
    chop,
)

COMMITTED = "committed"
CONDITION_FAILED = "condition_failed"


@dataclass
class SerialResult:
    digest: bytes
    outcomes: dict[int, str]
    store: Store


def serial_oracle(
    registry: ProcedureRegistry,
    txns: Sequence[Transaction],
    store: Store,
    audit: bool = True,
) -> SerialResult:
    """Run the batch serially in timestamp order on a clone of `store`.

    Piece index order respects logic edges because those are forward-only.
    A failed condition check skips the transaction's remaining pieces.
    """
    clone = store.clone()
    outcomes: dict[int, str] = {}
    for txn in sorted(txns, key=lambda t: t.ts):
        chopped = chop(registry, txn)
        outcome = COMMITTED
        for piece in chopped.pieces:
            ctx = PieceContext(clone, piece, audit=audit)
            result = piece.template.body(ctx, piece.params)
            if piece.kind is PieceKind.CONDITION_CHECK and not result:
                outcome = CONDITION_FAILED
                break
        outcomes[txn.ts] = outcome
    return SerialResult(clone.snapshot_digest(), outcomes, clone)


@dataclass
class ScheduleReport:
    serializable: bool
    order: Optional[list[int]] = None  # a witness serial order when clean
    cycle: Optional[list[int]] = None  # transaction cycle when not
    message: str = ""


def schedule_check(events: Sequence[AccessEvent]) -> ScheduleReport:
    """Conflict-serializability of a single-version access trace.

    Every ordered pair of same-key accesses from different transactions with
    at least one write becomes an edge; no reliance on any conflict pruning.
    """
    nodes: set[int] = set()
    edges: dict[int, set[int]] = {}
    by_key: dict[Key, list[AccessEvent]] = {}
    for event in events:
        nodes.add(event.ts)
        by_key.setdefault(event.key, []).append(event)
    for seq in by_key.values():
        for i, a in enumerate(seq):
            for b in seq[i + 1:]:
                if a.ts != b.ts and (a.op == "w" or b.op == "w"):
                    edges.setdefault(a.ts, set()).add(b.ts)
    cycle = _find_cycle(nodes, edges)
    if cycle is not None:
        return ScheduleReport(False, cycle=cycle, message=f"conflict cycle {cycle}")
    return ScheduleReport(True, order=_topo_order(nodes, edges))


@dataclass
class MvccReport:
    ok: bool  # nothing worse than write skew
    serializable: bool
    write_skew: bool = False
    cycle: Optional[list[int]] = None
    message: str = ""


def mvcc_schedule_check(events: Sequence[AccessEvent]) -> MvccReport:
    """Multiversion serialization check over a trace with version stamps.

    Reads carry the write timestamp of the version they observed (0 or None
    for the pre-run state); writes carry the version they installed. Edges:
    write order per key (ww), writer to its readers (wr), reader to the next
    writer (rw). A ww/wr cycle is corruption outright. A full cycle whose rw
    count is at least two is write skew; exactly one rw cannot happen when
    snapshots are consistent, so that is a violation too.
    """
    nodes: set[int] = set()
    base_edges: dict[int, set[int]] = {}
    rw_edges: dict[int, set[int]] = {}
    writers: dict[Key, dict[int, int]] = {}  # key -> version ts -> writer ts
    reads: list[AccessEvent] = []
    for event in events:
        nodes.add(event.ts)
        if event.op == "w":
            vmap = writers.setdefault(event.key, {})
            version = event.ts if event.version is None else event.version
            if version in vmap and vmap[version] != event.ts:
                return MvccReport(False, False, message=f"duplicate version {version} for {event.key}")
            vmap[version] = event.ts
        else:
            reads.append(event)

    def add(table: dict[int, set[int]], src: int, dst: int) -> None:
        if src != dst:
            table.setdefault(src, set()).add(dst)

    for key, vmap in writers.items():
        ordered = sorted(vmap)
        for v1, v2 in zip(ordered, ordered[1:]):
            add(base_edges, vmap[v1], vmap[v2])
    for event in reads:
        version = 0 if event.version is None else event.version
        vmap = writers.get(event.key, {})
        if version and version in vmap:
            add(base_edges, vmap[version], event.ts)  # wr
        newer = [v for v in vmap if v > version]
        if newer:
            add(rw_edges, event.ts, vmap[min(newer)])  # rw antidependency

    cycle = _find_cycle(nodes, base_edges)
    if cycle is not None:
        return MvccReport(False, False, cycle=cycle, message=f"write/read order cycle {cycle}")
    merged = {ts: set(base_edges.get(ts, ())) | set(rw_edges.get(ts, ())) for ts in nodes}
    cycle = _find_cycle(nodes, merged)
    if cycle is None:
        return MvccReport(True, True)
    rw_count = sum(
        1
        for src, dst in zip(cycle, cycle[1:] + cycle[:1])
        if dst in rw_edges.get(src, ())
    )
    if rw_count >= 2:
        return MvccReport(True, False, write_skew=True, cycle=cycle,
                          message=f"write skew cycle {cycle}")
    return MvccReport(False, False, cycle=cycle,
                      message=f"cycle with {rw_count} antidependency edges {cycle}")


def check_graph(graph: DependencyGraph) -> list[str]:
    """Audit a built graph against the definitions. Empty list means clean."""
    problems: list[str] = []
    pieces = graph.pieces

    for (src, dst), kind in graph.edge_kind.items():
        if kind is EdgeKind.TIME_ORDER:
            if src[0] >= dst[0]:
                problems.append(f"time edge {src}->{dst} not oldest-first")
            a, b = pieces[src], pieces[dst]
            if not (a.writeset & b.accessset or a.accessset & b.writeset):
                problems.append(f"time edge {src}->{dst} joins non-conflicting pieces")
        else:
            if src[0] != dst[0]:
                problems.append(f"logic edge {src}->{dst} crosses transactions")

    declared = {
        (ts, i, j)
        for chopped in graph.transactions
        for ts in [chopped.txn.ts]
        for i, j in chopped.proc.logic_edges
    }
    built = {
        (src[0], src[1], dst[1])
        for (src, dst), kind in graph.edge_kind.items()
        if kind is EdgeKind.LOGIC
    }
    for missing in declared - built:
        problems.append(f"declared logic edge {missing} absent")
    for extra in built - declared:
        problems.append(f"undeclared logic edge {extra} present")

    try:
        graph.topo_order()
    except Exception as exc:
        problems.append(str(exc))
        return problems

    ids = sorted(pieces)
    reach = {pid: graph.reachable(pid) for pid in ids}
    for i, src in enumerate(ids):
        for dst in ids[i + 1:]:
            if src[0] == dst[0]:
                continue
            a, b = pieces[src], pieces[dst]
            if (a.writeset & b.accessset or a.accessset & b.writeset) and dst not in reach[src]:
                problems.append(f"conflicting pair {src}->{dst} has no path")
    return problems


REC_TRACE_EVENT = 4
_OP_CODE = {"r": 1, "w": 2}
_OP_NAME = {1: "r", 2: "w"}


def trace_dump(events: Sequence[AccessEvent], path: str | os.PathLike) -> None:
    """Write a trace for offline checking, framed like a log segment."""
    with open(path, "wb") as f:
        f.write(framing.HEADER)
        for e in events:
            payload = struct.pack(
                ">BQHBBQIH",
                REC_TRACE_EVENT,
                e.ts,
                e.piece,
                _OP_CODE[e.op],
                0 if e.version is None else 1,
                e.version or 0,
                e.key.table,
                len(e.key.primary),
            ) + e.key.primary
            framing.write_frame(f, payload)


def trace_load(path: str | os.PathLike) -> list[AccessEvent]:
    events: list[AccessEvent] = []
    with open(path, "rb") as f:
        if not framing.check_header(f):
            raise DgccError(f"bad trace header in {Path(path).name}")
        for _, payload in framing.iter_frames(f):
            if payload[0] != REC_TRACE_EVENT:
                raise DgccError("unexpected record in trace file")
            ts, piece, op, has_version, version, table, klen = struct.unpack_from(
                ">QHBBQIH", payload, 1
            )
            primary = payload[27:27 + klen]
            events.append(
                AccessEvent(
                    ts,
                    _OP_NAME[op],
                    Key(table, primary),
                    version if has_version else None,
                    piece,
                )
            )
    return events


def _find_cycle(nodes: set[int], edges: dict[int, set[int]]) -> Optional[list[int]]:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in nodes}
    parent: dict[int, int] = {}
    for root in sorted(nodes):
        if color[root] != WHITE:
            continue
        stack: list[tuple[int, object]] = [(root, None)]
        while stack:
            node, it = stack[-1]
            if it is None:
                color[node] = GRAY
                it = iter(sorted(edges.get(node, ())))
                stack[-1] = (node, it)
            advanced = False
            for succ in it:
                if color[succ] == GRAY:
                    cycle = [succ]
                    cur = node
                    while cur != succ:
                        cycle.append(cur)
                        cur = parent[cur]
                    cycle.reverse()
                    return cycle
                if color[succ] == WHITE:
                    parent[succ] = node
                    stack.append((succ, None))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    return None


def _topo_order(nodes: set[int], edges: dict[int, set[int]]) -> list[int]:
    in_degree = {n: 0 for n in nodes}
    for src, dsts in edges.items():
        for dst in dsts:
            in_degree[dst] += 1
    frontier = sorted((n for n, d in in_degree.items() if d == 0), reverse=True)
    out: list[int] = []
    while frontier:
        node = frontier.pop()
        out.append(node)
        for succ in sorted(edges.get(node, ()), reverse=True):
            in_degree[succ] -= 1
            if in_degree[succ] == 0:
                frontier.append(succ)
    return out
