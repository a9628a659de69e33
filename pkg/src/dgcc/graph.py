"""Dependency graph construction for one batch.

Vertices are transaction pieces; edges are either logic edges (declared order
inside one transaction) or time-order edges (conflicting accesses across
transactions, directed from older to newer timestamp). Per-key bookkeeping
keeps only a dominating set per record: the single latest writer, or all
readers since that writer, which is enough to order every later conflicting
access by a path. Every edge goes from a smaller (ts, index) pair to a larger
one, so graphs are acyclic by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Iterable, Optional

from .errors import EngineError
from .storage import Key
from .txmodel import ChoppedTransaction, TransactionPiece

PieceId = tuple[int, int]  # (transaction ts, piece index)


class EdgeKind(Enum):
    LOGIC = auto()
    TIME_ORDER = auto()


@dataclass
class RecordMeta:
    """Per-key construction state: the dominating set plus latest writer."""

    dominators: set[PieceId] = field(default_factory=set)
    dominator_is_writer: bool = False
    latest_writer: Optional[PieceId] = None


class DependencyGraph:
    def __init__(self, batch_id: int = 0) -> None:
        self.batch_id = batch_id
        self.pieces: dict[PieceId, TransactionPiece] = {}
        self.succs: dict[PieceId, list[PieceId]] = {}
        self.edge_kind: dict[tuple[PieceId, PieceId], EdgeKind] = {}
        self.in_degree: dict[PieceId, int] = {}
        self.record_meta: dict[Key, RecordMeta] = {}
        self.transactions: list[ChoppedTransaction] = []
        self.skipped_same_txn = 0

    # -- construction -------------------------------------------------------

    def admit(self, chopped: ChoppedTransaction) -> None:
        """Add one transaction's pieces, in index order, then its logic edges.

        Transactions must be admitted in strictly increasing ts order.
        """
        ts = chopped.txn.ts
        if self.transactions and self.transactions[-1].txn.ts >= ts:
            raise EngineError(
                f"transaction {ts} admitted after {self.transactions[-1].txn.ts}"
            )
        self.transactions.append(chopped)
        for piece in chopped.pieces:
            self._admit_piece(piece)
        for i, j in chopped.proc.logic_edges:
            self._add_edge((ts, i), (ts, j), EdgeKind.LOGIC)

    def _admit_piece(self, piece: TransactionPiece) -> None:
        pid = piece.piece_id
        self.pieces[pid] = piece
        self.succs.setdefault(pid, [])
        self.in_degree.setdefault(pid, 0)
        for key in sorted(piece.accessset):
            writes = key in piece.writeset
            meta = self.record_meta.get(key)
            if meta is None:
                meta = RecordMeta()
                self.record_meta[key] = meta
            if not meta.dominators:
                # untouched key: the piece starts a fresh dominating set
                meta.dominators = {pid}
                meta.dominator_is_writer = writes
            elif meta.dominator_is_writer:
                # one writer dominates: any access follows it directly
                (writer,) = meta.dominators
                self._time_edge(writer, pid)
                meta.dominators = {pid}
                meta.dominator_is_writer = writes
            elif writes:
                # reader group dominates: a writer drains all of them
                for reader in sorted(meta.dominators):
                    self._time_edge(reader, pid)
                meta.dominators = {pid}
                meta.dominator_is_writer = True
            else:
                # reader joins the group, ordered after the latest writer
                if meta.latest_writer is not None:
                    self._time_edge(meta.latest_writer, pid)
                meta.dominators.add(pid)
            if writes:
                meta.latest_writer = pid

    def _time_edge(self, src: PieceId, dst: PieceId) -> None:
        if src[0] == dst[0]:
            # same transaction: ordering is the logic edges' job
            self.skipped_same_txn += 1
            return
        if src[0] > dst[0]:
            raise EngineError(f"time-order edge {src} -> {dst} against ts order")
        self._add_edge(src, dst, EdgeKind.TIME_ORDER)

    def _add_edge(self, src: PieceId, dst: PieceId, kind: EdgeKind) -> None:
        if src == dst:
            raise EngineError(f"self edge on {src}")
        if (src, dst) in self.edge_kind:
            return
        self.edge_kind[(src, dst)] = kind
        self.succs[src].append(dst)
        self.in_degree[dst] += 1

    # -- inspection ---------------------------------------------------------

    @property
    def vertex_count(self) -> int:
        return len(self.pieces)

    @property
    def edge_count(self) -> int:
        return len(self.edge_kind)

    def edges(self, kind: Optional[EdgeKind] = None) -> set[tuple[PieceId, PieceId]]:
        if kind is None:
            return set(self.edge_kind)
        return {pair for pair, k in self.edge_kind.items() if k is kind}

    def roots(self) -> list[PieceId]:
        return sorted(pid for pid, d in self.in_degree.items() if d == 0)

    def topo_order(self) -> list[PieceId]:
        degree = dict(self.in_degree)
        frontier = sorted(pid for pid, d in degree.items() if d == 0)
        out: list[PieceId] = []
        while frontier:
            pid = frontier.pop()
            out.append(pid)
            for succ in self.succs[pid]:
                degree[succ] -= 1
                if degree[succ] == 0:
                    frontier.append(succ)
        if len(out) != len(self.pieces):
            raise EngineError("dependency graph has a cycle")
        return out

    def longest_path_len(self) -> int:
        """Vertices on the longest path; equals the minimum round count."""
        if not self.pieces:
            return 0
        depth = {pid: 1 for pid in self.pieces}
        for pid in self.topo_order():
            for succ in self.succs[pid]:
                if depth[pid] + 1 > depth[succ]:
                    depth[succ] = depth[pid] + 1
        return max(depth.values())

    def reachable(self, start: PieceId) -> set[PieceId]:
        seen: set[PieceId] = set()
        stack = list(self.succs[start])
        while stack:
            pid = stack.pop()
            if pid in seen:
                continue
            seen.add(pid)
            stack.extend(self.succs[pid])
        return seen

    def dump(self) -> str:
        """Adjacency text: one `src -> dst [kind]` line per edge, isolated
        vertices on their own lines."""
        lines = []
        for (src, dst), kind in sorted(self.edge_kind.items()):
            tag = "logic" if kind is EdgeKind.LOGIC else "time"
            lines.append(f"{src[0]}.{src[1]} -> {dst[0]}.{dst[1]} [{tag}]")
        touched = {p for pair in self.edge_kind for p in pair}
        for pid in sorted(self.pieces):
            if pid not in touched:
                lines.append(f"{pid[0]}.{pid[1]}")
        return "\n".join(lines)


def build_graph(batch: Iterable[ChoppedTransaction], batch_id: int = 0) -> DependencyGraph:
    graph = DependencyGraph(batch_id)
    for chopped in batch:
        graph.admit(chopped)
    return graph
