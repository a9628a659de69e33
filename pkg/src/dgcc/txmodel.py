"""Transactions as stored procedures chopped into pieces.

A stored procedure declares its pieces up front: each piece names the keys it
will read and write as a pure function of the decoded parameters, so every
access set is known before execution starts. Logic edges give the required
order between pieces of one transaction; an optional condition-check piece
guards the whole transaction and must logically precede everything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, auto
from functools import cached_property
from typing import Callable, Iterable, Optional

from .errors import AuditError, ConstraintError, DecodeError, ProcedureError
from .storage import Key, Record, Store


class PieceKind(Enum):
    NORMAL = auto()
    CONDITION_CHECK = auto()


KeysFn = Callable[[object], Iterable[Key]]


def no_keys(params: object) -> tuple:
    return ()


@dataclass(frozen=True)
class PieceTemplate:
    """Static shape of one piece: key rules plus the body to run.

    `read_keys`/`write_keys` map decoded parameters to the exact keys the
    body may touch. A condition-check body returns truthy to let the
    transaction proceed; normal bodies' return values are ignored.
    """

    name: str
    read_keys: KeysFn
    write_keys: KeysFn
    body: Callable[["PieceContext", object], object]
    kind: PieceKind = PieceKind.NORMAL


@dataclass(frozen=True)
class StoredProcedure:
    function_id: int
    name: str
    decode_params: Callable[[bytes], object]
    templates: tuple[PieceTemplate, ...]
    # ordered pairs (i, j), i < j: piece i must run before piece j
    logic_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        n = len(self.templates)
        if n == 0:
            raise ProcedureError(f"procedure {self.name!r} has no pieces")
        seen = set()
        for i, j in self.logic_edges:
            if not (0 <= i < j < n):
                raise ProcedureError(
                    f"procedure {self.name!r}: logic edge ({i}, {j}) is not "
                    f"forward-only within {n} pieces"
                )
            if (i, j) in seen:
                raise ProcedureError(f"procedure {self.name!r}: duplicate logic edge ({i}, {j})")
            seen.add((i, j))
        checks = [i for i, t in enumerate(self.templates) if t.kind is PieceKind.CONDITION_CHECK]
        if len(checks) > 1:
            raise ProcedureError(f"procedure {self.name!r} has {len(checks)} condition checks")
        if checks:
            c = checks[0]
            missing = set(range(n)) - {c} - self.logic_reachable(c)
            if missing:
                raise ProcedureError(
                    f"procedure {self.name!r}: condition check {c} does not "
                    f"logically precede pieces {sorted(missing)}"
                )

    @cached_property
    def condition_index(self) -> Optional[int]:
        for i, t in enumerate(self.templates):
            if t.kind is PieceKind.CONDITION_CHECK:
                return i
        return None

    @cached_property
    def _successors(self) -> dict[int, tuple[int, ...]]:
        succ: dict[int, list[int]] = {i: [] for i in range(len(self.templates))}
        for i, j in self.logic_edges:
            succ[i].append(j)
        return {i: tuple(js) for i, js in succ.items()}

    def logic_reachable(self, start: int) -> set[int]:
        """Indices reachable from `start` via one or more logic edges."""
        out: set[int] = set()
        stack = list(self._successors[start])
        while stack:
            i = stack.pop()
            if i in out:
                continue
            out.add(i)
            stack.extend(self._successors[i])
        return out


class ProcedureRegistry:
    def __init__(self) -> None:
        self._procs: dict[int, StoredProcedure] = {}

    def register(self, proc: StoredProcedure) -> StoredProcedure:
        if proc.function_id in self._procs:
            raise ProcedureError(f"function id {proc.function_id} already registered")
        self._procs[proc.function_id] = proc
        return proc

    def get(self, function_id: int) -> StoredProcedure:
        try:
            return self._procs[function_id]
        except KeyError:
            raise ProcedureError(f"unknown function id {function_id}") from None

    def __len__(self) -> int:
        return len(self._procs)


@dataclass(slots=True)
class Transaction:
    """One invocation: globally unique timestamp, procedure, raw parameters.

    Timestamps are assigned in arrival order and double as the serial order
    the engine must be equivalent to.
    """

    ts: int
    function_id: int
    params: bytes
    arrival_time: float = 0.0


@dataclass(eq=False, slots=True)
class TransactionPiece:
    txn: Transaction
    index: int
    template: PieceTemplate
    params: object
    readset: frozenset[Key]
    writeset: frozenset[Key]

    @property
    def accessset(self) -> frozenset[Key]:
        return self.readset | self.writeset

    @property
    def piece_id(self) -> tuple[int, int]:
        return (self.txn.ts, self.index)

    @property
    def kind(self) -> PieceKind:
        return self.template.kind

    def __repr__(self) -> str:
        return f"<piece {self.txn.ts}.{self.index} {self.template.name}>"


@dataclass(eq=False)
class ChoppedTransaction:
    txn: Transaction
    proc: StoredProcedure
    pieces: list[TransactionPiece]

    @property
    def condition_index(self) -> Optional[int]:
        return self.proc.condition_index

    @cached_property
    def read_union(self) -> frozenset[Key]:
        out: frozenset[Key] = frozenset()
        for p in self.pieces:
            out |= p.readset
        return out

    @cached_property
    def write_union(self) -> frozenset[Key]:
        out: frozenset[Key] = frozenset()
        for p in self.pieces:
            out |= p.writeset
        return out

    @property
    def access_union(self) -> frozenset[Key]:
        return self.read_union | self.write_union


def chop(registry: ProcedureRegistry, txn: Transaction) -> ChoppedTransaction:
    """Materialize a transaction's pieces with their exact access sets."""
    proc = registry.get(txn.function_id)
    try:
        params = proc.decode_params(txn.params)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError(f"parameters of {proc.name!r} txn {txn.ts}: {exc}") from exc
    pieces = []
    for index, tmpl in enumerate(proc.templates):
        reads = frozenset(tmpl.read_keys(params))
        writes = frozenset(tmpl.write_keys(params))
        if tmpl.kind is PieceKind.CONDITION_CHECK and writes:
            raise ProcedureError(
                f"condition check {tmpl.name!r} of {proc.name!r} declares writes"
            )
        pieces.append(TransactionPiece(txn, index, tmpl, params, reads, writes))
    return ChoppedTransaction(txn, proc, pieces)


def validate_sibling_order(chopped: ChoppedTransaction) -> None:
    """Conflicting pieces of one transaction must be ordered by logic edges.

    Cross-transaction ordering comes from the dependency graph; within a
    transaction only logic edges order pieces, so an unordered conflicting
    pair would make results scheduling-dependent.
    """
    pieces = chopped.pieces
    for i in range(len(pieces)):
        ahead = chopped.proc.logic_reachable(i)
        for j in range(i + 1, len(pieces)):
            a, b = pieces[i], pieces[j]
            if not (a.writeset & b.accessset or a.accessset & b.writeset):
                continue
            if j not in ahead and i not in chopped.proc.logic_reachable(j):
                raise ProcedureError(
                    f"procedure {chopped.proc.name!r}: pieces {i} and {j} "
                    f"conflict but no logic edge orders them"
                )


@dataclass(frozen=True)
class AccessEvent:
    """One store access, as captured for schedule checking. `version` is the
    write timestamp of the version read or installed (multiversion runs)."""

    ts: int
    op: str  # "r" or "w"
    key: Key
    version: Optional[int] = None
    piece: int = 0


class PieceContext:
    """Direct store access for a piece body under graph scheduling.

    With `audit` set, every access is checked against the declared sets.
    `events` (when not None) collects AccessEvents for schedule checking.
    """

    __slots__ = ("store", "piece", "audit", "events")

    def __init__(
        self,
        store: Store,
        piece: TransactionPiece,
        audit: bool = False,
        events: Optional[list[AccessEvent]] = None,
    ) -> None:
        self.store = store
        self.piece = piece
        self.audit = audit
        self.events = events

    def read(self, key: Key) -> Optional[Record]:
        if self.audit and key not in self.piece.readset:
            raise AuditError(f"{self.piece!r} read undeclared {key}")
        if self.events is not None:
            self.events.append(AccessEvent(self.piece.txn.ts, "r", key, piece=self.piece.index))
        return self.store.get(key)

    def write(self, key: Key, record: Record) -> None:
        if self.audit and key not in self.piece.writeset:
            raise AuditError(f"{self.piece!r} wrote undeclared {key}")
        if self.events is not None:
            self.events.append(AccessEvent(self.piece.txn.ts, "w", key, piece=self.piece.index))
        self.store.put(key, record)

    def insert(self, key: Key, record: Record) -> None:
        if self.audit and key not in self.piece.writeset:
            raise AuditError(f"{self.piece!r} inserted undeclared {key}")
        if self.events is not None:
            self.events.append(AccessEvent(self.piece.txn.ts, "w", key, piece=self.piece.index))
        self.store.insert(key, record)

    def delete(self, key: Key) -> None:
        if self.audit and key not in self.piece.writeset:
            raise AuditError(f"{self.piece!r} deleted undeclared {key}")
        if self.events is not None:
            self.events.append(AccessEvent(self.piece.txn.ts, "w", key, piece=self.piece.index))
        self.store.delete(key)
