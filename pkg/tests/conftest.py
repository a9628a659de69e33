"""Shared builders for engine tests.

`Scripted` manufactures procedures whose piece access sets are taken verbatim
from the transaction parameters, so tests can hand-pick any conflict pattern.
Bodies fold every read into an accumulator and write key-dependent mixes of
it, so any reordering of conflicting accesses changes the final store digest.
"""

from __future__ import annotations

import json

import pytest

from dgcc.storage import Key, Store, TableSchema
from dgcc.txmodel import (
    PieceKind,
    PieceTemplate,
    ProcedureRegistry,
    StoredProcedure,
    Transaction,
)

VAL_TABLE = 0
MASK = (1 << 64) - 1


def make_key(name: str | int, table: int = VAL_TABLE) -> Key:
    if isinstance(name, int):
        primary = name.to_bytes(8, "big")
    else:
        primary = name.encode().ljust(8, b"\0")
    return Key(table, primary)


def fresh_store(initial: dict[Key, int] | None = None) -> Store:
    store = Store()
    store.create_table(VAL_TABLE, TableSchema("val", (8,), initial_capacity=256))
    for key, value in (initial or {}).items():
        store.put(key, (value.to_bytes(8, "big"),))
    return store


def read_int(store: Store, key: Key) -> int | None:
    record = store.get(key)
    return None if record is None else int.from_bytes(record[0], "big")


def _mix_body(ctx, params) -> None:
    acc = 1469598103934665603
    for key in sorted(ctx.piece.readset):
        record = ctx.read(key)
        value = int.from_bytes(record[0], "big") if record else 0
        acc = (acc * 1000003 + value + 1) & MASK
    for key in sorted(ctx.piece.writeset):
        out = (acc * 31 + ctx.piece.txn.ts * 1000003 + ctx.piece.index + key.primary[-1]) & MASK
        ctx.write(key, (out.to_bytes(8, "big"),))


def _check_body(ctx, params) -> bool:
    for key in sorted(ctx.piece.readset):
        ctx.read(key)
    return bool(params["pieces"][ctx.piece.index].get("ok", True))


def _decode_scripted(raw: bytes) -> dict:
    obj = json.loads(raw.decode())
    for piece in obj["pieces"]:
        piece["rk"] = [Key(t, bytes.fromhex(h)) for t, h in piece.get("r", [])]
        piece["wk"] = [Key(t, bytes.fromhex(h)) for t, h in piece.get("w", [])]
    return obj


class Scripted:
    """Procedure factory keyed by piece-count / logic-edge / check shape."""

    def __init__(self) -> None:
        self.registry = ProcedureRegistry()
        self._shapes: dict[tuple, StoredProcedure] = {}
        self._next_fid = 100
        self.next_ts = 1

    def proc(
        self,
        n_pieces: int,
        logic_edges: tuple[tuple[int, int], ...] = (),
        check_index: int | None = None,
    ) -> StoredProcedure:
        shape = (n_pieces, tuple(sorted(logic_edges)), check_index)
        if shape in self._shapes:
            return self._shapes[shape]
        templates = []
        for i in range(n_pieces):
            is_check = i == check_index
            templates.append(
                PieceTemplate(
                    name=f"s{i}",
                    read_keys=lambda params, i=i: params["pieces"][i]["rk"],
                    write_keys=lambda params, i=i: params["pieces"][i]["wk"],
                    body=_check_body if is_check else _mix_body,
                    kind=PieceKind.CONDITION_CHECK if is_check else PieceKind.NORMAL,
                )
            )
        proc = StoredProcedure(
            function_id=self._next_fid,
            name=f"scripted{self._next_fid}",
            decode_params=_decode_scripted,
            templates=tuple(templates),
            logic_edges=tuple(logic_edges),
        )
        self._next_fid += 1
        self.registry.register(proc)
        self._shapes[shape] = proc
        return proc

    def txn(
        self,
        pieces: list[dict],
        logic_edges: tuple[tuple[int, int], ...] = (),
        check_index: int | None = None,
        ts: int | None = None,
    ) -> Transaction:
        """pieces: [{"r": [Key...], "w": [Key...], "ok": bool}, ...]"""
        proc = self.proc(len(pieces), logic_edges, check_index)
        encoded = {"pieces": []}
        for piece in pieces:
            entry: dict = {
                "r": [[k.table, k.primary.hex()] for k in piece.get("r", [])],
                "w": [[k.table, k.primary.hex()] for k in piece.get("w", [])],
            }
            if "ok" in piece:
                entry["ok"] = piece["ok"]
            encoded["pieces"].append(entry)
        if ts is None:
            ts = self.next_ts
            self.next_ts += 1
        else:
            self.next_ts = max(self.next_ts, ts + 1)
        return Transaction(ts, proc.function_id, json.dumps(encoded).encode())


@pytest.fixture
def scripted() -> Scripted:
    return Scripted()


def walkthrough_batch(scripted: Scripted) -> list[Transaction]:
    """Three transactions whose graph exercises every construction case:
    a write chased by readers, a reader group drained by a writer, a
    writer-to-reader edge, and an untouched key left isolated."""
    a, b, c, d, e, f = (make_key(x) for x in "ABCDEF")
    t1 = scripted.txn(
        [
            {"r": [f], "w": [f]},
            {"w": [b]},
            {"w": [c]},
        ],
        logic_edges=((0, 1), (0, 2)),
    )
    t2 = scripted.txn(
        [
            {"r": [b, c, d], "w": [a]},
            {"r": [d]},
        ]
    )
    t3 = scripted.txn(
        [
            {"w": [d]},
            {"r": [a]},
            {"r": [e], "w": [e]},
        ]
    )
    return [t1, t2, t3]


WALKTHROUGH_KEYS = {name: make_key(name) for name in "ABCDEF"}

# (ts, piece) pairs: TimeOrder edges the walkthrough batch must produce.
WALKTHROUGH_TIME_EDGES = {
    ((1, 1), (2, 0)),  # write B chased by reader
    ((1, 2), (2, 0)),  # write C chased by reader
    ((2, 0), (3, 0)),  # reader group drained by write D
    ((2, 1), (3, 0)),
    ((2, 0), (3, 1)),  # write A read downstream
}

WALKTHROUGH_LOGIC_EDGES = {((1, 0), (1, 1)), ((1, 0), (1, 2))}

WALKTHROUGH_ROUNDS = [
    {(1, 0), (2, 1), (3, 2)},
    {(1, 1), (1, 2)},
    {(2, 0)},
    {(3, 0), (3, 1)},
]
