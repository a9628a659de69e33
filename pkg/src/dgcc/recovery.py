"""Durability: command logging, sectioned checkpoints, and crash recovery.

The log holds one record per graph vertex (function id, parameters, and the
vertex's in-edges) followed by a terminator frame, all written with a single
flush per graph. Recovery loads the newest complete checkpoint, replays every
complete graph after its watermark by re-chopping the logged transactions and
re-executing them, and ignores a torn log tail. Checkpoints are written by
one thread per section while execution continues; a copy-on-write capture in
the store pins every key at its value as of the capture start, so the
sections plus replay from the watermark reproduce the live state exactly.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import framing
from .errors import DurabilityError, EngineError
from .graph import DependencyGraph, EdgeKind, PieceId, build_graph
from .storage import Key, Record, Store
from .txmodel import AccessEvent, ProcedureRegistry, Transaction, chop
from .verify import COMMITTED

log = logging.getLogger(__name__)

REC_VERTEX = 1
REC_TERMINATOR = 2
REC_CHECKPOINT_ITEM = 3

_EDGE_CODE = {EdgeKind.LOGIC: 1, EdgeKind.TIME_ORDER: 2}
_EDGE_KIND = {1: EdgeKind.LOGIC, 2: EdgeKind.TIME_ORDER}

SEGMENT_NAME = "segment-000.log"
MANIFEST_NAME = "manifest.json"


# -- record encoding --------------------------------------------------------


def encode_vertex(
    graph_id: int,
    ts: int,
    piece: int,
    function_id: int,
    params: bytes,
    deps: Sequence[tuple[PieceId, EdgeKind]],
) -> bytes:
    out = bytearray(struct.pack(">BQQHI", REC_VERTEX, graph_id, ts, piece, function_id))
    out += struct.pack(">I", len(params)) + params
    out += struct.pack(">I", len(deps))
    for (dep_ts, dep_piece), kind in deps:
        out += struct.pack(">QHB", dep_ts, dep_piece, _EDGE_CODE[kind])
    return bytes(out)


@dataclass
class VertexRecord:
    graph_id: int
    ts: int
    piece: int
    function_id: int
    params: bytes
    deps: list[tuple[PieceId, EdgeKind]]


def decode_vertex(payload: bytes) -> VertexRecord:
    graph_id, ts, piece, function_id = struct.unpack_from(">QQHI", payload, 1)
    pos = 1 + 8 + 8 + 2 + 4
    (nparams,) = struct.unpack_from(">I", payload, pos)
    pos += 4
    params = payload[pos:pos + nparams]
    pos += nparams
    (ndeps,) = struct.unpack_from(">I", payload, pos)
    pos += 4
    deps = []
    for _ in range(ndeps):
        dep_ts, dep_piece, code = struct.unpack_from(">QHB", payload, pos)
        pos += 11
        deps.append(((dep_ts, dep_piece), _EDGE_KIND[code]))
    return VertexRecord(graph_id, ts, piece, function_id, params, deps)


def encode_terminator(graph_id: int, vertex_count: int) -> bytes:
    return struct.pack(">BQI", REC_TERMINATOR, graph_id, vertex_count)


def encode_checkpoint_item(key: Key, record: Record) -> bytes:
    out = bytearray(struct.pack(">BIH", REC_CHECKPOINT_ITEM, key.table, len(key.primary)))
    out += key.primary
    out += struct.pack(">H", len(record))
    for col in record:
        out += struct.pack(">I", len(col)) + col
    return bytes(out)


def decode_checkpoint_item(payload: bytes) -> tuple[Key, Record]:
    table, klen = struct.unpack_from(">IH", payload, 1)
    pos = 1 + 4 + 2
    primary = payload[pos:pos + klen]
    pos += klen
    (ncols,) = struct.unpack_from(">H", payload, pos)
    pos += 2
    cols = []
    for _ in range(ncols):
        (clen,) = struct.unpack_from(">I", payload, pos)
        pos += 4
        cols.append(payload[pos:pos + clen])
        pos += clen
    return Key(table, primary), tuple(cols)


# -- logging ----------------------------------------------------------------


class GraphLogger:
    """Appends whole graphs to the active segment, one flush per graph.

    When log_graph returns, every vertex record and the terminator are
    durable, so callers may report the batch committed.
    """

    def __init__(self, directory: str | os.PathLike, fsync: bool = True) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / SEGMENT_NAME
        self.fsync = fsync
        self.flush_count = 0
        self.graph_count = 0
        self.bytes_logged = 0
        self._last_graph_id = 0
        try:
            self._f = open(self.path, "ab")
            if self._f.tell() == 0:
                self._f.write(framing.HEADER)
                self._f.flush()
        except OSError as exc:
            raise DurabilityError(f"cannot open log segment {self.path}: {exc}") from exc

    def log_graph(self, graph: DependencyGraph) -> int:
        """Returns the durable end offset after this graph's frames."""
        if graph.batch_id <= self._last_graph_id:
            raise EngineError(
                f"graph id {graph.batch_id} not above last logged {self._last_graph_id}"
            )
        preds: dict[PieceId, list[tuple[PieceId, EdgeKind]]] = {}
        for (src, dst), kind in graph.edge_kind.items():
            preds.setdefault(dst, []).append((src, kind))
        buf = bytearray()
        for pid in sorted(graph.pieces):
            piece = graph.pieces[pid]
            buf += framing.frame(
                encode_vertex(
                    graph.batch_id,
                    piece.txn.ts,
                    piece.index,
                    piece.txn.function_id,
                    piece.txn.params,
                    sorted(preds.get(pid, [])),
                )
            )
        buf += framing.frame(encode_terminator(graph.batch_id, len(graph.pieces)))
        try:
            self._f.write(buf)
            self._f.flush()
            if self.fsync:
                os.fsync(self._f.fileno())
        except OSError as exc:
            raise DurabilityError(f"log write failed: {exc}") from exc
        self.flush_count += 1
        self.graph_count += 1
        self.bytes_logged += len(buf)
        self._last_graph_id = graph.batch_id
        return self._f.tell()

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "GraphLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def full_image_baseline_bytes(events: Sequence[AccessEvent], store: Store) -> int:
    """Framed bytes a physical logger would write for the same work: one
    full after-image (at schema width) per write event."""
    total = 0
    for event in events:
        if event.op != "w":
            continue
        widths = store.table(event.key.table).schema.column_widths
        payload = 1 + 8 + 4 + 2 + len(event.key.primary) + 2 + sum(4 + w for w in widths)
        total += 8 + payload
    return total


# -- checkpointing ----------------------------------------------------------


def _section_of(key: Key, sections: int) -> int:
    return zlib.crc32(struct.pack(">I", key.table) + key.primary) % sections


class CheckpointManager:
    """Sectioned checkpoints with copy-on-write capture.

    `after_batch` starts a checkpoint every `interval` batches. The capture
    begins synchronously (so the watermark is exact), then one writer thread
    per section streams its share of the pinned state to disk while the
    engine keeps executing. The manifest is written last and atomically; a
    failed writeout leaves the previous checkpoint in place.
    """

    def __init__(
        self,
        store: Store,
        directory: str | os.PathLike,
        sections: int = 4,
        interval: int = 50,
        fsync: bool = True,
        background: bool = True,
    ) -> None:
        if sections < 1:
            raise DurabilityError("sections must be at least 1")
        self.store = store
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.sections = sections
        self.interval = interval
        self.fsync = fsync
        self.background = background
        self.checkpoints_taken = 0
        self.last_watermark = 0
        self.last_error: Optional[Exception] = None
        self._ckpt_id = 0
        existing = load_manifest(self.directory)
        if existing:
            self._ckpt_id = existing["checkpoint_id"]
            self.last_watermark = existing["watermark"]
        self._worker: Optional[threading.Thread] = None

    def after_batch(self, batch_id: int) -> None:
        if self.interval <= 0:
            return
        if self._worker is not None and self._worker.is_alive():
            return  # previous checkpoint still writing
        if batch_id - self.last_watermark >= self.interval:
            self.take(batch_id)

    def take(self, watermark: int) -> None:
        self.wait()
        self.store.begin_capture()
        self._ckpt_id += 1
        if self.background:
            self._worker = threading.Thread(
                target=self._write, args=(self._ckpt_id, watermark), daemon=True
            )
            self._worker.start()
        else:
            self._write(self._ckpt_id, watermark)

    def wait(self) -> None:
        if self._worker is not None:
            self._worker.join()
            self._worker = None

    def _write(self, ckpt_id: int, watermark: int) -> None:
        paths = [
            self.directory / f"ckpt-{ckpt_id:06d}-s{j}.dat" for j in range(self.sections)
        ]
        try:
            try:
                errors: list[Exception] = []
                writers = [
                    threading.Thread(
                        target=self._write_section, args=(paths[j], j, errors)
                    )
                    for j in range(self.sections)
                ]
                for w in writers:
                    w.start()
                for w in writers:
                    w.join()
                if errors:
                    raise errors[0]
            finally:
                self.store.end_capture()
            manifest = {
                "format_version": framing.FORMAT_VERSION,
                "checkpoint_id": ckpt_id,
                "watermark": watermark,
                "sections": self.sections,
                "files": [p.name for p in paths],
                "taken_at": time.time(),
            }
            tmp = self.directory / (MANIFEST_NAME + ".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(manifest, f)
                f.flush()
                if self.fsync:
                    os.fsync(f.fileno())
            os.replace(tmp, self.directory / MANIFEST_NAME)
            if self.fsync:
                fd = os.open(self.directory, os.O_RDONLY)
                try:
                    os.fsync(fd)
                finally:
                    os.close(fd)
            self.checkpoints_taken += 1
            self.last_watermark = watermark
            self._cleanup(keep_id=ckpt_id)
        except Exception as exc:  # keep the previous checkpoint usable
            self.last_error = exc
            log.warning("checkpoint %d discarded: %s", ckpt_id, exc)
            for p in paths:
                try:
                    p.unlink(missing_ok=True)
                except OSError:
                    pass

    def _write_section(self, path: Path, section: int, errors: list) -> None:
        try:
            with open(path, "wb") as f:
                f.write(framing.HEADER)
                for key, record in self.store.capture_items():
                    if _section_of(key, self.sections) != section:
                        continue
                    framing.write_frame(f, encode_checkpoint_item(key, record))
                f.flush()
                if self.fsync:
                    os.fsync(f.fileno())
        except Exception as exc:
            errors.append(exc)

    def _cleanup(self, keep_id: int) -> None:
        for path in self.directory.glob("ckpt-*.dat"):
            if not path.name.startswith(f"ckpt-{keep_id:06d}-"):
                try:
                    path.unlink()
                except OSError:
                    pass


def load_manifest(directory: Path) -> Optional[dict]:
    path = Path(directory) / MANIFEST_NAME
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
    required = {"checkpoint_id", "watermark", "sections", "files"}
    if not required.issubset(manifest):
        return None
    if not all((Path(directory) / name).exists() for name in manifest["files"]):
        return None
    return manifest


# -- recovery ---------------------------------------------------------------


@dataclass
class RecoveredState:
    store: Store
    watermark: int
    replayed_graphs: list[int]
    outcomes: dict[int, str]
    torn_offset: Optional[int] = None  # where the log was cut, if it was


def recover(
    registry: ProcedureRegistry,
    directory: str | os.PathLike,
    store_factory: Callable[[], Store],
    worker_count: int = 4,
    validate_graphs: bool = True,
    truncate: bool = True,
) -> RecoveredState:
    """Checkpoint load plus log replay; pure function of the files on disk.

    Complete graphs above the manifest watermark are re-chopped from their
    logged transactions and re-executed; an incomplete trailing graph is
    discarded (its transactions were never reported committed). With
    `truncate`, a torn tail is also physically cut so the segment can be
    appended to again.
    """
    from .execution import BatchConfig, DgccEngine

    directory = Path(directory)
    store = store_factory()
    watermark = 0
    manifest = load_manifest(directory)
    if manifest is not None:
        try:
            for name in manifest["files"]:
                _load_section(directory / name, store)
            watermark = manifest["watermark"]
        except DurabilityError as exc:
            log.warning("checkpoint unusable (%s); replaying full log", exc)
            store = store_factory()
            watermark = 0

    graphs, torn_offset = _scan_segment(directory / SEGMENT_NAME, truncate)
    replay = [(gid, recs) for gid, recs in graphs if gid > watermark]

    outcomes: dict[int, str] = {}
    replayed: list[int] = []
    if replay:
        config = BatchConfig(
            max_batch_size=max(len({r.ts for r in recs}) for _, recs in replay),
            worker_count=worker_count,
        )
        with DgccEngine(store, registry, config) as engine:
            for gid, recs in replay:
                txns = _rebuild_transactions(gid, recs)
                if validate_graphs:
                    _validate_graph(registry, gid, txns, recs)
                result = engine.process_batch(txns)
                outcomes.update(result.outcomes)
                replayed.append(gid)
    return RecoveredState(store, watermark, replayed, outcomes, torn_offset)


def _load_section(path: Path, store: Store) -> None:
    try:
        with open(path, "rb") as f:
            if not framing.check_header(f):
                raise DurabilityError(f"bad header in section {path.name}")
            size = os.fstat(f.fileno()).st_size
            end = framing.HEADER_SIZE
            for offset, payload in framing.iter_frames(f):
                if payload[0] != REC_CHECKPOINT_ITEM:
                    raise DurabilityError(f"unexpected record in section {path.name}")
                key, record = decode_checkpoint_item(payload)
                store.put(key, record)
                end = offset + 8 + len(payload)
            if end != size:
                raise DurabilityError(f"torn section {path.name}")
    except OSError as exc:
        raise DurabilityError(f"cannot read section {path.name}: {exc}") from exc


def _scan_segment(
    path: Path, truncate: bool
) -> tuple[list[tuple[int, list[VertexRecord]]], Optional[int]]:
    """Complete graphs in log order, plus the offset of any torn tail.

    Anything after the last terminator (an unterminated graph, a terminator
    whose count disagrees, or a corrupt frame) is dropped.
    """
    if not path.exists():
        return [], None
    complete: list[tuple[int, list[VertexRecord]]] = []
    open_gid: Optional[int] = None
    open_records: list[VertexRecord] = []
    good_end = framing.HEADER_SIZE
    with open(path, "rb") as f:
        size = os.fstat(f.fileno()).st_size
        head = f.read(framing.HEADER_SIZE)
        if head != framing.HEADER:
            if framing.HEADER.startswith(head):
                # crash while creating the segment: nothing was ever durable
                if truncate and size:
                    with open(path, "rb+") as cut:
                        cut.truncate(0)
                return [], 0 if size else None
            raise DurabilityError(f"bad log header in {path.name}")
        for offset, payload in framing.iter_frames(f):
            rtype = payload[0]
            if rtype == REC_VERTEX:
                record = decode_vertex(payload)
                if open_gid is None:
                    open_gid = record.graph_id
                if record.graph_id != open_gid:
                    break  # interleaved graphs: treat as corruption
                open_records.append(record)
            elif rtype == REC_TERMINATOR:
                gid, count = struct.unpack_from(">QI", payload, 1)
                if gid != open_gid or count != len(open_records):
                    break
                if complete and gid <= complete[-1][0]:
                    break
                complete.append((gid, open_records))
                open_gid, open_records = None, []
                good_end = offset + 8 + len(payload)
            else:
                break
    torn = None
    if good_end != size:
        torn = good_end
        if truncate:
            with open(path, "rb+") as f:
                f.truncate(good_end)
    return complete, torn


def _rebuild_transactions(gid: int, records: list[VertexRecord]) -> list[Transaction]:
    by_ts: dict[int, list[VertexRecord]] = {}
    for record in records:
        by_ts.setdefault(record.ts, []).append(record)
    txns = []
    for ts in sorted(by_ts):
        recs = sorted(by_ts[ts], key=lambda r: r.piece)
        first = recs[0]
        for rec in recs:
            if rec.function_id != first.function_id or rec.params != first.params:
                raise DurabilityError(
                    f"graph {gid}: inconsistent records for transaction {ts}"
                )
        if [r.piece for r in recs] != list(range(len(recs))):
            raise DurabilityError(f"graph {gid}: missing piece records for txn {ts}")
        txns.append(Transaction(ts, first.function_id, first.params))
    return txns


def _validate_graph(
    registry: ProcedureRegistry,
    gid: int,
    txns: list[Transaction],
    records: list[VertexRecord],
) -> None:
    """Logged dependency info must match the freshly rebuilt graph exactly."""
    rebuilt = build_graph((chop(registry, t) for t in txns), gid)
    logged_vertices = {(r.ts, r.piece) for r in records}
    if logged_vertices != set(rebuilt.pieces):
        raise DurabilityError(f"graph {gid}: vertex set mismatch on replay")
    logged_edges = {
        (src, (r.ts, r.piece), kind) for r in records for src, kind in r.deps
    }
    rebuilt_edges = {(src, dst, kind) for (src, dst), kind in rebuilt.edge_kind.items()}
    if logged_edges != rebuilt_edges:
        raise DurabilityError(f"graph {gid}: edge set mismatch on replay")
