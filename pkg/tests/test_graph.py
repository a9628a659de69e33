"""Graph construction: per-case edges, walkthrough batch, path-sufficiency oracle."""

from __future__ import annotations

import random

import pytest

from conftest import (
    WALKTHROUGH_LOGIC_EDGES,
    WALKTHROUGH_ROUNDS,
    WALKTHROUGH_TIME_EDGES,
    Scripted,
    walkthrough_batch,
    make_key,
)
from dgcc.errors import EngineError
from dgcc.graph import EdgeKind, build_graph
from dgcc.txmodel import chop


def bg(scripted: Scripted, txns):
    return build_graph(chop(scripted.registry, t) for t in txns)


def test_walkthrough_batch_edges_and_rounds(scripted):
    graph = bg(scripted, walkthrough_batch(scripted))
    assert graph.vertex_count == 8
    assert graph.edges(EdgeKind.TIME_ORDER) == WALKTHROUGH_TIME_EDGES
    assert graph.edges(EdgeKind.LOGIC) == WALKTHROUGH_LOGIC_EDGES
    assert graph.roots() == sorted(WALKTHROUGH_ROUNDS[0])
    # the read-write piece on an untouched key stays isolated
    assert graph.in_degree[(3, 2)] == 0 and graph.succs[(3, 2)] == []
    assert graph.longest_path_len() == len(WALKTHROUGH_ROUNDS)

    meta_a = graph.record_meta[make_key("A")]
    assert meta_a.dominators == {(3, 1)} and not meta_a.dominator_is_writer
    assert meta_a.latest_writer == (2, 0)
    meta_d = graph.record_meta[make_key("D")]
    assert meta_d.dominators == {(3, 0)} and meta_d.dominator_is_writer
    assert meta_d.latest_writer == (3, 0)


def test_walkthrough_batch_dump_is_stable(scripted):
    graph = bg(scripted, walkthrough_batch(scripted))
    assert graph.dump() == "\n".join(
        [
            "1.0 -> 1.1 [logic]",
            "1.0 -> 1.2 [logic]",
            "1.1 -> 2.0 [time]",
            "1.2 -> 2.0 [time]",
            "2.0 -> 3.0 [time]",
            "2.0 -> 3.1 [time]",
            "2.1 -> 3.0 [time]",
            "3.2",
        ]
    )


def test_writer_then_reader_and_writer_chains(scripted):
    x = make_key("x")
    t1 = scripted.txn([{"w": [x]}])
    t2 = scripted.txn([{"r": [x]}])
    t3 = scripted.txn([{"w": [x]}])
    graph = bg(scripted, [t1, t2, t3])
    assert graph.edges(EdgeKind.TIME_ORDER) == {((1, 0), (2, 0)), ((2, 0), (3, 0))}


def test_reader_group_waits_on_latest_writer_not_each_other(scripted):
    x = make_key("x")
    t1 = scripted.txn([{"w": [x]}])
    readers = [scripted.txn([{"r": [x]}]) for _ in range(3)]
    t5 = scripted.txn([{"w": [x]}])
    graph = bg(scripted, [t1, *readers, t5])
    time_edges = graph.edges(EdgeKind.TIME_ORDER)
    # every reader after the writer, no edges among readers
    assert ((1, 0), (2, 0)) in time_edges
    assert ((1, 0), (3, 0)) in time_edges and ((1, 0), (4, 0)) in time_edges
    assert not any(1 < s[0] < 5 and 1 < d[0] < 5 for s, d in time_edges)
    # the next writer drains the whole group
    for ts in (2, 3, 4):
        assert ((ts, 0), (5, 0)) in time_edges
    assert ((1, 0), (5, 0)) not in time_edges  # path via readers suffices


def test_readers_on_never_written_key_stay_independent(scripted):
    x = make_key("x")
    txns = [scripted.txn([{"r": [x]}]) for _ in range(4)]
    graph = bg(scripted, txns)
    assert graph.edge_count == 0
    meta = graph.record_meta[x]
    assert meta.dominators == {(1, 0), (2, 0), (3, 0), (4, 0)}
    assert meta.latest_writer is None


def test_read_write_piece_counts_as_writer(scripted):
    x = make_key("x")
    t1 = scripted.txn([{"r": [x], "w": [x]}])
    t2 = scripted.txn([{"r": [x], "w": [x]}])
    graph = bg(scripted, [t1, t2])
    assert graph.edges(EdgeKind.TIME_ORDER) == {((1, 0), (2, 0))}
    meta = graph.record_meta[x]
    assert meta.dominators == {(2, 0)} and meta.dominator_is_writer


def test_conflicting_siblings_use_logic_not_time_edges(scripted):
    x = make_key("x")
    t1 = scripted.txn([{"w": [x]}, {"r": [x]}], logic_edges=((0, 1),))
    graph = bg(scripted, [t1])
    assert graph.edges(EdgeKind.TIME_ORDER) == set()
    assert graph.edges(EdgeKind.LOGIC) == {((1, 0), (1, 1))}
    assert graph.skipped_same_txn >= 1


def test_multi_key_conflicts_deduplicate_to_one_edge(scripted):
    x, y = make_key("x"), make_key("y")
    t1 = scripted.txn([{"w": [x, y]}])
    t2 = scripted.txn([{"r": [x, y]}])
    graph = bg(scripted, [t1, t2])
    assert graph.edges(EdgeKind.TIME_ORDER) == {((1, 0), (2, 0))}
    assert graph.in_degree[(2, 0)] == 1


def test_out_of_order_admission_rejected(scripted):
    t1 = scripted.txn([{"w": [make_key("x")]}], ts=5)
    t2 = scripted.txn([{"w": [make_key("x")]}], ts=4)
    with pytest.raises(EngineError):
        bg(scripted, [t1, t2])


def _random_batch(scripted: Scripted, rng: random.Random, n_txns: int, n_keys: int):
    """Valid random transactions: conflicting sibling pieces get logic edges,
    since unordered sibling conflicts are rejected procedures."""
    txns = []
    for _ in range(n_txns):
        n_pieces = rng.randint(1, 4)
        pieces = []
        for _ in range(n_pieces):
            reads = {make_key(rng.randrange(n_keys)) for _ in range(rng.randint(0, 3))}
            writes = {make_key(rng.randrange(n_keys)) for _ in range(rng.randint(0, 2))}
            pieces.append({"r": sorted(reads), "w": sorted(writes)})
        edges = set()
        for i in range(n_pieces):
            ri, wi = set(pieces[i]["r"]), set(pieces[i]["w"])
            for j in range(i + 1, n_pieces):
                rj, wj = set(pieces[j]["r"]), set(pieces[j]["w"])
                if wi & (rj | wj) or (ri | wi) & wj or rng.random() < 0.3:
                    edges.add((i, j))
        txns.append(scripted.txn(pieces, logic_edges=tuple(sorted(edges))))
    return txns


def _conflicts(a, b) -> bool:
    return bool(a.writeset & b.accessset or a.accessset & b.writeset)


def test_random_batches_satisfy_path_sufficiency(scripted):
    """Every cross-transaction conflicting pair must be joined by a directed
    path from the older piece; every time edge must itself be a conflict."""
    rng = random.Random(404)
    for trial in range(60):
        n_keys = rng.choice([3, 8, 40])
        txns = _random_batch(scripted, rng, rng.randint(2, 10), n_keys)
        graph = bg(scripted, txns)
        graph.topo_order()  # raises on a cycle

        for src, dst in graph.edges(EdgeKind.TIME_ORDER):
            assert src[0] < dst[0]
            assert _conflicts(graph.pieces[src], graph.pieces[dst])

        pieces = sorted(graph.pieces)
        reach = {pid: graph.reachable(pid) for pid in pieces}
        for i, src in enumerate(pieces):
            for dst in pieces[i + 1:]:
                if src[0] == dst[0]:
                    continue
                if _conflicts(graph.pieces[src], graph.pieces[dst]):
                    assert dst in reach[src], (
                        f"trial {trial}: no path {src} -> {dst}\n{graph.dump()}"
                    )


def test_longest_path_matches_brute_force(scripted):
    rng = random.Random(99)
    for _ in range(20):
        txns = _random_batch(scripted, rng, rng.randint(2, 7), 5)
        graph = bg(scripted, txns)

        best = 0
        for start in graph.pieces:
            stack = [(start, 1)]
            while stack:
                pid, depth = stack.pop()
                best = max(best, depth)
                for succ in graph.succs[pid]:
                    stack.append((succ, depth + 1))
        assert graph.longest_path_len() == best
