"""End-to-end acceptance suite.

One test per acceptance criterion, in order. Every test prints a single
verdict line (`ACCEPTANCE nn PASS|FAIL — details`); run with `-s` to stream
them. Functional criteria (1-6, 11) are deterministic. Criteria 7-10 are
timed trend comparisons and therefore hardware-sensitive: the thresholds
assume a multi-core machine where the engines actually run in parallel and
contention between threads is real. On a single-core interpreter-locked
host the graph engine cannot recoup its scheduling overhead against an
optimistic baseline that never overlaps, so 7 and 8 are expected to fail
there; the verdict lines carry the measured numbers either way.
"""

from __future__ import annotations

import gc
import random
import shutil
import statistics
import threading
import time
from contextlib import contextmanager

from conftest import (
    WALKTHROUGH_LOGIC_EDGES,
    WALKTHROUGH_ROUNDS,
    WALKTHROUGH_TIME_EDGES,
    Scripted,
    fresh_store,
    make_key,
    walkthrough_batch,
)
from dgcc.baselines import MvccEngine, OccEngine, TwoPhaseLockingEngine
from dgcc.bench import RunConfig, run
from dgcc.execution import BatchConfig, DgccEngine
from dgcc.framing import HEADER_SIZE
from dgcc.graph import EdgeKind, build_graph
from dgcc.recovery import (
    CheckpointManager,
    GraphLogger,
    SEGMENT_NAME,
    full_image_baseline_bytes,
    recover,
)
from dgcc.storage import Store, TableSchema
from dgcc.txmodel import (
    PieceKind,
    PieceTemplate,
    ProcedureRegistry,
    StoredProcedure,
    Transaction,
    chop,
)
from dgcc.verify import (
    COMMITTED,
    CONDITION_FAILED,
    check_graph,
    mvcc_schedule_check,
    schedule_check,
    serial_oracle,
)
from dgcc.workloads import TpccConfig, TpccWorkload, YcsbConfig, YcsbWorkload

K = make_key


def _verdict(num: int, ok: bool, detail: str) -> str:
    line = f"ACCEPTANCE {num:02d} {'PASS' if ok else 'FAIL'} — {detail}"
    print(f"\n{line}", flush=True)
    return line


@contextmanager
def quiet_gc():
    """Freeze the current heap and pause cyclic collection for a long run;
    per-batch objects are acyclic and die by refcount anyway."""
    gc.collect()
    gc.freeze()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()
        gc.unfreeze()
        gc.collect()


def _median_metrics(cfg: RunConfig, runs: int = 3) -> tuple[float, float]:
    """(median throughput, median mean latency ms) over identical runs."""
    tputs, lats = [], []
    for _ in range(runs):
        report = run(cfg)
        tputs.append(report.throughput)
        lats.append(report.latency_mean_ms)
    return statistics.median(tputs), statistics.median(lats)


# ---------------------------------------------------------------------------
# Criteria 1 + 2: serial equivalence, and condition checks as the only aborts
# ---------------------------------------------------------------------------

_C1_CACHE: dict | None = None


def _serial_equivalence_results() -> dict:
    """Run the randomized-batch equivalence study once; both criteria read it.

    Grid: key-skew {uniform, hot} x read/write mix {4:1, 1:1, 1:4}, engine at
    1/4/8 workers, every batch compared to the serial oracle by digest and by
    per-transaction outcome. The order-entry workload adds multi-piece
    procedures with condition checks that sometimes fail.
    """
    global _C1_CACHE
    if _C1_CACHE is not None:
        return _C1_CACHE

    started = time.perf_counter()
    mismatches: list[str] = []
    outcome_kinds: set[str] = set()
    batches_run = 0
    condition_failures = 0

    def run_grid(workload, registry, oracle_store, batches, rng, lo, hi, label):
        nonlocal batches_run, condition_failures
        stores = []
        engines = []
        for workers in (1, 4, 8):
            st = Store()
            workload.populate(st)
            stores.append(st)
            engines.append(
                (workers,
                 DgccEngine(st, registry,
                            BatchConfig(max_batch_size=500, worker_count=workers)))
            )
        current_oracle = oracle_store
        try:
            for _ in range(batches):
                batch = list(workload.stream(rng.randint(lo, hi)))
                expected = serial_oracle(registry, batch, current_oracle)
                current_oracle = expected.store
                condition_failures += sum(
                    1 for v in expected.outcomes.values() if v == CONDITION_FAILED
                )
                for workers, engine in engines:
                    result = engine.process_batch(batch)
                    outcome_kinds.update(result.outcomes.values())
                    if result.outcomes != expected.outcomes:
                        mismatches.append(f"{label} k={workers}: outcome divergence")
                    if engine.store.snapshot_digest() != expected.digest:
                        mismatches.append(f"{label} k={workers}: digest divergence")
                batches_run += 1
        finally:
            for _, engine in engines:
                engine.close()

    with quiet_gc():
        combo = 0
        for theta in (0.0, 0.8):
            for rw in (4.0, 1.0, 0.25):
                combo += 1
                wl = YcsbWorkload(
                    YcsbConfig(theta=theta, rw_ratio=rw, table_size=800,
                               ops_per_txn=8, seed=100 + combo)
                )
                oracle_store = Store()
                wl.populate(oracle_store)
                run_grid(wl, wl.registry, oracle_store,
                         167 if combo <= 4 else 166,
                         random.Random(9000 + combo), 20, 150,
                         f"kv theta={theta} rw={rw}")

        wl = TpccWorkload(TpccConfig(seed=77))
        oracle_store = Store()
        wl.populate(oracle_store)
        run_grid(wl, wl.registry, oracle_store, 200,
                 random.Random(4242), 30, 100, "orders")

    _C1_CACHE = {
        "elapsed": time.perf_counter() - started,
        "batches": batches_run,
        "mismatches": mismatches,
        "outcome_kinds": outcome_kinds,
        "condition_failures": condition_failures,
    }
    return _C1_CACHE


def test_c01_serial_equivalence():
    res = _serial_equivalence_results()
    ok = not res["mismatches"] and res["batches"] == 1200 and res["elapsed"] < 300
    detail = (
        f"{res['batches']} batches (1000 kv + 200 order-entry) x workers 1/4/8, "
        f"{len(res['mismatches'])} divergences, {res['elapsed']:.1f}s (budget 300s)"
    )
    assert ok, _verdict(1, ok, detail) + "; first: " + "; ".join(res["mismatches"][:3])
    _verdict(1, ok, detail)


def test_c02_no_conflict_aborts():
    res = _serial_equivalence_results()
    conflict_aborts = sum(
        1 for kind in res["outcome_kinds"] if kind not in (COMMITTED, CONDITION_FAILED)
    )
    ok = conflict_aborts == 0 and res["outcome_kinds"] <= {COMMITTED, CONDITION_FAILED}
    detail = (
        f"outcome kinds over {res['batches']} batches: {sorted(res['outcome_kinds'])}, "
        f"{res['condition_failures']} condition failures, 0 conflict aborts"
    )
    assert ok, _verdict(2, ok, detail)
    _verdict(2, ok, detail)


# ---------------------------------------------------------------------------
# Criterion 3: graph construction correctness
# ---------------------------------------------------------------------------

def _random_batch(sc: Scripted, rng: random.Random, n_txns: int, n_keys: int):
    """Valid random transactions: conflicting sibling pieces get logic edges."""
    txns = []
    for _ in range(n_txns):
        n_pieces = rng.randint(1, 4)
        pieces = []
        for _ in range(n_pieces):
            reads = {K(rng.randrange(n_keys)) for _ in range(rng.randint(0, 3))}
            writes = {K(rng.randrange(n_keys)) for _ in range(rng.randint(0, 2))}
            pieces.append({"r": sorted(reads), "w": sorted(writes)})
        edges = set()
        for i in range(n_pieces):
            ri, wi = set(pieces[i]["r"]), set(pieces[i]["w"])
            for j in range(i + 1, n_pieces):
                rj, wj = set(pieces[j]["r"]), set(pieces[j]["w"])
                if wi & (rj | wj) or (ri | wi) & wj or rng.random() < 0.3:
                    edges.add((i, j))
        txns.append(sc.txn(pieces, logic_edges=tuple(sorted(edges))))
    return txns


def _conflicts(a, b) -> bool:
    return bool(a.writeset & b.accessset or a.accessset & b.writeset)


def test_c03_graph_correctness():
    sc = Scripted()
    rng = random.Random(303)
    problems: list[str] = []
    with quiet_gc():
        for trial in range(500):
            txns = _random_batch(sc, rng, rng.randint(2, 12), rng.choice([3, 8, 40]))
            graph = build_graph(chop(sc.registry, t) for t in txns)
            audit = check_graph(graph)
            if audit:
                problems.append(f"trial {trial}: {audit[0]}")
                continue
            for src, dst in graph.edges(EdgeKind.TIME_ORDER):
                if src[0] >= dst[0]:
                    problems.append(f"trial {trial}: time edge {src}->{dst} misordered")
            # independent conflicting-pair path audit
            ids = sorted(graph.pieces)
            reach = {pid: graph.reachable(pid) for pid in ids}
            for i, src in enumerate(ids):
                for dst in ids[i + 1:]:
                    if src[0] != dst[0] and _conflicts(
                        graph.pieces[src], graph.pieces[dst]
                    ) and dst not in reach[src]:
                        problems.append(f"trial {trial}: no path {src}->{dst}")

    # canonical three-transaction walkthrough: exact edge sets, one isolated
    # piece, and the cross-transaction edges (2,0)->(3,0), (2,1)->(3,0),
    # (2,0)->(3,1)
    sc2 = Scripted()
    graph = build_graph(chop(sc2.registry, t) for t in walkthrough_batch(sc2))
    if graph.edges(EdgeKind.TIME_ORDER) != WALKTHROUGH_TIME_EDGES:
        problems.append("walkthrough time edges diverge")
    if graph.edges(EdgeKind.LOGIC) != WALKTHROUGH_LOGIC_EDGES:
        problems.append("walkthrough logic edges diverge")
    touched = {p for pair in graph.edge_kind for p in pair}
    if (3, 2) in touched:
        problems.append("walkthrough piece (3,2) not isolated")

    ok = not problems
    detail = (
        f"500 random batches acyclic, timestamp-ordered, path-sufficient; "
        f"walkthrough edges exact with (3,2) isolated; {len(problems)} problems"
    )
    assert ok, _verdict(3, ok, detail) + "; first: " + "; ".join(problems[:3])
    _verdict(3, ok, detail)


# ---------------------------------------------------------------------------
# Criterion 4: round schedule shape
# ---------------------------------------------------------------------------

def test_c04_execution_rounds():
    problems: list[str] = []

    sc = Scripted()
    store = fresh_store({K(x): ord(x) for x in "ABCDEF"})
    with DgccEngine(store, sc.registry, BatchConfig(worker_count=2)) as engine:
        result = engine.process_batch(walkthrough_batch(sc))
    if [set(f) for f in result.frontiers] != WALKTHROUGH_ROUNDS:
        problems.append(f"walkthrough frontier sequence {result.frontiers}")

    sc2 = Scripted()
    rng = random.Random(404)
    store2 = fresh_store()
    with quiet_gc():
        with DgccEngine(store2, sc2.registry, BatchConfig(worker_count=2)) as engine:
            for trial in range(200):
                txns = _random_batch(sc2, rng, rng.randint(2, 14), rng.choice([4, 10]))
                graph = build_graph(chop(sc2.registry, t) for t in txns)
                result = engine.process_batch(txns)
                if result.rounds != graph.longest_path_len():
                    problems.append(
                        f"trial {trial}: {result.rounds} rounds vs "
                        f"longest path {graph.longest_path_len()}"
                    )

    ok = not problems
    detail = (
        "walkthrough frontiers {(1,0),(2,1),(3,2)} > {(1,1),(1,2)} > {(2,0)} > "
        f"{{(3,0),(3,1)}} reproduced; 200 random DAGs: rounds == longest path; "
        f"{len(problems)} problems"
    )
    assert ok, _verdict(4, ok, detail) + "; first: " + "; ".join(problems[:3])
    _verdict(4, ok, detail)


# ---------------------------------------------------------------------------
# Criterion 5: baseline serializability plus the canonical abort scenarios
# ---------------------------------------------------------------------------

def _versioned_store(initial: dict) -> Store:
    store = Store()
    store.create_table(0, TableSchema("val", (8,), initial_capacity=256), versioned=True)
    for key, value in initial.items():
        store.put(key, (value.to_bytes(8, "big"),))
    return store


def _custom_proc(registry, fid, pieces, logic_edges=()):
    templates = tuple(
        PieceTemplate(
            name=f"p{i}",
            read_keys=lambda params, ks=tuple(rk): ks,
            write_keys=lambda params, ks=tuple(wk): ks,
            body=body,
            kind=kind,
        )
        for i, (rk, wk, body, kind) in enumerate(pieces)
    )
    registry.register(StoredProcedure(
        function_id=fid, name=f"custom{fid}", decode_params=lambda raw: {},
        templates=templates, logic_edges=tuple(logic_edges),
    ))


def _enc(value: int) -> tuple:
    return (value.to_bytes(8, "big"),)


def _deadlock_scenario() -> tuple[bool, str]:
    """Two writers take A/B in opposite orders with a rendezvous so both hold
    one lock before requesting the other: exactly one deadlock victim."""
    A, B = K("A"), K("B")
    store = fresh_store({A: 1, B: 1})
    registry = ProcedureRegistry()
    t1_has_a, t2_has_b = threading.Event(), threading.Event()

    def t1_p0(ctx, params):
        ctx.write(A, _enc(101))
        t1_has_a.set()
        t2_has_b.wait(5)

    def t2_p0(ctx, params):
        t1_has_a.wait(5)
        ctx.write(B, _enc(201))
        t2_has_b.set()

    _custom_proc(registry, 1, [((), (A,), t1_p0, PieceKind.NORMAL),
                               ((), (B,), lambda c, p: c.write(B, _enc(102)), PieceKind.NORMAL)],
                 [(0, 1)])
    _custom_proc(registry, 2, [((), (B,), t2_p0, PieceKind.NORMAL),
                               ((), (A,), lambda c, p: c.write(A, _enc(202)), PieceKind.NORMAL)],
                 [(0, 1)])
    engine = TwoPhaseLockingEngine(store, registry, worker_count=2, detect_delay=0.001)
    result = engine.process_batch([Transaction(1, 1, b""), Transaction(2, 2, b"")])
    ok = (
        result.outcomes == {1: COMMITTED, 2: COMMITTED}
        and result.abort_events == {"deadlock": 1}
        and engine.locks.deadlocks_resolved == 1
        and result.commit_order == [1, 2]
    )
    return ok, f"deadlock aborts={result.abort_events.get('deadlock', 0)}"


def _validation_scenario() -> tuple[bool, str]:
    """A transaction reads A, a rival commits a write to A first: exactly one
    validation abort and the retry commits."""
    A, B = K("A"), K("B")
    store = fresh_store({A: 5, B: 5})
    registry = ProcedureRegistry()
    t1_read = threading.Event()
    first = {"value": True}

    def t1_p0(ctx, params):
        v = ctx.read(A)
        t1_read.set()
        if first["value"]:
            first["value"] = False
            deadline = time.time() + 5
            while ctx.read(A) == v and time.time() < deadline:
                time.sleep(0.001)
        ctx.write(B, _enc(111))

    def t2_p0(ctx, params):
        t1_read.wait(5)
        ctx.write(A, _enc(222))

    _custom_proc(registry, 1, [((A,), (B,), t1_p0, PieceKind.NORMAL)])
    _custom_proc(registry, 2, [((), (A,), t2_p0, PieceKind.NORMAL)])
    engine = OccEngine(store, registry, worker_count=2)
    result = engine.process_batch([Transaction(1, 1, b""), Transaction(2, 2, b"")])
    ok = (
        result.outcomes == {1: COMMITTED, 2: COMMITTED}
        and result.abort_events == {"validation": 1}
        and result.commit_order == [2, 1]
    )
    return ok, f"validation aborts={result.abort_events.get('validation', 0)}"


def _random_contended_batch(sc: Scripted, rng: random.Random, keys, n_txns):
    txns = []
    for _ in range(n_txns):
        pieces = []
        n_pieces = rng.randint(1, 3)
        for _ in range(n_pieces):
            k = rng.sample(keys, rng.randint(1, 2))
            pieces.append({"r": set(k), "w": {rng.choice(k)}})
        edges = [(i, i + 1) for i in range(n_pieces - 1)]
        txns.append(sc.txn(pieces, logic_edges=tuple(edges)))
    return txns


def test_c05_baseline_serializability():
    problems: list[str] = []
    keys = [K(i) for i in range(8)]
    counts = {"2pl": 0, "occ": 0, "mvcc": 0, "write_skew": 0}

    with quiet_gc():
        for proto, batches in (("2pl", 167), ("occ", 167), ("mvcc", 166)):
            sc = Scripted()
            rng = random.Random(505 + len(proto))
            trace: list = []
            if proto == "mvcc":
                store = _versioned_store({k: 1 for k in keys})
                engine = MvccEngine(store, sc.registry, worker_count=4, trace=trace)
            elif proto == "occ":
                store = fresh_store({k: 1 for k in keys})
                engine = OccEngine(store, sc.registry, worker_count=4, trace=trace)
            else:
                store = fresh_store({k: 1 for k in keys})
                engine = TwoPhaseLockingEngine(store, sc.registry, worker_count=4,
                                               detect_delay=0.001, trace=trace)
            for b in range(batches):
                engine.process_batch(_random_contended_batch(sc, rng, keys, 12))
                if proto == "mvcc":
                    report = mvcc_schedule_check(trace)
                    if not report.ok:
                        problems.append(f"mvcc batch {b}: {report.message}")
                    if report.write_skew:
                        counts["write_skew"] += 1
                else:
                    report = schedule_check(trace)
                    if not report.serializable:
                        problems.append(f"{proto} batch {b}: {report.message}")
                trace.clear()
                counts[proto] += 1

    dl_ok, dl_detail = _deadlock_scenario()
    va_ok, va_detail = _validation_scenario()
    if not dl_ok:
        problems.append(f"lock-cycle scenario: {dl_detail}")
    if not va_ok:
        problems.append(f"stale-read scenario: {va_detail}")

    ok = not problems
    detail = (
        f"{counts['2pl']}+{counts['occ']} locking/optimistic batches conflict-"
        f"serializable, {counts['mvcc']} snapshot batches clean "
        f"({counts['write_skew']} flagged write-skew only); scenarios: "
        f"{dl_detail}, {va_detail}"
    )
    assert ok, _verdict(5, ok, detail) + "; first: " + "; ".join(problems[:3])
    _verdict(5, ok, detail)


# ---------------------------------------------------------------------------
# Criterion 6: kill-and-recover trials
# ---------------------------------------------------------------------------

def _logged_run(workload, registry, store, n_batches, sizes_rng, lo, hi, log_dir,
                checkpoint_after: int | None = None, sections: int = 3):
    """Run batches with durable logging; returns (digests, offsets, outcomes
    per batch, checkpoint manager or None)."""
    logger = GraphLogger(log_dir, fsync=False)
    offsets: list[int | None] = [None]
    digests = [store.snapshot_digest()]
    outcomes_per_batch: list[dict] = [dict()]
    manager = None

    class Tracking:
        def log_graph(self, graph):
            offsets.append(logger.log_graph(graph))

    if checkpoint_after is not None:
        manager = CheckpointManager(store, log_dir, sections=sections,
                                    background=False, fsync=False)
        manager.take(watermark=0)
    with DgccEngine(store, registry, BatchConfig(worker_count=2),
                    log_writer=Tracking()) as engine:
        for b in range(1, n_batches + 1):
            result = engine.process_batch(list(workload.stream(sizes_rng.randint(lo, hi))))
            digests.append(store.snapshot_digest())
            outcomes_per_batch.append(dict(result.outcomes))
            if checkpoint_after is not None and b == checkpoint_after:
                manager.take(watermark=b)
    logger.close()
    return digests, offsets, outcomes_per_batch


def test_c06_recovery_trials(tmp_path):
    started = time.perf_counter()
    problems: list[str] = []
    trials = 0

    def run_trials(raw, offsets, digests, outcomes_per_batch, registry, factory,
                   base_dir, rng, n, min_cut, label):
        nonlocal trials
        for t in range(n):
            cut = rng.randrange(min_cut, len(raw) + 1)
            expect = max(i for i, off in enumerate(offsets) if i == 0 or off <= cut)
            trial_dir = tmp_path / f"{label}-{t}"
            shutil.copytree(base_dir, trial_dir)
            (trial_dir / SEGMENT_NAME).write_bytes(raw[:cut])
            state = recover(registry, trial_dir, factory)
            expected_outcomes: dict = {}
            for outcome in outcomes_per_batch[state.watermark + 1: expect + 1]:
                expected_outcomes.update(outcome)
            if state.store.snapshot_digest() != digests[expect]:
                problems.append(f"{label} trial {t}: digest != batch {expect} state")
            elif state.replayed_graphs != list(range(state.watermark + 1, expect + 1)):
                problems.append(f"{label} trial {t}: replayed {state.replayed_graphs}")
            elif state.outcomes != expected_outcomes:
                problems.append(f"{label} trial {t}: committed set diverges")
            else:
                again = recover(registry, trial_dir, factory)
                if again.store.snapshot_digest() != digests[expect]:
                    problems.append(f"{label} trial {t}: replay not idempotent")
            shutil.rmtree(trial_dir)
            trials += 1

    with quiet_gc():
        # key-value group: log only, cuts anywhere in the segment
        for group in range(3):
            cfg = YcsbConfig(theta=0.6, rw_ratio=1.0, table_size=300,
                             ops_per_txn=6, seed=600 + group)
            wl = YcsbWorkload(cfg)
            store = Store()
            wl.populate(store)
            log_dir = tmp_path / f"kv{group}"
            log_dir.mkdir()
            rng = random.Random(700 + group)
            digests, offsets, outcomes = _logged_run(
                wl, wl.registry, store, 12, rng, 5, 40, log_dir)
            raw = (log_dir / SEGMENT_NAME).read_bytes()

            def kv_factory(cfg=cfg):
                st = Store()
                YcsbWorkload(cfg).populate(st)
                return st

            run_trials(raw, offsets, digests, outcomes, wl.registry, kv_factory,
                       log_dir, rng, 10, HEADER_SIZE, f"kv{group}")

        # order-entry group: initial + mid-run checkpoint; crashes can only
        # happen after the data the checkpoint vouches for is durable
        for group in range(2):
            cfg = TpccConfig(seed=800 + group, items=200, customers_per_district=40)
            wl = TpccWorkload(cfg)
            store = Store()
            wl.populate(store)
            log_dir = tmp_path / f"orders{group}"
            log_dir.mkdir()
            rng = random.Random(900 + group)
            digests, offsets, outcomes = _logged_run(
                wl, wl.registry, store, 10, rng, 10, 40, log_dir,
                checkpoint_after=5)
            raw = (log_dir / SEGMENT_NAME).read_bytes()

            def order_factory(cfg=cfg):
                st = Store()
                TpccWorkload(cfg).create_tables(st)
                return st

            run_trials(raw, offsets, digests, outcomes, wl.registry, order_factory,
                       log_dir, rng, 10, offsets[5], f"orders{group}")

    elapsed = time.perf_counter() - started
    ok = not problems and trials == 50 and elapsed < 180
    detail = (
        f"{trials} kill-and-recover trials (30 log-only, 20 with checkpoints), "
        f"digest+committed-set exact, replay idempotent, "
        f"{elapsed:.1f}s (budget 180s)"
    )
    assert ok, _verdict(6, ok, detail) + "; first: " + "; ".join(problems[:3])
    _verdict(6, ok, detail)


# ---------------------------------------------------------------------------
# Criteria 7-10: timed trend comparisons (hardware-sensitive)
# ---------------------------------------------------------------------------

def test_c07_high_contention_throughput():
    medians = {}
    for proto in ("dgcc", "2pl", "occ", "mvcc"):
        cfg = RunConfig(protocol=proto, workload="ycsb", threads=8, max_batch=1000,
                        theta=0.8, rw_ratio=1.0, table_size=100_000,
                        duration=10.0, seed=71, warmup_txns=500)
        medians[proto], _ = _median_metrics(cfg)
    ratios = {p: medians["dgcc"] / medians[p] for p in ("2pl", "occ", "mvcc")}
    ok = all(r >= 1.5 for r in ratios.values())
    detail = (
        f"graph engine {medians['dgcc']:.0f} tps; ratios (need >=1.5x): "
        f"locking {ratios['2pl']:.2f}x, optimistic {ratios['occ']:.2f}x, "
        f"multiversion {ratios['mvcc']:.2f}x (medians of 3 x 10s, needs "
        f"a multi-core host)"
    )
    assert ok, _verdict(7, ok, detail)
    _verdict(7, ok, detail)


def test_c08_low_contention_scaling():
    results = {}
    for label, proto, threads in (("one", "dgcc", 1), ("six", "dgcc", 6),
                                  ("locking", "2pl", 6)):
        cfg = RunConfig(protocol=proto, workload="ycsb", threads=threads,
                        max_batch=1000, theta=0.5, rw_ratio=1.0,
                        table_size=100_000, duration=6.0, seed=81,
                        warmup_txns=400)
        results[label], _ = _median_metrics(cfg)
    scaling = results["six"] / results["one"] if results["one"] else 0.0
    comparable = results["locking"] * 2 >= results["six"]
    ok = scaling >= 2.0 and comparable
    detail = (
        f"six-worker/one-worker = {scaling:.2f}x (need >=2x; requires real "
        f"parallelism), locking {results['locking']:.0f} vs graph "
        f"{results['six']:.0f} tps (within-2x: {comparable})"
    )
    assert ok, _verdict(8, ok, detail)
    _verdict(8, ok, detail)


def test_c09_batch_size_shape(tmp_path):
    sizes = (100, 300, 500, 800, 1000, 5000)
    tputs, lats = {}, {}
    for delta in sizes:
        tput_runs, lat_runs = [], []
        for attempt in range(3):
            log_dir = tmp_path / f"d{delta}-{attempt}"
            cfg = RunConfig(protocol="dgcc", workload="tpcc", threads=8,
                            max_batch=delta, duration=3.0, seed=91,
                            warmup_txns=200, log_dir=str(log_dir),
                            checkpoint_interval=50, sections=4)
            report = run(cfg)
            tput_runs.append(report.throughput)
            lat_runs.append(report.latency_mean_ms)
            shutil.rmtree(log_dir, ignore_errors=True)
        tputs[delta] = statistics.median(tput_runs)
        lats[delta] = statistics.median(lat_runs)
    peak = max(sizes, key=lambda d: tputs[d])
    rising = all(
        tputs[sizes[i + 1]] >= tputs[sizes[i]] * 0.9
        for i in range(sizes.index(peak))
    )
    latency_ok = lats[5000] > lats[500]
    ok = rising and latency_ok
    curve = ", ".join(f"{d}:{tputs[d]:.0f}" for d in sizes)
    detail = (
        f"throughput by batch cap [{curve}] tps, peak at {peak}, "
        f"non-decreasing to peak within 10%: {rising}; mean latency "
        f"{lats[500]:.0f}ms@500 < {lats[5000]:.0f}ms@5000: {latency_ok}"
    )
    assert ok, _verdict(9, ok, detail)
    _verdict(9, ok, detail)


def test_c10_write_ratio_resilience():
    degradation = {}
    for proto in ("dgcc", "2pl", "occ"):
        tput = {}
        for rw in (4.0, 0.25):
            cfg = RunConfig(protocol=proto, workload="ycsb", threads=8,
                            max_batch=1000, theta=0.8, rw_ratio=rw,
                            table_size=20_000, duration=4.0, seed=101,
                            warmup_txns=300)
            tput[rw], _ = _median_metrics(cfg)
        degradation[proto] = tput[4.0] / tput[0.25]
    ok = (degradation["dgcc"] < degradation["2pl"]
          and degradation["dgcc"] < degradation["occ"])
    detail = (
        f"throughput ratio read-heavy/write-heavy: graph "
        f"{degradation['dgcc']:.2f}x vs locking {degradation['2pl']:.2f}x and "
        f"optimistic {degradation['occ']:.2f}x (graph must degrade least)"
    )
    assert ok, _verdict(10, ok, detail)
    _verdict(10, ok, detail)


# ---------------------------------------------------------------------------
# Criterion 11: one flush per batch, command log smaller than record images
# ---------------------------------------------------------------------------

def test_c11_logging_efficiency(tmp_path):
    wl = YcsbWorkload(YcsbConfig(theta=0.8, rw_ratio=1.0, table_size=2000,
                                 ops_per_txn=16, seed=111))
    store = Store()
    wl.populate(store)
    logger = GraphLogger(tmp_path, fsync=True)
    trace: list = []
    n_batches, per_batch = 25, 200
    with quiet_gc():
        with DgccEngine(store, wl.registry, BatchConfig(worker_count=4),
                        log_writer=logger, trace=trace) as engine:
            for _ in range(n_batches):
                engine.process_batch(list(wl.stream(per_batch)))
    logger.close()

    txns = n_batches * per_batch
    command_bytes = logger.bytes_logged / txns
    image_bytes = full_image_baseline_bytes(trace, store) / txns
    flush_ok = logger.flush_count == n_batches
    size_ok = command_bytes < image_bytes
    ok = flush_ok and size_ok
    detail = (
        f"{logger.flush_count} flushes for {n_batches} batches (one each: "
        f"{flush_ok}); command log {command_bytes:.0f} B/txn < full record "
        f"images {image_bytes:.0f} B/txn: {size_ok}"
    )
    assert ok, _verdict(11, ok, detail)
    _verdict(11, ok, detail)
