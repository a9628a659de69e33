"""Benchmark harness and CLI.

Wires a workload generator to one of the four engines, runs a warmup
plus a timed region, and reports throughput, latency percentiles, and
abort accounting in JSON or CSV.  Transactions flow through a bounded
queue (1000 slots per worker); a full queue blocks the generator, which
is the backpressure mechanism, and latency is measured from the moment
a transaction is enqueued until its commit is acknowledged, retries
included.  Arrivals are either open-loop at a fixed rate or saturation
mode (generate as fast as the engine consumes); the mode is recorded in
the report.

Batch admission takes whatever is queued up to the configured maximum
(the admit-min rule).  The adaptive batch-size flag is accepted but is
a documented no-op stub.
"""

from __future__ import annotations

import argparse
import csv
import gc
import io
import json
import logging
import queue
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional

from .baselines import make_baseline
from .errors import DgccError, DurabilityError, EngineError
from .execution import BatchConfig, DgccEngine
from .recovery import CheckpointManager, GraphLogger
from .storage import Store
from .verify import COMMITTED
from .workloads import TpccConfig, TpccWorkload, YcsbConfig, YcsbWorkload

logger = logging.getLogger(__name__)

PROTOCOLS = ("dgcc", "2pl", "occ", "mvcc")
WORKLOADS = ("ycsb", "tpcc")
SWEEP_AXES = ("threads", "theta", "rw_ratio", "batch_size")
QUEUE_DEPTH_PER_WORKER = 1000
DEFAULT_MIX = (0.45, 0.43, 0.04, 0.04, 0.04)


class UsageError(DgccError):
    """Invalid flag combination; the CLI maps this to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    protocol: str = "dgcc"
    workload: str = "ycsb"
    threads: int = 8
    max_batch: int = 1000
    theta: float = 0.8
    rw_ratio: float = 1.0
    ops_per_txn: int = 16
    table_size: int = 100_000
    warehouses: int = 1
    mix: tuple[float, ...] = DEFAULT_MIX
    duration: float = 0.0  # seconds; 0 means run by transaction count
    txns: int = 0  # fixed transaction count; 0 means run by duration
    seed: int = 1
    arrival_rate: float = 0.0  # txns/s; 0 means saturation mode
    warmup_txns: int = 200
    log_dir: Optional[str] = None
    checkpoint_interval: int = 50
    sections: int = 4
    audit: bool = False
    adaptive_batch: bool = False  # accepted, documented no-op

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise UsageError(f"unknown protocol {self.protocol!r}")
        if self.workload not in WORKLOADS:
            raise UsageError(f"unknown workload {self.workload!r}")
        if self.threads < 1 or self.max_batch < 1:
            raise UsageError("threads and max_batch must be >= 1")
        if self.duration < 0 or self.txns < 0 or self.arrival_rate < 0:
            raise UsageError("duration, txns, and arrival_rate must be >= 0")
        if self.duration > 0 and self.txns > 0:
            raise UsageError("give either --duration or --txns, not both")
        if self.log_dir is not None and self.protocol != "dgcc":
            raise UsageError("command logging is only available with --protocol dgcc")

    @property
    def mode(self) -> str:
        return "open-loop" if self.arrival_rate > 0 else "saturation"


@dataclass
class EngineReport:
    protocol: str
    workload: str
    mode: str
    threads: int
    max_batch: int
    seed: int
    submitted: int = 0
    committed: int = 0
    condition_failed: int = 0
    aborts: dict = field(default_factory=dict)
    retries: int = 0
    batches: int = 0
    measured_seconds: float = 0.0
    throughput: float = 0.0
    latency_mean_ms: float = 0.0
    latency_p50_ms: float = 0.0
    latency_p95_ms: float = 0.0
    latency_p99_ms: float = 0.0
    mean_batch_size: float = 0.0
    rounds_histogram: dict = field(default_factory=dict)
    warmup_txns: int = 0
    log_flushes: int = 0
    log_bytes: int = 0
    checkpoints: int = 0
    sweep_value: Optional[float] = None

    def check_accounting(self) -> None:
        if self.submitted != self.committed + self.condition_failed:
            raise EngineError(
                f"accounting leak: submitted={self.submitted} committed="
                f"{self.committed} condition_failed={self.condition_failed}"
            )
        if not (self.latency_p50_ms <= self.latency_p95_ms <= self.latency_p99_ms):
            raise EngineError("latency percentiles are not monotone")

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["rounds_histogram"] = {str(k): v for k, v in sorted(self.rounds_histogram.items())}
        return out


def _percentile(sorted_values: list[float], fraction: float) -> float:
    if not sorted_values:
        return 0.0
    index = max(0, min(len(sorted_values) - 1, round(fraction * (len(sorted_values) - 1))))
    return sorted_values[index]


class _EngineAdapter:
    """Uniform submit() surface over the DGCC engine and the baselines."""

    def __init__(self, cfg: RunConfig, store: Store, registry) -> None:
        self.cfg = cfg
        self.protocol = cfg.protocol
        self.log_writer = None
        self.checkpointer = None
        self._engine = None
        if cfg.protocol == "dgcc":
            if cfg.log_dir is not None:
                self.log_writer = GraphLogger(cfg.log_dir)
                self.checkpointer = CheckpointManager(
                    store,
                    cfg.log_dir,
                    sections=cfg.sections,
                    interval=cfg.checkpoint_interval,
                )
            self._engine = DgccEngine(
                store,
                registry,
                BatchConfig(
                    max_batch_size=cfg.max_batch,
                    worker_count=cfg.threads,
                    audit=cfg.audit,
                ),
                log_writer=self.log_writer,
                checkpointer=self.checkpointer,
            )
        else:
            self._engine = make_baseline(
                cfg.protocol, store, registry,
                worker_count=cfg.threads, audit=cfg.audit,
            )

    def initial_checkpoint(self) -> None:
        if self.checkpointer is not None:
            self.checkpointer.take(watermark=0)
            self.checkpointer.wait()

    def submit(self, batch) -> tuple[dict, dict, dict, int, Optional[int]]:
        """Run one batch; returns (outcomes, finished_at, abort_events,
        retries, rounds)."""
        if self.protocol == "dgcc":
            result = self._engine.process_batch(batch)
            now = time.perf_counter()
            finished = {ts: now for ts in result.outcomes}
            return result.outcomes, finished, {}, 0, result.rounds
        result = self._engine.process_batch(batch)
        return result.outcomes, result.finished_at, result.abort_events, result.retries, None

    def close(self) -> None:
        if self.protocol == "dgcc":
            self._engine.close()
        if self.checkpointer is not None:
            self.checkpointer.wait()
        if self.log_writer is not None:
            self.log_writer.close()


def build_workload(cfg: RunConfig):
    if cfg.workload == "ycsb":
        return YcsbWorkload(YcsbConfig(
            theta=cfg.theta,
            rw_ratio=cfg.rw_ratio,
            table_size=cfg.table_size,
            ops_per_txn=cfg.ops_per_txn,
            seed=cfg.seed,
        ))
    return TpccWorkload(TpccConfig(
        warehouses=cfg.warehouses,
        mix=tuple(cfg.mix),
        seed=cfg.seed,
    ))


def run(cfg: RunConfig) -> EngineReport:
    cfg.validate()
    if cfg.adaptive_batch:
        logger.warning("adaptive batch sizing is a stub; using static max_batch=%d",
                       cfg.max_batch)
    report = EngineReport(
        protocol=cfg.protocol, workload=cfg.workload, mode=cfg.mode,
        threads=cfg.threads, max_batch=cfg.max_batch, seed=cfg.seed,
        warmup_txns=cfg.warmup_txns,
    )
    if cfg.duration == 0 and cfg.txns == 0:
        report.check_accounting()
        return report

    workload = build_workload(cfg)
    store = Store()
    workload.populate(store, versioned=(cfg.protocol == "mvcc"))
    adapter = _EngineAdapter(cfg, store, workload.registry)
    # The populated store is long-lived and per-batch objects die by refcount,
    # so cyclic-GC sweeps during the measured region only rescan the live heap
    # over and over (their cost grows with batch size and drowns the engine
    # differences). Freeze the populated heap and pause the collector for the
    # run; every protocol gets the identical policy.
    gc.collect()
    gc.freeze()
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        adapter.initial_checkpoint()
        _warmup(cfg, workload, adapter)
        _timed_region(cfg, workload, adapter, report)
    finally:
        adapter.close()
        if gc_was_enabled:
            gc.enable()
        gc.unfreeze()
        gc.collect()
    if adapter.log_writer is not None:
        report.log_flushes = adapter.log_writer.flush_count
        report.log_bytes = adapter.log_writer.bytes_logged
    if adapter.checkpointer is not None:
        report.checkpoints = adapter.checkpointer.checkpoints_taken
    report.check_accounting()
    return report


def _warmup(cfg: RunConfig, workload, adapter: _EngineAdapter) -> None:
    remaining = cfg.warmup_txns
    while remaining > 0:
        batch = list(workload.stream(min(remaining, cfg.max_batch)))
        adapter.submit(batch)
        remaining -= len(batch)


def _timed_region(cfg, workload, adapter, report: EngineReport) -> None:
    depth = QUEUE_DEPTH_PER_WORKER * cfg.threads
    inbox: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()
    target = cfg.txns if cfg.txns > 0 else None

    def produce() -> None:
        produced = 0
        interval = 1.0 / cfg.arrival_rate if cfg.arrival_rate > 0 else 0.0
        next_due = time.perf_counter()
        while not stop.is_set() and (target is None or produced < target):
            chunk = list(workload.stream(min(64, (target - produced) if target else 64)))
            for txn in chunk:
                if interval:
                    next_due += interval
                    delay = next_due - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                if stop.is_set():
                    return
                txn.arrival_time = time.perf_counter()
                while not stop.is_set():
                    try:
                        inbox.put(txn, timeout=0.05)  # backpressure point
                        produced += 1
                        break
                    except queue.Full:
                        continue

    producer = threading.Thread(target=produce, name="bench-producer", daemon=True)
    latencies: list[float] = []
    started = time.perf_counter()
    deadline = started + cfg.duration if cfg.duration > 0 else None
    producer.start()
    consumed = 0
    try:
        while True:
            if deadline is not None and time.perf_counter() >= deadline:
                break
            if target is not None and consumed >= target:
                break
            try:
                first = inbox.get(timeout=0.1)
            except queue.Empty:
                if target is not None and consumed >= target:
                    break
                continue
            batch = [first]
            while len(batch) < cfg.max_batch:
                try:
                    batch.append(inbox.get_nowait())
                except queue.Empty:
                    break
            outcomes, finished, aborts, retries, rounds = adapter.submit(batch)
            consumed += len(batch)
            report.batches += 1
            report.submitted += len(batch)
            report.retries += retries
            for cause, count in aborts.items():
                report.aborts[cause] = report.aborts.get(cause, 0) + count
            if rounds is not None:
                report.rounds_histogram[rounds] = report.rounds_histogram.get(rounds, 0) + 1
            for txn in batch:
                outcome = outcomes[txn.ts]
                if outcome == COMMITTED:
                    report.committed += 1
                else:
                    report.condition_failed += 1
                latencies.append(finished[txn.ts] - txn.arrival_time)
    finally:
        stop.set()
        producer.join(5)
    report.measured_seconds = time.perf_counter() - started
    if report.measured_seconds > 0:
        report.throughput = report.committed / report.measured_seconds
    if report.batches:
        report.mean_batch_size = report.submitted / report.batches
    if latencies:
        latencies.sort()
        report.latency_mean_ms = 1000 * sum(latencies) / len(latencies)
        report.latency_p50_ms = 1000 * _percentile(latencies, 0.50)
        report.latency_p95_ms = 1000 * _percentile(latencies, 0.95)
        report.latency_p99_ms = 1000 * _percentile(latencies, 0.99)
    # Condition-check outcomes are terminal aborts; count them as a cause.
    if report.condition_failed:
        report.aborts["condition"] = report.condition_failed


def sweep(template: RunConfig, axis: str, values) -> list[EngineReport]:
    if axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; pick one of {SWEEP_AXES}")
    field_name = {"batch_size": "max_batch"}.get(axis, axis)
    reports = []
    for value in values:
        cast = int(value) if field_name in ("threads", "max_batch") else float(value)
        cfg = replace(template, **{field_name: cast})
        report = run(cfg)
        report.sweep_value = float(value)
        reports.append(report)
    return reports


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_CSV_FIELDS = [
    "protocol", "workload", "mode", "sweep_value", "threads", "max_batch",
    "seed", "submitted", "committed", "condition_failed", "retries",
    "batches", "measured_seconds", "throughput", "latency_mean_ms",
    "latency_p50_ms", "latency_p95_ms", "latency_p99_ms", "mean_batch_size",
    "warmup_txns", "log_flushes", "log_bytes", "checkpoints",
    "aborts", "rounds_histogram",
]


def reports_to_json(reports: list[EngineReport]) -> str:
    payload = [r.to_dict() for r in reports]
    return json.dumps(payload[0] if len(payload) == 1 else payload, indent=2)


def reports_to_csv(reports: list[EngineReport]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=_CSV_FIELDS)
    writer.writeheader()
    for report in reports:
        row = report.to_dict()
        row["aborts"] = ";".join(f"{k}:{v}" for k, v in sorted(row["aborts"].items()))
        row["rounds_histogram"] = ";".join(
            f"{k}:{v}" for k, v in row["rounds_histogram"].items()
        )
        writer.writerow({name: row[name] for name in _CSV_FIELDS})
    return buffer.getvalue()


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgcc-bench",
        description="Benchmark the dependency-graph engine against 2PL, OCC, and MVCC.",
    )
    parser.add_argument("--protocol", choices=PROTOCOLS, default="dgcc")
    parser.add_argument("--workload", choices=WORKLOADS, default="ycsb")
    parser.add_argument("--threads", type=int, default=8, help="worker count")
    parser.add_argument("--max-batch", type=int, default=1000, help="batch size cap")
    parser.add_argument("--theta", type=float, default=None, help="YCSB Zipf exponent")
    parser.add_argument("--rw-ratio", type=float, default=None, help="YCSB reads per write")
    parser.add_argument("--ops-per-txn", type=int, default=16)
    parser.add_argument("--table-size", type=int, default=100_000)
    parser.add_argument("--warehouses", type=int, default=1)
    parser.add_argument("--mix", type=str, default=None,
                        help="TPC-C weights new_order,payment,delivery,order_status,stock_level")
    parser.add_argument("--duration", type=float, default=0.0, help="seconds to run")
    parser.add_argument("--txns", type=int, default=0, help="fixed transaction count")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--arrival-rate", type=float, default=0.0,
                        help="open-loop txns/s; 0 = saturation")
    parser.add_argument("--warmup-txns", type=int, default=200)
    parser.add_argument("--log-dir", type=str, default=None)
    parser.add_argument("--checkpoint-interval", type=int, default=50)
    parser.add_argument("--sections", type=int, default=4)
    parser.add_argument("--audit", action="store_true")
    parser.add_argument("--adaptive-batch", action="store_true",
                        help="accepted for compatibility; static sizing is used")
    parser.add_argument("--sweep-axis", choices=SWEEP_AXES, default=None)
    parser.add_argument("--sweep-values", type=str, default=None,
                        help="comma-separated values for --sweep-axis")
    parser.add_argument("--output", type=str, default=None, help="file path; stdout if omitted")
    parser.add_argument("--format", choices=("csv", "json"), default="json")
    return parser


def _config_from_args(args) -> RunConfig:
    if args.workload == "tpcc" and (args.theta is not None or args.rw_ratio is not None):
        raise UsageError("--theta/--rw-ratio apply to the ycsb workload only")
    mix = DEFAULT_MIX
    if args.mix is not None:
        if args.workload != "tpcc":
            raise UsageError("--mix applies to the tpcc workload only")
        mix = tuple(float(part) for part in args.mix.split(","))
    return RunConfig(
        protocol=args.protocol,
        workload=args.workload,
        threads=args.threads,
        max_batch=args.max_batch,
        theta=args.theta if args.theta is not None else 0.8,
        rw_ratio=args.rw_ratio if args.rw_ratio is not None else 1.0,
        ops_per_txn=args.ops_per_txn,
        table_size=args.table_size,
        warehouses=args.warehouses,
        mix=mix,
        duration=args.duration,
        txns=args.txns,
        seed=args.seed,
        arrival_rate=args.arrival_rate,
        warmup_txns=args.warmup_txns,
        log_dir=args.log_dir,
        checkpoint_interval=args.checkpoint_interval,
        sections=args.sections,
        audit=args.audit,
        adaptive_batch=args.adaptive_batch,
    )


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.sweep_axis is not None:
            if not args.sweep_values:
                raise UsageError("--sweep-axis requires --sweep-values")
            values = [float(part) for part in args.sweep_values.split(",")]
            reports = sweep(cfg, args.sweep_axis, values)
        else:
            reports = [run(cfg)]
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DurabilityError as exc:
        print(f"durability error: {exc}", file=sys.stderr)
        return 3

    text = reports_to_csv(reports) if args.format == "csv" else reports_to_json(reports)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        print(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
