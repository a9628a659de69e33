"""Embeddable in-memory transaction engine.

Transactions arrive as stored-procedure invocations, are chopped into pieces
with statically known read and write sets, and run under one of four
concurrency controls: dependency-graph scheduling (the native protocol),
strict two-phase locking, optimistic validation, or multiversion snapshots.
A command log plus sectioned checkpoints make committed work durable.
"""

from .baselines import MvccEngine, OccEngine, TwoPhaseLockingEngine, make_baseline
from .bench import EngineReport, RunConfig, run, sweep
from .errors import (
    AuditError,
    ConstraintError,
    DeadlockAbort,
    DecodeError,
    DgccError,
    DurabilityError,
    EngineError,
    ProcedureError,
    SchemaError,
    ValidationAbort,
    WriteConflictAbort,
)
from .execution import BatchConfig, BatchResult, DgccEngine
from .graph import DependencyGraph, EdgeKind, build_graph
from .recovery import CheckpointManager, GraphLogger, recover
from .storage import Key, Record, Store, TableSchema
from .txmodel import (
    PieceKind,
    PieceTemplate,
    ProcedureRegistry,
    StoredProcedure,
    Transaction,
    chop,
)
from .verify import (
    mvcc_schedule_check,
    schedule_check,
    serial_oracle,
)
from .workloads import (
    TpccConfig,
    TpccWorkload,
    YcsbConfig,
    YcsbWorkload,
    ZipfSampler,
    gen_tpcc,
    gen_ycsb,
)

__all__ = [
    "AuditError",
    "BatchConfig",
    "BatchResult",
    "CheckpointManager",
    "ConstraintError",
    "DeadlockAbort",
    "DecodeError",
    "DependencyGraph",
    "DgccEngine",
    "DgccError",
    "DurabilityError",
    "EdgeKind",
    "EngineError",
    "EngineReport",
    "GraphLogger",
    "Key",
    "MvccEngine",
    "OccEngine",
    "PieceKind",
    "PieceTemplate",
    "ProcedureError",
    "ProcedureRegistry",
    "Record",
    "RunConfig",
    "SchemaError",
    "Store",
    "StoredProcedure",
    "TableSchema",
    "TpccConfig",
    "TpccWorkload",
    "Transaction",
    "TwoPhaseLockingEngine",
    "ValidationAbort",
    "WriteConflictAbort",
    "YcsbConfig",
    "YcsbWorkload",
    "ZipfSampler",
    "build_graph",
    "chop",
    "gen_tpcc",
    "gen_ycsb",
    "make_baseline",
    "mvcc_schedule_check",
    "recover",
    "run",
    "schedule_check",
    "serial_oracle",
    "sweep",
]
