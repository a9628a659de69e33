"""Exception hierarchy shared by all engine components."""


class DgccError(Exception):
    """Base class for all engine errors."""


class SchemaError(DgccError):
    """Unknown table or a record that does not match the table schema."""


class ConstraintError(DgccError):
    """Duplicate insert or delete of a missing key."""


class DecodeError(DgccError):
    """Transaction parameters do not decode under the procedure's schema."""


class ProcedureError(DgccError):
    """Invalid stored-procedure definition at registration time."""


class AuditError(DgccError):
    """A piece body touched a key outside its declared access sets."""


class DurabilityError(DgccError):
    """Log or checkpoint I/O failed; the run cannot continue safely."""


class EngineError(DgccError):
    """Internal scheduling invariant violated; indicates a protocol bug."""


class DeadlockAbort(DgccError):
    """Transaction chosen as deadlock victim; caller rolls back and retries."""


class ValidationAbort(DgccError):
    """Optimistic validation failed; caller discards buffers and retries."""


class WriteConflictAbort(DgccError):
    """Multiversion first-committer-wins conflict; caller retries."""
