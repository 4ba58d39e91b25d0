"""Exception types shared across the pipeline."""


class CgforgeError(Exception):
    """Base class for all cgforge errors."""


class ParseError(CgforgeError):
    """SQL text outside the supported dialect subset, or malformed."""

    def __init__(self, message: str, sql: str = "", pos: int = -1):
        detail = message
        if sql:
            detail = f"{message} (in: {sql!r})"
        super().__init__(detail)
        self.sql = sql
        self.pos = pos


class ResolutionError(CgforgeError):
    """A table or column reference does not bind to the schema."""


class FormatError(CgforgeError):
    """An input file does not match its expected record shape."""

    def __init__(self, message: str, record_index: int | None = None, field: str | None = None):
        parts = [message]
        if record_index is not None:
            parts.append(f"record {record_index}")
        if field is not None:
            parts.append(f"field {field!r}")
        super().__init__(" | ".join(parts))
        self.record_index = record_index
        self.field = field


class DuplicateDbId(FormatError):
    """Two schema records share a db_id."""


class UnknownDatabase(CgforgeError):
    """A dialogue references a database_id missing from the catalog."""


class NoFill(CgforgeError):
    """A modification template has an empty constraint-satisfying space."""


class ApplyError(CgforgeError):
    """A modification cannot be applied to the given base query."""


class UnknownTemplate(CgforgeError):
    """A novelty query names a template hash never seen in training."""


class UnrealizableEdit(CgforgeError):
    """The rule-based drafter has no realization for an edit kind."""


class ExternalFailure(CgforgeError):
    """The external generator subprocess failed or produced bad output."""


class StoreError(CgforgeError):
    """Review store I/O failure."""


class UnknownCandidate(CgforgeError):
    """A decision references a candidate id not in the queue."""


class InvalidDecision(CgforgeError):
    """A decision record violates the decision contract."""
