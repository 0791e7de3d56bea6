"""Exception types shared across the toolkit.

Two families: validation errors (bad inputs, schema or config problems,
CLI exit code 1) and runtime failures (I/O, endpoint or pipeline breakage,
CLI exit code 2).
"""


class RaftForgeError(Exception):
    exit_code = 2


class ValidationError(RaftForgeError):
    exit_code = 1


class RuntimeFailure(RaftForgeError):
    exit_code = 2


# ---------------------------------------------------------------- corpus

class SchemaViolation(ValidationError):
    """A source item is missing a required field or carries a bad value."""

    def __init__(self, message: str, index=None, record_id: str | None = None):
        self.index = index
        self.record_id = record_id
        where = ""
        if index is not None:
            where = f" (item {index})"
        elif record_id is not None:
            where = f" (record {record_id})"
        super().__init__(f"{message}{where}")


class EmptyDataset(ValidationError):
    pass


class IoFailure(RuntimeFailure):
    pass


# ------------------------------------------------------------- construct

class NoOracle(ValidationError):
    pass


class MethodNotApplicable(ValidationError):
    """Selection method called on a record that does not fit its shape."""


class InsufficientDistractorPool(ValidationError):
    def __init__(self, available: int, needed: int, record_id: str | None = None):
        self.available = available
        self.needed = needed
        self.record_id = record_id
        who = f" for record {record_id}" if record_id else ""
        super().__init__(
            f"need {needed} distractor documents{who} but only {available} available"
        )


class MissingTarget(ValidationError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"no chain-of-thought target for record {record_id}")


class EmptyTarget(ValidationError):
    pass


# ---------------------------------------------------------------- cotgen

class MissingAnswerDelimiter(ValidationError):
    pass


class EmptyAnswer(ValidationError):
    pass


class MalformedResponse(RuntimeFailure):
    pass


class EndpointFailure(RuntimeFailure):
    pass


class AuthFailure(RuntimeFailure):
    pass


# --------------------------------------------------------------- evalkit

class EmptyGold(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class UnknownRecordId(ValidationError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"prediction references unknown record {record_id}")


class MissingLongGold(ValidationError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"record {record_id} has no long-form gold answer")


# ---------------------------------------------------------------- runner

class MissingCell(ValidationError):
    def __init__(self, dataset: str, method: str):
        self.dataset = dataset
        self.method = method
        super().__init__(f"no score cell for ({dataset}, {method})")


# ------------------------------------------------------------------- cli

class ConfigError(ValidationError):
    pass


class PipelineStageError(RuntimeFailure):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage '{stage}': {message}")


class StageHashMismatch(PipelineStageError):
    pass
