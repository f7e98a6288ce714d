"""Shared error types.

Validation outcomes are data (ValidationReport), not exceptions; the types
below cover contract violations and step-level failures.
"""


class PerosError(Exception):
    """Base class for all package errors."""


# -- registry / argument binding ------------------------------------------

class DuplicateName(PerosError):
    pass


class UnknownApi(PerosError):
    pass


class MissingArg(PerosError):
    def __init__(self, name: str):
        super().__init__(f"missing required argument: {name}")
        self.name = name


class TypeMismatch(PerosError):
    pass


# -- interpreter ------------------------------------------------------------

class NoIntent(PerosError):
    pass


class BackendUnavailable(PerosError):
    pass


class MalformedCompletion(PerosError):
    pass


class GrammarLoadError(PerosError):
    pass


# -- director ----------------------------------------------------------------

class UnmappableTask(PerosError):
    def __init__(self, verb: str, detail: str = ""):
        msg = f"no registry mapping for verb: {verb}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.verb = verb


class UnknownSlot(PerosError):
    pass


# -- actuator -----------------------------------------------------------------

class SandboxViolation(PerosError):
    pass


class StepFailure(PerosError):
    def __init__(self, step_index: int, cause: str):
        super().__init__(f"step {step_index} failed: {cause}")
        self.step_index = step_index
        self.cause = cause


class RevertConflict(PerosError):
    pass


class JournalMismatch(PerosError):
    pass


# -- watchdog -----------------------------------------------------------------

class DuplicateId(PerosError):
    pass


class GlobOutsideSandbox(PerosError):
    pass


# -- evaluation ----------------------------------------------------------------

class EmptyCorpus(PerosError):
    pass


class EmptyText(PerosError):
    pass


# -- adaptive storage -----------------------------------------------------------

class InvalidCandidates(PerosError):
    pass


class InstanceTooLarge(PerosError):
    pass


class EmptyMapping(PerosError):
    pass


class KeyNotFound(PerosError):
    pass


class TraceParseError(PerosError):
    pass


# -- gateway ---------------------------------------------------------------------

class WorkspaceUnavailable(PerosError):
    pass


class SessionNotFound(PerosError):
    pass


class NoPendingCheckpoint(PerosError):
    pass
