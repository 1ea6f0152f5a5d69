"""Exception hierarchy shared across the package."""


class MDTError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MDTError):
    """An input file could not be parsed."""


class ValidationError(MDTError):
    """An input parsed but violates a data invariant."""


class BackendError(MDTError):
    """A chat backend call failed."""


class TransportError(BackendError):
    """Network failure or HTTP status >= 400."""


class BackendTimeout(BackendError):
    """The remote call exceeded its deadline."""


class ScriptExhausted(BackendError):
    """A replay script has no entry left for the requesting agent."""


class ScriptMismatch(BackendError):
    """A replay entry's match key does not occur in the prompt it answers."""


class DuplicateDepartment(ValidationError):
    pass


class EmptyPool(ValidationError):
    pass


class NoRecognizedDepartment(MDTError):
    """The attending agent's team reply names no department from the pool."""


class MissingTeamSize(MDTError):
    """A random or relevance role strategy was used without a team size."""


class EmptyProfile(MDTError):
    pass


class DuplicateRecordId(MDTError):
    pass


class ToolError(MDTError):
    pass


class FixtureMiss(ToolError):
    pass


class MalformedToolOutput(ToolError):
    pass


class UnknownDrug(ToolError):
    pass


class NotFound(ToolError):
    pass


class NoDiagnosisBlock(MDTError):
    pass


class UnparseableDecision(MDTError):
    """The final model reply could not be turned into a decision.

    The partially filled transcript is attached so callers can persist it.
    """

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class EmptyResults(MDTError):
    pass


class EmptyGold(MDTError):
    pass


class EmptyInput(MDTError):
    pass
