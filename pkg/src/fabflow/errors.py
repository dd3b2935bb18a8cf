"""Exception hierarchy shared across the package.

Each subsystem raises from its own family so callers (and the CLI exit-code
mapping) can catch at the right granularity.
"""


class FabflowError(Exception):
    """Base class for all package errors."""


# -- metrics ----------------------------------------------------------------

class MetricsError(FabflowError):
    pass


class MissingReports(MetricsError):
    """No recognized report file found in a run directory."""


class MalformedReport(MetricsError):
    """A file matched a recognized report name but could not be parsed."""

    def __init__(self, path, offset: int, detail: str = ""):
        self.path = str(path)
        self.offset = offset
        self.detail = detail
        super().__init__(f"{self.path} @ byte {offset}: {detail or 'unparseable'}")


class DivisionByZeroBaseline(MetricsError):
    """A baseline metric used as a divisor is zero."""


class DivisionByZeroReference(MetricsError):
    """A reference metric used as a divisor is zero."""


# -- ragstore ---------------------------------------------------------------

class RagStoreError(FabflowError):
    pass


class DuplicateChunkId(RagStoreError):
    pass


class EmptyCorpus(RagStoreError):
    pass


class EmptyIndex(RagStoreError):
    pass


class BudgetTooSmallForMandatorySections(RagStoreError):
    pass


# -- llm gateway ------------------------------------------------------------

class GatewayError(FabflowError):
    pass


class ProviderUnavailable(GatewayError):
    """Provider still failing after the configured retry attempts."""


class TransientProviderFailure(GatewayError):
    """Retryable transport-level failure; consumed by the retry loop."""


class ResponseTooLarge(GatewayError):
    pass


class AuthFailure(GatewayError):
    pass


# -- agents -----------------------------------------------------------------

class AgentError(FabflowError):
    pass


class PlanningIncomplete(AgentError):
    pass


class AnswerSourceClosed(AgentError):
    pass


class GenerationEmpty(AgentError):
    pass


class VerificationExhausted(AgentError):
    """Repair budget spent without a clean lint run; carries the last findings."""

    def __init__(self, message: str, findings=None, artifact=None):
        super().__init__(message)
        self.findings = findings or []
        self.artifact = artifact


class LintBackendUnavailable(AgentError):
    pass


class UnparseableProposal(AgentError):
    pass


class UnknownParameter(AgentError):
    pass


class NoViableCandidates(AgentError):
    pass


# -- flow execution ---------------------------------------------------------

class FlowExecError(FabflowError):
    pass


class BackendNotFound(FlowExecError):
    pass


class RunDirectoryConflict(FlowExecError):
    pass


class FlowTimeout(FlowExecError):
    pass


class ParameterOutOfRange(FlowExecError):
    pass


# -- orchestrator / cli -----------------------------------------------------

class OrchestratorError(FabflowError):
    pass


class DesignNotFound(OrchestratorError):
    pass


class ConfigValidationError(FabflowError):
    """CLI/runtime configuration value outside its accepted range."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
