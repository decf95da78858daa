"""Exception hierarchy shared by all modules."""


class FedScoreError(Exception):
    """Base class for every error raised by this package."""


class EmptyDatasetError(FedScoreError, ValueError):
    def __init__(self, msg: str = "empty dataset"):
        super().__init__(msg)


class NoEventsError(FedScoreError, ValueError):
    def __init__(self, msg: str = "no events; test undefined"):
        super().__init__(msg)


class ConvergenceError(FedScoreError, ArithmeticError):
    """Newton-Raphson could not produce a finite maximiser."""


class SeparationError(ConvergenceError):
    def __init__(self, msg: str = "monotone likelihood / separation"):
        super().__init__(msg)


class SingularInformationError(ConvergenceError):
    def __init__(self, msg: str = "singular information"):
        super().__init__(msg)


class MaxIterationsError(ConvergenceError):
    def __init__(self, msg: str = "max iterations"):
        super().__init__(msg)


class SingularCovarianceError(FedScoreError, ArithmeticError):
    def __init__(self, site_id):
        self.site_id = site_id
        super().__init__(f"singular covariance from site {site_id}")


class DegenerateForestError(FedScoreError):
    def __init__(self, msg: str = "degenerate forest"):
        super().__init__(msg)


class UninformativeModelError(FedScoreError, ValueError):
    def __init__(self, msg: str = "uninformative model"):
        super().__init__(msg)


class UnstableMetricError(FedScoreError):
    def __init__(self, msg: str = "unstable metric"):
        super().__init__(msg)


class PrivacyViolation(FedScoreError):
    """Raised when something other than a permitted summary message hits the bus."""


class ProtocolAbort(FedScoreError):
    """A site failed mid-protocol. ``transcript`` holds the completed messages."""

    def __init__(self, site_id, phase: int, cause: Exception, transcript):
        self.site_id = site_id
        self.phase = phase
        self.cause = cause
        self.transcript = list(transcript)
        super().__init__(f"site {site_id} failed in phase {phase}: {cause}")


class MissingArtifactError(FedScoreError, FileNotFoundError):
    def __init__(self, path, stage: str):
        self.path = str(path)
        self.stage = stage
        super().__init__(f"missing artifact {path}; run stage '{stage}' first")
