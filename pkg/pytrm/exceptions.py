from pytrm import settings


class PyTRMException(Exception):
    """Base Exception for PyTRM exceptions."""
    exit_code = settings.EXIT_ERROR

    def __init__(self, message):
        super(PyTRMException, self).__init__(message)
        self.message = message


class PyTRMValidationError(PyTRMException):
    """Exception class for invalid configuration values or arguments."""
    exit_code = settings.EXIT_CONFIG

    def __init__(self, message, method, fields=None, values=None):
        """
        :param string message: Exception message.
        :param string method: Method (or config section) being validated.
        :param list fields: Invalid fields. (Optional, None by default).
        :param list values: Invalid field values. (Optional, None by default).
        """
        super(PyTRMValidationError, self).__init__(message)
        self.method = method
        self.fields = fields
        self.values = values


class PyTRMDimensionError(PyTRMException):
    """Array shapes do not chain."""
    exit_code = settings.EXIT_CONFIG

    def __init__(self, message, expected, actual):
        """
        :param string message: Exception message.
        :param object expected: Expected dimension or shape.
        :param object actual: Received dimension or shape.
        """
        super(PyTRMDimensionError, self).__init__(message)
        self.expected = expected
        self.actual = actual


class PyTRMDiagnosticOnlyError(PyTRMException):
    """An oracle cost was requested outside diagnostic mode."""
    exit_code = settings.EXIT_CONFIG

    def __init__(self, message, kind):
        super(PyTRMDiagnosticOnlyError, self).__init__(message)
        self.kind = kind


class PyTRMMissingOracleStateError(PyTRMException):
    """An oracle cost was evaluated without true simulator states."""
    exit_code = settings.EXIT_CONFIG


class PyTRMRankDeficiencyError(PyTRMException):
    """Probe readout matrix does not have full row rank."""
    exit_code = settings.EXIT_CONFIG


class PyTRMSingularSystemError(PyTRMException):
    """Normal equations of the ridge probe are singular."""
    exit_code = settings.EXIT_CONFIG


class PyTRMZeroDenominatorError(PyTRMException):
    """A ratio was requested over an all-zero set."""
    exit_code = settings.EXIT_CONFIG


class PyTRMHashMismatchError(PyTRMException):
    """An artifact's content no longer matches the hash recorded upstream."""
    exit_code = settings.EXIT_HASH_MISMATCH

    def __init__(self, message, path, expected, actual):
        """
        :param string message: Exception message.
        :param string path: Artifact path.
        :param string expected: Recorded hash.
        :param string actual: Current hash.
        """
        super(PyTRMHashMismatchError, self).__init__(message)
        self.path = path
        self.expected = expected
        self.actual = actual


class PyTRMPoolMismatchError(PyTRMException):
    """Selectors in an audit scored different candidate pools."""
    exit_code = settings.EXIT_HASH_MISMATCH

    def __init__(self, message, episode_id, hashes):
        super(PyTRMPoolMismatchError, self).__init__(message)
        self.episode_id = episode_id
        self.hashes = hashes


class PyTRMCoverageError(PyTRMException):
    """Exploration data does not cross the doorway often enough."""
    exit_code = settings.EXIT_COVERAGE

    def __init__(self, message, fraction):
        super(PyTRMCoverageError, self).__init__(message)
        self.fraction = fraction


class PyTRMManifestGenerationError(PyTRMException):
    """Rejection sampling could not satisfy a manifest's composition."""
    exit_code = settings.EXIT_COVERAGE

    def __init__(self, message, kind, draws):
        super(PyTRMManifestGenerationError, self).__init__(message)
        self.kind = kind
        self.draws = draws


class PyTRMTrainingDivergenceError(PyTRMException):
    """Training loss became nonfinite."""
    exit_code = settings.EXIT_DIVERGENCE

    def __init__(self, message, step):
        super(PyTRMTrainingDivergenceError, self).__init__(message)
        self.step = step


class PyTRMNonFiniteGradientError(PyTRMException):
    """Optimizer received a NaN or Inf gradient."""
    exit_code = settings.EXIT_DIVERGENCE


class PyTRMMissingArtifactError(PyTRMException):
    """A pipeline stage needs an artifact that has not been produced."""
    exit_code = settings.EXIT_MISSING_ARTIFACT

    def __init__(self, message, path):
        super(PyTRMMissingArtifactError, self).__init__(message)
        self.path = path


class PyTRMPartialGridError(PyTRMException):
    """Some runs of a grid failed; the others completed."""

    def __init__(self, message, grid_response):
        super(PyTRMPartialGridError, self).__init__(message)
        self.grid_response = grid_response
        errors = grid_response.errors()
        self.exit_code = errors[0].error.exit_code if errors else settings.EXIT_ERROR
