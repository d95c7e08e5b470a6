"""Exception hierarchy shared across the package.

Two broad families matter to the CLI: validation errors (bad inputs,
exit code 2) and numerical failures (exit code 3).
"""


class CamairError(Exception):
    """Base class for all package errors."""


class ValidationError(CamairError):
    """Input rejected before any numerics ran (CLI exit code 2)."""


class NumericalError(CamairError):
    """Computation failed or produced unusable numbers (CLI exit code 3)."""


# -- ingestion / datamodel ------------------------------------------------

class UnknownSiteError(ValidationError):
    """Record references a site id that was never declared."""


class DuplicateReadingError(ValidationError):
    """Two NO2 values for the same sensor and hour."""


class UnknownClassError(ValidationError):
    """Road-user class outside the closed six-class set."""


# -- geometry --------------------------------------------------------------

class DegenerateConfigurationError(ValidationError):
    """Three of the four calibration points are collinear."""


class HorizonPointError(NumericalError):
    """Perspective division blew up for a point near the horizon line."""

    def __init__(self, point, sample_index=None):
        self.point = tuple(point)
        self.sample_index = sample_index
        where = f" (sample {sample_index})" if sample_index is not None else ""
        super().__init__(f"projective denominator vanishes at {self.point}{where}")


# -- signature -------------------------------------------------------------

class EmptyPathError(ValidationError):
    """Path has fewer than two samples."""


class DepthZeroError(ValidationError):
    """Signature depth must be at least 1."""


class InsufficientIncrementsError(ValidationError):
    """Hourly stream needs at least two file increments."""


# -- spatial ---------------------------------------------------------------

class TooFewSitesError(ValidationError):
    """Need more sites than requested neighbours."""


class DuplicatePositionError(ValidationError):
    """Two sites share a coordinate; KNN distances would be ambiguous."""


# -- econometrics ----------------------------------------------------------

class RankDeficientError(NumericalError):
    """Design matrix is rank deficient."""

    def __init__(self, column_name):
        self.column_name = column_name
        super().__init__(f"design matrix is rank deficient: column {column_name!r} "
                         f"is linearly dependent on earlier columns")


class NonStationaryError(NumericalError):
    """Estimated spatial error coefficient left the unit interval."""


class SeriesTooShortError(ValidationError):
    """Time series too short for the requested lag order."""


class ConstantSeriesError(ValidationError):
    """Series has zero variance; autoregression is meaningless."""


class ZeroVarianceError(ValidationError):
    """Both groups are constant; the t statistic is undefined."""


class InvalidParamsError(ValidationError):
    """Distribution parameters outside their domain."""


# -- graphnet --------------------------------------------------------------

class ShapeMismatchError(ValidationError):
    """Operand shapes do not agree."""


class IsolatedNodeError(ValidationError):
    """Node without neighbours while self-loops are disabled."""


class NegativeInputError(ValidationError):
    """MSLE requires non-negative values."""


class MissingSignatureBlockError(ValidationError):
    """Model configured with a signature branch but none provided."""


class DegenerateDistributionError(ValidationError):
    """All-zero vector cannot be normalized to a probability distribution."""


class NonFiniteLossError(NumericalError):
    """Loss became NaN or infinite during training."""

    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


# -- surface ---------------------------------------------------------------

class CollinearInputError(ValidationError):
    """All points are collinear; no triangulation exists."""


class DuplicatePointError(ValidationError):
    """Two surface points share a location."""


# -- synth -----------------------------------------------------------------

class InfeasibleScenarioError(ValidationError):
    """Scenario parameters are mutually inconsistent."""
