"""Exception hierarchy shared across the package.

Grouped by the exit-code classes the command line uses: data/parse
problems, numeric failures, and configuration mistakes.
"""


class PcsigError(Exception):
    """Base class for all package errors."""


class DataError(PcsigError):
    """Problems with input data (parsing, non-finite values, degeneracy)."""


class InvalidData(DataError):
    """Input matrix violates its invariants (non-finite, degenerate rows...)."""


class MatrixParseError(DataError):
    """Delimited matrix file could not be parsed; message carries line/column."""


class NumericError(PcsigError):
    """Numeric routine failed."""


class DecompositionFailure(NumericError):
    """SVD / eigendecomposition did not converge."""


class SingularBasis(NumericError):
    """Regression basis is rank deficient."""


class ConfigError(PcsigError):
    """Invalid run configuration."""


class InvalidRank(ConfigError):
    """Requested number of components out of range."""


class InvalidRotation(ConfigError):
    """Rotation matrix is not orthonormal with determinant one."""


class InvalidIndex(ConfigError):
    """Row or component index out of range / duplicated."""


class InvalidMode(ConfigError):
    """Null synthesis mode incompatible with the hypothesis."""


class InvalidSample(DataError):
    """Sample values outside the domain a statistic requires."""


class RefuseResume(ConfigError):
    """Checkpoint belongs to a different input or configuration."""
