"""Exception hierarchy.

Validation problems (bad inputs, impossible model specifications) derive from
``ValidationError``; numerical breakdowns (rank deficiency) derive from
``NumericalError``. The CLI maps the two families to exit codes 2 and 3.
"""


class IVSelectError(Exception):
    """Base class for all package errors."""


class ValidationError(IVSelectError, ValueError):
    """Input or specification is invalid."""


class NumericalError(IVSelectError, ArithmeticError):
    """A numerical procedure could not be carried out."""


class RankError(NumericalError):
    """A design matrix is rank deficient up to the relative tolerance.

    Attributes
    ----------
    ratio : float
        Smallest over largest singular value of the offending matrix.
    columns : list of str
        Names (or indices) of columns that are linearly dependent on the
        others, when they could be identified.
    """

    def __init__(self, message, ratio=float("nan"), columns=()):
        super().__init__(message)
        self.ratio = ratio
        self.columns = list(columns)


class UnderidentifiedError(ValidationError):
    """Fewer instruments treated as valid than there are exposures."""


class EnumerationCapError(ValidationError):
    """A combinatorial enumeration would exceed its configured cap."""

    def __init__(self, message, count):
        super().__init__(message)
        self.count = count


class StudyError(IVSelectError):
    """A Monte Carlo study could not produce trustworthy metrics."""
