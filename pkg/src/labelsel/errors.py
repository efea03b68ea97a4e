"""Exception hierarchy shared across the package.

DataError covers anything wrong with inputs (files, shapes, ranges);
NumericalError covers failures of the computation itself (duplicates,
divergence). The CLI maps these onto distinct exit codes.
"""


class LabelselError(Exception):
    """Base class for all labelsel-specific errors."""


class DataError(LabelselError):
    """Invalid or inconsistent input data."""


class FormatError(DataError):
    """Malformed file content. Carries a human-readable location."""


class NumericalError(LabelselError):
    """Numerical failure during computation (duplicates, divergence, ...)."""


class DuplicatePointsError(NumericalError):
    """Coincident points produced a zero distance where one is not allowed."""

    def __init__(self, indices, message=None):
        self.indices = list(indices)
        if message is None:
            shown = ", ".join(str(i) for i in self.indices[:10])
            more = "" if len(self.indices) <= 10 else ", ..."
            message = f"zero distance at instance(s) [{shown}{more}]"
        super().__init__(message)


class EmptyClusterError(NumericalError):
    """A cluster ended up empty and repair could not fill it."""

    def __init__(self, cluster_ids, message=None):
        self.cluster_ids = list(cluster_ids)
        if message is None:
            message = f"empty cluster(s) {self.cluster_ids} could not be repaired"
        super().__init__(message)
