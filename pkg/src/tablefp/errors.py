"""Exception taxonomy shared across the package.

Errors that indicate bad input data all derive from DataError so the
command line layer can map them to a single exit code.
"""


class TablefpError(Exception):
    pass


class DataError(TablefpError):
    """Invalid or inconsistent input data."""


class SchemaError(DataError):
    """A required column or field is missing or misnamed."""


class ConflictError(DataError):
    """Duplicate identifiers or contradictory records."""


class MalformedRowsError(DataError):
    """One or more CSV rows failed to parse.

    Carries (line_number, message) pairs; line numbers are 1-based and
    count the header line, matching what an editor shows.
    """

    def __init__(self, path, rows):
        self.path = str(path)
        self.rows = list(rows)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.rows)
        super().__init__(f"{self.path}: {len(self.rows)} malformed row(s): {lines}")


class AnnotationError(DataError):
    """Inconsistent digit annotations (bbox bounds, flag sequences)."""


class UndefinedStatisticError(DataError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


class TrainingDivergedError(TablefpError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training loss diverged at epoch {epoch}: {loss!r}")


class UnknownCityError(DataError):
    def __init__(self, city):
        self.city = city
        super().__init__(f"city not in gazetteer: {city!r}")
