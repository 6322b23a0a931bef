class EchomiError(Exception):
    """Base class for all errors raised by echomi."""


class ValidationError(EchomiError, ValueError):
    """Invalid input: a precondition of an operation does not hold."""


class ManifestError(ValidationError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class SegmentationError(EchomiError):
    """Boundary extraction failed on a frame (no ridges, empty region, ...)."""


class GeometryError(EchomiError):
    """Degenerate boundary or segment geometry."""


class TrainingError(EchomiError):
    """A classifier could not be fitted with the given data / hyperparameters."""
