"""Multi-view echocardiography wall-motion analysis and MI detection."""

from .errors import (EchomiError, GeometryError, ManifestError, SegmentationError, TrainingError,
                     ValidationError)

__version__ = "0.1.0"

__all__ = ["__version__", "EchomiError", "ValidationError", "ManifestError", "SegmentationError",
           "GeometryError", "TrainingError"]
