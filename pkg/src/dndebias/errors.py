"""Exception types raised across the package."""


class DndError(Exception):
    """Base class for domain errors (the CLI maps these to exit status 1)."""


class ShapeError(DndError, ValueError):
    pass


class TrainingAbortError(DndError, FloatingPointError):
    pass


class DegenerateEmbeddingError(DndError, ValueError):
    """A zero-norm embedding, template or saliency map where a direction is required."""


class MappingError(DndError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ContaminationError(DndError, ValueError):
    pass


class CoverageError(DndError, ValueError):
    pass


class ArityError(DndError, ValueError):
    pass


class InsufficientDataError(DndError, ValueError):
    pass


class QuantizationError(DndError, ValueError):
    """Requested FPR lies below the ROC's resolution of 1 / n_impostor."""


class UndefinedBPCError(DndError, ZeroDivisionError):
    pass


class FormatError(DndError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
