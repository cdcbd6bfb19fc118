"""Exception types shared across the package."""


class EpiFitError(Exception):
    """Base class for all epifit errors."""


class ParameterError(EpiFitError, ValueError):
    """A value violates a documented precondition (non-positive rate, bad range, ...)."""


class DomainError(EpiFitError, ValueError):
    """A state or input left its mathematical domain (S <= 0, point off the unit square, ...)."""


class DataFormatError(EpiFitError, ValueError):
    """A data file could not be parsed or failed validation; message carries file/line context."""


class ElicitationError(EpiFitError, ValueError):
    """IFR elicitation failed; message names the offending day."""


class GradientError(EpiFitError, RuntimeError):
    """A finite-difference neighbor evaluation was non-finite; message names the coordinate."""


class SamplerError(EpiFitError, RuntimeError):
    """The sampler could not make progress (no feasible start, all-divergent warmup)."""


class EstimationError(EpiFitError, RuntimeError):
    """A post-processing estimator failed (degenerate bridge weights, missing inputs)."""
