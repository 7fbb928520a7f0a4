"""Exception types shared across the package.

Each carries a short machine-readable ``code`` that the CLI prints as the
one-line error on stderr.
"""


class WormbodyError(Exception):
    code = "error"


class ConfigError(WormbodyError):
    """Bad run configuration: unknown key, bad value, missing path."""

    code = "config"


class DegenerateGeometryError(WormbodyError):
    """Zero-length polyline, empty mask, or similar degenerate input."""

    code = "degenerate-geometry"


class AmbiguousOrientationError(WormbodyError):
    """Head/tail orientation cannot be resolved from the U field."""

    code = "ambiguous-orientation"


class InfeasibleParamsError(WormbodyError):
    """Generator parameters rejected after the retry budget."""

    code = "infeasible-params"


class WormNotFoundError(WormbodyError):
    """Coarse segmentation produced no pixel above threshold."""

    code = "worm-not-found"


class CheckpointFormatError(WormbodyError):
    """Corrupted or incompatible checkpoint container."""

    code = "checkpoint-format"


class TrainingDivergedError(WormbodyError):
    """Non-finite loss encountered during training."""

    code = "training-diverged"
