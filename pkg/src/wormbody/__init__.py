"""Worm image analysis at desk scale: segmentation, dense body coordinates,
straightening, and age regression, trained end to end on a procedural
synthetic worm generator with exact ground truth.

Submodules are imported lazily so that the CLI can configure thread caps
before numpy is loaded.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff",
    "config",
    "errors",
    "formats",
    "geometry",
    "imageops",
    "losses",
    "metrics",
    "models",
    "pipeline",
    "straighten",
    "synth",
    "train",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        module = importlib.import_module(f"{__name__}.{name}")
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
