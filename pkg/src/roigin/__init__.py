"""ROI-aware graph isomorphism networks for functional-connectivity regression."""

from . import errors, fnc, interpret, losses, model, pool, readout, rgin, synth, tensor, trainer

__version__ = "0.1.0"

__all__ = [
    "errors",
    "fnc",
    "interpret",
    "losses",
    "model",
    "pool",
    "readout",
    "rgin",
    "synth",
    "tensor",
    "trainer",
    "__version__",
]
