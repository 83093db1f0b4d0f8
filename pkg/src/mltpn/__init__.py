"""Multi-level temporal pyramid network for temporal action detection, on a small numpy autodiff engine."""

__version__ = "0.1.0"
