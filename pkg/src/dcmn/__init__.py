"""Dual-modality room-level indoor localisation: model, simulator, training
harness, and in-home mobility analytics."""

__version__ = "0.1.0"

from .estimator import DCMNLocalizer  # noqa: E402,F401
