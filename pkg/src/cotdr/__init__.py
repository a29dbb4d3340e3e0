"""Correlation OTDR measurement chain for multi-core fiber group delay."""

from cotdr.traces import AccumulatedTrace, AnalogTrace, QuantizedTrace

__version__ = "0.1.0"

__all__ = ["AnalogTrace", "AccumulatedTrace", "QuantizedTrace", "__version__"]
