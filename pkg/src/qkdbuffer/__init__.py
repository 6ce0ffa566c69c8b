"""Slot-based simulator and adaptive buffer sizing for QKD key supply."""

from .analytics import (
    AutocovarianceSeries,
    NormalFit,
    SizingResult,
    buffer_change_std,
    estimate_autocovariance,
    fit_normal,
    required_buffer,
    window_cov_table,
)
from .core import BufferState, DelayDistribution, SlotEvents, apply_slot

__all__ = [
    "AutocovarianceSeries",
    "BufferState",
    "DelayDistribution",
    "NormalFit",
    "SizingResult",
    "SlotEvents",
    "apply_slot",
    "buffer_change_std",
    "estimate_autocovariance",
    "fit_normal",
    "required_buffer",
    "window_cov_table",
]
