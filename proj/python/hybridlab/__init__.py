"""Hybrid attention / state-space language model toolkit."""

from ._core import (
    ContractError,
    DimensionError,
    Model,
    NumericError,
    cost,
    decode_trace,
    plan,
    plan_counts,
    preset_names,
    verify,
    verify_suites,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "Model",
    "NumericError",
    "cost",
    "decode_trace",
    "plan",
    "plan_counts",
    "preset_names",
    "verify",
    "verify_suites",
]
