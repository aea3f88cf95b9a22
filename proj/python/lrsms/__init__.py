# Copyright 2026 The lrsms Authors
# SPDX-License-Identifier: Apache-2.0
"""Low-rank factorized transformer training at desk scale."""

from lrsms._core import (
    ChecksumError,
    ConsistencyError,
    DomainError,
    NumericalError,
    ParseError,
    SchemaError,
    ShapeError,
    UsageError,
    analyze,
    default_spec,
    k95,
    linear_alpha,
    load_checkpoint,
    make_plan,
    plan_summary,
    rank_for,
    run_cli,
    spectral_init,
    svd,
    train,
    untrained_loss,
)

__all__ = [
    "ChecksumError",
    "ConsistencyError",
    "DomainError",
    "NumericalError",
    "ParseError",
    "SchemaError",
    "ShapeError",
    "UsageError",
    "analyze",
    "default_spec",
    "k95",
    "linear_alpha",
    "load_checkpoint",
    "make_plan",
    "plan_summary",
    "rank_for",
    "run_cli",
    "spectral_init",
    "svd",
    "train",
    "untrained_loss",
]
