# Copyright (c) ckptbench contributors.
# SPDX-License-Identifier: Apache-2.0
"""Checkpoint/restore I/O benchmark.

Workloads, layout plans, in-process checkpoint/restore and multi-rank
experiments. Plans, manifests, configurations and reports are plain dicts with
the same structure as the JSON documents written by the ``ckptbench`` tool.
"""

from ._core import (
    MANIFEST_FILE,
    MANIFEST_SCHEMA,
    REPORT_SCHEMA,
    Error,
    Workload,
    builtin_profiles,
    checkpoint,
    default_config,
    expand_preset,
    object_checksum,
    plan_layout,
    preset_names,
    profile_workload,
    read_manifest,
    report_to_csv,
    restore,
    run,
    synthetic_workload,
    validate_report,
    verify,
)

__all__ = [
    "MANIFEST_FILE",
    "MANIFEST_SCHEMA",
    "REPORT_SCHEMA",
    "Error",
    "Workload",
    "builtin_profiles",
    "checkpoint",
    "default_config",
    "expand_preset",
    "object_checksum",
    "plan_layout",
    "preset_names",
    "profile_workload",
    "read_manifest",
    "report_to_csv",
    "restore",
    "run",
    "synthetic_workload",
    "validate_report",
    "verify",
]
__version__ = "0.1.0"
