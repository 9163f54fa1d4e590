"""Execution-based labeling: peak heap allocation and wall latency."""

from profiler_harness.jobs import (
    ProfileJob,
    ProfileResult,
    RunOutcome,
    WallStats,
)
from profiler_harness.labels import emit_labels
from profiler_harness.latency import profile_latency, run_latency_jobs
from profiler_harness.memory import profile_memory, run_jobs

__all__ = [
    "ProfileJob",
    "ProfileResult",
    "RunOutcome",
    "WallStats",
    "emit_labels",
    "profile_latency",
    "profile_memory",
    "run_jobs",
    "run_latency_jobs",
]

__version__ = "0.1.0"
