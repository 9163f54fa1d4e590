"""Turn profiling results into line-delimited label records.

Record shape (one JSON object per line) matches the downstream dataset
loader: task_id, input_text, metrics=[{name, value}].  Failed jobs are
left out and tallied.
"""

from __future__ import annotations

import json
import logging
from typing import Sequence

from profiler_harness.jobs import ProfileJob, ProfileResult

logger = logging.getLogger("profiler_harness")

METRIC_NAMES = ("peak_alloc_bytes", "latency_ms")
STATEMENT_SEPARATOR = "---"


def _metric_value(result: ProfileResult, metric: str) -> float:
    if metric == "peak_alloc_bytes":
        return float(result.peak_alloc_bytes)
    if result.latency_ms_median is None:
        raise ValueError("result carries no latency measurement")
    return float(result.latency_ms_median)


def emit_labels(
    results: Sequence[tuple[ProfileJob, ProfileResult]],
    task_id: str,
    out_path,
    metric: str = "peak_alloc_bytes",
    statement: str | None = None,
) -> tuple[int, int]:
    """Write successful results as records; returns (written, skipped)."""
    if not results:
        raise ValueError("no results to emit")
    if metric not in METRIC_NAMES:
        raise ValueError(f"metric must be one of {METRIC_NAMES}, got {metric!r}")
    written = 0
    skipped = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for job, result in results:
            if not result.ok:
                skipped += 1
                continue
            text = job.source
            if statement is not None:
                text = f"{statement}\n{STATEMENT_SEPARATOR}\n{text}"
            record = {
                "task_id": task_id,
                "input_text": text,
                "metrics": [
                    {"name": metric, "value": _metric_value(result, metric)}
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=True) + "\n")
            written += 1
    logger.info("%d records written, %d skipped", written, skipped)
    return written, skipped
