"""Command line: profile mem|lat --jobs <jobs-file> --out <records>.

The jobs file is line-delimited JSON; each line needs "source" (or
"source_file"), and may set "mode", "payloads", "entry".  Batch-level
flags override the per-run protocol for every job.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from profiler_harness.jobs import ProfileJob
from profiler_harness.labels import emit_labels
from profiler_harness.latency import run_latency_jobs
from profiler_harness.memory import run_jobs

logger = logging.getLogger("profiler_harness")


def _load_jobs(path: str, warmup: int, repeats: int, timeout: float):
    jobs = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RuntimeError(f"{path}:{i}: bad JSON: {exc}") from exc
            if "source_file" in raw:
                with open(raw["source_file"], "r", encoding="utf-8") as sf:
                    source = sf.read()
            elif "source" in raw:
                source = raw["source"]
            else:
                raise RuntimeError(f"{path}:{i}: needs source or source_file")
            jobs.append(
                ProfileJob(
                    source=source,
                    mode=raw.get("mode", "callable"),
                    payloads=tuple(raw.get("payloads", ())),
                    entry=raw.get("entry"),
                    warmup=warmup,
                    repeats=repeats,
                    timeout_seconds=timeout,
                )
            )
    if not jobs:
        raise RuntimeError(f"no jobs in {path}")
    return jobs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="profile", description="Execution-based label collection"
    )
    sub = parser.add_subparsers(dest="kind", metavar="mem|lat")
    for kind in ("mem", "lat"):
        p = sub.add_parser(kind)
        p.add_argument("--jobs", required=True, help="jobs file, one JSON object per line")
        p.add_argument("--out", required=True, help="records file to write")
        p.add_argument("--task-id", default="profiled")
        p.add_argument("--statement", default=None)
        p.add_argument("--warmup", type=int, default=3)
        p.add_argument("--repeats", type=int, default=11)
        p.add_argument("--timeout", type=float, default=10.0)
        p.add_argument("--log-level", default="info")
        if kind == "lat":
            p.add_argument("--trials", type=int, default=5)
            p.add_argument("--min-window", type=float, default=1.0)
    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if ns.kind is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(
        level=getattr(logging, ns.log_level.upper(), logging.INFO),
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    logger.info(
        "environment: python %s on %s", sys.version.split()[0], sys.platform
    )
    try:
        jobs = _load_jobs(ns.jobs, ns.warmup, ns.repeats, ns.timeout)
        if ns.kind == "mem":
            results = run_jobs(jobs)
            metric = "peak_alloc_bytes"
        else:
            results = run_latency_jobs(
                jobs, trials=ns.trials, min_window_seconds=ns.min_window
            )
            metric = "latency_ms"
        written, skipped = emit_labels(
            results,
            ns.task_id,
            ns.out,
            metric=metric,
            statement=ns.statement,
        )
        logger.info(
            "%s: %d records to %s (%d skipped)",
            ns.kind,
            written,
            ns.out,
            skipped,
        )
        return 0
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
