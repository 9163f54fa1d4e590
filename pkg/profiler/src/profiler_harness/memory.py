"""Peak-allocation profiling in fresh child interpreters.

Protocol per (solution, payload): `warmup` discarded runs, `repeats`
timed runs, then one instrumented run that records the interpreter-heap
peak during solution execution.  Every run is a new child process
started with a scrubbed environment, `-S -B -s`, and PYTHONHASHSEED=0.
(`-E`/`-I` would ignore PYTHONHASHSEED, so hermeticity comes from
replacing the environment instead.)
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import tempfile
from typing import Callable, Sequence

from profiler_harness.jobs import ProfileJob, ProfileResult, RunOutcome, WallStats

_CHILD = os.path.join(os.path.dirname(__file__), "_child.py")

# phase is "warmup" | "timed" | "instrumented"
RunnerFn = Callable[[ProfileJob, object, str], RunOutcome]


def _payload_blob(job: ProfileJob, payload) -> dict:
    if job.mode == "stdin":
        return {"stdin": "" if payload is None else str(payload)}
    args = [] if payload is None else list(payload)
    return {"args": args, "entry": job.entry}


def run_in_child(job: ProfileJob, payload, phase: str) -> RunOutcome:
    """Default runner: one isolated interpreter, one execution."""
    with tempfile.TemporaryDirectory(prefix="profile_") as workdir:
        src_path = os.path.join(workdir, "solution.py")
        payload_path = os.path.join(workdir, "payload.json")
        report_path = os.path.join(workdir, "report.json")
        with open(src_path, "w", encoding="utf-8") as fh:
            fh.write(job.source)
        with open(payload_path, "w", encoding="utf-8") as fh:
            json.dump(_payload_blob(job, payload), fh)
        argv = [
            sys.executable,
            "-S",
            "-B",
            "-s",
            _CHILD,
            src_path,
            payload_path,
            report_path,
            phase,
            job.mode,
        ]
        try:
            proc = subprocess.run(
                argv,
                env={"PYTHONHASHSEED": "0"},
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                stdin=subprocess.DEVNULL,
                timeout=job.timeout_seconds,
            )
        except subprocess.TimeoutExpired:
            return RunOutcome(ok=False, failure="timeout")
        if proc.returncode != 0:
            return RunOutcome(
                ok=False, failure=f"nonzero exit ({proc.returncode})"
            )
        try:
            with open(report_path, "r", encoding="utf-8") as fh:
                report = json.load(fh)
        except (OSError, json.JSONDecodeError):
            return RunOutcome(ok=False, failure="crash")
        if not report.get("ok"):
            return RunOutcome(
                ok=False, failure=f"crash: {report.get('error', 'unknown')}"
            )
        return RunOutcome(
            ok=True,
            wall_seconds=report.get("wall"),
            peak_alloc_bytes=report.get("peak"),
            peak_rss_bytes=report.get("rss"),
        )


def profile_memory(
    job: ProfileJob, runner: RunnerFn | None = None
) -> ProfileResult:
    """Measure one job; a failed run stops it but never raises."""
    runner = runner or run_in_child
    payloads: Sequence = job.payloads or (None,)
    walls: list[float] = []
    peak_alloc = 0
    peak_rss = 0
    counts = {"warmup": 0, "timed": 0, "instrumented": 0}

    def finish(failure=None):
        return ProfileResult(
            peak_alloc_bytes=peak_alloc,
            peak_rss_bytes=peak_rss,
            wall=WallStats.from_samples(walls) if walls else None,
            warmup_runs=counts["warmup"],
            timed_runs=counts["timed"],
            instrumented_runs=counts["instrumented"],
            failure=failure,
        )

    for payload in payloads:
        for phase, n in (("warmup", job.warmup), ("timed", job.repeats)):
            for _ in range(n):
                outcome = runner(job, payload, phase)
                counts[phase] += 1
                if not outcome.ok:
                    return finish(outcome.failure or "crash")
                if phase == "timed" and outcome.wall_seconds is not None:
                    walls.append(outcome.wall_seconds)
                if outcome.peak_rss_bytes:
                    peak_rss = max(peak_rss, outcome.peak_rss_bytes)
        outcome = runner(job, payload, "instrumented")
        counts["instrumented"] += 1
        if not outcome.ok:
            return finish(outcome.failure or "crash")
        if outcome.peak_alloc_bytes:
            peak_alloc = max(peak_alloc, outcome.peak_alloc_bytes)
        if outcome.peak_rss_bytes:
            peak_rss = max(peak_rss, outcome.peak_rss_bytes)
    return finish()


def run_jobs(
    jobs: Sequence[ProfileJob], runner: RunnerFn | None = None
) -> list[tuple[ProfileJob, ProfileResult]]:
    """Profile each job; a failing job never blocks the rest."""
    out = []
    for job in jobs:
        try:
            result = profile_memory(job, runner=runner)
        except Exception as exc:  # harness bug; keep the batch alive
            result = ProfileResult(failure=f"harness: {exc}")
        out.append((job, result))
    return out
