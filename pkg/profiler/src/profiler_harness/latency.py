"""Wall-clock latency via an adaptive iteration window.

Runs in-process and strictly serially: each trial starts at 20
iterations and doubles until the timed window reaches the minimum
span, so per-call latency is window/iterations.  The reported figure
is the median over trials, with the across-trial standard deviation.
"""

from __future__ import annotations

import io
import itertools
import statistics
import sys
import time
from typing import Callable, Sequence

from profiler_harness.jobs import ProfileJob, ProfileResult, WallStats

START_ITERS = 20
MAX_ORDERINGS = 24


def _entry_from(namespace: dict, name: str | None) -> Callable:
    if name:
        fn = namespace.get(name)
        if not callable(fn):
            raise TypeError(f"entry {name!r} is not a callable")
        return fn
    if callable(namespace.get("main")):
        return namespace["main"]
    functions = [
        v
        for k, v in namespace.items()
        if callable(v) and not k.startswith("_")
        and getattr(v, "__module__", "") == "profiled_solution"
    ]
    if len(functions) != 1:
        raise TypeError(
            f"cannot pick an entry point among {len(functions)} callables"
        )
    return functions[0]


def _build_call(job: ProfileJob) -> Callable[[], None]:
    """Resolve the measured thunk, trying argument orderings in turn."""
    payload = job.payloads[0] if job.payloads else None
    if job.mode == "stdin":
        code = compile(job.source, "<solution>", "exec")
        text = "" if payload is None else str(payload)

        def call():
            sys.stdin = io.StringIO(text)
            exec(code, {"__name__": "__main__"})

        call()  # shape check: the program must run at all
        return call

    namespace: dict = {"__name__": "profiled_solution"}
    exec(compile(job.source, "<solution>", "exec"), namespace)
    fn = _entry_from(namespace, job.entry)
    args = [] if payload is None else list(payload)
    last_error = None
    for perm in itertools.islice(
        itertools.permutations(args), MAX_ORDERINGS
    ):
        try:
            fn(*perm)
        except MemoryError:
            raise
        except Exception as exc:
            last_error = exc
            continue
        chosen = list(perm)
        return lambda: fn(*chosen)
    raise TypeError(f"no argument ordering fits: {last_error}")


def profile_latency(
    job: ProfileJob,
    trials: int = 5,
    min_window_seconds: float = 1.0,
    start_iters: int = START_ITERS,
) -> ProfileResult:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    real_stdin = sys.stdin
    try:
        try:
            call = _build_call(job)
        except MemoryError:
            return ProfileResult(failure="oom")
        except Exception:
            return ProfileResult(failure="shape mismatch")
        try:
            for _ in range(job.warmup):
                call()
            latencies = []
            for _ in range(trials):
                iters = start_iters
                while True:
                    t0 = time.perf_counter()
                    for _ in range(iters):
                        call()
                    window = time.perf_counter() - t0
                    if window >= min_window_seconds:
                        break
                    iters *= 2
                latencies.append(window / iters)
        except MemoryError:
            return ProfileResult(failure="oom")
        except Exception as exc:
            return ProfileResult(failure=f"crash: {exc}")
    finally:
        sys.stdin = real_stdin
    median_s = statistics.median(latencies)
    stddev_s = statistics.stdev(latencies) if len(latencies) > 1 else 0.0
    return ProfileResult(
        wall=WallStats.from_samples(latencies),
        warmup_runs=job.warmup,
        timed_runs=trials,
        latency_ms_median=median_s * 1000.0,
        latency_ms_stddev=stddev_s * 1000.0,
    )


def run_latency_jobs(
    jobs: Sequence[ProfileJob], trials: int = 5, **kwargs
) -> list[tuple[ProfileJob, ProfileResult]]:
    """Profile serially; a failing job never blocks the rest."""
    out = []
    for job in jobs:
        try:
            result = profile_latency(job, trials=trials, **kwargs)
        except Exception as exc:
            result = ProfileResult(failure=f"harness: {exc}")
        out.append((job, result))
    return out
