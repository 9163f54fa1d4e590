"""Job and result types shared by the memory and latency profilers."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

MODES = ("callable", "stdin")


@dataclass(frozen=True)
class ProfileJob:
    """One program to measure, with its inputs and run protocol.

    "callable" mode executes the source once to define functions, then
    calls the entry point with each payload (a list of arguments).
    "stdin" mode runs the whole source as a program once per payload,
    with the payload string piped to standard input.
    """

    source: str
    mode: str = "callable"
    payloads: tuple = ()
    entry: str | None = None
    warmup: int = 3
    repeats: int = 11
    timeout_seconds: float = 10.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.warmup < 0 or self.repeats < 0:
            raise ValueError("warmup and repeats must be nonnegative")
        if not self.timeout_seconds > 0:
            raise ValueError("timeout_seconds must be positive")
        object.__setattr__(self, "payloads", tuple(self.payloads))


@dataclass(frozen=True)
class WallStats:
    """Summary of a set of wall-clock durations in seconds."""

    min: float
    median: float
    mean: float
    p90: float
    max: float
    stddev: float

    def __post_init__(self):
        if not self.min <= self.median <= self.max:
            raise ValueError("median must lie within [min, max]")

    @classmethod
    def from_samples(cls, samples) -> "WallStats":
        xs = sorted(samples)
        if not xs:
            raise ValueError("no samples")
        p90 = xs[min(len(xs) - 1, round(0.9 * (len(xs) - 1)))]
        return cls(
            min=xs[0],
            median=statistics.median(xs),
            mean=statistics.fmean(xs),
            p90=p90,
            max=xs[-1],
            stddev=statistics.pstdev(xs),
        )


@dataclass(frozen=True)
class ProfileResult:
    """Measurements for one job; failure tag set when it did not finish."""

    peak_alloc_bytes: int = 0
    peak_rss_bytes: int = 0
    wall: WallStats | None = None
    warmup_runs: int = 0
    timed_runs: int = 0
    instrumented_runs: int = 0
    latency_ms_median: float | None = None
    latency_ms_stddev: float | None = None
    failure: str | None = None

    def __post_init__(self):
        if self.peak_alloc_bytes < 0 or self.peak_rss_bytes < 0:
            raise ValueError("byte counts must be nonnegative")

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass(frozen=True)
class RunOutcome:
    """What one execution produced; the unit a runner returns."""

    ok: bool
    wall_seconds: float | None = None
    peak_alloc_bytes: int | None = None
    peak_rss_bytes: int | None = None
    failure: str | None = None
