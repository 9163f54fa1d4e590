"""Labeled-example ingestion, prompt assembly, splits, and task mixtures.

The on-disk format is line-delimited JSON, one object per line with
fields ``task_id`` (string), ``group_id`` (optional string),
``input_text`` (string) and ``metrics`` (ordered array of objects with
``name`` and ``value``).  Metric order is meaningful: it is the order in
which values are decoded at prediction time.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

PROMPT_SEPARATOR = "---"


class RecordError(ValueError):
    """A malformed record, carrying the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class Metric:
    name: str
    value: float


@dataclass(frozen=True)
class RegressionExample:
    """One (task, input text, ordered named metric values) record."""

    task_id: str
    input_text: str
    metrics: tuple[Metric, ...]
    group_id: str | None = None

    def __post_init__(self):
        if not self.metrics:
            raise ValueError("metrics must be nonempty")
        names = [m.name for m in self.metrics]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate metric names: {names}")
        for m in self.metrics:
            if not math.isfinite(m.value):
                raise ValueError(f"non-finite value for metric {m.name!r}")

    @property
    def metric_values(self) -> tuple[float, ...]:
        return tuple(m.value for m in self.metrics)

    def to_record(self) -> dict:
        rec = {"task_id": self.task_id}
        if self.group_id is not None:
            rec["group_id"] = self.group_id
        rec["input_text"] = self.input_text
        rec["metrics"] = [{"name": m.name, "value": m.value} for m in self.metrics]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "RegressionExample":
        if not isinstance(rec, dict):
            raise ValueError(f"expected an object, got {type(rec).__name__}")
        for key in ("task_id", "input_text", "metrics"):
            if key not in rec:
                raise ValueError(f"missing required field {key!r}")
        raw_metrics = rec["metrics"]
        if not isinstance(raw_metrics, list) or not raw_metrics:
            raise ValueError("metrics must be a nonempty array")
        metrics = []
        for i, m in enumerate(raw_metrics):
            if not isinstance(m, dict) or "name" not in m or "value" not in m:
                raise ValueError(f"metrics[{i}] must have name and value")
            value = m["value"]
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"metrics[{i}].value must be a number")
            metrics.append(Metric(name=str(m["name"]), value=float(value)))
        return cls(
            task_id=str(rec["task_id"]),
            group_id=None if rec.get("group_id") is None else str(rec["group_id"]),
            input_text=str(rec["input_text"]),
            metrics=tuple(metrics),
        )

    def identity_key(self) -> str:
        """Content-derived key, independent of file position."""
        return json.dumps(self.to_record(), sort_keys=True, ensure_ascii=True)


def load_examples(path, on_error: str = "abort") -> Iterator[RegressionExample]:
    """Stream examples from a record file.

    ``on_error`` is "abort" (raise on the first malformed line) or
    "skip" (log the line number and continue).
    """
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                example = RegressionExample.from_record(rec)
            except ValueError as exc:
                err = RecordError(str(exc), line_number=lineno)
                if on_error == "abort":
                    raise err from None
                log.warning("skipping malformed record: %s", err)
                continue
            yield example


def save_examples(path, examples: Iterable[RegressionExample]) -> int:
    """Write examples as line-delimited records; returns the count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=True) + "\n")
            n += 1
    return n


def assemble_prompt(
    example: RegressionExample,
    include_statement: bool = False,
    statement: str | None = None,
) -> str:
    """Build the model input: optional statement, separator line, text."""
    if include_statement and statement is not None:
        return f"{statement}\n{PROMPT_SEPARATOR}\n{example.input_text}"
    return example.input_text


def _unit_hash(seed: int, key: str) -> float:
    """Stable hash of (seed, key) mapped into [0, 1)."""
    payload = f"{seed}\x1f{key}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def split_examples(
    examples: Sequence[RegressionExample],
    test_fraction: float,
    mode: str,
    seed: int = 0,
) -> tuple[list[RegressionExample], list[RegressionExample]]:
    """Deterministic (train, test) split.

    "zero_shot" assigns whole groups by a hash of group_id, so no group
    spans both sides.  "shared_group" assigns each example by a hash of
    its content, so large groups appear on both sides.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if mode not in ("zero_shot", "shared_group"):
        raise ValueError(f"mode must be 'zero_shot' or 'shared_group', got {mode!r}")
    train, test = [], []
    for i, ex in enumerate(examples):
        if mode == "zero_shot":
            if ex.group_id is None:
                raise ValueError(
                    f"example {i} has no group_id; zero_shot split needs one"
                )
            key = f"g\x1f{ex.group_id}"
        else:
            key = f"e\x1f{ex.identity_key()}"
        (test if _unit_hash(seed, key) < test_fraction else train).append(ex)
    return train, test


@dataclass
class TaskMixture:
    """Weighted collection of task datasets for interleaved sampling."""

    entries: list[tuple[str, list[RegressionExample], float]]
    seed: int = 0
    _weights: list[float] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("mixture must have at least one entry")
        total = 0.0
        for name, dataset, weight in self.entries:
            if weight < 0:
                raise ValueError(f"task {name!r} has negative weight {weight}")
            if weight > 0 and not dataset:
                raise ValueError(f"task {name!r} has positive weight but no data")
            total += weight
        if total <= 0:
            raise ValueError("at least one weight must be positive")
        self._weights = [w / total for _, _, w in self.entries]

    @property
    def task_names(self) -> list[str]:
        return [name for name, _, _ in self.entries]


def sample_mixture(
    mixture: TaskMixture, rng: random.Random | None = None
) -> Iterator[RegressionExample]:
    """Infinite stream: pick a task by weight, then walk a per-task
    shuffled epoch, reshuffling whenever a task's epoch is exhausted."""
    if rng is None:
        rng = random.Random(mixture.seed)
    datasets = [list(ds) for _, ds, _ in mixture.entries]
    orders: list[list[int]] = [[] for _ in datasets]
    cursors = [0] * len(datasets)
    weights = mixture._weights
    indices = range(len(datasets))
    while True:
        t = rng.choices(indices, weights=weights, k=1)[0]
        if cursors[t] >= len(orders[t]):
            orders[t] = list(range(len(datasets[t])))
            rng.shuffle(orders[t])
            cursors[t] = 0
        yield datasets[t][orders[t][cursors[t]]]
        cursors[t] += 1
