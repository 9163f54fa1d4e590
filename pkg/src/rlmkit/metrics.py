"""Rank-correlation, selection, and multi-objective evaluation metrics.

Correlations use average ranks for ties (Spearman) and the tie-adjusted
tau-b (Kendall).  Degenerate inputs (constant vectors, zero mean) yield
NaN rather than a fabricated zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats


def spearman(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Rank correlation: Pearson correlation of average-rank vectors.

    Returns NaN when either side has zero rank variance.
    """
    _check_pair(pred, truth)
    if _constant(pred) or _constant(truth):
        return math.nan
    rho = stats.spearmanr(pred, truth).statistic
    return float(rho)


def kendall(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Tie-adjusted rank correlation (tau-b); NaN when degenerate."""
    _check_pair(pred, truth)
    if _constant(pred) or _constant(truth):
        return math.nan
    tau = stats.kendalltau(pred, truth, variant="b").statistic
    return float(tau)


def _check_pair(pred, truth):
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(truth)}")
    if len(pred) < 2:
        raise ValueError("need at least 2 points")


def _constant(values) -> bool:
    first = values[0]
    return all(v == first for v in values)


@dataclass
class GroupCorrelations:
    """Per-group rank correlations plus the skip tally."""

    group_ids: list[str]
    rhos: list[float]
    skipped: int

    def fraction_above(self, threshold: float) -> float:
        if not self.rhos:
            return math.nan
        hits = sum(1 for r in self.rhos if not math.isnan(r) and r > threshold)
        return hits / len(self.rhos)

    def median(self) -> float:
        usable = [r for r in self.rhos if not math.isnan(r)]
        return float(np.median(usable)) if usable else math.nan


def per_group_spearman(
    group_ids: Sequence[str],
    preds: Sequence[float],
    truths: Sequence[float],
    min_size: int = 2,
) -> GroupCorrelations:
    """Spearman rho within each group of aligned (pred, truth) pairs.

    Groups smaller than ``min_size`` or with constant truth are skipped
    and counted.  Group order follows first appearance.
    """
    if not (len(group_ids) == len(preds) == len(truths)):
        raise ValueError("group_ids, preds, truths must align")
    buckets: dict[str, list[int]] = {}
    order: list[str] = []
    for i, g in enumerate(group_ids):
        if g not in buckets:
            buckets[g] = []
            order.append(g)
        buckets[g].append(i)
    kept_ids, rhos, skipped = [], [], 0
    for g in order:
        idx = buckets[g]
        truth_g = [truths[i] for i in idx]
        if len(idx) < min_size or _constant(truth_g):
            skipped += 1
            continue
        kept_ids.append(g)
        rhos.append(spearman([preds[i] for i in idx], truth_g))
    return GroupCorrelations(group_ids=kept_ids, rhos=rhos, skipped=skipped)


def topp_containment(
    groups: Sequence[tuple[Sequence[float], Sequence[float]]],
    p_values: Sequence[float],
    min_size: int = 2,
) -> tuple[list[float], list[float]]:
    """Best-pick containment curve over (preds, truths) groups.

    For each p in ``p_values`` (fractions in (0, 1]), reports the share
    of groups whose argmin-predicted item is among the true best
    ceil(p * n) items (smaller truth is better), alongside the analytic
    random-pick baseline mean(ceil(p * n) / n).
    """
    usable = [
        (list(p), list(t))
        for p, t in groups
        if len(p) >= min_size and len(p) == len(t)
    ]
    if not usable:
        raise ValueError(f"no groups of size >= {min_size}")
    curve, baseline = [], []
    for p in p_values:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {p}")
        hits = 0
        base = 0.0
        for preds, truths in usable:
            n = len(preds)
            k = math.ceil(p * n)
            picked = min(range(n), key=lambda i: (preds[i], i))
            top_true = sorted(range(n), key=lambda i: (truths[i], i))[:k]
            hits += picked in top_true
            base += k / n
        curve.append(hits / len(usable))
        baseline.append(base / len(usable))
    return curve, baseline


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Population standard deviation over mean; NaN for zero mean."""
    if len(values) < 1:
        raise ValueError("need at least 1 value")
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if mean == 0.0:
        return math.nan
    return float(arr.std(ddof=0) / mean)


def pareto_front(
    points: Sequence[Sequence[float]], directions: Sequence[str]
) -> set[int]:
    """Indices of non-dominated points.

    ``directions`` gives "max" or "min" per coordinate.  A point is
    dominated when another is at least as good everywhere and strictly
    better somewhere.  Duplicate optimal points are all retained.
    """
    if any(d not in ("max", "min") for d in directions):
        raise ValueError("directions must be 'max' or 'min'")
    pts = [tuple(p) for p in points]
    for p in pts:
        if len(p) != len(directions):
            raise ValueError("point dimensionality mismatch")
    signs = [1.0 if d == "max" else -1.0 for d in directions]
    oriented = [tuple(s * c for s, c in zip(signs, p)) for p in pts]

    def dominates(a, b) -> bool:
        return all(x >= y for x, y in zip(a, b)) and any(
            x > y for x, y in zip(a, b)
        )

    # Equal points never dominate each other (domination needs a strict
    # coordinate), so duplicated optima are all retained.
    front = set()
    for i, p in enumerate(oriented):
        if not any(dominates(q, p) for q in oriented):
            front.add(i)
    return front


@dataclass
class EvalReport:
    """Bundle of evaluation results in a CSV/text-friendly shape."""

    per_task: dict[str, dict[str, float]] = field(default_factory=dict)
    group_rhos: GroupCorrelations | None = None
    rho_threshold: float = 0.54
    containment: tuple[list[float], list[float], list[float]] | None = None
    group_cvs: list[float] = field(default_factory=list)

    def add_task(self, task_id: str, preds, truths):
        self.per_task[task_id] = {
            "spearman": spearman(preds, truths),
            "kendall": kendall(preds, truths),
            "n": float(len(preds)),
        }

    def to_text(self) -> str:
        lines = []
        for task, row in sorted(self.per_task.items()):
            lines.append(
                f"task {task}: n={int(row['n'])} "
                f"spearman={_fmt(row['spearman'])} "
                f"kendall={_fmt(row['kendall'])}"
            )
        if self.group_rhos is not None:
            g = self.group_rhos
            lines.append(
                f"groups: n={len(g.rhos)} skipped={g.skipped} "
                f"median_rho={_fmt(g.median())} "
                f"frac_above_{self.rho_threshold}="
                f"{_fmt(g.fraction_above(self.rho_threshold))}"
            )
        if self.group_cvs:
            lines.append(
                f"cv: median={_fmt(float(np.median(self.group_cvs)))} "
                f"n={len(self.group_cvs)}"
            )
        if self.containment is not None:
            ps, curve, base = self.containment
            for p, c, b in zip(ps, curve, base):
                lines.append(
                    f"top-{p:g}: containment={_fmt(c)} baseline={_fmt(b)}"
                )
        return "\n".join(lines) + "\n"

    def containment_csv(self) -> str:
        if self.containment is None:
            return "p,containment,baseline\n"
        ps, curve, base = self.containment
        rows = ["p,containment,baseline"]
        rows += [f"{p:g},{c:.6f},{b:.6f}" for p, c, b in zip(ps, curve, base)]
        return "\n".join(rows) + "\n"


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.4f}"
