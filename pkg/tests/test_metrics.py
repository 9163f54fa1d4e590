"""Rank correlations against brute-force definitions, selection curves,
CV, and Pareto fronts.

The brute-force implementations below work straight from the textbook
definitions (average ranks + Pearson; concordant/discordant pair counts
with the tau-b tie correction) and act as independent oracles.
"""

import itertools
import math
import random

import pytest

from rlmkit.metrics import (
    EvalReport,
    coefficient_of_variation,
    kendall,
    pareto_front,
    per_group_spearman,
    spearman,
    topp_containment,
)


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1  # 1-based average rank of the tie block
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def brute_spearman(pred, truth):
    rp, rt = average_ranks(pred), average_ranks(truth)
    n = len(pred)
    mp, mt = sum(rp) / n, sum(rt) / n
    cov = sum((a - mp) * (b - mt) for a, b in zip(rp, rt))
    vp = sum((a - mp) ** 2 for a in rp)
    vt = sum((b - mt) ** 2 for b in rt)
    if vp == 0 or vt == 0:
        return math.nan
    return cov / math.sqrt(vp * vt)


def brute_kendall(pred, truth):
    n = len(pred)
    nc = nd = tp = tt = 0
    for i in range(n):
        for j in range(i + 1, n):
            dp = pred[i] - pred[j]
            dt = truth[i] - truth[j]
            if dp == 0 and dt == 0:
                tp += 1
                tt += 1
            elif dp == 0:
                tp += 1
            elif dt == 0:
                tt += 1
            elif (dp > 0) == (dt > 0):
                nc += 1
            else:
                nd += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - tp) * (n0 - tt))
    if denom == 0:
        return math.nan
    return (nc - nd) / denom


class TestSpearman:
    def test_frozen_values(self):
        assert spearman([1, 2, 3], [1, 2, 3]) == 1.0
        assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
        assert spearman([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5, abs=1e-12)

    def test_degenerate_is_nan(self):
        assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
        assert math.isnan(spearman([1, 2, 3], [5, 5, 5]))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            spearman([1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            spearman([1], [1])

    def test_exhaustive_permutations(self):
        for n in range(2, 7):
            truth = list(range(n))
            for perm in itertools.permutations(range(n)):
                got = spearman(list(perm), truth)
                want = brute_spearman(list(perm), truth)
                assert got == pytest.approx(want, abs=1e-12), (perm, n)

    def test_ties_match_brute_force(self):
        rng = random.Random(31)
        for _ in range(200):
            n = rng.randint(2, 8)
            pred = [rng.randint(0, 3) for _ in range(n)]
            truth = [rng.randint(0, 3) for _ in range(n)]
            got = spearman(pred, truth)
            want = brute_spearman(pred, truth)
            if math.isnan(want):
                assert math.isnan(got)
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = random.Random(7)
        pred = [rng.random() for _ in range(30)]
        truth = [rng.random() for _ in range(30)]
        base = spearman(pred, truth)
        for f in (lambda x: 2 * x + 1, math.exp, lambda x: x**3):
            assert spearman([f(p) for p in pred], truth) == pytest.approx(
                base, abs=1e-12
            )
            assert spearman(pred, [f(t) for t in truth]) == pytest.approx(
                base, abs=1e-12
            )


class TestKendall:
    def test_frozen_values(self):
        assert kendall([1, 2, 3], [1, 2, 3]) == 1.0
        assert kendall([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-12)
        assert math.isnan(kendall([1, 2, 3], [4, 4, 4]))

    def test_exhaustive_permutations(self):
        for n in range(2, 7):
            truth = list(range(n))
            for perm in itertools.permutations(range(n)):
                got = kendall(list(perm), truth)
                want = brute_kendall(list(perm), truth)
                assert got == pytest.approx(want, abs=1e-12), (perm, n)

    def test_ties_match_brute_force(self):
        rng = random.Random(32)
        for _ in range(200):
            n = rng.randint(2, 8)
            pred = [rng.randint(0, 3) for _ in range(n)]
            truth = [rng.randint(0, 3) for _ in range(n)]
            got = kendall(pred, truth)
            want = brute_kendall(pred, truth)
            if math.isnan(want):
                assert math.isnan(got)
            else:
                assert got == pytest.approx(want, abs=1e-12)


class TestPerGroup:
    def test_perfect_groups(self):
        group_ids = ["a", "a", "a", "b", "b", "b"]
        truths = [1.0, 2.0, 3.0, 9.0, 8.0, 7.0]
        preds = [0.1, 0.2, 0.3, 0.9, 0.8, 0.7]
        result = per_group_spearman(group_ids, preds, truths)
        assert result.rhos == [1.0, 1.0]
        assert result.fraction_above(0.54) == 1.0
        assert result.skipped == 0

    def test_small_and_constant_groups_skipped(self):
        group_ids = ["a", "a", "solo", "flat", "flat"]
        preds = [1.0, 2.0, 5.0, 1.0, 2.0]
        truths = [1.0, 2.0, 5.0, 3.0, 3.0]
        result = per_group_spearman(group_ids, preds, truths)
        assert result.group_ids == ["a"]
        assert result.skipped == 2

    def test_matches_brute_force_on_corpus(self):
        rng = random.Random(50)
        group_ids, preds, truths = [], [], []
        expected = {}
        for g in range(50):
            n = rng.randint(3, 9)
            t = [rng.random() for _ in range(n)]
            p = [x + rng.gauss(0, 0.5) for x in t]
            expected[f"g{g}"] = brute_spearman(p, t)
            group_ids += [f"g{g}"] * n
            preds += p
            truths += t
        result = per_group_spearman(group_ids, preds, truths)
        assert result.group_ids == [f"g{g}" for g in range(50)]
        for gid, rho in zip(result.group_ids, result.rhos):
            assert rho == pytest.approx(expected[gid], abs=1e-12)

    def test_median_and_threshold(self):
        result = per_group_spearman(
            ["a", "a", "b", "b", "c", "c"],
            [1.0, 2.0, 2.0, 1.0, 1.0, 2.0],
            [1.0, 2.0, 1.0, 2.0, 1.0, 2.0],
        )
        assert result.rhos == pytest.approx([1.0, -1.0, 1.0], abs=1e-12)
        assert result.median() == pytest.approx(1.0, abs=1e-12)
        assert result.fraction_above(0.54) == pytest.approx(2 / 3)


class TestToppContainment:
    def test_perfect_predictor(self):
        groups = [
            (list(range(8)), list(range(8))),
            ([3.0, 1.0, 2.0], [30.0, 10.0, 20.0]),
        ]
        curve, _ = topp_containment(groups, [0.05, 0.25, 0.5, 1.0])
        assert curve == [1.0, 1.0, 1.0, 1.0]

    def test_p_one_always_contained(self):
        rng = random.Random(2)
        groups = [
            ([rng.random() for _ in range(6)], [rng.random() for _ in range(6)])
            for _ in range(40)
        ]
        curve, baseline = topp_containment(groups, [1.0])
        assert curve == [1.0]
        assert baseline == [1.0]

    def test_baseline_analytic_value(self):
        # Single group of 10: ceil(0.25 * 10) / 10 = 3/10.
        groups = [(list(range(10)), list(range(10)))]
        _, baseline = topp_containment(groups, [0.25])
        assert baseline == [pytest.approx(0.3)]

    def test_random_predictor_near_baseline(self):
        rng = random.Random(77)
        groups = []
        for _ in range(1000):
            n = rng.randint(5, 20)
            groups.append(
                (
                    [rng.random() for _ in range(n)],
                    [rng.random() for _ in range(n)],
                )
            )
        ps = [0.1, 0.25, 0.5]
        curve, baseline = topp_containment(groups, ps)
        for c, b in zip(curve, baseline):
            assert abs(c - b) <= 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            topp_containment([([1.0], [1.0])], [0.5])
        with pytest.raises(ValueError):
            topp_containment([([1.0, 2.0], [1.0, 2.0])], [0.0])


class TestCV:
    def test_frozen_values(self):
        assert coefficient_of_variation([1.0, 1.0, 1.0]) == 0.0
        assert coefficient_of_variation([1.0, 3.0]) == pytest.approx(0.5)

    def test_zero_mean_nan(self):
        assert math.isnan(coefficient_of_variation([-1.0, 1.0]))

    def test_scale_invariance(self):
        values = [2.0, 3.0, 7.0, 4.0]
        base = coefficient_of_variation(values)
        for k in (0.5, 3.0, 100.0):
            assert coefficient_of_variation(
                [k * v for v in values]
            ) == pytest.approx(base, rel=1e-12)


class TestPareto:
    def test_singleton(self):
        assert pareto_front([(1.0, 1.0)], ["max", "min"]) == {0}

    def test_worked_example(self):
        points = [(0.9, 5.0), (0.8, 3.0), (0.7, 4.0)]
        assert pareto_front(points, ["max", "min"]) == {0, 1}

    def test_idempotent(self):
        rng = random.Random(5)
        points = [(rng.random(), rng.random()) for _ in range(50)]
        front = pareto_front(points, ["max", "max"])
        sub = [points[i] for i in sorted(front)]
        again = pareto_front(sub, ["max", "max"])
        assert again == set(range(len(sub)))

    def test_duplicates_retained(self):
        points = [(1.0, 2.0), (1.0, 2.0), (0.0, 0.0)]
        assert pareto_front(points, ["max", "max"]) == {0, 1}

    def test_domination_properties(self):
        rng = random.Random(8)
        signs = [1.0, -1.0, 1.0]

        def dominates(a, b):
            oa = [s * x for s, x in zip(signs, a)]
            ob = [s * x for s, x in zip(signs, b)]
            return all(x >= y for x, y in zip(oa, ob)) and any(
                x > y for x, y in zip(oa, ob)
            )

        for _ in range(20):
            points = [
                (rng.randint(0, 5), rng.randint(0, 5), rng.randint(0, 5))
                for _ in range(30)
            ]
            front = pareto_front(points, ["max", "min", "max"])
            for i in front:
                assert not any(dominates(points[j], points[i]) for j in range(30))
            for i in set(range(30)) - front:
                assert any(dominates(points[j], points[i]) for j in front)

    def test_validation(self):
        with pytest.raises(ValueError):
            pareto_front([(1.0, 2.0)], ["max", "down"])
        with pytest.raises(ValueError):
            pareto_front([(1.0, 2.0), (1.0,)], ["max", "min"])


class TestEvalReport:
    def test_text_report_deterministic(self):
        report = EvalReport()
        report.add_task("steps", [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        report.add_task("alloc", [1.0, 2.0, 3.0], [3.0, 1.0, 2.0])
        report.group_rhos = per_group_spearman(
            ["a", "a", "b", "b"], [1.0, 2.0, 1.0, 2.0], [1.0, 2.0, 2.0, 1.0]
        )
        text = report.to_text()
        assert text == report.to_text()
        assert "task alloc" in text and "task steps" in text
        assert "spearman=1.0000" in text
        assert "spearman=-0.5000" in text
        assert "frac_above_0.54=0.5000" in text

    def test_containment_csv(self):
        report = EvalReport()
        groups = [(list(range(4)), list(range(4)))]
        curve, base = topp_containment(groups, [0.5, 1.0])
        report.containment = ([0.5, 1.0], curve, base)
        csv = report.containment_csv()
        assert csv.splitlines()[0] == "p,containment,baseline"
        assert len(csv.splitlines()) == 3
