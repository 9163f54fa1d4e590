"""Adaptive-window latency measurement."""

from profiler_harness import ProfileJob, profile_latency, run_latency_jobs


class TestAdaptiveWindow:
    def test_sleep_one_ms_lands_near_one_ms(self):
        job = ProfileJob(
            source="import time\n\ndef main():\n    time.sleep(0.001)\n",
            warmup=2,
        )
        result = profile_latency(job, trials=3, min_window_seconds=0.2)
        assert result.ok
        assert 0.8 <= result.latency_ms_median <= 2.0

    def test_constant_body_is_stable(self):
        job = ProfileJob(
            source="import time\n\ndef main():\n    time.sleep(0.001)\n",
            warmup=2,
        )
        result = profile_latency(job, trials=5, min_window_seconds=0.2)
        assert result.ok
        assert result.latency_ms_stddev / result.latency_ms_median < 0.2

    def test_iterations_seed_at_twenty(self):
        import time as _time

        # 3 ms body, 10 ms window: the seeded 20-iteration window already
        # spans it, so one trial runs 20 calls (plus the ordering check)
        job = ProfileJob(
            source="import time\n\ndef main():\n    time.sleep(0.003)\n",
            warmup=0,
        )
        t0 = _time.perf_counter()
        result = profile_latency(job, trials=1, min_window_seconds=0.01)
        elapsed = _time.perf_counter() - t0
        assert result.ok
        assert 1.0 <= result.latency_ms_median <= 8.0
        # 21 calls at ~3 ms; a 40-call doubling would need > 0.12 s
        assert elapsed < 0.12

    def test_window_doubles_until_span_reached(self):
        # ~0.15 ms body: reaching a 20 ms window takes several doublings,
        # and the per-call figure must stay near the body duration
        job = ProfileJob(
            source="import time\n\ndef main():\n    time.sleep(0.00015)\n",
            warmup=0,
        )
        result = profile_latency(job, trials=1, min_window_seconds=0.02)
        assert result.ok
        assert 0.05 <= result.latency_ms_median <= 1.0

    def test_median_and_stddev_over_trials(self):
        job = ProfileJob(source="def main():\n    sum(range(200))\n")
        result = profile_latency(job, trials=5, min_window_seconds=0.01)
        assert result.ok
        assert result.timed_runs == 5
        assert result.wall is not None
        assert result.wall.min <= result.wall.median <= result.wall.max
        assert result.latency_ms_stddev >= 0


class TestArgumentOrderings:
    def test_wrong_order_payload_is_permuted_into_place(self):
        src = "def main(xs, n):\n    return xs[0] + n\n"
        job = ProfileJob(source=src, payloads=((5, [1, 2, 3]),))
        result = profile_latency(job, trials=1, min_window_seconds=0.005)
        assert result.ok

    def test_no_valid_ordering_is_shape_mismatch(self):
        src = "def main(a, b, c):\n    return a + b + c\n"
        job = ProfileJob(source=src, payloads=((1, 2),))
        result = profile_latency(job, trials=1, min_window_seconds=0.005)
        assert result.failure == "shape mismatch"

    def test_batch_continues_after_shape_mismatch(self):
        bad = ProfileJob(
            source="def main(a, b):\n    return a\n", payloads=((1,),)
        )
        good = ProfileJob(source="def main():\n    pass\n")
        results = run_latency_jobs(
            [bad, good], trials=1, min_window_seconds=0.005
        )
        assert results[0][1].failure == "shape mismatch"
        assert results[1][1].ok


class TestFailureTags:
    def test_memory_error_is_oom(self):
        src = "def main():\n    raise MemoryError()\n"
        job = ProfileJob(source=src)
        result = profile_latency(job, trials=1, min_window_seconds=0.005)
        assert result.failure == "oom"


class TestStdinPrograms:
    def test_stdin_program_latency(self):
        src = "n = int(input())\nsum(range(n))\n"
        job = ProfileJob(source=src, mode="stdin", payloads=("50",), warmup=1)
        result = profile_latency(job, trials=2, min_window_seconds=0.01)
        assert result.ok
        assert result.latency_ms_median > 0
