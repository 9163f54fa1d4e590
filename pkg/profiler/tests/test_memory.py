"""Behavior of real child-process memory measurements.

Byte values are machine dependent, so assertions are orderings and
tags, never absolute constants.
"""

import time

from profiler_harness import ProfileJob, profile_memory, run_jobs


def quick(source, mode="stdin", **kw):
    kw.setdefault("warmup", 0)
    kw.setdefault("repeats", 1)
    return ProfileJob(source=source, mode=mode, **kw)


class TestMemoryRuns:
    def test_empty_program_completes_with_small_positive_peak(self):
        result = profile_memory(quick(""))
        assert result.ok
        assert 0 < result.peak_alloc_bytes < 1_000_000
        assert result.peak_rss_bytes > 0
        assert result.wall is not None and result.wall.min >= 0

    def test_ten_times_allocation_reports_at_least_five_times_peak(self):
        small = profile_memory(quick("xs = list(range(100_000))\n"))
        big = profile_memory(quick("xs = list(range(1_000_000))\n"))
        assert small.ok and big.ok
        assert big.peak_alloc_bytes >= 5 * small.peak_alloc_bytes

    def test_callable_mode_scales_with_argument(self):
        src = "def main(n):\n    xs = list(range(n))\n"
        small = profile_memory(
            ProfileJob(source=src, payloads=([50_000],), warmup=0, repeats=1)
        )
        big = profile_memory(
            ProfileJob(source=src, payloads=([500_000],), warmup=0, repeats=1)
        )
        assert small.ok and big.ok
        assert big.peak_alloc_bytes >= 5 * small.peak_alloc_bytes

    def test_stdin_payload_reaches_program(self):
        src = "n = int(input())\nxs = list(range(n))\n"
        small = profile_memory(quick(src, payloads=("100000",)))
        big = profile_memory(quick(src, payloads=("1000000",)))
        assert small.ok and big.ok
        assert big.peak_alloc_bytes >= 5 * small.peak_alloc_bytes


class TestFailureTags:
    def test_exception_tagged_crash(self):
        result = profile_memory(quick("raise ValueError('boom')\n"))
        assert result.failure is not None
        assert result.failure.startswith("crash")

    def test_nonzero_exit_tagged(self):
        result = profile_memory(quick("import sys\nsys.exit(3)\n"))
        assert result.failure is not None
        assert "3" in result.failure

    def test_clean_sys_exit_zero_is_success(self):
        result = profile_memory(quick("import sys\nsys.exit(0)\n"))
        assert result.ok

    def test_infinite_loop_times_out(self):
        t0 = time.perf_counter()
        result = profile_memory(
            quick("while True:\n    pass\n", timeout_seconds=1.0)
        )
        elapsed = time.perf_counter() - t0
        assert result.failure == "timeout"
        assert elapsed < 10.0

    def test_failing_job_does_not_block_batch(self):
        jobs = [
            quick("raise RuntimeError('no')\n"),
            quick("x = 1\n"),
        ]
        results = run_jobs(jobs)
        assert not results[0][1].ok
        assert results[1][1].ok


class TestHermeticity:
    def test_hash_seed_fixed_across_runs(self, tmp_path):
        out = tmp_path / "hashes.txt"
        src = (
            f"with open({str(out)!r}, 'a') as fh:\n"
            "    fh.write(str(hash('abc')) + '\\n')\n"
        )
        result = profile_memory(quick(src, repeats=3))
        assert result.ok
        values = set(out.read_text().split())
        assert len(values) == 1  # PYTHONHASHSEED pinned in every child

    def test_stdout_discarded(self, capfd):
        result = profile_memory(quick("print('x' * 10000)\n"))
        assert result.ok
        out, err = capfd.readouterr()
        assert "xxx" not in out and "xxx" not in err
