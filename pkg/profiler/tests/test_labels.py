"""Record emission and the cross-package loading contract.

The emitted files must load through the downstream dataset reader
(installed separately as rlmkit) with zero malformed records; that
reader is used here purely as a consumer of the file format.
"""

import json

import pytest

from profiler_harness import ProfileJob, ProfileResult, WallStats, emit_labels


def ok_result(peak=1234, latency_ms=None):
    return ProfileResult(
        peak_alloc_bytes=peak,
        peak_rss_bytes=5000,
        wall=WallStats.from_samples([0.01, 0.02, 0.03]),
        warmup_runs=3,
        timed_runs=11,
        instrumented_runs=1,
        latency_ms_median=latency_ms,
        latency_ms_stddev=0.0 if latency_ms is not None else None,
    )


def job(source="def main():\n    pass\n"):
    return ProfileJob(source=source)


class TestEmission:
    def test_three_successes_one_failure(self, tmp_path):
        results = [
            (job("a = 1\n"), ok_result(100)),
            (job("b = 2\n"), ok_result(200)),
            (job("c = 3\n"), ProfileResult(failure="timeout")),
            (job("d = 4\n"), ok_result(300)),
        ]
        out = tmp_path / "labels.jsonl"
        written, skipped = emit_labels(results, "mem_task", out)
        assert (written, skipped) == (3, 1)
        lines = out.read_text().splitlines()
        assert len(lines) == 3
        values = [json.loads(l)["metrics"][0]["value"] for l in lines]
        assert values == [100.0, 200.0, 300.0]

    def test_task_id_propagated_verbatim(self, tmp_path):
        weird = "mem/alloc v1 (десять)"
        out = tmp_path / "labels.jsonl"
        emit_labels([(job(), ok_result())], weird, out)
        rec = json.loads(out.read_text())
        assert rec["task_id"] == weird

    def test_statement_prefix(self, tmp_path):
        out = tmp_path / "labels.jsonl"
        emit_labels(
            [(job("x = 1\n"), ok_result())],
            "t",
            out,
            statement="minimize peak memory",
        )
        rec = json.loads(out.read_text())
        assert rec["input_text"] == "minimize peak memory\n---\nx = 1\n"

    def test_latency_metric_name_and_value(self, tmp_path):
        out = tmp_path / "labels.jsonl"
        emit_labels(
            [(job(), ok_result(latency_ms=2.5))],
            "lat_task",
            out,
            metric="latency_ms",
        )
        rec = json.loads(out.read_text())
        assert rec["metrics"] == [{"name": "latency_ms", "value": 2.5}]

    def test_empty_results_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_labels([], "t", tmp_path / "x.jsonl")

    def test_unknown_metric_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_labels(
                [(job(), ok_result())], "t", tmp_path / "x.jsonl", metric="rss"
            )


class TestCrossPackageLoading:
    def test_emitted_file_loads_downstream_with_zero_malformed(self, tmp_path):
        rlmkit_data = pytest.importorskip("rlmkit.data")
        results = [
            (job(f"xs = list(range({n}))\n"), ok_result(peak=n))
            for n in (10, 20, 30)
        ] + [(job("boom\n"), ProfileResult(failure="crash: NameError"))]
        out = tmp_path / "labels.jsonl"
        written, skipped = emit_labels(results, "alloc", out)
        assert (written, skipped) == (3, 1)
        loaded = list(rlmkit_data.load_examples(out, on_error="abort"))
        assert len(loaded) == 3
        assert [ex.metric_values[0] for ex in loaded] == [10.0, 20.0, 30.0]
        assert all(ex.task_id == "alloc" for ex in loaded)
        assert loaded[0].input_text == "xs = list(range(10))\n"
