"""Executed in a fresh interpreter for every measured run.

argv: solution_path payload_json_path report_json_path phase mode
phase: warmup | timed | instrumented.  Runs the solution once, sends a
JSON report to the given path, and discards whatever the solution
prints.  Must stay importable under `-S -B -s`: standard library only.
"""

import io
import json
import os
import resource
import sys
import time
import tracemalloc


def _pick_entry(namespace, name):
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
        if callable(v) and not k.startswith("_") and getattr(v, "__module__", "") == "profiled_solution"
    ]
    if len(functions) != 1:
        raise TypeError(f"cannot pick an entry point among {len(functions)} callables")
    return functions[0]


def main():
    src_path, payload_path, report_path, phase, mode = sys.argv[1:6]
    with open(payload_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    with open(src_path, "r", encoding="utf-8") as fh:
        text = fh.read()

    real_stdout = sys.stdout
    sink = open(os.devnull, "w")
    sys.stdout = sys.stderr = sink
    report = {}
    try:
        code = compile(text, src_path, "exec")
        if mode == "callable":
            namespace = {"__name__": "profiled_solution"}
            exec(code, namespace)
            fn = _pick_entry(namespace, payload.get("entry"))
            args = payload.get("args", [])

            def run_once():
                fn(*args)

        else:

            def run_once():
                sys.stdin = io.StringIO(payload.get("stdin", ""))
                exec(code, {"__name__": "__main__"})

        peak = None
        if phase == "instrumented":
            tracemalloc.start()
            tracemalloc.reset_peak()  # credit the peak window to the solution
        t0 = time.perf_counter()
        try:
            run_once()
        except SystemExit as exc:
            if exc.code not in (None, 0):
                raise RuntimeError(f"exit status {exc.code}") from exc
        wall = time.perf_counter() - t0
        if phase == "instrumented":
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
        rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
        report = {"ok": True, "wall": wall, "peak": peak, "rss": rss}
    except BaseException as exc:
        report = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
    finally:
        sys.stdout = real_stdout
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh)


if __name__ == "__main__":
    main()
