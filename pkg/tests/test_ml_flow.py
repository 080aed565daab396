from types import SimpleNamespace

import pytest

from quasitrace import ml_flow
from quasitrace.ml_flow import TIMED_SPANS, format_timings, log_suite, span_timings


def span(name, start_s, end_s):
    return SimpleNamespace(name=name, start_time_ns=int(start_s * 1e9), end_time_ns=int(end_s * 1e9))


def trace(*spans):
    return SimpleNamespace(data=SimpleNamespace(spans=list(spans)))


def test_span_timings_groups_by_function():
    traces = [
        trace(span("verify_suite", 0, 10), span("trace_sample", 1, 4), span("trace_sample", 4, 6),
              span("fit_expansion", 6, 6.5), span("mode_sum", 1, 2)),
        trace(span("verify_suite", 20, 25), span("trace_sample", 20, 24)),
    ]
    timings = span_timings(traces)
    assert set(timings) == set(TIMED_SPANS)
    assert timings["trace_sample"] == {"calls": 3, "seconds": pytest.approx(9.0)}
    assert timings["fit_expansion"]["seconds"] == pytest.approx(0.5)
    assert timings["verify_suite"] == {"calls": 2, "seconds": pytest.approx(15.0)}


def test_span_timings_without_traces():
    assert all(entry == {"calls": 0, "seconds": 0.0} for entry in span_timings(None).values())


def test_format_timings_table():
    spans = span("verify_suite", 0, 8), span("trace_sample", 0, 4), span("fit_expansion", 4, 6)
    timings = span_timings([trace(*spans)])
    text = format_timings(timings, 10.0)
    assert "QUASITRACE TIMINGS" in text
    assert "mode sums" in text and "expansion fits" in text
    assert "outside suites" in text and "2.00s" in text
    assert "75.0% of suite time" in text


def test_log_suite_reads_the_result_dict(monkeypatch):
    logged = {}
    monkeypatch.setattr(ml_flow.mlflow, "log_metric", lambda key, value: logged.__setitem__(key, value))
    log_suite({
        "name": "parity",
        "rows": [
            {"status": "pass", "margin": 1e-9},
            {"status": "pass", "margin": [3e-4, 4e-4]},
            {"status": "inconclusive", "margin": None},
        ],
    })
    assert logged["parity.pass"] == 2
    assert logged["parity.inconclusive"] == 1
    assert logged["parity.max_margin"] == pytest.approx(5e-4)
