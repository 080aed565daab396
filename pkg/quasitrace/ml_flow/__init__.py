"""
MLflow run tracking for verification batteries.
"""
import os
import time
from contextlib import contextmanager

import mlflow

ENV_TRACKING_URI = "MLFLOW_TRACKING_URI"
EXPERIMENT_NAME = "Quasitrace_Verification"

# mlflow names a span after the traced function
TIMED_SPANS = {"trace_sample": "mode sums", "fit_expansion": "expansion fits", "verify_suite": "suites"}


@contextmanager
def tracking(enabled: bool, run_name: str | None = None, params: dict | None = None):
    """
    Opens an mlflow run when enabled and yields it; otherwise tracing is switched off so the
    @mlflow.trace decorators stay silent, and None is yielded.
    """
    if not enabled:
        mlflow.tracing.disable()
        yield None
        return
    mlflow.tracing.enable()
    uri = os.getenv(ENV_TRACKING_URI)
    if uri:
        mlflow.set_tracking_uri(uri)
    mlflow.set_experiment(EXPERIMENT_NAME)
    start = time.time()
    with mlflow.start_run(run_name=run_name) as run:
        if params:
            log_params(params)
        yield run
        duration = time.time() - start
        mlflow.log_metric("duration_seconds", duration)
        report_timings(run.info.run_id, duration)


def _flatten(data: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def log_params(params: dict):
    # mlflow caps parameter values at 500 characters
    for key, value in _flatten(params).items():
        mlflow.log_param(key, str(value)[:500])


def log_suite(suite: dict):
    """Per-suite metrics from a verify result: row counts by status and the worst margin."""
    counts = {}
    for row in suite["rows"]:
        counts[row["status"]] = counts.get(row["status"], 0) + 1
    for status, count in counts.items():
        mlflow.log_metric(f"{suite['name']}.{status}", count)
    margins = [abs(complex(*row["margin"])) if isinstance(row["margin"], list) else abs(row["margin"])
               for row in suite["rows"] if row["margin"] is not None]
    if margins:
        mlflow.log_metric(f"{suite['name']}.max_margin", max(margins))


def span_timings(traces) -> dict:
    """Calls and seconds per traced quasitrace function; nested spans count toward both."""
    timings = {name: {"calls": 0, "seconds": 0.0} for name in TIMED_SPANS}
    for trace in traces or []:
        for span in trace.data.spans:
            if span.name in timings:
                timings[span.name]["calls"] += 1
                timings[span.name]["seconds"] += (span.end_time_ns - span.start_time_ns) / 1e9
    return timings


def format_timings(timings: dict, total_seconds: float) -> str:
    lines = ["=" * 70, "QUASITRACE TIMINGS", "=" * 70]
    for name, label in TIMED_SPANS.items():
        entry = timings[name]
        share = 100 * entry["seconds"] / total_seconds if total_seconds > 0 else 0.0
        per_call = entry["seconds"] / entry["calls"] if entry["calls"] else 0.0
        lines.append(f"{label:<16} {entry['calls']:>6} calls {entry['seconds']:>10.2f}s "
                     f"{per_call:>9.3f}s/call {share:>6.1f}%")
    suites = timings["verify_suite"]["seconds"]
    numeric = timings["trace_sample"]["seconds"] + timings["fit_expansion"]["seconds"]
    lines.append(f"{'outside suites':<16} {'':>12} {max(total_seconds - suites, 0.0):>10.2f}s")
    if suites > 0:
        lines.append(f"mode sums and fits take {100 * min(numeric / suites, 1.0):.1f}% of suite time")
    lines.append("=" * 70)
    return "\n".join(lines)


def report_timings(run_id, total_time):
    """Logs per-function timings of the run's traces as metrics and prints the table."""
    client = mlflow.MlflowClient()
    run = client.get_run(run_id)
    traces = client.search_traces(locations=[run.info.experiment_id],
                                  filter_string=f"attributes.run_id = '{run_id}'")
    timings = span_timings(traces)
    for name, entry in timings.items():
        mlflow.log_metric(f"seconds.{name}", entry["seconds"])
        mlflow.log_metric(f"calls.{name}", entry["calls"])
    print("\n" + format_timings(timings, total_time) + "\n")
