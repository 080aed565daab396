"""
Command-line front end: builds the experiment config, runs computations and verification suites,
and writes report.json, summary.txt and CSV tables into the output directory.
"""
import argparse
import csv
import io
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import mpmath
import numpy
import sympy
import yaml
from dotenv import load_dotenv

import quasitrace
from quasitrace import log
from quasitrace.boundary import ClassicalSymbol, finite_part
from quasitrace.config import ExperimentConfig, TaskConfig, apply_env, load_config
from quasitrace.cylinder import Composition, CompositionKind, ElementKind, trace_sample
from quasitrace.expansion import ExpansionModel, Sample, fit_expansion, geometric_grid
from quasitrace.laguerre import compose_laguerre_kappa, compose_kappa_pair, compose_laguerre_pair
from quasitrace.ml_flow import log_suite, tracking
from quasitrace.resolvent import alpha_N, resolvent_symbol
from quasitrace.verify import SUITES, determinism_hash, verify_suite

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2
EXIT_CONFIG = 3

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.txt"
CLAIMS_FILE = "claims.csv"

MARKERS = {
    "pass": "[OK]",
    "ok": "[OK]",
    "fail": "[FAIL]",
    "inconclusive": "[INCONCLUSIVE]",
    "error": "[ERROR]",
}

COMMANDS = ("finite-part", "alpha", "compose", "expand", "fit")


def create_arg_parser():
    parser = argparse.ArgumentParser(prog="quasitrace",
                                     description="Resolvent trace expansions and canonical trace checks")
    parser.add_argument("--config", "-c", type=str, help="Path to a YAML/JSON experiment config or a preset name")
    parser.add_argument("--out", "-o", type=str, help="Output directory for reports")
    parser.add_argument("--precision", "-p", type=int, help="Working precision in decimal digits")
    parser.add_argument("--threads", "-t", type=int, help="Worker processes for verification suites")
    parser.add_argument("--seed", "-s", type=int, help="Seed for random test points")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose mode")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        command = commands.add_parser(name, help=f"run the {name} computation")
        command.add_argument("--params", type=str, help="task parameters as a JSON object")
    verify = commands.add_parser("verify", help="run one verification suite")
    verify.add_argument("suite", choices=sorted(SUITES), help="suite name")
    verify.add_argument("--params", type=str, help="suite parameters as a JSON object")
    commands.add_parser("report", help="print the summary of the report in the output directory")
    commands.add_parser("run", help="run every task of the config")
    return parser


def parse_args(args=sys.argv[1:]):
    parser = create_arg_parser()
    return parser.parse_args(args)


def _finite_part(config: ExperimentConfig, params: dict) -> dict:
    if "symbol" not in params:
        raise ValueError("finite-part needs a 'symbol' parameter")
    symbol = ClassicalSymbol.from_dict(params["symbol"])
    result = finite_part(symbol, params.get("dimension"))
    return {"symbol": params["symbol"], **result.to_dict()}


def _alpha(config: ExperimentConfig, params: dict) -> dict:
    N = int(params.get("N", 1))
    k = params.get("k", 0)
    alpha = alpha_N(config.model.elliptic_model(), N)
    rows = []
    for mu in params.get("mu", [10, 100, 1000]):
        mu = mpmath.mpf(mu)
        value = alpha.at(config.model.binding(k, mu))
        rows.append({"mu": float(mu), "value": float(mpmath.re(value)), "scaled": float(mpmath.re(mu ** (2 * N) * value))})
    return {"N": N, "k": k, "expr": str(alpha.expr), "values": rows}


def _compose(config: ExperimentConfig, params: dict) -> dict:
    integral = str(params.get("integral", "laguerre_kappa")).lower()
    if integral == "laguerre_kappa":
        result = compose_laguerre_kappa(int(params["m"]), int(params["j"]), params.get("sign", "+"))
    elif integral == "kappa_pair":
        result = compose_kappa_pair(int(params["m"]), int(params["j"]), int(params["jp"]))
    elif integral == "laguerre_pair":
        result = compose_laguerre_pair(int(params["l"]), int(params["m"]), int(params["j"]), params.get("sign", "+"))
    else:
        raise ValueError(f"unknown composition '{integral}', expected laguerre_kappa, kappa_pair or laguerre_pair")
    return {"integral": integral, **result.to_dict()}


def _expand(config: ExperimentConfig, params: dict) -> dict:
    N = int(params.get("N", 1))
    symbol = resolvent_symbol(config.model.elliptic_model(), N, int(params.get("J_max", 4)),
                              params.get("route", "homogeneous"))
    return {"N": N, "route": symbol.route,
            "terms": [{"J": t.J, "power": t.power, "numerator": str(t.numerator)} for t in symbol.terms]}


def read_samples(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"samples file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [Sample(mpmath.mpf(row["mu"]), mpmath.mpc(row["value_re"], row.get("value_im") or 0),
                       mpmath.mpf(row.get("tail_bound") or 0)) for row in reader]


def _fit(config: ExperimentConfig, params: dict) -> dict:
    n = int(params.get("n", 1))
    N = int(params.get("N", config.numeric.N or 1))
    if "samples" in params:
        samples = read_samples(params["samples"])
        order = params["order"]
    else:
        first = config.operator(params["operator"])
        second = config.operator(params["second"]) if "second" in params else None
        kind = CompositionKind(params.get("kind", "single"))
        part = ElementKind(params.get("part", ElementKind.R.value))
        order = first.order + (second.order if second is not None else 0)
        grid = geometric_grid(config.numeric.mu_low, config.numeric.mu_high, config.numeric.mu_points)
        samples = trace_sample(config.model, Composition(kind, first, second, part), grid, N,
                               config.numeric.fourier_K, config.numeric.tail_tolerance)
    model = ExpansionModel.spanning(order, n, N, config.numeric.depth)
    report = fit_expansion(samples, model, config.numeric.tolerance)
    result = report.to_dict()
    result["status"] = "ok" if report.resolved else "inconclusive"
    result["_csv"] = {"fit": report.to_csv()}
    if hasattr(samples, "to_csv"):
        result["_csv"]["samples"] = samples.to_csv()
    return result


COMPUTATIONS = {
    "finite-part": _finite_part,
    "alpha": _alpha,
    "compose": _compose,
    "expand": _expand,
    "fit": _fit,
}


def _run_task(task: TaskConfig, config: ExperimentConfig) -> dict:
    """One task, computed at the configured precision; errors become an error record."""
    if task.kind == "verify":
        report = verify_suite(task.name, config, task.params)
        result = report.to_dict()
        result["kind"] = "verify"
        result["_csv"] = {f"samples {key}": samples.to_csv() for key, samples in sorted(report.samples.items())}
        result["_csv"].update({f"fit {key}": fit.to_csv() for key, fit in sorted(report.fits.items())})
        return result
    if task.name not in COMPUTATIONS:
        return {"kind": task.kind, "name": task.name, "status": "error", "error": f"unknown computation '{task.name}'"}
    log(f"[COMPUTE] {task.name}")
    with mpmath.workdps(config.numeric.precision):
        try:
            result = COMPUTATIONS[task.name](config, task.params)
        except (ValueError, RuntimeError, ArithmeticError, KeyError, FileNotFoundError) as e:
            return {"kind": task.kind, "name": task.name, "status": "error", "error": f"{type(e).__name__}: {e}"}
    return {"kind": task.kind, "name": task.name, "status": result.pop("status", "ok"), **result}


def _execute(config: ExperimentConfig) -> list:
    tasks = list(config.tasks)
    if config.numeric.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.numeric.threads) as pool:
            return list(pool.map(_run_task, tasks, [config] * len(tasks)))
    return [_run_task(task, config) for task in tasks]


def versions() -> dict:
    return {
        "quasitrace": quasitrace.__version__,
        "python": sys.version.split()[0],
        "sympy": sympy.__version__,
        "mpmath": mpmath.__version__,
        "numpy": numpy.__version__,
    }


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text).strip("_")


def overall_status(results: list) -> str:
    statuses = {r["status"] for r in results}
    if statuses & {"fail", "error"}:
        return "fail"
    if "inconclusive" in statuses:
        return "inconclusive"
    return "pass"


def exit_code(results: list) -> int:
    return {"pass": EXIT_OK, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[overall_status(results)]


def generate_summary_text(report: dict) -> str:
    """One row per claim: anchor, predicted, fitted, margin and a status marker."""
    lines = []
    lines.append("QUASITRACE VERIFICATION SUMMARY")
    lines.append("=" * 70)
    lines.append("")
    lines.append(f"Status: {report['status'].upper()}")
    lines.append(f"Precision: {report['config']['numeric']['precision']} digits")
    lines.append(f"Seed: {report['config']['numeric']['seed']}")
    lines.append(f"Hash: {report['hash']}")
    lines.append("")
    lines.append("=" * 70)
    lines.append("")

    for task in report["tasks"]:
        marker = MARKERS.get(task["status"], "[?]")
        lines.append(f"{marker} {task['kind']} {task['name']}")
        lines.append("-" * 70)
        if task.get("error"):
            lines.append(f"  {task['error']}")
        for row in task.get("rows", []):
            lines.append(f"  {MARKERS.get(row['status'], '[?]')} {row['claim']}")
            lines.append(f"       anchor:    {row['anchor']}")
            lines.append(f"       predicted: {_fmt(row['predicted'])}")
            lines.append(f"       fitted:    {_fmt(row['fitted'])}")
            lines.append(f"       margin:    {_fmt(row['margin'])} (tolerance {row['tolerance']:g})")
        if task["kind"] == "compute" and "value" in task:
            lines.append(f"  value: {_fmt(task['value'])}")
        lines.append("")
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, list):
        return f"{value[0]:.12g}{value[1]:+.12g}i"
    return f"{value:.12g}"


def _claims_csv(tasks: list) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["suite", "claim", "anchor", "predicted", "fitted", "margin", "tolerance", "status"])
    for task in tasks:
        for row in task.get("rows", []):
            writer.writerow([row["suite"], row["claim"], row["anchor"], _fmt(row["predicted"]), _fmt(row["fitted"]),
                             _fmt(row["margin"]), row["tolerance"], row["status"]])
    return out.getvalue()


def save_report(config: ExperimentConfig, results: list) -> dict:
    """Writes report.json (with its determinism hash), summary.txt and the CSV tables."""
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    tables = {}
    tasks = []
    for index, result in enumerate(results):
        result = dict(result)
        for key, text in sorted(result.pop("_csv", {}).items()):
            tables[f"{index:02d}_{_slug(result['name'])}_{_slug(key)}.csv"] = text
        tasks.append(result)
    payload = {
        "versions": versions(),
        "config": config.resolved(),
        "status": overall_status(results),
        "tasks": tasks,
    }
    report = {**payload, "hash": determinism_hash(payload)}
    saved = {}
    if "json" in config.output.formats:
        path = out / REPORT_FILE
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, ensure_ascii=False)
        saved["report"] = str(path)
    path = out / SUMMARY_FILE
    with open(path, "w", encoding="utf-8") as f:
        f.write(generate_summary_text(report))
    saved["summary"] = str(path)
    if "csv" in config.output.formats:
        tables[CLAIMS_FILE] = _claims_csv(tasks)
        for name, text in sorted(tables.items()):
            with open(out / name, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            saved[name] = str(out / name)
    log(f"[REPORT] wrote {len(saved)} files to {out}")
    return report


def run(config: ExperimentConfig) -> int:
    """Runs every task, writes the report and returns the exit code."""
    if not config.tasks:
        print("config has no tasks", file=sys.stderr)
        return EXIT_CONFIG
    params = {"config": config.resolved(), "versions": versions()}
    with tracking(config.output.mlflow, run_name="quasitrace", params=params) as active:
        results = _execute(config)
        if active is not None:
            for result in results:
                if result["kind"] == "verify" and "rows" in result:
                    log_suite(result)
    report = save_report(config, results)
    for task in report["tasks"]:
        print(f"{MARKERS.get(task['status'], '[?]')} {task['kind']} {task['name']}")
    return exit_code(results)


def report_command(config: ExperimentConfig) -> int:
    path = Path(config.output.directory) / REPORT_FILE
    if not path.exists():
        raise FileNotFoundError(f"no report at {path}")
    with open(path, "r", encoding="utf-8") as f:
        report = json.load(f)
    print(generate_summary_text(report), end="")
    return exit_code(report["tasks"])


def _print_result(result: dict):
    if "value" in result:
        print(_fmt(result["value"]))
        return
    shown = {k: v for k, v in result.items() if not k.startswith("_")}
    print(yaml.safe_dump(shown, sort_keys=False, allow_unicode=True), end="")


def configure(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    config = apply_env(config)
    numeric = {}
    if args.precision is not None:
        numeric["precision"] = args.precision
    if args.threads is not None:
        numeric["threads"] = args.threads
    if args.seed is not None:
        numeric["seed"] = args.seed
    update = {}
    if numeric:
        update["numeric"] = config.numeric.model_copy(update=numeric)
    if args.out:
        update["output"] = config.output.model_copy(update={"directory": args.out})
    if update:
        config = ExperimentConfig.model_validate({**config.model_dump(), **{k: v.model_dump() for k, v in update.items()}})
    return config


def _params(args, config: ExperimentConfig, name: str) -> dict:
    if getattr(args, "params", None):
        try:
            params = json.loads(args.params)
        except json.JSONDecodeError as e:
            raise ValueError(f"--params is not valid JSON: {e}") from e
        if not isinstance(params, dict):
            raise ValueError("--params must be a JSON object")
        return params
    for task in config.tasks:
        if task.name == name:
            return dict(task.params)
    return {}


def main(argv=None) -> int:
    load_dotenv()
    args = parse_args(sys.argv[1:] if argv is None else argv)
    quasitrace.VERBOSE = args.verbose
    try:
        config = configure(args)
        if args.command == "run":
            return run(config)
        if args.command == "report":
            return report_command(config)
        if args.command == "verify":
            task = TaskConfig(kind="verify", name=args.suite, params=_params(args, config, args.suite))
            return run(config.model_copy(update={"tasks": [task]}))
        task = TaskConfig(kind="compute" if args.command != "fit" else "fit", name=args.command,
                          params=_params(args, config, args.command))
        result = _run_task(task, config)
        _print_result(result)
        if result["status"] == "error":
            print(result["error"], file=sys.stderr)
            return EXIT_FAIL
        return exit_code([result]) if result["status"] != "ok" else EXIT_OK
    except (ValueError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
