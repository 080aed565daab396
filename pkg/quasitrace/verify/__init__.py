"""
Verification suites on the half-cylinder.

Each suite builds operators, samples resolvent traces over a geometric mu-grid, fits the trace
expansion and checks a claim about its coefficients, usually the coefficient of mu^-2N, against an
independent prediction. Every claim becomes one row with status pass, fail, inconclusive (the fit
did not resolve the coefficient) or error.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import mlflow
import mpmath
import sympy
from mlflow.entities import SpanType

from quasitrace import log
from quasitrace.boundary import ClassicalSymbol, Extension, finite_part
from quasitrace.config import ExperimentConfig
from quasitrace.cylinder import (
    CylinderModel, Composition, CompositionKind, ElementKind, alpha_sum, banded, diagonal, direct_trace, mode_sum,
    plain_trace, poisson, rank_one, trace_sample, traceop, _summand,
)
from quasitrace.expansion import (
    ExpansionModel, FitCoefficient, FitReport, Sample, fit_expansion, geometric_grid, parity_predict,
    predict_c0_sgo, predict_c0_smoothing,
)


class Status(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"
    ERROR = "error"


SEVERITY = {Status.PASS: 0, Status.INCONCLUSIVE: 1, Status.FAIL: 2, Status.ERROR: 3}


def _json_number(value):
    if value is None:
        return None
    value = mpmath.mpmathify(value)
    if isinstance(value, mpmath.mpc):
        return [float(value.real), float(value.imag)]
    return float(value)


@dataclass(frozen=True)
class ClaimRow:
    suite: str
    anchor: str
    claim: str
    predicted: object
    fitted: object
    margin: object
    tolerance: float
    status: Status
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "anchor": self.anchor,
            "claim": self.claim,
            "predicted": _json_number(self.predicted),
            "fitted": _json_number(self.fitted),
            "margin": _json_number(self.margin),
            "tolerance": self.tolerance,
            "status": self.status.value,
            "details": self.details,
        }


@dataclass(frozen=True)
class SuiteReport:
    name: str
    rows: tuple
    fits: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    @property
    def status(self) -> Status:
        if not self.rows:
            return Status.INCONCLUSIVE
        return max((row.status for row in self.rows), key=SEVERITY.get)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status.value,
            "parameters": self.parameters,
            "rows": [row.to_dict() for row in self.rows],
            "fits": {key: report.to_dict() for key, report in sorted(self.fits.items())},
        }


def determinism_hash(payload: dict) -> str:
    """sha256 of the canonical JSON text of payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class SuiteRun:
    """Accumulates samples, fits and rows while a suite runs."""
    name: str
    config: ExperimentConfig
    params: dict
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    @property
    def numeric(self):
        return self.config.numeric

    @property
    def model(self) -> CylinderModel:
        return self.config.model

    def param(self, key, default):
        return self.params.get(key, default)

    def grid(self) -> list:
        return geometric_grid(self.numeric.mu_low, self.numeric.mu_high, self.numeric.mu_points)

    def power(self, order, n: int = 2) -> int:
        """Resolvent power with 2N >= nu + n + 6."""
        if "N" in self.params:
            return int(self.params["N"])
        if self.numeric.N is not None:
            return self.numeric.N
        return max(1, math.ceil((order + n + 6) / 2))

    def expansion(self, order, n: int, N: int) -> ExpansionModel:
        return ExpansionModel.spanning(order, n, N, self.numeric.depth)

    def fit_samples(self, key: str, samples, order, n: int, N: int) -> FitReport:
        report = fit_expansion(samples, self.expansion(order, n, N), self.numeric.tolerance)
        self.fits[key] = report
        return report

    def fit_trace(self, key: str, composition: Composition, order, n: int, N: int,
                  model: CylinderModel | None = None) -> FitReport:
        log(f"[VERIFY] {self.name}: sampling {composition.label()} with N={N}")
        samples = trace_sample(model or self.model, composition, self.grid(), N, self.numeric.fourier_K,
                               self.numeric.tail_tolerance)
        self.samples[key] = samples
        return self.fit_samples(key, samples, order, n, N)

    def claim(self, anchor: str, claim: str, predicted, fitted, tolerance: float, scale=None,
              relative: bool = False, details: dict | None = None) -> ClaimRow:
        """
        Compares fitted against predicted; either side may be a FitCoefficient, and an unresolved
        one makes the row inconclusive. The bound is tolerance * |predicted| when relative, else
        tolerance * scale.
        """
        if self.numeric.claim_tolerance is not None:
            tolerance = self.numeric.claim_tolerance
        resolved = True
        values = []
        for side in (predicted, fitted):
            if isinstance(side, FitCoefficient):
                resolved &= side.resolved
                side = side.estimate
            values.append(mpmath.mpmathify(0 if side is None else side))
        predicted, fitted = values
        margin = abs(fitted - predicted)
        if relative:
            reference = abs(predicted)
        else:
            reference = mpmath.mpf(1) if scale is None else mpmath.mpmathify(scale)
        bound = tolerance * reference
        if not resolved:
            status = Status.INCONCLUSIVE
        elif bound > 0 and margin <= bound:
            status = Status.PASS
        else:
            status = Status.FAIL
        row = ClaimRow(self.name, anchor, claim, predicted, fitted, margin, float(tolerance), status,
                       details or {})
        self.rows.append(row)
        log(f"[VERIFY] {self.name}: {claim} -> {status.value} (margin {mpmath.nstr(margin, 3)})")
        return row

    def report(self) -> SuiteReport:
        return SuiteReport(self.name, tuple(self.rows), dict(self.fits), dict(self.samples), dict(self.params))


def _c0_finite_part(run: SuiteRun):
    anchor = "constant coefficient of Tr(G Q^N_+) equals the regularized integral of tr_n g"
    for order in run.param("orders", [-2.5, -0.5]):
        N = run.power(order)
        g = rank_one(order, name=f"g[{order}]")
        symbol = g.trace_normal()
        samples = [Sample(mu, alpha_sum(run.model, symbol, mu, N)) for mu in run.grid()]
        report = run.fit_samples(f"continuum nu={order}", samples, order, 1, N)
        prediction = predict_c0_sgo(symbol, 2)
        run.claim(anchor, f"continuum a''_0 = finite part, nu={order}", prediction.value, report.constant_term(),
                  run.param("tolerance", 1e-3), relative=True, details={"exact": prediction.exact})

        report = run.fit_trace(f"cylinder nu={order}", Composition(CompositionKind.SINGLE, g, part=ElementKind.Q),
                               order, 1, N)
        prediction = predict_c0_sgo(g, 2, lattice=True)
        run.claim(anchor, f"cylinder C_0 = regularized lattice sum, nu={order}", prediction.value,
                  report.constant_term(), run.param("tolerance", 1e-3), relative=True)

    for order in run.param("orders_2d", []):
        N = run.power(order, 3)
        symbol = ClassicalSymbol.homogeneous(order, sympy.Integer(1), 2, Extension.BRACKET)
        samples = [Sample(mu, alpha_sum(run.model, symbol, mu, N)) for mu in run.grid()]
        report = run.fit_samples(f"continuum 2d nu={order}", samples, order, 2, N)
        run.claim(anchor, f"continuum a''_0 = finite part on R^2, nu={order}", finite_part(symbol, 2).value,
                  report.constant_term(), run.param("tolerance", 1e-3), relative=True)


def _leftover_vanishing(run: SuiteRun):
    anchor = "leftover compositions G G^(N) and G G^-(Q^N) have no mu^-2N term for non-integer order"
    order = run.param("order", -1.5)
    N = run.power(order)
    g = rank_one(order, name="g")
    for part in (ElementKind.G, ElementKind.G_MINUS):
        report = run.fit_trace(f"{part.value}", Composition(CompositionKind.SINGLE, g, part=part), order, 1, N)
        run.claim(anchor, f"coefficient of mu^-2N in Tr(G {part.value}) vanishes", 0, report.constant_term(),
                  run.param("tolerance", 1e-6), scale=report.scale)


def _commutator(run: SuiteRun):
    anchor = "C_0 of a commutator of s.g.o.s is locally determined and vanishes for non-integer total order"
    first, second = run.param("orders", [-1.3, -1.4])
    size = run.param("laguerre_size", 2)
    bandwidth = run.param("bandwidth", 2)
    seed = run.param("seed", run.numeric.seed)
    A = banded(first, size, bandwidth, seed, name="G")
    B = banded(second, size, bandwidth, seed + 1, name="G'")
    N = run.power(first + second)
    composition = Composition(CompositionKind.COMMUTATOR, A, B)
    report = run.fit_trace("commutator", composition, first + second, 1, N)
    diagonal_sum, tail = plain_trace(run.model, composition, run.numeric.fourier_K)
    run.claim(anchor, "C_0([G, G']) equals the diagonal sum Tr([G, G'])", diagonal_sum, report.constant_term(),
              run.param("tolerance", 1e-4), scale=report.scale, details={"tail_bound": _json_number(tail)})

    D1 = diagonal(first, (1, 0.5), name="D")
    D2 = diagonal(second, (0.3, 0.7), name="D'")
    control = Composition(CompositionKind.COMMUTATOR, D1, D2)
    mu = run.grid()[0]
    value, _ = mode_sum(_summand(run.model, control, N, mu), run.numeric.fourier_K, mu)
    run.claim(anchor, "x'-independent diagonal control: Tr([D, D'] R^N) = 0 exactly", 0, value,
              float(mpmath.mpf(10) ** (5 - mpmath.mp.dps)))


def _auxiliary_independence(run: SuiteRun):
    anchor = "C_0 does not depend on the auxiliary operator for non-integer order"
    order = run.param("order", -1.5)
    N = run.power(order)
    g = rank_one(order, name="g")
    constants, scales = [], []
    for alpha, mass2 in run.param("models", [[1, 1], [2, 3]]):
        model = CylinderModel(alpha=alpha, mass2=mass2, sector_eps=run.model.sector_eps)
        report = run.fit_trace(f"alpha={alpha} m2={mass2}", Composition(CompositionKind.SINGLE, g), order, 1, N,
                               model=model)
        constants.append(report.constant_term())
        scales.append(report.scale)
    for other in constants[1:]:
        run.claim(anchor, "C_0(G, P_1) = C_0(G, P_2)", constants[0], other, run.param("tolerance", 1e-4),
                  scale=max(scales))


def _tr_equals_TR(run: SuiteRun):
    anchor = "for order below 1 - n the constant coefficient is the operator trace"
    order = run.param("order", -2.5)
    N = run.power(order)
    g = rank_one(order, name="g")
    report = run.fit_trace("resolvent", Composition(CompositionKind.SINGLE, g), order, 1, N)
    trace, tail = direct_trace(run.model, g, run.numeric.fourier_K)
    prediction = predict_c0_smoothing(trace)
    run.claim(anchor, "C_0(G) = Tr G", prediction.value, report.constant_term(), run.param("tolerance", 1e-4),
              relative=True, details={"tail_bound": _json_number(tail)})


def _parity(run: SuiteRun):
    anchor = "even-even symbols in even dimension: alternate coefficients vanish and C_0 is TR(tr_n G)"
    order = run.param("order", 2)
    N = run.power(order)
    g = rank_one(order, name="g")
    report = run.fit_trace("resolvent", Composition(CompositionKind.SINGLE, g), order, 1, N)
    expansion = run.expansion(order, 1, N)
    pattern = parity_predict(g, 2, expansion.J_cut, expansion.K_cut)
    if pattern.reason:
        run.rows.append(ClaimRow(run.name, anchor, f"parity pattern applies: {pattern.reason}", None, None, None,
                                 0.0, Status.INCONCLUSIVE))
        return
    tolerance = run.param("tolerance", 1e-6)
    for j in pattern.local:
        exponent = 1 + order - j - 2 * N
        c = report.find(exponent)
        if c is None:
            continue
        if c.family == "local":
            run.claim(anchor, f"c[{j}] vanishes", 0, c, tolerance, scale=report.scale)
        elif abs(exponent + 2 * N) > 1e-9:
            # the mu^-2N coefficient is checked by the C_0 claim below
            run.rows.append(ClaimRow(run.name, anchor, f"c[{j}] vanishes", 0, c.estimate, None, tolerance,
                                     Status.INCONCLUSIVE, {"merged_with": c.label}))
    for k in pattern.logs:
        c = report.find(-k - 2 * N, log=True)
        if c is not None:
            run.claim(anchor, f"c'[{k}] vanishes", 0, c, tolerance, scale=report.scale)
    prediction = predict_c0_sgo(g, 2, lattice=True)
    run.claim(anchor, "C_0 = TR(tr_n G) by the boundary route", prediction.value, report.constant_term(),
              run.param("c0_tolerance", 1e-3), relative=True)


def _kt_tk(run: SuiteRun):
    anchor = "C_0(KT, P_1,D) = C_0(TK, S) when the total order is below 1 - n or non-integer"
    first, second = run.param("orders", [-1.1, -1.2])
    size = run.param("laguerre_size", 2)
    bandwidth = run.param("bandwidth", 1)
    seed = run.param("seed", run.numeric.seed)
    K = poisson(first, size, bandwidth, seed, name="K")
    T = traceop(second, size, bandwidth, seed + 1, name="T")
    N = run.power(first + second)
    kt = run.fit_trace("KT", Composition(CompositionKind.KT, K, T), first + second, 1, N)
    tk = run.fit_trace("TK", Composition(CompositionKind.TK, T, K), first + second, 1, N)
    run.claim(anchor, "C_0(KT) = C_0(TK)", tk.constant_term(), kt.constant_term(), run.param("tolerance", 1e-3),
              scale=max(kt.scale, tk.scale))


def _identity_density(run: SuiteRun):
    anchor = "on n = 2 the Q-part density reaches mu^-2N while tr_n G^(N) has only odd-minus-2N powers"
    N = run.power(0)
    alpha, mass2 = mpmath.mpf(run.model.alpha), mpmath.mpf(run.model.mass2)
    q = run.fit_trace("Q density", Composition(CompositionKind.IDENTITY, part=ElementKind.Q), 0, 2, N)
    run.claim(anchor, "mu^-2N coefficient of the Q density is -m^2/(2 sqrt(alpha))", -mass2 / (2 * mpmath.sqrt(alpha)),
              q.constant_term(), run.param("tolerance", 1e-6), relative=True)
    g = run.fit_trace("G trace", Composition(CompositionKind.IDENTITY, part=ElementKind.G), 0, 2, N)
    tolerance = run.param("tolerance", 1e-6)
    run.claim(anchor, "mu^-2N coefficient of tr_n G^(N) vanishes", 0, g.constant_term(), tolerance, scale=g.scale)
    offending = [c.label for c in g.coefficients
                 if abs(c.estimate) > tolerance * g.scale and (c.log or round(c.exponent + 2 * N) % 2 == 0)]
    run.claim(anchor, "tr_n G^(N) exponents lie in odd - 2N", 0, len(offending), 0.5,
              details={"offending": offending})


def _boundary_reduction(run: SuiteRun):
    anchor = "C_0(G, P_1,D) reduces to C_0(tr_n G, S) on the boundary"
    order = run.param("order", -0.5)
    N = run.power(order)
    g = rank_one(order, name="g")
    interior = run.fit_trace("G", Composition(CompositionKind.SINGLE, g), order, 1, N)
    boundary = run.fit_trace("C", Composition(CompositionKind.BOUNDARY, g), order, 1, N)
    run.claim(anchor, "C_0(G, P_1,D) = C_0(C, S)", boundary.constant_term(), interior.constant_term(),
              run.param("tolerance", 1e-4), scale=max(interior.scale, boundary.scale))
    prediction = predict_c0_sgo(g, 2, lattice=True)
    run.claim(anchor, "C_0(C, S) = regularized lattice sum of tr_n g", prediction.value, boundary.constant_term(),
              run.param("tolerance", 1e-3), relative=True)


SUITES = {
    "c0_finite_part": _c0_finite_part,
    "leftover_vanishing": _leftover_vanishing,
    "commutator": _commutator,
    "auxiliary_independence": _auxiliary_independence,
    "tr_equals_TR": _tr_equals_TR,
    "parity": _parity,
    "kt_tk": _kt_tk,
    "identity_density": _identity_density,
    "boundary_reduction": _boundary_reduction,
}


@mlflow.trace(span_type=SpanType.TOOL)
def verify_suite(name: str, config: ExperimentConfig, params: dict | None = None) -> SuiteReport:
    """Runs one suite at the configured precision; failures inside become an error row."""
    if name not in SUITES:
        raise ValueError(f"unknown suite '{name}', available: {', '.join(SUITES)}")
    run = SuiteRun(name, config, dict(params or {}))
    log(f"[VERIFY] {name} at {config.numeric.precision} digits")
    with mpmath.workdps(config.numeric.precision):
        try:
            SUITES[name](run)
        except (ValueError, RuntimeError, ArithmeticError) as e:
            log(f"[VERIFY] {name} failed: {e}")
            run.rows.append(ClaimRow(name, "-", f"{type(e).__name__}: {e}", None, None, None, 0.0, Status.ERROR))
        return run.report()
