"""
Resolvent trace expansions in mu = (-lambda)^1/2:

    Tr(A (P - lambda)^-N) ~ Σ_j c_j mu^(n+nu-j-2N) + Σ_k (c'_k log(-lambda) + c''_k) mu^(-k-2N)

Fitting reads the coefficients off sampled traces; the predictions give what the coefficient of
mu^-2N must be from symbol data.
"""
import csv
import io
from dataclasses import dataclass, field

import mlflow
import mpmath
from mlflow.entities import SpanType

from quasitrace import log
from quasitrace.boundary import ClassicalSymbol, ParityClass, finite_part, lattice_finite_part, parity_classify, \
    residue_density

EXPONENT_TOL = 1e-9
DEFAULT_GRID = (10, 1000, 48)
DEFAULT_CONDITION_MAX = mpmath.mpf(10) ** 40


def is_integer(x) -> bool:
    return abs(x - round(x)) < EXPONENT_TOL


@dataclass(frozen=True)
class BasisTerm:
    exponent: float
    log: bool
    label: str
    family: str


@dataclass(frozen=True)
class ExpansionModel:
    """
    Exponent lattice {n + nu - j - 2N : j <= J_cut} ∪ {-k - 2N : k <= K_cut}; the second family
    carries log partners when nu is an integer (or force_logs), and exponents shared by both
    families get one merged coefficient.
    """
    order: float
    n: int
    N: int
    J_cut: int
    K_cut: int
    force_logs: bool = False

    @staticmethod
    def spanning(order, n: int, N: int, depth: float = 4, force_logs: bool = False) -> "ExpansionModel":
        """Keeps every exponent within depth of the leading one."""
        leading = max(n + order - 2 * N, -2 * N)
        floor = leading - depth
        J_cut = max(0, int(mpmath.floor(n + order - 2 * N - floor + EXPONENT_TOL)))
        K_cut = max(0, int(mpmath.floor(-2 * N - floor + EXPONENT_TOL)))
        return ExpansionModel(order, n, N, J_cut, K_cut, force_logs)

    @property
    def integer_order(self) -> bool:
        return is_integer(self.order)

    def basis(self) -> list[BasisTerm]:
        with_logs = self.integer_order or self.force_logs
        merged = {}
        for j in range(self.J_cut + 1):
            exponent = self.n + self.order - j - 2 * self.N
            merged[round(exponent, 9)] = BasisTerm(exponent, False, f"c[{j}]", "local")
        terms = []
        for k in range(self.K_cut + 1):
            exponent = -k - 2 * self.N
            key = round(exponent, 9)
            if key in merged:
                previous = merged.pop(key)
                terms.append(BasisTerm(exponent, False, f"{previous.label}+c''[{k}]", "merged"))
            else:
                terms.append(BasisTerm(exponent, False, f"c''[{k}]", "global"))
            if with_logs:
                terms.append(BasisTerm(exponent, True, f"c'[{k}]", "log"))
        terms.extend(merged.values())
        return sorted(terms, key=lambda t: (-t.exponent, t.log))

    def to_dict(self) -> dict:
        return {"order": self.order, "n": self.n, "N": self.N, "J_cut": self.J_cut, "K_cut": self.K_cut,
                "force_logs": self.force_logs}


@dataclass(frozen=True)
class Sample:
    mu: object
    value: object
    error: object = 0


def _unpack(sample):
    if isinstance(sample, (tuple, list)):
        mu, value = sample[0], sample[1]
        error = sample[2] if len(sample) > 2 else 0
        return mpmath.mpf(mu), mpmath.mpmathify(value), mpmath.mpf(error)
    error = getattr(sample, "error", None)
    if error is None:
        error = getattr(sample, "tail_bound", 0)
    return mpmath.mpf(sample.mu), mpmath.mpmathify(sample.value), mpmath.mpf(error)


def geometric_grid(low=DEFAULT_GRID[0], high=DEFAULT_GRID[1], points=DEFAULT_GRID[2]) -> list:
    low, high = mpmath.mpf(low), mpmath.mpf(high)
    ratio = (high / low) ** (mpmath.mpf(1) / (points - 1))
    return [low * ratio ** i for i in range(points)]


@dataclass(frozen=True)
class FitCoefficient:
    label: str
    exponent: float
    log: bool
    family: str
    estimate: object
    stderr: object
    stability: object
    resolved: bool

    @property
    def interval(self) -> tuple:
        width = max(self.stability, 3 * self.stderr)
        return self.estimate - width, self.estimate + width

    def to_dict(self) -> dict:
        base = {"label": self.label, "exponent": float(self.exponent), "log": self.log, "family": self.family,
                "stderr": float(self.stderr), "stability": float(self.stability), "resolved": self.resolved}
        if self.resolved:
            base["estimate"] = _real_or_pair(self.estimate)
        else:
            low, high = self.interval
            base["interval"] = [_real_or_pair(low), _real_or_pair(high)]
        return base


def _real_or_pair(value):
    value = mpmath.mpmathify(value)
    if isinstance(value, mpmath.mpc):
        return [float(value.real), float(value.imag)]
    return float(value)


@dataclass(frozen=True)
class FitReport:
    model: ExpansionModel
    coefficients: tuple
    condition: object
    residual_norm: object
    tolerance: float
    points: int

    @property
    def scale(self):
        return max((abs(c.estimate) for c in self.coefficients), default=mpmath.mpf(0))

    @property
    def resolved(self) -> bool:
        return all(c.resolved for c in self.coefficients)

    def find(self, exponent, log: bool = False) -> FitCoefficient | None:
        for c in self.coefficients:
            if abs(c.exponent - exponent) < EXPONENT_TOL and c.log == log:
                return c
        return None

    def constant_term(self) -> FitCoefficient | None:
        """Coefficient of mu^-2N (merged with c_{nu+n} for integer nu)."""
        return self.find(-2 * self.model.N)

    def log_term(self, k: int = 0):
        """c'_k, the coefficient of log(-lambda) = 2 log mu."""
        c = self.find(-k - 2 * self.model.N, log=True)
        return None if c is None else c.estimate / 2

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "condition": float(self.condition),
            "residual_norm": float(self.residual_norm),
            "tolerance": self.tolerance,
            "points": self.points,
            "resolved": self.resolved,
            "coefficients": [c.to_dict() for c in self.coefficients],
        }

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["exponent", "log_flag", "estimate", "stderr", "stability"])
        for c in self.coefficients:
            estimate = mpmath.nstr(mpmath.re(c.estimate), 17) if c.resolved else "unresolved"
            writer.writerow([f"{c.exponent:.9g}", int(c.log), estimate, mpmath.nstr(c.stderr, 6),
                             mpmath.nstr(c.stability, 6)])
        return out.getvalue()


def _solve(rows, rhs, weights):
    """Weighted, column-scaled least squares; returns (solution, stderr, condition, residual)."""
    m, p = len(rows), len(rows[0])
    A = mpmath.matrix(m, p)
    y = mpmath.matrix(m, 1)
    for i in range(m):
        for j in range(p):
            A[i, j] = rows[i][j] * weights[i]
        y[i] = rhs[i] * weights[i]
    scales = []
    for j in range(p):
        norm = mpmath.sqrt(sum(A[i, j] ** 2 for i in range(m)))
        scales.append(norm if norm else mpmath.mpf(1))
        for i in range(m):
            A[i, j] /= scales[j]
    singular = mpmath.svd_r(A, compute_uv=False)
    values = [abs(singular[i]) for i in range(singular.rows)]
    smallest = min(values)
    condition = max(values) / smallest if smallest else mpmath.inf
    solution, residual = mpmath.qr_solve(A, y)
    dof = max(m - p, 1)
    variance = residual ** 2 / dof
    try:
        covariance = mpmath.inverse(A.T * A)
        stderr = [mpmath.sqrt(abs(variance * covariance[j, j])) / scales[j] for j in range(p)]
    except ZeroDivisionError:
        stderr = [mpmath.inf] * p
    return [solution[j] / scales[j] for j in range(p)], stderr, condition, residual


def _fit_real(samples, basis):
    rows, rhs, weights = [], [], []
    floor = mpmath.mpf(10) ** (-(mpmath.mp.dps - 5))
    for mu, value, error in samples:
        rows.append([mu ** t.exponent * (mpmath.log(mu) if t.log else 1) for t in basis])
        rhs.append(value)
        weights.append(1 / max(error, floor * abs(value), floor))
    return _solve(rows, rhs, weights)


@mlflow.trace(span_type=SpanType.TOOL)
def fit_expansion(samples, model: ExpansionModel, tolerance: float = 1e-8,
                  condition_max=DEFAULT_CONDITION_MAX) -> FitReport:
    """
    Weighted least squares over {mu^p} ∪ {mu^p log mu}. A coefficient is resolved when refitting on
    every other grid point moves it by at most tolerance * scale and the design is well conditioned.
    """
    points = sorted((_unpack(s) for s in samples), key=lambda s: s[0])
    basis = model.basis()
    if len(points) < 3 * len(basis):
        raise ValueError(f"fit_expansion: {len(points)} samples for {len(basis)} unknowns, need 3 per unknown")
    complex_data = any(abs(mpmath.im(v)) > 0 for _, v, _ in points)

    def run(subset):
        real = _fit_real([(mu, mpmath.re(v), e) for mu, v, e in subset], basis)
        if not complex_data:
            return real
        imag = _fit_real([(mu, mpmath.im(v), e) for mu, v, e in subset], basis)
        return ([r + 1j * i for r, i in zip(real[0], imag[0])],
                [mpmath.sqrt(a ** 2 + b ** 2) for a, b in zip(real[1], imag[1])],
                max(real[2], imag[2]), mpmath.sqrt(real[3] ** 2 + imag[3] ** 2))

    estimates, stderr, condition, residual = run(points)
    half, _, _, _ = run(points[::2])
    scale = max((abs(e) for e in estimates), default=mpmath.mpf(0)) or mpmath.mpf(1)
    well_posed = condition <= condition_max
    coefficients = []
    for term, estimate, error, refit in zip(basis, estimates, stderr, half):
        stability = abs(estimate - refit)
        coefficients.append(FitCoefficient(term.label, term.exponent, term.log, term.family, estimate, error,
                                           stability, well_posed and stability <= tolerance * scale))
    log(f"[FIT] {len(basis)} unknowns, {len(points)} points, condition {mpmath.nstr(condition, 3)}")
    return FitReport(model, tuple(coefficients), condition, residual, tolerance, len(points))


@dataclass(frozen=True)
class Prediction:
    value: object
    exact: bool
    flag: str | None = None
    details: dict = field(default_factory=dict)


def _exact_regime(order, n) -> bool:
    return order < 1 - n or not is_integer(order)


def predict_c0_sgo(g, n: int, volume=1, lattice: bool = False) -> Prediction:
    """
    Coefficient of mu^-2N in Tr(G Q^N_+) for x'-independent g: volume * ⨍ tr_n g d̄xi'; on the
    cylinder the xi'-integral becomes the regularized lattice sum.
    """
    trace_symbol = g.trace_normal() if hasattr(g, "trace_normal") else g
    if trace_symbol is None:
        return Prediction(mpmath.mpf(0), True, details={"reason": "tr_n g = 0"})
    if lattice:
        value = lattice_finite_part(trace_symbol)
        log_coefficient = residue_density(trace_symbol, 1)
    else:
        result = finite_part(trace_symbol, n - 1)
        value, log_coefficient = result.value, result.log_coefficient
    exact = _exact_regime(trace_symbol.order, n)
    return Prediction(volume * value, exact, None if exact else "modulo local terms",
                      {"log_coefficient": volume * log_coefficient})


def predict_c0_psdo(p: ClassicalSymbol, n: int, volume=None) -> Prediction:
    """volume * ⨍ tr p d̄xi over R^n; volume is the finite x-integral of a localized p."""
    if volume is None or not mpmath.isfinite(volume):
        raise ValueError("predict_c0_psdo: divergent x_n integral, supply a localized symbol volume")
    if p.dimension != n:
        raise ValueError(f"predict_c0_psdo: symbol lives on R^{p.dimension}, expected R^{n}")
    result = finite_part(p, n)
    exact = p.order < -n or not is_integer(p.order)
    return Prediction(volume * result.value, exact, None if exact else "modulo local terms",
                      {"log_coefficient": volume * result.log_coefficient})


def predict_c0_smoothing(trace_value) -> Prediction:
    """For order below 1 - n the mu^-2N coefficient is the trace itself."""
    return Prediction(mpmath.mpmathify(trace_value), True)


@dataclass(frozen=True)
class ZetaData:
    C_minus1: object
    C0: object
    provenance: dict
    N: int = 1
    local_terms: tuple = ()

    def poles(self) -> list[tuple]:
        """
        (s_j, residue) for the simple poles of the zeta function at s_j = (n + nu - j)/2 implied by
        the family-one coefficients: residue = c_j Gamma(N) / (Gamma(N - s_j) Gamma(s_j)).
        """
        out = []
        for s_j, c_j in self.local_terms:
            if (is_integer(s_j) and s_j <= 0) or (is_integer(self.N - s_j) and self.N - s_j <= 0):
                continue
            residue = c_j * mpmath.gamma(self.N) * mpmath.rgamma(self.N - s_j) * mpmath.rgamma(s_j)
            out.append((s_j, residue))
        return out

    def to_dict(self) -> dict:
        return {"C_minus1": _real_or_pair(self.C_minus1), "C0": _real_or_pair(self.C0),
                "provenance": self.provenance,
                "poles": [[float(s), _real_or_pair(r)] for s, r in self.poles()]}


def zeta_from_resolvent(report: FitReport) -> ZetaData:
    """C_-1 = c'_0 and C_0 = c_{nu+n} + c''_0, with c_{nu+n} absent for non-integer nu or nu < -n."""
    model = report.model
    constant = report.constant_term()
    log_term = report.log_term(0)
    c_minus1 = log_term if log_term is not None else mpmath.mpf(0)
    c0 = constant.estimate if constant is not None else mpmath.mpf(0)
    provenance = {
        "C_minus1": "c'[0]" if log_term is not None else None,
        "C0": constant.label if constant is not None else None,
        "merged": constant is not None and constant.family == "merged",
    }
    local_terms = tuple(((model.n + model.order - int(c.label[2:-1])) / 2, c.estimate)
                        for c in report.coefficients if c.family == "local" and c.resolved)
    return ZetaData(c_minus1, c0, provenance, model.N, local_terms)


@dataclass(frozen=True)
class RelationReport:
    fitted: object
    predicted: object
    margin: object
    status: str


def residue_relation_check(fitted_log, g, n: int, volume=1, tolerance=1e-6) -> RelationReport:
    """c'_0 against (1/2) volume ∮ (tr_n g)_{-(n-1)} d̄S."""
    trace_symbol = g.trace_normal() if hasattr(g, "trace_normal") else g
    predicted = mpmath.mpf(0) if trace_symbol is None else volume * residue_density(trace_symbol, n - 1) / 2
    fitted_log = mpmath.mpmathify(fitted_log)
    margin = abs(fitted_log - predicted)
    scale = max(mpmath.mpf(1), abs(predicted))
    return RelationReport(fitted_log, predicted, margin, "pass" if margin <= tolerance * scale else "fail")


@dataclass(frozen=True)
class VanishingPattern:
    parity: ParityClass
    dimension: int
    local: tuple = ()
    logs: tuple = ()
    c0_equals_tr: bool = False
    reason: str | None = None


def parity_predict(g, n: int, J_cut: int = 8, K_cut: int = 8) -> VanishingPattern:
    """
    Even-even coefficients with n even, or even-odd with n odd: c_j vanishes for nu + n - 1 - j
    even, c'_k for k even, and C_0 is the canonical trace of tr_n g.
    """
    classes = set()
    order = None
    for c in g.coefficients.values():
        report = parity_classify(c)
        classes.add(report.parity)
        order = c.order if order is None else max(order, c.order)
    if len(classes) != 1 or ParityClass.NONE in classes:
        return VanishingPattern(ParityClass.NONE, n, reason="mixed or undefined parity")
    parity = classes.pop()
    fits = (parity == ParityClass.EVEN_EVEN and n % 2 == 0) or (parity == ParityClass.EVEN_ODD and n % 2 == 1)
    if not fits:
        return VanishingPattern(parity, n, reason="parity does not fit the dimension")
    nu = int(round(order))
    local = tuple(j for j in range(J_cut + 1) if (nu + n - 1 - j) % 2 == 0)
    logs = tuple(k for k in range(K_cut + 1) if k % 2 == 0)
    return VanishingPattern(parity, n, local, logs, True)
