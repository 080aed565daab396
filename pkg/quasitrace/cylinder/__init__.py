"""
Brute-force traces on the half-cylinder S^1 x R_+ with P_1 = D_xn^2 + alpha D_x'^2 + m^2 (Dirichlet).

Every Fourier mode k is closed-form: the resolvent kernel is a sum of exponentials in x_n and the
Laguerre matrix elements are residue integrals. Operators are Fourier x Laguerre tensors built from
boundary symbols with finitely many x'-modes, and traces are ordered mode sums with an
Euler-Maclaurin tail.
"""
import csv
import io
import random
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import mlflow
import mpmath
import sympy
from mlflow.entities import SpanType
from pydantic import BaseModel, ConfigDict, Field

from quasitrace import Binding, log
from quasitrace.boundary import CIRCLE_NODES, ClassicalSymbol, Extension, ParityClass, bracket, parity_classify
from quasitrace.ratfun import integrate_factors
from quasitrace.resolvent import EllipticModel, alpha_N

S1 = sympy.Symbol("sigma_1", positive=True)
S2 = sympy.Symbol("sigma_2", positive=True)
KAP = sympy.Symbol("kappa", positive=True)
DIST = sympy.Symbol("d", nonnegative=True)

DEFAULT_K = 200
DEFAULT_J = 24
DEFAULT_BANDWIDTH = 4


class CylinderModel(BaseModel):
    """P'_1 = alpha D_x'^2 + m^2 on S^1; mode symbol p'(k) = alpha k^2 + m^2."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(default=1.0, gt=0, description="coefficient of D_x'^2")
    mass2: float = Field(default=1.0, gt=0, description="mass m^2 of the tangential operator")
    sector_eps: float = Field(default=0.1, gt=0, lt=3.14159, description="aperture of the excluded sector")

    def p_prime(self, k):
        return mpmath.mpf(self.alpha) * mpmath.mpmathify(k) ** 2 + mpmath.mpf(self.mass2)

    def sigma(self, k):
        """The smoothed norm [k]; on integers this is max(|k|, 1)."""
        return bracket(k)

    def kappa(self, k, mu):
        return mpmath.sqrt(self.p_prime(k) + mpmath.mpmathify(mu) ** 2)

    def kappa_lambda(self, k, lam):
        z = self.p_prime(k) - mpmath.mpmathify(lam)
        if mpmath.im(z) == 0 and mpmath.re(z) <= 0:
            raise ValueError(f"lambda = {mpmath.nstr(lam, 8)} lies on the spectrum ray of mode {k}")
        return mpmath.sqrt(z)

    def binding(self, k, mu) -> Binding:
        kappa = self.kappa(k, mu)
        return Binding(self.sigma(k), kappa, kappa, mpmath.mpmathify(mu))

    def elliptic_model(self) -> EllipticModel:
        """The boundary-frozen model a = 1, b = 0, c = alpha sigma^2 with the same mass."""
        return EllipticModel(a=1.0, b_expr="0", c_expr=f"{self.alpha}*sigma**2", mass2=self.mass2,
                             sector_eps=self.sector_eps)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def _lambda_derivatives(expr, N: int):
    """d^(N-1)/dlambda^(N-1) expr / (N-1)! with dkappa/dlambda = -1/(2 kappa)."""
    for n in range(1, N):
        expr = -sympy.diff(expr, KAP) / (2 * KAP * n)
    return expr


@lru_cache(maxsize=64)
def _kernel_fn(N: int):
    """Full-line kernel of (D^2 + kappa^2)^-N as a function of (d, kappa), d = |x - y|."""
    expr = _lambda_derivatives(sympy.exp(-KAP * DIST) / (2 * KAP), N)
    return sympy.lambdify((DIST, KAP), sympy.simplify(expr), modules="mpmath")


@dataclass(frozen=True)
class ModeResolvent:
    """
    N-th power of the Dirichlet resolvent on one Fourier mode:
    r(x, y) = Q(|x - y|) - Q(x + y), Q the full-line kernel; the second term is the s.g.o. part.
    """
    model: CylinderModel
    k: int
    mu: object
    kappa: object
    N: int

    def q_part(self, x, y):
        return _kernel_fn(self.N)(abs(mpmath.mpmathify(x) - y), self.kappa)

    def g_part(self, x, y):
        return -_kernel_fn(self.N)(mpmath.mpmathify(x) + y, self.kappa)

    def __call__(self, x, y):
        return self.q_part(x, y) + self.g_part(x, y)

    def lower(self) -> "ModeResolvent":
        return ModeResolvent(self.model, self.k, self.mu, self.kappa, self.N - 1)

    def dirichlet_residual(self, points) -> object:
        return max(abs(self(0, y)) for y in points)

    def symmetry_residual(self, points) -> object:
        return max(abs(self(x, y) - self(y, x)) for x, y in points)

    def ode_residual(self, points) -> object:
        """
        max |(-d_x^2 + kappa^2) r_N - r_(N-1)| off the diagonal, plus the unit jump of d_x r_1
        across x = y for N = 1.
        """
        worst = mpmath.mpf(0)
        for x, y in points:
            if abs(x - y) < mpmath.mpf("1e-3"):
                continue
            second = mpmath.diff(lambda t: self(t, y), x, 2)
            lower = self.lower()(x, y) if self.N > 1 else 0
            worst = max(worst, abs(-second + self.kappa ** 2 * self(x, y) - lower))
        if self.N == 1:
            for _, y in points:
                right = mpmath.diff(lambda t: self(t, y), y, direction=1)
                left = mpmath.diff(lambda t: self(t, y), y, direction=-1)
                worst = max(worst, abs(right - left + 1))
        return worst

    def trace_g(self):
        """∫_0^inf g(x, x) dx by quadrature."""
        return mpmath.quad(lambda x: self.g_part(x, x), [0, 1 / mpmath.re(self.kappa), mpmath.inf])

    def trace_g_exact(self):
        """-(1/4) (p'(k) - lambda)^-N."""
        return -self.kappa ** (-2 * self.N) / 4


def mode_resolvent(model: CylinderModel, k: int, lam=None, N: int = 1, mu=None) -> ModeResolvent:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if lam is None and mu is None:
        raise ValueError("mode_resolvent needs lambda or mu")
    if lam is None:
        lam = -mpmath.mpmathify(mu) ** 2
    kappa = model.kappa_lambda(k, lam)
    return ModeResolvent(model, k, mpmath.sqrt(-mpmath.mpmathify(lam)), kappa, N)


def leftover_identity_check(model: CylinderModel, k: int, mu, points) -> object:
    """
    P_+Q_+ = (PQ)_+ - G^+(P)G^-(Q) for P = Q = (D_xn^2 + kappa^2)^-1 on one mode: the composed
    half-line kernel by quadrature against the closed-form right side; returns max abs difference.
    """
    kappa = model.kappa(k, mu)
    q1, q2 = _kernel_fn(1), _kernel_fn(2)
    worst = mpmath.mpf(0)
    for x, y in points:
        x, y = mpmath.mpf(x), mpmath.mpf(y)
        nodes = sorted({mpmath.mpf(0), x, y}) + [mpmath.inf]
        left = mpmath.quad(lambda z: q1(abs(x - z), kappa) * q1(abs(z - y), kappa), nodes)
        right = q2(abs(x - y), kappa) - mpmath.exp(-kappa * (x + y)) / (8 * kappa ** 3)
        worst = max(worst, abs(left - right))
    return worst


def _laguerre_factors(j: int, s, conjugate: bool = False) -> list:
    # phi'_j = (s - i xi)^j (s + i xi)^(-j-1); conjugation swaps the factors
    if conjugate:
        return [(s, 1, j), (s, -1, -j - 1)]
    return [(s, -1, j), (s, 1, -j - 1)]


def _transform_at(j: int, s):
    """phi_j evaluated at xi = -i kappa, i.e. ∫ phi_j(x) e^(-kappa x) dx."""
    return sympy.sqrt(2 * s) * (s - KAP) ** j / (s + KAP) ** (j + 1)


class ElementKind(str, Enum):
    OVERLAP = "overlap"
    Q = "Q^N_+"
    G = "G^(N)"
    G_MINUS = "G^-(Q^N)"
    R = "R^N"


@lru_cache(maxsize=None)
def matrix_element_expr(kind: ElementKind, j: int, l: int, N: int = 1) -> sympy.Expr:
    """
    <phi_j(sigma_1), X phi_l(sigma_2)> as an expression in (sigma_1, sigma_2, kappa), X the kind's
    N-th power operator on one mode.
    """
    kind = ElementKind(kind)
    norm = 2 * sympy.sqrt(S1 * S2)
    if kind == ElementKind.OVERLAP:
        return integrate_factors(_laguerre_factors(j, S1, True) + _laguerre_factors(l, S2), norm)
    if kind == ElementKind.Q:
        factors = _laguerre_factors(j, S1, True) + _laguerre_factors(l, S2) + [(KAP, 1, -N), (KAP, -1, -N)]
        return integrate_factors(factors, norm)
    if kind == ElementKind.R:
        return matrix_element_expr(ElementKind.Q, j, l, N) + matrix_element_expr(ElementKind.G, j, l, N)
    base = -_transform_at(j, S1) * _transform_at(l, S2) / (2 * KAP)
    g = _lambda_derivatives(base, N)
    return g if kind == ElementKind.G else -g


@lru_cache(maxsize=None)
def _element_fn(kind: ElementKind, j: int, l: int, N: int):
    return sympy.lambdify((S1, S2, KAP), matrix_element_expr(kind, j, l, N), modules="mpmath")


def matrix_element(kind, j: int, l: int, N: int, sigma, sigma_p, kappa=None):
    kind = ElementKind(kind)
    kappa = 1 if kappa is None else kappa
    return _element_fn(kind, j, l, N)(mpmath.mpmathify(sigma), mpmath.mpmathify(sigma_p), kappa)


def overlap(j: int, sigma, l: int, sigma_p):
    """∫ phi_j(x, sigma) phi_l(x, sigma') dx; delta_jl when sigma = sigma'."""
    return matrix_element(ElementKind.OVERLAP, j, l, 1, sigma, sigma_p)


@lru_cache(maxsize=64)
def _normal_density_fn(N: int):
    expr = integrate_factors([(KAP, 1, -N), (KAP, -1, -N)])
    return sympy.lambdify(KAP, expr, modules="mpmath")


def laguerre_x(k: int, x, sigma):
    """phi_k in x_n: (-1)^k (2 sigma)^1/2 e^(-sigma x) L_k(2 sigma x)."""
    x, sigma = mpmath.mpmathify(x), mpmath.mpmathify(sigma)
    return (-1) ** k * mpmath.sqrt(2 * sigma) * mpmath.exp(-sigma * x) * mpmath.laguerre(k, 0, 2 * sigma * x)


def quadrature_element(resolvent: ModeResolvent, j: int, l: int, part: str = "R^N"):
    """Dense 2-D quadrature of <phi_j, X phi_l> from the kernel, X one of R^N, Q^N_+, G^(N)."""
    sigma = resolvent.model.sigma(resolvent.k)
    kernel = {"R^N": resolvent, "Q^N_+": resolvent.q_part, "G^(N)": resolvent.g_part}[part]

    def inner(x):
        return mpmath.quad(lambda y: kernel(x, y) * laguerre_x(l, y, sigma), [0, x, mpmath.inf])

    return mpmath.quad(lambda x: laguerre_x(j, x, sigma) * inner(x), [0, 1, mpmath.inf])


class OperatorKind(str, Enum):
    SGO = "sgo"
    POISSON = "poisson"
    TRACEOP = "traceop"
    BOUNDARY_PSDO = "boundary_psdo"


@dataclass(frozen=True)
class CylinderOperator:
    """
    Fourier x Laguerre tensor of a cylinder operator. Coefficient keys carry the x'-Fourier mode b
    last: (j, l, b) for s.g.o.s, (j, b) for Poisson, (l, b) for trace, (b,) for boundary operators.
    The block of an s.g.o. from mode k to mode k + b is Σ c_{jl,b}(k) phi_j(sigma_k) <phi_l(sigma_k), .>.
    """
    kind: OperatorKind
    order: float
    coefficients: dict
    name: str = ""
    hermitian: bool = False

    def coefficient(self, key, k):
        symbol = self.coefficients.get(key)
        return mpmath.mpf(0) if symbol is None else symbol(k)

    def entries(self, b: int | None = None):
        for key, symbol in sorted(self.coefficients.items()):
            if b is None or key[-1] == b:
                yield key, symbol

    @property
    def laguerre_size(self) -> int:
        if self.kind == OperatorKind.BOUNDARY_PSDO:
            return 0
        return 1 + max((max(key[:-1]) for key in self.coefficients), default=-1)

    @property
    def bandwidth(self) -> int:
        return max((abs(key[-1]) for key in self.coefficients), default=0)

    @property
    def x_independent(self) -> bool:
        return self.bandwidth == 0

    def trace_normal(self) -> ClassicalSymbol | None:
        """tr_n of an s.g.o. as a boundary symbol: the x'-constant diagonal sum Σ_j c_{jj,0}."""
        if self.kind == OperatorKind.BOUNDARY_PSDO:
            return self.coefficients.get((0,))
        if self.kind != OperatorKind.SGO:
            raise ValueError(f"tr_n is defined for s.g.o.s, not {self.kind.value}")
        total = None
        for (j, l, b), symbol in self.entries(0):
            if j == l:
                total = symbol if total is None else total + symbol
        return total

    def parity(self) -> ParityClass:
        classes = {parity_classify(c).parity for c in self.coefficients.values()}
        return classes.pop() if len(classes) == 1 else ParityClass.NONE

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "name": self.name,
            "order": float(self.order),
            "hermitian": self.hermitian,
            "laguerre_size": self.laguerre_size,
            "bandwidth": self.bandwidth,
            "coefficients": [{"key": list(key), "symbol": symbol.to_dict()} for key, symbol in self.entries()],
        }


def power_symbol(order, weight=1) -> ClassicalSymbol:
    """weight * [xi']^order, even in xi'."""
    weight = mpmath.mpf(weight)
    return ClassicalSymbol.homogeneous(order, (weight, weight), 1, Extension.BRACKET)


def _weights(seed: int, count: int) -> list:
    rng = random.Random(seed)
    # six decimals keep the draws reproducible as text in reports
    return [mpmath.mpf(f"{rng.uniform(-1, 1):.6f}") for _ in range(count)]


def rank_one(order, j: int = 0, l: int = 0, weight=1, name: str = "rank_one") -> CylinderOperator:
    return CylinderOperator(OperatorKind.SGO, order, {(j, l, 0): power_symbol(order, weight)}, name, j == l)


def diagonal(order, weights=(1,), name: str = "diagonal") -> CylinderOperator:
    coefficients = {(j, j, 0): power_symbol(order, w) for j, w in enumerate(weights)}
    return CylinderOperator(OperatorKind.SGO, order, coefficients, name, True)


def banded(order, J: int = 2, bandwidth: int = DEFAULT_BANDWIDTH, seed: int = 0, decay=0.5,
           name: str = "banded") -> CylinderOperator:
    """Random x'-dependent s.g.o.: c_{jl,b} = w decay^(j + l + |b|) [xi']^order."""
    keys = [(j, l, b) for j in range(J) for l in range(J) for b in range(-bandwidth, bandwidth + 1)]
    draws = _weights(seed, len(keys))
    decay = mpmath.mpf(decay)
    coefficients = {key: power_symbol(order, w * decay ** (key[0] + key[1] + abs(key[2])))
                    for key, w in zip(keys, draws)}
    return CylinderOperator(OperatorKind.SGO, order, coefficients, name)


def _boundary_family(kind: OperatorKind, order, J, bandwidth, seed, decay, name):
    keys = [(j, b) for j in range(J) for b in range(-bandwidth, bandwidth + 1)]
    draws = _weights(seed, len(keys))
    decay = mpmath.mpf(decay)
    coefficients = {key: power_symbol(order, w * decay ** (key[0] + abs(key[1]))) for key, w in zip(keys, draws)}
    return CylinderOperator(kind, order, coefficients, name)


def poisson(order, J: int = 2, bandwidth: int = 0, seed: int = 1, decay=0.5, name: str = "poisson"):
    """K = Σ_j phi_j k_j(x', D'); its symbol order is order + 1/2 in the usual grading."""
    return _boundary_family(OperatorKind.POISSON, order, J, bandwidth, seed, decay, name)


def traceop(order, J: int = 2, bandwidth: int = 0, seed: int = 2, decay=0.5, name: str = "traceop"):
    """T = Σ_l t_l(x', D') <., phi_l>."""
    return _boundary_family(OperatorKind.TRACEOP, order, J, bandwidth, seed, decay, name)


def boundary_psdo(order, weight=1, name: str = "boundary_psdo") -> CylinderOperator:
    return CylinderOperator(OperatorKind.BOUNDARY_PSDO, order, {(0,): power_symbol(order, weight)}, name, True)


PRESETS = {
    "rank_one": rank_one,
    "diagonal": diagonal,
    "banded": banded,
    "poisson": poisson,
    "traceop": traceop,
    "boundary_psdo": boundary_psdo,
}


class CompositionKind(str, Enum):
    SINGLE = "single"
    PRODUCT = "product"
    COMMUTATOR = "commutator"
    KT = "kt"
    TK = "tk"
    BOUNDARY = "boundary"
    IDENTITY = "identity"
    DIRECT = "direct"


@dataclass(frozen=True)
class Composition:
    """
    What gets traced against which resolvent part:

    single      Tr(A X)               product     Tr(A B X)
    commutator  Tr([A, B] X)          kt          Tr(K T X), first = K, second = T
    tk          Tr(T K (S - lambda)^-N), first = T, second = K, S = P'_1
    boundary    Tr(C (S - lambda)^-N), C = tr_n of first
    identity    per-unit-length density of X itself (X = Q^N_+ or G^(N))
    direct      Tr A without resolvent
    """
    kind: CompositionKind
    first: CylinderOperator | None = None
    second: CylinderOperator | None = None
    part: ElementKind = ElementKind.R

    def label(self) -> str:
        names = [op.name for op in (self.first, self.second) if op is not None]
        return f"{self.kind.value}({', '.join(names)})[{ElementKind(self.part).value}]"


def _product_summand(model, A, B, part, N, k, mu):
    """Σ_b Σ c^A_{jm,-b}(k+b) c^B_{ll',b}(k) <phi_m(s_{k+b}), phi_l(s_k)> <phi_l'(s_k), X phi_j(s_{k+b})>."""
    kappa = None if part == ElementKind.OVERLAP else model.kappa(k, mu)
    s_k = model.sigma(k)
    total = mpmath.mpf(0)
    for (l, lp, b), c_b in B.entries():
        c_b = c_b(k)
        if c_b == 0:
            continue
        s_kb = model.sigma(k + b)
        for (j, m, _), c_a in A.entries(-b):
            weight = c_a(k + b) * c_b
            if b == 0:
                if m != l:
                    continue
                link = 1
            else:
                link = overlap(m, s_kb, l, s_k)
            total += weight * link * matrix_element(part, lp, j, N, s_k, s_kb, kappa)
    return total


def _summand(model: CylinderModel, composition: Composition, N: int, mu):
    kind = composition.kind
    A, B, part = composition.first, composition.second, ElementKind(composition.part)

    if kind == CompositionKind.SINGLE:
        def summand(k):
            kappa, s_k = model.kappa(k, mu), model.sigma(k)
            return sum((c(k) * matrix_element(part, l, j, N, s_k, s_k, kappa) for (j, l, _), c in A.entries(0)),
                       mpmath.mpf(0))
    elif kind == CompositionKind.PRODUCT:
        def summand(k):
            return _product_summand(model, A, B, part, N, k, mu)
    elif kind == CompositionKind.COMMUTATOR:
        def summand(k):
            return _product_summand(model, A, B, part, N, k, mu) - _product_summand(model, B, A, part, N, k, mu)
    elif kind == CompositionKind.KT:
        def summand(k):
            kappa, s_k = model.kappa(k, mu), model.sigma(k)
            total = mpmath.mpf(0)
            for (l, b), t in B.entries():
                t = t(k)
                s_kb = model.sigma(k + b)
                for (j, _), c in A.entries(-b):
                    total += t * c(k + b) * matrix_element(part, l, j, N, s_k, s_kb, kappa)
            return total
    elif kind == CompositionKind.TK:
        def summand(k):
            s_k = model.sigma(k)
            total = mpmath.mpf(0)
            for (j, b), c in B.entries():
                c = c(k)
                s_kb = model.sigma(k + b)
                for (l, _), t in A.entries(-b):
                    total += c * t(k + b) * overlap(l, s_kb, j, s_k)
            return total * (model.p_prime(k) + mpmath.mpmathify(mu) ** 2) ** (-N)
    elif kind == CompositionKind.BOUNDARY:
        symbol = A.trace_normal()
        if symbol is None:
            raise ValueError(f"operator {A.name} has vanishing tr_n")

        def summand(k):
            return symbol(k) * (model.p_prime(k) + mpmath.mpmathify(mu) ** 2) ** (-N)
    elif kind == CompositionKind.IDENTITY:
        if part == ElementKind.Q:
            def summand(k):
                return _normal_density_fn(N)(model.kappa(k, mu))
        elif part == ElementKind.G:
            def summand(k):
                return -model.kappa(k, mu) ** (-2 * N) / 4
        else:
            raise ValueError(f"identity densities exist for Q^N_+ and G^(N), not {part.value}")
    elif kind == CompositionKind.DIRECT:
        symbol = A.trace_normal()
        if symbol is None:
            raise ValueError(f"operator {A.name} has vanishing tr_n")

        def summand(k):
            return symbol(k)
    else:
        raise ValueError(f"unknown composition kind {kind}")
    return summand


def _check_operands(composition: Composition):
    needs = {
        CompositionKind.SINGLE: (OperatorKind.SGO, None),
        CompositionKind.PRODUCT: (OperatorKind.SGO, OperatorKind.SGO),
        CompositionKind.COMMUTATOR: (OperatorKind.SGO, OperatorKind.SGO),
        CompositionKind.KT: (OperatorKind.POISSON, OperatorKind.TRACEOP),
        CompositionKind.TK: (OperatorKind.TRACEOP, OperatorKind.POISSON),
        CompositionKind.BOUNDARY: (None, None),
        CompositionKind.IDENTITY: (None, None),
        CompositionKind.DIRECT: (OperatorKind.SGO, None),
    }[composition.kind]
    for operand, kind in zip((composition.first, composition.second), needs):
        if kind is not None and (operand is None or operand.kind != kind):
            raise ValueError(f"{composition.kind.value} needs a {kind.value} operand")
    if composition.kind == CompositionKind.BOUNDARY and composition.first is None:
        raise ValueError("boundary needs an s.g.o. or boundary operator")


def _tail(summand, K: int, mu):
    def pair(t):
        return summand(t) + summand(-t)

    start = mpmath.mpf(K + 1)
    mu = mpmath.mpf(mu) if mu is not None else mpmath.mpf(1)
    integral = mpmath.quad(pair, [start, start + mu, start + 10 * mu, mpmath.inf])
    value, error = mpmath.sumem(pair, [start, mpmath.inf], integral=integral, error=True)
    return value, abs(error)


def mode_sum(summand, K: int, mu=None):
    """Σ_k summand(k) in the order 0, 1, -1, 2, -2, ..., K, -K, plus an Euler-Maclaurin tail."""
    total = summand(0)
    for k in range(1, K + 1):
        total += summand(k)
        total += summand(-k)
    tail, error = _tail(summand, K, mu)
    return total + tail, error


@dataclass(frozen=True)
class TraceSample:
    mu: object
    value: object
    tail_bound: object
    K: int

    @property
    def error(self):
        return self.tail_bound


@dataclass(frozen=True)
class TraceSamples:
    composition: str
    N: int
    samples: tuple = field(default_factory=tuple)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["mu", "value_re", "value_im", "tail_bound"])
        for s in self.samples:
            value = mpmath.mpmathify(s.value)
            writer.writerow([mpmath.nstr(s.mu, 17), mpmath.nstr(mpmath.re(value), 25),
                             mpmath.nstr(mpmath.im(value), 25), mpmath.nstr(s.tail_bound, 6)])
        return out.getvalue()


@mlflow.trace(span_type=SpanType.TOOL)
def trace_sample(model: CylinderModel, composition: Composition, mu_grid, N: int = 1, K: int = DEFAULT_K,
                 tolerance=None, K_max: int | None = None) -> TraceSamples:
    """
    Tr over the half-cylinder at each mu of the grid. The tail bound is the Euler-Maclaurin error
    estimate; while it exceeds tolerance * |value| the mode cutoff K is doubled up to K_max.
    """
    _check_operands(composition)
    tolerance = mpmath.mpf(10) ** (-(mpmath.mp.dps - 10)) if tolerance is None else mpmath.mpf(tolerance)
    K_max = K_max or 8 * K
    samples = []
    for mu in mu_grid:
        mu = mpmath.mpmathify(mu)
        summand = _summand(model, composition, N, mu)
        cutoff = K
        while True:
            value, bound = mode_sum(summand, cutoff, mu)
            if bound <= tolerance * max(abs(value), mpmath.mpf(10) ** (-mpmath.mp.dps)):
                break
            if 2 * cutoff > K_max:
                raise RuntimeError(f"trace_sample: tail bound {mpmath.nstr(bound, 3)} at mu = {mpmath.nstr(mu, 6)} "
                                   f"stays above tolerance up to K = {cutoff}")
            cutoff *= 2
            log(f"[TRACE] mu={mpmath.nstr(mu, 6)}: raising K to {cutoff}")
        samples.append(TraceSample(mu, value, bound, cutoff))
    log(f"[TRACE] {composition.label()}: {len(samples)} samples")
    return TraceSamples(composition.label(), N, tuple(samples))


def direct_trace(model: CylinderModel, operator: CylinderOperator, K: int = DEFAULT_K):
    """Tr A = Σ_k Σ_j c_{jj,0}(k), for orders below -1 where the sum converges."""
    if operator.order >= -1:
        raise ValueError(f"Tr A diverges for order {operator.order} on the cylinder")
    summand = _summand(model, Composition(CompositionKind.DIRECT, operator), 1, None)
    return mode_sum(summand, K)


def plain_trace(model: CylinderModel, composition: Composition, K: int = DEFAULT_K):
    """Tr(A B) or Tr([A, B]) without resolvent, for trace-class products."""
    if composition.kind not in (CompositionKind.PRODUCT, CompositionKind.COMMUTATOR):
        raise ValueError(f"plain_trace takes products and commutators, not {composition.kind.value}")
    _check_operands(composition)
    bare = Composition(composition.kind, composition.first, composition.second, ElementKind.OVERLAP)
    return mode_sum(_summand(model, bare, 1, None), K)


def continuum_trace(model: CylinderModel, composition: Composition, mu, N: int = 1):
    """∫ summand(xi') d̄xi' over R, the continuum counterpart of the mode sum."""
    mu = mpmath.mpmathify(mu)
    summand = _summand(model, composition, N, mu)
    points = [-mpmath.inf, -10 * mu, -mu, -1, -0.5, 0, 0.5, 1, mu, 10 * mu, mpmath.inf]
    return mpmath.quad(summand, points) / (2 * mpmath.pi)


def poisson_gap(model: CylinderModel, composition: Composition, mu, N: int = 1, K: int = DEFAULT_K):
    """
    |mode sum - 2 pi continuum integral|. Rapidly decreasing for the identity densities; with a
    symbol factor g the gap keeps a mu^-2N term equal to the lattice minus continuum finite part.
    """
    value, _ = mode_sum(_summand(model, composition, N, mu), K, mu)
    return abs(value - 2 * mpmath.pi * continuum_trace(model, composition, mu, N))


def alpha_sum(model: CylinderModel, g: ClassicalSymbol, mu, N: int = 1):
    """∫ g(xi') alpha^(N)(xi', mu) d̄xi' over R^n' with the cylinder's sigma and kappa."""
    alpha = alpha_N(model.elliptic_model(), N)
    mu = mpmath.mpmathify(mu)
    if g.dimension == 1:
        def integrand(xi):
            return g(xi) * alpha.at(model.binding(xi, mu))

        points = [-mpmath.inf, -10 * mu, -mu, -1, -0.5, 0, 0.5, 1, mu, 10 * mu, mpmath.inf]
        return mpmath.quad(integrand, points) / (2 * mpmath.pi)
    h = 2 * mpmath.pi / CIRCLE_NODES

    def radial(r):
        ring = sum((g((r * mpmath.cos(h * i), r * mpmath.sin(h * i))) for i in range(CIRCLE_NODES)), mpmath.mpf(0))
        return r * ring * h * alpha.at(model.binding(r, mu))

    return mpmath.quad(radial, [0, 0.5, 1, mu, 10 * mu, mpmath.inf]) / (2 * mpmath.pi) ** 2
