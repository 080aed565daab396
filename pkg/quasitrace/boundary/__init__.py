"""
Classical polyhomogeneous symbols on R^n' (n' in {1, 2}) and their regularized integrals.

Homogeneous terms are stored as (degree, values on the unit sphere) and extended inside the unit
ball by a fixed convention; the finite-part integral, cutoff integrals, residue densities and parity
classes are computed from that representation. Every integral uses d̄xi' = (2 pi)^-n' dxi'.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import mpmath
import sympy

THETA = sympy.Symbol("theta", real=True)
XI1 = sympy.Symbol("xi_1", real=True)
XI2 = sympy.Symbol("xi_2", real=True)

CIRCLE_NODES = 64
DEGREE_TOL = 1e-9


def _bump(s):
    return mpmath.exp(-1 / s) if s > 0 else mpmath.mpf(0)


def eta(t):
    """Smooth step: 1 for t <= 1/2, 0 for t >= 1."""
    t = mpmath.mpf(t)
    left = _bump(1 - t)
    right = _bump(t - mpmath.mpf(0.5))
    return left / (left + right)


def bracket(xi):
    """Smoothed norm [xi']: equals |xi'| for |xi'| >= 1 and 1 near 0."""
    r = _norm(xi)
    e = eta(r)
    return e + (1 - e) * r


def _norm(xi):
    if isinstance(xi, (tuple, list)):
        return mpmath.sqrt(sum(mpmath.mpmathify(x) ** 2 for x in xi))
    return abs(mpmath.mpmathify(xi))


class Extension(str, Enum):
    """How a homogeneous term continues inside the unit ball, along each ray."""
    GLUED = "glued"
    BRACKET = "bracket"
    CUT = "cut"

    def radial(self, r, degree):
        r = mpmath.mpf(r)
        if self == Extension.CUT:
            return r ** degree if r >= 1 else mpmath.mpf(1)
        if self == Extension.BRACKET:
            return bracket(r) ** degree
        e = eta(r)
        if e == 1:
            return mpmath.mpf(1)
        return e + (1 - e) * r ** degree


@dataclass(frozen=True)
class SymbolClassTag:
    m: float
    d: float
    s: float

    def weaken(self) -> tuple["SymbolClassTag", "SymbolClassTag"]:
        if self.s > 0:
            raise ValueError(f"only tags with s <= 0 can be weakened, got s = {self.s}")
        return SymbolClassTag(self.m + self.s, self.d, 0), SymbolClassTag(self.m, self.d + self.s, 0)

    def compose(self, other: "SymbolClassTag") -> "SymbolClassTag":
        return SymbolClassTag(self.m + other.m, self.d + other.d, self.s + other.s)

    def __str__(self):
        return f"S^{{{self.m:g},{self.d:g},{self.s:g}}}"


@dataclass(frozen=True)
class HomogeneousTerm:
    """
    f_d(xi') = sphere(xi'/|xi'|) * |xi'|^d for |xi'| >= 1.

    For n' = 1 the sphere part is the value pair (f(+1), f(-1)); for n' = 2 it is a sympy
    expression in THETA or a callable of the angle.
    """
    degree: float
    sphere: object
    extension: Extension = Extension.GLUED

    def sphere_value(self, omega):
        if isinstance(self.sphere, tuple):
            return mpmath.mpmathify(self.sphere[0] if omega > 0 else self.sphere[1])
        if isinstance(self.sphere, sympy.Expr):
            return mpmath.mpmathify(_compile_theta(self.sphere)(omega))
        return mpmath.mpmathify(self.sphere(omega))

    def __call__(self, xi):
        if isinstance(xi, (tuple, list)):
            r = _norm(xi)
            omega = mpmath.atan2(xi[1], xi[0]) if r > 0 else mpmath.mpf(0)
        else:
            xi = mpmath.mpmathify(xi)
            r, omega = abs(xi), (1 if xi >= 0 else -1)
        return self.sphere_value(omega) * self.extension.radial(r, self.degree)

    @property
    def dimension(self) -> int:
        return 1 if isinstance(self.sphere, tuple) else 2

    def scaled(self, factor) -> "HomogeneousTerm":
        if isinstance(self.sphere, tuple):
            return replace(self, sphere=(factor * self.sphere[0], factor * self.sphere[1]))
        if isinstance(self.sphere, sympy.Expr):
            return replace(self, sphere=sympy.sympify(factor) * self.sphere)
        base = self.sphere
        return replace(self, sphere=lambda theta: factor * base(theta))


_theta_cache = {}


def _compile_theta(expr):
    if expr not in _theta_cache:
        _theta_cache[expr] = sympy.lambdify(THETA, expr, modules="mpmath")
    return _theta_cache[expr]


@dataclass(frozen=True)
class ClassicalSymbol:
    order: float
    dimension: int
    terms: tuple = ()
    remainder: object = None
    tag: SymbolClassTag | None = None

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        for term in self.terms:
            if term.dimension != self.dimension:
                raise ValueError("homogeneous term does not match the symbol dimension")

    @staticmethod
    def homogeneous(degree, sphere, dimension=None, extension=Extension.GLUED) -> "ClassicalSymbol":
        term = HomogeneousTerm(degree, sphere, Extension(extension))
        return ClassicalSymbol(order=degree, dimension=dimension or term.dimension, terms=(term,))

    @staticmethod
    def from_function(func: Callable, order, dimension: int, terms=()) -> "ClassicalSymbol":
        """Wraps a full symbol f; the remainder is f minus the stored homogeneous terms."""
        terms = tuple(terms)

        def remainder(xi):
            return func(xi) - sum((term(xi) for term in terms), mpmath.mpf(0))

        return ClassicalSymbol(order=order, dimension=dimension, terms=terms, remainder=remainder)

    def remainder_value(self, xi):
        if self.remainder is None:
            return mpmath.mpf(0)
        if isinstance(self.remainder, sympy.Expr):
            variables = (XI1,) if self.dimension == 1 else (XI1, XI2)
            if self.remainder not in _remainder_cache:
                _remainder_cache[self.remainder] = sympy.lambdify(variables, self.remainder, modules="mpmath")
            compiled = _remainder_cache[self.remainder]
            args = xi if isinstance(xi, (tuple, list)) else (xi,)
            return mpmath.mpmathify(compiled(*args))
        return mpmath.mpmathify(self.remainder(xi))

    def __call__(self, xi):
        return sum((term(xi) for term in self.terms), mpmath.mpf(0)) + self.remainder_value(xi)

    def __add__(self, other: "ClassicalSymbol") -> "ClassicalSymbol":
        if self.dimension != other.dimension:
            raise ValueError("cannot add symbols of different dimension")
        remainders = [s for s in (self, other) if s.remainder is not None]
        remainder = None
        if remainders:
            def remainder(xi):
                return sum((s.remainder_value(xi) for s in remainders), mpmath.mpf(0))
        return ClassicalSymbol(order=max(self.order, other.order), dimension=self.dimension,
                               terms=self.terms + other.terms, remainder=remainder)

    def scale(self, factor) -> "ClassicalSymbol":
        base = self
        remainder = None
        if self.remainder is not None:
            def remainder(xi):
                return factor * base.remainder_value(xi)
        return replace(self, terms=tuple(t.scaled(factor) for t in self.terms), remainder=remainder)

    def rotated(self, angle) -> "ClassicalSymbol":
        """f composed with a rotation of R^2 by angle."""
        if self.dimension != 2:
            raise ValueError("rotation needs n' = 2")
        base = self
        c, s = mpmath.cos(angle), mpmath.sin(angle)
        terms = tuple(HomogeneousTerm(t.degree, (lambda th, t=t: t.sphere_value(th + angle)), t.extension)
                      for t in self.terms)
        remainder = None
        if self.remainder is not None:
            def remainder(xi):
                return base.remainder_value((c * xi[0] - s * xi[1], s * xi[0] + c * xi[1]))
        return ClassicalSymbol(self.order, 2, terms, remainder, self.tag)

    def to_dict(self) -> dict:
        terms = []
        for term in self.terms:
            if isinstance(term.sphere, tuple):
                terms.append({"degree": float(term.degree), "extension": term.extension.value,
                              "sphere_values": [_num_to_json(v) for v in term.sphere]})
            elif isinstance(term.sphere, sympy.Expr):
                terms.append({"degree": float(term.degree), "extension": term.extension.value,
                              "expr": str(term.sphere)})
            else:
                raise ValueError("symbols with callable sphere data are not serializable")
        if self.remainder is not None and not isinstance(self.remainder, sympy.Expr):
            raise ValueError("symbols with a callable remainder are not serializable")
        return {
            "order": float(self.order),
            "dimension": self.dimension,
            "terms": terms,
            "remainder": str(self.remainder) if self.remainder is not None else None,
        }

    @staticmethod
    def from_dict(data: dict) -> "ClassicalSymbol":
        terms = []
        for item in data.get("terms", []):
            extension = Extension(item.get("extension", "glued"))
            if "sphere_values" in item:
                plus, minus = (_num_from_json(v) for v in item["sphere_values"])
                terms.append(HomogeneousTerm(item["degree"], (plus, minus), extension))
            elif "expr" in item:
                terms.append(HomogeneousTerm(item["degree"], sympy.sympify(item["expr"], locals={"theta": THETA}),
                                             extension))
            else:
                raise ValueError(f"term needs sphere_values or expr: {item}")
        remainder = data.get("remainder")
        if remainder is not None:
            remainder = sympy.sympify(remainder, locals={"xi_1": XI1, "xi_2": XI2})
        return ClassicalSymbol(order=data["order"], dimension=int(data.get("dimension", 1)),
                               terms=tuple(terms), remainder=remainder)


_remainder_cache = {}


def _num_to_json(value):
    value = mpmath.mpmathify(value)
    if isinstance(value, mpmath.mpc):
        return [float(value.real), float(value.imag)]
    return float(value)


def _num_from_json(value):
    if isinstance(value, (list, tuple)):
        return mpmath.mpc(*value)
    return mpmath.mpf(value)


@dataclass(frozen=True)
class FinitePartResult:
    value: object
    log_coefficient: object
    terms_used: int
    remainder_error: object
    integrable: bool

    def to_dict(self):
        return {
            "value": _num_to_json(self.value),
            "log_coefficient": _num_to_json(self.log_coefficient),
            "terms_used": self.terms_used,
            "remainder_error": float(self.remainder_error),
            "integrable": self.integrable,
        }


def sphere_integral(term: HomogeneousTerm, dimension: int):
    """∮_{|xi'|=1} f d̄S with d̄S = (2 pi)^-n' dS."""
    if dimension == 1:
        return (term.sphere_value(1) + term.sphere_value(-1)) / (2 * mpmath.pi)
    h = 2 * mpmath.pi / CIRCLE_NODES
    total = sum((term.sphere_value(h * i) for i in range(CIRCLE_NODES)), mpmath.mpf(0))
    return total * h / (2 * mpmath.pi) ** 2


def _radial_ball(term: HomogeneousTerm, dimension: int):
    if term.extension == Extension.CUT:
        return mpmath.mpf(1) / dimension
    return mpmath.quad(lambda r: r ** (dimension - 1) * term.extension.radial(r, term.degree), [0, 0.5, 1])


def ball_integral(term: HomogeneousTerm, dimension: int):
    """∫_{|xi'|<=1} f_d d̄xi'; the extension is radial so the integral factors."""
    return _radial_ball(term, dimension) * sphere_integral(term, dimension)


def _integrate(symbol_fn, dimension: int):
    """∫ symbol_fn d̄xi' over R^n'; returns (value, error estimate)."""
    inf = mpmath.inf
    if dimension == 1:
        points = [-inf, -1, -0.5, 0, 0.5, 1, inf]
        value, error = mpmath.quad(symbol_fn, points, error=True)
        return value / (2 * mpmath.pi), error / (2 * mpmath.pi)
    h = 2 * mpmath.pi / CIRCLE_NODES

    def radial(r):
        return r * sum((symbol_fn((r * mpmath.cos(h * i), r * mpmath.sin(h * i))) for i in range(CIRCLE_NODES)),
                       mpmath.mpf(0)) * h

    points = [0, 0.5, 1, inf]
    value, error = mpmath.quad(radial, points, error=True)
    scale = (2 * mpmath.pi) ** 2
    return value / scale, error / scale


def _required_terms(symbol: ClassicalSymbol, dimension: int):
    return [t for t in symbol.terms if t.degree + dimension > -DEGREE_TOL]


def finite_part(f: ClassicalSymbol, dimension: int | None = None, tolerance=None) -> FinitePartResult:
    """
    Regularized integral ⨍ f d̄xi'.

    Each stored homogeneous term of degree d contributes its ball integral minus ∮f_d/(d+n');
    at d = -n' only the ball integral enters and the sphere integral is returned as the log
    coefficient. The rest f - Σ f_d is integrated numerically and must be integrable.
    """
    n = dimension or f.dimension
    if n != f.dimension:
        raise ValueError(f"symbol lives on R^{f.dimension}, asked for n' = {n}")
    lowest = min((t.degree for t in f.terms), default=f.order)
    # the first omitted term has degree below every stored one
    omitted = lowest - 1 if f.terms else f.order
    if omitted + n > -DEGREE_TOL and f.remainder is not None:
        raise ValueError(f"finite_part: stored terms reach degree {lowest}, remainder not integrable in n' = {n}")
    if not f.terms and f.order + n > -DEGREE_TOL:
        raise ValueError(f"finite_part: order {f.order} needs homogeneous terms down to degree {-n}")

    value = mpmath.mpf(0)
    log_coefficient = mpmath.mpf(0)
    for term in f.terms:
        ball = ball_integral(term, n)
        sphere = sphere_integral(term, n)
        if abs(term.degree + n) < DEGREE_TOL:
            log_coefficient += sphere
            value += ball
        else:
            value += ball - sphere / (term.degree + n)

    error = mpmath.mpf(0)
    if f.remainder is not None:
        remainder, error = _integrate(f.remainder_value, n)
        tolerance = tolerance if tolerance is not None else mpmath.mpf(10) ** (-(mpmath.mp.dps // 3))
        if error > tolerance * max(mpmath.mpf(1), abs(remainder)):
            raise RuntimeError(f"finite_part: remainder quadrature did not converge (error {mpmath.nstr(error, 5)})")
        value += remainder
    return FinitePartResult(value=value, log_coefficient=log_coefficient, terms_used=len(f.terms),
                            remainder_error=error, integrable=not _required_terms(f, n))


def cutoff_integral(f: ClassicalSymbol, mu) -> object:
    """∫_{|xi'|<=mu} f d̄xi' by quadrature of the full symbol."""
    mu = mpmath.mpf(mu)
    if mu < 1:
        raise ValueError(f"cutoff_integral needs mu >= 1, got {mu}")
    if f.dimension == 1:
        points = [-mu, -1, -0.5, 0, 0.5, 1, mu]
        return mpmath.quad(f, points) / (2 * mpmath.pi)
    h = 2 * mpmath.pi / CIRCLE_NODES

    def radial(r):
        return r * sum((f((r * mpmath.cos(h * i), r * mpmath.sin(h * i))) for i in range(CIRCLE_NODES)),
                       mpmath.mpf(0)) * h

    points = [0, 0.5, 1] + ([mu] if mu > 1 else [])
    return mpmath.quad(radial, points) / (2 * mpmath.pi) ** 2


def residue_density(f: ClassicalSymbol, dimension: int | None = None):
    """∮ f_{-n'} d̄S; zero when no term of degree -n' is stored."""
    n = dimension or f.dimension
    return sum((sphere_integral(t, n) for t in f.terms if abs(t.degree + n) < DEGREE_TOL), mpmath.mpf(0))


def lattice_finite_part(f: ClassicalSymbol):
    """
    Constant term of Σ_{|k|<=K} f(k) as K -> infinity, for a one-dimensional symbol sampled on Z.

    A homogeneous term of degree d contributes (f_d(1) + f_d(-1)) zeta(-d), with Euler's constant in
    place of zeta(1). For d = 0, 1, 2, ... the partial sums are Faulhaber polynomials in K with no
    constant term, so those terms contribute nothing. The remainder is summed directly.
    """
    if f.dimension != 1:
        raise ValueError("lattice_finite_part needs n' = 1")
    total = f(0)
    for term in f.terms:
        degree = term.degree
        if degree > -DEGREE_TOL and abs(degree - mpmath.nint(degree)) < DEGREE_TOL:
            continue
        pair = term.sphere_value(1) + term.sphere_value(-1)
        if abs(degree + 1) < DEGREE_TOL:
            total += pair * mpmath.euler
        else:
            total += pair * mpmath.zeta(-degree)
    if f.remainder is not None:
        total += mpmath.nsum(lambda k: f.remainder_value(k) + f.remainder_value(-k), [1, mpmath.inf])
    return total


class ParityClass(str, Enum):
    EVEN_EVEN = "even_even"
    EVEN_ODD = "even_odd"
    NONE = "none"


@dataclass(frozen=True)
class ParityReport:
    parity: ParityClass
    flag: str | None = None
    details: tuple = field(default_factory=tuple)


def _antipode_ratio_ok(term: HomogeneousTerm, sign: int, tolerance) -> bool:
    if term.dimension == 1:
        samples = [(term.sphere_value(1), term.sphere_value(-1))]
    else:
        angles = [2 * mpmath.pi * i / 16 for i in range(16)]
        samples = [(term.sphere_value(a), term.sphere_value(a + mpmath.pi)) for a in angles]
    for value, antipode in samples:
        if abs(antipode - sign * value) > tolerance * max(mpmath.mpf(1), abs(value)):
            return False
    return True


def parity_classify(f: ClassicalSymbol, tolerance=1e-12) -> ParityReport:
    """
    even-even: f_{nu-j}(-xi') = (-1)^(nu-j) f_{nu-j}(xi'); even-odd: the same with (-1)^(nu-j-1).
    """
    nu = f.order
    if abs(nu - round(nu)) > DEGREE_TOL:
        return ParityReport(ParityClass.NONE, flag="non-integer order")
    nu = int(round(nu))
    even_even, even_odd = True, True
    details = []
    for term in f.terms:
        j = int(round(nu - term.degree))
        ee = _antipode_ratio_ok(term, (-1) ** (nu - j), tolerance)
        eo = _antipode_ratio_ok(term, (-1) ** (nu - j - 1), tolerance)
        details.append((j, ee, eo))
        even_even &= ee
        even_odd &= eo
    if even_even and not even_odd:
        return ParityReport(ParityClass.EVEN_EVEN, details=tuple(details))
    if even_odd and not even_even:
        return ParityReport(ParityClass.EVEN_ODD, details=tuple(details))
    if even_even and even_odd:
        return ParityReport(ParityClass.NONE, flag="all stored terms vanish", details=tuple(details))
    return ParityReport(ParityClass.NONE, flag="mixed parity", details=tuple(details))
