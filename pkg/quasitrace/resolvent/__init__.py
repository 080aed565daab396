"""
Parameter-dependent symbols of the resolvent of a constant-coefficient second-order model.

The boundary-frozen principal symbol is p(xi) = a xi_n^2 + b xi_n + c(sigma), factored as
a (kappa_plus + i xi_n)(kappa_minus - i xi_n) = p + mu^2 with mu^2 = -lambda.
"""
from dataclasses import dataclass, field
from enum import Enum
from math import comb

import mpmath
import numpy
import sympy
from pydantic import BaseModel, ConfigDict, Field

from quasitrace import SIGMA, KAPPA_PLUS, KAPPA_MINUS, MU, XI, ETA, Binding, evaluate, log
from quasitrace.boundary import SymbolClassTag
from quasitrace.ratfun import (
    PoleAtom, RatFun, partial_fractions, h_split, integrate_line, lambda_derivative, coef_lambda_derivative,
)


class EllipticModel(BaseModel):
    """p_{1,2}(xi) = a xi_n^2 + b xi_n + c(sigma), plus a mass shift m^2 >= 0."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    a: float = Field(default=1.0, gt=0, description="coefficient of xi_n^2")
    b_expr: str = Field(default="0", description="coefficient of xi_n, expression in sigma")
    c_expr: str = Field(default="sigma**2", description="second-order tangential part, expression in sigma")
    mass2: float = Field(default=0.0, ge=0, description="mass shift m^2")
    sector_eps: float = Field(default=0.1, gt=0, lt=3.14159, description="aperture of the excluded sector")

    @property
    def b(self) -> sympy.Expr:
        return sympy.sympify(self.b_expr, locals={"sigma": SIGMA})

    @property
    def c(self) -> sympy.Expr:
        return sympy.sympify(self.c_expr, locals={"sigma": SIGMA})

    @property
    def symmetric(self) -> bool:
        return self.b == 0

    @property
    def atom_derivatives(self) -> dict:
        """d/dlambda of the atoms; kappa_plus - kappa_minus = i b / a is lambda-independent."""
        dkappa = -1 / (sympy.nsimplify(self.a) * (KAPPA_PLUS + KAPPA_MINUS))
        return {SIGMA: sympy.Integer(0), MU: -1 / (2 * MU), KAPPA_PLUS: dkappa, KAPPA_MINUS: dkappa}

    def massless(self) -> "EllipticModel":
        return self.model_copy(update={"mass2": 0.0})

    def symbol(self, sigma, xi_n, mu, massive: bool = True):
        """p_{1,2}(xi) + m^2 + mu^2 at numeric values."""
        b = _numeric(self.b, sigma)
        c = _numeric(self.c, sigma)
        shift = self.mass2 if massive else 0
        return self.a * mpmath.mpmathify(xi_n) ** 2 + b * xi_n + c + shift + mpmath.mpmathify(mu) ** 2

    def bind(self, sigma, mu, massive: bool = True) -> Binding:
        pair = kappa_roots(self, sigma, mu, massive=massive)
        return Binding(mpmath.mpf(sigma), pair.plus, pair.minus, mpmath.mpmathify(mu))

    def validate(self, samples: int = 32) -> None:
        """Strong ellipticity Re p_{1,2} > 0 on a sphere grid; raises ValueError otherwise."""
        for i in range(samples):
            angle = mpmath.pi * i / samples
            sigma, xi_n = abs(mpmath.cos(angle)), mpmath.sin(angle)
            value = self.a * xi_n ** 2 + _numeric(self.b, sigma) * xi_n + _numeric(self.c, sigma)
            if mpmath.re(value) <= 0:
                raise ValueError(f"model is not strongly elliptic at sigma={mpmath.nstr(sigma, 5)}, "
                                 f"xi_n={mpmath.nstr(xi_n, 5)}")

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def _numeric(expr, sigma):
    expr = sympy.sympify(expr)
    if not expr.free_symbols:
        value = complex(expr)
        return mpmath.mpf(value.real) if value.imag == 0 else mpmath.mpc(value)
    return mpmath.mpmathify(sympy.lambdify(SIGMA, expr, modules="mpmath")(mpmath.mpf(sigma)))


@dataclass(frozen=True)
class KappaPair:
    plus: object
    minus: object
    symbolic: bool = False

    def scaled(self, t) -> "KappaPair":
        return KappaPair(self.plus * t, self.minus * t, self.symbolic)


def kappa_roots(model: EllipticModel, sigma=None, mu=None, massive: bool = False) -> KappaPair:
    """
    Roots of a xi_n^2 + b xi_n + c + mu^2 as i kappa_plus (upper) and -i kappa_minus (lower).

    With sigma and mu omitted the closed forms (i b ± sqrt(4a(c + mu^2) - b^2)) / 2a are returned
    as sympy expressions; otherwise the numeric roots are sorted into half-planes.
    """
    shift = model.mass2 if massive else 0
    if sigma is None or mu is None:
        disc = 4 * model.a * (model.c + shift + MU ** 2) - model.b ** 2
        root = sympy.sqrt(disc)
        a = sympy.nsimplify(model.a)
        return KappaPair((sympy.I * model.b + root) / (2 * a), (-sympy.I * model.b + root) / (2 * a), symbolic=True)
    if sigma == 0 and mu == 0:
        raise ValueError("kappa_roots: (xi', mu) = (0, 0)")
    b = _numeric(model.b, sigma)
    c = _numeric(model.c, sigma)
    if model.symmetric:
        kappa = mpmath.sqrt((c + shift + mpmath.mpmathify(mu) ** 2) / model.a)
        if mpmath.re(kappa) <= 0:
            raise ValueError("kappa_roots: Re kappa must be positive")
        return KappaPair(kappa, kappa)
    roots = mpmath.polyroots([model.a, b, c + shift + mpmath.mpmathify(mu) ** 2], extraprec=20)
    plus = minus = None
    tolerance = mpmath.mpf(10) ** (-(mpmath.mp.dps // 2))
    for rho in roots:
        rho = mpmath.mpc(rho)
        if abs(rho.imag) <= tolerance * max(1, abs(rho)):
            raise ValueError(f"kappa_roots: real root {mpmath.nstr(rho, 8)}, ellipticity violated")
        if rho.imag > 0:
            plus = -1j * rho
        else:
            minus = 1j * rho
    if plus is None or minus is None:
        raise ValueError("kappa_roots: both roots lie in one half-plane")
    if mpmath.re(plus) <= 0 or mpmath.re(minus) <= 0:
        raise ValueError("kappa_roots: Re kappa must be positive")
    return KappaPair(plus, minus)


@dataclass(frozen=True)
class GeometricExpansion:
    """
    (p + mu^2)^-m = Σ_{j<L} c_j (-p)^j mu^(-2m-2j)
                   + Σ_{l=1..m} c'_l (-p)^(L+l-1) mu^(-2m-2L+2) (p + mu^2)^-l.
    """
    m: int
    L: int
    leading: tuple
    remainder: tuple

    def head(self, p, mu):
        p, mu = mpmath.mpmathify(p), mpmath.mpmathify(mu)
        return sum((c * (-p) ** j * mu ** (-2 * self.m - 2 * j) for j, c in enumerate(self.leading)), mpmath.mpf(0))

    def tail(self, p, mu):
        p, mu = mpmath.mpmathify(p), mpmath.mpmathify(mu)
        return sum((c * (-p) ** (self.L + l - 1) * mu ** (-2 * self.m - 2 * self.L + 2) * (p + mu ** 2) ** (-l)
                    for l, c in enumerate(self.remainder, start=1)), mpmath.mpf(0))

    def residual(self, p, mu):
        p, mu = mpmath.mpmathify(p), mpmath.mpmathify(mu)
        exact = (p + mu ** 2) ** (-self.m)
        return abs(self.head(p, mu) + self.tail(p, mu) - exact) / abs(exact)

    def growth_exponent(self, t=1, sizes=(10, 100, 1000, 10000)):
        """Fitted exponent of |mu^(2m+2L) * tail| along the ray mu = t * <xi>, p = <xi>^2."""
        xs, ys = [], []
        for s in sizes:
            s = mpmath.mpf(s)
            mu = t * s
            xs.append(float(mpmath.log(s)))
            ys.append(float(mpmath.log(abs(mu ** (2 * self.m + 2 * self.L) * self.tail(s ** 2, mu)))))
        # log-log slope
        slope, _ = numpy.polyfit(xs, ys, 1)
        return float(slope)


def geometric_expansion(m: int, L: int) -> GeometricExpansion:
    if m < 1 or L < 1:
        raise ValueError(f"geometric_expansion needs m >= 1 and L >= 1, got m={m}, L={L}")
    b = sympy.Symbol("b")
    leading = [comb(m + j - 1, j) for j in range(L)]
    unknowns = sympy.symbols(f"r1:{m + 1}")
    lhs = 1 - (1 - b) ** m * sum(c * b ** j for j, c in enumerate(leading))
    rhs = sum(r * b ** (L + l - 1) * (1 - b) ** (m - l) for l, r in enumerate(unknowns, start=1))
    equations = sympy.Poly(sympy.expand(lhs - rhs), b).all_coeffs()
    solution = sympy.solve(equations, unknowns, dict=True)[0]
    remainder = tuple(int(solution[r]) for r in unknowns)
    return GeometricExpansion(m=m, L=L, leading=tuple(leading), remainder=remainder)


@dataclass(frozen=True)
class ResolventTerm:
    """numerator * (p_{1,2} + mu^2)^-power, homogeneous of degree -2N-J."""
    J: int
    power: int
    numerator: sympy.Expr


@dataclass(frozen=True)
class ResolventSymbolN:
    model: EllipticModel
    N: int
    route: str
    terms: tuple

    def evaluate(self, sigma, xi_n, mu):
        if self.route == "exact":
            return self.model.symbol(sigma, xi_n, mu, massive=True) ** (-self.N)
        base = self.model.symbol(sigma, xi_n, mu, massive=False)
        return sum((mpmath.mpmathify(complex(t.numerator)) * base ** (-t.power) for t in self.terms), mpmath.mpf(0))

    def boundary_term(self, J: int) -> RatFun:
        """Term J at x_n = 0 in simple-fraction form."""
        for term in self.terms:
            if term.J == J:
                return boundary_decompose_term(self.model, term)
        return RatFun()


def resolvent_symbol(model: EllipticModel, N: int, J_max: int = 0, route: str = "homogeneous") -> ResolventSymbolN:
    """
    Symbol of (P_1 - lambda)^-N. The exact route keeps (p + m^2 + mu^2)^-N as one term (atoms bound
    to the massive roots); the homogeneous route expands the mass shift by the binomial series into
    terms of degree -2N-J with J = 2J'.
    """
    if J_max < 0:
        raise ValueError(f"J_max must be >= 0, got {J_max}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if route == "exact":
        return ResolventSymbolN(model, N, route, (ResolventTerm(0, N, sympy.Integer(1)),))
    if route != "homogeneous":
        raise ValueError(f"unknown route {route!r}")
    mass2 = sympy.nsimplify(model.mass2)
    terms = []
    for J in range(0, J_max + 1, 2):
        j = J // 2
        coefficient = comb(N - 1 + j, j) * (-mass2) ** j
        if coefficient != 0:
            terms.append(ResolventTerm(J, N + j, sympy.sympify(coefficient)))
    return ResolventSymbolN(model, N, route, tuple(terms))


def boundary_decompose_term(model: EllipticModel, term: ResolventTerm) -> RatFun:
    a = sympy.nsimplify(model.a)
    return partial_fractions(term.numerator * a ** (-term.power),
                             {PoleAtom.KAPPA_PLUS: term.power, PoleAtom.KAPPA_MINUS: term.power})


def boundary_decompose(symbol: ResolventSymbolN, J: int = 0) -> tuple[RatFun, RatFun]:
    """(h+ part, h- part) of the J-th homogeneous term at x_n = 0."""
    return h_split(symbol.boundary_term(J))


class SGOKind(str, Enum):
    G_LAMBDA_N = "G_lambda_N"
    G_PLUS_QN = "G_plus_QN"
    G_MINUS_QN = "G_minus_QN"


ROOT_SYMBOLS = {"kappa_plus": KAPPA_PLUS, "kappa_minus": KAPPA_MINUS}

POLE_PAIRS = {
    SGOKind.G_LAMBDA_N: ("kappa_plus", "kappa_minus"),
    SGOKind.G_PLUS_QN: ("kappa_plus", "kappa_plus"),
    SGOKind.G_MINUS_QN: ("kappa_minus", "kappa_minus"),
}


@dataclass(frozen=True)
class SGOResolventSymbol:
    """
    Σ s_{J,j,j'} (kappa_x + i xi_n)^-j (kappa_y - i eta_n)^-j' with (kappa_x, kappa_y) = pole_pair.

    terms maps (J, j, j') to the numerator. The resolvent kind carries (kappa_plus, kappa_minus); the
    leftover kinds carry one root in both factors.
    """
    kind: str
    N: int
    model: EllipticModel
    terms: dict = field(default_factory=dict)

    @property
    def pole_pair(self) -> tuple:
        return POLE_PAIRS[self.kind]

    @property
    def roots(self) -> tuple:
        """Symbols of the roots in the xi_n and eta_n factors."""
        return tuple(ROOT_SYMBOLS[name] for name in self.pole_pair)

    def next_power(self) -> "SGOResolventSymbol":
        """G^(N+1) = d/dlambda G^(N) / N."""
        derivatives = self.model.atom_derivatives
        rate_x, rate_y = (derivatives[root] for root in self.roots)
        out = {}

        def add(key, value):
            out[key] = out.get(key, sympy.Integer(0)) + value

        for (J, j, jp), coef in self.terms.items():
            add((J, j, jp), coef_lambda_derivative(coef, self.model) / self.N)
            add((J, j + 1, jp), -j * coef * rate_x / self.N)
            add((J, j, jp + 1), -jp * coef * rate_y / self.N)
        return SGOResolventSymbol(self.kind, self.N + 1, self.model, {k: v for k, v in out.items() if v != 0})

    def diagonal_atoms(self) -> tuple:
        """
        Pole atoms of the xi_n and eta_n factors on the diagonal. Only kappa_plus + i xi_n and
        kappa_minus - i xi_n are atoms; the other roots are available when the two coincide (b = 0).
        """
        atoms = (PoleAtom.KAPPA_PLUS, PoleAtom.KAPPA_MINUS)
        for root, atom in zip(self.pole_pair, atoms):
            if root != atom.value and not self.model.symmetric:
                raise ValueError(f"{self.kind}: no pole atom carries {root} on the "
                                 f"{'upper' if atom.upper else 'lower'} side when b != 0")
        return atoms

    def diagonal(self) -> RatFun:
        """g(xi_n, xi_n) as a rational function of xi_n."""
        atom_x, atom_y = self.diagonal_atoms()
        total = RatFun()
        for (_, j, jp), coef in self.terms.items():
            total = total + RatFun.simple(atom_x, j, coef) * RatFun.simple(atom_y, jp)
        return total

    def trace_normal(self) -> sympy.Expr:
        """tr_n g = ∫ g(xi_n, xi_n) d̄xi_n."""
        return sympy.simplify(integrate_line(self.diagonal()))

    def evaluate(self, xi_n, eta_n, binding: Binding):
        root_x, root_y = (getattr(binding, name) for name in self.pole_pair)
        total = mpmath.mpf(0)
        for (_, j, jp), coef in self.terms.items():
            total += evaluate(coef, binding) * (root_x + 1j * xi_n) ** (-j) * (root_y - 1j * eta_n) ** (-jp)
        return total

    def to_expr(self) -> sympy.Expr:
        root_x, root_y = self.roots
        return sum((coef * (root_x + sympy.I * XI) ** (-j) * (root_y - sympy.I * ETA) ** (-jp)
                    for (_, j, jp), coef in self.terms.items()), sympy.Integer(0))

    def tag(self) -> SymbolClassTag:
        return SymbolClassTag(0, 0, -2 * self.N - 1)

    def check_invariants(self, binding: Binding, t=mpmath.mpf("1.7")) -> list[str]:
        """Index bounds and strong homogeneity of degree j + j' - J - 2N - 1 of every numerator."""
        problems = []
        scaled = binding.scaled(t)
        for (J, j, jp), coef in self.terms.items():
            if j < 1 or jp < 1 or j + jp > 2 * J + self.N + 1:
                problems.append(f"index bounds violated at (J={J}, j={j}, j'={jp})")
            degree = j + jp - J - 2 * self.N - 1
            base = evaluate(coef, binding)
            if abs(base) == 0:
                continue
            ratio = evaluate(coef, scaled) / base
            if abs(ratio - t ** degree) > mpmath.mpf(10) ** (-(mpmath.mp.dps // 2)) * abs(t ** degree):
                problems.append(f"numerator at (J={J}, j={j}, j'={jp}) is not homogeneous of degree {degree}")
        return problems


def dirichlet_sgo_symbol(model: EllipticModel, N: int = 1) -> SGOResolventSymbol:
    """
    Singular Green part G^(N) of the Dirichlet resolvent, G_lambda = -K_lambda gamma_0 Q_{lambda,+}.

    The Poisson symbol is (kappa_plus + i xi_n)^-1 and gamma_0 Q_+ contributes the h- part of
    q = (p + mu^2)^-1 in eta_n; higher powers follow by lambda-derivatives.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    q = boundary_decompose_term(model, ResolventTerm(0, 1, sympy.Integer(1)))
    _, lower = h_split(q)
    terms = {}
    for (atom, order), coef in lower.fractions:
        terms[(0, 1, order)] = -coef
    symbol = SGOResolventSymbol(SGOKind.G_LAMBDA_N, 1, model, terms)
    while symbol.N < N:
        symbol = symbol.next_power()
    log(f"dirichlet symbol N={N}: {len(symbol.terms)} terms")
    return symbol


def leftover_sgo_symbol(model: EllipticModel, N: int = 1, sign: str = "-") -> SGOResolventSymbol:
    """
    G^-(Q^N) and G^+(Q^N) for even-in-xi_n models.

    The reflected kernel K_Q(x_n + y_n) of Q = e^{-kappa|x-y|}/(2 a kappa) transforms to
    (a (kappa + kappa))^-1 (kappa + i xi_n)^-1 (kappa - i eta_n)^-1; both kinds share this form and
    differ only in which root they carry.
    """
    if sign not in ("+", "-"):
        raise ValueError(f"sign must be '+' or '-', got {sign!r}")
    if not model.symmetric:
        raise ValueError("leftover_sgo_symbol: closed form only for b = 0 (odd terms in xi_n not supported)")
    a = sympy.nsimplify(model.a)
    kind = SGOKind.G_MINUS_QN if sign == "-" else SGOKind.G_PLUS_QN
    symbol = SGOResolventSymbol(kind, 1, model, {(0, 1, 1): 1 / (a * (KAPPA_PLUS + KAPPA_MINUS))})
    while symbol.N < N:
        symbol = symbol.next_power()
    return symbol


@dataclass(frozen=True)
class AlphaN:
    model: EllipticModel
    N: int
    expr: sympy.Expr

    def __call__(self, sigma, mu, massive: bool = True):
        return evaluate(self.expr, self.model.bind(sigma, mu, massive=massive))

    def at(self, binding: Binding):
        return evaluate(self.expr, binding)


def alpha_1_expr() -> sympy.Expr:
    total = KAPPA_PLUS + KAPPA_MINUS
    return 1 / (total * (KAPPA_PLUS + SIGMA)) + 1 / (total * (KAPPA_MINUS + SIGMA))


def alpha_N(model: EllipticModel, N: int = 1) -> AlphaN:
    """alpha^(N) = d^(N-1)/dlambda^(N-1) alpha^(1) / (N-1)!."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    expr = alpha_1_expr()
    for k in range(1, N):
        expr = coef_lambda_derivative(expr, model) / k
    return AlphaN(model, N, sympy.simplify(expr))


def lambda_power(f: RatFun, model: EllipticModel, N: int) -> RatFun:
    """d^(N-1)/dlambda^(N-1) f / (N-1)!, the passage from the first to the N-th resolvent power."""
    for k in range(1, N):
        f = lambda_derivative(f, model).scale(sympy.Rational(1, k))
    return f
