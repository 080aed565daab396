"""
Rational functions of the normal covariable xi_n with symbolic coefficients.

A RatFun is kept in simple-fraction form: a polynomial part plus a finite map
(pole atom, order) -> coefficient. Coefficients are sympy expressions in the atoms
sigma, kappa_plus, kappa_minus, mu; they are compared numerically (see quasitrace.coef_equal).

All line integrals use the slashed measure d̄xi_n = dxi_n / (2 pi).
"""
from dataclasses import dataclass
from enum import Enum
from math import comb
from typing import Mapping

import mpmath
import sympy

from quasitrace import SIGMA, KAPPA_PLUS, KAPPA_MINUS, XI, Binding, evaluate, is_zero, random_bindings

CoefExpr = sympy.Expr

_U = sympy.Symbol("u")


class PoleAtom(str, Enum):
    """The four pole factors F = c + s*i*xi_n; the pole sits at xi_n = i*s*c."""
    SIGMA_PLUS = "sigma_plus"
    SIGMA_MINUS = "sigma_minus"
    KAPPA_PLUS = "kappa_plus"
    KAPPA_MINUS = "kappa_minus"

    @property
    def constant(self) -> sympy.Expr:
        if self in (PoleAtom.SIGMA_PLUS, PoleAtom.SIGMA_MINUS):
            return SIGMA
        return KAPPA_PLUS if self == PoleAtom.KAPPA_PLUS else KAPPA_MINUS

    @property
    def sign(self) -> int:
        return 1 if self in (PoleAtom.SIGMA_PLUS, PoleAtom.KAPPA_PLUS) else -1

    @property
    def upper(self) -> bool:
        return self.sign > 0

    @property
    def location(self) -> sympy.Expr:
        return sympy.I * self.sign * self.constant

    def factor(self, var=XI) -> sympy.Expr:
        return self.constant + self.sign * sympy.I * var

    def numeric_location(self, binding: Binding):
        return 1j * self.sign * evaluate(self.constant, binding)

    def numeric_factor(self, xi, binding: Binding):
        return evaluate(self.constant, binding) + self.sign * 1j * xi


UPPER_ATOMS = (PoleAtom.SIGMA_PLUS, PoleAtom.KAPPA_PLUS)
LOWER_ATOMS = (PoleAtom.SIGMA_MINUS, PoleAtom.KAPPA_MINUS)


def _nonzero(expr) -> bool:
    return sympy.sympify(expr) != 0


@dataclass(frozen=True)
class RatFun:
    polynomial: tuple = ()
    fractions: tuple = ()

    @staticmethod
    def build(polynomial=(), fractions: Mapping | None = None) -> "RatFun":
        """Canonical constructor: merges entries with equal (atom, order) and drops literal zeros."""
        merged = {}
        for (atom, order), coef in (fractions or {}).items():
            if order < 1:
                raise ValueError(f"fraction order must be >= 1, got {order}")
            key = (PoleAtom(atom), int(order))
            merged[key] = merged.get(key, sympy.Integer(0)) + sympy.sympify(coef)
        items = tuple(sorted(((k, v) for k, v in merged.items() if _nonzero(v)),
                             key=lambda item: (item[0][0].value, item[0][1])))
        poly = [sympy.sympify(c) for c in polynomial]
        while poly and not _nonzero(poly[-1]):
            poly.pop()
        return RatFun(tuple(poly), items)

    @staticmethod
    def simple(atom: PoleAtom, order: int, coef=1) -> "RatFun":
        return RatFun.build(fractions={(atom, order): coef})

    @staticmethod
    def constant(value) -> "RatFun":
        return RatFun.build(polynomial=(value,))

    @property
    def terms(self) -> dict:
        return dict(self.fractions)

    @property
    def atoms(self) -> set:
        return {atom for (atom, _), _ in self.fractions}

    def max_order(self, atom: PoleAtom) -> int:
        return max((order for (a, order), _ in self.fractions if a == atom), default=0)

    @property
    def is_proper(self) -> bool:
        return not self.polynomial

    def __add__(self, other):
        if not isinstance(other, RatFun):
            other = RatFun.constant(other)
        fractions = self.terms
        for key, coef in other.fractions:
            fractions[key] = fractions.get(key, sympy.Integer(0)) + coef
        size = max(len(self.polynomial), len(other.polynomial))
        poly = [sympy.Integer(0)] * size
        for i, c in enumerate(self.polynomial):
            poly[i] += c
        for i, c in enumerate(other.polynomial):
            poly[i] += c
        return RatFun.build(poly, fractions)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-other if isinstance(other, RatFun) else -sympy.sympify(other))

    def scale(self, factor) -> "RatFun":
        factor = sympy.sympify(factor)
        return RatFun.build([factor * c for c in self.polynomial],
                            {key: factor * coef for key, coef in self.fractions})

    def __mul__(self, other):
        if not isinstance(other, RatFun):
            return self.scale(other)
        result = RatFun()
        poly_self = _poly_expr(self.polynomial)
        poly_other = _poly_expr(other.polynomial)
        if self.polynomial and other.polynomial:
            result = result + RatFun.build(sympy.Poly(sympy.expand(poly_self * poly_other), XI).all_coeffs()[::-1])
        if self.polynomial:
            for (atom, order), coef in other.fractions:
                result = result + partial_fractions(poly_self * coef, {atom: order})
        if other.polynomial:
            for (atom, order), coef in self.fractions:
                result = result + partial_fractions(poly_other * coef, {atom: order})
        for (atom_a, order_a), coef_a in self.fractions:
            for (atom_b, order_b), coef_b in other.fractions:
                denominator = {atom_a: order_a}
                denominator[atom_b] = denominator.get(atom_b, 0) + order_b
                result = result + partial_fractions(coef_a * coef_b, denominator)
        return result

    __rmul__ = __mul__

    def to_expr(self, var=XI) -> sympy.Expr:
        expr = _poly_expr(self.polynomial, var)
        for (atom, order), coef in self.fractions:
            expr += coef * atom.factor(var) ** (-order)
        return expr

    def evaluate(self, xi, binding: Binding):
        value = mpmath.mpf(0)
        for power, coef in enumerate(self.polynomial):
            value += evaluate(coef, binding) * mpmath.mpmathify(xi) ** power
        for (atom, order), coef in self.fractions:
            value += evaluate(coef, binding) * atom.numeric_factor(xi, binding) ** (-order)
        return value

    def asymptotic_coefficient(self, degree: int, binding: Binding):
        """Coefficient of xi_n^(-degree) in the expansion at infinity (degree >= 1)."""
        value = mpmath.mpf(0)
        for (atom, order), coef in self.fractions:
            if order > degree:
                continue
            c = evaluate(atom.constant, binding)
            s_i = 1j * atom.sign
            value += evaluate(coef, binding) * comb_signed(-order, degree - order) * c ** (degree - order) \
                * s_i ** (-degree)
        return value

    def decay_order(self, binding: Binding | None = None, max_degree: int = 64) -> int:
        """
        Exponent d with f = O(xi_n^-d) at infinity; negative for a nonzero polynomial part.
        Cancellations between fractions are detected numerically at the binding.
        """
        if self.polynomial:
            return -(len(self.polynomial) - 1)
        if not self.fractions:
            return max_degree
        binding = binding or random_bindings(1, seed=7)[0]
        scale = max([abs(evaluate(coef, binding)) for _, coef in self.fractions] + [mpmath.mpf(1)])
        tolerance = mpmath.mpf(10) ** (-(mpmath.mp.dps // 2)) * scale
        for degree in range(1, max_degree + 1):
            if abs(self.asymptotic_coefficient(degree, binding)) > tolerance:
                return degree
        return max_degree


def comb_signed(n: int, k: int) -> int:
    """Binomial coefficient binom(n, k) for negative integer n."""
    if n >= 0:
        return comb(n, k)
    return (-1) ** k * comb(-n + k - 1, k)


def _poly_expr(coefficients, var=XI) -> sympy.Expr:
    return sum((c * var ** i for i, c in enumerate(coefficients)), sympy.Integer(0))


def _series_inverse_power(a, b, power: int, size: int) -> list:
    """Coefficients of (a + b*u)^(-power) up to u^(size-1)."""
    return [comb_signed(-power, r) * b ** r * a ** (-power - r) for r in range(size)]


def _series_product(left: list, right: list, size: int) -> list:
    out = [sympy.Integer(0)] * size
    for i, x in enumerate(left[:size]):
        if x == 0:
            continue
        for j, y in enumerate(right[:size - i]):
            out[i + j] += x * y
    return out


def partial_fractions(numerator, denominator: Mapping) -> RatFun:
    """
    Simple-fraction decomposition of numerator / prod(F_atom ** order).

    The numerator is a polynomial in xi_n (sympy expression or ascending coefficient list).
    Near each pole, with u = F_atom, every other factor is linear in u and is expanded by the
    binomial series; the principal part is read off from the truncated product. A polynomial
    part appears when the numerator degree reaches the denominator degree.
    """
    if isinstance(numerator, (list, tuple)):
        numerator = _poly_expr([sympy.sympify(c) for c in numerator])
    numerator = sympy.expand(sympy.sympify(numerator))
    denominator = {PoleAtom(atom): int(order) for atom, order in denominator.items() if order}
    if any(order < 0 for order in denominator.values()):
        raise ValueError("denominator orders must be non-negative")
    if numerator == 0:
        return RatFun()
    if not denominator:
        return RatFun.build(sympy.Poly(numerator, XI).all_coeffs()[::-1])

    fractions = {}
    for atom, order in denominator.items():
        c, s = atom.constant, atom.sign
        shifted = sympy.expand(numerator.subs(XI, -s * sympy.I * (_U - c)))
        num_series = sympy.Poly(shifted, _U).all_coeffs()[::-1]
        series = [sympy.sympify(x) for x in num_series[:order]] + [sympy.Integer(0)] * max(0, order - len(num_series))
        for other, other_order in denominator.items():
            if other == atom:
                continue
            a = other.constant - other.sign * s * c
            b = sympy.Integer(other.sign * s)
            series = _series_product(series, _series_inverse_power(a, b, other_order, order), order)
        for j in range(1, order + 1):
            fractions[(atom, j)] = series[order - j]

    polynomial = ()
    total = sum(denominator.values())
    if sympy.degree(numerator, XI) >= total:
        denominator_expr = sympy.expand(sympy.Mul(*[atom.factor() ** order for atom, order in denominator.items()]))
        quotient, _ = sympy.div(sympy.Poly(numerator, XI), sympy.Poly(denominator_expr, XI))
        polynomial = tuple(quotient.all_coeffs()[::-1])
    return RatFun.build(polynomial, fractions)


def from_factors(exponents: Mapping, coef=1) -> RatFun:
    """
    coef * prod(F_atom ** exponent) with signed integer exponents: positive exponents go to the
    numerator, negative ones to the denominator.
    """
    numerator = sympy.sympify(coef)
    denominator = {}
    for atom, exponent in exponents.items():
        atom = PoleAtom(atom)
        if exponent > 0:
            numerator *= atom.factor() ** exponent
        elif exponent < 0:
            denominator[atom] = -exponent
    return partial_fractions(sympy.expand(numerator), denominator)


def recompose_equal(f: RatFun, numerator, denominator: Mapping, bindings=None, trials: int = 5,
                    seed: int = 0) -> bool:
    """Checks f against numerator / prod(F ** order) at random complex xi_n and random bindings."""
    numerator = sympy.sympify(numerator) if not isinstance(numerator, (list, tuple)) else _poly_expr(numerator)
    bindings = bindings or random_bindings(trials, seed)
    tolerance = mpmath.mpf(10) ** (-(mpmath.mp.dps // 2))
    for index, binding in enumerate(bindings):
        xi = mpmath.mpc(0.3 + 0.17 * index, -0.41 + 0.05 * index)
        expected = evaluate(numerator.subs(XI, sympy.Float(str(xi.real), 30) + sympy.I * sympy.Float(str(xi.imag), 30)),
                            binding)
        for atom, order in denominator.items():
            expected /= PoleAtom(atom).numeric_factor(xi, binding) ** order
        actual = f.evaluate(xi, binding)
        if abs(actual - expected) > tolerance * max(mpmath.mpf(1), abs(expected)):
            return False
    return True


def h_split(f: RatFun) -> tuple[RatFun, RatFun]:
    """h+ keeps the fractions with poles in the upper half-plane, h- the rest."""
    if not f.is_proper:
        raise ValueError("h_split needs a proper rational function (no polynomial part)")
    upper = {key: coef for key, coef in f.fractions if key[0].upper}
    lower = {key: coef for key, coef in f.fractions if not key[0].upper}
    return RatFun.build(fractions=upper), RatFun.build(fractions=lower)


def integrate_line(f: RatFun, contour: str = "upper", check_decay: bool = True) -> CoefExpr:
    """
    ∫_R f(xi_n) d̄xi_n for f = O(xi_n^-2) without real poles.

    Closing the contour upward picks the order-one coefficients of upper poles, closing downward
    those of lower poles; the 2 pi of the residue theorem cancels against d̄xi_n.
    """
    if not f.is_proper:
        if all(is_zero(c) for c in f.polynomial):
            f = RatFun.build(fractions=f.terms)
        else:
            raise ValueError("integrate_line: nonzero polynomial part, the integral diverges")
    upper = sum((coef for (atom, order), coef in f.fractions if order == 1 and atom.upper), sympy.Integer(0))
    lower = sum((coef for (atom, order), coef in f.fractions if order == 1 and not atom.upper), sympy.Integer(0))
    if check_decay and not is_zero(upper - lower):
        raise ValueError("integrate_line: integrand decays like 1/xi_n, the integral diverges")
    if contour == "upper":
        return upper
    if contour == "lower":
        return lower
    raise ValueError(f"unknown contour {contour!r}")


def coef_lambda_derivative(expr, model) -> CoefExpr:
    derivatives = getattr(model, "atom_derivatives", None)
    if derivatives is None:
        raise ValueError("lambda_derivative: atoms are not bound to a model")
    expr = sympy.sympify(expr)
    return sum((sympy.diff(expr, atom) * rate for atom, rate in derivatives.items()
                if expr.has(atom)), sympy.Integer(0))


def lambda_derivative(f: RatFun, model) -> RatFun:
    """
    d/dlambda of f through the model's atom derivatives (mu^2 = -lambda, d sigma/d lambda = 0).
    A term A * F^-j contributes dA * F^-j - j * A * (dc/dlambda) * F^-(j+1).
    """
    derivatives = getattr(model, "atom_derivatives", None)
    if derivatives is None:
        raise ValueError("lambda_derivative: atoms are not bound to a model")
    polynomial = [coef_lambda_derivative(c, model) for c in f.polynomial]
    fractions = {}
    for (atom, order), coef in f.fractions:
        fractions[(atom, order)] = fractions.get((atom, order), sympy.Integer(0)) + coef_lambda_derivative(coef, model)
        rate = derivatives.get(atom.constant, sympy.Integer(0))
        if rate != 0:
            fractions[(atom, order + 1)] = fractions.get((atom, order + 1), sympy.Integer(0)) - order * coef * rate
    return RatFun.build(polynomial, fractions)


def residue_pairing(h: sympy.Expr, atom: PoleAtom, order: int, var=XI) -> CoefExpr:
    """
    ∫ h(xi) F_atom(xi)^-order d̄xi where h is analytic on the closing side of the pole.

    Closing around the pole of F gives i*s * (i*s)^-order * h^(order-1)(pole) / (order-1)!.
    """
    s_i = sympy.I * atom.sign
    derivative = sympy.diff(h, var, order - 1) if order > 1 else h
    value = derivative.subs(var, atom.location) / sympy.factorial(order - 1)
    return s_i ** (1 - order) * value


def integrate_factors(factors, coef=1, var=XI) -> sympy.Expr:
    """
    ∫ coef * prod (c + s*i*xi)^e d̄xi for factors (c, s, e) with arbitrary constants c.

    Used where more distinct constants appear than the four pole atoms hold. Factors with equal
    (c, s) are merged; the integral closes upward over the factors with s = +1 and e < 0.
    """
    merged = {}
    for constant, sign, exponent in factors:
        key = (sympy.sympify(constant), int(sign))
        merged[key] = merged.get(key, 0) + int(exponent)
    degree = sum(merged.values())
    if degree > -2:
        raise ValueError(f"integrate_factors: integrand decays like xi^{degree}, the integral diverges")
    total = sympy.Integer(0)
    for (constant, sign), exponent in merged.items():
        if sign < 0 or exponent >= 0:
            continue
        order = -exponent
        others = sympy.Mul(*[(c + s * sympy.I * var) ** e for (c, s), e in merged.items()
                             if (c, s) != (constant, sign) and e != 0])
        derivative = sympy.diff(others, var, order - 1) if order > 1 else others
        total += sympy.I ** (1 - order) * derivative.subs(var, sympy.I * constant) / sympy.factorial(order - 1)
    return sympy.sympify(coef) * total
