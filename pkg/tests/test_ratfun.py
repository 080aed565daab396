import mpmath
import pytest
import sympy

from quasitrace import SIGMA, KAPPA_PLUS, KAPPA_MINUS, XI, coef_equal, evaluate, random_bindings
from quasitrace.ratfun import (
    PoleAtom, RatFun, comb_signed, from_factors, h_split, integrate_factors, integrate_line, lambda_derivative,
    partial_fractions, recompose_equal, residue_pairing,
)
from quasitrace.resolvent import EllipticModel


def quad_line(f: RatFun, binding):
    return mpmath.quad(lambda x: f.evaluate(x, binding), [-mpmath.inf, -1, 0, 1, mpmath.inf]) / (2 * mpmath.pi)


def test_two_sided_sigma_pair_splits_evenly():
    f = partial_fractions(1, {PoleAtom.SIGMA_PLUS: 1, PoleAtom.SIGMA_MINUS: 1})
    assert f.is_proper
    assert coef_equal(f.terms[(PoleAtom.SIGMA_PLUS, 1)], 1 / (2 * SIGMA))
    assert coef_equal(f.terms[(PoleAtom.SIGMA_MINUS, 1)], 1 / (2 * SIGMA))
    assert coef_equal(integrate_line(f), 1 / (2 * SIGMA))


@pytest.mark.parametrize("numerator,denominator", [
    (1, {PoleAtom.KAPPA_PLUS: 2, PoleAtom.KAPPA_MINUS: 1}),
    (XI, {PoleAtom.SIGMA_PLUS: 1, PoleAtom.KAPPA_PLUS: 2, PoleAtom.SIGMA_MINUS: 1}),
    (XI ** 3 + SIGMA, {PoleAtom.SIGMA_MINUS: 3, PoleAtom.KAPPA_PLUS: 2}),
])
def test_partial_fractions_recompose(numerator, denominator):
    f = partial_fractions(numerator, denominator)
    assert recompose_equal(f, numerator, denominator)


def test_polynomial_part_when_numerator_degree_reaches_denominator():
    f = partial_fractions(XI ** 2, {PoleAtom.SIGMA_PLUS: 1})
    assert not f.is_proper
    assert recompose_equal(f, XI ** 2, {PoleAtom.SIGMA_PLUS: 1})
    with pytest.raises(ValueError):
        h_split(f)


def test_residue_integration_matches_quadrature():
    for index, binding in enumerate(random_bindings(6, seed=11)):
        f = from_factors({PoleAtom.SIGMA_PLUS: -2, PoleAtom.KAPPA_MINUS: -1, PoleAtom.KAPPA_PLUS: -1}, coef=1 + XI)
        exact = evaluate(integrate_line(f), binding)
        numeric = quad_line(f, binding)
        assert abs(exact - numeric) <= mpmath.mpf(10) ** -10 * max(1, abs(numeric)), index


def test_upper_and_lower_contours_agree():
    f = from_factors({PoleAtom.KAPPA_PLUS: -2, PoleAtom.SIGMA_MINUS: -1})
    assert coef_equal(integrate_line(f, "upper"), integrate_line(f, "lower"))


def test_slow_decay_is_rejected():
    with pytest.raises(ValueError):
        integrate_line(RatFun.simple(PoleAtom.SIGMA_PLUS, 1))
    with pytest.raises(ValueError):
        integrate_line(RatFun.build(polynomial=(1, 1)))


def test_h_split_sorts_by_half_plane():
    f = partial_fractions(1, {PoleAtom.KAPPA_PLUS: 1, PoleAtom.KAPPA_MINUS: 2, PoleAtom.SIGMA_PLUS: 1})
    upper, lower = h_split(f)
    assert upper.atoms <= {PoleAtom.SIGMA_PLUS, PoleAtom.KAPPA_PLUS}
    assert lower.atoms == {PoleAtom.KAPPA_MINUS}
    binding = random_bindings(1, seed=5)[0]
    xi = mpmath.mpf("0.7")
    assert abs(upper.evaluate(xi, binding) + lower.evaluate(xi, binding) - f.evaluate(xi, binding)) < 1e-20


def test_product_is_closed():
    a = RatFun.simple(PoleAtom.SIGMA_PLUS, 1)
    b = RatFun.simple(PoleAtom.KAPPA_MINUS, 2, SIGMA)
    product = a * b
    assert recompose_equal(product, SIGMA, {PoleAtom.SIGMA_PLUS: 1, PoleAtom.KAPPA_MINUS: 2})


def test_lambda_derivative_matches_finite_difference():
    model = EllipticModel()
    f = RatFun.simple(PoleAtom.KAPPA_PLUS, 1) * RatFun.simple(PoleAtom.KAPPA_MINUS, 1)
    derivative = lambda_derivative(f, model)
    sigma, xi, mu = mpmath.mpf("1.3"), mpmath.mpf("0.4"), mpmath.mpf("2.1")

    def value(lam):
        return f.evaluate(xi, model.bind(sigma, mpmath.sqrt(-lam)))

    lam = -mu ** 2
    expected = mpmath.diff(value, lam)
    assert abs(derivative.evaluate(xi, model.bind(sigma, mu)) - expected) < 1e-15


def test_lambda_derivative_needs_a_model():
    with pytest.raises(ValueError):
        lambda_derivative(RatFun.simple(PoleAtom.KAPPA_PLUS, 1), object())


def test_residue_pairing_double_pole():
    h = 1 / (KAPPA_MINUS - sympy.I * XI)
    value = residue_pairing(h, PoleAtom.KAPPA_PLUS, 2)
    f = partial_fractions(1, {PoleAtom.KAPPA_PLUS: 2, PoleAtom.KAPPA_MINUS: 1})
    assert coef_equal(value, integrate_line(f))


def test_integrate_factors_with_free_constants():
    s, t = sympy.symbols("s t", positive=True)
    value = integrate_factors([(s, 1, -1), (t, -1, -1)])
    assert sympy.simplify(value - 1 / (s + t)) == 0
    with pytest.raises(ValueError):
        integrate_factors([(s, 1, -1)])


def test_comb_signed():
    assert comb_signed(-1, 3) == -1
    assert comb_signed(-2, 2) == 3
    assert comb_signed(4, 2) == 6
