import mpmath
import pytest
import sympy

from quasitrace.boundary import (
    THETA, ClassicalSymbol, Extension, ParityClass, SymbolClassTag, bracket, cutoff_integral, eta, finite_part,
    lattice_finite_part, parity_classify, residue_density, sphere_integral,
)


def integrable():
    return ClassicalSymbol.from_dict({"order": -2, "dimension": 1, "terms": [], "remainder": "1/(1 + xi_1**2)"})


def test_integrable_symbol_has_plain_integral():
    result = finite_part(integrable())
    assert float(result.value) == pytest.approx(0.5, abs=1e-12)
    assert result.integrable
    assert result.log_coefficient == 0


def test_bracket_and_cutoff_function():
    assert eta(0.2) == 1
    assert eta(1.5) == 0
    assert 0 < eta(0.75) < 1
    assert bracket(0) == 1
    assert bracket(3) == 3
    assert bracket((3, 4)) == 5


@pytest.mark.parametrize("degree", [-0.5, -2.5, 0.5])
@pytest.mark.parametrize("extension", [Extension.GLUED, Extension.BRACKET, Extension.CUT])
def test_finite_part_is_constant_term_of_cutoff_integral_1d(degree, extension):
    f = ClassicalSymbol.homogeneous(degree, (mpmath.mpf(2), mpmath.mpf("0.5")), 1, extension)
    sphere = sphere_integral(f.terms[0], 1)
    value = finite_part(f).value
    for mu in (4, 16):
        regular = cutoff_integral(f, mu) - sphere * mpmath.mpf(mu) ** (degree + 1) / (degree + 1)
        assert abs(regular - value) < 1e-12


def test_degree_minus_n_gives_log_coefficient():
    f = ClassicalSymbol.homogeneous(-1, (mpmath.mpf(1), mpmath.mpf(3)), 1)
    result = finite_part(f)
    assert float(result.log_coefficient) == pytest.approx(float(4 / (2 * mpmath.pi)))
    assert float(residue_density(f)) == pytest.approx(float(result.log_coefficient))
    for mu in (5, 50):
        regular = cutoff_integral(f, mu) - result.log_coefficient * mpmath.log(mu)
        assert abs(regular - result.value) < 1e-12


def test_finite_part_2d_matches_cutoff_constant():
    f = ClassicalSymbol.homogeneous(-1.5, 1 + sympy.cos(THETA) ** 2, 2)
    sphere = sphere_integral(f.terms[0], 2)
    value = finite_part(f).value
    mu = 9
    regular = cutoff_integral(f, mu) - sphere * mpmath.mpf(mu) ** 0.5 / 0.5
    assert abs(regular - value) < 1e-10


def test_finite_part_rejects_missing_terms():
    with pytest.raises(ValueError):
        finite_part(ClassicalSymbol(order=-0.5, dimension=1))
    with pytest.raises(ValueError):
        finite_part(integrable(), 2)


def test_cutoff_radius_below_one_is_rejected():
    with pytest.raises(ValueError):
        cutoff_integral(integrable(), 0.5)


def test_lattice_finite_part_uses_zeta_values():
    f = ClassicalSymbol.homogeneous(-2, (mpmath.mpf(1), mpmath.mpf(1)), 1, Extension.BRACKET)
    assert float(lattice_finite_part(f)) == pytest.approx(float(1 + mpmath.pi ** 2 / 3))
    g = ClassicalSymbol.homogeneous(-1, (mpmath.mpf(1), mpmath.mpf(1)), 1, Extension.BRACKET)
    assert float(lattice_finite_part(g)) == pytest.approx(float(1 + 2 * mpmath.euler))


def test_lattice_finite_part_matches_partial_sums_for_convergent_order():
    f = ClassicalSymbol.homogeneous(-3, (mpmath.mpf(1), mpmath.mpf(2)), 1, Extension.BRACKET)
    direct = f(0) + mpmath.nsum(lambda k: f(k) + f(-k), [1, mpmath.inf])
    assert abs(lattice_finite_part(f) - direct) < 1e-15


@pytest.mark.parametrize("degree,sphere,expected", [
    (0, (1, 1), 1),
    (1, (1, 1), 1),
    (1, (2, 1), 2),
    (2, (1, 3), 1),
    (3, (1, 1), 1),
])
def test_lattice_finite_part_for_non_negative_integer_degree(degree, sphere, expected):
    f = ClassicalSymbol.homogeneous(degree, (mpmath.mpf(sphere[0]), mpmath.mpf(sphere[1])), 1, Extension.BRACKET)
    cutoffs = range(10, 12 + degree)
    partial = mpmath.matrix([f(0) + mpmath.fsum(f(k) + f(-k) for k in range(1, K + 1)) for K in cutoffs])
    # partial sums are polynomials of degree d + 1 in K; exact interpolation reads off the constant
    powers = mpmath.matrix([[mpmath.mpf(K) ** p for p in range(degree + 2)] for K in cutoffs])
    extrapolated = mpmath.lu_solve(powers, partial)[0]
    assert float(extrapolated) == pytest.approx(expected, abs=1e-12)
    assert float(lattice_finite_part(f)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("sphere,expected", [
    ((1, 1), ParityClass.EVEN_EVEN),
    ((1, -1), ParityClass.EVEN_ODD),
])
def test_parity_classify_1d(sphere, expected):
    f = ClassicalSymbol.homogeneous(-2, tuple(mpmath.mpf(v) for v in sphere), 1)
    assert parity_classify(f).parity == expected


def test_parity_classify_2d_and_non_integer_order():
    f = ClassicalSymbol.homogeneous(-1, sympy.cos(THETA), 2)
    assert parity_classify(f).parity == ParityClass.EVEN_EVEN
    g = ClassicalSymbol.homogeneous(-1.5, (mpmath.mpf(1), mpmath.mpf(1)), 1)
    report = parity_classify(g)
    assert report.parity == ParityClass.NONE
    assert report.flag == "non-integer order"


def test_symbol_class_tags():
    tag = SymbolClassTag(0, 0, -2)
    assert tag.weaken() == (SymbolClassTag(-2, 0, 0), SymbolClassTag(0, -2, 0))
    assert tag.compose(SymbolClassTag(1, 0, -1)) == SymbolClassTag(1, 0, -3)
    with pytest.raises(ValueError):
        SymbolClassTag(0, 0, 1).weaken()


def test_symbol_dict_form():
    f = ClassicalSymbol.homogeneous(-1.5, (mpmath.mpf(1), mpmath.mpf(-2)), 1, Extension.BRACKET)
    data = f.to_dict()
    assert data["terms"][0]["extension"] == "bracket"
    again = ClassicalSymbol.from_dict(data)
    assert float(again(mpmath.mpf(-3))) == pytest.approx(float(f(mpmath.mpf(-3))))
