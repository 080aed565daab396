import mpmath
import pytest

from quasitrace.boundary import ClassicalSymbol, Extension, ParityClass, finite_part, lattice_finite_part
from quasitrace.expansion import (
    ExpansionModel, Sample, fit_expansion, geometric_grid, parity_predict, predict_c0_psdo, predict_c0_sgo,
    predict_c0_smoothing, residue_relation_check, zeta_from_resolvent,
)
from quasitrace.laguerre import LaguerreSGO


def power(order, weights=(1, 1)):
    return ClassicalSymbol.homogeneous(order, tuple(mpmath.mpf(w) for w in weights), 1, Extension.BRACKET)


def samples_of(function, points=40):
    return [Sample(mu, function(mu)) for mu in geometric_grid(10, 1000, points)]


def test_geometric_grid_endpoints():
    grid = geometric_grid(10, 1000, 5)
    assert len(grid) == 5
    assert abs(grid[0] - 10) < 1e-20 and abs(grid[-1] - 1000) < 1e-15
    assert abs(grid[2] - 100) < 1e-15


def test_non_integer_order_has_no_logs():
    model = ExpansionModel.spanning(-1.5, 1, 2, depth=4)
    basis = model.basis()
    assert not any(t.log for t in basis)
    assert basis[0].exponent == -4
    assert {t.family for t in basis} == {"local", "global"}
    assert [t.exponent for t in basis] == sorted((t.exponent for t in basis), reverse=True)


def test_integer_order_merges_and_adds_logs():
    basis = ExpansionModel.spanning(-2, 1, 2, depth=4).basis()
    assert any(t.log for t in basis)
    merged = [t for t in basis if t.family == "merged"]
    assert merged and merged[0].label == "c[0]+c''[1]"
    assert len({(t.exponent, t.log) for t in basis}) == len(basis)


def test_fit_recovers_non_integer_expansion():
    model = ExpansionModel.spanning(-1.5, 1, 2, depth=4)
    with mpmath.workdps(50):
        report = fit_expansion(samples_of(lambda mu: 2 * mu ** -4.5 + 3 * mu ** -4 - mu ** -5.5 + mpmath.mpf("0.5") * mu ** -6),
                               model)
        assert report.resolved
        assert abs(report.constant_term().estimate - 3) < 1e-10
        assert abs(report.find(-4.5).estimate - 2) < 1e-10
        assert abs(report.find(-5.5).estimate + 1) < 1e-8
        assert abs(report.find(-7).estimate) < 1e-6


def test_fit_reads_log_coefficient():
    model = ExpansionModel.spanning(-2, 1, 2, depth=4)
    with mpmath.workdps(50):
        report = fit_expansion(samples_of(lambda mu: mu ** -4 * (mpmath.mpf("1.5") + mpmath.mpf("0.25") * mpmath.log(mu))
                                          + mpmath.mpf("0.7") * mu ** -5), model)
        assert abs(report.constant_term().estimate - mpmath.mpf("1.5")) < 1e-8
        assert abs(report.log_term(0) - mpmath.mpf("0.125")) < 1e-8
        zeta = zeta_from_resolvent(report)
        assert abs(zeta.C0 - mpmath.mpf("1.5")) < 1e-8
        assert abs(zeta.C_minus1 - mpmath.mpf("0.125")) < 1e-8
        assert zeta.provenance["C_minus1"] == "c'[0]"


def test_fit_needs_enough_points():
    model = ExpansionModel.spanning(-1.5, 1, 2, depth=4)
    with pytest.raises(ValueError):
        fit_expansion(samples_of(lambda mu: mu ** -4, points=8), model)


def test_noisy_fit_is_not_resolved():
    model = ExpansionModel.spanning(-1.5, 1, 2, depth=4)
    grid = geometric_grid(10, 1000, 40)
    noisy = [Sample(mu, mu ** -4 + (-1) ** i * mpmath.mpf(10) ** -9 * mu ** -4) for i, mu in enumerate(grid)]
    report = fit_expansion(noisy, model, tolerance=1e-12)
    assert not report.resolved
    assert "interval" in report.to_dict()["coefficients"][-1]


def test_fit_report_csv_header():
    model = ExpansionModel.spanning(-1.5, 1, 1, depth=2)
    report = fit_expansion(samples_of(lambda mu: mu ** -2 + mu ** -2.5), model)
    lines = report.to_csv().splitlines()
    assert lines[0] == "exponent,log_flag,estimate,stderr,stability"
    assert len(lines) == 1 + len(model.basis())


def test_sgo_prediction_is_boundary_finite_part():
    g = power(-0.5, (1, 2))
    prediction = predict_c0_sgo(g, 2)
    assert prediction.exact
    assert abs(prediction.value - finite_part(g, 1).value) < 1e-20
    lattice = predict_c0_sgo(g, 2, lattice=True)
    assert abs(lattice.value - lattice_finite_part(g)) < 1e-20
    flagged = predict_c0_sgo(power(-1), 2)
    assert not flagged.exact and flagged.flag == "modulo local terms"


def test_sgo_prediction_without_normal_trace_is_zero():
    g = LaguerreSGO({(0, 1): power(-2)})
    assert predict_c0_sgo(g, 2).value == 0


def test_psdo_prediction_needs_a_finite_volume():
    p = power(-2.5)
    with pytest.raises(ValueError):
        predict_c0_psdo(p, 1)
    with pytest.raises(ValueError):
        predict_c0_psdo(p, 2, volume=1)
    assert abs(predict_c0_psdo(p, 1, volume=2).value - 2 * finite_part(p).value) < 1e-20


def test_smoothing_prediction_is_the_trace():
    assert predict_c0_smoothing(mpmath.mpf("0.25")).value == mpmath.mpf("0.25")


def test_residue_relation():
    g = power(-1, (1, 3))
    predicted = 4 / (2 * mpmath.pi) / 2
    assert residue_relation_check(predicted, g, 2).status == "pass"
    assert residue_relation_check(predicted + 1, g, 2).status == "fail"


def test_parity_pattern_for_even_even_coefficients():
    g = LaguerreSGO({(0, 0): power(-2), (1, 1): power(-2, (3, 3))})
    pattern = parity_predict(g, 2, J_cut=4, K_cut=4)
    assert pattern.parity == ParityClass.EVEN_EVEN
    assert pattern.local == (1, 3)
    assert pattern.logs == (0, 2, 4)
    assert pattern.c0_equals_tr


def test_parity_pattern_reasons():
    mixed = LaguerreSGO({(0, 0): power(-2), (1, 1): power(-2, (1, -1))})
    assert parity_predict(mixed, 2).reason == "mixed or undefined parity"
    odd_dimension = LaguerreSGO({(0, 0): power(-2)})
    assert parity_predict(odd_dimension, 3).reason == "parity does not fit the dimension"
