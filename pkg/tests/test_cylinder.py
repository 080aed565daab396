import mpmath
import pydantic
import pytest

from quasitrace.cylinder import (
    PRESETS, Composition, CompositionKind, CylinderModel, ElementKind, banded, boundary_psdo, continuum_trace,
    direct_trace, leftover_identity_check, matrix_element, mode_resolvent, mode_sum, overlap, plain_trace, poisson,
    poisson_gap, quadrature_element, rank_one, trace_sample, traceop,
)

MODEL = CylinderModel(alpha=1.0, mass2=1.0)
POINTS = [(mpmath.mpf("0.5"), mpmath.mpf("1.5")), (mpmath.mpf(2), mpmath.mpf("0.7"))]


def test_model_validation():
    with pytest.raises(pydantic.ValidationError):
        CylinderModel(alpha=0)
    with pytest.raises(pydantic.ValidationError):
        CylinderModel(alpha=1, depth=3)
    assert MODEL.sigma(0) == 1 and MODEL.sigma(-3) == 3
    assert MODEL.kappa(2, 1) == mpmath.sqrt(6)


def test_lambda_on_the_spectrum_is_rejected():
    with pytest.raises(ValueError):
        MODEL.kappa_lambda(1, 3)
    with pytest.raises(ValueError):
        mode_resolvent(MODEL, 1)
    with pytest.raises(ValueError):
        mode_resolvent(MODEL, 1, mu=1, N=0)


@pytest.mark.parametrize("N", [1, 2])
def test_mode_resolvent_kernel(N):
    r = mode_resolvent(MODEL, 1, mu=2, N=N)
    assert r.dirichlet_residual([mpmath.mpf("0.3"), mpmath.mpf(4)]) < 1e-25
    assert r.symmetry_residual(POINTS) < 1e-25
    assert r.ode_residual(POINTS) < 1e-8
    assert abs(r.trace_g() - r.trace_g_exact()) < 1e-20


def test_leftover_identity_on_one_mode():
    assert leftover_identity_check(MODEL, 2, 3, POINTS) < 1e-20


@pytest.mark.parametrize("j, l", [(0, 0), (0, 2), (3, 3)])
def test_overlap_is_orthonormal_at_equal_sigma(j, l):
    assert abs(overlap(j, 2, l, 2) - (1 if j == l else 0)) < 1e-25


def test_overlap_across_sigmas_is_a_contraction():
    value = overlap(0, 1, 0, 3)
    assert 0 < value < 1
    assert abs(value - 2 * mpmath.sqrt(3) / 4) < 1e-25


@pytest.mark.slow
@pytest.mark.parametrize("kind, j, l", [(ElementKind.G, 1, 0), (ElementKind.R, 0, 0), (ElementKind.Q, 1, 1)])
def test_matrix_elements_match_kernel_quadrature(kind, j, l):
    r = mode_resolvent(MODEL, 1, mu=2)
    sigma = MODEL.sigma(1)
    closed = matrix_element(kind, j, l, 1, sigma, sigma, r.kappa)
    assert abs(closed - quadrature_element(r, j, l, kind.value)) < 1e-12


def test_mode_sum_with_tail():
    value, error = mode_sum(lambda k: 1 / (mpmath.mpf(k) ** 2 + 1), 40, 1)
    assert abs(value - mpmath.pi / mpmath.tanh(mpmath.pi)) < 1e-15
    assert error < 1e-10


def test_direct_trace():
    value, _ = direct_trace(MODEL, rank_one(-2))
    assert abs(value - (1 + mpmath.pi ** 2 / 3)) < 1e-12
    with pytest.raises(ValueError):
        direct_trace(MODEL, rank_one(-1))


def test_identity_g_density_sample():
    composition = Composition(CompositionKind.IDENTITY, part=ElementKind.G)
    samples = trace_sample(MODEL, composition, [2], N=1, tolerance=1e-15)
    a = mpmath.sqrt(5)
    expected = -mpmath.pi / (mpmath.tanh(mpmath.pi * a) * a) / 4
    assert len(samples) == 1
    assert abs(samples.samples[0].value - expected) < 1e-14
    assert samples.to_csv().splitlines()[0] == "mu,value_re,value_im,tail_bound"


def test_identity_density_gap_is_exponentially_small():
    composition = Composition(CompositionKind.IDENTITY, part=ElementKind.G)
    a = mpmath.sqrt(5)
    assert abs(continuum_trace(MODEL, composition, 2) + 1 / (8 * a)) < 1e-20
    gap = poisson_gap(MODEL, composition, 2)
    assert 0 < gap < 1e-4


def test_identity_needs_q_or_g():
    with pytest.raises(ValueError):
        trace_sample(MODEL, Composition(CompositionKind.IDENTITY, part=ElementKind.R), [2])


def test_operands_are_checked():
    with pytest.raises(ValueError):
        trace_sample(MODEL, Composition(CompositionKind.KT, rank_one(-2), traceop(-2)), [2])
    with pytest.raises(ValueError):
        plain_trace(MODEL, Composition(CompositionKind.SINGLE, rank_one(-2)))


def test_commutator_of_diagonal_operators_vanishes():
    A = rank_one(-1.5, weight=2, name="a")
    B = rank_one(-1.5, j=1, l=1, name="b")
    value, _ = plain_trace(MODEL, Composition(CompositionKind.COMMUTATOR, A, B), K=60)
    assert abs(value) < 1e-20


def test_preset_shapes():
    op = banded(-1.3, J=2, bandwidth=2, seed=5)
    assert len(op.coefficients) == 2 * 2 * 5
    assert op.bandwidth == 2 and op.laguerre_size == 2 and not op.x_independent
    assert op.to_dict() == banded(-1.3, J=2, bandwidth=2, seed=5).to_dict()
    assert op.to_dict() != banded(-1.3, J=2, bandwidth=2, seed=6).to_dict()
    assert rank_one(-2, j=1, l=1).trace_normal() is not None
    assert rank_one(-2, j=0, l=1).trace_normal() is None
    assert boundary_psdo(-2).laguerre_size == 0
    with pytest.raises(ValueError):
        poisson(-2).trace_normal()
    assert set(PRESETS) == {"rank_one", "diagonal", "banded", "poisson", "traceop", "boundary_psdo"}


def test_composition_label():
    composition = Composition(CompositionKind.PRODUCT, rank_one(-2, name="a"), rank_one(-2, name="b"))
    assert composition.label() == "product(a, b)[R^N]"
