import mpmath
import pytest

from quasitrace.config import parse_config
from quasitrace.expansion import ExpansionModel, FitCoefficient
from quasitrace.verify import SUITES, ClaimRow, Status, SuiteReport, SuiteRun, determinism_hash, verify_suite


def make_run(numeric=None, params=None):
    return SuiteRun("demo", parse_config({"numeric": numeric or {}}), params or {})


def coefficient(estimate, resolved=True):
    return FitCoefficient("c''[0]", -4, False, "global", mpmath.mpf(estimate), mpmath.mpf(0), mpmath.mpf(0), resolved)


def test_claim_statuses():
    run = make_run()
    assert run.claim("a", "close", 1, coefficient("1.0000001"), 1e-6).status == Status.PASS
    assert run.claim("a", "far", 1, coefficient("1.1"), 1e-6).status == Status.FAIL
    assert run.claim("a", "unresolved", 1, coefficient(1, resolved=False), 1e-6).status == Status.INCONCLUSIVE
    assert run.claim("a", "relative", 1000, 1000.5, 1e-3, relative=True).status == Status.PASS
    assert run.claim("a", "scaled", 0, 0.5, 1e-3, scale=1000).status == Status.PASS
    assert len(run.rows) == 5


def test_zero_bound_never_passes():
    run = make_run()
    assert run.claim("a", "exact zero", 0, 0, 1e-6, relative=True).status == Status.FAIL


def test_claim_tolerance_override():
    run = make_run({"claim_tolerance": 0.5})
    row = run.claim("a", "loose", 1, coefficient("1.3"), 1e-12)
    assert row.status == Status.PASS
    assert row.tolerance == 0.5


def test_resolvent_power():
    assert make_run().power(-2.5) == 3
    assert make_run().power(-0.5, 3) == 5
    assert make_run({"N": 2}).power(-2.5) == 2
    assert make_run(params={"N": 7}).power(-2.5) == 7


def test_suite_status_is_the_worst_row():
    rows = (ClaimRow("s", "a", "x", 0, 0, 0, 1.0, Status.PASS),
            ClaimRow("s", "a", "y", 0, 1, 1, 1.0, Status.INCONCLUSIVE))
    assert SuiteReport("s", rows).status == Status.INCONCLUSIVE
    assert SuiteReport("s", rows + (ClaimRow("s", "a", "z", 0, 2, 2, 1.0, Status.FAIL),)).status == Status.FAIL
    assert SuiteReport("s", ()).status == Status.INCONCLUSIVE
    payload = SuiteReport("s", rows).to_dict()
    assert payload["status"] == "inconclusive"
    assert payload["rows"][1]["margin"] == 1.0


def test_determinism_hash_ignores_key_order():
    assert determinism_hash({"a": 1, "b": [1, 2]}) == determinism_hash({"b": [1, 2], "a": 1})
    assert determinism_hash({"a": 1}) != determinism_hash({"a": 2})
    assert len(determinism_hash({})) == 64


def test_unknown_suite():
    with pytest.raises(ValueError):
        verify_suite("nonexistent", parse_config({}))


def test_errors_become_error_rows():
    report = verify_suite("commutator", parse_config({"numeric": {"precision": 20}}), {"orders": [-1.3]})
    assert report.status == Status.ERROR
    assert report.rows[-1].claim.startswith("ValueError")


def test_every_suite_is_registered():
    assert set(SUITES) == {"c0_finite_part", "leftover_vanishing", "commutator", "auxiliary_independence",
                           "tr_equals_TR", "parity", "kt_tk", "identity_density", "boundary_reduction"}


@pytest.mark.slow
def test_identity_density_suite_passes():
    config = parse_config({"numeric": {"precision": 30, "mu_points": 30, "tail_tolerance": 1e-15}})
    report = verify_suite("identity_density", config)
    assert [row.status for row in report.rows] == [Status.PASS] * 3
    assert set(report.fits) == {"Q density", "G trace"}


def test_default_parity_order_keeps_odd_coefficients_separable():
    run = make_run()
    N = run.power(2)
    families = {term.label: term.family for term in ExpansionModel.spanning(2, 1, N).basis()}
    assert families["c[1]"] == "local"
    assert "c[3]+c''[0]" in families


SMOKE_NUMERIC = {"precision": 20, "mu_points": 30, "depth": 2, "fourier_K": 40, "tail_tolerance": 1e-8}

SMOKE_CLAIMS = {
    "c0_finite_part": ({"orders": [-0.5]}, ["continuum a''_0 = finite part, nu=-0.5",
                                            "cylinder C_0 = regularized lattice sum, nu=-0.5"]),
    "leftover_vanishing": ({}, ["coefficient of mu^-2N in Tr(G G^(N)) vanishes",
                                "coefficient of mu^-2N in Tr(G G^-(Q^N)) vanishes"]),
    "commutator": ({}, ["C_0([G, G']) equals the diagonal sum Tr([G, G'])",
                        "x'-independent diagonal control: Tr([D, D'] R^N) = 0 exactly"]),
    "auxiliary_independence": ({}, ["C_0(G, P_1) = C_0(G, P_2)"]),
    "tr_equals_TR": ({}, ["C_0(G) = Tr G"]),
    "parity": ({}, ["c[1] vanishes", "c'[0] vanishes", "C_0 = TR(tr_n G) by the boundary route"]),
    "kt_tk": ({}, ["C_0(KT) = C_0(TK)"]),
    "identity_density": ({}, ["mu^-2N coefficient of the Q density is -m^2/(2 sqrt(alpha))",
                              "mu^-2N coefficient of tr_n G^(N) vanishes",
                              "tr_n G^(N) exponents lie in odd - 2N"]),
    "boundary_reduction": ({}, ["C_0(G, P_1,D) = C_0(C, S)", "C_0(C, S) = regularized lattice sum of tr_n g"]),
}


def test_smoke_table_covers_every_suite():
    assert set(SMOKE_CLAIMS) == set(SUITES)


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(SMOKE_CLAIMS))
def test_suite_smoke_run_writes_its_claims(name):
    params, claims = SMOKE_CLAIMS[name]
    report = verify_suite(name, parse_config({"numeric": SMOKE_NUMERIC}), params)
    assert [row.claim for row in report.rows if row.status == Status.ERROR] == []
    written = [row.claim for row in report.rows]
    for claim in claims:
        assert claim in written
    assert all(row.suite == name for row in report.rows)
