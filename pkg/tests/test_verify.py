import numpy as np
import pytest

from conftest import e
from klshrink.errors import InputError
from klshrink.model import Custom, Gaussian, Harmonic, ScaleMixture, Strawderman, Uniform, make_model
from klshrink.verify import (
    HConditionInput,
    ScanRecord,
    ScanReport,
    canonical_decomposition,
    check_identity_18_19,
    check_lemma1,
    check_theorem2,
    corollary1_rate,
    heat_residual,
    heat_suite,
    identity_suite,
    relative_gap,
    scan_points,
    superharmonic_scan,
    write_scan_csv,
)


def test_scan_report_verdict():
    recs = [ScanRecord(1.0, 1.0, -1.0, 1e-8, True), ScanRecord(2.0, 1.0, 5e-9, 1e-8, True)]
    rep = ScanReport(recs, 1e-8)
    assert rep.passed and rep.points_tested == 2 and rep.max_violation == pytest.approx(5e-9)
    rep = ScanReport(recs + [ScanRecord(3.0, 1.0, 0.1, 1e-8, False)], 1e-8)
    assert rep.verdict == "fail" and rep.max_violation == pytest.approx(0.1)
    # a widened per-point bound absorbs numerical noise
    rep = ScanReport([ScanRecord(0.0, 1.0, 5e-8, 1e-7, True)], 1e-8)
    assert rep.passed


def test_scan_points_geometry():
    Z = scan_points(5, 0.25, np.ones(5), seed=0)
    r = np.linalg.norm(Z - 1.0, axis=1) / 0.5
    assert Z.shape == (56, 5)
    np.testing.assert_allclose(np.sort(r[:24]), np.repeat([0.1, 0.5, 1, 2, 5, 10], 4), rtol=1e-12)
    assert np.all(r[24:] <= 10)


# --- heat equation ---------------------------------------------------------


def test_heat_uniform_exact():
    assert heat_residual(Uniform(), np.ones(3), 0.4) == 0.0


@pytest.mark.parametrize("v", [0.3, 1.0, 2.5])
def test_heat_gaussian(v):
    for z in (np.zeros(4), np.array([1.0, -2, 0.5, 3])):
        assert heat_residual(Gaussian(1.5), z, v) < 1e-7


@pytest.mark.parametrize("v", [1 / 6, 0.5, 1.0])
def test_heat_harmonic(v):
    assert heat_residual(Harmonic(), 2 * e(0, 5), v) < 1e-5


def test_heat_scale_mixture():
    assert heat_residual(ScaleMixture(Strawderman(0.5)), np.array([0.5, 1, -1, 0, 2]), 0.6) < 1e-5


# --- square-root Laplacian identity ---------------------------------------


def test_identity_uniform():
    assert check_identity_18_19(Uniform(), np.ones(3), 1.0) == (0.0, 0.0)


def test_identity_gaussian():
    l, r = check_identity_18_19(Gaussian(2.0), np.array([1.0, 1.0, 0, 0]), 1.0)
    assert relative_gap(l, r) <= 1e-10


def test_identity_scale_mixture():
    l, r = check_identity_18_19(ScaleMixture(Strawderman(0.5)), 3 * e(0, 5), 0.5)
    assert relative_gap(l, r) <= 1e-4


def test_relative_gap():
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(1.0, 1.1) == pytest.approx(0.1 / 1.1)
    assert relative_gap(1e-16, 2e-16, 1.0) == pytest.approx(1e-16)


@pytest.mark.parametrize("prior", [Uniform(), Gaussian(1.0), Harmonic(), ScaleMixture(Strawderman(0.5))], ids=str)
def test_identity_and_heat_suites(prior, fig1):
    assert identity_suite(prior, fig1).passed
    assert heat_suite(prior, fig1).passed


# --- superharmonicity scans ------------------------------------------------


def test_scan_harmonic_every_point(fig1):
    rep = superharmonic_scan(Harmonic(), fig1, "m")
    assert rep.passed and rep.points_tested == 8 * 56
    assert all(r.value <= rep.tolerance for r in rep.records)


def test_scan_strawderman(fig1):
    prior = ScaleMixture(Strawderman(0.5), v0=fig1.v_x)
    assert superharmonic_scan(prior, fig1, "sqrt").passed
    assert not superharmonic_scan(prior, fig1, "m").passed


def test_scan_gaussian_sqrt_fails_far(fig1):
    rep = superharmonic_scan(Gaussian(1.0), fig1, "sqrt")
    assert not rep.passed
    bad = [r.z_norm for r in rep.records if not r.ok]
    good = [r.z_norm for r in rep.records if r.ok]
    assert min(bad) > min(good)


def test_scan_csv(tmp_path, fig1):
    rep = superharmonic_scan(Harmonic(), fig1, "m", v_points=[1.0])
    path = tmp_path / "r.csv"
    write_scan_csv(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "z_norm,v,value,bound,ok" and len(lines) == 57


# --- mixing-density conditions -------------------------------------------


@pytest.mark.parametrize(
    "a,p,verdict", [(0.7, 5, "pass"), (0.3, 5, "fail"), (0.5, 6, "pass"), (0.5, 5, "pass-at-boundary"),
                    (0.0, 6, "pass-at-boundary"), (1.0, 3, "fail")]
)
def test_theorem2_canonical(a, p, verdict):
    res = check_theorem2(canonical_decomposition(Strawderman(a), p))
    assert res.verdict == verdict
    assert set(res.rescaled) == {0.25, 0.5, 1.0}


def test_theorem2_budget_arithmetic():
    d = check_theorem2(canonical_decomposition(Strawderman(0.3), 5)).diagnostics
    assert d["budget"] == pytest.approx(0.85 + 0.5e-6, abs=1e-15)


def test_theorem2_inconsistent_decomposition():
    inp = canonical_decomposition(Strawderman(0.7), 5)
    bad = HConditionInput(inp.h, 5, inp.l1, lambda s: inp.l2(s) + 1e-3, inp.A, inp.B)
    with pytest.raises(InputError):
        check_theorem2(bad)


def test_theorem2_nonmonotone_l1_fails():
    # -(s+1) h'/h = 1.2 + 0.2 sin(log(1+s)) is not nondecreasing
    h = Custom(
        lambda s: -1.2 * np.log1p(s) + 0.2 * np.cos(np.log1p(s)),
        lambda s: (-1.2 - 0.2 * np.sin(np.log1p(s))) / (1 + s),
    )
    l1 = lambda s: 1.2 + 0.2 * np.sin(np.log1p(s)) - 1e-6
    l2 = lambda s: np.full_like(np.asarray(s, float), 1e-6)
    res = check_theorem2(HConditionInput(h, 8, l1, l2, 1.4, 1e-6))
    assert res.verdict == "fail" and not res.diagnostics["l1_nondecreasing"]


def test_theorem2_tail_failure():
    # a = 4.5 at p = 5 makes h(s)/(1+s)^{p/2} grow
    res = check_theorem2(canonical_decomposition(Strawderman(4.5), 5))
    assert not res.diagnostics["tail_decreasing"]


@pytest.mark.parametrize("a,p", [(0.7, 5), (0.5, 6)])
def test_theorem2_closure_scan(a, p):
    assert check_theorem2(canonical_decomposition(Strawderman(a), p)).passed
    model = make_model(p, 1.0, 0.2)
    assert superharmonic_scan(ScaleMixture(Strawderman(a), v0=1.0), model, "sqrt").passed


# --- properness and Bayes-risk rate ---------------------------------------


def test_lemma1_uniform_exact(fig1):
    rep = check_lemma1(Uniform(), fig1, np.ones(5), 1000, 0)
    assert rep.mass == 1.0 and rep.mass_se == 0.0 and rep.passed


@pytest.mark.parametrize("prior", [Harmonic(), Gaussian(1.0), ScaleMixture(Strawderman(0.5))], ids=str)
def test_lemma1(prior, fig1):
    assert check_lemma1(prior, fig1, 2 * e(0, 5), 50_000, 1).passed


def test_corollary1_rate(fig1):
    rep = corollary1_rate(fig1)
    assert rep.passed and abs(rep.slope + 1) < 0.01
