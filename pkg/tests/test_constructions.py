import json
import math

import numpy as np
import pytest
from scipy import integrate

from stoppedsums.constructions import (
    ConstructionCertificate,
    build_g_finite_moment,
    build_h_moments_ext,
    build_h_convex_inverse,
    build_h_weighted,
    find_x0_semi_moment,
    flatten_to_sublinear,
    stopped_moment_pipeline,
    verify_growth_bound,
)
from stoppedsums.distributions import (
    Exponential,
    Geometric,
    Pareto,
    Weibull,
    WeibullCount,
    lattice_from_points,
)
from stoppedsums.errors import PreconditionError
from stoppedsums.evidence import moment_evidence
from stoppedsums.functions import Elementary, PiecewiseFunction, parse_function

SQRT = parse_function("x^0.5")
LOG1P = parse_function("ln(1+x)")


@pytest.fixture(scope="module")
def weibull_h():
    return build_h_moments_ext(Weibull(0.5), SQRT, LOG1P, 4)


def _stopped_expectation(F, h, x):
    """``E{e^h(xi); xi <= x} + e^{h(x)} F_bar(x)`` by adaptive quadrature."""
    pts = np.unique(np.concatenate([h.knots, np.geomspace(1e-3, max(x, 1e-3), 40)]))
    pts = pts[(pts > 0) & (pts < x)]
    # substitute t = u^2 to remove the t^(-1/2) density singularity at the origin
    body, _ = integrate.quad(lambda u: 2 * u * math.exp(float(h(u * u)) + float(F.logpdf(u * u))) if u > 0 else 0.0,
                             0.0, math.sqrt(x), points=np.sqrt(pts), limit=500, epsabs=0, epsrel=1e-11)
    return body + math.exp(float(h(x))) * float(F.tail(x))


def test_moments_ext_stage_increments(weibull_h):
    h, cert = weibull_h
    F = Weibull(0.5)
    assert cert.passed and cert.max_residual <= 1e-12
    q = [_stopped_expectation(F, h, float(x)) for x in h.knots]
    # each stage adds exactly 2^-n to the stopped expectation
    np.testing.assert_allclose(np.diff(q), 0.5 ** np.arange(1, h.knots.size), rtol=1e-7)


def test_moments_ext_shape(weibull_h):
    h, _ = weibull_h
    x = np.linspace(0.0, 2000.0, 4001)
    assert np.all(np.asarray(h(x)) <= np.asarray(SQRT(x)) + 1e-12)
    assert all(h.check_shape(x).values())
    assert np.all(np.exp(LOG1P(h.knots[1:])) >= 2.0 ** np.arange(1, h.knots.size))
    assert moment_evidence(Weibull(0.5), lambda t: float(h(t))).is_finite


def test_zero_stages_is_the_base_case():
    h, cert = build_h_moments_ext(Weibull(0.5), SQRT, LOG1P, 0)
    assert h.knots.size == 1 and cert.passed


def test_constant_reweighting_reduces_to_plain_builder(weibull_h):
    h, _ = weibull_h
    hw, cw = build_h_weighted(Weibull(0.5), Elementary("const", shift=1.0), SQRT, LOG1P, 4)
    np.testing.assert_array_equal(hw.knots, h.knots)
    np.testing.assert_array_equal(hw.eps, h.eps)
    assert cw.passed


def test_moments_ext_preconditions():
    with pytest.raises(PreconditionError):
        build_h_moments_ext(Weibull(0.5), parse_function("x^2"), LOG1P, 2)  # f not concave
    with pytest.raises(PreconditionError):
        build_h_moments_ext(Weibull(0.5), SQRT, Elementary("const", shift=1.0), 2)  # g bounded


def test_certificate_round_trip(weibull_h):
    _, cert = weibull_h
    d = json.loads(json.dumps(cert.to_dict()))
    again = ConstructionCertificate.from_dict(d)
    assert again.to_dict() == d
    assert again.passed == cert.passed
    failing = ConstructionCertificate([1.0], {"ok": True}, {}, {})
    assert not failing.passed
    assert not ConstructionCertificate([0.0], {"ok": True}, {}, {}, partial=True).passed


@pytest.mark.parametrize("chi", [Pareto(0.5), Exponential(1.0)])
def test_finite_moment_g(chi):
    g, cert = build_g_finite_moment(chi, n_stages=12)
    assert cert.passed
    x = np.linspace(0.0, 200.0, 2001)
    y = np.asarray(g(x))
    assert y[0] == 0.0
    assert np.all(np.asarray(g.derivative(x)) <= 1.0 + 1e-12)
    assert np.all(np.diff(y, 2) <= 1e-9)
    g1 = g.inner
    n = np.arange(1, g1.knots.size)
    kn = g1.knots[1:]
    np.testing.assert_allclose(g1(kn), n / 2, rtol=1e-14)
    assert np.all(np.asarray(chi.log_tail(kn)) <= -n + 1e-12)
    assert np.all(np.diff(np.diff(g1.knots)) > 0)


def test_finite_moment_g_on_light_law():
    # past the last knot g keeps its final slope, which stays below the exponential rate
    g, _ = build_g_finite_moment(Exponential(1.0), n_stages=12)
    assert moment_evidence(Exponential(1.0), lambda t: float(g(t))).is_finite


def test_flatten_keeps_divergence():
    f1, cert = flatten_to_sublinear(parse_function("x"), Weibull(0.5), 5)
    assert cert.passed
    x = np.linspace(0.0, 1e4, 5001)
    assert np.all(np.asarray(f1(x)) <= x + 1e-9)
    assert moment_evidence(Weibull(0.5), lambda t: float(f1(t))).is_divergent


def test_heavy_count_witness_is_convex():
    h, cert = build_h_convex_inverse(Pareto(1.5), WeibullCount(0.5), 4.0, 3)
    assert cert.passed
    assert isinstance(h, PiecewiseFunction) and h.shape == "convex"
    assert np.all(np.diff(h.eps * h.slopes) >= 0)
    y = np.linspace(float(h.values[0]), float(h.values[-1]) + 5.0, 50)
    np.testing.assert_allclose(h(h.inverse(y)), y, rtol=1e-12, atol=1e-12)


def test_light_count_gets_linear_witness():
    h, cert = build_h_convex_inverse(Pareto(1.5), Geometric(0.5), 4.0, 3)
    assert cert.passed
    # f = lam x with lam c at half the abscissa -ln q of the geometric count
    np.testing.assert_allclose(h.eps * h.slopes, h.aux["lambda"])
    assert h.aux["lambda"] * 4.0 == pytest.approx(math.log(2.0) / 2, rel=1e-12)
    with pytest.raises(PreconditionError):
        build_h_convex_inverse(Pareto(1.5), Geometric(0.5), 2.0, 3)  # c below E xi = 3


def test_growth_bound_checks():
    F = Exponential(1.0)
    rep = verify_growth_bound(F, LOG1P, 1.5, 12, cutoff=50.0)
    assert rep.bounded and rep.K_hat < 1.5
    assert rep.to_dict()["max_deficit"] < 1e-12
    with pytest.raises(PreconditionError):
        verify_growth_bound(F, Elementary("const", shift=1.0), 1.5, 5, cutoff=50.0)  # h < ln x far out
    with pytest.raises(PreconditionError):
        verify_growth_bound(F, LOG1P, 0.5, 5, cutoff=50.0)


def test_growth_bound_with_x0():
    F = Exponential(1.0)
    rep = verify_growth_bound(F, LOG1P, 1.5, 10, cutoff=50.0, x0=0.0)
    assert rep.induction_holds


def test_semi_moment_x0():
    eta = lattice_from_points([0.0, 2.0], [0.7, 0.3]).shifted(-1.0)  # mean -0.4
    rep = find_x0_semi_moment(eta, LOG1P)
    assert rep.found and rep.x0 == 0.0
    # e^{h(x)} - E e^{h(x + eta)} = x + 1 - (x + 0.6) stays positive
    # exp(log1p(x)) round trips carry an error of a few eps * x
    assert np.all(np.abs(rep.margins - 0.4) <= 32 * np.finfo(float).eps * (rep.x + 1))
    convex = find_x0_semi_moment(eta, Elementary("power", exponent=2.0), strict=False)
    assert not convex.found and convex.x0 is None
    with pytest.raises(PreconditionError):
        find_x0_semi_moment(eta.shifted(1.0), LOG1P)


def test_pipeline_reports_fitted_stages():
    rep = stopped_moment_pipeline(Pareto(1.5), WeibullCount(0.5), 4.0, LOG1P)
    assert rep.g_certificate.passed
    assert rep.h is not None and rep.h_certificate.passed
    assert rep.evidence["E_exp_f_xi"]["status"] == "divergent"
    assert rep.evidence["E_tau_exp_r_c_tau"]["status"] == "finite"
    # stages that overflow the float range are reported, not hidden
    assert len(rep.notes) == 2 - rep.evidence["h_stages"]
    json.dumps(rep.to_dict())
    with pytest.raises(PreconditionError):
        stopped_moment_pipeline(Pareto(1.5), WeibullCount(0.5), 4.0, SQRT)  # E e^{f(c tau)} diverges

