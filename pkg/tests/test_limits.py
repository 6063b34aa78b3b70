import math

import numpy as np
import pytest

from stoppedsums.distributions import (
    Binomial,
    Deterministic,
    Explicit,
    Exponential,
    ExpPolynomial,
    Geometric,
    Pareto,
    PointMassMix,
    Poisson,
    Weibull,
    WeibullCount,
    discretize,
)
from stoppedsums.errors import NumericRangeError, PreconditionError
from stoppedsums.functions import Elementary
from stoppedsums.limits import (
    GridSpec,
    Regime,
    check_G_o_F,
    check_tail_ratio_lower,
    predicted_liminf,
    proposition_hypotheses_check,
    ratio_curve,
)


def test_heavy_prediction_is_mean_count():
    for tau in (Geometric(0.4), Poisson(2.5), WeibullCount(0.5)):
        pred = predicted_liminf(Pareto(1.5), tau)
        assert pred.regime is Regime.HEAVY
        assert pred.value == tau.mean
        assert "unverified-hypotheses" in pred.flags
    assert predicted_liminf(Weibull(0.5), Deterministic(3), hypotheses_checked=True).flags == ()


@pytest.mark.parametrize("tau, closed_form", [
    # E[tau phi^(tau-1)] = d/ds E[s^tau] at s = phi
    (Poisson(1.2), lambda phi: 1.2 * math.exp(1.2 * (phi - 1))),
    (Binomial(5, 0.3), lambda phi: 5 * 0.3 * (0.7 + 0.3 * phi) ** 4),
    (Deterministic(4), lambda phi: 4 * phi**3),
    (Explicit((0.2, 0.5, 0.3)), lambda phi: 0.5 + 2 * 0.3 * phi),
])
def test_light_prediction_against_pgf_derivative(tau, closed_form):
    F = ExpPolynomial(1.0, 3.0)
    pred = predicted_liminf(F, tau)
    assert pred.regime is Regime.LIGHT
    assert pred.value == pytest.approx(closed_form(1.5), rel=1e-12)


def test_light_prediction_with_unbounded_transform():
    # phi(gamma_hat) is infinite: only a count that never exceeds one stays finite
    assert math.isinf(predicted_liminf(Exponential(1.0), Poisson(1.0)).value)
    assert predicted_liminf(Exponential(1.0), Explicit((0.4, 0.6))).value == pytest.approx(0.6)


def test_geometric_prediction_diverges_beyond_radius():
    F = ExpPolynomial(1.0, 3.0)
    # pmf (1-q) q^n: the series sum n q^n phi^(n-1) needs q * phi < 1
    assert math.isinf(predicted_liminf(F, Geometric(0.8)).value)
    q, phi = 0.5, 1.5
    assert predicted_liminf(F, Geometric(q)).value == pytest.approx((1 - q) * q / (1 - q * phi) ** 2, rel=1e-9)


def test_single_summand_ratio_is_one(tmp_path):
    curve = ratio_curve(Weibull(0.5), Deterministic(1), GridSpec(step=0.5, cutoff=200.0))
    np.testing.assert_allclose(curve.ratio, 1.0, rtol=1e-13)
    assert curve.predicted == 1.0
    assert curve.above_floor
    curve.write_csv(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "x,ratio,running_inf,predicted"
    assert len(rows) == 1 + curve.x.size


def test_ratio_matches_conditioning_on_first_summand():
    F = Exponential(1.0)
    tau = Explicit((0.1, 0.3, 0.6))
    curve = ratio_curve(F, tau, GridSpec(step=0.25, cutoff=30.0, method="direct"))
    lat = discretize(F, 0.25, 30.0)
    # the upper grid keeps P(xi > k h) exact, so condition on the first summand
    expect = []
    for x in curve.x:
        j = lat.grid <= x
        two = math.fsum(lat.masses[j] * F.tail(x - lat.grid[j])) + float(F.tail(x))
        expect.append((0.3 * float(F.tail(x)) + 0.6 * two) / float(F.tail(x)))
    np.testing.assert_allclose(curve.ratio, expect, rtol=1e-10)


def test_running_inf_and_thinning():
    spec = GridSpec(step=0.5, cutoff=500.0, n_points=100, allow_heavy_truncation=True)
    curve = ratio_curve(Pareto(2.0), Geometric(0.3), spec)
    assert curve.x.size == 100 and np.all(np.diff(curve.x) > 0)
    assert curve.x[-1] == 500.0
    win = curve.x >= curve.window_start
    assert np.all(np.isnan(curve.running_inf[~win]))
    assert np.all(np.diff(curve.running_inf[win]) <= 0)
    assert curve.liminf_estimate == pytest.approx(np.min(curve.ratio[win]))
    assert curve.above_floor
    d = curve.to_dict()
    assert d["regime"] == "HeavyTheorem1" and d["n_points"] == curve.x.size


def test_empty_window_and_short_counting_range():
    with pytest.raises(PreconditionError):
        ratio_curve(Exponential(1.0), Poisson(1.0), GridSpec(step=0.5, cutoff=20.0, x_min=50.0))
    with pytest.raises(NumericRangeError):
        ratio_curve(Exponential(1.0), Geometric(0.9), GridSpec(step=0.5, cutoff=20.0, method="direct", n_max=3))


def test_tail_condition_needs_c_above_mean():
    with pytest.raises(PreconditionError, match="for some c > E xi"):
        check_G_o_F(Pareto(1.5, 2.0), Geometric(0.5), 5.0, [10.0, 100.0])
    curve = check_G_o_F(Pareto(1.5), Geometric(0.5), 4.0, np.geomspace(1, 1e4, 80))
    assert curve.verdict.positive


def test_tail_ratio_lower_bound():
    x = np.linspace(5.0, 300.0, 400)
    # F_bar(x - y) / F_bar(x) = e^y ((1 + x) / (1 + x - y))^3 stays above e^y
    rep = check_tail_ratio_lower(ExpPolynomial(1.0, 3.0), [0.5, 1.0, 3.0], x)
    assert rep.passed and rep.failures == []
    for row in rep.per_y:
        y = row["y"]
        assert row["min_ratio"] == pytest.approx(math.exp(y) * (301 / (301 - y)) ** 3, rel=1e-12)
    assert check_tail_ratio_lower(Exponential(2.0), [1.0], x).passed  # equality case
    assert not check_tail_ratio_lower(PointMassMix((0.0, 1.0), (0.5, 0.5)), [0.5], [0.25]).passed
    with pytest.raises(PreconditionError):
        check_tail_ratio_lower(Pareto(2.0), [1.0], x)


def test_proposition_premises():
    r = Elementary("log", coef=0.5)  # exp(r(x)) = sqrt(x)
    rep = proposition_hypotheses_check(Pareto(1.5), Explicit((0.0, 0.5, 0.5)), r, c=4.0)
    p = rep.premises
    assert p["E_exp_r_finite"]["status"] == "holds"
    assert p["E_xi_exp_r_infinite"]["status"] == "holds"
    assert p["E_tau_exp_r_S_finite"]["status"] == "holds"
    assert rep.status == "applicable"
    assert proposition_hypotheses_check(Exponential(1.0), Poisson(1.0), r, c=2.0).status == "not applicable"
    with pytest.raises(PreconditionError):
        proposition_hypotheses_check(Pareto(1.5), Poisson(1.0), Elementary("power", exponent=2.0), c=4.0)


def test_proposition_fails_when_weight_is_too_strong():
    # exp(r(x)) = x^2 has no finite mean under Pareto(1.5)
    rep = proposition_hypotheses_check(Pareto(1.5), Explicit((0.0, 1.0)), Elementary("log", coef=2.0), c=4.0)
    assert rep.premises["E_exp_r_finite"]["status"] == "fails"
    assert rep.status == "not applicable"
