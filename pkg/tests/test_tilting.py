import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stoppedsums.distributions import (
    Binomial,
    Deterministic,
    Explicit,
    Exponential,
    ExpPolynomial,
    Geometric,
    Pareto,
    Poisson,
    PowerCount,
    WeibullCount,
    discretize,
    lattice_from_points,
)
from stoppedsums.errors import DivergentNormalizerError, PreconditionError
from stoppedsums.tilting import (
    check_cnu_domination,
    lattice_log_phi,
    tail_ratio_curve,
    tilt_counting,
    tilt_distribution,
    tilt_identity_check,
    tilt_pair,
)

finite_law = st.lists(st.tuples(st.integers(0, 9), st.floats(0.05, 1.0)), min_size=2, max_size=5,
                      unique_by=lambda t: t[0]).map(
    lambda pairs: lattice_from_points([a for a, _ in pairs],
                                      np.array([w for _, w in pairs]) / sum(w for _, w in pairs)))


def test_tilted_lattice_by_hand():
    F = lattice_from_points([0, 1, 2], [0.5, 0.3, 0.2])
    g = 0.7
    w = np.array([0.5, 0.3 * math.exp(g), 0.2 * math.exp(2 * g)])
    G = tilt_distribution(F, g)
    np.testing.assert_allclose(G.masses, w / w.sum(), rtol=1e-15)
    assert lattice_log_phi(F, g) == pytest.approx(math.log(w.sum()), rel=1e-15)


def test_large_tilt_does_not_overflow():
    F = discretize(Exponential(1.0), 1.0, 700.0)
    G = tilt_distribution(F, 5.0)
    assert np.all(np.isfinite(G.masses))
    # exponents near 3500 leave about 3500 * eps of relative rounding
    assert G.total_mass == pytest.approx(1.0, abs=1e-11)


@given(F=finite_law, gamma=st.floats(0.01, 1.5), q=st.floats(0.01, 0.95), n_max=st.integers(1, 6))
def test_identity_holds_on_random_lattices(F, gamma, q, n_max):
    phi = math.exp(lattice_log_phi(F, gamma))
    tau = Geometric(q / phi)
    rep = tilt_identity_check(F, tau, gamma, n_max)
    assert rep.passed, rep.to_dict()
    assert rep.mixture_points is not None


def test_negative_tilt_skips_mixture(tmp_path):
    F = lattice_from_points([0, 1, 2], [0.5, 0.3, 0.2])
    rep = tilt_identity_check(F, Geometric(0.3), -0.5, 3)
    assert rep.mixture_points is None
    assert any("skipped" in n for n in rep.notes)
    rep.write_csv(tmp_path / "i.csv")
    assert (tmp_path / "i.csv").read_text() == "x,lhs,rhs,abs_diff\n"


def test_identity_csv_rows(tmp_path):
    F = lattice_from_points([0, 1, 3], [0.2, 0.5, 0.3])
    rep = tilt_identity_check(F, Explicit((0.0, 0.5, 0.5)), 0.4, 2)
    rep.write_csv(tmp_path / "i.csv")
    rows = (tmp_path / "i.csv").read_text().splitlines()
    assert len(rows) == 1 + rep.mixture_points[0].size
    assert all(float(r.split(",")[3]) <= 1e-15 for r in rows[1:])


def _tilted_pmf_oracle(tau, phi, n):
    w = [mp.mpf(phi) ** k * mp.e ** mp.mpf(float(tau.log_pmf(k))) for k in range(400)]
    return np.array([float(w[k] / mp.fsum(w)) for k in n])


@pytest.mark.parametrize("tau, phi", [
    (Geometric(0.5), 1.6), (Poisson(2.0), 1.3), (Binomial(6, 0.4), 2.0),
    (Deterministic(3), 1.7), (Explicit((0.1, 0.2, 0.7)), 1.2), (WeibullCount(1.5), 1.4),
])
def test_tilted_counting_pmf(tau, phi):
    nu = tilt_counting(tau, phi)
    n = np.arange(0, 30)
    # the generic path drops trailing terms below 1e-18 of the total
    np.testing.assert_allclose(nu.pmf(n), _tilted_pmf_oracle(tau, phi, n), rtol=1e-10, atol=1e-17)


def test_heavy_counting_law_cannot_be_tilted():
    with pytest.raises(DivergentNormalizerError):
        tilt_counting(PowerCount(2.0), 1.1)
    with pytest.raises(DivergentNormalizerError):
        tilt_counting(Geometric(0.8), 1.3)
    assert tilt_counting(PowerCount(2.0), 1.0) == PowerCount(2.0)


def test_tilt_pair_mean_formula():
    F = ExpPolynomial(1.0, 3.0)
    tau = Poisson(1.5)
    pair = tilt_pair(F, tau, discretize(F, 0.05, 60.0))
    phi = 1.5
    assert pair.phi_at_gamma_hat == pytest.approx(phi, rel=1e-15)
    assert pair.lam == pytest.approx(math.log(phi))
    # E nu = E[tau phi^tau] / E[phi^tau]; for Poisson it is lam * phi
    assert pair.nu.mean == pytest.approx(1.5 * phi, rel=1e-12)
    assert pair.normalizer == pytest.approx(math.exp(1.5 * (phi - 1)), rel=1e-12)
    assert pair.to_dict()["nu_mean"] == pytest.approx(pair.nu.mean)


def test_tilt_pair_preconditions():
    with pytest.raises(PreconditionError):
        tilt_pair(Pareto(2.0), Geometric(0.5), discretize(Pareto(2.0), 1.0, 1e3, allow_heavy_truncation=True))
    with pytest.raises(PreconditionError):
        tilt_pair(Exponential(1.0), Geometric(0.5), discretize(Exponential(1.0), 0.1, 40.0))


def test_bounded_tilted_count_is_dominated():
    F = ExpPolynomial(1.0, 3.0)
    pair = tilt_pair(F, Explicit((0.0, 0.5, 0.5)), discretize(F, 0.02, 60.0))
    curve = check_cnu_domination(pair.nu, 2 * pair.G.mean(), pair.G, np.linspace(1, 50, 200))
    assert curve.verdict.positive
    assert np.all(curve.ratio[curve.x > 4 * pair.G.mean()] == 0.0)


def test_heavy_ratio_curve_and_dropped_points():
    x = np.geomspace(1, 1e5, 100)
    # P(4 tau > x) with a stretched-exponential tau against a Pareto tail decays
    good = tail_ratio_curve(WeibullCount(0.5), 4.0, Pareto(1.5), x)
    assert good.verdict.positive
    # a power-law tau heavier than F does not
    bad = tail_ratio_curve(PowerCount(1.2), 4.0, Pareto(1.5), x)
    assert not bad.verdict.positive
    lat = discretize(Exponential(1.0), 0.5, 30.0)
    clipped = tail_ratio_curve(Geometric(0.2), 2.0, lat, np.linspace(1, 60, 60))
    assert clipped.clipped > 0
    with pytest.raises(PreconditionError):
        tail_ratio_curve(Geometric(0.2), 0.0, lat, [1.0])
