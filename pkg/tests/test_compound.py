import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stoppedsums.compound import (
    brute_force_compound,
    compound,
    conv_power,
    convolve,
    panjer_compound,
    required_n_max,
)
from stoppedsums.distributions import (
    Binomial,
    Deterministic,
    Explicit,
    Exponential,
    Geometric,
    LatticeDistribution,
    PointMassMix,
    Poisson,
    Weibull,
    discretize,
    lattice_from_points,
)
from stoppedsums.errors import PreconditionError, UnsupportedFamilyError


def _pad_to(a, m):
    return np.pad(a, (0, m - a.size))


def _close(a, b, atol):
    m = max(a.size, b.size)
    np.testing.assert_allclose(_pad_to(a, m), _pad_to(b, m), rtol=0, atol=atol)


small_law = st.lists(st.tuples(st.integers(0, 7), st.floats(0.05, 1.0)), min_size=1, max_size=5,
                     unique_by=lambda t: t[0]).map(
    lambda pairs: lattice_from_points([a for a, _ in pairs],
                                      np.array([w for _, w in pairs]) / sum(w for _, w in pairs)))

small_count = st.one_of(
    st.builds(Binomial, st.integers(0, 6), st.floats(0.0, 0.5)),
    st.builds(Deterministic, st.integers(0, 6)),
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=7).map(lambda w: Explicit(tuple(np.array(w) / sum(w)))),
)


@given(F=small_law, tau=small_count)
def test_all_methods_agree_with_enumeration(F, tau):
    top = tau.max_support
    oracle = brute_force_compound(F, tau, top).lattice.masses
    _close(compound(F, tau, n_max=top).lattice.masses, oracle, 1e-13)
    _close(compound(F, tau, n_max=top, method="fft").lattice.masses, oracle, 1e-13)
    if tau.panjer_ab is not None:
        _close(panjer_compound(F, tau).lattice.masses, oracle, 1e-13)


@given(F=small_law, lam=st.floats(0.1, 4.0), q=st.floats(0.05, 0.8))
def test_panjer_for_unbounded_counts_matches_mixture(F, lam, q):
    for tau in (Poisson(lam), Geometric(q)):
        mix = compound(F, tau).lattice.masses  # neglects at most 1e-12 of counting mass
        rec = panjer_compound(F, tau).lattice.masses
        m = min(mix.size, rec.size)
        np.testing.assert_allclose(rec[:m], mix[:m], rtol=0, atol=2e-12)


def test_binomial_above_one_half_is_kept_away_from_panjer():
    F = lattice_from_points([1, 3, 7], [0.46, 0.03, 0.51])
    tau = Binomial(2, 0.96)
    assert tau.panjer_ab is None
    with pytest.raises(UnsupportedFamilyError):
        panjer_compound(F, tau)
    oracle = brute_force_compound(F, tau, 2).lattice.masses
    _close(compound(F, tau, n_max=2).lattice.masses, oracle, 1e-15)


def test_single_summand_is_identity():
    F = discretize(Exponential(1.0), 0.1, 30.0)
    res = compound(F, Deterministic(1), n_max=1)
    np.testing.assert_array_equal(res.lattice.masses, F.masses)
    assert res.lattice.deficit == pytest.approx(F.deficit, rel=1e-12)


@given(F=small_law, n=st.integers(0, 9))
def test_conv_power_matches_repeated_numpy_convolution(F, n):
    ref = np.array([1.0])
    for _ in range(n):
        ref = np.convolve(ref, F.masses)
    _close(conv_power(F, n).masses, ref, 1e-14)


def test_fft_repair_keeps_far_tail_relative_accuracy():
    # untruncated copy, so the product is kept out to its far end
    F = LatticeDistribution.from_masses(0.05, discretize(Exponential(1.0), 0.05, 40.0).masses)
    d = convolve(F, F, "direct")
    f = convolve(F, F, "fft")
    # entries whose tail is below the repair floor are recomputed directly
    far = (np.exp(d.log_tail) < 0.5e-12) & (d.masses > 0)  # margin for the noisy boundary
    assert d.masses[far].min() < 1e-30
    np.testing.assert_allclose(f.masses[far], d.masses[far], rtol=1e-12)
    # in the bulk the FFT noise stays far below what ratio curves resolve
    ok = np.isfinite(d.log_tail)
    assert np.max(np.abs(np.expm1(f.log_tail[ok] - d.log_tail[ok]))) < 1e-4


def test_truncated_convolution_tracks_deficit():
    F = discretize(Weibull(0.5), 0.5, 50.0)
    G = convolve(F, F)
    assert G.size == F.size
    assert G.total_mass == pytest.approx(1.0, abs=1e-13)
    # beyond the cutoff, S_2 > x needs more than the represented grid can say
    assert G.deficit >= 2 * F.deficit - F.deficit**2 - 1e-15


def test_step_mismatch_and_bad_inputs():
    a = lattice_from_points([0, 1], [0.5, 0.5], 1.0)
    b = lattice_from_points([0, 1], [0.5, 0.5], 0.5)
    with pytest.raises(PreconditionError):
        convolve(a, b)
    with pytest.raises(PreconditionError):
        conv_power(a, -1)
    with pytest.raises(PreconditionError):
        compound(a, Poisson(2.0), n_max=3)  # neglected counting mass too large
    with pytest.raises(PreconditionError):
        brute_force_compound(a, Deterministic(20), 20)


def test_required_n_max():
    assert required_n_max(Geometric(0.5), 1e-6) == math.ceil(math.log(1e-6) / math.log(0.5)) - 1
    assert required_n_max(Binomial(4, 0.3), 1e-30) == 4


def test_brute_force_accepts_point_mixture():
    mix = PointMassMix((0.0, 0.5, 1.0), (0.2, 0.3, 0.5))
    res = brute_force_compound(mix, Deterministic(2), 2, step=0.5)
    assert res.lattice.mean() == pytest.approx(2 * mix.mean, rel=1e-14)


def test_parallel_chunks_are_identical():
    F = discretize(Exponential(1.0), 0.25, 30.0)
    one = compound(F, Poisson(3.0), workers=1).lattice.masses
    two = compound(F, Poisson(3.0), workers=3).lattice.masses
    np.testing.assert_allclose(one, two, rtol=1e-14, atol=1e-300)


def test_result_artifacts(tmp_path):
    F = lattice_from_points([0, 1, 2], [0.2, 0.5, 0.3])
    res = compound(F, Deterministic(2), n_max=2)
    res.write_csv(tmp_path / "c.csv")
    res.write_json(tmp_path / "c.json")
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "x,mass,log_tail"
    assert len(rows) == 1 + res.lattice.size
    meta = json.loads((tmp_path / "c.json").read_text())
    assert meta["method"] == "Direct" and meta["n_max"] == 2
