"""End-to-end acceptance checks, one test per criterion.

Each test records a pass/fail line through the ``criterion`` fixture before
asserting, so the summary shows every criterion even when some fail.
"""

import json
import math
import time

import mpmath as mp
import numpy as np
import pytest

from stoppedsums import cli
from stoppedsums.compound import brute_force_compound, compound, panjer_compound
from stoppedsums.constructions import (
    build_g_finite_moment,
    build_h_moments_ext,
    build_h_convex_inverse,
    find_x0_semi_moment,
    flatten_to_sublinear,
    verify_growth_bound,
)
from stoppedsums.distributions import (
    Binomial,
    Deterministic,
    Explicit,
    Exponential,
    ExpPolynomial,
    Geometric,
    Pareto,
    Poisson,
    Weibull,
    WeibullCount,
    discretize,
    lattice_from_points,
)
from stoppedsums.functions import Elementary, parse_function
from stoppedsums.limits import GridSpec, check_G_o_F, check_tail_ratio_lower, predicted_liminf, ratio_curve
from stoppedsums.tilting import check_cnu_domination, lattice_log_phi, tilt_identity_check, tilt_pair


def _max_gap(a: np.ndarray, b: np.ndarray) -> float:
    m = max(a.size, b.size)
    return float(np.max(np.abs(np.pad(a, (0, m - a.size)) - np.pad(b, (0, m - b.size)))))


def _random_counting(rng, i):
    kind = i % 4
    if kind == 0:
        return Binomial(int(rng.integers(0, 7)), float(rng.uniform()))
    if kind == 1:
        return Deterministic(int(rng.integers(0, 7)))
    m = int(rng.integers(1, 8))
    return Explicit.from_support(tuple(range(m)), tuple(rng.dirichlet(np.ones(m))))


def test_oracle_equivalence(criterion):
    rng = np.random.default_rng(20261015)
    start = time.perf_counter()
    worst, n_panjer, n_instances = 0.0, 0, 250
    for i in range(n_instances):
        k = int(rng.integers(1, 6))
        F = lattice_from_points(rng.choice(8, size=k, replace=False), rng.dirichlet(np.ones(k)))
        tau = _random_counting(rng, i)
        top = tau.max_support
        oracle = brute_force_compound(F, tau, top).lattice.masses
        outs = [compound(F, tau, n_max=top).lattice.masses,
                compound(F, tau, n_max=top, method="fft").lattice.masses]
        if tau.panjer_ab is not None:
            outs.append(panjer_compound(F, tau).lattice.masses)
            n_panjer += 1
        worst = max(worst, *(_max_gap(o, oracle) for o in outs))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10.0 and n_panjer > 0
    criterion(1, "compound/panjer/brute force agree", ok,
              f"{n_instances} instances ({n_panjer} with panjer), max gap {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 10.0


def test_heavy_tailed_lower_limit(criterion):
    start = time.perf_counter()
    F, tau = Pareto(1.5), Geometric(2.0 / 3.0)
    assert tau.mean == pytest.approx(2.0, rel=1e-12)
    spec = GridSpec(1.0, 1e4)
    curve = ratio_curve(F, tau, spec)
    elapsed = time.perf_counter() - start
    assert float(F.tail(spec.cutoff)) == pytest.approx(1e-6, rel=1e-9)
    window = curve.running_inf[np.isfinite(curve.running_inf)]
    # every running-infimum value over the last decade, not just the endpoint
    within = bool(np.all(np.abs(window - 2.0) <= 0.05 * 2.0))
    ok = within and curve.above_floor and elapsed < 60.0
    criterion(2, "heavy-tailed ratio near E tau", ok,
              f"running inf over last decade in [{window.min():.4f}, {window.max():.4f}], "
              f"above union floor={curve.above_floor}, {elapsed:.2f}s")
    assert within
    assert curve.above_floor
    assert elapsed < 60.0


def _tau_phi_oracle(probs, phi):
    return float(mp.fsum(n * p * mp.mpf(phi) ** (n - 1) for n, p in enumerate(probs)))


def test_light_tailed_lower_limit(criterion):
    start = time.perf_counter()
    F = ExpPolynomial(1.0, 3.0)
    tau = Explicit.from_support((1, 2), (0.5, 0.5))
    pred = predicted_liminf(F, tau)
    oracle = _tau_phi_oracle(tau.probs, 1.5)  # phi(1) = 1 + rate / (power - 1)
    curve = ratio_curve(F, tau, GridSpec(0.02, 60.0))
    rel_end = abs(curve.end_value - pred.value) / pred.value
    trend = curve.diagnostics["trend_positive"]

    lat = discretize(F, 0.02, 60.0)
    pair = tilt_pair(F, tau, lat)
    c = 2.0 * pair.G.mean()
    x = np.linspace(1.0, 50.0, 400)
    dom = check_cnu_domination(pair.nu, c, pair.G, x)
    tail = check_tail_ratio_lower(F, [0.5, 1.0, 2.0, 5.0], np.linspace(5.0, 200.0, 400))
    elapsed = time.perf_counter() - start
    ok = (abs(pred.value - oracle) <= 1e-12 and rel_end <= 0.10 and trend and dom.verdict.positive
          and tail.passed and elapsed < 120.0)
    criterion(3, "light-tailed ratio near E[tau phi^(tau-1)]", ok,
              f"prediction {pred.value:.6f} (oracle {oracle:.6f}), end {curve.end_value:.4f} "
              f"({100 * rel_end:.1f}% off), trend={trend}, domination={dom.verdict.positive}, "
              f"tail ratio={tail.passed}, {elapsed:.2f}s")
    assert pred.value == pytest.approx(oracle, rel=1e-12)
    assert rel_end <= 0.10
    assert trend
    assert dom.verdict.positive
    assert tail.passed


def _nu_mean_oracle(tau, phi, top=600):
    w = [mp.mpf(phi) ** n * mp.e ** mp.mpf(float(tau.log_pmf(n))) for n in range(top)]
    return float(mp.fsum(n * v for n, v in enumerate(w)) / mp.fsum(w))


def test_tilting_identity(criterion):
    rng = np.random.default_rng(4)
    worst_rel, worst_mean = 0.0, 0.0
    for i in range(50):
        k = int(rng.integers(2, 6))
        F = lattice_from_points(np.sort(rng.choice(10, size=k, replace=False)), rng.dirichlet(np.ones(k)))
        gamma = float(rng.uniform(0.05, 1.0))
        phi = math.exp(lattice_log_phi(F, gamma))
        if i % 2:
            tau = Geometric(float(rng.uniform(0.05, 0.9)) / max(phi, 1.0))
        else:
            tau = Explicit.from_support((1, 2, 3), tuple(rng.dirichlet(np.ones(3))))
        rep = tilt_identity_check(F, tau, gamma, n_max=5)
        worst_rel = max(worst_rel, rep.max_rel, rep.mixture_max_rel)

        A = ExpPolynomial(float(rng.uniform(0.5, 2.0)), float(rng.uniform(1.5, 4.0)))
        ph = A.phi_at_gamma_hat()
        T = [Poisson(float(rng.uniform(0.2, 3.0))), Binomial(int(rng.integers(1, 7)), float(rng.uniform())),
             Geometric(float(rng.uniform(0.05, 0.9)) / ph)][i % 3]
        pair = tilt_pair(A, T, discretize(A, 0.1, 20.0))
        want = _nu_mean_oracle(T, ph)
        worst_mean = max(worst_mean, abs(pair.nu.mean - want) / want)
    ok = worst_rel <= 1e-12 and worst_mean <= 1e-10
    criterion(4, "tilting identities", ok,
              f"50 instances, max relative identity gap {worst_rel:.2e}, E nu formula gap {worst_mean:.2e}")
    assert worst_rel <= 1e-12
    assert worst_mean <= 1e-10


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def test_construction_certificates(criterion):
    rows = []
    (_, c1), t1 = _timed(lambda: build_h_moments_ext(Weibull(0.5), parse_function("x^0.5"),
                                                      parse_function("ln(1+x)"), 5))
    w1 = c1.divergence_evidence["tail_witnesses"]
    rows.append(("moments_ext", c1, t1, len(w1) >= 4 and min(w1) >= 0.5))
    (_, c2), t2 = _timed(lambda: build_h_convex_inverse(Pareto(1.5), WeibullCount(0.5), 4.0, 4))
    w2 = c2.divergence_evidence["F_star_stage_integrals"]
    rows.append(("convex_inverse", c2, t2, len(w2) >= 4 and min(w2) >= 1.0 - 1e-8))
    (_, c3), t3 = _timed(lambda: build_g_finite_moment(Pareto(2.0), n_stages=30))
    rows.append(("g_finite_moment", c3, t3, len(c3.per_interval_residuals) >= 4))
    (_, c4), t4 = _timed(lambda: flatten_to_sublinear(parse_function("x"), Weibull(0.5), 5))
    w4 = c4.divergence_evidence["stage_contributions"]
    rows.append(("flatten", c4, t4, len(w4) >= 4 and min(w4) >= 1.0 - 1e-8))

    details, all_ok = [], True
    for name, cert, elapsed, witness in rows:
        ok = (cert.passed and cert.max_residual <= 1e-8 and len(cert.per_interval_residuals) >= 4
              and witness and elapsed < 60.0)
        all_ok &= ok
        details.append(f"{name}: {'ok' if ok else 'fail'} res={cert.max_residual:.1e} "
                       f"stages={len(cert.per_interval_residuals)} {elapsed:.1f}s")
    criterion(5, "construction certificates", all_ok, "; ".join(details))
    for name, cert, elapsed, witness in rows:
        assert cert.passed, (name, cert.invariant_flags)
        assert cert.max_residual <= 1e-8, name
        assert len(cert.per_interval_residuals) >= 4, name
        assert witness, name
        assert elapsed < 60.0, name


def test_growth_and_x0(criterion):
    F = Exponential(1.0)
    log_rep = verify_growth_bound(F, parse_function("ln(1+x)"), 1.5, 40, cutoff=60.0)
    lat_mean = discretize(F, 0.25, 60.0).mean()
    n = log_rep.n
    # E e^{ln(1 + S_n)} = 1 + n E xi on the lattice
    identity_gap = float(np.max(np.abs(np.exp(log_rep.log_expectations) - (1 + n * lat_mean)) / (1 + n * lat_mean)))
    weib = verify_growth_bound(Weibull(0.5), parse_function("x^0.4"), 4.0, 40)
    late = weib.ratios[(weib.n >= 20) & (weib.n <= 40)]
    no_growth = bool(weib.bounded and late[-1] <= late[0] * (1 + 1e-9))

    eta_small = lattice_from_points([0.0, 0.75], [0.5, 0.5], 0.25).shifted(-0.5)
    r_log = find_x0_semi_moment(eta_small, parse_function("ln(1+x)"))
    r_const = find_x0_semi_moment(eta_small, Elementary("const", shift=2.0), strict=False)
    eta_par = discretize(Pareto(2.0), 0.25, 1e4, allow_heavy_truncation=True).shifted(-4.0)
    r_par = find_x0_semi_moment(eta_par, Elementary("log1p", coef=0.5), strict=False)
    beyond = r_par.margins[r_par.x >= r_par.x0] if r_par.found else np.array([])
    x0_ok = (r_log.found and r_log.x0 == 0.0 and r_const.found and r_const.x0 == 0.0
             and r_par.found and math.isfinite(r_par.x0) and beyond.size > 0 and bool(np.all(beyond > 0)))
    ok = log_rep.K_hat <= 1 + 1e-9 and identity_gap <= 1e-9 and no_growth and x0_ok
    criterion(6, "growth bound and semi-moment x0", ok,
              f"K_hat(ln(1+x))={log_rep.K_hat:.4f}, identity gap {identity_gap:.1e}, "
              f"Weibull ratios n=20..40 from {late[0]:.4f} to {late[-1]:.4f}, "
              f"x0 = {r_log.x0}, {r_const.x0}, {r_par.x0}")
    assert log_rep.K_hat <= 1 + 1e-9
    assert identity_gap <= 1e-9
    assert no_growth
    assert x0_ok


def _write_config(tmp_path, name, body):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(body))
    return str(path)


def test_honest_failures(criterion, tmp_path, capsys):
    F, tau = Weibull(0.5), WeibullCount(0.3)
    dom = check_G_o_F(F, tau, 4.0, np.geomspace(1.0, 1e4, 200))
    adversarial = _write_config(tmp_path, "adv", {
        "distribution": {"family": "weibull", "beta": 0.5},
        "tau": {"family": "weibull_count", "beta": 0.3},
        "grid": {"step": 0.5, "cutoff": 100.0, "n_points": 80},
        "c": 4.0,
    })
    code_adv = cli.main(["ratio", "--config", adversarial, "--out", str(tmp_path / "adv")])
    low_c = _write_config(tmp_path, "low_c", {
        "distribution": {"family": "pareto", "alpha": 1.5},
        "tau": {"family": "geometric", "q": 0.5},
        "c": 2.0,
        "construct": {"builder": "convex_inverse", "n_stages": 2},
    })
    code_low = cli.main(["construct", "--config", low_c, "--out", str(tmp_path / "low")])
    err = capsys.readouterr().err
    ok = (not dom.verdict.positive) and code_adv == 3 and code_low == 2 and "for some c > E xi" in err
    criterion(7, "honest failures", ok,
              f"domination verdict={dom.verdict.positive}, adversarial exit={code_adv}, c<=E xi exit={code_low}")
    assert not dom.verdict.positive
    assert code_adv == 3
    assert code_low == 2
    assert "for some c > E xi" in err
