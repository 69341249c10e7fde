import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpgf import closed_forms as cf
from cpgf.config import ModelConfig
from cpgf.errors import BlowUpError, DomainError, UnsupportedCaseError
from cpgf.pareto import pareto_front
from cpgf.series import circular_coefficients, extract_flower_coefficients, narayana_count


def pareto_value(row, p, H, sigma2, with_target=True):
    """Sum of the Pareto-optimal terms of a row (plus the target constant)."""
    keep = {(t.q, t.n, t.l) for t in pareto_front(row)}
    total = 0.0
    for (q, n, l), c in row.items():
        if (q, n, l) in keep or (with_target and l == 0):
            total += float(c) * p**q * H**n * sigma2**l
    return total


# Free evolution


@pytest.mark.parametrize("nu,scenario", [(2, "asym"), (3, "asym"), (2, "sym"), (4, "sym")])
def test_free_under_matches_flower_series(table, nu, scenario):
    C = extract_flower_coefficients(table(nu, scenario, 4, True))
    cfg = ModelConfig(nu, scenario, 7, 3, 0.2, 1.5)
    for t in (1e-4, 3e-4):
        x = -cfg.p ** (nu - 1) * cfg.sigma ** (2 * nu - 2) * t / (2 * cfg.T)
        series = sum(float(c) * x**s for s, c in enumerate(C))
        assert float(cf.free_loss("under", cfg, t)) == pytest.approx(series, rel=1e-11)


def test_free_over_asym_is_exponential():
    cfg = ModelConfig(3, "asym", 4, 100, 0.3, 2.0)
    rate = 2 * 3 * 0.3**4 * 100 / 2.0
    assert cf.free_rate("over", cfg) == pytest.approx(rate, rel=1e-15)
    t = np.linspace(0, 3, 7)
    np.testing.assert_allclose(cf.free_loss("over", cfg, t), np.exp(-rate * t), rtol=1e-14)


def test_free_evolution_errors():
    with pytest.raises(UnsupportedCaseError):
        cf.free_rate("under", ModelConfig(3, "sym", 4, 4))
    with pytest.raises(DomainError):
        cf.free_rate("sideways", ModelConfig(2, "asym", 4, 4))
    cfg = ModelConfig(2, "asym", 4, 4, 0.5)
    with pytest.raises(DomainError):
        cf.free_loss("under", cfg, -1 / cf.free_rate("under", cfg))


def test_free_initial_loss():
    assert cf.free_initial_loss("under", ModelConfig(3, "asym", 2, 5, 0.5)) == pytest.approx(8 * 5 * 0.5**6 / 2)


def test_ntk_entry():
    t = np.array([0.0, 1.0, 3.0])
    np.testing.assert_allclose(cf.ntk_entry(2.0, t), 1 - np.exp(-2 * t), rtol=1e-15)
    assert np.all(cf.ntk_entry(2.0, t, diagonal=False) == 0)


# Narayana and circular generating functions


def test_narayana_h_coefficients():
    mp.mp.dps = 40
    y = mp.mpf(3) / 7
    coeffs = mp.taylor(lambda z: cf.narayana_h(z, y, sqrt=mp.sqrt), 0, 6)
    for k, c in enumerate(coeffs):
        expected = sum(narayana_count(k, n) * y**n for n in range(1, k + 2))
        assert abs(c - expected) < mp.mpf(10) ** -25


@settings(max_examples=50)
@given(st.floats(-0.5, 0.15), st.floats(0.05, 3.0))
def test_narayana_h_derivative(z, y):
    h = 1e-6
    fd = (cf.narayana_h(z + h, y) - cf.narayana_h(z - h, y)) / (2 * h)
    assert cf.narayana_h_z(z, y) == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_narayana_h_branch():
    assert cf.narayana_h(0.0, 0.3) == pytest.approx(0.3, rel=1e-15)
    with pytest.raises(DomainError):
        cf.narayana_h(1.0, 1.0)


def test_circular_f_initial_condition():
    z = np.linspace(-2, 3, 11)
    np.testing.assert_allclose(cf.circular_f(0.0, z), z / 2 - 1, rtol=1e-15, atol=1e-15)


@given(st.floats(-1.0, 1.0), st.floats(0.05, 0.95))
def test_circular_f_transport(x, z):
    z1 = 1 / ((1 - z) / z * math.exp(4 * x) + 1)
    assert cf.circular_f(x, z) == pytest.approx(cf.circular_f(0.0, z1) * z1 / z, rel=1e-12)


def test_circular_f_matches_engine(table):
    M = circular_coefficients(table(2, "sym", 5, keep_sums=True))
    mp.mp.dps = 40
    z = mp.mpf(2) / 5
    coeffs = mp.taylor(lambda x: cf.circular_f(x, z, exp=mp.exp), 0, 5)
    for s, c in enumerate(coeffs):
        expected = sum(mp.mpf(v.numerator) / v.denominator * z**d for (s2, d), v in M.items() if s2 == s)
        assert abs(c * math.factorial(s) - expected) < mp.mpf(10) ** -20 * (1 + abs(expected))


# SYM nu = 2


def test_sym2_taylor_matches_pareto_terms(table):
    rows = table(2, "sym", 5).rows
    mp.mp.dps = 40
    y, z = mp.mpf(3) / 7, mp.mpf(2) / 5
    coeffs = mp.taylor(lambda x: cf.sym2_psi(x, y, z, exp=mp.exp, sqrt=mp.sqrt), 0, 5)
    for s, c in enumerate(coeffs):
        expected = mp.mpf(0)
        for (q, n, l), v in rows[s].items():
            if l >= 1 and q + n == l + 1:
                expected += mp.mpf(v.numerator) / v.denominator * y**n * z ** (l - 1)
        assert abs(c * math.factorial(s) - expected) < mp.mpf(10) ** -20 * (1 + abs(expected))


def test_sym2_initial_loss_is_pareto_part(table):
    p, H, sigma = 64, 40, 0.11
    expected = pareto_value(table(2, "sym", 0).rows[0], p, H, sigma**2)
    assert float(cf.sym2_loss(p, H, sigma, 1.0, 0.0)) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("H,limit", [(256, 128.0), (512, 0.0), (1024, 0.0)])
def test_sym2_long_time_limit(H, limit):
    p = 512
    sigma = math.sqrt(1 / p)
    assert cf.sym2_limit(p, H) == limit
    late = cf.sym2_loss(p, H, sigma, 1.0, np.array([40.0, 400.0, 4000.0]))
    assert np.all(np.isfinite(late))
    np.testing.assert_allclose(late, limit, atol=1e-3 * p)


def test_sym2_paths_agree_at_switch():
    x = np.array([-2.0 - 1e-9, -2.0 + 1e-9])
    vals = cf.sym2_psi(x, 0.7, 1.3)
    assert vals[0] == pytest.approx(vals[1], rel=1e-7)
    for xi, v in zip(x, vals):
        assert cf.sym2_psi(float(xi), 0.7, 1.3) == pytest.approx(v, rel=1e-14)
    # direct and rescaled forms evaluated on both sides of the switch
    for xi in (-1.5, -2.5, -4.0):
        direct = cf._sym2_psi_direct(math.exp(-4 * xi), 0.7, 1.3, np.sqrt)
        scaled = cf._sym2_psi_scaled(math.exp(4 * xi), 0.7, 1.3, np.sqrt)
        assert direct == pytest.approx(scaled, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 8.0), st.floats(0.01, 16.0))
def test_sym2_loss_decreases(ratio, psigma2):
    p = 64
    H = ratio * p
    sigma = math.sqrt(psigma2 / p)
    t = np.linspace(0, 20, 81)
    L = cf.sym2_loss(p, H, sigma, 1.0, t)
    assert np.all(np.diff(L) <= 1e-9 * p)
    assert L[-1] >= cf.sym2_limit(p, H) - 1e-9 * p


# SYM nu = 4


def test_F4_at_zero():
    assert cf.F4(0.0) == pytest.approx(1.0, rel=1e-14)
    assert cf.F4_prime(0.0) == pytest.approx(24.0, rel=1e-12)


@pytest.mark.parametrize("a", [-1e-4, -0.01, -0.049, -0.051, -0.2, -1.0, -10.0, -1e3])
def test_F4_against_quadrature(a):
    assert cf.F4(a) == pytest.approx(cf.F4_quad(a), rel=1e-10)
    assert cf.F4_prime(a) == pytest.approx(cf.F4_quad(a, derivative=True), rel=1e-10)


def test_F4_tail_and_domain():
    a = -1e6
    assert cf.F4(a) == pytest.approx(-1 / (8 * a), rel=1e-3)
    with pytest.raises(DomainError):
        cf.F4(0.1)
    with pytest.raises(DomainError):
        cf.F4_cubed_integral(0.5)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5.0, -1e-3))
def test_F4_is_positive_and_increasing(a):
    assert cf.F4(a) > 0
    assert cf.F4_prime(a) > 0


def test_threshold_scales_inversely_with_theta():
    base = cf.nu4_threshold(8, 0.1, 0.5)
    theta = 1 + 3 * 0.5
    doubled_y = (2 * theta - 1) / 3
    assert cf.nu4_threshold(8, 0.1, doubled_y).rho_star == pytest.approx(base.rho_star / 2, rel=1e-14)
    assert cf.nu4_boundary([theta, 2 * theta]) == pytest.approx([base.rho_star, base.rho_star / 2], rel=1e-14)
    assert base.rho == pytest.approx(8**3 * 0.1**4)
    assert base.regime == ("low-noise" if base.rho < base.rho_star else "high-noise")


def _nu4_case(p, y, ratio):
    theta = 1 + 3 * y
    rho = ratio * cf.nu4_boundary([theta])[0]
    return p, y * p * p, (rho / p**3) ** 0.25


@pytest.mark.parametrize("ratio", [0.3, 3.0])
def test_nu4_first_integral_residual(ratio):
    p, H, sigma = _nu4_case(16, 0.5, ratio)
    tr = cf.nu4_loss(p, H, sigma, 1.0, -np.geomspace(1e-3, 50, 60))
    assert tr.max_residual <= 1e-8
    assert tr.regime == ("low-noise" if ratio < 1 else "high-noise")
    assert (tr.tau_crit is None) == (ratio < 1)


def test_nu4_low_noise_returns_to_half_p():
    p, H, sigma = _nu4_case(16, 0.5, 0.3)
    tr = cf.nu4_loss(p, H, sigma, 1.0, np.array([-1e3, -1e4]))
    assert np.all(np.abs(tr.loss - p / 2) < 0.01 * p / 2)
    assert abs(tr.loss[1] - p / 2) < abs(tr.loss[0] - p / 2)


def test_nu4_high_noise_blows_up():
    p, H, sigma = _nu4_case(16, 0.5, 3.0)
    t = np.linspace(0, -20, 201)
    tr = cf.nu4_loss(p, H, sigma, 1.0, t)
    assert tr.tau_crit is not None and tr.tau_crit < 0
    assert tr.t.min() >= tr.tau_crit
    near = cf.nu4_loss(p, H, sigma, 1.0, tr.tau_crit * (1 - np.array([1e-2, 1e-3, 1e-4])))
    assert np.all(np.diff(near.loss) > 0) and near.loss[-1] > 1e4 * p
    # L ~ (tau - tau_crit)^(-4/3)
    slope = np.polyfit(np.log([1e-2, 1e-3, 1e-4]), np.log(near.loss - p / 2), 1)[0]
    assert slope == pytest.approx(-4 / 3, abs=0.02)
    with pytest.raises(BlowUpError):
        cf.nu4_loss(p, H, sigma, 1.0, t, strict=True)
    with pytest.raises(DomainError):
        cf.nu4_loss(p, H, sigma, 1.0, np.array([1.0]))


def test_nu4_early_time_matches_pareto_terms(table):
    rows = table(4, "sym", 2).rows
    p = 1000.0
    y = 0.7
    H = y * p * p
    sigma = (0.3 / p**3) ** 0.25
    h = 0.01
    tr = cf.nu4_loss(p, H, sigma, 1.0, -h * np.arange(5))
    c = np.polyfit(h * np.arange(5), p * p * tr.g, 4)[::-1]
    s2 = sigma**2
    assert c[0] == pytest.approx(pareto_value(rows[0], p, H, s2, with_target=False), rel=1e-12)
    assert c[1] == pytest.approx(pareto_value(rows[1], p, H, s2), rel=1e-9)
    assert 2 * c[2] == pytest.approx(pareto_value(rows[2], p, H, s2), rel=1e-5)
