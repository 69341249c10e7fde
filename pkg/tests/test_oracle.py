from fractions import Fraction

import pytest

from cpgf.config import ModelConfig
from cpgf.errors import ResourceLimitError
from cpgf.oracle import gaussian_moments, loss_polynomial, n_weights, oracle_Ys


def test_weight_count():
    assert n_weights(ModelConfig(3, "asym", 2, 3)) == 18
    assert n_weights(ModelConfig(3, "sym", 2, 3)) == 6


def test_gaussian_moments_of_simple_polynomials():
    # u0^4 + 3 u0^2 u1^2 + u0 u1  ->  3 sigma^4 + 3 sigma^4
    P = {4: 1, (2 | (2 << 8)): 3, (1 | (1 << 8)): 1}
    assert gaussian_moments(P, 2) == {2: 6}


@pytest.mark.parametrize("nu", [2, 3, 4])
@pytest.mark.parametrize("p,H", [(1, 1), (2, 1), (2, 3)])
def test_asym_initial_loss_by_hand(nu, p, H):
    # E[L(0)] = p/2 + p^nu H sigma^(2 nu) / 2; the target overlap has zero mean
    if n_weights(ModelConfig(nu, "asym", p, H)) > 24:
        pytest.skip("kept small")
    got = oracle_Ys(ModelConfig(nu, "asym", p, H), 0)
    assert got == {0: Fraction(p, 2), nu: Fraction(p**nu * H, 2)}


@pytest.mark.parametrize("p,H", [(1, 2), (2, 2), (3, 2)])
def test_sym2_initial_loss_by_hand(p, H):
    # Wishart second moment: E||U^T U||^2 = p H (p + H + 1) sigma^4
    got = oracle_Ys(ModelConfig(2, "sym", p, H), 0)
    assert got == {0: Fraction(p, 2), 1: -p * H, 2: Fraction(p * H * (p + H + 1), 2)}


@pytest.mark.parametrize("nu,scenario,p,H,s", [
    (2, "asym", 2, 2, 3),
    (2, "sym", 2, 3, 3),
    (3, "asym", 2, 1, 2),
    (3, "sym", 2, 2, 2),
])
def test_reduced_matches_plain_iteration(nu, scenario, p, H, s):
    cfg = ModelConfig(nu, scenario, p, H)
    for zero_target in (False, True):
        assert oracle_Ys(cfg, s, zero_target) == oracle_Ys(cfg, s, zero_target, reduced=False)


def test_zero_target_drops_target_terms():
    cfg = ModelConfig(2, "asym", 2, 2)
    full = oracle_Ys(cfg, 0)
    free = oracle_Ys(cfg, 0, zero_target=True)
    assert 0 not in free
    assert free[2] == full[2]


def test_loss_polynomial_at_zero_weights():
    P = loss_polynomial(ModelConfig(2, "sym", 3, 2))
    # 2L at u = 0 is the target norm p
    assert P[0] == 3


def test_errors():
    with pytest.raises(ValueError):
        oracle_Ys(ModelConfig(2, "sym"), 0)
    with pytest.raises(ValueError):
        oracle_Ys(ModelConfig(2, "sym", 1, 1), -1)
    with pytest.raises(ResourceLimitError):
        oracle_Ys(ModelConfig(4, "asym", 20, 20), 1)
    with pytest.raises(ResourceLimitError):
        oracle_Ys(ModelConfig(2, "asym", 3, 3), 3, term_budget=10)
