"""Closed-form loss trajectories.

* Free evolution (zero target) in the under- and overparameterized extremes.
* The NTK-limit model entries ``1 - exp(-eta t)``.
* SYM ``nu = 2``: the full loss through the Narayana generating function ``h``
  and the circular-coefficient generating function ``f``.
* SYM ``nu = 4`` gradient ascent: the solution through the function
  ``F(a) = int_0^inf exp(4 a u^2 - u) u du`` and a first integral, with the
  divergence threshold ``rho*`` on ``rho = p^3 sigma^4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from cpgf.config import ModelConfig, Scenario
from cpgf.errors import BlowUpError, ConvergenceError, DomainError, UnsupportedCaseError

# Free evolution


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def free_rate(regime: str, cfg: ModelConfig) -> float:
    """Rate constant ``c`` of the free-evolution law.

    Power-law branches read ``(1 + c t)^(-nu/(nu-1))``; the ASYM
    overparameterized branch reads ``exp(-c t)``.
    """
    nu, p, H, s2, T = cfg.nu, cfg.p, cfg.H, cfg.sigma**2, cfg.T
    if cfg.sym and nu % 2:
        raise UnsupportedCaseError("free evolution laws need even nu in SYM")
    if p is None or (regime == "over" and H is None):
        raise DomainError("free_rate needs concrete p (and H for the over regime)")
    if regime == "under":
        a = 2 * nu * (nu - 1) if cfg.sym else 2 * (nu - 1)
        return a * p ** (nu - 1) * s2 ** (nu - 1) / T
    if regime == "over":
        if cfg.sym:
            return 2 * nu * _double_factorial(nu - 1) * (nu - 1) * p ** (nu / 2 - 1) * H * s2 ** (nu - 1) / T
        return 2 * nu * s2 ** (nu - 1) * H / T
    raise DomainError(f"regime must be 'under' or 'over', got {regime!r}")


def free_initial_loss(regime: str, cfg: ModelConfig) -> float:
    """Leading ``E[L(0)]`` of the free evolution in the given extreme."""
    nu, p, H, s2 = cfg.nu, cfg.p, cfg.H, cfg.sigma**2
    if regime == "over" and cfg.sym:
        return _double_factorial(nu - 1) * p ** (nu / 2) * H**2 * s2**nu / 2
    return p**nu * H * s2**nu / 2


def free_loss(regime: str, cfg: ModelConfig, t):
    """Normalized free-evolution loss ``E[L(t)] / E[L(0)]``.

    Parameters
    ----------
    regime : {"under", "over"}
    cfg : ModelConfig
        Needs ``p`` (and ``H`` for ``"over"``), ``sigma`` and ``T``.
    t : float or array

    Raises
    ------
    DomainError
        At or beyond the negative-time pole ``t <= -1/c`` of a power law.
    """
    c = free_rate(regime, cfg)
    t = np.asarray(t, dtype=float)
    if regime == "over" and not cfg.sym:
        return np.exp(-c * t)
    base = 1 + c * t
    if np.any(base <= 0):
        raise DomainError(f"t must exceed the pole at -1/c = {-1 / c}")
    return base ** (-cfg.nu / (cfg.nu - 1))


# NTK limit


def ntk_entry(eta: float, t, diagonal: bool = True):
    """Limiting trajectory of a model entry: ``1 - exp(-eta t)`` on the diagonal, 0 off it."""
    t = np.asarray(t, dtype=float)
    if not diagonal:
        return np.zeros_like(t)
    return -np.expm1(-eta * t)


# SYM nu = 2


def narayana_h(z, y, sqrt=np.sqrt):
    """Narayana generating function ``sum N_{k+1,n} z^k y^n``.

    Evaluated as ``2y / (A + sqrt(B))`` with ``A = 1 - z(y+1)`` and
    ``B = 1 - 2z(y+1) + z^2 (y-1)^2``, which is the branch with
    ``h(0, y) = y`` and has no cancellation near ``z = 0``.

    Raises
    ------
    DomainError
        If ``B < 0`` or ``A + sqrt(B) <= 0`` (outside the principal branch).
    """
    A, B = _h_parts(z, y)
    _check_branch(A, B)
    return 2 * y / (A + sqrt(B))


def narayana_h_z(z, y, sqrt=np.sqrt):
    """Partial derivative of :func:`narayana_h` in its first argument."""
    A, B = _h_parts(z, y)
    _check_branch(A, B)
    rb = sqrt(B)
    S = A + rb
    dS = -(y + 1) + (-(y + 1) + z * (y - 1) ** 2) / rb
    return -2 * y * dS / S**2


def _h_parts(z, y):
    A = 1 - z * (y + 1)
    B = 1 - 2 * z * (y + 1) + z**2 * (y - 1) ** 2
    return A, B


def _check_branch(A, B):
    try:
        bad = np.any(np.asarray(B, dtype=float) < 0) or np.any(np.asarray(A, dtype=float) <= 0)
    except TypeError:
        bad = B < 0 or A <= 0
    if bad:
        raise DomainError("argument outside the principal branch of the Narayana generating function")


def circular_f(x, z, exp=np.exp):
    """Generating function ``sum_{s, s_D} M_{s, s_D} x^s z^s_D / s!`` of circular coefficients."""
    e = exp(4 * x)
    return (2 * (z - 1) * e - z) / (2 * (z - (z - 1) * e) ** 2)


def sym2_psi(x, y, z, exp=np.exp, sqrt=np.sqrt):
    """``Psi(x, y, z) = e^(-4x) [ (z e^(-4x) / 2) h_z(zeta, y) - h(zeta, y) ]``, ``zeta = z(1 - e^(-4x))``.

    ``exp`` and ``sqrt`` may be replaced by arbitrary-precision versions, in
    which case ``x`` must be a scalar. For ``x`` below ``-_SYM2_SWITCH`` the
    expression is rewritten in ``v = e^(4x)`` so that nothing overflows.
    """
    if np.ndim(x) == 0:
        if x < -_SYM2_SWITCH:
            return _sym2_psi_scaled(exp(4 * x), y, z, sqrt)
        return _sym2_psi_direct(exp(-4 * x), y, z, sqrt)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    far = x < -_SYM2_SWITCH
    out[far] = _sym2_psi_scaled(exp(4 * x[far]), y, z, sqrt)
    out[~far] = _sym2_psi_direct(exp(-4 * x[~far]), y, z, sqrt)
    return out


_SYM2_SWITCH = 2.0


def _sym2_psi_direct(w, y, z, sqrt):
    zeta = z * (1 - w)
    return w * (z * w / 2 * narayana_h_z(zeta, y, sqrt) - narayana_h(zeta, y, sqrt))


def _sym2_psi_scaled(v, y, z, sqrt):
    # zeta = -Z with Z = z w (1 - v); A, sqrt(B) and S = A + sqrt(B) are divided by Z
    u = v / (z * (1 - v))
    rb = sqrt(u * u + 2 * (y + 1) * u + (y - 1) ** 2)
    S = u + (y + 1) + rb
    N = (y + 1) * u + (y - 1) ** 2
    # N / rb -> 0 when y = 1 and u underflows
    if np.ndim(rb) == 0:
        ratio = N / rb if rb else 0 * N
    else:
        ratio = np.divide(N, rb, out=np.zeros(np.shape(rb)), where=rb > 0)
    dS = -(y + 1) - ratio
    return -y * dS / (z * (1 - v) ** 2 * S**2) - 2 * y / (z * (1 - v) * S)


def sym2_loss(p, H, sigma, T, t):
    """Expected loss of SYM ``nu = 2`` gradient flow with the identity target.

    ``E[L(t)] = p/2 + p^2 sigma^2 Psi(-t/T, H/p, p sigma^2)``.

    Parameters
    ----------
    p, H : float
    sigma, T : float
    t : float or array
        Descent times ``t >= 0``; negative times are evaluated while the
        argument of ``h`` stays on the principal branch.
    """
    x = -np.asarray(t, dtype=float) / T
    return p / 2 + p**2 * sigma**2 * sym2_psi(x, H / p, p * sigma**2)


def sym2_limit(p, H) -> float:
    """Long-time loss ``max((p - H)/2, 0)``."""
    return max((p - H) / 2, 0.0)


# SYM nu = 4: the function F


_LAGUERRE = np.polynomial.laguerre.laggauss(56)
_SMALL_A = 0.05


def _check_a(a):
    a = np.asarray(a, dtype=float)
    if np.any(a > 0):
        raise DomainError("F(a) diverges for a > 0")
    return a


def _laguerre_moment(a, power):
    x, w = _LAGUERRE
    a = np.atleast_1d(a)[..., None]
    return np.sum(w * x**power * np.exp(4 * a * x**2), axis=-1)


def F4(a):
    """``F(a) = int_0^inf exp(4 a u^2 - u) u du`` for ``a <= 0``.

    Uses the closed form through the scaled complementary error function
    away from 0 and Gauss-Laguerre quadrature near the removable
    singularity at ``a = 0``.
    """
    a = _check_a(a)
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    out = np.empty_like(a)
    near = a > -_SMALL_A
    out[near] = _laguerre_moment(a[near], 1)
    s = -a[~near]
    b = 0.25 / np.sqrt(s)
    out[~near] = 1 / (8 * s) - math.sqrt(math.pi) / 32 * s**-1.5 * special.erfcx(b)
    return out[0] if scalar else out


def F4_prime(a):
    """``F'(a) = 4 int_0^inf exp(4 a u^2 - u) u^3 du`` for ``a <= 0``."""
    a = _check_a(a)
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    out = np.empty_like(a)
    near = a > -_SMALL_A
    out[near] = 4 * _laguerre_moment(a[near], 3)
    s = -a[~near]
    b = 0.25 / np.sqrt(s)
    E = special.erfcx(b)
    dE = 2 * b * E - 2 / math.sqrt(math.pi)
    db = -0.125 * s**-1.5
    c = math.sqrt(math.pi) / 32
    dF_ds = -1 / (8 * s**2) + c * 1.5 * s**-2.5 * E - c * s**-1.5 * dE * db
    out[~near] = -dF_ds
    return out[0] if scalar else out


def F4_quad(a: float, derivative: bool = False) -> float:
    """Adaptive-quadrature evaluation of ``F`` or ``F'`` (reference route)."""
    if a > 0:
        raise DomainError("F(a) diverges for a > 0")
    power, factor = (3, 4.0) if derivative else (1, 1.0)
    val, err = integrate.quad(lambda u: u**power * math.exp(4 * a * u * u - u), 0, math.inf,
                              epsabs=0, epsrel=1e-13, limit=200)
    return factor * val


def F4_cubed_integral(a: float, tol: float = 1e-12) -> float:
    """``int_0^a F(u)^3 du`` for ``a <= 0`` (``-inf`` allowed); non-positive."""
    if a > 0:
        raise DomainError("the integral is only defined for a <= 0")
    if a == 0:
        return 0.0
    f3 = lambda u: float(F4(u)) ** 3
    pieces = [(max(a, -1.0), 0.0)]
    if a < -1.0:
        pieces.append((a, -1.0))
    total = 0.0
    for lo, hi in pieces:
        val, err = integrate.quad(f3, lo, hi, epsabs=0, epsrel=tol, limit=400)
        if err > max(10 * tol * abs(val), 1e-15):
            raise ConvergenceError(f"quadrature of F^3 over [{lo}, {hi}] did not converge (err {err:g})")
        total += val
    return -total


@lru_cache(maxsize=None)
def _F3_total() -> float:
    """``int_{-inf}^0 F^3``, finite since ``F(a) ~ -1/(8a)``."""
    return -F4_cubed_integral(-math.inf)


@dataclass(frozen=True)
class Nu4Threshold:
    rho: float
    rho_star: float
    regime: str


def nu4_threshold(p, sigma, y) -> Nu4Threshold:
    """Low/high-noise classification of SYM ``nu = 4`` gradient ascent.

    ``rho = p^3 sigma^4`` and ``rho* = 1 / (16 theta int_{-inf}^0 F^3)``
    with ``theta = 1 + 3y``, ``y = H/p^2``.
    """
    if p <= 0 or sigma <= 0 or y < 0:
        raise DomainError("need p > 0, sigma > 0 and y >= 0")
    theta = 1 + 3 * y
    rho = p**3 * sigma**4
    rho_star = 1 / (16 * theta * _F3_total())
    return Nu4Threshold(rho, rho_star, "low-noise" if rho < rho_star else "high-noise")


@dataclass
class Nu4Trajectory:
    """Solution of the ``nu = 4`` ascent on a grid of negative times.

    Arrays cover the requested times up to the blow-up, if any.
    """

    t: np.ndarray
    loss: np.ndarray
    g: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    residual: np.ndarray
    regime: str
    tau_crit: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0


def nu4_g(p, sigma, y, phi, psi):
    """``g = (y theta / 2)(p sigma^2 phi F)^4 - (y/8) p sigma^4 phi^2 F'`` at ``a = sigma^2 psi``."""
    theta = 1 + 3 * y
    a = sigma**2 * np.asarray(psi, dtype=float)
    F = F4(a)
    dF = F4_prime(a)
    return y * theta / 2 * (p * sigma**2 * phi * F) ** 4 - y / 8 * p * sigma**4 * phi**2 * dF


# switch to the psi parameterization once 1/phi^2 drops below this
_W_SWITCH = 1e-3


def nu4_loss(p, H, sigma, T, t, rtol: float = 1e-12, strict: bool = False) -> Nu4Trajectory:
    """Expected loss of SYM ``nu = 4`` gradient ascent, ``p/2 + p^2 g(-t/T, H/p^2)``.

    The trajectory ``(psi, phi)`` solves ``psi' = phi``,
    ``phi' = -8 theta p^3 sigma^6 phi^4 F(sigma^2 psi)^3`` from ``tau = 0``
    backwards. Once ``w = 1/phi^2`` gets small the independent variable is
    switched to ``psi``, where ``dtau/dpsi = sqrt(w)`` and
    ``dw/dpsi = 16 theta p^3 sigma^6 F^3`` are regular; ``w = 0`` marks the
    blow-up time ``tau_crit``. The first integral
    ``1/phi^2 = 1 + 16 theta p^3 sigma^4 int_0^(sigma^2 psi) F^3`` is
    evaluated independently by quadrature and its residual returned.

    Parameters
    ----------
    p, H, sigma, T : float
    t : array
        Non-positive times (gradient ascent).
    rtol : float
        Relative tolerance of the integrator.
    strict : bool
        Raise :class:`BlowUpError` if a requested time lies beyond the
        blow-up instead of truncating.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t > 0):
        raise DomainError("the nu=4 solution only covers gradient ascent, t <= 0")
    y = H / p**2
    theta = 1 + 3 * y
    k = 8 * theta * p**3 * sigma**6
    s2 = sigma**2
    taus = t / T
    tau_end = float(taus.min()) if taus.size else 0.0
    regime = nu4_threshold(p, sigma, y).regime

    def rhs_tau(_, state):
        psi, phi = state
        return [phi, -k * phi**4 * float(F4(s2 * psi)) ** 3]

    def switch(_, state):
        return 1 / state[1] ** 2 - _W_SWITCH

    switch.terminal = True
    atol = 1e-14
    sol1 = None
    if tau_end < 0:
        sol1 = integrate.solve_ivp(rhs_tau, (0.0, tau_end), [0.0, 1.0], method="RK45", rtol=rtol,
                                   atol=atol, dense_output=True, events=switch)
        if sol1.status < 0:
            raise ConvergenceError(f"integration in tau failed: {sol1.message}")
    tau_crit = None
    sol2 = None
    tau_sw = tau_end
    if sol1 is not None and sol1.status == 1:
        tau_sw = float(sol1.t[-1])
        psi_sw, phi_sw = sol1.y[:, -1]

        def rhs_psi(psi, state):
            return [math.sqrt(max(state[1], 0.0)), 2 * k * float(F4(s2 * psi)) ** 3]

        def hit_zero(_, state):
            return state[1]

        def hit_end(_, state):
            return state[0] - tau_end

        hit_zero.terminal = True
        hit_end.terminal = True
        # psi runs to -inf in the low-noise case; bound it generously
        psi_floor = psi_sw + (tau_end - tau_sw) * phi_sw * 1e3 - 1.0
        sol2 = integrate.solve_ivp(rhs_psi, (psi_sw, psi_floor), [tau_sw, 1 / phi_sw**2], method="RK45",
                                   rtol=rtol, atol=atol, dense_output=True, events=[hit_zero, hit_end])
        if sol2.status < 0:
            raise ConvergenceError(f"integration in psi failed: {sol2.message}")
        if sol2.t_events[0].size:
            tau_crit = float(sol2.y_events[0][0][0]) * T
    keep = taus >= (tau_crit / T if tau_crit is not None else -math.inf)
    if strict and not np.all(keep):
        raise BlowUpError(f"blow-up at t = {tau_crit:.12g} before the end of the grid", tau_crit)
    taus_k = taus[keep]
    psi = np.empty_like(taus_k)
    phi = np.empty_like(taus_k)
    for i, tau in enumerate(taus_k):
        if sol1 is None or tau == 0:
            psi[i], phi[i] = 0.0, 1.0
        elif tau >= tau_sw:
            psi[i], phi[i] = sol1.sol(tau)
        else:
            psi[i], phi[i] = _invert_psi(sol2, tau)
    g = nu4_g(p, sigma, y, phi, psi)
    residual = _first_integral_residual(psi, phi, theta, p, sigma)
    return Nu4Trajectory(t=t[keep], loss=p / 2 + p**2 * g, g=g, phi=phi, psi=psi, residual=residual,
                         regime=regime, tau_crit=tau_crit,
                         meta={"theta": theta, "rho": p**3 * sigma**4, "tau_switch": tau_sw * T})


def _invert_psi(sol2, tau):
    """``(psi, phi)`` at ``tau`` from the psi-parameterized branch."""
    lo, hi = sol2.t[-1], sol2.t[0]
    fn = lambda ps: sol2.sol(ps)[0] - tau
    if fn(lo) > 0:
        lo_val = sol2.sol(lo)
        return lo, 1 / math.sqrt(max(lo_val[1], 1e-300))
    ps = optimize.brentq(fn, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    w = sol2.sol(ps)[1]
    return ps, 1 / math.sqrt(max(w, 1e-300))


def _first_integral_residual(psi, phi, theta, p, sigma):
    """``|1/phi^2 - R(psi)|`` with ``R`` from cumulative quadrature of ``F^3``."""
    a = sigma**2 * psi
    order = np.argsort(-a)
    cum = 0.0
    prev = 0.0
    R = np.empty_like(a)
    for idx in order:
        if a[idx] < prev:
            val, err = integrate.quad(lambda u: float(F4(u)) ** 3, a[idx], prev, epsabs=0,
                                      epsrel=1e-13, limit=400)
            cum -= val
            prev = a[idx]
        R[idx] = 1 + 16 * theta * p**3 * sigma**4 * cum
    return np.abs(1 / phi**2 - R)


def nu4_boundary(thetas) -> np.ndarray:
    """Threshold ``rho*(theta)`` for each ``theta``; it does not depend on ``p``."""
    thetas = np.asarray(thetas, dtype=float)
    return 1 / (16 * thetas * _F3_total())
