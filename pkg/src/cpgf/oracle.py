"""Brute-force loss-expansion oracle on explicit weight polynomials.

The loss of a tiny model (concrete ``p`` and ``H``) is expanded into an
explicit polynomial in the ``H p nu`` (ASYM) or ``H p`` (SYM) weights. The
gradient-flow rule ``G -> sum_u dG/du dL/du`` is applied symbolically and the
Gaussian expectation is taken monomial by monomial with
``E[u^(2m)] = sigma^(2m) (2m-1)!!``. Nothing here uses diagrams, which makes
the result an independent check of the diagram engine.

Monomials are packed into Python integers, eight bits per variable, so
multiplying monomials is integer addition and differentiation is a shifted
subtraction.

Two shortcuts keep the largest configurations affordable. First, the last
merge and the expectation are fused: ``E[sum_u A_u B_u]`` only needs pairs of
monomials with equal parity patterns, found by bucketing. Second, the loss and
the Gaussian measure are invariant under relabelings of ``k``, of ``i`` and
(ASYM) of the factor index ``m``, and these act transitively on the weights,
so every ``u`` contributes the same expectation and only one needs to be
computed. ``reduced=False`` disables both shortcuts.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from fractions import Fraction

import numpy as np

from cpgf.config import ModelConfig
from cpgf.errors import ResourceLimitError

BITS = 8
MASK = (1 << BITS) - 1
DEFAULT_TERM_BUDGET = 20_000_000


def _var_index(cfg: ModelConfig, k: int, i: int, m: int) -> int:
    if cfg.sym:
        return k * cfg.p + i
    return (m * cfg.H + k) * cfg.p + i


def n_weights(cfg: ModelConfig) -> int:
    return cfg.H * cfg.p * (1 if cfg.sym else cfg.nu)


def loss_polynomial(cfg: ModelConfig, zero_target: bool = False) -> dict:
    """Packed polynomial of ``2 L`` (integer coefficients)."""
    if cfg.p is None or cfg.H is None:
        raise ValueError("the oracle needs concrete p and H")
    nu, p, H = cfg.nu, cfg.p, cfg.H
    L2: dict = defaultdict(int)
    for idx in itertools.product(range(p), repeat=nu):
        f: dict = defaultdict(int)
        for k in range(H):
            key = 0
            for m in range(nu):
                key += 1 << (BITS * _var_index(cfg, k, idx[m], m))
            f[key] += 1
        for a, ca in f.items():
            for b, cb in f.items():
                L2[a + b] += ca * cb
        if not zero_target and len(set(idx)) == 1:
            for a, ca in f.items():
                L2[a] -= 2 * ca
    if not zero_target:
        L2[0] += p
    return {k: c for k, c in L2.items() if c}


def _deriv(P: dict, v: int) -> dict:
    shift = BITS * v
    one = 1 << shift
    out = {}
    for key, c in P.items():
        e = (key >> shift) & MASK
        if e:
            out[key - one] = c * e
    return out


def _product(A: dict, B: dict, out: dict) -> None:
    for a, ca in A.items():
        for b, cb in B.items():
            out[a + b] += ca * cb


def _step(G: dict, dL: list, budget: int) -> dict:
    out: dict = defaultdict(int)
    for v, dLv in enumerate(dL):
        dG = _deriv(G, v)
        if dG:
            _product(dG, dLv, out)
        if len(out) > budget:
            raise ResourceLimitError(f"intermediate polynomial exceeds {budget} terms")
    return {k: c for k, c in out.items() if c}


def _paired_product(A: dict, B: dict, parity: int, out: dict) -> None:
    """Accumulate only products ``a*b`` whose exponents are all even."""
    buckets: dict = defaultdict(list)
    for b, cb in B.items():
        if cb:
            buckets[b & parity].append((b, cb))
    for a, ca in A.items():
        lst = buckets.get(a & parity)
        if lst:
            for b, cb in lst:
                out[a + b] += ca * cb


def _double_factorials(n: int) -> list[int]:
    df = [1]
    for j in range(1, n + 1):
        df.append(df[-1] * (2 * j - 1))
    return df


def gaussian_moments(P: dict, V: int) -> dict[int, int]:
    """``{l: E-coefficient of sigma^(2l)}`` for a packed polynomial at sigma = 1 per degree."""
    if not P:
        return {}
    keys = list(P)
    buf = b"".join(k.to_bytes(V, "little") for k in keys)
    expo = np.frombuffer(buf, dtype=np.uint8).reshape(len(keys), V)
    rows, inverse = np.unique(np.sort(expo, axis=1), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    df = _double_factorials(int(rows.max(initial=0)) // 2 + 1)
    weight = []
    degree = []
    for r in rows:
        if np.any(r & 1):
            weight.append(0)
        else:
            w = 1
            for e in r[r > 0]:
                w *= df[int(e) // 2]
            weight.append(w)
        degree.append(int(r.sum()) // 2)
    out: dict = defaultdict(int)
    for key, g in zip(keys, inverse.tolist()):
        w = weight[g]
        if w:
            out[degree[g]] += P[key] * w
    return {l: c for l, c in out.items() if c}


def oracle_Ys(cfg: ModelConfig, s: int, zero_target: bool = False,
              term_budget: int = DEFAULT_TERM_BUDGET, reduced: bool = True) -> dict[int, Fraction]:
    """``E[L^(*(s+1))]`` at concrete ``p, H`` as a polynomial in ``sigma^2``.

    ``L^(*(s+1))`` is the ``s``-fold iterate of ``G -> sum_u dG/du dL/du``
    started at ``G = L``; it equals ``(-T)^s d^s L / dt^s`` under gradient
    flow ``du/dt = -(1/T) dL/du``.

    Parameters
    ----------
    cfg : ModelConfig
        Needs concrete ``p`` and ``H``.
    s : int
        Expansion order.
    zero_target : bool
        Drop the target (free evolution).
    term_budget : int
        Maximal size of any intermediate polynomial.
    reduced : bool
        Use the fused last step and the weight-orbit symmetry.

    Returns
    -------
    dict
        ``{l: coefficient of sigma^(2l)}``.
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    if cfg.p is None or cfg.H is None:
        raise ValueError("the oracle needs concrete p and H")
    V = n_weights(cfg)
    if V * BITS > 4096:
        raise ResourceLimitError(f"{V} weights is beyond the oracle's intended scale")
    L2 = loss_polynomial(cfg, zero_target)
    scale = 2 ** (s + 1)
    if s == 0:
        raw = gaussian_moments(L2, V)
        return {l: Fraction(c, 2) for l, c in sorted(raw.items())}
    dL = [_deriv(L2, v) for v in range(V)]
    if not reduced:
        G = L2
        for _ in range(s):
            G = _step(G, dL, term_budget)
        raw = gaussian_moments(G, V)
        return {l: Fraction(c, scale) for l, c in sorted(raw.items())}
    parity = sum(1 << (BITS * v) for v in range(V))
    acc: dict = defaultdict(int)
    if s == 1:
        _paired_product(dL[0], dL[0], parity, acc)
    else:
        # d/du0 (sum_w dG/dw dL/dw) times dL/du0, with G the (s-2)-th iterate
        G = L2
        for _ in range(s - 2):
            G = _step(G, dL, term_budget)
        for w in range(V):
            dwG = _deriv(G, w)
            prod: dict = defaultdict(int)
            _product(dL[w], dL[0], prod)
            _paired_product(_deriv(dwG, 0), prod, parity, acc)
            d0dwL = _deriv(dL[w], 0)
            if d0dwL:
                prod = defaultdict(int)
                _product(d0dwL, dL[0], prod)
                _paired_product(dwG, prod, parity, acc)
            if len(acc) > term_budget:
                raise ResourceLimitError(f"intermediate polynomial exceeds {term_budget} terms")
    raw = gaussian_moments({k: c for k, c in acc.items() if c}, V)
    return {l: Fraction(c * V, scale) for l, c in sorted(raw.items()) if c}
