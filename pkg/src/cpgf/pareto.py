"""Pareto-optimal monomials of the expansion coefficients and learning regimes.

Under a power-law scaling ``p ~ a^ap``, ``H ~ a^ah``, ``sigma ~ a^as`` a
monomial ``p^q H^n sigma^(2l)`` grows like ``a^(ap q + ah n + as 2l)``. Only
monomials that are Pareto-optimal in ``(q, n)`` at fixed ``l`` can lead, and
for the identity target they sit on a planar polygon with a known normal.
Faces of that polygon label the extreme learning regimes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from cpgf.config import Scenario
from cpgf.errors import DomainError, UnsupportedCaseError
from cpgf.poly import MonomialPoly


@dataclass(frozen=True, order=True)
class ParetoTerm:
    """Pareto-optimal monomial ``p^q H^n sigma^(2l)``.

    ``s_D`` is filled in when the order ``s`` and ``nu`` are known.
    """

    q: int
    n: int
    l: int
    s_D: int | None = None
    sign: int = 1

    @property
    def triple(self) -> tuple[int, int, int]:
        """``(q, n, 2l)``, the point used for the polygon."""
        return (self.q, self.n, 2 * self.l)


def pareto_front(Y: MonomialPoly, nu: int | None = None, s: int | None = None) -> list[ParetoTerm]:
    """Per-``l`` Pareto filter on ``(q, n)`` over the weight terms of ``Y``.

    Parameters
    ----------
    Y : MonomialPoly
        Terms with ``l = 0`` (the target constant) are ignored.
    nu, s : int, optional
        When both are given, each term carries its ``s_D`` grading.

    Returns
    -------
    list of ParetoTerm
        Sorted by ``(l, q, n)``.
    """
    by_l: dict[int, list[tuple[int, int, Fraction]]] = {}
    for (q, n, l), c in Y.items():
        if l == 0 or not c:
            continue
        by_l.setdefault(l, []).append((q, n, c))
    front = []
    for l, terms in by_l.items():
        for q, n, c in terms:
            dominated = any(q2 >= q and n2 >= n and (q2, n2) != (q, n) for q2, n2, _ in terms)
            if dominated:
                continue
            s_D = None
            if nu is not None and s is not None:
                sd = Fraction(2 * l - (nu - 2) * s, nu) - 1
                s_D = int(sd) if sd.denominator == 1 else None
            front.append(ParetoTerm(q, n, l, s_D, 1 if c > 0 else -1))
    return sorted(front, key=lambda t: (t.l, t.q, t.n))


def _require_supported(nu: int, scenario) -> Scenario:
    scenario = Scenario.parse(scenario)
    if nu < 2:
        raise DomainError("nu must be at least 2")
    if scenario is Scenario.SYM and nu % 2:
        raise UnsupportedCaseError("Pareto structure for SYM with odd nu is not covered")
    return scenario


def theorem2_prediction(nu: int, scenario, s: int) -> set[tuple[int, int, int, int]]:
    """Predicted Pareto-optimal exponents of ``Y_s`` as ``(q, n, l, s_D)``.

    ``2l = nu (s_D + 1) + (nu - 2) s`` with ``0 <= s_D <= s + 1`` and
    ``1 <= n <= s_D + 1``. The ``p`` exponent is
    ``1 + (nu-1) s_D - nu (n-1) / 2`` for SYM (even ``nu``) and
    ``1 + (nu-1)(s_D + 1 - n)`` for ASYM. ASYM drops terms with odd
    ``s_R = s + 1 - s_D`` and the corner ``(n, s_D) = (s+2, s+1)``.

    Raises
    ------
    UnsupportedCaseError
        For SYM with odd ``nu``.
    """
    scenario = _require_supported(nu, scenario)
    if s < 0:
        raise DomainError("s must be non-negative")
    out = set()
    for s_D in range(s + 2):
        two_l = nu * (s_D + 1) + (nu - 2) * s
        for n in range(1, s_D + 2):
            if scenario is Scenario.SYM:
                q = 1 + (nu - 1) * s_D - nu * (n - 1) // 2
            else:
                if (s + 1 - s_D) % 2 or (n, s_D) == (s + 2, s + 1):
                    continue
                q = 1 + (nu - 1) * (s_D + 1 - n)
            out.add((q, n, two_l // 2, s_D))
    return out


@dataclass
class FrontComparison:
    """Outcome of comparing a computed front with the prediction."""

    missing: set = field(default_factory=set)
    unexpected: set = field(default_factory=set)
    cancelled: set = field(default_factory=set)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.unexpected or self.cancelled)


def compare_front(Y: MonomialPoly, nu: int, scenario, s: int) -> FrontComparison:
    """Compare ``pareto_front(Y)`` with :func:`theorem2_prediction`.

    A predicted triple absent from ``Y`` altogether is reported as
    ``cancelled`` (its coefficient summed to zero) when some term of the
    same ``l`` dominates nothing at that spot, and as ``missing`` otherwise.
    """
    predicted = theorem2_prediction(nu, scenario, s)
    got = {(t.q, t.n, t.l, t.s_D) for t in pareto_front(Y, nu, s)}
    cmp = FrontComparison()
    cmp.unexpected = got - predicted
    for term in predicted - got:
        q, n, l, _ = term
        if (q, n, l) in Y:
            cmp.missing.add(term)
        else:
            cmp.cancelled.add(term)
    return cmp


def plane_normal(nu: int, scenario) -> tuple[Fraction, Fraction, Fraction]:
    """Common normal of the Pareto polygons, scaled so its first entry is 1."""
    scenario = _require_supported(nu, scenario)
    h = Fraction(nu, 2) if scenario is Scenario.SYM else Fraction(nu - 1)
    return (Fraction(1), h, Fraction(1 - nu, nu))


@dataclass
class PlanarityReport:
    normal: tuple
    residual: Fraction
    offsets: dict
    fitted: dict

    @property
    def ok(self) -> bool:
        return self.residual == 0


def planarity_check(fronts: Mapping[int, Iterable[ParetoTerm]], nu: int, scenario) -> PlanarityReport:
    """Check that every front lies on a plane with the common normal.

    Parameters
    ----------
    fronts : mapping
        ``{s: front}``.

    Returns
    -------
    PlanarityReport
        ``residual`` is the largest spread of ``normal . (q, n, 2l)`` within
        one front (exactly 0 for a planar front); ``offsets`` holds the
        plane offset per ``s``; ``fitted`` holds, per ``s`` with at least
        three non-collinear points, the normal recovered from the data.
    """
    normal = plane_normal(nu, scenario)
    residual = Fraction(0)
    offsets = {}
    fitted = {}
    for s, front in fronts.items():
        pts = [t.triple for t in front]
        if not pts:
            raise DomainError(f"front for s={s} is empty")
        vals = [sum(a * x for a, x in zip(normal, pt)) for pt in pts]
        residual = max(residual, max(vals) - min(vals))
        offsets[s] = vals[0]
        fit = _fit_normal(pts)
        if fit is not None:
            fitted[s] = fit
    return PlanarityReport(normal, residual, offsets, fitted)


def _fit_normal(pts):
    """Normal of the plane through the first three non-collinear points."""
    base = pts[0]
    for i in range(1, len(pts)):
        u = [Fraction(a - b) for a, b in zip(pts[i], base)]
        for j in range(i + 1, len(pts)):
            v = [Fraction(a - b) for a, b in zip(pts[j], base)]
            n = (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])
            if any(n):
                if n[0] == 0:
                    return n
                return tuple(x / n[0] for x in n)
    return None


# Regime classification

# Polygon vertices as (s_D, n) functions of the order s (even s for ASYM).
_SYM_VERTICES = {
    "A": lambda s: (s + 1, 1),
    "B": lambda s: (s + 1, s + 2),
    "E": lambda s: (0, 1),
}
_ASYM_VERTICES = {
    "A": lambda s: (s + 1, 1),
    "B": lambda s: (s + 1, s + 1),
    "C": lambda s: (s - 1, s),
    "D": lambda s: (1, 2),
    "E": lambda s: (1, 1),
}
_SYM_CYCLE = "ABE"
_ASYM_CYCLE = "ABCDE"
# vertex whose s-slope monomial names the natural T when several lead
_SYM_T_PRIORITY = "EAB"
_ASYM_T_PRIORITY = "EDBCA"

# face -> (parameterization, learning, interpretation or None, natural T kind)
_SYM_FACES = {
    "A-B": ("balanced", "no", "free evolution"),
    "B-E": ("over", "rich", "mean-field"),
    "E": ("agnostic", "rich", None),
    "E-A": ("under", "rich", None),
    "A": ("under", "no", "free evolution"),
    "B": ("over", "no", "free evolution"),
    "A-B-E": ("balanced", "rich", None),
}
_ASYM_FACES = {
    "A-B": ("balanced", "no", "free evolution"),
    "B-C": ("over", "lazy", "NTK"),
    "C": ("over", "lazy", "NTK, f(0) = 0"),
    "C-D": ("over", "rich", "mean-field"),
    "D-E": ("balanced", "rich", None),
    "E-A": ("under", "rich", None),
    "A": ("under", "no", "free evolution"),
    "B": ("over", "no", "free evolution"),
    "D": ("over", "rich", None),
    "E": ("under", "rich", None),
    "A-B-C-D-E": ("balanced", "rich", None),
}


def _vertex_triple(nu, scenario, s_D, n, s):
    if scenario is Scenario.SYM:
        q = 1 + (nu - 1) * s_D - Fraction(nu, 2) * (n - 1)
    else:
        q = 1 + (nu - 1) * (s_D + 1 - n)
    return (Fraction(q), Fraction(n), Fraction(nu * (s_D + 1) + (nu - 2) * s))


def _vertex_score(alpha, nu, scenario, vertex_fn):
    """Exponent of a vertex monomial as ``(slope in s, intercept)``."""
    at0 = _vertex_triple(nu, scenario, *vertex_fn(0), 0)
    at2 = _vertex_triple(nu, scenario, *vertex_fn(2), 2)
    e0 = sum(a * x for a, x in zip(alpha, at0))
    e2 = sum(a * x for a, x in zip(alpha, at2))
    slope = (e2 - e0) / 2
    return slope, e0, [(x2 - x0) / 2 for x0, x2 in zip(at0, at2)]


def _format_monomial(p_exp, h_exp, sigma_exp) -> str:
    parts = []
    for name, e in (("p", p_exp), ("H", h_exp), ("sigma", sigma_exp)):
        if e == 0:
            continue
        e = Fraction(e)
        txt = str(e) if e.denominator == 1 else f"({e})"
        parts.append(name if e == 1 else f"{name}^{txt}")
    return "*".join(parts) if parts else "1"


@dataclass(frozen=True)
class ScalingRegime:
    """Classified power-law scaling.

    Attributes
    ----------
    alpha : tuple of Fraction
        ``(alpha_p, alpha_H, alpha_sigma)``.
    face : str
        Face of the Pareto polygon whose terms lead jointly, e.g. ``"B-C"``.
    natural_T : str
        Monomial in ``p, H, sigma`` that balances one order of ``t / T``.
    parameterization : str
        ``over``, ``under``, ``balanced`` or ``agnostic``.
    learning : str
        ``no``, ``lazy`` or ``rich``.
    interpretation : str or None
    degenerate : bool
        True if the leading set was not a listed face.
    """

    alpha: tuple
    face: str
    natural_T: str
    parameterization: str
    learning: str
    interpretation: str | None
    degenerate: bool = False

    def report(self) -> str:
        label = f"face {self.face}"
        if self.interpretation:
            label += f" ({self.interpretation})"
        out = f"{label}, natural T = {self.natural_T}"
        out += f", {self.parameterization}-parameterized, learning: {self.learning}"
        if self.degenerate:
            out += " [degenerate tie]"
        return out


def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(x)


def classify_regime(alpha, nu: int, scenario) -> ScalingRegime:
    """Identify the leading face of the Pareto polygon for a scaling ``alpha``.

    Each polygon vertex is a monomial whose exponent under ``alpha`` is an
    affine function ``slope * s + intercept`` of the order ``s``. The face is
    the set of vertices that maximize ``(slope, intercept)``
    lexicographically, i.e. the vertices leading for all large ``s``. The
    natural ``T`` is the ``s``-slope monomial of a leading vertex.

    Parameters
    ----------
    alpha : sequence of three numbers or strings
        Exponents of ``p``, ``H`` and ``sigma``; floats are taken exactly.
    nu : int
    scenario : Scenario or str

    Raises
    ------
    DomainError
        If ``alpha_p <= 0`` or ``alpha_H <= 0``.
    UnsupportedCaseError
        For SYM with odd ``nu``.
    """
    scenario = _require_supported(nu, scenario)
    alpha = tuple(_to_fraction(a) for a in alpha)
    if len(alpha) != 3:
        raise DomainError("alpha needs three components")
    if alpha[0] <= 0 or alpha[1] <= 0:
        raise DomainError("alpha_p and alpha_H must be positive")
    vertices = _SYM_VERTICES if scenario is Scenario.SYM else _ASYM_VERTICES
    cycle = _SYM_CYCLE if scenario is Scenario.SYM else _ASYM_CYCLE
    faces = _SYM_FACES if scenario is Scenario.SYM else _ASYM_FACES
    scores = {v: _vertex_score(alpha, nu, scenario, fn) for v, fn in vertices.items()}
    best = max((sc[0], sc[1]) for sc in scores.values())
    lead = [v for v in cycle if (scores[v][0], scores[v][1]) == best]
    face, degenerate = _face_label(lead, cycle)
    parameterization, learning, interp = faces[face]
    priority = _SYM_T_PRIORITY if scenario is Scenario.SYM else _ASYM_T_PRIORITY
    named = next(v for v in priority if v in lead)
    slope_triple = scores[named][2]
    # exponents of p, H, sigma in the s-slope monomial p^dq H^dn sigma^(d2l)
    natural_T = _format_monomial(slope_triple[0], slope_triple[1], slope_triple[2])
    return ScalingRegime(alpha, face, natural_T, parameterization, learning, interp, degenerate)


def _face_label(lead: list[str], cycle: str) -> tuple[str, bool]:
    if len(lead) == len(cycle):
        return "-".join(cycle), False
    if len(lead) == 1:
        return lead[0], False
    if len(lead) == 2:
        a, b = lead
        i, j = cycle.index(a), cycle.index(b)
        k = len(cycle)
        if (i + 1) % k == j:
            return f"{a}-{b}", False
        if (j + 1) % k == i:
            return f"{b}-{a}", False
    # not a face of the polygon: fall back to the whole polygon
    return "-".join(cycle), True
