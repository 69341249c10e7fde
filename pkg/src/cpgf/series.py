"""Loss-expansion tables, truncated evaluation and coefficient recurrences.

``Y_s`` denotes the expectation of the ``(s+1)``-fold left-nested merge power
of ``D/2 - R`` (plus ``p/2`` at ``s = 0``). The expected loss expands as

    E[L(t)] ~ sum_s Y_s (-t/T)^s / s!

so ``Y_s = (-T)^s E[d^s L / dt^s (0)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from cpgf.config import ModelConfig, Scenario
from cpgf.diagrams import Diagram, DiagramSum, loss_sum, merge_sum
from cpgf.errors import ResourceLimitError
from cpgf.poly import MonomialPoly
from cpgf.wick import expectation_by_pairings, expectation_sum

DEFAULT_BUDGET = 10**6


def default_smax(cfg: ModelConfig) -> int:
    return 5 if (cfg.sym and cfg.nu == 2) else 4


@dataclass
class SeriesTable:
    """Graded loss-expansion coefficients ``Y_0..Y_smax``.

    Attributes
    ----------
    nu : int
    scenario : Scenario
    rows : list of MonomialPoly
        ``rows[s] = Y_s``.
    zero_target : bool
        True for free evolution tables (the ``R`` diagram is dropped).
    sums : list of DiagramSum
        Merged diagram sums behind each row; kept when requested.
    """

    nu: int
    scenario: Scenario
    rows: list = field(default_factory=list)
    zero_target: bool = False
    sums: list = field(default_factory=list)

    @property
    def s_max(self) -> int:
        return len(self.rows) - 1

    def s_D(self, s: int, l: int) -> Fraction:
        """Number of ``D`` factors behind a term of ``Y_s`` with ``sigma^(2l)``."""
        return Fraction(2 * l - (self.nu - 2) * s, self.nu) - 1

    def grading(self, s: int) -> dict:
        """``{(q, n, l): s_D}`` for the weight terms of ``Y_s``."""
        out = {}
        for key in self.rows[s]:
            if key[2] == 0:
                continue
            sd = self.s_D(s, key[2])
            if sd.denominator != 1 or not 0 <= sd <= s + 1:
                raise ValueError(f"term {key} of Y_{s} has non-integral grading {sd}")
            out[key] = int(sd)
        return out

    def dump(self) -> str:
        lines = [f"{self.nu} {self.scenario.value} {self.s_max}"]
        for s, row in enumerate(self.rows):
            lines.append(f"# s={s}")
            body = row.dump()
            if body:
                lines.append(body)
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "SeriesTable":
        lines = text.splitlines()
        nu, scen, smax = lines[0].split()
        rows: list[list[str]] = []
        for line in lines[1:]:
            if line.startswith("#"):
                rows.append([])
            elif line.strip():
                rows[-1].append(line)
        table = cls(int(nu), Scenario.parse(scen))
        table.rows = [MonomialPoly.parse(r) for r in rows]
        if table.s_max != int(smax):
            raise ValueError("header s_max does not match the number of rows")
        return table


def merged_powers(cfg: ModelConfig, s_max: int, zero_target: bool = False,
                  budget: int = DEFAULT_BUDGET):
    """Yield ``(s, S_s)`` with ``S_s`` the left-nested merge power of the loss.

    ``S_0 = L`` and ``S_s = S_{s-1} * L`` with ``*`` the merge.
    """
    L = loss_sum(cfg, zero_target=zero_target)
    S = L
    for s in range(s_max + 1):
        if s > 0:
            S = merge_sum(S, L)
        if len(S) > budget:
            raise ResourceLimitError(
                f"diagram sum at s={s} has {len(S)} terms (budget {budget})", last_completed=s - 1)
        yield s, S


def compute_series(cfg: ModelConfig, s_max: int | None = None, zero_target: bool = False,
                   budget: int = DEFAULT_BUDGET, keep_sums: bool = False) -> SeriesTable:
    """Exact table of ``Y_s`` for ``s = 0..s_max``.

    Parameters
    ----------
    cfg : ModelConfig
        Only ``nu`` and ``scenario`` are used.
    s_max : int, optional
        Highest order, default 5 for SYM with ``nu = 2`` and 4 otherwise.
    zero_target : bool
        Free evolution: merge powers of ``D/2`` only.
    budget : int
        Maximal number of distinct diagrams in a merged sum.
    keep_sums : bool
        Keep the merged diagram sums on the table.
    """
    if s_max is None:
        s_max = default_smax(cfg)
    if s_max < 0:
        raise ValueError("s_max must be non-negative")
    table = SeriesTable(cfg.nu, cfg.scenario, zero_target=zero_target)
    for s, S in merged_powers(cfg, s_max, zero_target, budget):
        table.rows.append(expectation_sum(S))
        if keep_sums:
            table.sums.append(S)
    return table


def eval_truncated_loss(table: SeriesTable, p, H, sigma, T, t, s_cut: int | None = None) -> float:
    """Partial sum ``sum_{s<=s_cut} Y_s(p, H, sigma^2) (-t/T)^s / s!``.

    The series is asymptotic; judging whether ``t`` is small enough is left to
    the caller.
    """
    if s_cut is None:
        s_cut = table.s_max
    if s_cut > table.s_max:
        raise ValueError(f"s_cut={s_cut} exceeds the table order {table.s_max}")
    x = -t / T
    sigma2 = sigma * sigma
    total = 0.0
    for s in range(s_cut + 1):
        total += float(table.rows[s].evaluate(p, H, sigma2)) * x**s / math.factorial(s)
    return total


# Free-evolution coefficients


def extract_flower_coefficients(table: SeriesTable) -> list[Fraction]:
    """Underparameterized free-evolution coefficients ``C_s``.

    ``C_s s!`` is the coefficient of the ``n = 1`` Pareto monomial (the
    flower) of ``E[D^(s+1)]``, so ``C_0 = 1`` and the expected loss is
    ``p^nu H sigma^(2 nu) / 2 * sum_s C_s x^s`` with
    ``x = -p^(nu-1) sigma^(2 nu - 2) t / (2T)``. The table must come from a
    zero-target run, whose rows carry an extra ``1/2^(s+1)``.
    """
    if not table.zero_target:
        raise ValueError("flower coefficients need a zero-target table")
    nu = table.nu
    out = []
    for s, row in enumerate(table.rows):
        # flower: s_D = s+1, n = 1, q = 1+(nu-1)(s+1)
        key = (1 + (nu - 1) * (s + 1), 1, (nu * (s + 2) + (nu - 2) * s) // 2)
        if key not in row:
            raise ValueError(f"flower monomial {key} missing from Y_{s}")
        out.append(row[key] * 2 ** (s + 1) / math.factorial(s))
    return out


@dataclass
class RecurrenceSpec:
    """Linear recurrence ``sum_{k in K} C_{n+k} P_k(n+k) = 0``.

    Attributes
    ----------
    dim : int
        Index dimension ``d``.
    shifts : mapping
        ``{k: P_k}`` with ``k`` a ``d``-tuple and ``P_k`` a callable on index
        tuples.
    """

    dim: int
    shifts: Mapping[tuple, Callable]


@dataclass
class RecurrenceReport:
    ok: bool
    checked: int
    first_violation: tuple | None = None
    residual: Fraction | None = None


def check_recurrence(spec: RecurrenceSpec, coeffs: Mapping[tuple, Fraction] | Callable,
                     window: Iterable[tuple]) -> RecurrenceReport:
    """Verify a recurrence on a window of indices.

    Coefficients outside the supplied mapping count as zero. Raises
    ``ValueError`` if a shifted index of the window leaves the known region
    while still in the non-negative orthant, since the check would then be
    vacuous.
    """
    get = coeffs if callable(coeffs) else (lambda n: coeffs.get(n, 0))
    known = None if callable(coeffs) else set(coeffs)
    bound = None
    if known is not None and known:
        bound = tuple(max(k[i] for k in known) for i in range(spec.dim))
    checked = 0
    for n in window:
        n = tuple(n)
        total = Fraction(0)
        for k, P in spec.shifts.items():
            m = tuple(a + b for a, b in zip(n, k))
            if bound is not None and all(x >= 0 for x in m) and any(x > b for x, b in zip(m, bound)):
                raise ValueError(f"window index {n} needs coefficient {m} beyond the table")
            c = get(m) if all(x >= 0 for x in m) else 0
            if c:
                total += Fraction(c) * P(m)
        checked += 1
        if total:
            return RecurrenceReport(False, checked, n, total)
    return RecurrenceReport(True, checked)


def flower_recurrence(nu: int, scenario) -> RecurrenceSpec:
    """``s C_s = a (1 + (nu-1) s) C_{s-1}`` with ``a = 4`` (ASYM) or ``4 nu`` (SYM)."""
    a = 4 * nu if Scenario.parse(scenario) is Scenario.SYM else 4
    return RecurrenceSpec(1, {
        (0,): lambda m: m[0],
        (-1,): lambda m: -a * (1 + (nu - 1) * (m[0] + 1)),
    })


def circular_recurrence() -> RecurrenceSpec:
    """``M_{s,d} = -4(d+1) M_{s-1,d} + 4 d M_{s-1,d-1}`` for SYM ``nu = 2``."""
    return RecurrenceSpec(2, {
        (0, 0): lambda m: 1,
        (-1, 0): lambda m: 4 * (m[1] + 1),
        (-1, -1): lambda m: -4 * (m[1] + 1),
    })


# SYM nu = 2 circular diagrams


def circular_diagram(s_D: int) -> Diagram:
    """Cycle with ``2(s_D+1)`` single-color edges alternating p- and H-nodes."""
    k = s_D + 1
    edges = []
    for j in range(k):
        edges.append((j, j, 1))
        edges.append((j, (j + 1) % k, 1))
    return Diagram(k, k, tuple(edges), Scenario.SYM)


def circular_coefficients(table: SeriesTable) -> dict:
    """``{(s, s_D): M_{s,s_D}}`` read off the merged sums of a SYM ``nu = 2`` table.

    Raises ``ValueError`` if a merged sum contains a non-circular diagram.
    """
    if table.nu != 2 or table.scenario is not Scenario.SYM or not table.sums:
        raise ValueError("need a SYM nu=2 table computed with keep_sums=True")
    out = {}
    for s, S in enumerate(table.sums):
        for d, c in S:
            s_D = d.n_edges // 2 - 1
            if d.key() != circular_diagram(s_D).key():
                raise ValueError(f"non-circular diagram in merge power s={s}: {d.format()}")
            out[(s, s_D)] = c
    return out


def narayana_count(s_D: int, n: int) -> int:
    """Narayana number ``N_{s_D+1, n}``."""
    a = s_D + 1
    if s_D < 0 or not 1 <= n <= a:
        raise ValueError(f"need 1 <= n <= s_D+1, got s_D={s_D}, n={n}")
    return math.comb(a, n) * math.comb(a, n - 1) // a


def minimal_contraction_count(d: Diagram, n: int) -> int:
    """Number of pairings of ``d`` whose contraction is minimal with ``n`` H-nodes.

    A contraction of a connected diagram with ``2l`` edges has at most
    ``l + 1`` node classes; minimal contractions reach that bound, so their
    p-node count is ``l + 1 - n``.
    """
    l = d.n_edges // 2
    if not 1 <= n <= l:
        raise ValueError(f"n must lie in 1..{l}")
    return int(expectation_by_pairings(d)[(l + 1 - n, n, l)])
