"""Diagrams of the identity-target loss and their merging.

A diagram stands for the weight polynomial obtained by multiplying one weight
``u[k, i, m]`` per edge ``(k, i, m)`` and summing over all assignments of
indices ``k`` to H-nodes and ``i`` to p-nodes. Merging two diagrams realizes
``sum_u dG1/du * dG2/du``: choose one edge in each, of equal color, delete
both and glue their H-endpoints together and their p-endpoints together.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

from cpgf.canon import canonical_form
from cpgf.config import ModelConfig, Scenario
from cpgf.poly import MonomialPoly


@dataclass(frozen=True)
class Diagram:
    """Colored bipartite multigraph between p-nodes and H-nodes.

    Parameters
    ----------
    n_p, n_h : int
        Node counts; nodes are numbered from 0 within each kind.
    edges : tuple of (h, p, color)
        Edge multiset, stored sorted. Colors run over ``1..nu`` in ASYM and
        are all 1 in SYM.
    scenario : Scenario
    """

    n_p: int
    n_h: int
    edges: tuple
    scenario: Scenario = Scenario.ASYM

    def __post_init__(self):
        edges = tuple(sorted(tuple(e) for e in self.edges))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        for h, p, c in edges:
            if not (0 <= h < self.n_h and 0 <= p < self.n_p):
                raise ValueError(f"edge {(h, p, c)} references a missing node")
            if c < 1:
                raise ValueError("colors start at 1")
            if self.scenario is Scenario.SYM and c != 1:
                raise ValueError("SYM diagrams carry a single color")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def color_counts(self) -> dict[int, int]:
        counts: dict[int, int] = defaultdict(int)
        for _, _, c in self.edges:
            counts[c] += 1
        return dict(counts)

    def canonical(self) -> "Diagram":
        """Isomorphic copy with canonically numbered nodes."""
        n_p, n_h, edges = canonical_form(self.n_p, self.n_h, self.edges)
        return Diagram(n_p, n_h, edges, self.scenario)

    def key(self):
        """Canonical key; equal for two diagrams iff they are isomorphic."""
        return (self.scenario.value,) + canonical_form(self.n_p, self.n_h, self.edges)

    def key_bytes(self) -> bytes:
        return repr(self.key()).encode()

    def format(self) -> str:
        inner = ",".join(f"({h},{p},{c})" for h, p, c in self.edges)
        return f"P={self.n_p} H={self.n_h} edges=[{inner}]"


def build_D(cfg: ModelConfig) -> Diagram:
    """Diagram of ``sum_i f_i^2``: two H-nodes joined through ``nu`` p-nodes."""
    nu = cfg.nu
    edges = []
    for m in range(nu):
        c = 1 if cfg.sym else m + 1
        edges.append((0, m, c))
        edges.append((1, m, c))
    return Diagram(nu, 2, tuple(edges), cfg.scenario)


def build_R_identity(cfg: ModelConfig) -> Diagram:
    """Diagram of ``sum_i f_{i..i}``: one p-node, one H-node, ``nu`` edges."""
    edges = tuple((0, 0, 1 if cfg.sym else m + 1) for m in range(cfg.nu))
    return Diagram(1, 1, edges, cfg.scenario)


class DiagramSum:
    """Rational linear combination of canonical diagrams plus a scalar channel.

    The scalar channel holds weight-free terms (the target norm ``p/2``) as a
    :class:`~cpgf.poly.MonomialPoly`; it never takes part in merging.
    """

    __slots__ = ("terms", "scalar", "scenario")

    def __init__(self, scenario=Scenario.ASYM, scalar: MonomialPoly | None = None):
        self.scenario = Scenario.parse(scenario)
        self.terms: dict[tuple, list] = {}
        self.scalar = scalar if scalar is not None else MonomialPoly()

    @classmethod
    def single(cls, d: Diagram, coeff=1) -> "DiagramSum":
        out = cls(d.scenario)
        out.add(d, coeff)
        return out

    def add(self, d: Diagram, coeff) -> None:
        coeff = Fraction(coeff)
        if not coeff:
            return
        key = d.key()
        self._add_key(key, coeff)

    def _add_key(self, key, coeff):
        slot = self.terms.get(key)
        if slot is None:
            # the stored representative is always the canonical relabeling
            _, n_p, n_h, edges = key
            self.terms[key] = [Diagram(n_p, n_h, edges, self.scenario), coeff]
            return
        slot[1] += coeff
        if not slot[1]:
            del self.terms[key]

    def __len__(self):
        return len(self.terms)

    def __iter__(self) -> Iterator[tuple[Diagram, Fraction]]:
        for rep, c in self.terms.values():
            yield rep, c

    def coeff(self, d: Diagram) -> Fraction:
        slot = self.terms.get(d.key())
        return slot[1] if slot else Fraction(0)

    def is_zero(self) -> bool:
        return not self.terms and not self.scalar

    def __add__(self, other: "DiagramSum") -> "DiagramSum":
        out = self.scale(1)
        for key, (rep, c) in other.terms.items():
            out._add_key(key, c)
        out.scalar = out.scalar + other.scalar
        return out

    def scale(self, factor) -> "DiagramSum":
        factor = Fraction(factor)
        out = DiagramSum(self.scenario, self.scalar.scale(factor))
        if factor:
            out.terms = {k: [rep, c * factor] for k, (rep, c) in self.terms.items()}
        return out

    def __eq__(self, other):
        if not isinstance(other, DiagramSum):
            return NotImplemented
        mine = {k: c for k, (_, c) in self.terms.items()}
        theirs = {k: c for k, (_, c) in other.terms.items()}
        return mine == theirs and self.scalar == other.scalar

    def dump(self) -> str:
        """Diagram dump, one ``D{id}: ... coeff=num/den`` line per term."""
        lines = []
        for i, key in enumerate(sorted(self.terms, key=_dump_order)):
            rep, c = self.terms[key]
            lines.append(f"D{i}: {rep.format()} coeff={c.numerator}/{c.denominator}")
        return "\n".join(lines)


def _dump_order(key):
    _, n_p, n_h, edges = key
    return (len(edges), n_p, n_h, edges)


def _raw_merges(d1: Diagram, d2: Diagram):
    """Yield unnormalized edge lists of all ordered same-color edge pairings."""
    e1, e2 = d1.edges, d2.edges
    np1, nh1 = d1.n_p, d1.n_h
    for a, (h1, p1, c1) in enumerate(e1):
        rest1 = e1[:a] + e1[a + 1:]
        for b, (h2, p2, c2) in enumerate(e2):
            if c1 != c2:
                continue
            out = list(rest1)
            for j, (h, p, c) in enumerate(e2):
                if j == b:
                    continue
                hn = h1 if h == h2 else nh1 + h - (h > h2)
                pn = p1 if p == p2 else np1 + p - (p > p2)
                out.append((hn, pn, c))
            yield np1 + d2.n_p - 1, nh1 + d2.n_h - 1, out


def merge(d1: Diagram, d2: Diagram) -> DiagramSum:
    """Merge two diagrams.

    Sums over all ordered choices of an edge in ``d1`` and an edge of the
    same color in ``d2``. Isomorphic results are collected with their
    multiplicity.
    """
    if d1.scenario is not d2.scenario:
        raise ValueError("cannot merge diagrams of different scenarios")
    out = DiagramSum(d1.scenario)
    counts: dict[tuple, int] = defaultdict(int)
    tag = d1.scenario.value
    for n_p, n_h, edges in _raw_merges(d1, d2):
        counts[(tag,) + canonical_form(n_p, n_h, edges)] += 1
    for key, c in counts.items():
        out._add_key(key, Fraction(c))
    return out


def merge_sum(S: DiagramSum, G: DiagramSum) -> DiagramSum:
    """Bilinear extension of :func:`merge`; scalar channels contribute nothing."""
    if S.scenario is not G.scenario:
        raise ValueError("cannot merge sums of different scenarios")
    out = DiagramSum(S.scenario)
    acc: dict[tuple, Fraction] = defaultdict(Fraction)
    tag = S.scenario.value
    for d1, c1 in S:
        for d2, c2 in G:
            w = c1 * c2
            local: dict[tuple, int] = defaultdict(int)
            for n_p, n_h, edges in _raw_merges(d1, d2):
                local[(tag,) + canonical_form(n_p, n_h, edges)] += 1
            for key, m in local.items():
                acc[key] += w * m
    for key, c in acc.items():
        if c:
            out._add_key(key, c)
    return out


def loss_sum(cfg: ModelConfig, zero_target: bool = False) -> DiagramSum:
    """``L = D/2 - R + p/2`` for the identity target.

    With ``zero_target`` the target is dropped and ``L = D/2``.
    """
    out = DiagramSum(cfg.scenario)
    out.add(build_D(cfg), Fraction(1, 2))
    if not zero_target:
        out.add(build_R_identity(cfg), -1)
        out.scalar = MonomialPoly({(1, 0, 0): Fraction(1, 2)})
    return out
