"""Gaussian expectations of diagrams.

For i.i.d. centered Gaussian weights the expectation of a diagram is a sum
over perfect matchings of its edges into same-color pairs. Each matched pair
forces its two H-endpoints and its two p-endpoints to carry equal indices,
so a matching contributes ``p^q H^n sigma^(2l)`` with ``q, n`` the numbers
of p- and H-node classes after contraction and ``2l`` the edge count.

:func:`expectation` organizes the sum recursively: it fixes one edge ``e``,
pairs it with every same-color partner ``f``, contracts the endpoints and
recurses on the remaining edges. Sub-results are memoized by canonical form,
isolated nodes are factored out as powers of ``p`` and ``H``, and pieces with
disjoint color sets are multiplied. :func:`expectation_by_pairings` enumerates matchings
one by one and serves as a reference.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from fractions import Fraction
from itertools import product

from cpgf.canon import canonical_form
from cpgf.diagrams import Diagram, DiagramSum
from cpgf.poly import MonomialPoly

_CACHE: dict[tuple, dict] = {}


def clear_cache() -> None:
    """Drop all memoized sub-expectations."""
    _CACHE.clear()


def cache_size() -> int:
    return len(_CACHE)


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = defaultdict(int)
    for (q1, n1), c1 in a.items():
        for (q2, n2), c2 in b.items():
            out[(q1 + q2, n1 + n2)] += c1 * c2
    return dict(out)


def _components(n_p, n_h, edges):
    """Split a diagram without isolated nodes into independent pieces.

    Connected components that share a color can still be paired with each
    other, so they are grouped until the groups have disjoint color sets.
    """
    parent = list(range(n_p + n_h))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        a, b = find(a), find(b)
        if a != b:
            parent[a] = b

    first_of_color = {}
    for h, p, c in edges:
        union(p, n_p + h)
        if c in first_of_color:
            union(p, first_of_color[c])
        else:
            first_of_color[c] = p
    groups = defaultdict(list)
    for e in edges:
        groups[find(e[1])].append(e)
    if len(groups) == 1:
        return [(n_p, n_h, edges)]
    return [_relabel(es) for es in groups.values()]


def _relabel(edges):
    ps = {p for _, p, _ in edges}
    hs = {h for h, _, _ in edges}
    pm = {p: i for i, p in enumerate(sorted(ps))}
    hm = {h: i for i, h in enumerate(sorted(hs))}
    return len(ps), len(hs), [(hm[h], pm[p], c) for h, p, c in edges]


def _expect(n_p: int, n_h: int, edges) -> dict:
    """Expectation as ``{(q, n): count}``; the sigma power is implicit."""
    if not edges:
        return {(n_p, n_h): 1}
    colors = Counter(c for _, _, c in edges)
    if any(v % 2 for v in colors.values()):
        return {}
    used_p = {p for _, p, _ in edges}
    used_h = {h for h, _, _ in edges}
    iso_p, iso_h = n_p - len(used_p), n_h - len(used_h)
    if iso_p or iso_h:
        inner = _expect(*_relabel(edges))
        return {(q + iso_p, n + iso_h): c for (q, n), c in inner.items()}
    pieces = _components(n_p, n_h, edges)
    if len(pieces) > 1:
        out = {(0, 0): 1}
        for piece in pieces:
            out = _poly_mul(out, _expect(*piece))
            if not out:
                return {}
        return out
    key = canonical_form(n_p, n_h, edges)
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    n_p, n_h, edges = key
    result = _expect_connected(n_p, n_h, list(edges), colors)
    _CACHE[key] = result
    return result


def _expect_connected(n_p, n_h, edges, colors):
    deg_p = Counter(p for _, p, _ in edges)
    # pivot: rarest color, then the edge at the p-node of smallest degree
    c0 = min(colors, key=lambda c: (colors[c], c))
    ie = min((i for i, e in enumerate(edges) if e[2] == c0), key=lambda i: (deg_p[edges[i][1]], i))
    he, pe, _ = edges[ie]
    rest = edges[:ie] + edges[ie + 1:]
    # parallel copies of the same partner edge give identical contractions
    by_edge: dict[tuple, list] = defaultdict(list)
    for j, e in enumerate(rest):
        if e[2] == c0:
            by_edge[e].append(j)
    total: dict = defaultdict(int)
    for (hf, pf, _), idx in by_edge.items():
        j = idx[0]
        remaining = rest[:j] + rest[j + 1:]
        nh2, np2 = n_h, n_p
        if hf != he:
            nh2 -= 1
            remaining = [(_glue(h, hf, he), p, c) for h, p, c in remaining]
        if pf != pe:
            np2 -= 1
            remaining = [(h, _glue(p, pf, pe), c) for h, p, c in remaining]
        sub = _expect(np2, nh2, remaining)
        # merged nodes that lost all edges are isolated and counted by _expect
        mult = len(idx)
        for k, v in sub.items():
            total[k] += mult * v
    return {k: v for k, v in total.items() if v}


def _glue(x, src, dst):
    """Index of node ``x`` after node ``src`` is identified with ``dst``."""
    if x == src:
        x = dst
    return x - (x > src)


def expectation(G: Diagram) -> MonomialPoly:
    """Gaussian expectation of a diagram as a polynomial in ``p, H, sigma^2``.

    Weights are i.i.d. ``N(0, sigma^2)``. A diagram with an odd-sized color
    class has zero expectation.
    """
    if G.n_edges % 2:
        return MonomialPoly()
    l = G.n_edges // 2
    raw = _expect(G.n_p, G.n_h, list(G.edges))
    return MonomialPoly({(q, n, l): c for (q, n), c in raw.items()})


def expectation_sum(S: DiagramSum) -> MonomialPoly:
    """Linear extension of :func:`expectation`, including the scalar channel."""
    acc: dict = defaultdict(Fraction)
    for d, c in S:
        if d.n_edges % 2:
            continue
        l = d.n_edges // 2
        for (q, n), v in _expect(d.n_p, d.n_h, list(d.edges)).items():
            acc[(q, n, l)] += c * v
    return MonomialPoly(acc) + S.scalar


def _matchings(items):
    """All perfect matchings of a list, as lists of index pairs."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for m in _matchings(rest[:i] + rest[i + 1:]):
            yield [(first, other)] + m


def expectation_by_pairings(G: Diagram) -> MonomialPoly:
    """Expectation by explicit enumeration of all same-color pairings.

    Exponential in the edge count; intended as a cross-check for small
    diagrams.
    """
    by_color = defaultdict(list)
    for i, (_, _, c) in enumerate(G.edges):
        by_color[c].append(i)
    if any(len(v) % 2 for v in by_color.values()):
        return MonomialPoly()
    l = G.n_edges // 2
    tally: Counter = Counter()
    per_color = [list(_matchings(v)) for v in by_color.values()]
    for choice in product(*per_color):
        parent = {("p", i): ("p", i) for i in range(G.n_p)}
        parent.update({("h", i): ("h", i) for i in range(G.n_h)})

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        for matching in choice:
            for a, b in matching:
                ha, pa, _ = G.edges[a]
                hb, pb, _ = G.edges[b]
                for u, v in ((("h", ha), ("h", hb)), (("p", pa), ("p", pb))):
                    ru, rv = find(u), find(v)
                    if ru != rv:
                        parent[ru] = rv
        roots = {find(x) for x in parent}
        q = sum(1 for r in roots if r[0] == "p")
        tally[(q, len(roots) - q)] += 1
    return MonomialPoly({(q, n, l): c for (q, n), c in tally.items()})
