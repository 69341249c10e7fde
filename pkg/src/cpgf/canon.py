"""Canonical forms of diagrams.

A diagram is a bipartite multigraph between p-nodes and H-nodes whose edges
carry a color. It is encoded as a simple vertex-colored graph by turning each
edge into a vertex adjacent to its two endpoints; the partition is
``[p-nodes, H-nodes, edge-vertices of color c1, c2, ...]``. A canonical
labeling of that graph induces canonical orders of the p- and H-nodes, and
the sorted relabeled edge list is then a complete isomorphism invariant.

Two backends are provided. :func:`canonical_form` uses nauty through
``pynauty`` and is used everywhere in the engine. :func:`canonical_form_reference`
is a self-contained partition refinement with exhaustive individualization.
It is exponential on highly symmetric inputs and exists to cross-check the
nauty backend on small diagrams.
"""

from __future__ import annotations

from collections import defaultdict

import pynauty

Edge = tuple  # (h, p, color)
CanonicalForm = tuple  # (n_p, n_h, sorted edges)


def canonical_form(n_p: int, n_h: int, edges) -> CanonicalForm:
    """Canonical relabeling of a diagram.

    Parameters
    ----------
    n_p, n_h : int
        Number of p-nodes and H-nodes; nodes are ``0..n_p-1`` and ``0..n_h-1``.
    edges : iterable of (h, p, color)
        Edge multiset.

    Returns
    -------
    tuple
        ``(n_p, n_h, edges)`` with nodes renumbered canonically and edges
        sorted. Isomorphic inputs give identical outputs.
    """
    edges = list(edges)
    n_nodes = n_p + n_h
    if not edges:
        return (n_p, n_h, ())
    n = n_nodes + len(edges)
    adj: dict[int, list[int]] = {}
    by_color: dict[int, set] = defaultdict(set)
    for j, (h, p, c) in enumerate(edges):
        v = n_nodes + j
        adj[v] = [p, n_p + h]
        by_color[c].add(v)
    parts = []
    if n_p:
        parts.append(set(range(n_p)))
    if n_h:
        parts.append(set(range(n_p, n_nodes)))
    parts.extend(by_color[c] for c in sorted(by_color))
    g = pynauty.Graph(n, adjacency_dict=adj, vertex_coloring=parts)
    lab = pynauty.canon_label(g)
    p_new = {}
    h_new = {}
    for v in lab:
        if v < n_p:
            p_new[v] = len(p_new)
        elif v < n_nodes:
            h_new[v - n_p] = len(h_new)
    out = sorted((h_new[h], p_new[p], c) for h, p, c in edges)
    return (n_p, n_h, tuple(out))


def _refine(cells, nbrs):
    """Equitable refinement of an ordered partition.

    ``nbrs[v]`` lists ``(color, w)`` pairs. The split order depends only on
    cell indices, so the result is independent of vertex names.
    """
    while True:
        cell_of = {}
        for i, cell in enumerate(cells):
            for v in cell:
                cell_of[v] = i
        new_cells = []
        for i, cell in enumerate(cells):
            if len(cell) == 1:
                new_cells.append(cell)
                continue
            sig = {v: tuple(sorted((c, cell_of[w]) for c, w in nbrs[v])) for v in cell}
            groups = defaultdict(list)
            for v in cell:
                groups[sig[v]].append(v)
            for s in sorted(groups):
                new_cells.append(groups[s])
        if len(new_cells) == len(cells):
            return new_cells
        cells = new_cells


def canonical_form_reference(n_p: int, n_h: int, edges) -> CanonicalForm:
    """Pure-Python canonical form (slow reference).

    Uses color refinement followed by individualization of every vertex of
    the first non-singleton cell, recursively, and keeps the lexicographically
    least relabeled edge list over all leaves.
    """
    edges = list(edges)
    nbrs = defaultdict(list)
    for h, p, c in edges:
        nbrs[("p", p)].append((c, ("h", h)))
        nbrs[("h", h)].append((c, ("p", p)))
    cells = [c for c in ([("p", i) for i in range(n_p)], [("h", i) for i in range(n_h)]) if c]
    best = None

    def leaf_code(cells):
        rank_p, rank_h = {}, {}
        for cell in cells:
            kind, i = cell[0]
            if kind == "p":
                rank_p[i] = len(rank_p)
            else:
                rank_h[i] = len(rank_h)
        return tuple(sorted((rank_h[h], rank_p[p], c) for h, p, c in edges))

    def search(cells):
        nonlocal best
        cells = _refine(cells, nbrs)
        target = next((i for i, c in enumerate(cells) if len(c) > 1), None)
        if target is None:
            code = leaf_code(cells)
            if best is None or code < best:
                best = code
            return
        cell = cells[target]
        for v in cell:
            rest = [w for w in cell if w != v]
            search(cells[:target] + [[v], rest] + cells[target + 1:])

    search(cells)
    return (n_p, n_h, best if best is not None else ())
