"""Tree-cotree gauging on the vertex-edge graph of a curl-conforming space."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .spaces import CurlSpace


@dataclass(frozen=True)
class Gauge:
    tree: np.ndarray          # edges fixed to zero by the gauge
    free: np.ndarray          # remaining unknowns
    constrained: np.ndarray   # edges fixed by boundary conditions
    n_nodes: int              # nodes of the contracted graph
    n_components: int

    @property
    def fixed(self) -> np.ndarray:
        return np.union1d(self.tree, self.constrained)


def build_gauge(space: CurlSpace, constrained=(), contract_patches=()) -> Gauge:
    """Spanning tree over the edges not fixed by boundary conditions.

    Endpoints of ``constrained`` edges are merged into super-nodes, as are all
    vertices of ``contract_patches`` (conducting patches with an eddy-current
    term, where gradients are not in the kernel).  The tree grows breadth-first
    from the lowest vertex id, visiting neighbours in ascending edge id; each
    connected component of the contracted graph gets its own tree.
    """
    nv, ne = space.n_vertices, space.n_edges
    ev = space.edge_vertices
    constrained = np.unique(np.asarray(constrained, dtype=int))
    link_a, link_b = [ev[constrained, 0]], [ev[constrained, 1]]
    for i in contract_patches:
        v = space.patch_vertices(i)
        link_a.append(v[:-1])
        link_b.append(v[1:])
    a = np.concatenate(link_a) if link_a else np.zeros(0, int)
    b = np.concatenate(link_b) if link_b else np.zeros(0, int)
    glue = sp.csr_matrix((np.ones(a.size), (a, b)), shape=(nv, nv))
    _, label = connected_components(glue, directed=False)
    # relabel super-nodes by their lowest vertex id
    lowest = np.full(label.max() + 1, nv, dtype=int)
    np.minimum.at(lowest, label, np.arange(nv))
    order = np.argsort(lowest)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    node = rank[label]
    n_nodes = int(order.size)

    is_fixed = np.zeros(ne, dtype=bool)
    is_fixed[constrained] = True
    na, nb = node[ev[:, 0]], node[ev[:, 1]]
    cand = np.flatnonzero(~is_fixed & (na != nb))
    # adjacency sorted by (node, edge id)
    src = np.concatenate([na[cand], nb[cand]])
    dst = np.concatenate([nb[cand], na[cand]])
    eid = np.concatenate([cand, cand])
    perm = np.lexsort((eid, src))
    src, dst, eid = src[perm], dst[perm], eid[perm]
    start = np.searchsorted(src, np.arange(n_nodes + 1))
    dst_l, eid_l, start_l = dst.tolist(), eid.tolist(), start.tolist()

    seen = bytearray(n_nodes)
    tree = []
    n_comp = 0
    for root in range(n_nodes):
        if seen[root]:
            continue
        n_comp += 1
        seen[root] = 1
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for k in range(start_l[u], start_l[u + 1]):
                w = dst_l[k]
                if not seen[w]:
                    seen[w] = 1
                    tree.append(eid_l[k])
                    queue.append(w)
    tree = np.array(sorted(tree), dtype=int)
    free = np.setdiff1d(np.arange(ne), np.union1d(tree, constrained))
    return Gauge(tree, free, constrained, n_nodes, n_comp)


def tree_has_cycle(space: CurlSpace, edges) -> bool:
    """True if the given edges contain a cycle in the (uncontracted) vertex graph."""
    parent = list(range(space.n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in np.asarray(edges, dtype=int):
        a, b = (int(v) for v in space.edge_vertices[e])
        ra, rb = find(a), find(b)
        if ra == rb:
            return True
        parent[ra] = rb
    return False
