"""Pure-Python reference kernels.

Two hot loops live here: volume-constrained depression filling on a raster
terrain, and batched single-source shortest path times on a CSR road graph.
`floodadapt._kernels_cy` reimplements both with identical semantics; the
backend is chosen in :mod:`floodadapt.kernels`.

Depression filling
------------------
Water volumes placed on cells are routed downslope (steepest descent, flats
resolved by breadth-first search toward their spill cells) into basins, then
basins are filled bottom-up along the terrain's depression merge tree.  Each
fill is a "water table raise": the lowest free surfaces inside a basin region
rise together to a common level until the available volume is consumed or the
region's spill elevation is reached, in which case the excess pours into the
enclosing region.  The construction guarantees, up to float rounding:

* mass balance: ponded volume + boundary outflow == total inflow,
* level ponds: connected wet cells share one exact surface elevation,
* monotonicity: more inflow never lowers any depth.

Cells flagged in ``sink_mask`` and, when ``open_boundary`` is set, the area
outside the grid act as an ocean at minus infinity: water reaching them is
counted as outflow.
"""

from __future__ import annotations

import heapq
import sys
from collections import deque

import numpy as np

BACKEND_NAME = "python"

# fixed neighbor scan order; determinism of every tie-break depends on it
_NBR = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

_NONE = -1
_OCEAN = -2


def _receivers(elev, ocean, open_boundary):
    """Steepest-descent receiver per cell (flats resolved by BFS to exits).

    Returns an int array: linear index of the downslope neighbor, _OCEAN for
    cells draining off-domain, _NONE for basin storage cells.
    """
    h, w = elev.shape
    n = h * w
    recv = np.full(n, _NONE, dtype=np.int64)
    flat_depth = np.zeros(n, dtype=np.int64)

    def neighbors(r, c):
        for dr, dc in _NBR:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                yield rr * w + cc

    for r in range(h):
        for c in range(w):
            i = r * w + c
            if ocean[i]:
                continue
            best = _NONE
            best_e = elev.flat[i]
            if open_boundary and (r == 0 or r == h - 1 or c == 0 or c == w - 1):
                best, best_e = _OCEAN, -np.inf
            for j in neighbors(r, c):
                e_j = -np.inf if ocean[j] else elev.flat[j]
                if e_j < best_e:
                    best, best_e = (_OCEAN if ocean[j] else j), e_j
            recv[i] = best

    # flats: connected equal-elevation regions of undrained cells; adjacent
    # same-level draining cells (exits) pull the rest of the region to them
    seen = np.zeros(n, dtype=bool)
    for start in range(n):
        if seen[start] or ocean[start] or recv[start] != _NONE:
            continue
        level = elev.flat[start]
        exits = set()
        stack = [start]
        seen[start] = True
        while stack:
            i = stack.pop()
            for j in neighbors(i // w, i % w):
                if ocean[j] or elev.flat[j] != level:
                    continue
                if recv[j] != _NONE:
                    exits.add(j)
                elif not seen[j]:
                    seen[j] = True
                    stack.append(j)
        if not exits:
            continue  # flat-bottomed pit: storage
        q = deque(sorted(exits))
        while q:
            i = q.popleft()
            for j in neighbors(i // w, i % w):
                if not ocean[j] and elev.flat[j] == level and recv[j] == _NONE:
                    recv[j] = i
                    flat_depth[j] = flat_depth[i] + 1
                    q.append(j)
    return recv, flat_depth


def fill_volumes(elev, inflow, cell_area, open_boundary, sink_mask):
    """Distribute per-cell water volumes into depressions.

    Args:
        elev: (H, W) float64 terrain elevation in meters.
        inflow: (H, W) float64 water volume placed on each cell, m3.
        cell_area: area of one cell, m2.
        open_boundary: water may leave across the outer grid edge.
        sink_mask: (H, W) uint8, nonzero cells swallow water (no ponding).

    Returns:
        (depth, outflow): (H, W) float64 water depth in meters and the total
        volume in m3 that left through sinks or the open boundary.
    """
    elev = np.ascontiguousarray(elev, dtype=np.float64)
    h, w = elev.shape
    n = h * w
    ocean = np.ascontiguousarray(sink_mask, dtype=np.uint8).reshape(n) != 0
    acc = np.ascontiguousarray(inflow, dtype=np.float64).reshape(n).copy()

    recv, flat_depth = _receivers(elev, ocean, open_boundary)

    outflow = float(acc[ocean].sum())
    acc[ocean] = 0.0

    # route downslope: strictly decreasing (elev, flat BFS depth) along edges
    order = sorted(
        (i for i in range(n) if not ocean[i]),
        key=lambda i: (-elev.flat[i], -flat_depth[i], i),
    )
    for i in order:
        if acc[i] == 0.0:
            continue
        r = recv[i]
        if r == _NONE:
            continue
        if r == _OCEAN:
            outflow += acc[i]
        else:
            acc[r] += acc[i]
        acc[i] = 0.0

    # depression merge tree from an ascending sweep with union-find
    parent_uf = np.arange(n + 1, dtype=np.int64)  # element n = ocean root

    def find(x):
        root = x
        while parent_uf[root] != root:
            root = parent_uf[root]
        while parent_uf[x] != root:
            parent_uf[x], x = root, parent_uf[x]
        return root

    OCEAN_NODE = 0
    node_children = [[]]
    node_death = [np.inf]
    node_cells = [[]]
    node_of_root = {}
    added = np.zeros(n, dtype=bool)

    if open_boundary or ocean.any():
        node_of_root[find(n)] = OCEAN_NODE

    sweep = sorted((i for i in range(n) if not ocean[i]), key=lambda i: (elev.flat[i], i))
    for i in sweep:
        e = elev.flat[i]
        r, c = divmod(i, w)
        roots = []
        for dr, dc in _NBR:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                j = rr * w + cc
                if ocean[j]:
                    roots.append(find(n))
                elif added[j]:
                    roots.append(find(j))
        if open_boundary and (r == 0 or r == h - 1 or c == 0 or c == w - 1):
            roots.append(find(n))
        distinct = []
        for x in roots:
            if x not in distinct:
                distinct.append(x)

        added[i] = True
        if not distinct:
            node = len(node_death)
            node_children.append([])
            node_death.append(np.inf)
            node_cells.append([i])
            node_of_root[find(i)] = node
            continue
        if len(distinct) == 1:
            target = distinct[0]
            node = node_of_root[target]
            parent_uf[find(i)] = target
            node_of_root[find(i)] = node
            if node != OCEAN_NODE:
                node_cells[node].append(i)
            continue
        # saddle: two or more components meet at elevation e
        child_nodes = [node_of_root[x] for x in distinct]
        if OCEAN_NODE in child_nodes:
            new_node = OCEAN_NODE
        else:
            new_node = len(node_death)
            node_children.append([])
            node_death.append(np.inf)
            node_cells.append([])
        for x, cn in zip(distinct, child_nodes):
            if cn != new_node:
                node_death[cn] = e
                node_children[new_node].append(cn)
        merged = distinct[0]
        for x in distinct[1:]:
            parent_uf[find(x)] = find(merged)
            merged = find(merged)
        parent_uf[find(i)] = find(merged)
        node_of_root[find(merged)] = new_node
        if new_node != OCEAN_NODE:
            node_cells[new_node].append(i)

    # closed leftovers: components never reaching the ocean keep death=inf

    # post-order subtree cell ranges
    n_nodes = len(node_death)
    cell_seq = np.empty(n, dtype=np.int64)
    sub_start = np.zeros(n_nodes, dtype=np.int64)
    sub_end = np.zeros(n_nodes, dtype=np.int64)
    pos = 0
    surface = elev.reshape(n).astype(np.float64).copy()
    depth_out = np.zeros(n, dtype=np.float64)

    def emit(node):
        nonlocal pos
        sub_start[node] = pos
        for ch in node_children[node]:
            emit(ch)
        for i in node_cells[node]:
            cell_seq[pos] = i
            pos += 1
        sub_end[node] = pos

    roots = [nd for nd in range(1, n_nodes) if node_death[nd] == np.inf]

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, n_nodes + 100))
    try:
        for root in roots:
            emit(root)
        emit(OCEAN_NODE)
    finally:
        sys.setrecursionlimit(old_limit)

    def raise_table(node, volume):
        """Pour `volume` into the node's subtree; return spill past its rim."""
        if volume <= 0.0:
            return 0.0
        cells = cell_seq[sub_start[node]:sub_end[node]]
        rim = node_death[node]
        if rim != np.inf:
            free = float(((rim - surface[cells]).sum()) * cell_area)
            if volume >= free:
                surface[cells] = rim
                return volume - free
        levels = np.sort(surface[cells])
        pre = 0.0
        target = volume / cell_area
        k = 0
        tau = levels[0]
        while k < len(levels):
            k += 1
            pre += levels[k - 1]
            tau = (target + pre) / k
            if k == len(levels) or tau <= levels[k]:
                break
        surface[cells] = np.maximum(surface[cells], tau)
        return 0.0

    # bottom-up fill: children first, spills pour into the enclosing region
    spill_of = np.zeros(n_nodes, dtype=np.float64)
    post_nodes = []

    def collect(node):
        for ch in node_children[node]:
            collect(ch)
        post_nodes.append(node)

    sys.setrecursionlimit(max(sys.getrecursionlimit(), n_nodes + 100))
    for root in roots:
        collect(root)
    collect(OCEAN_NODE)

    for node in post_nodes:
        water = float(sum(acc[i] for i in node_cells[node]))
        water += float(sum(spill_of[ch] for ch in node_children[node]))
        if node == OCEAN_NODE:
            outflow += water
            continue
        spill_of[node] = raise_table(node, water)
    for root in roots:
        if spill_of[root] > 0.0:  # pragma: no cover - closed roots cannot spill
            raise AssertionError("closed basin spilled")

    np.subtract(surface, elev.reshape(n), out=depth_out)
    np.maximum(depth_out, 0.0, out=depth_out)
    return depth_out.reshape(h, w), outflow


def shortest_times(indptr, indices, weights, sources, n_nodes):
    """Dijkstra travel times from each source to every node.

    CSR graph with nonnegative edge weights; ``inf`` weights mark impassable
    edges.  Ties pop in node-id order, so results are deterministic.

    Returns an (S, n_nodes) float64 array (``inf`` = unreachable).
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    out = np.full((len(sources), n_nodes), np.inf, dtype=np.float64)
    for s_i, src in enumerate(sources):
        dist = out[s_i]
        dist[src] = 0.0
        heap = [(0.0, int(src))]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for k in range(indptr[u], indptr[u + 1]):
                wgt = weights[k]
                if wgt == np.inf:
                    continue
                v = indices[k]
                nd = d + wgt
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, int(v)))
    return out
