# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: volume-constrained depression filling and batched
Dijkstra.  Semantics mirror :mod:`floodadapt._kernels_py` exactly; that
module's docstring is the reference description of the algorithms."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY
from libc.stdlib cimport free, malloc, qsort

cnp.import_array()

BACKEND_NAME = "cython"

cdef long NONE_RECV = -1
cdef long OCEAN_RECV = -2


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*> a)[0]
    cdef double y = (<const double*> b)[0]
    if x < y:
        return -1
    if x > y:
        return 1
    return 0


cdef inline long _uf_find(long* par, long x) noexcept nogil:
    while par[x] != x:
        par[x] = par[par[x]]
        x = par[x]
    return x


def fill_volumes(object elev_in, object inflow_in, double cell_area,
                 bint open_boundary, object sink_mask_in):
    """See ``floodadapt._kernels_py.fill_volumes``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] elev2 = \
        np.ascontiguousarray(elev_in, dtype=np.float64)
    cdef long h = elev2.shape[0], w = elev2.shape[1]
    cdef long n = h * w
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] acc_arr = \
        np.ascontiguousarray(inflow_in, dtype=np.float64).reshape(n).copy()
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] ocean_arr = \
        (np.ascontiguousarray(sink_mask_in, dtype=np.uint8).reshape(n) != 0).astype(np.uint8)

    cdef double* elev = <double*> elev2.data
    cdef double* acc = <double*> acc_arr.data
    cdef cnp.uint8_t* ocean = <cnp.uint8_t*> ocean_arr.data

    # neighbor scan order matches the pure-Python backend's _NBR tuple
    cdef long dr8[8]
    cdef long dc8[8]
    dr8[0] = -1; dc8[0] = -1
    dr8[1] = -1; dc8[1] = 0
    dr8[2] = -1; dc8[2] = 1
    dr8[3] = 0;  dc8[3] = -1
    dr8[4] = 0;  dc8[4] = 1
    dr8[5] = 1;  dc8[5] = -1
    dr8[6] = 1;  dc8[6] = 0
    dr8[7] = 1;  dc8[7] = 1

    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] recv_arr = np.full(n, NONE_RECV, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] fdep_arr = np.zeros(n, dtype=np.int64)
    cdef long* recv = <long*> recv_arr.data
    cdef long* fdep = <long*> fdep_arr.data

    cdef long i, j, r, c, rr, cc, k
    cdef double e_i, e_j, best_e
    cdef long best
    cdef bint edge

    # --- receivers: steepest descent -------------------------------------
    for r in range(h):
        for c in range(w):
            i = r * w + c
            if ocean[i]:
                continue
            best = NONE_RECV
            best_e = elev[i]
            edge = (r == 0 or r == h - 1 or c == 0 or c == w - 1)
            if open_boundary and edge:
                best = OCEAN_RECV
                best_e = -INFINITY
            for k in range(8):
                rr = r + dr8[k]
                cc = c + dc8[k]
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                j = rr * w + cc
                e_j = -INFINITY if ocean[j] else elev[j]
                if e_j < best_e:
                    best = OCEAN_RECV if ocean[j] else j
                    best_e = e_j
            recv[i] = best

    # --- flats: BFS from draining exit cells ------------------------------
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] seen_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t* seen = <cnp.uint8_t*> seen_arr.data
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] stack_arr = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] queue_arr = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] isexit_arr = np.zeros(n, dtype=np.uint8)
    cdef long* stk = <long*> stack_arr.data
    cdef long* que = <long*> queue_arr.data
    cdef cnp.uint8_t* isexit = <cnp.uint8_t*> isexit_arr.data
    cdef long sp, qh, qt, start, n_exit
    cdef double level
    cdef list exits_py

    for start in range(n):
        if seen[start] or ocean[start] or recv[start] != NONE_RECV:
            continue
        level = elev[start]
        sp = 0
        stk[sp] = start
        sp += 1
        seen[start] = 1
        exits_py = []
        while sp > 0:
            sp -= 1
            i = stk[sp]
            r = i // w
            c = i - r * w
            for k in range(8):
                rr = r + dr8[k]
                cc = c + dc8[k]
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                j = rr * w + cc
                if ocean[j] or elev[j] != level:
                    continue
                if recv[j] != NONE_RECV:
                    if not isexit[j]:
                        isexit[j] = 1
                        exits_py.append(j)
                elif not seen[j]:
                    seen[j] = 1
                    stk[sp] = j
                    sp += 1
        if not exits_py:
            continue
        exits_py.sort()
        qh = 0
        qt = 0
        for j in exits_py:
            que[qt] = j
            qt += 1
            isexit[j] = 0  # reset for later regions
        while qh < qt:
            i = que[qh]
            qh += 1
            r = i // w
            c = i - r * w
            for k in range(8):
                rr = r + dr8[k]
                cc = c + dc8[k]
                if rr < 0 or rr >= h or cc < 0 or cc >= w:
                    continue
                j = rr * w + cc
                if not ocean[j] and elev[j] == level and recv[j] == NONE_RECV:
                    recv[j] = i
                    fdep[j] = fdep[i] + 1
                    que[qt] = j
                    qt += 1

    # --- route inflow downslope -------------------------------------------
    cdef double outflow = 0.0
    for i in range(n):
        if ocean[i]:
            outflow += acc[i]
            acc[i] = 0.0

    elev_flat = np.asarray(elev2).reshape(n)
    order_arr = np.lexsort((np.arange(n), -fdep_arr, -elev_flat)).astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] order_c = np.ascontiguousarray(order_arr)
    cdef long* order = <long*> order_c.data
    cdef long t
    for t in range(n):
        i = order[t]
        if ocean[i] or acc[i] == 0.0:
            continue
        j = recv[i]
        if j == NONE_RECV:
            continue
        if j == OCEAN_RECV:
            outflow += acc[i]
        else:
            acc[j] += acc[i]
        acc[i] = 0.0

    # --- merge tree from ascending sweep ----------------------------------
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] par_arr = np.arange(n + 1, dtype=np.int64)
    cdef long* par = <long*> par_arr.data
    cdef long n_nodes_cap = n + 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] ndeath_arr = np.full(n_nodes_cap, INFINITY)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] child_head_arr = np.full(n_nodes_cap, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] child_next_arr = np.full(n_nodes_cap, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] comp_node_arr = np.full(n + 1, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] cell_node_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] added_arr = np.zeros(n, dtype=np.uint8)
    cdef double* ndeath = <double*> ndeath_arr.data
    cdef long* child_head = <long*> child_head_arr.data
    cdef long* child_next = <long*> child_next_arr.data
    cdef long* comp_node = <long*> comp_node_arr.data
    cdef long* cell_node = <long*> cell_node_arr.data
    cdef cnp.uint8_t* added = <cnp.uint8_t*> added_arr.data

    cdef long OCEAN_NODE = 0
    cdef long n_nodes = 1
    if open_boundary or bool(ocean_arr.any()):
        comp_node[_uf_find(par, n)] = OCEAN_NODE

    sweep_arr = np.lexsort((np.arange(n), elev_flat)).astype(np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] sweep_c = np.ascontiguousarray(sweep_arr)
    cdef long* sweep = <long*> sweep_c.data

    cdef long roots_buf[10]
    cdef long n_roots, root, x, node, new_node, base, cn
    cdef bint dup
    cdef double e

    for t in range(n):
        i = sweep[t]
        if ocean[i]:
            continue
        e = elev[i]
        r = i // w
        c = i - r * w
        n_roots = 0
        for k in range(8):
            rr = r + dr8[k]
            cc = c + dc8[k]
            if rr < 0 or rr >= h or cc < 0 or cc >= w:
                continue
            j = rr * w + cc
            if ocean[j]:
                root = _uf_find(par, n)
            elif added[j]:
                root = _uf_find(par, j)
            else:
                continue
            dup = False
            for x in range(n_roots):
                if roots_buf[x] == root:
                    dup = True
                    break
            if not dup:
                roots_buf[n_roots] = root
                n_roots += 1
        if open_boundary and (r == 0 or r == h - 1 or c == 0 or c == w - 1):
            root = _uf_find(par, n)
            dup = False
            for x in range(n_roots):
                if roots_buf[x] == root:
                    dup = True
                    break
            if not dup:
                roots_buf[n_roots] = root
                n_roots += 1

        added[i] = 1
        if n_roots == 0:
            node = n_nodes
            n_nodes += 1
            comp_node[_uf_find(par, i)] = node
            cell_node[i] = node
            continue
        if n_roots == 1:
            root = roots_buf[0]
            node = comp_node[root]
            par[_uf_find(par, i)] = root
            comp_node[_uf_find(par, root)] = node
            if node != OCEAN_NODE:
                cell_node[i] = node
            continue
        # saddle: several components meet at elevation e
        new_node = -1
        for x in range(n_roots):
            if comp_node[roots_buf[x]] == OCEAN_NODE:
                new_node = OCEAN_NODE
                break
        if new_node == -1:
            new_node = n_nodes
            n_nodes += 1
        for x in range(n_roots):
            cn = comp_node[roots_buf[x]]
            if cn != new_node:
                ndeath[cn] = e
                child_next[cn] = child_head[new_node]
                child_head[new_node] = cn
        base = roots_buf[0]
        for x in range(1, n_roots):
            par[_uf_find(par, roots_buf[x])] = _uf_find(par, base)
        par[_uf_find(par, i)] = _uf_find(par, base)
        comp_node[_uf_find(par, base)] = new_node
        if new_node != OCEAN_NODE:
            cell_node[i] = new_node

    # --- bucket cells per node in sweep order ------------------------------
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] ncells_arr = np.zeros(n_nodes + 1, dtype=np.int64)
    cdef long* ncells = <long*> ncells_arr.data
    for t in range(n):
        i = sweep[t]
        if cell_node[i] >= 0:
            ncells[cell_node[i] + 1] += 1
    for node in range(1, n_nodes + 1):
        ncells[node] += ncells[node - 1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] cell_bucket_arr = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] fillpos_arr = np.copy(ncells_arr[:n_nodes])
    cdef long* cell_bucket = <long*> cell_bucket_arr.data
    cdef long* fillpos = <long*> fillpos_arr.data
    for t in range(n):
        i = sweep[t]
        node = cell_node[i]
        if node >= 0:
            cell_bucket[fillpos[node]] = i
            fillpos[node] += 1

    # --- post-order traversal ----------------------------------------------
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] post_arr = np.empty(n_nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] substart_arr = np.zeros(n_nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] subend_arr = np.zeros(n_nodes, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] cellseq_arr = np.empty(n, dtype=np.int64)
    cdef long* post = <long*> post_arr.data
    cdef long* substart = <long*> substart_arr.data
    cdef long* subend = <long*> subend_arr.data
    cdef long* cellseq = <long*> cellseq_arr.data
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] tstack_arr = np.empty(2 * n_nodes + 4, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] tphase_arr = np.empty(2 * n_nodes + 4, dtype=np.int64)
    cdef long* tstack = <long*> tstack_arr.data
    cdef long* tphase = <long*> tphase_arr.data
    cdef long pos = 0, n_post = 0, top, ph

    cdef list start_nodes = []
    for node in range(1, n_nodes):
        if ndeath[node] == INFINITY:
            start_nodes.append(node)
    start_nodes.append(OCEAN_NODE)

    for node in start_nodes:
        top = 0
        tstack[top] = node
        tphase[top] = 0
        top += 1
        while top > 0:
            top -= 1
            x = tstack[top]
            ph = tphase[top]
            if ph == 0:
                substart[x] = pos
                tstack[top] = x
                tphase[top] = 1
                top += 1
                cn = child_head[x]
                while cn != -1:
                    tstack[top] = cn
                    tphase[top] = 0
                    top += 1
                    cn = child_next[cn]
            else:
                for t in range(ncells[x], ncells[x + 1]):
                    cellseq[pos] = cell_bucket[t]
                    pos += 1
                subend[x] = pos
                post[n_post] = x
                n_post += 1

    # substart for nodes emitted after children: fix substart to include the
    # children's ranges (children were pushed after the pre-visit, so their
    # cells land inside [substart, subend))  -- already correct by stack order.

    # --- bottom-up fill ------------------------------------------------------
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] surface_arr = elev_flat.astype(np.float64).copy()
    cdef double* surface = <double*> surface_arr.data
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] spill_arr = np.zeros(n_nodes, dtype=np.float64)
    cdef double* spill = <double*> spill_arr.data
    cdef double* scratch = <double*> malloc(n * sizeof(double))
    if scratch == NULL:
        raise MemoryError()

    cdef double water, rim, freev, target, pre, tau
    cdef long m, p_i, kk

    try:
        for t in range(n_post):
            node = post[t]
            water = 0.0
            for x in range(ncells[node], ncells[node + 1]):
                water += acc[cell_bucket[x]]
            cn = child_head[node]
            while cn != -1:
                water += spill[cn]
                cn = child_next[cn]
            if node == OCEAN_NODE:
                outflow += water
                continue
            if water <= 0.0:
                continue
            rim = ndeath[node]
            m = subend[node] - substart[node]
            if rim != INFINITY:
                freev = 0.0
                for x in range(substart[node], subend[node]):
                    freev += rim - surface[cellseq[x]]
                freev *= cell_area
                if water >= freev:
                    for x in range(substart[node], subend[node]):
                        surface[cellseq[x]] = rim
                    spill[node] = water - freev
                    continue
            for x in range(m):
                scratch[x] = surface[cellseq[substart[node] + x]]
            qsort(scratch, m, sizeof(double), _cmp_double)
            target = water / cell_area
            pre = 0.0
            kk = 0
            tau = scratch[0]
            while kk < m:
                kk += 1
                pre += scratch[kk - 1]
                tau = (target + pre) / kk
                if kk == m or tau <= scratch[kk]:
                    break
            for x in range(substart[node], subend[node]):
                p_i = cellseq[x]
                if surface[p_i] < tau:
                    surface[p_i] = tau
    finally:
        free(scratch)

    depth = surface_arr - elev_flat
    np.maximum(depth, 0.0, out=depth)
    return depth.reshape(h, w), outflow


def shortest_times(object indptr_in, object indices_in, object weights_in,
                   object sources_in, long n_nodes):
    """See ``floodadapt._kernels_py.shortest_times``."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] indptr = \
        np.ascontiguousarray(indptr_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] indices = \
        np.ascontiguousarray(indices_in, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] weights = \
        np.ascontiguousarray(weights_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] sources = \
        np.ascontiguousarray(sources_in, dtype=np.int64)
    cdef long n_src = sources.shape[0]
    cdef long n_edges = indices.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = \
        np.full((n_src, n_nodes), np.inf, dtype=np.float64)

    cdef long* ip = <long*> indptr.data
    cdef long* ix = <long*> indices.data
    cdef double* wt = <double*> weights.data
    cdef long* src = <long*> sources.data

    cdef long cap = n_edges + 2
    cdef double* hd = <double*> malloc(cap * sizeof(double))
    cdef long* hv = <long*> malloc(cap * sizeof(long))
    if hd == NULL or hv == NULL:
        if hd != NULL:
            free(hd)
        if hv != NULL:
            free(hv)
        raise MemoryError()

    cdef long s_i, u, v, k, sz, child, parent_i
    cdef double d, nd
    cdef double* dist

    try:
        for s_i in range(n_src):
            dist = (<double*> out.data) + s_i * n_nodes
            u = src[s_i]
            dist[u] = 0.0
            sz = 0
            # push (0, u)
            hd[0] = 0.0
            hv[0] = u
            sz = 1
            while sz > 0:
                d = hd[0]
                u = hv[0]
                sz -= 1
                hd[0] = hd[sz]
                hv[0] = hv[sz]
                # sift down
                parent_i = 0
                while True:
                    child = 2 * parent_i + 1
                    if child >= sz:
                        break
                    if child + 1 < sz and (hd[child + 1] < hd[child] or
                                           (hd[child + 1] == hd[child] and hv[child + 1] < hv[child])):
                        child += 1
                    if hd[child] < hd[parent_i] or (hd[child] == hd[parent_i] and hv[child] < hv[parent_i]):
                        hd[parent_i], hd[child] = hd[child], hd[parent_i]
                        hv[parent_i], hv[child] = hv[child], hv[parent_i]
                        parent_i = child
                    else:
                        break
                if d > dist[u]:
                    continue
                for k in range(ip[u], ip[u + 1]):
                    if wt[k] == INFINITY:
                        continue
                    v = ix[k]
                    nd = d + wt[k]
                    if nd < dist[v]:
                        dist[v] = nd
                        if sz >= cap:
                            raise RuntimeError("dijkstra heap overflow")
                        # push (nd, v)
                        child = sz
                        hd[child] = nd
                        hv[child] = v
                        sz += 1
                        while child > 0:
                            parent_i = (child - 1) >> 1
                            if hd[parent_i] > hd[child] or (hd[parent_i] == hd[child] and hv[parent_i] > hv[child]):
                                hd[parent_i], hd[child] = hd[child], hd[parent_i]
                                hv[parent_i], hv[child] = hv[child], hv[parent_i]
                                child = parent_i
                            else:
                                break
    finally:
        free(hd)
        free(hv)
    return out
