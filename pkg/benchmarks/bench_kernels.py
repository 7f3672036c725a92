"""Timing comparison of the compiled and pure-Python kernel backends.

Run:  python3 benchmarks/bench_kernels.py [--sizes 32 64 128] [--repeats 5]

Both backends are loaded explicitly (ignoring FLOODADAPT_BACKEND) and fed
identical inputs; outputs are cross-checked before timing so the numbers
always refer to equivalent work.
"""

import argparse
import time

import numpy as np

import floodadapt._kernels_py as kpy

try:
    import floodadapt._kernels_cy as kcy
except ImportError:
    kcy = None


def make_terrain(n, rng):
    base = rng.normal(0.0, 1.0, size=(n, n))
    for _ in range(2):
        base = (base + np.roll(base, 1, 0) + np.roll(base, -1, 0)
                + np.roll(base, 1, 1) + np.roll(base, -1, 1)) / 5.0
    elev = 10.0 + 2.0 * base + 0.01 * np.arange(n)[:, None]
    inflow = np.where(rng.random((n, n)) < 0.3,
                      rng.uniform(0.0, 5.0, (n, n)), 0.0)
    return np.ascontiguousarray(elev), np.ascontiguousarray(inflow)


def make_graph(n_nodes, avg_degree, rng):
    n_edges = n_nodes * avg_degree
    frm = rng.integers(0, n_nodes, n_edges)
    to = rng.integers(0, n_nodes, n_edges)
    w = rng.uniform(0.1, 10.0, n_edges)
    order = np.lexsort((to, frm))
    frm, to, w = frm[order], to[order], w[order]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.add.at(indptr, frm + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, to.astype(np.int64), w


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if kcy is None:
        print("compiled backend not built; showing pure-Python timings only")
    rng = np.random.default_rng(0)

    print(f"{'kernel':<28}{'size':>10}{'python':>12}{'cython':>12}{'speedup':>10}")
    for n in args.sizes:
        elev, inflow = make_terrain(n, rng)
        no_sink = np.zeros((n, n), dtype=bool)
        d_py, o_py = kpy.fill_volumes(elev, inflow, 25.0, True, no_sink)
        row = [f"{'fill_volumes':<28}{n:>7}x{n:<3}"]
        t_py = best_of(lambda: kpy.fill_volumes(elev, inflow, 25.0, True, no_sink),
                       args.repeats)
        row.append(f"{t_py * 1e3:>10.2f}ms")
        if kcy is not None:
            d_cy, o_cy = kcy.fill_volumes(elev, inflow, 25.0, True, no_sink)
            assert np.allclose(d_py, d_cy, atol=1e-9) and abs(o_py - o_cy) < 1e-6
            t_cy = best_of(
                lambda: kcy.fill_volumes(elev, inflow, 25.0, True, no_sink),
                args.repeats)
            row.append(f"{t_cy * 1e3:>10.2f}ms")
            row.append(f"{t_py / t_cy:>9.1f}x")
        print("".join(row))

    for n_nodes in (200, 1000):
        indptr, indices, w = make_graph(n_nodes, 6, rng)
        sources = np.arange(0, n_nodes, max(1, n_nodes // 50), dtype=np.int64)
        t_py_res = kpy.shortest_times(indptr, indices, w, sources, n_nodes)
        row = [f"{'shortest_times':<28}{n_nodes:>6}nd{len(sources):<3}"]
        t_py = best_of(
            lambda: kpy.shortest_times(indptr, indices, w, sources, n_nodes),
            args.repeats)
        row.append(f"{t_py * 1e3:>10.2f}ms")
        if kcy is not None:
            t_cy_res = kcy.shortest_times(indptr, indices, w, sources, n_nodes)
            assert np.allclose(t_py_res, t_cy_res, equal_nan=True)
            t_cy = best_of(
                lambda: kcy.shortest_times(indptr, indices, w, sources, n_nodes),
                args.repeats)
            row.append(f"{t_cy * 1e3:>10.2f}ms")
            row.append(f"{t_py / t_cy:>9.1f}x")
        print("".join(row))


if __name__ == "__main__":
    main()
