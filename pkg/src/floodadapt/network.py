"""Transport graph, trip demand, flood-disrupted routing, and the synthetic
city generator.

Routing is time-shortest path per trip on the mode-filtered subgraph, with
edge traversal times inflated by water depth through a quadratic
depth-disruption curve; an edge at or past its mode's depth cutoff is
impassable.  Trips with no traversable path are cancelled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from floodadapt import kernels
from floodadapt.config import MODES, ConfigError
from floodadapt.flood import NO_ZONE, TerrainGrid, cell_of_point, edge_cell_index


class DataError(ValueError):
    """Input data broke a contract; the message names the offending record."""


@dataclass
class Trip:
    origin: int
    destination: int
    mode: str
    weight: float  # persons represented


@dataclass
class TripOutcome:
    trip_index: int
    baseline_minutes: float
    disrupted_minutes: float  # inf when cancelled
    cancelled: bool


class TransportNetwork:
    """Directed multi-modal graph with one CSR view per mode."""

    def __init__(self, node_xy, node_zone, edge_from, edge_to, edge_length_m,
                 edge_modes, edge_speed_kmh, edge_recon_dkk_per_m):
        self.node_xy = np.asarray(node_xy, dtype=np.float64)
        self.node_zone = np.asarray(node_zone, dtype=np.int64)
        self.edge_from = np.asarray(edge_from, dtype=np.int64)
        self.edge_to = np.asarray(edge_to, dtype=np.int64)
        self.edge_length_m = np.asarray(edge_length_m, dtype=np.float64)
        self.edge_modes = list(edge_modes)  # set of mode names per edge
        self.edge_speed_kmh = np.asarray(edge_speed_kmh, dtype=np.float64)
        self.edge_recon_dkk_per_m = np.asarray(edge_recon_dkk_per_m, dtype=np.float64)
        self.n_nodes = len(self.node_xy)
        self.n_edges = len(self.edge_from)
        self._validate()
        self._build_csr()
        self.edge_cells = None  # set by attach_terrain
        self.edge_cell_ptr = None
        self.edge_zone = None

    def _validate(self):
        if np.any(self.edge_length_m <= 0):
            bad = int(np.argmax(self.edge_length_m <= 0))
            raise DataError(f"edge {bad}: non-positive length")
        if np.any(self.edge_speed_kmh <= 0):
            bad = int(np.argmax(self.edge_speed_kmh <= 0))
            raise DataError(f"edge {bad}: non-positive free-flow speed")
        for arr, what in ((self.edge_from, "from"), (self.edge_to, "to")):
            if len(arr) and (arr.min() < 0 or arr.max() >= self.n_nodes):
                bad = int(np.argmax((arr < 0) | (arr >= self.n_nodes)))
                raise DataError(f"edge {bad}: {what}-node does not exist")
        for e, modes in enumerate(self.edge_modes):
            for m in modes:
                if m not in MODES:
                    raise DataError(f"edge {e}: unknown mode {m!r}")

    def _build_csr(self):
        """Per mode: CSR adjacency over the subgraph of edges allowing it."""
        self.csr = {}
        for mode in MODES:
            sel = np.array([mode in ms for ms in self.edge_modes], dtype=bool)
            eidx = np.flatnonzero(sel)
            order = np.lexsort((self.edge_to[eidx], self.edge_from[eidx]))
            eidx = eidx[order]
            indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
            np.add.at(indptr, self.edge_from[eidx] + 1, 1)
            indptr = np.cumsum(indptr)
            self.csr[mode] = (indptr, self.edge_to[eidx].copy(), eidx)

    def attach_terrain(self, grid: TerrainGrid):
        """Precompute which terrain cells lie under each edge, and edge zones."""
        cells = []
        ptr = [0]
        zone = np.empty(self.n_edges, dtype=np.int64)
        zflat = grid.zone_of_cell.reshape(-1)
        for e in range(self.n_edges):
            x0, y0 = self.node_xy[self.edge_from[e]]
            x1, y1 = self.node_xy[self.edge_to[e]]
            idx = edge_cell_index(grid, x0, y0, x1, y1)
            cells.append(idx)
            ptr.append(ptr[-1] + len(idx))
            mid = cell_of_point(grid, (x0 + x1) / 2.0, (y0 + y1) / 2.0)
            z = int(zflat[mid])
            if z == NO_ZONE:
                z = int(self.node_zone[self.edge_from[e]])
            zone[e] = z
        self.edge_cells = np.concatenate(cells) if cells else np.empty(0, np.int64)
        self.edge_cell_ptr = np.asarray(ptr, dtype=np.int64)
        self.edge_zone = zone

    def nodes_of_zone(self, zone) -> np.ndarray:
        return np.flatnonzero(self.node_zone == int(zone))


def disrupted_speed(free_flow_kmh, depth_m, cutoff_m) -> float:
    """Speed under `depth_m` of water; 0 at or past the impassability cutoff.

    Quadratic falloff: v = v0 * (1 - depth/cutoff)^2.  Non-increasing in
    depth, equal to free flow when dry.
    """
    if depth_m <= 0.0:
        return float(free_flow_kmh)
    if depth_m >= cutoff_m:
        return 0.0
    frac = 1.0 - depth_m / cutoff_m
    return float(free_flow_kmh) * frac * frac


def _edge_minutes(net: TransportNetwork, mode, mode_params, element_depth):
    """Traversal time in minutes for every edge of the mode's subgraph."""
    indptr, indices, eidx = net.csr[mode]
    speeds = net.edge_speed_kmh[eidx].copy()
    if element_depth is not None:
        depths = element_depth[eidx]
        cutoff = mode_params[mode].cutoff_m
        frac = 1.0 - depths / cutoff
        speeds = np.where(depths >= cutoff, 0.0,
                          np.where(depths <= 0.0, speeds, speeds * frac * frac))
    minutes = np.full(len(eidx), np.inf)
    ok = speeds > 0
    minutes[ok] = net.edge_length_m[eidx[ok]] * 0.06 / speeds[ok]
    return indptr, indices, minutes


def route_all(net: TransportNetwork, trips, mode_params, element_depth=None,
              baseline=None):
    """Route every trip; returns a list of TripOutcome.

    element_depth is the per-edge water depth (None = dry network).
    `baseline` lets callers pass precomputed dry times (same trip order) so a
    flooded run does not recompute them.
    """
    for t_i, trip in enumerate(trips):
        if not (0 <= trip.origin < net.n_nodes) or not (0 <= trip.destination < net.n_nodes):
            raise DataError(f"trip {t_i}: endpoint node does not exist")
        if trip.origin == trip.destination:
            raise DataError(f"trip {t_i}: origin equals destination")

    if baseline is None:
        baseline = _times_by_trip(net, trips, mode_params, None)
    disrupted = (baseline if element_depth is None or not np.any(element_depth > 0)
                 else _times_by_trip(net, trips, mode_params, element_depth))

    outcomes = []
    for t_i in range(len(trips)):
        base = baseline[t_i]
        dis = disrupted[t_i]
        if not np.isfinite(base):
            raise DataError(f"trip {t_i}: unreachable destination on the dry network")
        cancelled = not np.isfinite(dis)
        outcomes.append(TripOutcome(
            trip_index=t_i,
            baseline_minutes=float(base),
            disrupted_minutes=float(dis) if not cancelled else float("inf"),
            cancelled=cancelled,
        ))
    return outcomes


def _times_by_trip(net, trips, mode_params, element_depth):
    """Shortest times per trip, batching Dijkstra by (mode, origin)."""
    times = np.empty(len(trips), dtype=np.float64)
    by_group = {}
    for t_i, trip in enumerate(trips):
        by_group.setdefault((trip.mode, trip.origin), []).append(t_i)
    by_mode = {}
    for (mode, origin), idxs in sorted(by_group.items()):
        by_mode.setdefault(mode, []).append((origin, idxs))
    for mode, groups in sorted(by_mode.items()):
        indptr, indices, minutes = _edge_minutes(net, mode, mode_params, element_depth)
        sources = np.array([origin for origin, _ in groups], dtype=np.int64)
        mat = kernels.shortest_times(indptr, indices, minutes, sources, net.n_nodes)
        for row, (_, idxs) in enumerate(groups):
            for t_i in idxs:
                times[t_i] = mat[row, trips[t_i].destination]
    return times


# ---------------------------------------------------------------------------
# file formats

def write_network(path, net: TransportNetwork):
    with open(path, "w") as fh:
        fh.write("[nodes]\n")
        fh.write("id\tx\ty\tzone\n")
        for i in range(net.n_nodes):
            fh.write(f"{i}\t{net.node_xy[i, 0]:.3f}\t{net.node_xy[i, 1]:.3f}"
                     f"\t{net.node_zone[i]}\n")
        fh.write("[edges]\n")
        fh.write("id\tfrom\tto\tlength_m\tmodes\tspeed_kmh\trecon_dkk_per_m\n")
        for e in range(net.n_edges):
            modes = "|".join(m for m in MODES if m in net.edge_modes[e])
            fh.write(f"{e}\t{net.edge_from[e]}\t{net.edge_to[e]}"
                     f"\t{net.edge_length_m[e]:.3f}\t{modes}"
                     f"\t{net.edge_speed_kmh[e]:.3f}\t{net.edge_recon_dkk_per_m[e]:.3f}\n")


def read_network(path) -> TransportNetwork:
    section = None
    nodes, edges = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line in ("[nodes]", "[edges]"):
                section = line
                continue
            if line.startswith("id\t"):
                continue  # header row
            parts = line.split("\t")
            where = f"{path}:{lineno}"
            if section == "[nodes]":
                if len(parts) != 4:
                    raise DataError(f"{where}: node row needs 4 columns")
                nodes.append((int(parts[0]), float(parts[1]), float(parts[2]),
                              int(parts[3])))
            elif section == "[edges]":
                if len(parts) != 7:
                    raise DataError(f"{where}: edge row needs 7 columns")
                edges.append((int(parts[0]), int(parts[1]), int(parts[2]),
                              float(parts[3]), frozenset(parts[4].split("|")),
                              float(parts[5]), float(parts[6])))
            else:
                raise DataError(f"{where}: row outside any section")
    nodes.sort()
    edges.sort()
    if [n[0] for n in nodes] != list(range(len(nodes))):
        raise DataError(f"{path}: node ids must be 0..n-1")
    if [e[0] for e in edges] != list(range(len(edges))):
        raise DataError(f"{path}: edge ids must be 0..m-1")
    return TransportNetwork(
        node_xy=[(x, y) for _, x, y, _ in nodes],
        node_zone=[z for _, _, _, z in nodes],
        edge_from=[e[1] for e in edges],
        edge_to=[e[2] for e in edges],
        edge_length_m=[e[3] for e in edges],
        edge_modes=[e[4] for e in edges],
        edge_speed_kmh=[e[5] for e in edges],
        edge_recon_dkk_per_m=[e[6] for e in edges],
    )


def write_trips(path, trips):
    with open(path, "w") as fh:
        fh.write("origin_node\tdest_node\tmode\tweight\n")
        for t in trips:
            fh.write(f"{t.origin}\t{t.destination}\t{t.mode}\t{t.weight:.6g}\n")


def read_trips(path):
    trips = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("origin_node"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: trip row needs 4 columns")
            trips.append(Trip(int(parts[0]), int(parts[1]), parts[2], float(parts[3])))
    return trips


@dataclass
class DemandRow:
    origin_zone: int
    dest_zone: int
    mode: str
    count: int
    weight: float


def write_demand(path, rows):
    with open(path, "w") as fh:
        fh.write("origin_zone\tdest_zone\tmode\tcount\tweight\n")
        for r in rows:
            fh.write(f"{r.origin_zone}\t{r.dest_zone}\t{r.mode}\t{r.count}"
                     f"\t{r.weight:.6g}\n")


def read_demand(path):
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("origin_zone"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: demand row needs 5 columns")
            rows.append(DemandRow(int(parts[0]), int(parts[1]), parts[2],
                                  int(parts[3]), float(parts[4])))
    return rows


def write_zone_attrs(path, attrs):
    """attrs: dict zone -> (green_share, paved_share)."""
    with open(path, "w") as fh:
        fh.write("zone\tgreen_share\tpaved_share\n")
        for z in sorted(attrs):
            g, p = attrs[z]
            fh.write(f"{z}\t{g:.4f}\t{p:.4f}\n")


def read_zone_attrs(path):
    attrs = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("zone"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: zone row needs 3 columns")
            attrs[int(parts[0])] = (float(parts[1]), float(parts[2]))
    return attrs


def sample_trip_table(net: TransportNetwork, demand, rng) -> list:
    """Instantiate node-level trips from zone-level demand rows.

    Origins and destinations are drawn uniformly among each zone's network
    nodes; a pair landing on one node is redrawn.
    """
    trips = []
    for row in demand:
        o_nodes = net.nodes_of_zone(row.origin_zone)
        d_nodes = net.nodes_of_zone(row.dest_zone)
        if len(o_nodes) == 0 or len(d_nodes) == 0:
            raise DataError(f"demand row {row}: a zone has no network nodes")
        for _ in range(row.count):
            for _attempt in range(64):
                o = int(o_nodes[rng.integers(len(o_nodes))])
                d = int(d_nodes[rng.integers(len(d_nodes))])
                if o != d:
                    break
            else:
                raise DataError(f"demand row {row}: cannot draw distinct endpoints")
            trips.append(Trip(o, d, row.mode, row.weight))
    return trips


# ---------------------------------------------------------------------------
# synthetic city generation

@dataclass
class CitySpec:
    zones: int = 4
    grid: tuple = (16, 16)  # (rows, cols)
    trips: int = 500
    cell_size_m: float = 50.0
    node_spacing_cells: int = 2
    seed: int = 0


_MODE_SPEED_KMH = {"drive": 50.0, "cycle": 18.0, "walk": 5.0}
_MODE_RECON_DKK_PER_M = {"drive": 15000.0, "cycle": 4000.0, "walk": 2500.0}


def _mode_shares(dist_m):
    """Distance-dependent mode split, ordered (drive, cycle, walk)."""
    if dist_m < 1000.0:
        return (0.15, 0.35, 0.50)
    if dist_m < 2500.0:
        return (0.40, 0.45, 0.15)
    return (0.70, 0.25, 0.05)


def _largest_remainder(weights, total):
    """Integer allocation of `total` proportional to `weights` (exact sum)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.sum() <= 0 or total <= 0:
        return np.zeros(len(weights), dtype=np.int64)
    quota = weights / weights.sum() * total
    counts = np.floor(quota).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(weights)), -(quota - counts)))
        counts[order[:short]] += 1
    return counts


def generate_synthetic_city(spec: CitySpec):
    """Deterministic-under-seed toy city.

    Returns (TerrainGrid, TransportNetwork, demand rows, zone attrs).
    Terrain is a gentle slope with smoothed noise plus a few depressions per
    zone; the network is a lattice with occasional diagonals, one edge per
    mode per connection; demand follows a gravity rule between zone centroids
    with distance-dependent mode choice.
    """
    if spec.zones < 2:
        raise ConfigError("city spec: need at least 2 zones")
    h, w = spec.grid
    if h < 2 or w < 2:
        raise ConfigError("city spec: need at least a 2x2 terrain")
    if spec.zones > h * w:
        raise ConfigError("city spec: more zones than cells")
    root = np.random.SeedSequence([0x0C17, spec.seed])
    rng_zone, rng_terrain, rng_net, rng_dem = (
        np.random.default_rng(s) for s in root.spawn(4))

    spacing = max(1, int(spec.node_spacing_cells))
    offset = spacing // 2
    node_rows = np.arange(offset, h, spacing)
    node_cols = np.arange(offset, w, spacing)

    # --- zones: nearest-seed partition; redraw until every zone holds >= 2
    # network nodes so trip endpoints can always be distinct
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for _attempt in range(200):
        seeds = rng_zone.choice(h * w, size=spec.zones, replace=False)
        seed_rc = np.stack(np.divmod(seeds, w), axis=1)
        d2 = ((rr[..., None] - seed_rc[:, 0]) ** 2
              + (cc[..., None] - seed_rc[:, 1]) ** 2)
        zone_of_cell = np.argmin(d2, axis=2).astype(np.int64)
        node_zones = zone_of_cell[np.ix_(node_rows, node_cols)]
        counts = np.bincount(node_zones.reshape(-1), minlength=spec.zones)
        if np.all(counts >= 2):
            break
    else:
        raise ConfigError("city spec: zones too small for the node lattice; "
                          "lower node_spacing_cells or the zone count")

    # --- terrain: tilted plane + smoothed noise + depressions
    cell = spec.cell_size_m
    elev = 20.0 + 0.004 * cell * rr + 0.002 * cell * cc
    noise = rng_terrain.normal(0.0, 1.0, size=(h, w))
    for _ in range(3):  # separable box blur
        noise = (np.roll(noise, 1, 0) + noise + np.roll(noise, -1, 0)) / 3.0
        noise = (np.roll(noise, 1, 1) + noise + np.roll(noise, -1, 1)) / 3.0
    elev = elev + 0.6 * noise
    n_pits_per_zone = 2
    for z in range(spec.zones):
        zone_cells = np.flatnonzero(zone_of_cell.reshape(-1) == z)
        pits = rng_terrain.choice(zone_cells,
                                  size=min(n_pits_per_zone, len(zone_cells)),
                                  replace=False)
        for pit in pits:
            pr, pc = divmod(int(pit), w)
            depth = rng_terrain.uniform(0.9, 1.8)
            radius = rng_terrain.uniform(1.5, 3.0)
            d2pit = (rr - pr) ** 2 + (cc - pc) ** 2
            elev = elev - depth * np.exp(-d2pit / (2.0 * radius * radius))

    grid = TerrainGrid(elev, zone_of_cell, cell)

    # --- network: lattice + diagonals, one edge per direction per mode
    n_rows, n_cols = len(node_rows), len(node_cols)
    node_id = np.arange(n_rows * n_cols).reshape(n_rows, n_cols)
    node_xy = np.empty((n_rows * n_cols, 2))
    for i, r in enumerate(node_rows):
        for j, c in enumerate(node_cols):
            node_xy[node_id[i, j]] = ((c + 0.5) * cell, (r + 0.5) * cell)
    node_zone = node_zones.reshape(-1)

    connections = []
    for i in range(n_rows):
        for j in range(n_cols):
            if j + 1 < n_cols:
                connections.append((node_id[i, j], node_id[i, j + 1]))
            if i + 1 < n_rows:
                connections.append((node_id[i, j], node_id[i + 1, j]))
            if i + 1 < n_rows and j + 1 < n_cols and rng_net.random() < 0.25:
                if rng_net.random() < 0.5:
                    connections.append((node_id[i, j], node_id[i + 1, j + 1]))
                else:
                    connections.append((node_id[i, j + 1], node_id[i + 1, j]))

    e_from, e_to, e_len, e_modes, e_speed, e_recon = [], [], [], [], [], []
    for a, b in connections:
        length = float(np.hypot(*(node_xy[a] - node_xy[b])))
        for mode in MODES:
            for u, v in ((a, b), (b, a)):
                e_from.append(u)
                e_to.append(v)
                e_len.append(length)
                e_modes.append(frozenset({mode}))
                e_speed.append(_MODE_SPEED_KMH[mode])
                e_recon.append(_MODE_RECON_DKK_PER_M[mode])

    net = TransportNetwork(node_xy, node_zone, e_from, e_to, e_len,
                           e_modes, e_speed, e_recon)
    net.attach_terrain(grid)

    # --- demand: gravity between zone centroids, exact total trip count
    centroids = np.zeros((spec.zones, 2))
    mass = np.zeros(spec.zones)
    for z in range(spec.zones):
        cells = np.flatnonzero(zone_of_cell.reshape(-1) == z)
        crs, ccs = np.divmod(cells, w)
        centroids[z] = ((ccs.mean() + 0.5) * cell, (crs.mean() + 0.5) * cell)
        mass[z] = len(cells)
    pairs = [(o, d) for o in range(spec.zones) for d in range(spec.zones)]
    dists, gravities = [], []
    for o, d in pairs:
        if o == d:
            dist = 0.5 * np.sqrt(mass[o] * cell * cell)
        else:
            dist = float(np.hypot(*(centroids[o] - centroids[d])))
        dists.append(dist)
        gravities.append(mass[o] * mass[d] / (1.0 + (dist / 500.0) ** 2))
    od_counts = _largest_remainder(gravities, spec.trips)

    demand = []
    for (o, d), dist, n_od in zip(pairs, dists, od_counts):
        if n_od == 0:
            continue
        mode_counts = _largest_remainder(_mode_shares(dist), int(n_od))
        for mode, n_m in zip(MODES, mode_counts):
            if n_m > 0:
                demand.append(DemandRow(o, d, mode, int(n_m), 25.0))

    attrs = {z: (round(float(rng_dem.uniform(0.02, 0.6)), 4),
                 round(float(rng_dem.uniform(0.1, 0.7)), 4))
             for z in range(spec.zones)}
    return grid, net, demand, attrs
