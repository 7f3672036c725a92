"""Terrain, depression filling, and flood fields.

One rainfall event turns into per-zone inflow volumes (rain depth times zone
area, minus what active interventions absorb), which are placed uniformly on
each zone's cells and routed into topographic depressions by the kernel in
:mod:`floodadapt.kernels`.  The result is a water-depth raster plus depths
sampled onto transport network elements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from floodadapt import kernels
from floodadapt.config import ConfigError

NO_ZONE = -1  # zone id for cells outside every TAZ


class TerrainGrid:
    """Raster terrain with a zone id per cell.

    elevation: (H, W) float64 meters, finite except no-data cells;
    zone_of_cell: (H, W) int64, NO_ZONE outside TAZs.  No-data cells act as
    sinks (water reaching them leaves the domain).
    """

    def __init__(self, elevation, zone_of_cell, cell_size_m, nodata=-9999.0):
        self.elevation = np.ascontiguousarray(elevation, dtype=np.float64)
        self.zone_of_cell = np.ascontiguousarray(zone_of_cell, dtype=np.int64)
        if self.elevation.shape != self.zone_of_cell.shape:
            raise ConfigError("terrain: elevation and zone rasters differ in shape")
        if self.elevation.ndim != 2 or min(self.elevation.shape) < 2:
            raise ConfigError("terrain: need at least a 2x2 grid")
        self.cell_size_m = float(cell_size_m)
        if self.cell_size_m <= 0:
            raise ConfigError("terrain: cell_size_m must be positive")
        self.nodata = float(nodata)
        self.sink_mask = (self.elevation == self.nodata).astype(np.uint8)
        valid = self.elevation[self.sink_mask == 0]
        if valid.size and not np.all(np.isfinite(valid)):
            raise ConfigError("terrain: non-finite elevation on a data cell")
        self.height, self.width = self.elevation.shape
        self.zones = np.unique(self.zone_of_cell[self.zone_of_cell != NO_ZONE])
        self.cells_of_zone = {
            int(z): np.flatnonzero(self.zone_of_cell.reshape(-1) == z)
            for z in self.zones
        }

    @property
    def cell_area_m2(self) -> float:
        return self.cell_size_m * self.cell_size_m

    def zone_area_m2(self, zone) -> float:
        return len(self.cells_of_zone[int(zone)]) * self.cell_area_m2

    def zone_adjacency(self):
        """Edge list of zones sharing a cell border (4-neighborhood)."""
        z = self.zone_of_cell
        pairs = set()
        for a, b in ((z[:, :-1], z[:, 1:]), (z[:-1, :], z[1:, :])):
            diff = (a != b) & (a != NO_ZONE) & (b != NO_ZONE)
            for u, v in zip(a[diff].tolist(), b[diff].tolist()):
                pairs.add((min(u, v), max(u, v)))
        return sorted(pairs)


@dataclass
class FloodField:
    cell_depth: np.ndarray  # (H, W) meters
    outflow_m3: float
    element_depth: np.ndarray | None = None  # per network edge, meters


def fill_depressions(grid: TerrainGrid, inflow_per_zone: dict,
                     open_boundary: bool = True) -> FloodField:
    """Distribute per-zone inflow volumes (m3) into the terrain's depressions."""
    volume = np.zeros(grid.elevation.shape, dtype=np.float64).reshape(-1)
    for zone, m3 in inflow_per_zone.items():
        if m3 < 0:
            raise ConfigError(f"zone {zone}: negative inflow volume")
        if m3 == 0:
            continue
        cells = grid.cells_of_zone.get(int(zone))
        if cells is None:
            raise ConfigError(f"inflow names unknown zone {zone}")
        volume[cells] = m3 / len(cells)
    depth, outflow = kernels.fill_volumes(
        grid.elevation, volume.reshape(grid.elevation.shape),
        grid.cell_area_m2, open_boundary, grid.sink_mask)
    return FloodField(cell_depth=depth, outflow_m3=float(outflow))


def effective_capacity_m3(ledger_zone, catalog) -> float:
    """Total water volume absorbed in a zone: capacity scaled by effectiveness."""
    return float(sum(catalog[e.kind].capacity_m3 * e.effectiveness
                     for e in ledger_zone))


def compute_flood(event, grid: TerrainGrid, ledger, catalog,
                  open_boundary: bool = True) -> FloodField:
    """Flood field for one rainfall event given active interventions.

    `ledger` maps zone id -> list of active entries (see env module);
    `catalog` maps kind index -> InterventionSpec.
    """
    rain_m = event.depth_mm / 1000.0
    inflow = {}
    for zone in grid.zones:
        zone = int(zone)
        gross = rain_m * grid.zone_area_m2(zone)
        absorbed = effective_capacity_m3(ledger.get(zone, ()), catalog)
        inflow[zone] = max(0.0, gross - absorbed)
    return fill_depressions(grid, inflow, open_boundary)


def sample_elements(field: FloodField, edge_cells, edge_ptr, how="max") -> np.ndarray:
    """Water depth per network edge from the cells under its geometry.

    edge_cells/edge_ptr form a CSR layout: edge e covers flat cell indices
    edge_cells[edge_ptr[e]:edge_ptr[e+1]].  `how` picks the max (default,
    conservative) or mean depth along the edge.
    """
    flat = field.cell_depth.reshape(-1)
    n_edges = len(edge_ptr) - 1
    if len(edge_cells) == 0:
        return np.zeros(n_edges, dtype=np.float64)
    picked = flat[edge_cells]
    if how == "max":
        out = np.maximum.reduceat(picked, edge_ptr[:-1])
    elif how == "mean":
        sums = np.add.reduceat(picked, edge_ptr[:-1])
        out = sums / np.maximum(np.diff(edge_ptr), 1)
    else:
        raise ConfigError(f"element_depth: unknown mode {how!r}")
    out[np.diff(edge_ptr) == 0] = 0.0
    field.element_depth = out
    return out


def edge_cell_index(grid: TerrainGrid, x0, y0, x1, y1):
    """Flat indices of the cells a straight segment passes over.

    Samples the segment every half cell; duplicates removed, order sorted.
    Coordinates are meters with the origin at the grid's top-left corner,
    x growing along columns and y along rows.
    """
    length = float(np.hypot(x1 - x0, y1 - y0))
    n = max(2, int(np.ceil(length / (grid.cell_size_m / 2.0))) + 1)
    ts = np.linspace(0.0, 1.0, n)
    xs = x0 + (x1 - x0) * ts
    ys = y0 + (y1 - y0) * ts
    cols = np.clip((xs / grid.cell_size_m).astype(np.int64), 0, grid.width - 1)
    rows = np.clip((ys / grid.cell_size_m).astype(np.int64), 0, grid.height - 1)
    return np.unique(rows * grid.width + cols)


def cell_of_point(grid: TerrainGrid, x, y):
    col = int(np.clip(x / grid.cell_size_m, 0, grid.width - 1))
    row = int(np.clip(y / grid.cell_size_m, 0, grid.height - 1))
    return row * grid.width + col


# ---------------------------------------------------------------------------
# terrain file format (plain text, row-major):
#
#   ncols 16
#   nrows 16
#   cellsize 50.0
#   nodata -9999
#   section elevation
#   <nrows lines of ncols floats>
#   section zones
#   <nrows lines of ncols ints, -1 = outside every zone>

def read_terrain(path) -> TerrainGrid:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    header = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if parts[0] == "section":
            break
        if len(parts) != 2:
            raise ConfigError(f"{path}:{i + 1}: malformed header line")
        header[parts[0]] = parts[1]
        i += 1
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        cellsize = float(header["cellsize"])
        nodata = float(header.get("nodata", -9999))
    except KeyError as missing:
        raise ConfigError(f"{path}: missing header field {missing}") from None

    def read_section(name, dtype, at):
        if at >= len(lines) or lines[at].split() != ["section", name]:
            raise ConfigError(f"{path}:{at + 1}: expected 'section {name}'")
        rows = []
        for r in range(nrows):
            vals = lines[at + 1 + r].split()
            if len(vals) != ncols:
                raise ConfigError(f"{path}:{at + 2 + r}: expected {ncols} values")
            rows.append([dtype(v) for v in vals])
        return np.array(rows), at + 1 + nrows

    elev, i = read_section("elevation", float, i)
    zones, i = read_section("zones", int, i)
    return TerrainGrid(elev, zones, cellsize, nodata)


def write_terrain(path, grid: TerrainGrid):
    with open(path, "w") as fh:
        fh.write(f"ncols {grid.width}\n")
        fh.write(f"nrows {grid.height}\n")
        fh.write(f"cellsize {grid.cell_size_m:.6g}\n")
        fh.write(f"nodata {grid.nodata:.6g}\n")
        fh.write("section elevation\n")
        for row in grid.elevation:
            fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")
        fh.write("section zones\n")
        for row in grid.zone_of_cell:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
