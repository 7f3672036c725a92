"""Transport network: speeds, routing, file formats, the city generator."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floodadapt.config import default_modes
from floodadapt.network import (
    CitySpec,
    DataError,
    DemandRow,
    TransportNetwork,
    Trip,
    _largest_remainder,
    disrupted_speed,
    generate_synthetic_city,
    read_demand,
    read_network,
    read_trips,
    read_zone_attrs,
    route_all,
    sample_trip_table,
    write_demand,
    write_network,
    write_trips,
    write_zone_attrs,
)


def test_disrupted_speed_brackets():
    assert disrupted_speed(50.0, 0.0, 0.30) == 50.0
    assert disrupted_speed(50.0, 0.30, 0.30) == 0.0
    assert disrupted_speed(50.0, 0.45, 0.30) == 0.0
    mid = disrupted_speed(50.0, 0.15, 0.30)
    assert 0.0 < mid < 50.0
    assert mid == pytest.approx(12.5)  # quadratic: (1/2)^2 of free flow


@settings(max_examples=60, deadline=None)
@given(d1=st.floats(min_value=0, max_value=0.5),
       d2=st.floats(min_value=0, max_value=0.5))
def test_disrupted_speed_non_increasing(d1, d2):
    lo, hi = sorted((d1, d2))
    assert disrupted_speed(30.0, hi, 0.30) <= disrupted_speed(30.0, lo, 0.30)


def tiny_net(edges, n_nodes, modes=("drive",)):
    """Build a network from (from, to, length_m, speed) tuples."""
    xy = np.zeros((n_nodes, 2))
    xy[:, 0] = np.arange(n_nodes, dtype=float)
    zone = np.zeros(n_nodes, dtype=np.int64)
    return TransportNetwork(
        node_xy=xy,
        node_zone=zone,
        edge_from=np.array([r[0] for r in edges], dtype=np.int64),
        edge_to=np.array([r[1] for r in edges], dtype=np.int64),
        edge_length_m=np.array([r[2] for r in edges], dtype=np.float64),
        edge_modes=[set(modes) for _ in edges],
        edge_speed_kmh=np.array([r[3] for r in edges], dtype=np.float64),
        edge_recon_dkk_per_m=np.full(len(edges), 100.0),
    )


def test_route_all_dry_equals_baseline():
    net = tiny_net([(0, 1, 1000.0, 60.0), (1, 2, 2000.0, 60.0)], 3)
    trips = [Trip(0, 2, "drive", 1.0)]
    out = route_all(net, trips, default_modes())
    assert out[0].baseline_minutes == pytest.approx(3.0)
    assert out[0].disrupted_minutes == out[0].baseline_minutes
    assert not out[0].cancelled


def test_route_all_cancellation_on_disconnect():
    net = tiny_net([(0, 1, 1000.0, 60.0)], 2)
    trips = [Trip(0, 1, "drive", 1.0)]
    depth = np.array([0.5])  # past the drive cutoff
    out = route_all(net, trips, default_modes(), element_depth=depth)
    assert out[0].cancelled
    assert np.isinf(out[0].disrupted_minutes)


def test_route_all_validates_endpoints():
    net = tiny_net([(0, 1, 1000.0, 60.0)], 2)
    with pytest.raises(DataError, match="trip 0"):
        route_all(net, [Trip(0, 5, "drive", 1.0)], default_modes())
    with pytest.raises(DataError, match="origin equals"):
        route_all(net, [Trip(1, 1, "drive", 1.0)], default_modes())


def test_route_all_mode_filtering():
    """cycle trips may not use drive-only edges."""
    xy = np.zeros((3, 2))
    net = TransportNetwork(
        node_xy=xy, node_zone=np.zeros(3, dtype=np.int64),
        edge_from=np.array([0, 0], dtype=np.int64),
        edge_to=np.array([1, 2], dtype=np.int64),
        edge_length_m=np.array([500.0, 500.0]),
        edge_modes=[{"drive"}, {"drive", "cycle"}],
        edge_speed_kmh=np.array([50.0, 18.0]),
        edge_recon_dkk_per_m=np.array([100.0, 100.0]),
    )
    out = route_all(net, [Trip(0, 2, "cycle", 1.0)], default_modes())
    assert not out[0].cancelled
    with pytest.raises(DataError, match="dry network"):
        route_all(net, [Trip(0, 1, "cycle", 1.0)], default_modes())


def all_simple_path_times(n, edge_minutes, origin, dest):
    """Brute-force shortest time over every simple path."""
    best = np.inf
    for length in range(1, n):
        for mid in itertools.permutations(
                [v for v in range(n) if v not in (origin, dest)], length - 1):
            path = (origin, *mid, dest)
            t = 0.0
            ok = True
            for a, b in zip(path, path[1:]):
                w = edge_minutes.get((a, b), np.inf)
                if not np.isfinite(w):
                    ok = False
                    break
                t += w
            if ok:
                best = min(best, t)
    return best


def test_routing_matches_exhaustive_enumeration():
    """100 random graphs with <= 10 nodes, random depths, exact agreement."""
    rng = np.random.default_rng(77)
    modes = default_modes()
    for trial in range(100):
        n = int(rng.integers(2, 11))
        m = int(rng.integers(1, n * (n - 1) + 1))
        pairs = rng.integers(0, n, size=(m, 2))
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        if len(pairs) == 0:
            continue
        lengths = rng.uniform(100, 3000, len(pairs))
        speeds = rng.uniform(20, 60, len(pairs))
        net = tiny_net([(int(a), int(b), float(l), float(s))
                        for (a, b), l, s in zip(pairs, lengths, speeds)], n)
        depth = np.where(rng.random(len(pairs)) < 0.3,
                         rng.uniform(0, 0.6, len(pairs)), 0.0)
        edge_minutes = {}
        for i, (a, b) in enumerate(pairs):
            v = disrupted_speed(speeds[i], depth[i], modes["drive"].cutoff_m)
            w = lengths[i] * 0.06 / v if v > 0 else np.inf
            key = (int(a), int(b))
            edge_minutes[key] = min(edge_minutes.get(key, np.inf), w)
        o, d = 0, n - 1
        if o == d:
            continue
        dry_minutes = {}
        for i, (a, b) in enumerate(pairs):
            w = lengths[i] * 0.06 / speeds[i]
            key = (int(a), int(b))
            dry_minutes[key] = min(dry_minutes.get(key, np.inf), w)
        expect_dry = all_simple_path_times(n, dry_minutes, o, d)
        if not np.isfinite(expect_dry):
            continue  # route_all treats dry disconnection as a data error
        expect = all_simple_path_times(n, edge_minutes, o, d)
        out = route_all(net, [Trip(o, d, "drive", 1.0)], modes,
                        element_depth=depth)[0]
        assert out.baseline_minutes == pytest.approx(expect_dry, rel=1e-12)
        if np.isfinite(expect):
            assert not out.cancelled
            assert out.disrupted_minutes == pytest.approx(expect, rel=1e-12)
        else:
            assert out.cancelled


def test_baseline_reuse_shortcut():
    net = tiny_net([(0, 1, 1000.0, 50.0)], 2)
    trips = [Trip(0, 1, "drive", 1.0)]
    modes = default_modes()
    first = route_all(net, trips, modes)
    base = np.array([o.baseline_minutes for o in first])
    again = route_all(net, trips, modes, element_depth=np.zeros(1),
                      baseline=base)
    assert again[0].disrupted_minutes == first[0].baseline_minutes


def test_largest_remainder_exact_total():
    counts = _largest_remainder([1.0, 1.0, 1.0], 10)
    assert counts.sum() == 10
    assert counts.max() - counts.min() <= 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.01, max_value=50), min_size=1,
                max_size=12),
       st.integers(min_value=0, max_value=500))
def test_largest_remainder_property(weights, total):
    counts = _largest_remainder(weights, total)
    assert counts.sum() == total
    assert (counts >= 0).all()


def test_city_determinism_and_shape():
    spec = CitySpec(zones=4, grid=(16, 16), trips=500, seed=7)
    g1, n1, d1, a1 = generate_synthetic_city(spec)
    g2, n2, d2, a2 = generate_synthetic_city(spec)
    assert np.array_equal(g1.elevation, g2.elevation)
    assert np.array_equal(n1.edge_from, n2.edge_from)
    assert d1 == d2
    assert a1 == a2
    assert sum(r.count for r in d1) == 500
    assert sorted(set(int(z) for z in g1.zones)) == [0, 1, 2, 3]


def test_city_29_zones():
    spec = CitySpec(zones=29, grid=(40, 40), trips=300, seed=1)
    grid, net, demand, attrs = generate_synthetic_city(spec)
    assert len(set(int(z) for z in grid.zones)) == 29
    assert len(attrs) == 29
    adj = grid.zone_adjacency()
    touched = set()
    for a, b in adj:
        touched.add(a)
        touched.add(b)
    assert touched == set(range(29))


def test_city_trip_endpoints_lie_in_stated_zones():
    spec = CitySpec(zones=4, grid=(16, 16), trips=200, seed=3)
    grid, net, demand, attrs = generate_synthetic_city(spec)
    rng = np.random.default_rng(0)
    trips = sample_trip_table(net, demand, rng)
    assert sum(r.count for r in demand) == len(trips) == 200
    by_od = {}
    for row in demand:
        by_od[(row.origin_zone, row.dest_zone, row.mode)] = row.count
    seen = {}
    for t in trips:
        key = (int(net.node_zone[t.origin]), int(net.node_zone[t.destination]),
               t.mode)
        seen[key] = seen.get(key, 0) + 1
    assert seen == by_od


def test_network_file_round_trip(tmp_path):
    spec = CitySpec(zones=3, grid=(12, 12), trips=60, seed=5)
    _, net, demand, attrs = generate_synthetic_city(spec)
    p = tmp_path / "net.tsv"
    write_network(p, net)
    loaded = read_network(p)
    assert np.array_equal(loaded.edge_from, net.edge_from)
    assert np.array_equal(loaded.edge_to, net.edge_to)
    assert np.allclose(loaded.edge_length_m, net.edge_length_m)
    assert loaded.edge_modes == net.edge_modes
    assert np.allclose(loaded.node_xy, net.node_xy)

    trips = sample_trip_table(net, demand, np.random.default_rng(1))
    tp = tmp_path / "trips.tsv"
    write_trips(tp, trips)
    assert read_trips(tp) == trips

    dp = tmp_path / "demand.tsv"
    write_demand(dp, demand)
    assert read_demand(dp) == demand

    zp = tmp_path / "zones.tsv"
    write_zone_attrs(zp, attrs)
    assert read_zone_attrs(zp) == attrs


def test_read_network_rejects_bad_ids(tmp_path):
    p = tmp_path / "net.tsv"
    p.write_text("[nodes]\nid\tx\ty\tzone\n0\t0\t0\t0\n2\t1\t1\t0\n"
                 "[edges]\nid\tfrom\tto\tlength_m\tmodes\tspeed_kmh\t"
                 "recon_dkk_per_m\n")
    with pytest.raises(DataError):
        read_network(p)


def test_sample_trip_table_distinct_endpoint_failure():
    spec = CitySpec(zones=2, grid=(8, 8), trips=10, seed=2)
    _, net, demand, attrs = generate_synthetic_city(spec)
    bad = [DemandRow(origin_zone=0, dest_zone=0, mode="walk", count=1,
                     weight=1.0)]
    # zone 0 has >= 2 nodes, so intra-zone draws succeed
    trips = sample_trip_table(net, bad, np.random.default_rng(0))
    assert trips[0].origin != trips[0].destination
