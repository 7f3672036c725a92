"""The sequential decision environment.

One step is one planning year: deployments are applied and paid for, a
rainfall event is sampled, the flood field and its transport impacts are
computed and monetized, the reward is the negated city-wide cost total, and
the intervention ledger ages.  Zone features observed by the policy carry
the previous step's impacts (impacts caused at t are visible from t+1 on)
next to the per-kind remaining-effectiveness vector.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from floodadapt import forcing, network, valuation
from floodadapt.config import DO_NOTHING, KINDS, N_KINDS, Config, ConfigError
from floodadapt.flood import TerrainGrid, compute_flood, read_terrain, sample_elements
from floodadapt.valuation import CostBreakdown, LedgerEntry, MaskViolation

N_FEATURES = 3 + (N_KINDS - 1)  # I, D, C + one effectiveness slot per kind

# Version of the observation/action/step contract.  External wrappers pin
# against this and must refuse to run if it moves under them.
PROTOCOL_VERSION = 1


@dataclass
class EnvState:
    features: np.ndarray  # (n_zones, N_FEATURES) float64
    mask: np.ndarray  # (n_zones, N_KINDS) bool, True = allowed
    adjacency: np.ndarray  # (2, n_directed_edges) int64 zone index pairs
    step_index: int


class CityBundle:
    """A city on disk: terrain, network, demand spec, zone attributes."""

    FILES = ("terrain.grid", "network.tsv", "demand.tsv", "zones.tsv")

    def __init__(self, grid: TerrainGrid, net, demand, zone_attrs):
        self.grid = grid
        self.net = net
        self.demand = demand
        self.zone_attrs = zone_attrs
        zones = grid.zones
        if len(zones) < 1 or not np.array_equal(zones, np.arange(len(zones))):
            raise ConfigError("bundle: zone ids must be contiguous 0..n-1")
        self.n_zones = len(zones)
        for z in range(self.n_zones):
            if z not in zone_attrs:
                raise ConfigError(f"bundle: zones.tsv misses zone {z}")
            if len(net.nodes_of_zone(z)) == 0:
                raise ConfigError(f"bundle: zone {z} has no network nodes")
        if net.edge_cells is None:
            net.attach_terrain(grid)
        pairs = grid.zone_adjacency()
        both = [(a, b) for a, b in pairs] + [(b, a) for a, b in pairs]
        both.sort()
        self.adjacency = (np.array(both, dtype=np.int64).T.copy()
                          if both else np.empty((2, 0), dtype=np.int64))

    @classmethod
    def load(cls, path) -> "CityBundle":
        for name in cls.FILES:
            if not os.path.exists(os.path.join(path, name)):
                raise ConfigError(f"bundle {path}: missing {name}")
        grid = read_terrain(os.path.join(path, "terrain.grid"))
        net = network.read_network(os.path.join(path, "network.tsv"))
        demand = network.read_demand(os.path.join(path, "demand.tsv"))
        attrs = network.read_zone_attrs(os.path.join(path, "zones.tsv"))
        return cls(grid, net, demand, attrs)

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        from floodadapt.flood import write_terrain
        write_terrain(os.path.join(path, "terrain.grid"), self.grid)
        network.write_network(os.path.join(path, "network.tsv"), self.net)
        network.write_demand(os.path.join(path, "demand.tsv"), self.demand)
        network.write_zone_attrs(os.path.join(path, "zones.tsv"), self.zone_attrs)


def decay_effectiveness(entry: LedgerEntry, schedule="linear",
                        half_life_years=10.0) -> LedgerEntry:
    """Remaining effectiveness for the entry's current age.

    Linear: 1 - age/lifetime, floored at 0 (the default).  Exponential:
    0.5 ** (age/half_life).  Expiry (age >= lifetime) is handled by the
    caller; this only recomputes the effectiveness value.
    """
    if schedule == "linear":
        eff = max(0.0, 1.0 - entry.age_years / entry.lifetime_years)
    elif schedule == "exponential":
        eff = 0.5 ** (entry.age_years / half_life_years)
    else:
        raise ConfigError(f"unknown decay schedule {schedule!r}")
    entry.effectiveness = float(eff)
    return entry


class AdaptationEnv:
    """Single-threaded environment over one city bundle and one scenario."""

    def __init__(self, bundle: CityBundle, config: Config, scenario_id: str):
        self.bundle = bundle
        self.config = config
        self.scenario_id = scenario_id
        horizon = (config.env.horizon_start, config.env.horizon_end)
        self.stats = forcing.load_stats(scenario_id, config.scenario_dir, horizon)
        self.horizon_steps = config.env.horizon_steps
        self.n_zones = bundle.n_zones
        self.catalog = config.catalog
        self._applicable = self._applicability_mask()
        self._zone_area = np.array(
            [bundle.grid.zone_area_m2(z) for z in range(self.n_zones)])
        self.ledger = {}
        self.t = None  # reset() must run before step()

    def _applicability_mask(self) -> np.ndarray:
        """(n_zones, N_KINDS) bool: kind deployable in zone, ledger aside."""
        ok = np.ones((self.n_zones, N_KINDS), dtype=bool)
        for z in range(self.n_zones):
            green, paved = self.bundle.zone_attrs[z]
            for k, spec in enumerate(self.catalog):
                if spec.requires == "green":
                    ok[z, k] = green >= self.config.env.min_green_share
                elif spec.requires == "paved":
                    ok[z, k] = paved >= self.config.env.min_paved_share
        ok[:, DO_NOTHING] = True
        return ok

    def current_mask(self) -> np.ndarray:
        mask = self._applicable.copy()
        for zone, entries in self.ledger.items():
            for e in entries:
                mask[zone, e.kind] = False
        mask[:, DO_NOTHING] = True
        return mask

    def reset(self, seed: int) -> EnvState:
        root = np.random.SeedSequence([int(seed)])
        ss_forcing, ss_demand = root.spawn(2)
        self.rng_forcing = np.random.default_rng(ss_forcing)
        rng_demand = np.random.default_rng(ss_demand)
        self.trips = network.sample_trip_table(self.bundle.net,
                                               self.bundle.demand, rng_demand)
        self._baseline_times = network._times_by_trip(
            self.bundle.net, self.trips, self.config.modes, None)
        self._dry_outcomes = network.route_all(
            self.bundle.net, self.trips, self.config.modes,
            element_depth=None, baseline=self._baseline_times)
        self.ledger = {}
        self.t = 0
        self._impacts = np.zeros((self.n_zones, 3))
        return self._observe()

    def _observe(self) -> EnvState:
        features = np.zeros((self.n_zones, N_FEATURES))
        features[:, :3] = self._impacts
        for zone, entries in self.ledger.items():
            for e in entries:
                features[zone, 3 + e.kind - 1] = e.effectiveness
        return EnvState(features=features, mask=self.current_mask(),
                        adjacency=self.bundle.adjacency, step_index=self.t)

    def step(self, actions):
        """Advance one year.  Returns (EnvState, reward_dkk, done, CostBreakdown)."""
        if self.t is None:
            raise RuntimeError("step() before reset()")
        if self.t >= self.horizon_steps:
            raise RuntimeError("episode is over; call reset()")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_zones,):
            raise MaskViolation(f"joint action must have shape ({self.n_zones},)")
        mask = self.current_mask()
        for zone in range(self.n_zones):
            k = int(actions[zone])
            if not 0 <= k < N_KINDS:
                raise MaskViolation(f"zone {zone}: unknown kind id {k}")
            if not mask[zone, k]:
                raise MaskViolation(
                    f"zone {zone}: intervention {KINDS[k]} is masked "
                    "(active or not applicable)")

        cfg = self.config
        # 1) deployments and maintenance
        A, M = valuation.action_costs(self.ledger, actions, self.catalog,
                                      self.n_zones)
        # 2) rainfall event
        event = forcing.sample_event(self.stats, self.t, self.rng_forcing,
                                     cfg.env.horizon_start)
        # 3) flood with the updated ledger
        field = compute_flood(event, self.bundle.grid, self.ledger,
                              self.catalog, cfg.flood.open_boundary)
        element_depth = sample_elements(field, self.bundle.net.edge_cells,
                                        self.bundle.net.edge_cell_ptr,
                                        cfg.flood.element_depth)
        # 4) route trips and monetize impacts (dry event: all three are zero)
        net = self.bundle.net
        ann = cfg.valuation.annualization
        if np.any(element_depth > 0):
            outcomes = network.route_all(net, self.trips, cfg.modes,
                                         element_depth=element_depth,
                                         baseline=self._baseline_times)
            I = valuation.infrastructure_damage(net, element_depth,
                                                cfg.valuation.damage_knots,
                                                self.n_zones, ann)
            D = valuation.delay_cost(self.trips, outcomes, cfg.modes,
                                     self.n_zones, net.node_zone, ann)
            C = valuation.cancellation_cost(self.trips, outcomes, cfg.modes,
                                            self.n_zones, net.node_zone, ann)
        else:
            I, D, C = (np.zeros(self.n_zones) for _ in range(3))
        breakdown = CostBreakdown(infrastructure=I, delay=D, cancellation=C,
                                  action=A, maintenance=M)
        # 5) reward
        reward = -breakdown.total_dkk()
        # 6) age the ledger
        for zone in sorted(self.ledger):
            kept = []
            for e in self.ledger[zone]:
                e.age_years += 1
                if e.age_years >= e.lifetime_years:
                    continue
                decay_effectiveness(e, cfg.env.decay,
                                    cfg.env.decay_half_life_years)
                kept.append(e)
            if kept:
                self.ledger[zone] = kept
            else:
                del self.ledger[zone]
        # 7) advance time
        self.t += 1
        done = self.t >= self.horizon_steps
        self._impacts = np.stack([I, D, C], axis=1)
        self._last_event = event
        return self._observe(), reward, done, breakdown
