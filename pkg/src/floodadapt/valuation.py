"""Monetized impacts and action costs, aggregated per zone in DKK.

Five components per zone and step: infrastructure damage (depth-damage curve
over flooded edges), travel delay cost (value of time), trip cancellation
cost, implementation cost of new deployments, and maintenance of everything
active.  City totals are exact sums over zones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from floodadapt.config import DO_NOTHING, KINDS, N_KINDS


@dataclass
class CostBreakdown:
    """Per-zone cost components for one step, DKK; arrays indexed by zone."""
    infrastructure: np.ndarray  # I
    delay: np.ndarray  # D
    cancellation: np.ndarray  # C
    action: np.ndarray  # A
    maintenance: np.ndarray  # M

    def total_dkk(self) -> float:
        return float(self.infrastructure.sum() + self.delay.sum()
                     + self.cancellation.sum() + self.action.sum()
                     + self.maintenance.sum())

    def per_zone_total(self) -> np.ndarray:
        return (self.infrastructure + self.delay + self.cancellation
                + self.action + self.maintenance)

    @classmethod
    def zeros(cls, n_zones: int) -> "CostBreakdown":
        return cls(*(np.zeros(n_zones) for _ in range(5)))


def damage_fraction(depth_m, knots) -> np.ndarray:
    """Damaged fraction of reconstruction cost at a water depth.

    Piecewise-linear in depth through the configured knots, clamped to the
    first/last knot outside their range.
    """
    xs = np.array([k[0] for k in knots], dtype=np.float64)
    ys = np.array([k[1] for k in knots], dtype=np.float64)
    return np.interp(depth_m, xs, ys)


def infrastructure_damage(net, element_depth, knots, n_zones,
                          annualization=1.0) -> np.ndarray:
    """Per-zone damage: curve(depth) x reconstruction cost x edge length."""
    out = np.zeros(n_zones)
    if element_depth is None or not np.any(element_depth > 0):
        return out
    frac = damage_fraction(element_depth, knots)
    dkk = frac * net.edge_recon_dkk_per_m * net.edge_length_m * annualization
    np.add.at(out, net.edge_zone, dkk)
    return out


def delay_cost(trips, outcomes, mode_params, n_zones, zone_of_node,
               annualization=1.0) -> np.ndarray:
    """Per-zone delay cost: minutes lost x persons x value of time."""
    out = np.zeros(n_zones)
    for trip, o in zip(trips, outcomes):
        if o.cancelled:
            continue
        minutes = o.disrupted_minutes - o.baseline_minutes
        if minutes <= 0:
            continue
        vot = mode_params[trip.mode].vot_dkk_per_hour
        out[zone_of_node[trip.origin]] += minutes / 60.0 * vot * trip.weight * annualization
    return out


def cancellation_cost(trips, outcomes, mode_params, n_zones, zone_of_node,
                      annualization=1.0) -> np.ndarray:
    """Per-zone cancellation cost: flat rate per abandoned trip x persons."""
    out = np.zeros(n_zones)
    for trip, o in zip(trips, outcomes):
        if o.cancelled:
            rate = mode_params[trip.mode].cancelled_trip_dkk
            out[zone_of_node[trip.origin]] += rate * trip.weight * annualization
    return out


class MaskViolation(ValueError):
    """An action was submitted for a zone where its kind is masked."""


@dataclass
class LedgerEntry:
    kind: int  # index into KINDS
    age_years: int
    lifetime_years: int
    effectiveness: float  # in [0, 1]


def action_costs(ledger, actions, catalog, n_zones):
    """Apply deployments and charge costs.

    ledger: dict zone -> list[LedgerEntry], mutated in place with new
    deployments at age 0 and effectiveness 1.  Returns (A, M) per-zone
    arrays: A sums implementation costs of this step's deployments, M sums
    maintenance of every active entry including the new ones.
    Duplicate-deployment attempts raise MaskViolation naming zone and kind.
    """
    A = np.zeros(n_zones)
    M = np.zeros(n_zones)
    for zone in range(n_zones):
        kind = int(actions[zone])
        if kind != DO_NOTHING:
            active = [e.kind for e in ledger.get(zone, ())]
            if kind in active:
                raise MaskViolation(
                    f"zone {zone}: kind {KINDS[kind]} is already active")
            if not 0 < kind < N_KINDS:
                raise MaskViolation(f"zone {zone}: unknown kind id {kind}")
            spec = catalog[kind]
            ledger.setdefault(zone, []).append(LedgerEntry(
                kind=kind, age_years=0, lifetime_years=spec.lifetime_years,
                effectiveness=1.0))
            A[zone] += spec.implementation_cost_dkk
        for entry in ledger.get(zone, ()):
            M[zone] += catalog[entry.kind].maintenance_cost_dkk_per_year
    return A, M
