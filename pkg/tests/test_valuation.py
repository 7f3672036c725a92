"""Monetization of flood impacts and intervention bookkeeping."""

import numpy as np
import pytest

from floodadapt.config import (
    DO_NOTHING,
    N_KINDS,
    ValuationConfig,
    default_catalog,
    default_modes,
)
from floodadapt.network import Trip, TripOutcome
from floodadapt.valuation import (
    CostBreakdown,
    LedgerEntry,
    MaskViolation,
    action_costs,
    cancellation_cost,
    damage_fraction,
    delay_cost,
    infrastructure_damage,
)


def test_damage_fraction_knots():
    knots = ValuationConfig().damage_knots
    assert damage_fraction(np.array([0.0]), knots)[0] == 0.0
    assert damage_fraction(np.array([0.05]), knots)[0] == pytest.approx(0.05)
    assert damage_fraction(np.array([0.3]), knots)[0] == pytest.approx(0.35)
    assert damage_fraction(np.array([1.0]), knots)[0] == pytest.approx(0.85)
    assert damage_fraction(np.array([2.0]), knots)[0] == 1.0
    assert damage_fraction(np.array([5.0]), knots)[0] == 1.0  # clamped
    # interpolation between 0.5 and 1.0 m
    assert damage_fraction(np.array([0.75]), knots)[0] == pytest.approx(0.70)


class _StubNet:
    """Just enough of a network for infrastructure_damage."""

    def __init__(self, lengths, recon, zones):
        self.edge_length_m = np.asarray(lengths, dtype=np.float64)
        self.edge_recon_dkk_per_m = np.asarray(recon, dtype=np.float64)
        self.edge_zone = np.asarray(zones, dtype=np.int64)


def test_infrastructure_damage_two_edge_oracle():
    """Hand-computed: two edges in different zones.

    Edge 0: 100 m at 1000 DKK/m, depth 0.3 -> fraction 0.35 -> 35,000 DKK.
    Edge 1: 50 m at 2000 DKK/m, depth 2.0 -> fraction 1.0 -> 100,000 DKK.
    """
    net = _StubNet([100.0, 50.0], [1000.0, 2000.0], [0, 1])
    knots = ValuationConfig().damage_knots
    out = infrastructure_damage(net, np.array([0.3, 2.0]), knots, 2, 1.0)
    assert out[0] == pytest.approx(35_000.0)
    assert out[1] == pytest.approx(100_000.0)


def test_infrastructure_damage_dry_is_zero():
    net = _StubNet([100.0], [1000.0], [0])
    knots = ValuationConfig().damage_knots
    out = infrastructure_damage(net, np.zeros(1), knots, 1, 1.0)
    assert out.sum() == 0.0


def test_infrastructure_damage_annualization_scales():
    net = _StubNet([100.0], [1000.0], [0])
    knots = ValuationConfig().damage_knots
    full = infrastructure_damage(net, np.array([2.0]), knots, 1, 1.0)
    half = infrastructure_damage(net, np.array([2.0]), knots, 1, 0.5)
    assert half[0] == pytest.approx(0.5 * full[0])


def test_delay_cost_thirty_minutes():
    """30 min extra at 100 DKK/h and weight 1 costs exactly 50 DKK."""
    modes = default_modes()
    modes["drive"].vot_dkk_per_hour = 100.0
    trips = [Trip(0, 1, "drive", 1.0)]
    outcomes = [TripOutcome(0, baseline_minutes=10.0, disrupted_minutes=40.0,
                            cancelled=False)]
    zone_of_node = np.array([0, 0], dtype=np.int64)
    out = delay_cost(trips, outcomes, modes, 1, zone_of_node, 1.0)
    assert out[0] == pytest.approx(50.0)


def test_delay_cost_weights_and_origin_zone():
    modes = default_modes()
    trips = [Trip(2, 0, "cycle", 25.0)]
    outcomes = [TripOutcome(0, 10.0, 16.0, False)]  # 6 minutes late
    zone_of_node = np.array([0, 0, 1], dtype=np.int64)
    out = delay_cost(trips, outcomes, modes, 2, zone_of_node, 1.0)
    expect = 6.0 / 60.0 * modes["cycle"].vot_dkk_per_hour * 25.0
    assert out[1] == pytest.approx(expect)
    assert out[0] == 0.0


def test_cancelled_trips_cost_flat_rate_not_delay():
    modes = default_modes()
    trips = [Trip(0, 1, "walk", 2.0)]
    outcomes = [TripOutcome(0, 12.0, float("inf"), True)]
    zone_of_node = np.array([0, 0], dtype=np.int64)
    d = delay_cost(trips, outcomes, modes, 1, zone_of_node, 1.0)
    c = cancellation_cost(trips, outcomes, modes, 1, zone_of_node, 1.0)
    assert d[0] == 0.0
    assert c[0] == pytest.approx(2.0 * modes["walk"].cancelled_trip_dkk)


def test_action_costs_deploy_and_maintenance():
    cat = default_catalog()
    ledger = {}
    actions = np.array([3, 0], dtype=np.int64)  # tank in zone 0 only
    a, m = action_costs(ledger, actions, cat, 2)
    assert a[0] == cat[3].implementation_cost_dkk
    assert a[1] == 0.0
    assert m[0] == cat[3].maintenance_cost_dkk_per_year
    assert ledger[0][0].kind == 3
    assert ledger[0][0].age_years == 0
    assert ledger[0][0].effectiveness == 1.0

    # second year: nothing new deployed, tank still maintained
    a2, m2 = action_costs(ledger, np.zeros(2, dtype=np.int64), cat, 2)
    assert a2.sum() == 0.0
    assert m2[0] == cat[3].maintenance_cost_dkk_per_year


def test_action_costs_rejects_duplicate_kind():
    cat = default_catalog()
    ledger = {0: [LedgerEntry(kind=2, age_years=3, lifetime_years=30,
                              effectiveness=0.9)]}
    with pytest.raises(MaskViolation):
        action_costs(ledger, np.array([2], dtype=np.int64), cat, 1)


def test_action_costs_scripted_ledger_oracle():
    """Three-step script, maintenance follows the active set exactly."""
    cat = default_catalog()
    ledger = {}
    # step 1: zone 0 deploys Soakaway (kind 2)
    a1, m1 = action_costs(ledger, np.array([2], dtype=np.int64), cat, 1)
    # step 2: zone 0 adds GridPavers (kind 7)
    a2, m2 = action_costs(ledger, np.array([7], dtype=np.int64), cat, 1)
    # step 3: nothing
    a3, m3 = action_costs(ledger, np.array([0], dtype=np.int64), cat, 1)
    assert a1[0] == cat[2].implementation_cost_dkk
    assert a2[0] == cat[7].implementation_cost_dkk
    assert a3[0] == 0.0
    assert m1[0] == cat[2].maintenance_cost_dkk_per_year
    assert m2[0] == (cat[2].maintenance_cost_dkk_per_year
                     + cat[7].maintenance_cost_dkk_per_year)
    assert m3[0] == m2[0]
    assert sorted(e.kind for e in ledger[0]) == [2, 7]


def test_do_nothing_costs_nothing():
    cat = default_catalog()
    ledger = {}
    a, m = action_costs(ledger, np.zeros(3, dtype=np.int64), cat, 3)
    assert a.sum() == 0.0 and m.sum() == 0.0
    assert ledger == {}


def test_cost_breakdown_total_and_zeros():
    bd = CostBreakdown.zeros(3)
    assert bd.total_dkk() == 0.0
    bd.infrastructure[:] = [1.0, 2.0, 3.0]
    bd.delay[:] = 0.5
    bd.maintenance[2] = 4.0
    assert bd.total_dkk() == pytest.approx(6.0 + 1.5 + 4.0)
    per_zone = bd.per_zone_total()
    assert per_zone[2] == pytest.approx(3.0 + 0.5 + 4.0)
    assert bd.total_dkk() == pytest.approx(per_zone.sum())
