"""Scenario-conditioned rainfall: quantile tables and event sampling.

Each climate scenario carries one daily-rainfall quantile table per time
slice; slices partition the planning horizon.  Sampling is inverse-transform:
draw u ~ U[0,1] and evaluate the piecewise-linear inverse CDF of the slice
containing the step's calendar year.  No cross-slice blending: the
distribution is a step function of time at slice boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from floodadapt.config import ConfigError

SCENARIOS = ("RCP2.6", "RCP4.5", "RCP8.5")


@dataclass(frozen=True)
class RainfallEvent:
    step_index: int
    year: int
    depth_mm: float


class ScenarioStats:
    """Validated quantile tables for one scenario.

    `slices` is a list of (year_lo, year_hi, probs, depths) with probs/depths
    as float64 arrays.  Probabilities must rise strictly from 0 to 1 and
    depths must be non-decreasing and non-negative.
    """

    def __init__(self, scenario_id, slices, horizon=(2024, 2100)):
        if not scenario_id or not str(scenario_id).strip():
            raise ConfigError("scenario id must be a non-empty string")
        self.scenario_id = str(scenario_id)
        self.slices = []
        for y_lo, y_hi, probs, depths in slices:
            probs = np.asarray(probs, dtype=np.float64)
            depths = np.asarray(depths, dtype=np.float64)
            if probs.ndim != 1 or probs.shape != depths.shape or len(probs) < 2:
                raise ConfigError(f"{scenario_id}: malformed quantile table")
            if probs[0] != 0.0 or probs[-1] != 1.0:
                raise ConfigError(f"{scenario_id}: probabilities must span [0, 1]")
            if not np.all(np.diff(probs) > 0):
                raise ConfigError(f"{scenario_id}: probabilities must increase strictly")
            if not np.all(np.diff(depths) >= 0) or depths[0] < 0:
                raise ConfigError(f"{scenario_id}: depths must be non-negative "
                                  "and non-decreasing")
            if y_hi < y_lo:
                raise ConfigError(f"{scenario_id}: slice years reversed")
            self.slices.append((int(y_lo), int(y_hi), probs, depths))
        self.slices.sort(key=lambda s: s[0])
        lo, hi = horizon
        cursor = lo
        for y_lo, y_hi, _, _ in self.slices:
            if y_lo != cursor:
                raise ConfigError(
                    f"{scenario_id}: time slices leave a gap or overlap at {cursor}")
            cursor = y_hi + 1
        if cursor != hi + 1:
            raise ConfigError(f"{scenario_id}: time slices stop at {cursor - 1}, "
                              f"horizon ends {hi}")
        self.horizon = (lo, hi)

    def slice_for(self, year):
        for y_lo, y_hi, probs, depths in self.slices:
            if y_lo <= year <= y_hi:
                return probs, depths
        raise ConfigError(f"{self.scenario_id}: year {year} outside all time slices")


def build_cdf(stats: ScenarioStats, year: int):
    """Inverse CDF (probability -> rainfall mm) for the slice holding `year`."""
    probs, depths = stats.slice_for(year)

    def inverse_cdf(p):
        return np.interp(p, probs, depths)

    return inverse_cdf

def sample_event(stats: ScenarioStats, step_index: int, rng: np.random.Generator,
                 horizon_start: int = 2024) -> RainfallEvent:
    """Draw the step's daily rainfall via inverse-transform sampling."""
    year = horizon_start + step_index
    inv = build_cdf(stats, year)
    u = rng.random()
    return RainfallEvent(step_index=step_index, year=year, depth_mm=float(inv(u)))


# ---------------------------------------------------------------------------
# scenario file format: one file per scenario, "key value" lines
#
#   scenario RCP4.5
#   slice 2024 2060
#   q 0.0 0.0
#   q 0.6 3.0
#   ...
#   slice 2061 2100
#   q 0.0 0.0
#   ...

def read_scenario_file(path, horizon=(2024, 2100)) -> ScenarioStats:
    scenario_id = None
    slices = []
    cur = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            where = f"{path}:{lineno}"
            if parts[0] == "scenario" and len(parts) == 2:
                scenario_id = parts[1]
            elif parts[0] == "slice" and len(parts) == 3:
                cur = (int(parts[1]), int(parts[2]), [], [])
                slices.append(cur)
            elif parts[0] == "q" and len(parts) == 3:
                if cur is None:
                    raise ConfigError(f"{where}: q row before any slice")
                cur[2].append(float(parts[1]))
                cur[3].append(float(parts[2]))
            else:
                raise ConfigError(f"{where}: unrecognized line {line!r}")
    if scenario_id is None:
        raise ConfigError(f"{path}: missing 'scenario' line")
    return ScenarioStats(scenario_id, slices, horizon)


def write_scenario_file(path, stats: ScenarioStats):
    with open(path, "w") as fh:
        fh.write(f"scenario {stats.scenario_id}\n")
        for y_lo, y_hi, probs, depths in stats.slices:
            fh.write(f"slice {y_lo} {y_hi}\n")
            for p, d in zip(probs, depths):
                fh.write(f"q {p:.6g} {d:.6g}\n")


# Built-in synthetic scenario statistics.  Shapes follow projected Danish
# daily extremes qualitatively (mostly small wet days, heavy upper tail that
# widens with forcing and over time); magnitudes are synthetic.
_BUILTIN = {
    "RCP2.6": [
        (2024, 2060, [0, 0.6, 0.9, 0.97, 0.995, 1], [0, 2, 12, 30, 55, 85]),
        (2061, 2100, [0, 0.6, 0.9, 0.97, 0.995, 1], [0, 2, 13, 33, 60, 92]),
    ],
    "RCP4.5": [
        (2024, 2060, [0, 0.6, 0.9, 0.97, 0.995, 1], [0, 3, 15, 38, 70, 110]),
        (2061, 2100, [0, 0.6, 0.9, 0.97, 0.995, 1], [0, 3, 17, 43, 80, 125]),
    ],
    "RCP8.5": [
        (2024, 2060, [0, 0.6, 0.9, 0.97, 0.995, 1], [0, 4, 18, 48, 90, 140]),
        (2061, 2100, [0, 0.6, 0.9, 0.97, 0.995, 1], [0, 5, 22, 58, 110, 170]),
    ],
}


def builtin_stats(scenario_id, horizon=(2024, 2100)) -> ScenarioStats:
    if scenario_id not in _BUILTIN:
        raise ConfigError(
            f"unknown scenario {scenario_id!r}; valid: {', '.join(SCENARIOS)}")
    lo, hi = horizon
    raw = _BUILTIN[scenario_id]
    picked = [[max(y_lo, lo), min(y_hi, hi), probs, depths]
              for y_lo, y_hi, probs, depths in raw if max(y_lo, lo) <= min(y_hi, hi)]
    if not picked:  # horizon beyond the tabulated years: reuse the nearest table
        nearest = raw[0] if hi < raw[0][0] else raw[-1]
        picked = [[lo, hi, nearest[2], nearest[3]]]
    picked[0][0] = lo  # stretch the ends so the slices cover the horizon
    picked[-1][1] = hi
    return ScenarioStats(scenario_id, [tuple(p) for p in picked], horizon)


def load_stats(scenario_id, scenario_dir=None, horizon=(2024, 2100)) -> ScenarioStats:
    """Scenario stats from a directory of files, or the built-ins."""
    if scenario_dir is None:
        return builtin_stats(scenario_id, horizon)
    import os
    path = os.path.join(scenario_dir, f"{scenario_id}.scenario")
    if not os.path.exists(path):
        if scenario_id in _BUILTIN:
            return builtin_stats(scenario_id, horizon)
        raise ConfigError(f"no scenario file {path}")
    stats = read_scenario_file(path, horizon)
    if stats.scenario_id != scenario_id:
        raise ConfigError(f"{path}: file declares {stats.scenario_id}, "
                          f"expected {scenario_id}")
    return stats
