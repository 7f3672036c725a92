"""Run configuration: defaults, YAML overrides, validation.

Everything tunable lives here as plain dataclasses so a run is fully
described by one YAML file (any subset of keys; the rest fall back to the
defaults below).  Cost and catalog numbers are literature-informed defaults,
they are inputs to the model, never ground truth.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

MODES = ("drive", "cycle", "walk")

#: Intervention kinds in fixed order; index 0 is the no-op and the mask
#: always allows it.  The order defines action ids and the z-vector layout.
KINDS = (
    "DoNothing",
    "BioretentionPlanters",
    "Soakaway",
    "StorageTank",
    "PorousAsphalt",
    "PerviousConcrete",
    "PermeablePavers",
    "GridPavers",
)
N_KINDS = len(KINDS)
DO_NOTHING = 0


@dataclass
class ModeParams:
    cutoff_m: float  # water depth at which the mode becomes impassable
    vot_dkk_per_hour: float  # value of time for delay costs
    cancelled_trip_dkk: float  # flat cost of an abandoned trip


@dataclass
class InterventionSpec:
    name: str
    capacity_m3: float
    lifetime_years: int
    implementation_cost_dkk: float
    maintenance_cost_dkk_per_year: float
    requires: str = "none"  # "none" | "green" | "paved"

    def __post_init__(self):
        if self.capacity_m3 < 0:
            raise ConfigError(f"catalog {self.name}: capacity_m3 < 0")
        if self.name != "DoNothing" and self.lifetime_years < 1:
            raise ConfigError(f"catalog {self.name}: lifetime_years < 1")
        if self.requires not in ("none", "green", "paved"):
            raise ConfigError(f"catalog {self.name}: unknown requires={self.requires!r}")


@dataclass
class FloodConfig:
    open_boundary: bool = True  # closed-basin mode (False) exists for tests
    element_depth: str = "max"  # or "mean": depth sampled along an edge


@dataclass
class ValuationConfig:
    # depth (m) -> damaged fraction of reconstruction cost, clamped to [0, 1]
    damage_knots: list = field(default_factory=lambda: [
        [0.0, 0.0], [0.05, 0.05], [0.3, 0.35], [0.5, 0.55], [1.0, 0.85], [2.0, 1.0],
    ])
    annualization: float = 1.0  # one sampled event stands for the whole year
    eur_per_dkk: float = 0.134  # display only


@dataclass
class EnvConfig:
    horizon_start: int = 2024
    horizon_end: int = 2100
    decay: str = "linear"  # or "exponential"
    decay_half_life_years: float = 10.0  # used by the exponential schedule
    min_green_share: float = 0.05  # applicability thresholds
    min_paved_share: float = 0.05

    @property
    def horizon_steps(self) -> int:
        return self.horizon_end - self.horizon_start + 1


@dataclass
class PolicyConfig:
    hidden: int = 64
    layers: int = 2  # message-passing rounds (L)
    aggregation: str = "mean"  # or "sum"


@dataclass
class TrainerConfig:
    batch_size: int = 64
    rollout_steps: int = 1024  # per environment, per update
    epochs_per_update: int = 10
    entropy_coefficient: float = 0.01
    kl_limit: float = 0.2
    clip_range: float = 0.2
    learning_rate: float = 3e-4
    value_coefficient: float = 0.5
    parallel_envs: int = 10
    max_env_steps: int = 4_500_000
    gamma: float = 1.0
    gae_lambda: float = 0.95
    reward_scale_dkk: float = 1e6  # training-only divisor; reports stay raw
    patience_updates: int = 50  # plateau window for early stopping
    plateau_tolerance: float = 0.005  # fractional improvement that resets it
    checkpoint_every_updates: int = 10

    def validate(self):
        for f in dataclasses.fields(self):
            if float(getattr(self, f.name)) <= 0 and f.name != "gamma":
                raise ConfigError(f"trainer.{f.name} must be positive")
        if self.gamma <= 0 or self.gamma > 1:
            raise ConfigError("trainer.gamma must be in (0, 1]")
        total = self.rollout_steps * self.parallel_envs
        if total % self.batch_size != 0:
            raise ConfigError(
                "trainer.rollout_steps * parallel_envs must be divisible by batch_size"
            )


def default_catalog() -> list:
    """Shipped intervention catalog (capacities in m3, costs in DKK)."""
    return [
        InterventionSpec("DoNothing", 0.0, 0, 0.0, 0.0, "none"),
        InterventionSpec("BioretentionPlanters", 3000.0, 25, 2.5e6, 5.0e4, "green"),
        InterventionSpec("Soakaway", 2000.0, 30, 1.8e6, 3.6e4, "green"),
        InterventionSpec("StorageTank", 8000.0, 50, 9.0e6, 9.0e4, "none"),
        InterventionSpec("PorousAsphalt", 5000.0, 15, 5.0e6, 1.0e5, "paved"),
        InterventionSpec("PerviousConcrete", 4000.0, 20, 4.5e6, 9.0e4, "paved"),
        InterventionSpec("PermeablePavers", 3000.0, 20, 3.0e6, 6.0e4, "paved"),
        InterventionSpec("GridPavers", 1500.0, 12, 1.2e6, 2.4e4, "paved"),
    ]


def default_modes() -> dict:
    return {
        "drive": ModeParams(cutoff_m=0.30, vot_dkk_per_hour=147.0, cancelled_trip_dkk=320.0),
        "cycle": ModeParams(cutoff_m=0.20, vot_dkk_per_hour=105.0, cancelled_trip_dkk=200.0),
        "walk": ModeParams(cutoff_m=0.40, vot_dkk_per_hour=91.0, cancelled_trip_dkk=150.0),
    }


@dataclass
class Config:
    flood: FloodConfig = field(default_factory=FloodConfig)
    valuation: ValuationConfig = field(default_factory=ValuationConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    modes: dict = field(default_factory=default_modes)
    catalog: list = field(default_factory=default_catalog)
    scenario_dir: str | None = None  # directory of *.scenario files; None = built-ins

    def validate(self):
        self.trainer.validate()
        if self.env.horizon_end <= self.env.horizon_start:
            raise ConfigError("env.horizon_end must exceed env.horizon_start")
        if self.env.decay not in ("linear", "exponential"):
            raise ConfigError(f"env.decay: unknown schedule {self.env.decay!r}")
        if self.flood.element_depth not in ("max", "mean"):
            raise ConfigError(f"flood.element_depth: {self.flood.element_depth!r}")
        if [s.name for s in self.catalog] != list(KINDS):
            raise ConfigError("catalog must list all 8 kinds in canonical order")
        if self.catalog[DO_NOTHING].capacity_m3 != 0 or \
                self.catalog[DO_NOTHING].implementation_cost_dkk != 0 or \
                self.catalog[DO_NOTHING].maintenance_cost_dkk_per_year != 0:
            raise ConfigError("DoNothing must have zero capacity and zero costs")
        knots = self.valuation.damage_knots
        for a, b in zip(knots, knots[1:]):
            if b[0] <= a[0] or b[1] < a[1]:
                raise ConfigError("valuation.damage_knots must increase in depth "
                                  "and be non-decreasing in fraction")
        if not (0 <= knots[0][1] and knots[-1][1] <= 1):
            raise ConfigError("valuation.damage_knots fractions must lie in [0, 1]")
        for m in MODES:
            if m not in self.modes:
                raise ConfigError(f"modes.{m} missing")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce_number(key: str, default, val):
    """YAML 1.1 reads exponents like 1e8 as strings; accept them anyway."""
    if isinstance(default, bool) or isinstance(val, (bool, dict, list)):
        return val
    if isinstance(default, float) and isinstance(val, (int, str)):
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {val!r}") from None
    if isinstance(default, int) and isinstance(val, str):
        try:
            return int(val)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {val!r}") from None
    return val


def _merge(dst: dict, src: dict, path=""):
    for key, val in src.items():
        if key not in dst:
            raise ConfigError(f"unknown config key: {path}{key}")
        if isinstance(dst[key], dict) and isinstance(val, dict):
            _merge(dst[key], val, f"{path}{key}.")
        else:
            dst[key] = _coerce_number(f"{path}{key}", dst[key], val)


def load_config(path: str | None = None) -> Config:
    """Build a Config from defaults, overridden by a YAML file if given."""
    base = Config().to_dict()
    if path is not None:
        with open(path) as fh:
            overrides = yaml.safe_load(fh) or {}
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(base, overrides)
    cfg = Config(
        flood=FloodConfig(**base["flood"]),
        valuation=ValuationConfig(**base["valuation"]),
        env=EnvConfig(**base["env"]),
        policy=PolicyConfig(**base["policy"]),
        trainer=TrainerConfig(**base["trainer"]),
        modes={m: ModeParams(**p) for m, p in base["modes"].items()},
        catalog=[InterventionSpec(**s) for s in base["catalog"]],
        scenario_dir=base["scenario_dir"],
    )
    return cfg.validate()


class ConfigError(ValueError):
    """A configuration value failed validation; the message names the field."""
