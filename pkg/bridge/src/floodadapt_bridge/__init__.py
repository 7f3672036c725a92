"""Gym-style access to the flood adaptation environment.

The core package exposes an `AdaptationEnv` with its own reset/step
signature. RL toolkits expect the conventional 5-tuple protocol instead:

    env = FloodEnv("path/to/city")
    obs = env.reset("RCP4.5", seed=123)
    obs, reward, terminated, truncated, info = env.step(actions)

This module is transport only. Every rule (action masking, cost
accounting, episode length) lives in the core; the wrapper copies arrays
out, reshapes return values, and raises the core's own exceptions
unchanged. It does not depend on any RL framework.

Observation layout, identical in content and element order to the core's
state object:

    features   (n_zones, n_features) float64, C order; columns are the
               previous step's infrastructure, delay, and cancellation
               costs followed by one effectiveness slot per deployable
               intervention kind
    mask       (n_zones, n_kinds) bool, C order; True means selectable now
    adjacency  (2, n_directed_edges) int64, C order; zone index pairs
    step_index int, 0 on reset, horizon length on the terminal observation

All three arrays are fresh copies; mutating them cannot affect the
environment.
"""

from dataclasses import dataclass

import numpy as np

import floodadapt.env as _core
from floodadapt.config import Config, load_config
from floodadapt.env import AdaptationEnv, CityBundle

__version__ = "0.1.0"

# The core observation/action/step contract this wrapper speaks.
SUPPORTED_PROTOCOL = 1


@dataclass(frozen=True)
class BridgeObservation:
    features: np.ndarray
    mask: np.ndarray
    adjacency: np.ndarray
    step_index: int


def _snapshot(state) -> BridgeObservation:
    return BridgeObservation(
        features=np.ascontiguousarray(state.features, dtype=np.float64).copy(),
        mask=np.ascontiguousarray(state.mask, dtype=bool).copy(),
        adjacency=np.ascontiguousarray(state.adjacency, dtype=np.int64).copy(),
        step_index=int(state.step_index))


class FloodEnv:
    """One handle per environment instance; not shared across threads.

    `config` may be a ready Config, a path to a YAML override file, or
    None for defaults. The climate scenario is chosen per reset, so one
    handle can serve belief/reality sweeps over the same city.
    """

    def __init__(self, city_path, config=None, scenario_dir=None):
        core_protocol = getattr(_core, "PROTOCOL_VERSION", None)
        if core_protocol != SUPPORTED_PROTOCOL:
            raise RuntimeError(
                f"core protocol {core_protocol!r} is not the supported "
                f"{SUPPORTED_PROTOCOL}; upgrade floodadapt-bridge")
        self._bundle = CityBundle.load(str(city_path))
        self._config = (config if isinstance(config, Config)
                        else load_config(config))
        if scenario_dir is not None:
            self._config.scenario_dir = str(scenario_dir)
        self._envs = {}
        self._env = None
        self.n_zones = self._bundle.n_zones
        self.n_kinds = len(self._config.catalog)
        self.horizon_steps = self._config.env.horizon_steps

    def reset(self, scenario: str, seed: int) -> BridgeObservation:
        env = self._envs.get(scenario)
        if env is None:
            env = AdaptationEnv(self._bundle, self._config, scenario)
            self._envs[scenario] = env
        self._env = env
        return _snapshot(env.reset(int(seed)))

    def step(self, actions):
        """Returns (observation, reward_dkk, terminated, truncated, info).

        info carries the core cost decomposition under "cost_breakdown".
        The horizon end is part of the decision problem, so it reports
        terminated=True; truncated is always False here.
        """
        if self._env is None:
            raise RuntimeError("step() before reset()")
        actions = np.asarray(actions, dtype=np.int64)
        state, reward, done, breakdown = self._env.step(actions)
        info = {"cost_breakdown": breakdown}
        return _snapshot(state), float(reward), bool(done), False, info
