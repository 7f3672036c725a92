"""Masked graph policy and value network.

Zone features are encoded node-wise, refined by L rounds of neighborhood
aggregation over the zone adjacency (mean over neighbors plus a self-loop by
default), and read out as per-zone action logits plus a mean-pooled scalar
value.  All parameter shapes are independent of the number of zones, so the
same checkpoint runs on any city.  Everything runs in float64 on CPU.
"""

from __future__ import annotations

import json

import numpy as np
import torch
from torch import nn

from floodadapt.config import N_KINDS, Config, ConfigError
from floodadapt.env import N_FEATURES

#: Large negative logit for masked kinds: exp() underflows to exactly 0
#: probability while keeping every tensor finite.
MASKED_LOGIT = -1.0e30

CHECKPOINT_VERSION = 1
N_IMPACT_FEATURES = 3  # leading DKK-scaled features get running normalization


class RunningNorm:
    """Per-feature running standardization (Welford accumulation, batched)."""

    def __init__(self, dim: int):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, batch):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, len(self.mean))
        n = len(batch)
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_var * n + delta * delta * (self.count * n / total)
        self.count = total

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-12))

    def normalize(self, x):
        return np.clip((x - self.mean) / self.std, -10.0, 10.0)

    def state(self):
        return {"count": np.array(self.count), "mean": self.mean, "m2": self.m2}

    def load_state(self, count, mean, m2):
        self.count = float(count)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.m2 = np.asarray(m2, dtype=np.float64)


class GraphPolicyNet(nn.Module):
    def __init__(self, n_features: int, n_kinds: int, hidden: int, layers: int):
        super().__init__()
        self.encoder = nn.Linear(n_features, hidden)
        self.rounds = nn.ModuleList(
            nn.Linear(2 * hidden, hidden) for _ in range(layers))
        self.logit_head = nn.Linear(hidden, n_kinds)
        self.value_head = nn.Linear(hidden, 1)
        self.double()

    def forward(self, feats: torch.Tensor, prop: torch.Tensor):
        """feats (..., V, F), prop (V, V) -> logits (..., V, K), value (...)."""
        h = torch.tanh(self.encoder(feats))
        for lin in self.rounds:
            agg = torch.matmul(prop, h)
            h = torch.tanh(lin(torch.cat([h, agg], dim=-1)))
        logits = self.logit_head(h)
        value = self.value_head(h.mean(dim=-2)).squeeze(-1)
        return logits, value


def propagation_matrix(adjacency, n_zones: int, aggregation: str) -> torch.Tensor:
    """Neighbor-aggregation operator from a directed zone edge list.

    "mean": row-normalized (A + I), i.e. mean over neighbors and self;
    "sum": plain A + I.
    """
    A = np.zeros((n_zones, n_zones))
    if adjacency.size:
        A[adjacency[0], adjacency[1]] = 1.0
    A = A + np.eye(n_zones)
    if aggregation == "mean":
        A = A / A.sum(axis=1, keepdims=True)
    elif aggregation != "sum":
        raise ConfigError(f"policy.aggregation: unknown mode {aggregation!r}")
    return torch.from_numpy(A)


def masked_log_probs(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Log action probabilities with masked kinds at probability exactly 0."""
    masked = torch.where(mask, logits, torch.full_like(logits, MASKED_LOGIT))
    return torch.log_softmax(masked, dim=-1)


class PolicyActor:
    """Policy network plus input normalization; the trainer's unit of state."""

    def __init__(self, config: Config, n_features: int = N_FEATURES,
                 n_kinds: int = N_KINDS):
        self.config = config
        self.n_features = n_features
        self.n_kinds = n_kinds
        self.net = GraphPolicyNet(n_features, n_kinds,
                                  config.policy.hidden, config.policy.layers)
        self.norm = RunningNorm(N_IMPACT_FEATURES)
        self._prop_cache = None

    def prop_for(self, adjacency, n_zones: int) -> torch.Tensor:
        key = (n_zones, adjacency.tobytes(), self.config.policy.aggregation)
        if self._prop_cache is None or self._prop_cache[0] != key:
            self._prop_cache = (key, propagation_matrix(
                adjacency, n_zones, self.config.policy.aggregation))
        return self._prop_cache[1]

    def prepare_features(self, features) -> np.ndarray:
        """Running-standardize the impact features, pass the rest through."""
        out = np.array(features, dtype=np.float64, copy=True)
        out[..., :N_IMPACT_FEATURES] = self.norm.normalize(
            out[..., :N_IMPACT_FEATURES])
        return out

    def forward(self, state):
        """Raw (un-masked) per-zone logits and value for one EnvState."""
        feats = torch.from_numpy(self.prepare_features(state.features))
        prop = self.prop_for(state.adjacency, len(state.features))
        with torch.no_grad():
            logits, value = self.net(feats, prop)
        return logits.numpy(), float(value)

    def act(self, state, rng: np.random.Generator, deterministic: bool = False):
        """Sample (or argmax) a joint action.

        Returns (actions int64 (V,), joint_logp float, value float).  Masked
        kinds are never selected.
        """
        feats = torch.from_numpy(self.prepare_features(state.features))
        prop = self.prop_for(state.adjacency, len(state.features))
        mask_t = torch.from_numpy(np.asarray(state.mask))
        with torch.no_grad():
            logits, value = self.net(feats, prop)
            logp = masked_log_probs(logits, mask_t)
        logp_np = logp.numpy()
        if deterministic:
            actions = np.argmax(logp_np, axis=-1).astype(np.int64)
        else:
            probs = np.exp(logp_np)
            cdf = np.cumsum(probs, axis=-1)
            u = rng.random(len(cdf))
            actions = np.empty(len(cdf), dtype=np.int64)
            for z in range(len(cdf)):
                a = int(np.searchsorted(cdf[z], u[z], side="right"))
                if a >= self.n_kinds or probs[z, a] <= 0.0:
                    a = int(np.max(np.flatnonzero(probs[z] > 0)))
                actions[z] = a
        joint_logp = float(logp_np[np.arange(len(actions)), actions].sum())
        return actions, joint_logp, float(value)

    def evaluate_actions(self, feats: torch.Tensor, masks: torch.Tensor,
                         actions: torch.Tensor, prop: torch.Tensor):
        """Differentiable joint log-probs, entropies, values for a batch.

        feats (B, V, F) already normalized; masks (B, V, K) bool; actions
        (B, V) int64.  Joint quantities sum over zones.
        """
        logits, values = self.net(feats, prop)
        logp = masked_log_probs(logits, masks)
        picked = torch.gather(logp, -1, actions.unsqueeze(-1)).squeeze(-1)
        joint_logp = picked.sum(dim=-1)
        probs = torch.exp(logp)
        ent = -(probs * torch.where(probs > 0, logp, torch.zeros_like(logp)))
        entropy = ent.sum(dim=-1).sum(dim=-1)
        return joint_logp, entropy, values

    # -- checkpointing -----------------------------------------------------

    def manifest(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "n_features": self.n_features,
            "n_kinds": self.n_kinds,
            "hidden": self.config.policy.hidden,
            "layers": self.config.policy.layers,
            "aggregation": self.config.policy.aggregation,
            "shapes": {k: list(v.shape) for k, v in self.net.state_dict().items()},
        }

    def save(self, path):
        arrays = {f"param.{k}": v.detach().numpy()
                  for k, v in self.net.state_dict().items()}
        norm = self.norm.state()
        arrays.update({f"norm.{k}": v for k, v in norm.items()})
        arrays["manifest"] = np.array(json.dumps(self.manifest(), sort_keys=True))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, config: Config) -> "PolicyActor":
        with np.load(path, allow_pickle=False) as data:
            manifest = json.loads(str(data["manifest"]))
            if manifest["format_version"] != CHECKPOINT_VERSION:
                raise ConfigError(
                    f"{path}: checkpoint format {manifest['format_version']}, "
                    f"expected {CHECKPOINT_VERSION}")
            for key, want in (("hidden", config.policy.hidden),
                              ("layers", config.policy.layers),
                              ("aggregation", config.policy.aggregation)):
                if manifest[key] != want:
                    raise ConfigError(
                        f"{path}: checkpoint has policy.{key}={manifest[key]}, "
                        f"config says {want}")
            actor = cls(config, manifest["n_features"], manifest["n_kinds"])
            state = {}
            for k, shape in manifest["shapes"].items():
                arr = data[f"param.{k}"]
                if list(arr.shape) != shape:
                    raise ConfigError(f"{path}: parameter {k} has shape "
                                      f"{list(arr.shape)}, manifest says {shape}")
                state[k] = torch.from_numpy(arr.copy())
            actor.net.load_state_dict(state)
            actor.norm.load_state(float(data["norm.count"]), data["norm.mean"],
                                  data["norm.m2"])
        return actor
