"""Clipped policy-gradient training over parallel environments, the two
reference policies, and the evaluation harness.

The loop is synchronous: N environment instances are stepped for a fixed
number of steps per iteration (auto-resetting at episode end), advantages
come from generalized advantage estimation, and the update phase runs
minibatch epochs on the clipped surrogate with an entropy bonus, stopping
early inside an update when the approximate KL divergence passes its limit.
Rewards are scaled during optimization only; every report stays in raw DKK.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from floodadapt.config import DO_NOTHING, Config, N_KINDS
from floodadapt.env import AdaptationEnv, CityBundle
from floodadapt.policy import PolicyActor


class TrainingError(RuntimeError):
    pass


def episode_seed(base_seed: int, env_index: int, episode_index: int) -> int:
    """Well-mixed deterministic per-episode seed."""
    ss = np.random.SeedSequence([int(base_seed), int(env_index), int(episode_index)])
    return int(ss.generate_state(1)[0])


class NoControlPolicy:
    """Never deploys anything."""

    def act(self, state, rng=None, deterministic=False):
        return np.zeros(len(state.features), dtype=np.int64), 0.0, 0.0


class RandomControlPolicy:
    """Uniform choice among each zone's unmasked kinds, every zone and step."""

    def act(self, state, rng: np.random.Generator, deterministic=False):
        mask = np.asarray(state.mask)
        actions = np.empty(len(mask), dtype=np.int64)
        for z in range(len(mask)):
            allowed = np.flatnonzero(mask[z])
            actions[z] = int(allowed[rng.integers(len(allowed))])
        return actions, 0.0, 0.0


BASELINES = {"NoControl": NoControlPolicy, "RandomControl": RandomControlPolicy}


@dataclass
class RolloutBatch:
    feats: np.ndarray  # (n_envs, n_steps, V, F), normalized as acted upon
    raw_impacts: np.ndarray  # (n_envs, n_steps, V, 3) for normalizer updates
    masks: np.ndarray  # bool (n_envs, n_steps, V, K)
    actions: np.ndarray  # (n_envs, n_steps, V)
    logps: np.ndarray  # (n_envs, n_steps) joint log-probs
    rewards: np.ndarray  # scaled
    dones: np.ndarray
    values: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    adjacency: np.ndarray
    episode_returns_dkk: list  # totals of episodes completed in this batch


def compute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Generalized advantage estimation over (n_envs, n_steps) arrays."""
    n_envs, n_steps = rewards.shape
    adv = np.zeros((n_envs, n_steps))
    last = np.zeros(n_envs)
    for t in range(n_steps - 1, -1, -1):
        nonterm = 1.0 - dones[:, t]
        next_v = values[:, t + 1] if t + 1 < n_steps else bootstrap
        delta = rewards[:, t] + gamma * next_v * nonterm - values[:, t]
        last = delta + gamma * lam * nonterm * last
        adv[:, t] = last
    return adv, adv + values[:, :n_steps]


class RolloutWorkers:
    """N auto-resetting environment instances with per-env seed streams."""

    def __init__(self, make_env, n_envs: int, base_seed: int):
        self.envs = [make_env() for _ in range(n_envs)]
        self.base_seed = base_seed
        self.episode_counts = [0] * n_envs
        self.obs = [env.reset(episode_seed(base_seed, i, 0))
                    for i, env in enumerate(self.envs)]
        self.episode_reward_dkk = [0.0] * n_envs
        self.completed_returns = []

    def step_env(self, i, actions):
        obs, reward, done, breakdown = self.envs[i].step(actions)
        self.episode_reward_dkk[i] += reward
        if done:
            self.completed_returns.append(self.episode_reward_dkk[i])
            self.episode_reward_dkk[i] = 0.0
            self.episode_counts[i] += 1
            obs = self.envs[i].reset(
                episode_seed(self.base_seed, i, self.episode_counts[i]))
        self.obs[i] = obs
        return reward, done


def collect_rollouts(actor: PolicyActor, workers: RolloutWorkers, n_steps: int,
                     rng: np.random.Generator, gamma: float, lam: float,
                     reward_scale: float) -> RolloutBatch:
    n_envs = len(workers.envs)
    first = workers.obs[0]
    V, F = first.features.shape
    K = first.mask.shape[1]
    feats = np.zeros((n_envs, n_steps, V, F))
    raw_impacts = np.zeros((n_envs, n_steps, V, 3))
    masks = np.zeros((n_envs, n_steps, V, K), dtype=bool)
    actions = np.zeros((n_envs, n_steps, V), dtype=np.int64)
    logps = np.zeros((n_envs, n_steps))
    rewards = np.zeros((n_envs, n_steps))
    dones = np.zeros((n_envs, n_steps))
    values = np.zeros((n_envs, n_steps))
    workers.completed_returns = []

    for t in range(n_steps):
        for i in range(n_envs):
            state = workers.obs[i]
            raw_impacts[i, t] = state.features[:, :3]
            feats[i, t] = actor.prepare_features(state.features)
            masks[i, t] = state.mask
            a, logp, v = actor.act(state, rng)
            actions[i, t] = a
            logps[i, t] = logp
            values[i, t] = v
            reward, done = workers.step_env(i, a)
            rewards[i, t] = reward / reward_scale
            dones[i, t] = float(done)

    bootstrap = np.array([actor.act(workers.obs[i], rng)[2]
                          for i in range(n_envs)])
    adv, rets = compute_gae(rewards, values, dones, bootstrap, gamma, lam)
    return RolloutBatch(
        feats=feats, raw_impacts=raw_impacts, masks=masks, actions=actions,
        logps=logps, rewards=rewards, dones=dones, values=values,
        advantages=adv, returns=rets, adjacency=first.adjacency,
        episode_returns_dkk=list(workers.completed_returns))


@dataclass
class UpdateDiagnostics:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_fraction: float = 0.0
    minibatches: int = 0
    early_stopped: bool = False


def ppo_losses(actor: PolicyActor, feats, masks, acts, old_logp, adv, rets,
               prop, clip_range: float):
    """Losses and diagnostics for one minibatch of tensors."""
    logp, entropy, values = actor.evaluate_actions(feats, masks, acts, prop)
    log_ratio = logp - old_logp
    ratio = torch.exp(log_ratio)
    approx_kl = ((ratio - 1.0) - log_ratio).mean()
    surr1 = ratio * adv
    surr2 = torch.clamp(ratio, 1.0 - clip_range, 1.0 + clip_range) * adv
    policy_loss = -torch.minimum(surr1, surr2).mean()
    value_loss = ((values - rets) ** 2).mean()
    clip_frac = ((ratio - 1.0).abs() > clip_range).double().mean()
    return policy_loss, value_loss, entropy.mean(), approx_kl, clip_frac


def ppo_update(actor: PolicyActor, optimizer, batch: RolloutBatch,
               tcfg, rng: np.random.Generator) -> UpdateDiagnostics:
    n = batch.rewards.size
    V = batch.feats.shape[2]
    feats = torch.from_numpy(batch.feats.reshape(n, V, -1))
    masks = torch.from_numpy(batch.masks.reshape(n, V, -1))
    acts = torch.from_numpy(batch.actions.reshape(n, V))
    old_logp = torch.from_numpy(batch.logps.reshape(n))
    rets = torch.from_numpy(batch.returns.reshape(n))
    adv_np = batch.advantages.reshape(n)
    adv_np = (adv_np - adv_np.mean()) / (adv_np.std() + 1e-8)
    adv = torch.from_numpy(adv_np)
    prop = actor.prop_for(batch.adjacency, V)

    diag = UpdateDiagnostics()
    sums = np.zeros(5)
    for _epoch in range(tcfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            mb = torch.from_numpy(order[start:start + tcfg.batch_size])
            p_loss, v_loss, ent, kl, clip_frac = ppo_losses(
                actor, feats[mb], masks[mb], acts[mb], old_logp[mb],
                adv[mb], rets[mb], prop, tcfg.clip_range)
            kl_value = float(kl.detach())
            if kl_value > tcfg.kl_limit:
                diag.early_stopped = True
                diag.approx_kl = kl_value
                return _finalize(diag, sums)
            loss = (p_loss + tcfg.value_coefficient * v_loss
                    - tcfg.entropy_coefficient * ent)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at minibatch {diag.minibatches}: "
                    f"policy={float(p_loss)!r} value={float(v_loss)!r}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sums += [float(p_loss.detach()), float(v_loss.detach()),
                     float(ent.detach()), kl_value, float(clip_frac)]
            diag.minibatches += 1
    return _finalize(diag, sums)


def _finalize(diag: UpdateDiagnostics, sums) -> UpdateDiagnostics:
    if diag.minibatches:
        diag.policy_loss, diag.value_loss, diag.entropy, kl, diag.clip_fraction = (
            sums / diag.minibatches)
        if not diag.early_stopped:
            diag.approx_kl = kl
    return diag


@dataclass
class TrainResult:
    updates: int
    env_steps: int
    stopped_early: bool
    best_moving_average: float
    checkpoint_path: str


def train(bundle: CityBundle, config: Config, scenario_id: str, seed: int,
          out_dir: str, max_env_steps: int | None = None,
          log_name: str = "train_log.csv",
          checkpoint_name: str = "checkpoint.npz",
          resume: bool = False) -> TrainResult:
    """Full training run; writes checkpoints, a per-update log and run state.

    With resume=True an existing checkpoint plus state file in out_dir is
    picked up and the env-step counter continues toward the limit.  Fresh
    optimizer moments are used on resume; only parameters, normalizer stats
    and counters carry over.
    """
    tcfg = config.trainer
    limit = max_env_steps if max_env_steps is not None else tcfg.max_env_steps
    os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(seed)

    log_path = os.path.join(out_dir, log_name)
    ckpt_path = os.path.join(out_dir, checkpoint_name)
    state_path = os.path.join(out_dir, "train_state.json")
    env_steps = 0
    update = 0
    resuming = resume and os.path.exists(ckpt_path) and os.path.exists(state_path)
    if resuming:
        actor = PolicyActor.load(ckpt_path, config)
        with open(state_path) as fh:
            state = json.load(fh)
        env_steps = int(state["env_steps"])
        update = int(state["updates"])
    else:
        actor = PolicyActor(config)
    optimizer = torch.optim.Adam(actor.net.parameters(), lr=tcfg.learning_rate)
    rng_act = np.random.default_rng(np.random.SeedSequence([seed, 0xAC, update]))
    rng_perm = np.random.default_rng(np.random.SeedSequence([seed, 0x9E, update]))
    workers = RolloutWorkers(lambda: AdaptationEnv(bundle, config, scenario_id),
                             tcfg.parallel_envs, base_seed=seed)

    recent_returns = []  # completed-episode totals, raw DKK
    best_ma = -np.inf
    last_improved = update
    stopped_early = False

    def save_state():
        with open(state_path, "w") as fh:
            json.dump({"env_steps": env_steps, "updates": update,
                       "seed": seed, "scenario": scenario_id}, fh)

    with open(log_path, "a" if resuming else "w", newline="") as log_file:
        log = csv.writer(log_file)
        if not resuming:
            log.writerow(["update", "env_steps", "episodes_done",
                          "return_ma10_dkk", "policy_loss", "value_loss",
                          "entropy", "approx_kl", "clip_fraction",
                          "minibatches", "kl_early_stop"])
        while env_steps < limit:
            n_steps = min(tcfg.rollout_steps,
                          max(1, (limit - env_steps) // tcfg.parallel_envs))
            batch = collect_rollouts(actor, workers, n_steps, rng_act,
                                     tcfg.gamma, tcfg.gae_lambda,
                                     tcfg.reward_scale_dkk)
            env_steps += batch.rewards.size
            try:
                diag = ppo_update(actor, optimizer, batch, tcfg, rng_perm)
            except TrainingError:
                actor.save(os.path.join(out_dir, "checkpoint_aborted.npz"))
                raise
            actor.norm.update(batch.raw_impacts.reshape(-1, 3))
            update += 1

            recent_returns.extend(batch.episode_returns_dkk)
            ma = (float(np.mean(recent_returns[-10:]))
                  if recent_returns else float("nan"))
            if recent_returns and (
                    ma > best_ma + tcfg.plateau_tolerance * abs(best_ma)
                    or not np.isfinite(best_ma)):
                best_ma = ma
                last_improved = update
            log.writerow([update, env_steps, len(recent_returns),
                          f"{ma:.6g}", f"{diag.policy_loss:.6g}",
                          f"{diag.value_loss:.6g}", f"{diag.entropy:.6g}",
                          f"{diag.approx_kl:.6g}", f"{diag.clip_fraction:.6g}",
                          diag.minibatches, int(diag.early_stopped)])
            log_file.flush()
            if update % tcfg.checkpoint_every_updates == 0 or env_steps >= limit:
                actor.save(ckpt_path)
                save_state()
            if update - last_improved >= tcfg.patience_updates:
                stopped_early = True
                break
    actor.save(ckpt_path)
    save_state()
    return TrainResult(updates=update, env_steps=env_steps,
                       stopped_early=stopped_early, best_moving_average=best_ma,
                       checkpoint_path=ckpt_path)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EpisodeResult:
    seed: int
    total_reward_dkk: float
    components_dkk: np.ndarray  # cumulative (I, D, C, A, M) city totals
    steps: int
    trace: list = field(default_factory=list)  # per-step rows, see evaluate()
    pathway: np.ndarray | None = None  # (T, V) action ids


def evaluate(policy, env: AdaptationEnv, n_episodes: int, base_seed: int,
             deterministic: bool = True, keep_traces: bool = False):
    """Roll full episodes; returns a list of EpisodeResult.

    `policy` needs an act(state, rng, deterministic) -> (actions, logp, value)
    method; the trained actor and both reference policies qualify.  Episode
    seeds derive from base_seed; the action rng stream is separate so that
    stochastic policies stay reproducible.
    """
    results = []
    for ep in range(n_episodes):
        seed = episode_seed(base_seed, 0, ep)
        rng = np.random.default_rng(np.random.SeedSequence([base_seed, 7, ep]))
        state = env.reset(seed)
        total = 0.0
        comps = np.zeros(5)
        pathway = np.zeros((env.horizon_steps, env.n_zones), dtype=np.int64)
        trace = []
        done = False
        t = 0
        while not done:
            actions, _, _ = policy.act(state, rng, deterministic=deterministic)
            state, reward, done, bd = env.step(actions)
            pathway[t] = actions
            step_comps = np.array([bd.infrastructure.sum(), bd.delay.sum(),
                                   bd.cancellation.sum(), bd.action.sum(),
                                   bd.maintenance.sum()])
            comps += step_comps
            total += reward
            if keep_traces:
                trace.append((t, actions.copy(), bd, reward))
            t += 1
        results.append(EpisodeResult(seed=seed, total_reward_dkk=total,
                                     components_dkk=comps, steps=t,
                                     trace=trace, pathway=pathway))
    return results


def summarize(results) -> dict:
    totals = np.array([r.total_reward_dkk for r in results])
    comps = np.stack([r.components_dkk for r in results])
    return {
        "n": len(results),
        "mean_total_dkk": float(totals.mean()),
        "std_total_dkk": float(totals.std(ddof=1)) if len(totals) > 1 else 0.0,
        "mean_components_dkk": comps.mean(axis=0),
        "std_components_dkk": (comps.std(axis=0, ddof=1)
                               if len(results) > 1 else np.zeros(5)),
    }


def run_baseline(kind: str, env: AdaptationEnv, seed: int, n_episodes: int = 1):
    """Roll the named reference policy; full episode traces are kept."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; "
                         f"valid: {', '.join(sorted(BASELINES))}")
    policy = BASELINES[kind]()
    return evaluate(policy, env, n_episodes, seed, deterministic=False,
                    keep_traces=True)


def cross_scenario_eval(checkpoints: dict, bundle: CityBundle, config: Config,
                        realities, n_seeds: int, base_seed: int,
                        deterministic: bool = True):
    """belief x reality matrix of mean +- std total rewards over n_seeds.

    `checkpoints` maps belief scenario id -> checkpoint path (or None for a
    missing cell: the cell is reported absent and the run continues).
    """
    matrix = {}
    for belief, ckpt in checkpoints.items():
        for reality in realities:
            if ckpt is None or not os.path.exists(str(ckpt)):
                matrix[(belief, reality)] = None
                continue
            actor = PolicyActor.load(ckpt, config)
            env = AdaptationEnv(bundle, config, reality)
            results = evaluate(actor, env, n_seeds, base_seed,
                               deterministic=deterministic)
            matrix[(belief, reality)] = summarize(results)
    return matrix
