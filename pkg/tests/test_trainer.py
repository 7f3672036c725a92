"""Advantage estimation, PPO update mechanics, evaluation plumbing."""

import csv
import json

import numpy as np
import pytest
import torch

from floodadapt.config import Config, N_KINDS
from floodadapt.env import AdaptationEnv, EnvState, N_FEATURES
from floodadapt.policy import PolicyActor
from floodadapt.trainer import (
    NoControlPolicy,
    RandomControlPolicy,
    RolloutWorkers,
    collect_rollouts,
    compute_gae,
    episode_seed,
    evaluate,
    ppo_losses,
    ppo_update,
    run_baseline,
    summarize,
    train,
)


def _short_cfg(horizon_end=2026):
    cfg = Config()
    cfg.env.horizon_end = horizon_end
    cfg.trainer.parallel_envs = 2
    cfg.trainer.rollout_steps = 8
    cfg.trainer.batch_size = 4
    cfg.trainer.epochs_per_update = 2
    cfg.trainer.checkpoint_every_updates = 1
    cfg.trainer.reward_scale_dkk = 1e8
    return cfg


# -- generalized advantage estimation ---------------------------------------


def test_gae_single_step_closed_form():
    r, v, b, gamma, lam = 2.0, 0.5, 1.5, 0.9, 0.8
    adv, ret = compute_gae(np.array([[r]]), np.array([[v]]),
                           np.array([[0.0]]), np.array([b]), gamma, lam)
    assert adv[0, 0] == pytest.approx(r + gamma * b - v)
    assert ret[0, 0] == pytest.approx(adv[0, 0] + v)


def test_gae_two_step_closed_form():
    gamma, lam = 0.95, 0.9
    rewards = np.array([[1.0, 2.0]])
    values = np.array([[0.3, 0.7]])
    dones = np.zeros((1, 2))
    bootstrap = np.array([0.4])
    d1 = 2.0 + gamma * 0.4 - 0.7
    d0 = 1.0 + gamma * 0.7 - 0.3
    adv, _ = compute_gae(rewards, values, dones, bootstrap, gamma, lam)
    assert adv[0, 1] == pytest.approx(d1)
    assert adv[0, 0] == pytest.approx(d0 + gamma * lam * d1)


def test_gae_terminal_cuts_propagation():
    gamma, lam = 0.99, 0.95
    rewards = np.array([[1.0, 5.0, 1.0]])
    values = np.array([[0.2, 0.4, 0.6]])
    dones = np.array([[0.0, 1.0, 0.0]])  # episode boundary after step 1
    bootstrap = np.array([9.0])
    adv, _ = compute_gae(rewards, values, dones, bootstrap, gamma, lam)
    assert adv[0, 1] == pytest.approx(5.0 - 0.4)  # no value beyond the end
    d2 = 1.0 + gamma * 9.0 - 0.6
    assert adv[0, 2] == pytest.approx(d2)
    d0 = 1.0 + gamma * 0.4 - 0.2
    assert adv[0, 0] == pytest.approx(d0 + gamma * lam * adv[0, 1])


def test_gae_multi_env_rows_independent():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=(3, 5))
    values = rng.normal(size=(3, 5))
    dones = np.zeros((3, 5))
    bootstrap = rng.normal(size=3)
    adv_all, _ = compute_gae(rewards, values, dones, bootstrap, 0.97, 0.9)
    for i in range(3):
        adv_one, _ = compute_gae(rewards[i:i + 1], values[i:i + 1],
                                 dones[i:i + 1], bootstrap[i:i + 1], 0.97, 0.9)
        assert np.allclose(adv_all[i], adv_one[0])


# -- PPO loss properties -----------------------------------------------------


def _toy_batch(actor, rng, n=6, n_zones=3):
    feats = rng.normal(size=(n, n_zones, N_FEATURES))
    masks = np.ones((n, n_zones, N_KINDS), dtype=bool)
    src = np.arange(n_zones)
    adjacency = np.stack([src, (src + 1) % n_zones]).astype(np.int64)
    prop = actor.prop_for(adjacency, n_zones)
    feats_t = torch.from_numpy(feats)
    masks_t = torch.from_numpy(masks)
    acts = torch.from_numpy(rng.integers(0, N_KINDS, size=(n, n_zones)))
    with torch.no_grad():
        old_logp, _, _ = actor.evaluate_actions(feats_t, masks_t, acts, prop)
    adv = torch.from_numpy(rng.normal(size=n))
    rets = torch.from_numpy(rng.normal(size=n))
    return feats_t, masks_t, acts, old_logp, adv, rets, prop


def test_on_policy_losses_are_identities(rng):
    torch.manual_seed(0)
    actor = PolicyActor(Config())
    feats, masks, acts, old_logp, adv, rets, prop = _toy_batch(actor, rng)
    p_loss, v_loss, ent, kl, clip_frac = ppo_losses(
        actor, feats, masks, acts, old_logp, adv, rets, prop, 0.2)
    assert float(kl.detach()) == pytest.approx(0.0, abs=1e-12)
    assert float(clip_frac) == 0.0
    assert float(p_loss.detach()) == pytest.approx(-float(adv.mean()), rel=1e-12)


def test_identity_update_matches_vanilla_policy_gradient(rng):
    """With unchanged parameters the clipped surrogate has exactly the
    plain policy-gradient derivative."""
    torch.manual_seed(1)
    actor = PolicyActor(Config())
    feats, masks, acts, old_logp, adv, rets, prop = _toy_batch(actor, rng)

    p_loss, *_ = ppo_losses(actor, feats, masks, acts, old_logp, adv, rets,
                            prop, 0.2)
    grads_clipped = torch.autograd.grad(p_loss, list(actor.net.parameters()),
                                        allow_unused=True)

    logp, _, _ = actor.evaluate_actions(feats, masks, acts, prop)
    vanilla = -(logp * adv).mean()
    grads_vanilla = torch.autograd.grad(vanilla, list(actor.net.parameters()),
                                        allow_unused=True)

    for gc, gv in zip(grads_clipped, grads_vanilla):
        if gc is None and gv is None:
            continue
        denom = max(float(gv.abs().max()), 1e-12)
        assert float((gc - gv).abs().max()) / denom <= 1e-8


def test_entropy_bonus_scales_linearly(rng):
    torch.manual_seed(2)
    actor = PolicyActor(Config())
    feats, masks, acts, old_logp, adv, rets, prop = _toy_batch(actor, rng)
    _, _, ent, _, _ = ppo_losses(actor, feats, masks, acts, old_logp, adv,
                                 rets, prop, 0.2)
    params = list(actor.net.parameters())
    g1 = torch.autograd.grad(1.0 * ent, params, retain_graph=True,
                             allow_unused=True)
    g3 = torch.autograd.grad(3.0 * ent, params, allow_unused=True)
    for a, b in zip(g1, g3):
        if a is None:
            continue
        assert torch.allclose(3.0 * a, b)


class _Batch:
    """Minimal stand-in for RolloutBatch in update-mechanics tests."""

    def __init__(self, rng, n_envs=2, n_steps=8, n_zones=3):
        self.feats = rng.normal(size=(n_envs, n_steps, n_zones, N_FEATURES))
        self.raw_impacts = np.abs(rng.normal(size=(n_envs, n_steps, n_zones, 3)))
        self.masks = np.ones((n_envs, n_steps, n_zones, N_KINDS), dtype=bool)
        self.actions = rng.integers(0, N_KINDS, size=(n_envs, n_steps, n_zones))
        self.rewards = rng.normal(size=(n_envs, n_steps))
        self.dones = np.zeros((n_envs, n_steps))
        self.values = rng.normal(size=(n_envs, n_steps))
        self.advantages = rng.normal(size=(n_envs, n_steps))
        self.returns = rng.normal(size=(n_envs, n_steps))
        src = np.arange(n_zones)
        self.adjacency = np.stack([src, (src + 1) % n_zones]).astype(np.int64)
        self.episode_returns_dkk = []


def _on_policy_logps(actor, batch):
    n = batch.rewards.size
    V = batch.feats.shape[2]
    feats = torch.from_numpy(batch.feats.reshape(n, V, -1))
    masks = torch.from_numpy(batch.masks.reshape(n, V, -1))
    acts = torch.from_numpy(batch.actions.reshape(n, V))
    prop = actor.prop_for(batch.adjacency, V)
    with torch.no_grad():
        logp, _, _ = actor.evaluate_actions(feats, masks, acts, prop)
    return logp.numpy().reshape(batch.rewards.shape)


def test_kl_early_stop_happens_before_any_step(rng):
    torch.manual_seed(3)
    cfg = _short_cfg()
    cfg.trainer.kl_limit = 1e-300  # any positive drift trips it
    actor = PolicyActor(cfg)
    batch = _Batch(rng)
    batch.logps = _on_policy_logps(actor, batch) - 0.05  # pretend drift
    before = [p.detach().clone() for p in actor.net.parameters()]
    optimizer = torch.optim.Adam(actor.net.parameters(), lr=1e-2)
    diag = ppo_update(actor, optimizer, batch, cfg.trainer,
                      np.random.default_rng(0))
    assert diag.early_stopped
    assert diag.minibatches == 0
    for p, b in zip(actor.net.parameters(), before):
        assert torch.equal(p, b)  # stopped before the offending step


def test_ppo_update_runs_all_minibatches_when_kl_small(rng):
    torch.manual_seed(4)
    cfg = _short_cfg()
    actor = PolicyActor(cfg)
    batch = _Batch(rng)
    batch.logps = _on_policy_logps(actor, batch)
    optimizer = torch.optim.Adam(actor.net.parameters(), lr=1e-4)
    diag = ppo_update(actor, optimizer, batch, cfg.trainer,
                      np.random.default_rng(1))
    n_mb = (batch.rewards.size // cfg.trainer.batch_size
            * cfg.trainer.epochs_per_update)
    assert not diag.early_stopped
    assert diag.minibatches == n_mb
    assert np.isfinite(diag.policy_loss) and np.isfinite(diag.value_loss)


def test_fixed_seed_reproduces_update_diagnostics(rng):
    results = []
    for _ in range(2):
        torch.manual_seed(7)
        cfg = _short_cfg()
        actor = PolicyActor(cfg)
        batch_rng = np.random.default_rng(11)
        batch = _Batch(batch_rng)
        batch.logps = _on_policy_logps(actor, batch)
        optimizer = torch.optim.Adam(actor.net.parameters(),
                                     lr=cfg.trainer.learning_rate)
        diag = ppo_update(actor, optimizer, batch, cfg.trainer,
                          np.random.default_rng(5))
        results.append((diag.policy_loss, diag.value_loss, diag.entropy,
                        diag.approx_kl, diag.clip_fraction))
    assert results[0] == results[1]


# -- reference policies ------------------------------------------------------


def test_no_control_never_acts(toy_bundle):
    env = AdaptationEnv(toy_bundle, _short_cfg(2030), "RCP4.5")
    results = run_baseline("NoControl", env, seed=3)
    r = results[0]
    assert np.all(r.pathway == 0)
    assert r.components_dkk[3] == 0.0  # no deployments
    assert r.components_dkk[4] == 0.0  # nothing to maintain


def test_random_control_uniform_over_allowed():
    rng = np.random.default_rng(0)
    n_zones = 2
    mask = np.ones((n_zones, N_KINDS), dtype=bool)
    mask[1, 2:] = False  # zone 1 only kinds 0 and 1
    state = EnvState(features=np.zeros((n_zones, N_FEATURES)), mask=mask,
                     adjacency=np.zeros((2, 0), dtype=np.int64), step_index=0)
    policy = RandomControlPolicy()
    n = 10_000
    counts = np.zeros((n_zones, N_KINDS))
    for _ in range(n):
        actions, _, _ = policy.act(state, rng)
        for z, a in enumerate(actions):
            counts[z, a] += 1
    freq = counts / n
    assert np.abs(freq[0] - 1.0 / N_KINDS).max() < 0.02
    assert np.abs(freq[1, :2] - 0.5).max() < 0.02
    assert counts[1, 2:].sum() == 0


def test_run_baseline_rejects_unknown_kind(toy_bundle):
    env = AdaptationEnv(toy_bundle, _short_cfg(), "RCP4.5")
    with pytest.raises(ValueError, match="NoControl, RandomControl"):
        run_baseline("DoAllTheThings", env, seed=0)


def test_episode_seed_is_stable_and_distinct():
    seen = set()
    for env_i in range(4):
        for ep in range(6):
            s = episode_seed(123, env_i, ep)
            assert s == episode_seed(123, env_i, ep)
            seen.add(s)
    assert len(seen) == 24


# -- rollout collection ------------------------------------------------------


def test_rollouts_auto_reset_and_record_returns(toy_bundle):
    cfg = _short_cfg(2026)  # 3-step episodes
    torch.manual_seed(8)
    actor = PolicyActor(cfg)
    workers = RolloutWorkers(
        lambda: AdaptationEnv(toy_bundle, cfg, "RCP4.5"), 2, base_seed=5)
    batch = collect_rollouts(actor, workers, 7, np.random.default_rng(2),
                             cfg.trainer.gamma, cfg.trainer.gae_lambda,
                             cfg.trainer.reward_scale_dkk)
    assert batch.rewards.shape == (2, 7)
    # 7 steps of a 3-step episode finish exactly two episodes per env
    assert batch.dones[:, 2].all() and batch.dones[:, 5].all()
    assert len(batch.episode_returns_dkk) == 4
    scaled = batch.rewards[0, :3].sum() * cfg.trainer.reward_scale_dkk
    assert scaled == pytest.approx(batch.episode_returns_dkk[0], rel=1e-12)
    assert np.isfinite(batch.advantages).all()


# -- evaluation and summaries ------------------------------------------------


def test_evaluate_traces_reconcile(toy_bundle):
    env = AdaptationEnv(toy_bundle, _short_cfg(2031), "RCP4.5")
    results = run_baseline("RandomControl", env, seed=21, n_episodes=3)
    for r in results:
        assert r.steps == env.horizon_steps
        total_from_trace = sum(row[3] for row in r.trace)
        assert total_from_trace == pytest.approx(r.total_reward_dkk, rel=1e-12)
        comp_sum = np.zeros(5)
        for _, actions, bd, _ in r.trace:
            comp_sum += [bd.infrastructure.sum(), bd.delay.sum(),
                         bd.cancellation.sum(), bd.action.sum(),
                         bd.maintenance.sum()]
        assert np.allclose(comp_sum, r.components_dkk)
        assert r.total_reward_dkk == pytest.approx(-r.components_dkk.sum(),
                                                   rel=1e-9)
    s = summarize(results)
    totals = [r.total_reward_dkk for r in results]
    assert s["n"] == 3
    assert s["mean_total_dkk"] == pytest.approx(np.mean(totals))
    assert s["std_total_dkk"] == pytest.approx(np.std(totals, ddof=1))


def test_evaluate_is_repeatable(toy_bundle):
    env = AdaptationEnv(toy_bundle, _short_cfg(2029), "RCP4.5")
    a = run_baseline("RandomControl", env, seed=33, n_episodes=2)
    b = run_baseline("RandomControl", env, seed=33, n_episodes=2)
    assert [r.total_reward_dkk for r in a] == [r.total_reward_dkk for r in b]
    assert all(np.array_equal(x.pathway, y.pathway) for x, y in zip(a, b))


# -- the training loop -------------------------------------------------------


def test_train_writes_log_checkpoint_state_and_resumes(toy_bundle, tmp_path):
    cfg = _short_cfg(2026)
    out = tmp_path / "run"
    res = train(toy_bundle, cfg, "RCP4.5", seed=1, out_dir=str(out),
                max_env_steps=32)
    assert res.env_steps >= 32
    assert res.updates == 2  # 2 envs x 8 steps per update
    assert (out / "checkpoint.npz").exists()
    with open(out / "train_state.json") as fh:
        state = json.load(fh)
    assert state["env_steps"] == res.env_steps
    assert state["updates"] == 2
    assert state["scenario"] == "RCP4.5"
    with open(out / "train_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "update"
    assert len(rows) == 3  # header + one row per update

    res2 = train(toy_bundle, cfg, "RCP4.5", seed=1, out_dir=str(out),
                 max_env_steps=64, resume=True)
    assert res2.env_steps >= 64
    assert res2.updates == 4
    with open(out / "train_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 5  # appended, not rewritten
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]


def test_train_is_seed_deterministic(toy_bundle, tmp_path):
    cfg = _short_cfg(2026)
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        train(toy_bundle, cfg, "RCP4.5", seed=9, out_dir=str(out),
              max_env_steps=32)
        with open(out / "train_log.csv") as fh:
            logs.append(fh.read())
    assert logs[0] == logs[1]
