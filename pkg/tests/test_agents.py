"""Tests for the actor-critic agents: update rules, fixed points and short training runs."""

import math

import numpy as np
import pytest
import torch
from torch import nn

from vdfp_lab import oracles
from vdfp_lab.agents import AGENT_REGISTRY, build_agent
from vdfp_lab.agents.base import Actor, EpisodeStats, soft_update
from vdfp_lab.agents.ddpg import QCritic, critic_loss, td_targets
from vdfp_lab.agents.ddsr import SuccessorNet, factored_q, reward_vector_step, sr_td_loss
from vdfp_lab.agents.ppo import clipped_surrogate, discounted_returns, gae
from vdfp_lab.agents.vd_ddpg import vdfp_policy_gradient
from vdfp_lab.agents.vd_ppo import mc_advantages
from vdfp_lab.config import (
    AgentConfig,
    ExperimentConfig,
    ReprConfig,
    ReturnModelConfig,
    VAEConfig,
)
from vdfp_lab.dynamics import ConditionalVAE
from vdfp_lab.errors import DivergenceError
from vdfp_lab.returnmodel import LinearReturn
from vdfp_lab.trajstore import TransitionBatch
from vdfp_lab.verify import policy_gradient_error

# 2-state chain with a single action: rows are P(s' | s).
CHAIN = np.array([[0.25, 0.75], [0.5, 0.5]])
CHAIN_REWARDS = np.array([1.0, -1.0])
# Transition copies per (s, s') so the batch frequencies match CHAIN.
COPIES = {(0, 0): 1, (0, 1): 3, (1, 0): 2, (1, 1): 2}


def tiny_config(agent: str, total_steps: int = 300, **training) -> ExperimentConfig:
    defaults = dict(
        actor_hidden=(16, 16),
        critic_hidden=(16, 16),
        batch_size=8,
        ppo_batch=32,
        collect_steps=20,
        pretrain_steps=20,
        return_every_pretrain=5,
        return_every=5,
        baseline_warmup_steps=50,
        update_freq=2,
        epochs=2,
        sr_repr_dim=8,
    )
    defaults.update(training)
    return ExperimentConfig(
        env="double_integrator_1d",
        agent=agent,
        total_steps=total_steps,
        seed=3,
        repr=ReprConfig(filter_heights=(1, 2), filter_counts=(4, 4), repr_dim=8, max_len=16),
        vae=VAEConfig(z_dim=4, encoder_hidden=(16, 16), decoder_hidden=(16, 16)),
        return_model=ReturnModelConfig(kind="linear"),
        training=AgentConfig(**defaults),
    )


class ZeroPolicy(nn.Module):
    def forward(self, states: torch.Tensor) -> torch.Tensor:
        return torch.zeros(states.shape[0], 1, dtype=states.dtype)


def chain_batch() -> TransitionBatch:
    eye = torch.eye(2, dtype=torch.float64)
    states, next_states, rewards = [], [], []
    for (s, nxt), copies in COPIES.items():
        for _ in range(copies):
            states.append(eye[s])
            next_states.append(eye[nxt])
            rewards.append(CHAIN_REWARDS[s])
    n = len(states)
    return TransitionBatch(
        states=torch.stack(states),
        actions=torch.zeros(n, 1, dtype=torch.float64),
        rewards=torch.tensor(rewards, dtype=torch.float64),
        next_states=torch.stack(next_states),
        dones=torch.zeros(n, dtype=torch.float64),
    )


def fit_to_fixed_point(model: nn.Module, target: nn.Module, loss_fn, steps: int = 4000) -> None:
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    for step in range(steps):
        if step == steps - 1000:
            for group in optimizer.param_groups:
                group["lr"] = 1e-4
        loss = loss_fn()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        soft_update(target, model, 1.0)


def test_greedy_action_is_deterministic_and_bounded() -> None:
    for name in AGENT_REGISTRY:
        agent = build_agent(tiny_config(name))
        state = agent.env.reset(0)
        first = agent.act(state, explore=False)
        second = agent.act(state, explore=False)
        np.testing.assert_array_equal(first, second)
        assert np.all(first >= agent.low) and np.all(first <= agent.high)


def test_zero_weight_actor_outputs_scaled_tanh_of_bias() -> None:
    actor = Actor(3, 2, low=[-2.0, 0.0], high=[2.0, 1.0], hidden=(4, 4))
    with torch.no_grad():
        for param in actor.parameters():
            param.zero_()
        actor.body[-1].bias.copy_(torch.tensor([0.5, -1.0]))
    out = actor(torch.randn(5, 3))
    expected = torch.tensor([2.0 * math.tanh(0.5), 0.5 + 0.5 * math.tanh(-1.0)])
    torch.testing.assert_close(out, expected.expand(5, 2))


def test_exploration_noise_matches_configured_sigma() -> None:
    agent = build_agent(tiny_config("vd_ddpg", exploration_sigma=0.1))
    with torch.no_grad():
        agent.actor.body[-1].weight.zero_()
        agent.actor.body[-1].bias.zero_()
    state = agent.env.reset(0)
    actions = np.array([agent.act(state, explore=True)[0] for _ in range(10_000)])
    assert actions.std() == pytest.approx(0.1, rel=0.05)
    assert abs(actions.mean()) < 0.01


def test_policy_gradient_matches_finite_differences() -> None:
    assert policy_gradient_error("linear") <= 1e-4


def test_flat_return_model_gives_zero_policy_gradient() -> None:
    torch.manual_seed(0)
    actor = Actor(3, 1, [-1.0], [1.0], (8, 8))
    decoder = ConditionalVAE(4, 5, VAEConfig(z_dim=2))
    return_model = LinearReturn(5)
    with torch.no_grad():
        return_model.linear.weight.zero_()
    grad = vdfp_policy_gradient(actor, decoder, return_model, torch.randn(16, 3))
    assert torch.all(grad == 0.0)


def test_decomposed_agent_has_no_target_networks() -> None:
    vd = build_agent(tiny_config("vd_ddpg"))
    assert not vd.describe()["target_networks"]
    assert not any(name.startswith("target") for name in vd.bundle.names())
    ddpg = build_agent(tiny_config("ddpg"))
    assert ddpg.describe()["target_networks"]
    assert {"target_actor", "target_critic"} <= set(ddpg.bundle.names())


def test_off_policy_agents_share_actor_and_exploration() -> None:
    agents = [build_agent(tiny_config(name)) for name in ("vd_ddpg", "ddpg", "ddsr")]
    described = [agent.describe() for agent in agents]
    assert all(d["actor"] == described[0]["actor"] for d in described)
    assert all(d["exploration_sigma"] == described[0]["exploration_sigma"] for d in described)
    shapes = [agent.bundle.parameter_shapes()["actor"] for agent in agents]
    assert shapes[0] == shapes[1] == shapes[2]
    on_policy = [build_agent(tiny_config(name)).describe() for name in ("ppo", "vd_ppo")]
    assert on_policy[0]["actor"] == on_policy[1]["actor"]


def test_actor_learning_rates_follow_agent_defaults() -> None:
    assert build_agent(tiny_config("vd_ddpg")).actor_lr == pytest.approx(2.5e-4)
    assert build_agent(tiny_config("ddpg")).actor_lr == pytest.approx(1e-4)
    assert build_agent(tiny_config("ppo", actor_lr=3e-3)).actor_lr == pytest.approx(3e-3)


def test_soft_update_with_unit_rate_copies_online_weights() -> None:
    online, target = nn.Linear(3, 2), nn.Linear(3, 2)
    soft_update(target, online, 1.0)
    for t_param, o_param in zip(target.parameters(), online.parameters()):
        torch.testing.assert_close(t_param, o_param)


def test_soft_update_interpolates() -> None:
    online, target = nn.Linear(2, 1), nn.Linear(2, 1)
    before = [p.detach().clone() for p in target.parameters()]
    soft_update(target, online, 0.25)
    for after, old, o_param in zip(target.parameters(), before, online.parameters()):
        torch.testing.assert_close(after, 0.25 * o_param + 0.75 * old)


def test_td_target_drops_bootstrap_at_terminal() -> None:
    rewards = torch.tensor([1.0, 2.0])
    next_q = torch.tensor([10.0, 10.0])
    dones = torch.tensor([0.0, 1.0])
    torch.testing.assert_close(td_targets(rewards, next_q, dones, 0.9), torch.tensor([10.0, 2.0]))
    torch.testing.assert_close(td_targets(rewards, next_q, dones, 0.0), rewards)


def test_ddpg_critic_reaches_analytic_q() -> None:
    torch.manual_seed(1)
    gamma = 0.5
    critic = QCritic(2, 1, hidden=(32, 32)).double()
    target = QCritic(2, 1, hidden=(32, 32)).double()
    soft_update(target, critic, 1.0)
    batch = chain_batch()
    policy = ZeroPolicy()
    fit_to_fixed_point(critic, target, lambda: critic_loss(critic, target, policy, batch, gamma))

    mdp = oracles.FiniteMDP(
        transitions=CHAIN[:, None, :], rewards=CHAIN_REWARDS[:, None], gamma=gamma, horizon=1
    )
    expected = oracles.analytic_q(mdp, np.ones((2, 1)))[:, 0]
    with torch.no_grad():
        got = critic(torch.eye(2, dtype=torch.float64), torch.zeros(2, 1, dtype=torch.float64))
    tolerance = 0.01 * np.abs(expected).max()
    np.testing.assert_allclose(got.numpy(), expected, atol=tolerance, rtol=0)


def test_successor_net_reaches_analytic_occupancy() -> None:
    torch.manual_seed(2)
    gamma = 0.5
    sr_net = SuccessorNet(2, 1, hidden=(32, 32)).double()
    target = SuccessorNet(2, 1, hidden=(32, 32)).double()
    soft_update(target, sr_net, 1.0)
    batch = chain_batch()

    def loss() -> torch.Tensor:
        return sr_td_loss(
            sr_net,
            target,
            batch.states,
            batch.actions,
            batch.next_states,
            batch.actions,
            batch.dones,
            gamma,
        )

    fit_to_fixed_point(sr_net, target, loss)
    expected = oracles.analytic_state_occupancy(CHAIN, gamma)
    features = torch.eye(2, dtype=torch.float64)
    actions = torch.zeros(2, 1, dtype=torch.float64)
    with torch.no_grad():
        got = sr_net(features, actions).numpy()
    np.testing.assert_allclose(got, expected, atol=0.01 * np.abs(expected).max(), rtol=0)

    reward_vector = nn.Linear(2, 1, bias=False).double()
    with torch.no_grad():
        reward_vector.weight.copy_(torch.from_numpy(CHAIN_REWARDS)[None, :])
        q_values = factored_q(sr_net, reward_vector, features, actions).numpy()
        reward_vector.weight.zero_()
        flat = factored_q(sr_net, reward_vector, features, actions)
    np.testing.assert_allclose(q_values, expected @ CHAIN_REWARDS, atol=0.02, rtol=0)
    assert torch.all(flat == 0.0)


def test_reward_vector_regression_recovers_weights() -> None:
    torch.manual_seed(3)
    true_w = torch.tensor([0.5, -1.5, 2.0, 0.25], dtype=torch.float64)
    features = torch.randn(256, 4, dtype=torch.float64)
    rewards = features @ true_w
    reward_vector = nn.Linear(4, 1, bias=False).double()
    optimizer = torch.optim.Adam(reward_vector.parameters(), lr=1e-2)
    for _ in range(3000):
        loss = reward_vector_step(reward_vector, optimizer, features, rewards)
    assert loss < 1e-3
    np.testing.assert_allclose(reward_vector.weight[0].detach().numpy(), true_w.numpy(), rtol=0.01)


def test_successor_net_sees_online_features_in_critic_and_actor(
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    agent = build_agent(tiny_config("ddsr", total_steps=200))
    agent.train(200)
    with torch.no_grad():
        for parameter in agent.target_phi.parameters():
            parameter.add_(1.0)
    batch = agent.buffer.sample_transitions(16)

    seen = []
    forward = agent.sr_net.forward

    def recording_forward(features: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        seen.append(features.detach().clone())
        return forward(features, actions)

    monkeypatch.setattr(agent.sr_net, "forward", recording_forward)
    agent.critic_step(batch, EpisodeStats())
    agent.actor_step(batch, EpisodeStats())

    assert len(seen) == 2
    with torch.no_grad():
        online = agent.phi(batch.states)
        delayed = agent.target_phi(batch.states)
    torch.testing.assert_close(seen[0], online)
    torch.testing.assert_close(seen[1], online)
    assert not torch.allclose(seen[0], delayed)


def test_gae_limits() -> None:
    rng = np.random.default_rng(4)
    rewards, values = rng.normal(size=20), rng.normal(size=20)
    np.testing.assert_allclose(
        gae(rewards, values, 0.9, 1.0), discounted_returns(rewards, 0.9) - values, atol=1e-12
    )
    deltas = rewards + 0.9 * np.append(values[1:], 0.0) - values
    np.testing.assert_allclose(gae(rewards, values, 0.9, 0.0), deltas, atol=1e-12)


def test_gae_matches_forward_sum() -> None:
    rng = np.random.default_rng(5)
    for _ in range(200):
        horizon = int(rng.integers(1, 30))
        rewards, values = rng.normal(size=horizon), rng.normal(size=horizon)
        gamma, lam = float(rng.uniform(0, 1)), float(rng.uniform(0, 1))
        last = float(rng.normal())
        np.testing.assert_allclose(
            gae(rewards, values, gamma, lam, last_value=last),
            oracles.recursive_gae(rewards, values, gamma, lam, last_value=last),
            atol=1e-9,
        )


def test_clipped_surrogate_at_unit_ratio_is_mean_advantage() -> None:
    log_prob = torch.randn(50)
    advantages = torch.randn(50)
    value = clipped_surrogate(log_prob, log_prob.clone(), advantages, 0.2)
    assert float(value) == pytest.approx(float(advantages.mean()), abs=1e-6)


def test_clipped_surrogate_caps_large_ratios() -> None:
    old = torch.zeros(1)
    new = torch.tensor([math.log(3.0)])
    assert float(clipped_surrogate(new, old, torch.ones(1), 0.2)) == pytest.approx(1.2)
    assert float(clipped_surrogate(new, old, -torch.ones(1), 0.2)) == pytest.approx(-3.0)


def test_mc_advantage_is_zero_for_exact_values() -> None:
    rewards = [1.0, 0.0, -2.0, 3.0]
    values = discounted_returns(rewards, 0.95)
    np.testing.assert_allclose(mc_advantages(rewards, values, 0.95), np.zeros(4), atol=1e-12)


@pytest.mark.parametrize("name", sorted(AGENT_REGISTRY))
def test_short_training_run_logs_every_episode(name: str) -> None:
    agent = build_agent(tiny_config(name, total_steps=300))
    rows = agent.train(300)
    assert agent.global_step == 300
    assert [row.episode_index for row in rows] == [0, 1, 2]
    assert [row.global_step for row in rows] == [100, 200, 300]
    assert all(math.isfinite(row.episode_return) for row in rows)


def test_decomposed_agent_records_losses_after_collection() -> None:
    agent = build_agent(tiny_config("vd_ddpg", total_steps=300))
    rows = agent.train(300)
    assert math.isnan(rows[0].recon_loss)
    assert math.isfinite(rows[1].recon_loss)
    assert math.isfinite(rows[2].actor_objective)
    assert agent.return_learner.updates > 0


def test_runaway_return_model_aborts_during_pretraining() -> None:
    agent = build_agent(
        tiny_config("vd_ddpg", total_steps=300, pretrain_steps=200, divergence_limit=1e-12)
    )
    with pytest.raises(DivergenceError, match="return model diverged"):
        agent.train(300)
    # first episode ends at step 100; the first return update is at step 105
    assert agent.global_step == 105
    assert agent.return_learner.updates == 0


def test_unfinished_final_episode_is_dropped() -> None:
    agent = build_agent(tiny_config("ddpg", total_steps=250))
    rows = agent.train(250)
    assert len(rows) == 2
    assert agent.global_step == 250
    assert agent.buffer.num_episodes == 2


def test_same_seed_gives_identical_runs() -> None:
    first = build_agent(tiny_config("ddpg", total_steps=200)).train(200)
    second = build_agent(tiny_config("ddpg", total_steps=200)).train(200)
    assert [row.episode_return for row in first] == [row.episode_return for row in second]
